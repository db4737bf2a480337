//! SKW1: little-endian weight file for conv+ReLU encoders.
//!
//! ```text
//! "SKW1" | u32 version=1 | u32 layer_count | u32 tap_count | u32 taps[tap_count]
//! f32 input_mean[3] | f32 input_std[3]
//! per layer: u32 out_ch | u32 in_ch | u32 kernel=3 | u32 stride
//!            f32 weights[out_ch * in_ch * 3 * 3] (out, in, ky, kx) | f32 biases[out_ch]
//! ```

use std::fs;
use std::path::Path;

use super::{ConvLayer, EncoderNet, KERNEL};
use crate::error::{Error, Result};

pub const SKW1_MAGIC: &[u8; 4] = b"SKW1";
pub const SKW1_VERSION: u32 = 1;

pub fn write_skw1_bytes(net: &EncoderNet) -> Result<Vec<u8>> {
    net.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(SKW1_MAGIC);
    let u32s = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    u32s(&mut out, SKW1_VERSION as usize);
    u32s(&mut out, net.layers.len());
    u32s(&mut out, net.taps.len());
    for &t in &net.taps {
        u32s(&mut out, t);
    }
    for v in net.input_mean.iter().chain(&net.input_std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in &net.layers {
        u32s(&mut out, l.out_ch);
        u32s(&mut out, l.in_ch);
        u32s(&mut out, KERNEL);
        u32s(&mut out, l.stride);
        for v in l.weights.iter().chain(&l.biases) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_skw1(net: &EncoderNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_skw1_bytes(net)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_skw1(path: impl AsRef<Path>) -> Result<EncoderNet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_skw1(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(format!("skw1: truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format("skw1: size overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_skw1(bytes: &[u8]) -> Result<EncoderNet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != SKW1_MAGIC {
        return Err(Error::format("skw1: bad magic"));
    }
    let version = r.u32()?;
    if version != SKW1_VERSION as usize {
        return Err(Error::format(format!("skw1: unsupported version {version}")));
    }
    let layer_count = r.u32()?;
    let tap_count = r.u32()?;
    let taps = (0..tap_count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let norm = r.f32s(6)?;
    let mut layers = Vec::new();
    for i in 0..layer_count {
        let out_ch = r.u32()?;
        let in_ch = r.u32()?;
        let kernel = r.u32()?;
        let stride = r.u32()?;
        if kernel != KERNEL {
            return Err(Error::format(format!("skw1: layer {i} has kernel {kernel}, only 3 is supported")));
        }
        let n = out_ch
            .checked_mul(in_ch)
            .and_then(|v| v.checked_mul(KERNEL * KERNEL))
            .ok_or_else(|| Error::format("skw1: size overflow"))?;
        let weights = r.f32s(n)?;
        let biases = r.f32s(out_ch)?;
        layers.push(ConvLayer {
            out_ch,
            in_ch,
            stride,
            weights,
            biases,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(format!("skw1: {} trailing bytes", bytes.len() - r.pos)));
    }
    let net = EncoderNet {
        layers,
        taps,
        input_mean: [norm[0], norm[1], norm[2]],
        input_std: [norm[3], norm[4], norm[5]],
    };
    net.validate()?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canvas::Canvas;
    use crate::encoder::{forward, random_encoder, tests::identity_net};
    use crate::par::Exec;

    #[test]
    fn identity_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("id.skw1");
        write_skw1(&identity_net(1), &p).unwrap();
        let net = load_skw1(&p).unwrap();
        let img = Canvas::from_data(3, 2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let (f, _) = forward(&net, &img, Exec::Serial).unwrap();
        assert_eq!(f.features[0].1.data, img.data());
    }

    #[test]
    fn exact_layout() {
        let net = identity_net(1);
        let b = write_skw1_bytes(&net).unwrap();
        // header 16 + 1 tap + 6 norm floats + 16 layer header + 9 weights + 1 bias
        assert_eq!(b.len(), 16 + 4 + 24 + 16 + 36 + 4);
        assert_eq!(&b[..4], b"SKW1");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..20], &0u32.to_le_bytes());
        assert_eq!(&b[32..36], &1.0f32.to_le_bytes());
        assert_eq!(&b[52..56], &3u32.to_le_bytes());
        // centre tap of the delta kernel
        assert_eq!(&b[60 + 16..60 + 20], &1.0f32.to_le_bytes());
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for seed in 0..5 {
            let net = random_encoder(seed, 3, &[4, 8, 8], &[1, 2, 2]).unwrap();
            let bytes = write_skw1_bytes(&net).unwrap();
            let back = read_skw1(&bytes).unwrap();
            assert_eq!(back, net);
            assert_eq!(write_skw1_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn malformed_files() {
        let good = write_skw1_bytes(&random_encoder(1, 1, &[2, 2], &[1, 2]).unwrap()).unwrap();
        assert!(matches!(read_skw1(&good[..good.len() - 1]), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_skw1(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(read_skw1(&bad), Err(Error::Format(_))));

        // second layer declares 3 input channels but the first emits 2
        let mut chain = random_encoder(1, 1, &[2, 2], &[1, 2]).unwrap();
        chain.layers[1].in_ch = 3;
        chain.layers[1].weights = vec![0.0; 2 * 3 * 9];
        let mut bytes = b"SKW1".to_vec();
        for v in [1u32, 2, 1, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in [0.0f32, 0.0, 0.0, 1.0, 1.0, 1.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for l in &chain.layers {
            for v in [l.out_ch as u32, l.in_ch as u32, 3, l.stride as u32] {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            for v in l.weights.iter().chain(&l.biases) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        assert!(matches!(read_skw1(&bytes), Err(Error::Validation(_))));

        let mut nan = random_encoder(1, 1, &[2], &[1]).unwrap();
        nan.layers[0].weights[3] = f32::INFINITY;
        assert!(write_skw1_bytes(&nan).is_err());
        let empty = EncoderNet {
            layers: vec![],
            taps: vec![],
            input_mean: [0.0; 3],
            input_std: [1.0; 3],
        };
        assert!(matches!(write_skw1_bytes(&empty), Err(Error::Validation(_))));
    }

    #[test]
    fn nan_weight_in_file_rejected() {
        let mut bytes = write_skw1_bytes(&random_encoder(1, 1, &[2], &[1]).unwrap()).unwrap();
        let off = 16 + 4 + 24 + 16;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_skw1(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn writes_are_deterministic() {
        let net = random_encoder(9, 1, &[3, 3], &[1, 2]).unwrap();
        assert_eq!(write_skw1_bytes(&net).unwrap(), write_skw1_bytes(&net).unwrap());
    }
}
