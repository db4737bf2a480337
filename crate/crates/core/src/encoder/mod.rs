//! Convolutional feature extractor used by the perceptual loss.
//!
//! Layers are 3x3 convolutions (stride 1 or 2, reflection padding of one
//! pixel), each followed by ReLU. Activations of selected layers ("taps") are
//! exposed as features, and [`backward`] maps feature gradients back to the
//! input image.

mod skw1;

use crate::canvas::{Canvas, CanvasGrad};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rng::SketchRng;

pub use skw1::{load_skw1, read_skw1, write_skw1, write_skw1_bytes, SKW1_MAGIC, SKW1_VERSION};

pub const KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub out_ch: usize,
    pub in_ch: usize,
    pub stride: usize,
    /// Row-major `(out, in, ky, kx)`.
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl ConvLayer {
    #[inline]
    fn w(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((oc * self.in_ch + ic) * KERNEL + ky) * KERNEL + kx] as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderNet {
    pub layers: Vec<ConvLayer>,
    pub taps: Vec<usize>,
    pub input_mean: [f32; 3],
    pub input_std: [f32; 3],
}

impl EncoderNet {
    pub fn in_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_ch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::validation("encoder has no layers"));
        }
        let in_ch = self.layers[0].in_ch;
        if in_ch != 1 && in_ch != 3 {
            return Err(Error::validation(format!("encoder input must have 1 or 3 channels, got {in_ch}")));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 && l.in_ch != self.layers[i - 1].out_ch {
                return Err(Error::validation(format!(
                    "layer {i} expects {} input channels but layer {} produces {}",
                    l.in_ch,
                    i - 1,
                    self.layers[i - 1].out_ch
                )));
            }
            if l.out_ch == 0 || l.in_ch == 0 {
                return Err(Error::validation(format!("layer {i} has zero channels")));
            }
            if l.stride != 1 && l.stride != 2 {
                return Err(Error::validation(format!("layer {i} has unsupported stride {}", l.stride)));
            }
            if l.weights.len() != l.out_ch * l.in_ch * KERNEL * KERNEL || l.biases.len() != l.out_ch {
                return Err(Error::validation(format!("layer {i} has inconsistent weight shapes")));
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("layer {i} has a non-finite weight")));
            }
        }
        if self.taps.is_empty() {
            return Err(Error::validation("encoder has no feature taps"));
        }
        if self.taps.windows(2).any(|w| w[0] >= w[1]) || *self.taps.last().unwrap() >= self.layers.len() {
            return Err(Error::validation(format!(
                "taps {:?} must be strictly increasing and below {}",
                self.taps,
                self.layers.len()
            )));
        }
        let norm = self.input_mean.iter().chain(&self.input_std);
        if norm.clone().any(|v| !v.is_finite()) || self.input_std.iter().any(|&s| s <= 0.0) {
            return Err(Error::validation("input normalisation must be finite with positive std"));
        }
        Ok(())
    }

    pub fn with_taps(mut self, taps: Vec<usize>) -> Result<Self> {
        self.taps = taps;
        self.validate()?;
        Ok(self)
    }
}

/// Seeded He-initialised encoder: weights `N(0, 2 / (9 in_ch))`, zero biases,
/// a tap after every layer, inputs mapped from `[0, 1]` to `[-1, 1]`.
pub fn random_encoder(seed: u64, in_channels: usize, widths: &[usize], strides: &[usize]) -> Result<EncoderNet> {
    if widths.is_empty() {
        return Err(Error::validation("random encoder needs at least one layer width"));
    }
    if strides.len() != widths.len() {
        return Err(Error::validation("one stride per layer width is required"));
    }
    let mut rng = SketchRng::new(seed);
    let mut in_ch = in_channels;
    let mut layers = Vec::with_capacity(widths.len());
    for (&out_ch, &stride) in widths.iter().zip(strides) {
        let std = (2.0 / (KERNEL * KERNEL * in_ch) as f64).sqrt();
        let weights = (0..out_ch * in_ch * KERNEL * KERNEL)
            .map(|_| (rng.normal() * std) as f32)
            .collect();
        layers.push(ConvLayer {
            out_ch,
            in_ch,
            stride,
            weights,
            biases: vec![0.0; out_ch],
        });
        in_ch = out_ch;
    }
    let net = EncoderNet {
        taps: (0..layers.len()).collect(),
        layers,
        input_mean: [0.5; 3],
        input_std: [0.5; 3],
    };
    net.validate()?;
    Ok(net)
}

pub const DEFAULT_WIDTHS: [usize; 4] = [16, 32, 64, 64];
pub const DEFAULT_STRIDES: [usize; 4] = [1, 2, 2, 2];

pub fn default_random_encoder(seed: u64, in_channels: usize) -> Result<EncoderNet> {
    random_encoder(seed, in_channels, &DEFAULT_WIDTHS, &DEFAULT_STRIDES)
}

/// Planar `(channel, row, col)` activation tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn same_shape(&self, o: &Tensor) -> bool {
        (self.c, self.h, self.w) == (o.c, o.h, o.w)
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }
}

/// Activations at the taps, in tap order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub features: Vec<(usize, Tensor)>,
}

#[derive(Clone, Debug)]
pub struct EncoderTape {
    net: EncoderNet,
    exec: Exec,
    /// Input of each computed layer (normalised image for layer 0).
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    canvas_shape: (usize, usize, usize),
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

fn out_dim(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

/// Reflected source index for each output position and kernel tap.
fn tap_index(out: usize, n: usize, stride: usize) -> Vec<[usize; KERNEL]> {
    (0..out)
        .map(|o| std::array::from_fn(|k| reflect((o * stride + k) as isize - 1, n)))
        .collect()
}

fn conv_forward(l: &ConvLayer, x: &Tensor, exec: Exec) -> Tensor {
    let oh = out_dim(x.h, l.stride);
    let ow = out_dim(x.w, l.stride);
    let ry = tap_index(oh, x.h, l.stride);
    let rx = tap_index(ow, x.w, l.stride);
    let mut out = Tensor::zeros(l.out_ch, oh, ow);
    exec.for_each_chunk(&mut out.data, oh * ow, |oc, plane| {
        plane.fill(l.biases[oc] as f64);
        for ic in 0..l.in_ch {
            let src = &x.data[ic * x.h * x.w..(ic + 1) * x.h * x.w];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = l.w(oc, ic, ky, kx);
                    for oy in 0..oh {
                        let row = &src[ry[oy][ky] * x.w..(ry[oy][ky] + 1) * x.w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d += wv * row[rx[ox][kx]];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient with respect to the layer input given the gradient at its
/// pre-activation.
fn conv_backward_input(l: &ConvLayer, g: &Tensor, in_h: usize, in_w: usize, exec: Exec) -> Tensor {
    let (oh, ow) = (g.h, g.w);
    let ry = tap_index(oh, in_h, l.stride);
    let rx = tap_index(ow, in_w, l.stride);
    let mut out = Tensor::zeros(l.in_ch, in_h, in_w);
    exec.for_each_chunk(&mut out.data, in_h * in_w, |ic, plane| {
        for oc in 0..l.out_ch {
            let gp = &g.data[oc * oh * ow..(oc + 1) * oh * ow];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = l.w(oc, ic, ky, kx);
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let base = ry[oy][ky] * in_w;
                        for ox in 0..ow {
                            plane[base + rx[ox][kx]] += wv * gp[oy * ow + ox];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Runs the network on `img` up to the last tap.
pub fn forward(net: &EncoderNet, img: &Canvas, exec: Exec) -> Result<(FeatureSet, EncoderTape)> {
    net.validate()?;
    if img.channels() != net.in_channels() {
        return Err(Error::validation(format!(
            "encoder expects {} input channels, image has {}",
            net.in_channels(),
            img.channels()
        )));
    }
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut x = Tensor::zeros(ch, h, w);
    for y in 0..h {
        for xx in 0..w {
            for c in 0..ch {
                x.data[(c * h + y) * w + xx] =
                    (img.get(y, xx, c) - net.input_mean[c] as f64) / net.input_std[c] as f64;
            }
        }
    }
    let last = *net.taps.last().unwrap();
    let mut inputs = Vec::with_capacity(last + 1);
    let mut pre = Vec::with_capacity(last + 1);
    let mut features = Vec::with_capacity(net.taps.len());
    for (i, layer) in net.layers.iter().enumerate().take(last + 1) {
        let z = conv_forward(layer, &x, exec);
        let mut a = z.clone();
        // NaN passes through so a blown-up activation is not silently zeroed
        for v in &mut a.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        if net.taps.contains(&i) {
            features.push((i, a.clone()));
        }
        inputs.push(std::mem::replace(&mut x, a));
        pre.push(z);
    }
    Ok((
        FeatureSet { features },
        EncoderTape {
            net: net.clone(),
            exec,
            inputs,
            pre,
            canvas_shape: (w, h, ch),
        },
    ))
}

/// Back-propagates per-tap feature gradients to the input image.
pub fn backward(tape: &EncoderTape, d_features: &[Tensor]) -> Result<CanvasGrad> {
    let net = &tape.net;
    if d_features.len() != net.taps.len() {
        return Err(Error::validation(format!(
            "expected {} feature gradients, got {}",
            net.taps.len(),
            d_features.len()
        )));
    }
    for (k, (&tap, g)) in net.taps.iter().zip(d_features).enumerate() {
        if !g.same_shape(&tape.pre[tap]) {
            return Err(Error::validation(format!(
                "feature gradient {k} has shape {}x{}x{}, tap {tap} is {}x{}x{}",
                g.c, g.h, g.w, tape.pre[tap].c, tape.pre[tap].h, tape.pre[tap].w
            )));
        }
    }
    let last = tape.pre.len() - 1;
    let mut g_post = Tensor::zeros(tape.pre[last].c, tape.pre[last].h, tape.pre[last].w);
    for i in (0..=last).rev() {
        if let Some(k) = net.taps.iter().position(|&t| t == i) {
            for (a, b) in g_post.data.iter_mut().zip(&d_features[k].data) {
                *a += b;
            }
        }
        // ReLU: no gradient where the pre-activation is not positive
        for (gv, &z) in g_post.data.iter_mut().zip(&tape.pre[i].data) {
            if z <= 0.0 {
                *gv = 0.0;
            }
        }
        let inp = &tape.inputs[i];
        g_post = conv_backward_input(&net.layers[i], &g_post, inp.h, inp.w, tape.exec);
    }
    let (w, h, ch) = tape.canvas_shape;
    let mut out = CanvasGrad::zeros(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out.data[(y * w + x) * ch + c] = g_post.data[(c * h + y) * w + x] / net.input_std[c] as f64;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn identity_net(channels: usize) -> EncoderNet {
        let mut weights = vec![0.0f32; channels * channels * 9];
        for c in 0..channels {
            weights[((c * channels + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        EncoderNet {
            layers: vec![ConvLayer {
                out_ch: channels,
                in_ch: channels,
                stride: 1,
                weights,
                biases: vec![0.0; channels],
            }],
            taps: vec![0],
            input_mean: [0.0; 3],
            input_std: [1.0; 3],
        }
    }

    fn random_canvas(seed: u64, w: usize, h: usize, ch: usize) -> Canvas {
        let mut rng = SketchRng::new(seed);
        Canvas::from_data(w, h, ch, (0..w * h * ch).map(|_| rng.uniform_range(0.05, 0.95)).collect()).unwrap()
    }

    #[test]
    fn identity_delta_is_identity_on_positive_inputs() {
        let img = random_canvas(1, 7, 5, 1);
        let (f, _) = forward(&identity_net(1), &img, Exec::Serial).unwrap();
        assert_eq!(f.features[0].1.data, img.data());
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let mut net = random_encoder(3, 1, &[4, 4], &[1, 2]).unwrap();
        net.input_mean = [0.0; 3];
        let img = Canvas::filled(8, 8, 1, 0.0).unwrap();
        let (f, _) = forward(&net, &img, Exec::Serial).unwrap();
        assert!(f.features.iter().all(|(_, t)| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let net = random_encoder(5, 1, &[2], &[1]).unwrap();
        let mut net = net;
        net.input_mean = [0.0; 3];
        net.input_std = [1.0; 3];
        net.layers[0].biases = vec![0.25, -0.5];
        let img = random_canvas(9, 3, 3, 1);
        let (f, tape) = forward(&net, &img, Exec::Serial).unwrap();
        // oracle: direct nested loops with explicit reflection of out-of-range indices
        let refl = |i: i32| -> usize {
            match i {
                -1 => 1,
                3 => 1,
                i => i as usize,
            }
        };
        let l = &net.layers[0];
        for oc in 0..2 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut s = l.biases[oc] as f64;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = refl(oy as i32 + ky as i32 - 1);
                            let ix = refl(ox as i32 + kx as i32 - 1);
                            s += l.weights[oc * 9 + ky * 3 + kx] as f64 * img.get(iy, ix, 0);
                        }
                    }
                    assert!((tape.pre[0].at(oc, oy, ox) - s).abs() < 1e-12);
                    assert!((f.features[0].1.at(oc, oy, ox) - s.max(0.0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn stride_two_shapes() {
        let net = default_random_encoder(1, 3).unwrap();
        let img = random_canvas(2, 16, 16, 3);
        let (f, _) = forward(&net, &img, Exec::Serial).unwrap();
        let dims: Vec<(usize, usize, usize)> = f.features.iter().map(|(_, t)| (t.c, t.h, t.w)).collect();
        assert_eq!(dims, vec![(16, 16, 16), (32, 8, 8), (64, 4, 4), (64, 2, 2)]);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let net = default_random_encoder(1, 3).unwrap();
        let img = random_canvas(2, 8, 8, 1);
        assert!(matches!(forward(&net, &img, Exec::Serial), Err(Error::Validation(_))));
    }

    #[test]
    fn random_encoder_determinism_and_variance() {
        let a = random_encoder(42, 1, &[8, 16], &[1, 2]).unwrap();
        let b = random_encoder(42, 1, &[8, 16], &[1, 2]).unwrap();
        let c = random_encoder(43, 1, &[8, 16], &[1, 2]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.layers[0].weights, c.layers[0].weights);

        // 10k+ draws from a layer with in_ch = 4
        let n = random_encoder(7, 1, &[4, 300], &[1, 1]).unwrap();
        let w = &n.layers[1].weights;
        assert!(w.len() >= 10_000);
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let expect = 2.0 / (9.0 * 4.0);
        assert!((var - expect).abs() < 0.2 * expect, "var {var} vs {expect}");
        assert!(n.layers[1].biases.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_image_grad() {
        let net = random_encoder(3, 1, &[4, 4], &[1, 2]).unwrap();
        let img = random_canvas(4, 8, 8, 1);
        let (f, tape) = forward(&net, &img, Exec::Serial).unwrap();
        let zeros: Vec<Tensor> = f.features.iter().map(|(_, t)| Tensor::zeros(t.c, t.h, t.w)).collect();
        let g = backward(&tape, &zeros).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_masks_negative_preactivations() {
        // one layer with weight -1 on the centre: every pre-activation is negative
        let mut net = identity_net(1);
        net.layers[0].weights[4] = -1.0;
        let img = random_canvas(5, 6, 6, 1);
        let (f, tape) = forward(&net, &img, Exec::Serial).unwrap();
        let ones: Vec<Tensor> = f
            .features
            .iter()
            .map(|(_, t)| Tensor {
                data: vec![1.0; t.data.len()],
                ..t.clone()
            })
            .collect();
        assert!(backward(&tape, &ones).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overflow_surfaces_as_nan_not_zero() {
        let mut net = identity_net(1);
        net.layers[0].weights[4] = 3.0e38;
        net.layers = vec![net.layers[0].clone(); 10];
        net.taps = vec![9];
        let img = Canvas::filled(4, 4, 1, 1.0).unwrap();
        let (f, _) = forward(&net, &img, Exec::Serial).unwrap();
        assert!(f.features[0].1.data.iter().all(|v| v.is_nan()));
    }

    fn feature_objective(net: &EncoderNet, img: &Canvas, coeffs: &[Vec<f64>]) -> f64 {
        let (f, _) = forward(net, img, Exec::Serial).unwrap();
        f.features
            .iter()
            .zip(coeffs)
            .map(|((_, t), c)| t.data.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    fn fd_pass_fraction(net: &EncoderNet, seed: u64, size: usize) -> f64 {
        let ch = net.in_channels();
        let img = random_canvas(seed, size, size, ch);
        let (f, tape) = forward(net, &img, Exec::Serial).unwrap();
        let mut rng = SketchRng::new(seed + 100);
        let coeffs: Vec<Vec<f64>> = f
            .features
            .iter()
            .map(|(_, t)| (0..t.data.len()).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
            .collect();
        let d: Vec<Tensor> = f
            .features
            .iter()
            .zip(&coeffs)
            .map(|((_, t), c)| Tensor {
                data: c.clone(),
                ..t.clone()
            })
            .collect();
        let g = backward(&tape, &d).unwrap();
        let h = 1e-5;
        let mut pass = 0;
        for i in 0..img.len() {
            let bump = |s: f64| {
                let mut data = img.data().to_vec();
                data[i] += s;
                Canvas::from_data(size, size, ch, data).unwrap()
            };
            let fd = (feature_objective(net, &bump(h), &coeffs) - feature_objective(net, &bump(-h), &coeffs)) / (2.0 * h);
            if (g.data[i] - fd).abs() / fd.abs().max(1e-6) < 1e-3 {
                pass += 1;
            }
        }
        pass as f64 / img.len() as f64
    }

    #[test]
    fn one_layer_backward_matches_fd() {
        let net = random_encoder(11, 1, &[3], &[1]).unwrap();
        assert!(fd_pass_fraction(&net, 1, 6) >= 0.95);
    }

    #[test]
    fn two_layer_chain_backward_matches_fd() {
        let net = random_encoder(12, 1, &[4, 6], &[1, 2]).unwrap();
        let frac = fd_pass_fraction(&net, 2, 8);
        assert!(frac >= 0.95, "pass fraction {frac}");
        let net = random_encoder(13, 3, &[4, 6], &[2, 1]).unwrap();
        let frac = fd_pass_fraction(&net, 3, 8);
        assert!(frac >= 0.95, "pass fraction {frac}");
    }

    #[test]
    fn serial_parallel_identical() {
        let net = default_random_encoder(5, 1).unwrap();
        let img = random_canvas(6, 20, 18, 1);
        let (fa, ta) = forward(&net, &img, Exec::Serial).unwrap();
        let (fb, tb) = forward(&net, &img, Exec::Parallel).unwrap();
        assert_eq!(fa, fb);
        let d: Vec<Tensor> = fa.features.iter().map(|(_, t)| t.clone()).collect();
        assert_eq!(backward(&ta, &d).unwrap(), backward(&tb, &d).unwrap());
    }

    #[test]
    fn invalid_nets_rejected() {
        let mut n = random_encoder(1, 1, &[2, 3], &[1, 1]).unwrap();
        n.layers[1].in_ch = 5;
        assert!(n.validate().is_err());
        let mut n = random_encoder(1, 1, &[2], &[1]).unwrap();
        n.layers[0].weights[0] = f32::NAN;
        assert!(n.validate().is_err());
        let n = random_encoder(1, 1, &[2, 2], &[1, 1]).unwrap();
        assert!(n.clone().with_taps(vec![1, 0]).is_err());
        assert!(n.clone().with_taps(vec![2]).is_err());
        assert!(n.with_taps(vec![1]).is_ok());
        assert!(random_encoder(1, 1, &[], &[]).is_err());
    }
}
