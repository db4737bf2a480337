//! The SKW1 file is the hand-off point from the weight exporter. These tests
//! build files byte by byte, as an external producer would, and check the
//! encoder against a naive reference forward pass.

use sketchforge_core::canvas::Canvas;
use sketchforge_core::encoder::{forward, load_skw1, read_skw1, write_skw1_bytes};
use sketchforge_core::rng::SketchRng;
use sketchforge_core::{Error, Exec};

struct Layer {
    out_ch: usize,
    in_ch: usize,
    stride: usize,
    weights: Vec<f32>,
    biases: Vec<f32>,
}

fn file_bytes(layers: &[Layer], taps: &[u32], mean: [f32; 3], std: [f32; 3]) -> Vec<u8> {
    let mut b = b"SKW1".to_vec();
    let u = |b: &mut Vec<u8>, v: u32| b.extend_from_slice(&v.to_le_bytes());
    u(&mut b, 1);
    u(&mut b, layers.len() as u32);
    u(&mut b, taps.len() as u32);
    for &t in taps {
        u(&mut b, t);
    }
    for v in mean.iter().chain(&std) {
        b.extend_from_slice(&v.to_le_bytes());
    }
    for l in layers {
        for v in [l.out_ch, l.in_ch, 3, l.stride] {
            u(&mut b, v as u32);
        }
        for v in l.weights.iter().chain(&l.biases) {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

fn random_layers(rng: &mut SketchRng, spec: &[(usize, usize, usize)]) -> Vec<Layer> {
    spec.iter()
        .map(|&(in_ch, out_ch, stride)| Layer {
            out_ch,
            in_ch,
            stride,
            weights: (0..out_ch * in_ch * 9).map(|_| rng.uniform_range(-0.5, 0.5) as f32).collect(),
            biases: (0..out_ch).map(|_| rng.uniform_range(-0.1, 0.1) as f32).collect(),
        })
        .collect()
}

/// Plain nested-loop conv3x3 (reflection pad 1) + ReLU, `[c][y][x]`.
fn reference(layers: &[Layer], mean: [f32; 3], std: [f32; 3], img: &Canvas) -> Vec<Vec<Vec<Vec<f64>>>> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut x: Vec<Vec<Vec<f64>>> = (0..ch)
        .map(|c| (0..h).map(|y| (0..w).map(|xx| (img.get(y, xx, c) - mean[c] as f64) / std[c] as f64).collect()).collect())
        .collect();
    let refl = |i: isize, n: usize| -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * n - 2 - i as usize
        } else {
            i as usize
        }
    };
    let mut acts = Vec::new();
    for l in layers {
        let (ih, iw) = (x[0].len(), x[0][0].len());
        let (oh, ow) = (ih.div_ceil(l.stride), iw.div_ceil(l.stride));
        let mut out = vec![vec![vec![0.0; ow]; oh]; l.out_ch];
        for (oc, plane) in out.iter_mut().enumerate() {
            for (oy, row) in plane.iter_mut().enumerate() {
                for (ox, v) in row.iter_mut().enumerate() {
                    let mut s = l.biases[oc] as f64;
                    for (ic, src) in x.iter().enumerate() {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = refl((oy * l.stride + ky) as isize - 1, ih);
                                let sx = refl((ox * l.stride + kx) as isize - 1, iw);
                                s += l.weights[((oc * l.in_ch + ic) * 3 + ky) * 3 + kx] as f64 * src[sy][sx];
                            }
                        }
                    }
                    *v = s.max(0.0);
                }
            }
        }
        acts.push(out.clone());
        x = out;
    }
    acts
}

fn random_image(rng: &mut SketchRng, w: usize, h: usize, ch: usize) -> Canvas {
    Canvas::from_data(w, h, ch, (0..w * h * ch).map(|_| rng.uniform()).collect()).unwrap()
}

#[test]
fn producer_file_matches_reference_activations_at_every_tap() {
    let mut rng = SketchRng::new(77);
    let layers = random_layers(&mut rng, &[(3, 5, 1), (5, 6, 2), (6, 4, 1), (4, 7, 2)]);
    let (mean, std) = ([0.485, 0.456, 0.406], [0.229, 0.224, 0.225]);
    let taps = [0u32, 2, 3];
    let bytes = file_bytes(&layers, &taps, mean, std);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prefix.skw1");
    std::fs::write(&path, &bytes).unwrap();

    let net = load_skw1(&path).unwrap();
    assert_eq!(net.taps, vec![0, 2, 3]);
    assert_eq!(write_skw1_bytes(&net).unwrap(), bytes);

    for (w, h) in [(13, 9), (16, 16)] {
        let img = random_image(&mut rng, w, h, 3);
        let want = reference(&layers, mean, std, &img);
        let (got, _) = forward(&net, &img, Exec::Serial).unwrap();
        assert_eq!(got.features.len(), taps.len());
        for ((idx, t), &tap) in got.features.iter().zip(&taps) {
            assert_eq!(*idx, tap as usize);
            let r = &want[tap as usize];
            assert_eq!((t.c, t.h, t.w), (r.len(), r[0].len(), r[0][0].len()));
            let mut worst: f64 = 0.0;
            for c in 0..t.c {
                for y in 0..t.h {
                    for x in 0..t.w {
                        worst = worst.max((t.at(c, y, x) - r[c][y][x]).abs());
                    }
                }
            }
            assert!(worst < 1e-4, "tap {tap}: max abs diff {worst}");
        }
    }
}

#[test]
fn grayscale_input_uses_first_normalisation_channel() {
    let mut rng = SketchRng::new(5);
    let layers = random_layers(&mut rng, &[(1, 3, 1)]);
    let (mean, std) = ([0.3, 9.0, 9.0], [0.7, 9.0, 9.0]);
    let net = read_skw1(&file_bytes(&layers, &[0], mean, std)).unwrap();
    let img = random_image(&mut rng, 6, 6, 1);
    let want = reference(&layers, mean, std, &img);
    let (got, _) = forward(&net, &img, Exec::Serial).unwrap();
    let t = &got.features[0].1;
    for c in 0..3 {
        for y in 0..6 {
            for x in 0..6 {
                assert!((t.at(c, y, x) - want[0][c][y][x]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn malformed_files_are_rejected_with_the_right_error_kind() {
    let mut rng = SketchRng::new(9);
    let layers = random_layers(&mut rng, &[(1, 2, 1), (2, 2, 2)]);
    let good = file_bytes(&layers, &[1], [0.5; 3], [0.5; 3]);
    assert!(read_skw1(&good).is_ok());

    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(read_skw1(&magic), Err(Error::Format(_))));

    let mut version = good.clone();
    version[4] = 2;
    assert!(matches!(read_skw1(&version), Err(Error::Format(_))));

    for cut in [3, 20, good.len() - 1] {
        assert!(matches!(read_skw1(&good[..cut]), Err(Error::Format(_))), "cut at {cut}");
    }

    let mut chain = random_layers(&mut rng, &[(1, 2, 1), (3, 2, 1)]);
    assert!(matches!(read_skw1(&file_bytes(&chain, &[1], [0.5; 3], [0.5; 3])), Err(Error::Validation(_))));

    chain[1] = random_layers(&mut rng, &[(2, 2, 1)]).pop().unwrap();
    chain[1].weights[3] = f32::NAN;
    assert!(matches!(read_skw1(&file_bytes(&chain, &[1], [0.5; 3], [0.5; 3])), Err(Error::Validation(_))));

    assert!(matches!(read_skw1(&file_bytes(&layers, &[1, 0], [0.5; 3], [0.5; 3])), Err(Error::Validation(_))));
    assert!(matches!(read_skw1(&file_bytes(&layers, &[2], [0.5; 3], [0.5; 3])), Err(Error::Validation(_))));
}
