//! Image objectives and their gradients with respect to the rendered canvas.

use std::sync::Arc;

use crate::canvas::{block_mean, block_mean_backward, Canvas, CanvasGrad};
use crate::encoder::{self, EncoderNet, FeatureSet, Tensor};
use crate::error::{Error, Result};
use crate::par::Exec;

const NORMALISE_EPS: f64 = 1e-10;

#[derive(Clone, Debug)]
pub enum LossSpec {
    Mse,
    PyramidMse {
        levels: usize,
    },
    /// Feature-space MSE over the encoder taps, optionally with each pixel's
    /// channel vector normalised to unit length first.
    Feature {
        encoder: Arc<EncoderNet>,
        weights: Vec<f64>,
        lpips_normalise: bool,
    },
}

impl LossSpec {
    /// Feature loss with uniform tap weights and channel normalisation.
    pub fn feature(encoder: EncoderNet) -> Self {
        let weights = vec![1.0; encoder.taps.len()];
        LossSpec::Feature {
            encoder: Arc::new(encoder),
            weights,
            lpips_normalise: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::Mse => Ok(()),
            LossSpec::PyramidMse { levels } => {
                if *levels == 0 {
                    Err(Error::validation("pyramid needs at least one level"))
                } else {
                    Ok(())
                }
            }
            LossSpec::Feature { encoder, weights, .. } => {
                encoder.validate()?;
                if weights.len() != encoder.taps.len() {
                    return Err(Error::validation(format!(
                        "{} feature weights for {} taps",
                        weights.len(),
                        encoder.taps.len()
                    )));
                }
                if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                    return Err(Error::validation("feature weights must be positive"));
                }
                Ok(())
            }
        }
    }
}

fn check_shapes(render: &Canvas, target: &Canvas) -> Result<()> {
    if !render.same_shape(target) {
        return Err(Error::validation(format!(
            "render is {}x{}x{}, target is {}x{}x{}",
            render.width(),
            render.height(),
            render.channels(),
            target.width(),
            target.height(),
            target.channels()
        )));
    }
    Ok(())
}

fn mse_slices(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let n = a.len() as f64;
    let mut loss = 0.0;
    let grad = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grad)
}

/// Mean squared error over every scalar.
pub fn loss_mse(render: &Canvas, target: &Canvas) -> Result<(f64, CanvasGrad)> {
    check_shapes(render, target)?;
    let (l, g) = mse_slices(render.data(), target.data());
    Ok((
        l,
        CanvasGrad {
            data: g,
            ..CanvasGrad::zeros_like(render)
        },
    ))
}

/// Mean over pyramid levels of the per-level MSE; level 0 is full resolution
/// and each further level is a 2x2 block-mean downsample.
pub fn loss_pyramid(render: &Canvas, target: &Canvas, levels: usize) -> Result<(f64, CanvasGrad)> {
    check_shapes(render, target)?;
    if levels == 0 {
        return Err(Error::validation("pyramid needs at least one level"));
    }
    let min_dim = 1usize << (levels - 1);
    if render.width() < min_dim || render.height() < min_dim {
        return Err(Error::validation(format!(
            "{levels} pyramid levels need at least {min_dim}x{min_dim}, image is {}x{}",
            render.width(),
            render.height()
        )));
    }
    let ch = render.channels();
    let mut r = render.data().to_vec();
    let mut t = target.data().to_vec();
    let mut dims = vec![(render.width(), render.height())];
    let mut level_grads = Vec::with_capacity(levels);
    let mut total = 0.0;
    for lvl in 0..levels {
        if lvl > 0 {
            let (w, h) = *dims.last().unwrap();
            let (nr, ow, oh) = block_mean(&r, w, h, ch);
            r = nr;
            t = block_mean(&t, w, h, ch).0;
            dims.push((ow, oh));
        }
        let (l, g) = mse_slices(&r, &t);
        total += l / levels as f64;
        level_grads.push(g);
    }
    // fold coarse gradients back to full resolution
    let mut acc = level_grads.pop().unwrap();
    for lvl in (0..levels - 1).rev() {
        let (w, h) = dims[lvl];
        let up = block_mean_backward(&acc, w, h, ch);
        acc = level_grads
            .pop()
            .unwrap()
            .iter()
            .zip(&up)
            .map(|(a, b)| a + b)
            .collect();
    }
    for v in &mut acc {
        *v /= levels as f64;
    }
    Ok((
        total,
        CanvasGrad {
            data: acc,
            ..CanvasGrad::zeros_like(render)
        },
    ))
}

/// Per-pixel unit normalisation of channel vectors.
fn normalise(t: &Tensor) -> (Tensor, Vec<f64>) {
    let hw = t.h * t.w;
    let mut out = t.clone();
    let mut norms = vec![0.0; hw];
    for (p, n) in norms.iter_mut().enumerate() {
        *n = (0..t.c).map(|c| t.data[c * hw + p].powi(2)).sum::<f64>().sqrt();
        for c in 0..t.c {
            out.data[c * hw + p] = t.data[c * hw + p] / (*n + NORMALISE_EPS);
        }
    }
    (out, norms)
}

/// Adjoint of [`normalise`] at `f` with per-pixel norms `norms`.
fn normalise_backward(f: &Tensor, norms: &[f64], g: &Tensor) -> Tensor {
    let hw = f.h * f.w;
    let mut out = g.clone();
    for (p, &n) in norms.iter().enumerate() {
        let d = n + NORMALISE_EPS;
        let fg: f64 = (0..f.c).map(|c| f.data[c * hw + p] * g.data[c * hw + p]).sum();
        for c in 0..f.c {
            let i = c * hw + p;
            out.data[i] = g.data[i] / d;
            if n > 0.0 {
                out.data[i] -= f.data[i] * fg / (n * d * d);
            }
        }
    }
    out
}

/// Target-side features, computed once per optimisation run.
#[derive(Clone, Debug)]
pub struct TargetFeatures {
    taps: Vec<Tensor>,
}

fn target_features(encoder: &EncoderNet, target: &Canvas, normalise_taps: bool, exec: Exec) -> Result<TargetFeatures> {
    let (f, _) = encoder::forward(encoder, target, exec)?;
    Ok(TargetFeatures {
        taps: f
            .features
            .into_iter()
            .map(|(_, t)| if normalise_taps { normalise(&t).0 } else { t })
            .collect(),
    })
}

fn feature_against(
    render: &Canvas,
    target: &TargetFeatures,
    encoder: &EncoderNet,
    weights: &[f64],
    lpips_normalise: bool,
    exec: Exec,
) -> Result<(f64, CanvasGrad)> {
    let (FeatureSet { features }, tape) = encoder::forward(encoder, render, exec)?;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(features.len());
    for (((_, f), t), &w) in features.iter().zip(&target.taps).zip(weights) {
        let (fr, norms) = if lpips_normalise {
            let (u, n) = normalise(f);
            (u, Some(n))
        } else {
            (f.clone(), None)
        };
        let (l, g) = mse_slices(&fr.data, &t.data);
        total += w * l;
        let g = Tensor {
            data: g.into_iter().map(|v| v * w).collect(),
            ..f.clone()
        };
        grads.push(match norms {
            Some(n) => normalise_backward(f, &n, &g),
            None => g,
        });
    }
    let g = encoder::backward(&tape, &grads)?;
    Ok((total, g))
}

/// Weighted per-tap feature MSE; the target branch is treated as constant.
pub fn loss_feature(render: &Canvas, target: &Canvas, spec: &LossSpec, exec: Exec) -> Result<(f64, CanvasGrad)> {
    check_shapes(render, target)?;
    spec.validate()?;
    let LossSpec::Feature {
        encoder,
        weights,
        lpips_normalise,
    } = spec
    else {
        return Err(Error::validation("loss_feature needs a feature loss spec"));
    };
    let tf = target_features(encoder, target, *lpips_normalise, exec)?;
    feature_against(render, &tf, encoder, weights, *lpips_normalise, exec)
}

enum PreparedTerm {
    Mse,
    Pyramid(usize),
    Feature {
        encoder: Arc<EncoderNet>,
        weights: Vec<f64>,
        lpips_normalise: bool,
        target: TargetFeatures,
    },
}

/// A weighted sum of losses bound to a fixed target.
pub struct Objective {
    target: Canvas,
    terms: Vec<(f64, PreparedTerm)>,
    exec: Exec,
}

impl Objective {
    pub fn new(target: Canvas, terms: Vec<(f64, LossSpec)>, exec: Exec) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::validation("objective needs at least one loss term"));
        }
        let mut prepared = Vec::with_capacity(terms.len());
        for (w, spec) in terms {
            spec.validate()?;
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::validation(format!("loss term weight must be positive, got {w}")));
            }
            let term = match spec {
                LossSpec::Mse => PreparedTerm::Mse,
                LossSpec::PyramidMse { levels } => PreparedTerm::Pyramid(levels),
                LossSpec::Feature {
                    encoder,
                    weights,
                    lpips_normalise,
                } => {
                    let tf = target_features(&encoder, &target, lpips_normalise, exec)?;
                    PreparedTerm::Feature {
                        encoder,
                        weights,
                        lpips_normalise,
                        target: tf,
                    }
                }
            };
            prepared.push((w, term));
        }
        Ok(Self {
            target,
            terms: prepared,
            exec,
        })
    }

    pub fn single(target: Canvas, spec: LossSpec, exec: Exec) -> Result<Self> {
        Self::new(target, vec![(1.0, spec)], exec)
    }

    pub fn target(&self) -> &Canvas {
        &self.target
    }

    pub fn eval(&self, render: &Canvas) -> Result<(f64, CanvasGrad)> {
        check_shapes(render, &self.target)?;
        let mut total = 0.0;
        let mut grad = CanvasGrad::zeros_like(render);
        for (w, term) in &self.terms {
            let (l, g) = match term {
                PreparedTerm::Mse => loss_mse(render, &self.target)?,
                PreparedTerm::Pyramid(levels) => loss_pyramid(render, &self.target, *levels)?,
                PreparedTerm::Feature {
                    encoder,
                    weights,
                    lpips_normalise,
                    target,
                } => feature_against(render, target, encoder, weights, *lpips_normalise, self.exec)?,
            };
            total += w * l;
            for (a, b) in grad.data.iter_mut().zip(&g.data) {
                *a += w * b;
            }
        }
        Ok((total, grad))
    }
}
