//! Resolved configuration of a `fit` run, written next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sketchforge_core::encoder::{default_random_encoder, load_skw1, EncoderNet};
use sketchforge_core::losses::{LossSpec, Objective};
use sketchforge_core::optimizer::{OptimConfig, PrimitiveCounts};
use sketchforge_core::{Canvas, ColourMode, Error, Exec, Result};

use crate::args::{FitArgs, LossArg, Preset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Pyramid,
    Feature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub pyramid_levels: usize,
    /// SKW1 path or `random:SEED`.
    pub encoder: String,
    pub taps: Option<Vec<usize>>,
    pub mix_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BedConfig {
    pub bed_w_mm: f64,
    pub bed_h_mm: f64,
    pub margin_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub image: PathBuf,
    pub resolution: [usize; 2],
    pub colour: ColourMode,
    pub counts: PrimitiveCounts,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub bed: BedConfig,
}

pub fn preset_counts(p: Preset) -> PrimitiveCounts {
    let mut c = PrimitiveCounts::default();
    match p {
        Preset::PaperPoints => c.points = 2000,
        Preset::PaperLines => c.lines = 1000,
        Preset::PaperSplines => c.splines = 500,
    }
    c
}

impl RunManifest {
    pub fn from_args(a: &FitArgs) -> Result<Self> {
        let explicit = a.points.is_some() || a.lines.is_some() || a.splines.is_some();
        let counts = if explicit {
            PrimitiveCounts {
                points: a.points.unwrap_or(0),
                lines: a.lines.unwrap_or(0),
                splines: a.splines.unwrap_or(0),
            }
        } else {
            a.preset.map(preset_counts).unwrap_or_default()
        };
        let image = a
            .image
            .clone()
            .ok_or_else(|| Error::Validation("--image is required".into()))?;
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            image,
            resolution: [a.resolution.0, a.resolution.1],
            colour: a.colour.into(),
            counts,
            loss: LossConfig {
                kind: match a.loss {
                    LossArg::Mse => LossKind::Mse,
                    LossArg::Pyramid => LossKind::Pyramid,
                    LossArg::Feature => LossKind::Feature,
                },
                pyramid_levels: a.pyramid_levels,
                encoder: a.encoder.clone(),
                taps: a.taps.clone(),
                mix_mse: a.mix_mse,
            },
            optim: OptimConfig {
                iterations: a.iters,
                lr: a.lr,
                sigma_start_px: a.sigma_start,
                sigma_end_px: a.sigma_end,
                seed: a.seed,
                snapshot_every: a.snapshot_every,
                init: a.init.into(),
                deterministic: a.deterministic,
                ..OptimConfig::default()
            },
            bed: BedConfig {
                bed_w_mm: a.bed.bed.0,
                bed_h_mm: a.bed.bed.1,
                margin_mm: a.bed.margin,
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })
    }

    fn encoder(&self, channels: usize) -> Result<EncoderNet> {
        let spec = self.loss.encoder.as_str();
        let net = match spec.strip_prefix("random:") {
            Some(seed) => {
                let seed: u64 = seed
                    .parse()
                    .map_err(|_| Error::Validation(format!("bad encoder seed in '{spec}'")))?;
                default_random_encoder(seed, channels)?
            }
            None => load_skw1(spec).map_err(|e| match e {
                Error::Format(m) => Error::Format(format!("{spec}: {m}")),
                Error::Validation(m) => Error::Validation(format!("{spec}: {m}")),
                e => e,
            })?,
        };
        if net.in_channels() != channels {
            return Err(Error::Validation(format!(
                "encoder '{spec}' expects {} input channels but the target has {channels}; pick --colour to match",
                net.in_channels()
            )));
        }
        match &self.loss.taps {
            Some(t) => net.with_taps(t.clone()),
            None => Ok(net),
        }
    }

    pub fn objective(&self, target: &Canvas, exec: Exec) -> Result<Objective> {
        if !(self.loss.mix_mse >= 0.0 && self.loss.mix_mse.is_finite()) {
            return Err(Error::Validation(format!("--mix-mse must be non-negative, got {}", self.loss.mix_mse)));
        }
        let terms = match self.loss.kind {
            LossKind::Mse => vec![(1.0, LossSpec::Mse)],
            LossKind::Pyramid => vec![(
                1.0,
                LossSpec::PyramidMse {
                    levels: self.loss.pyramid_levels,
                },
            )],
            LossKind::Feature => {
                let mut t = vec![(1.0, LossSpec::feature(self.encoder(target.channels())?))];
                if self.loss.mix_mse > 0.0 {
                    t.push((self.loss.mix_mse, LossSpec::Mse));
                }
                t
            }
        };
        Objective::new(target.clone(), terms, exec)
    }
}
