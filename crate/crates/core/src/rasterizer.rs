//! Soft differentiable rasterisation of a [`SketchModel`].
//!
//! Every primitive covers pixel `p` with `alpha = exp(-d2 / (2 sigma^2))`,
//! where `d2` is the squared distance from the pixel centre to the primitive,
//! and exactly zero once `d2` exceeds the truncation radius squared.
//! Coverage is combined either by darkest-wins (`DarkenMin`, ink on paper) or
//! front-to-back alpha compositing (`SoftOver`).
//!
//! The forward pass records a [`RasterTape`] holding, for each pixel, the
//! contributing primitives with their nearest-point parameters, so the
//! backward pass never searches geometry again.

use serde::{Deserialize, Serialize};

use crate::canvas::{Canvas, CanvasGrad};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::primitives::{Layout, ParamVector, Shape, SketchModel, Vec2, SAMPLES_PER_SPAN};

const TILE: usize = 16;
const NO_WINNER: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compose {
    DarkenMin,
    SoftOver,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterConfig {
    pub sigma_px: f64,
    pub compose: Compose,
    pub aa_truncate_px: f64,
    pub samples_per_span: usize,
    pub exec: Exec,
}

impl RasterConfig {
    /// Truncation defaults to four sigma.
    pub fn new(sigma_px: f64, compose: Compose) -> Self {
        Self {
            sigma_px,
            compose,
            aa_truncate_px: 4.0 * sigma_px,
            samples_per_span: SAMPLES_PER_SPAN,
            exec: Exec::default(),
        }
    }

    pub fn with_truncate(mut self, px: f64) -> Self {
        self.aa_truncate_px = px;
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_px > 0.0 && self.sigma_px.is_finite()) {
            return Err(Error::validation(format!("sigma_px must be positive, got {}", self.sigma_px)));
        }
        if !(self.aa_truncate_px >= self.sigma_px) || !self.aa_truncate_px.is_finite() {
            return Err(Error::validation(format!(
                "aa_truncate_px ({}) must be finite and >= sigma_px ({})",
                self.aa_truncate_px, self.sigma_px
            )));
        }
        if self.samples_per_span == 0 {
            return Err(Error::validation("samples_per_span must be at least 1"));
        }
        Ok(())
    }
}

/// One primitive's contribution to one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record {
    pub prim: u32,
    pub seg: u32,
    pub t: f64,
    pub d2: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct RasterTape {
    width: usize,
    height: usize,
    channels: usize,
    sigma_px: f64,
    compose: Compose,
    exec: Exec,
    /// `records[offsets[i]..offsets[i + 1]]` belong to pixel `i`, in primitive order.
    offsets: Vec<usize>,
    records: Vec<Record>,
    /// DarkenMin only: per pixel and channel, the index of the winning record
    /// within the pixel's slice, or `NO_WINNER` when the background wins.
    winners: Vec<u32>,
    colours: Vec<f64>,
    background: Vec<f64>,
    shapes: Vec<Shape>,
    layout: Layout,
}

impl RasterTape {
    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn pixel_records(&self, pixel: usize) -> &[Record] {
        &self.records[self.offsets[pixel]..self.offsets[pixel + 1]]
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn matches(&self, model: &SketchModel) -> bool {
        self.width == model.canvas.w
            && self.height == model.canvas.h
            && self.channels == model.channels()
            && self.layout == Layout::of(model)
    }

    /// Recomputes the canvas from the recorded contributions alone.
    pub fn replay(&self) -> Canvas {
        let ch = self.channels;
        let mut data = vec![0.0; self.width * self.height * ch];
        self.exec.for_each_chunk(&mut data, self.width * ch, |row, out| {
            for col in 0..self.width {
                let px = row * self.width + col;
                let recs = self.pixel_records(px);
                let win = if self.compose == Compose::DarkenMin {
                    &self.winners[px * ch..(px + 1) * ch]
                } else {
                    &[][..]
                };
                composite(
                    self.compose,
                    recs,
                    win,
                    &self.colours,
                    &self.background,
                    &mut out[col * ch..(col + 1) * ch],
                );
            }
        });
        Canvas::from_clamped_unchecked(self.width, self.height, ch, data)
    }
}

struct RowOut {
    values: Vec<f64>,
    records: Vec<Record>,
    counts: Vec<usize>,
    winners: Vec<u32>,
}

/// Inclusive pixel index bounds.
#[derive(Clone, Copy)]
struct PixBox {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

fn pixel_box(shape: &Shape, trunc: f64, w: usize, h: usize) -> Option<PixBox> {
    let (lo, hi) = shape.bounds();
    // pixel centre j + 0.5 must lie within [lo - trunc, hi + trunc]
    let range = |lo: f64, hi: f64, n: usize| -> Option<(usize, usize)> {
        let a = (lo - trunc - 0.5).ceil().max(0.0);
        let b = (hi + trunc - 0.5).floor().min(n as f64 - 1.0);
        (a <= b).then_some((a as usize, b as usize))
    };
    let (x0, x1) = range(lo.x, hi.x, w)?;
    let (y0, y1) = range(lo.y, hi.y, h)?;
    Some(PixBox { x0, x1, y0, y1 })
}

/// Renders `model`, returning the canvas and the tape for the backward pass.
pub fn rasterize(model: &SketchModel, cfg: &RasterConfig) -> Result<(Canvas, RasterTape)> {
    cfg.validate()?;
    model.validate()?;
    if model.primitives.is_empty() {
        return Err(Error::validation("cannot rasterise a model without primitives"));
    }
    let (w, h, ch) = (model.canvas.w, model.canvas.h, model.channels());
    let exec = cfg.exec;

    let shapes = exec
        .map(model.primitives.len(), |i| {
            model.primitives[i].shape(w, h, cfg.samples_per_span)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let boxes: Vec<Option<PixBox>> = shapes
        .iter()
        .map(|s| pixel_box(s, cfg.aa_truncate_px, w, h))
        .collect();

    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, b) in boxes.iter().enumerate() {
        if let Some(b) = b {
            for ty in b.y0 / TILE..=b.y1 / TILE {
                for tx in b.x0 / TILE..=b.x1 / TILE {
                    bins[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
    }

    let colours: Vec<f64> = model.primitives.iter().flat_map(|p| p.colour.iter().copied()).collect();
    let background = model.background.clone();
    let trunc2 = cfg.aa_truncate_px * cfg.aa_truncate_px;
    let inv_two_sigma2 = 1.0 / (2.0 * cfg.sigma_px * cfg.sigma_px);
    let compose = cfg.compose;

    let rows: Vec<RowOut> = exec.map(h, |row| {
        let mut out = RowOut {
            values: vec![0.0; w * ch],
            records: Vec::new(),
            counts: Vec::with_capacity(w),
            winners: Vec::new(),
        };
        let mut local: Vec<Record> = Vec::new();
        let mut win = vec![NO_WINNER; ch];
        let py = row as f64 + 0.5;
        for col in 0..w {
            local.clear();
            let p = Vec2::new(col as f64 + 0.5, py);
            for &k in &bins[(row / TILE) * tiles_x + col / TILE] {
                let b = boxes[k as usize].as_ref().expect("binned primitive has a box");
                if col < b.x0 || col > b.x1 || row < b.y0 || row > b.y1 {
                    continue;
                }
                let n = shapes[k as usize].nearest(p);
                if n.d2 > trunc2 {
                    continue;
                }
                local.push(Record {
                    prim: k,
                    seg: n.seg,
                    t: n.t,
                    d2: n.d2,
                    alpha: (-n.d2 * inv_two_sigma2).exp(),
                });
            }
            let vals = &mut out.values[col * ch..(col + 1) * ch];
            match compose {
                Compose::SoftOver => {
                    composite(compose, &local, &[], &colours, &background, vals);
                    out.records.extend_from_slice(&local);
                    out.counts.push(local.len());
                }
                Compose::DarkenMin => {
                    darken_winners(&local, &colours, &background, &mut win);
                    // keep only winning records, renumbering winners into the kept slice
                    let mut kept: Vec<u32> = win.iter().copied().filter(|&i| i != NO_WINNER).collect();
                    kept.sort_unstable();
                    kept.dedup();
                    for wi in win.iter_mut() {
                        if *wi != NO_WINNER {
                            *wi = kept.iter().position(|&k| k == *wi).unwrap() as u32;
                        }
                    }
                    let kept_recs: Vec<Record> = kept.iter().map(|&i| local[i as usize]).collect();
                    composite(compose, &kept_recs, &win, &colours, &background, vals);
                    out.records.extend_from_slice(&kept_recs);
                    out.counts.push(kept_recs.len());
                    out.winners.extend_from_slice(&win);
                }
            }
        }
        out
    });

    let total: usize = rows.iter().map(|r| r.records.len()).sum();
    let mut data = Vec::with_capacity(w * h * ch);
    let mut records = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut winners = Vec::new();
    offsets.push(0);
    for r in rows {
        data.extend_from_slice(&r.values);
        for c in r.counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        records.extend_from_slice(&r.records);
        winners.extend_from_slice(&r.winners);
    }

    let tape = RasterTape {
        width: w,
        height: h,
        channels: ch,
        sigma_px: cfg.sigma_px,
        compose,
        exec,
        offsets,
        records,
        winners,
        colours,
        background,
        shapes,
        layout: Layout::of(model),
    };
    Ok((Canvas::from_clamped_unchecked(w, h, ch, data), tape))
}

/// Forward render without keeping the tape.
pub fn render(model: &SketchModel, cfg: &RasterConfig) -> Result<Canvas> {
    rasterize(model, cfg).map(|(c, _)| c)
}

#[inline]
fn darken_value(alpha: f64, colour: f64, bg: f64) -> f64 {
    bg + alpha * (colour - bg)
}

/// Per channel, the first record attaining the strictly smallest value.
fn darken_winners(recs: &[Record], colours: &[f64], bg: &[f64], win: &mut [u32]) {
    let ch = bg.len();
    for c in 0..ch {
        let mut best = bg[c];
        win[c] = NO_WINNER;
        for (i, r) in recs.iter().enumerate() {
            let v = darken_value(r.alpha, colours[r.prim as usize * ch + c], bg[c]);
            if v < best {
                best = v;
                win[c] = i as u32;
            }
        }
    }
}

fn composite(compose: Compose, recs: &[Record], win: &[u32], colours: &[f64], bg: &[f64], out: &mut [f64]) {
    let ch = bg.len();
    match compose {
        Compose::DarkenMin => {
            for c in 0..ch {
                out[c] = match win[c] {
                    NO_WINNER => bg[c],
                    i => {
                        let r = &recs[i as usize];
                        darken_value(r.alpha, colours[r.prim as usize * ch + c], bg[c])
                    }
                }
                .clamp(0.0, 1.0);
            }
        }
        Compose::SoftOver => {
            let mut acc = [0.0f64; 3];
            let mut trans = 1.0;
            for r in recs {
                let k = r.prim as usize;
                for c in 0..ch {
                    acc[c] += r.alpha * trans * colours[k * ch + c];
                }
                trans *= 1.0 - r.alpha;
            }
            for c in 0..ch {
                out[c] = (acc[c] + trans * bg[c]).clamp(0.0, 1.0);
            }
        }
    }
}

/// Per-record gradient: on the nearest point (pixel units) and on the colour.
#[derive(Clone, Copy, Default)]
struct RecordGrad {
    q: Vec2,
    colour: [f64; 3],
}

/// Back-propagates `dl_dimage` through the compositing, the coverage kernel and
/// the distance fields to the learnable parameters.
///
/// Under `DarkenMin` only the primitive attaining the minimum at a pixel
/// receives gradient there.
pub fn rasterize_backward(tape: &RasterTape, dl_dimage: &CanvasGrad) -> Result<ParamVector> {
    let (w, h, ch) = (tape.width, tape.height, tape.channels);
    if dl_dimage.width != w || dl_dimage.height != h || dl_dimage.channels != ch {
        return Err(Error::validation(format!(
            "image gradient is {}x{}x{}, tape is {}x{}x{}",
            dl_dimage.width, dl_dimage.height, dl_dimage.channels, w, h, ch
        )));
    }
    if let Some(i) = dl_dimage.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite image gradient at index {i}")));
    }
    let dalpha_dd2 = -1.0 / (2.0 * tape.sigma_px * tape.sigma_px);

    let per_row: Vec<Vec<RecordGrad>> = tape.exec.map(h, |row| {
        let start = tape.offsets[row * w];
        let end = tape.offsets[(row + 1) * w];
        let mut out = vec![RecordGrad::default(); end - start];
        let mut dalpha = Vec::new();
        let mut trans = Vec::new();
        for col in 0..w {
            let px = row * w + col;
            let (a, b) = (tape.offsets[px], tape.offsets[px + 1]);
            if a == b {
                continue;
            }
            let recs = &tape.records[a..b];
            let g = &dl_dimage.data[px * ch..(px + 1) * ch];
            let rg = &mut out[a - start..b - start];
            dalpha.clear();
            dalpha.resize(recs.len(), 0.0);
            match tape.compose {
                Compose::DarkenMin => {
                    for c in 0..ch {
                        let wi = tape.winners[px * ch + c];
                        if wi == NO_WINNER {
                            continue;
                        }
                        let r = &recs[wi as usize];
                        let col_k = tape.colours[r.prim as usize * ch + c];
                        dalpha[wi as usize] += g[c] * (col_k - tape.background[c]);
                        rg[wi as usize].colour[c] += g[c] * r.alpha;
                    }
                }
                Compose::SoftOver => {
                    // trans[k] = prod_{j<k} (1 - alpha_j)
                    trans.clear();
                    let mut t = 1.0;
                    for r in recs {
                        trans.push(t);
                        t *= 1.0 - r.alpha;
                    }
                    // behind[c] = colour seen through everything after record k
                    let mut behind = [0.0f64; 3];
                    behind[..ch].copy_from_slice(&tape.background);
                    for k in (0..recs.len()).rev() {
                        let r = &recs[k];
                        let col_k = &tape.colours[r.prim as usize * ch..(r.prim as usize + 1) * ch];
                        for c in 0..ch {
                            dalpha[k] += g[c] * trans[k] * (col_k[c] - behind[c]);
                            rg[k].colour[c] += g[c] * r.alpha * trans[k];
                            behind[c] = r.alpha * col_k[c] + (1.0 - r.alpha) * behind[c];
                        }
                    }
                }
            }
            let p = Vec2::new(col as f64 + 0.5, row as f64 + 0.5);
            for (k, r) in recs.iter().enumerate() {
                if dalpha[k] == 0.0 {
                    continue;
                }
                let dd2 = dalpha[k] * dalpha_dd2 * r.alpha;
                let q = nearest_point(&tape.shapes[r.prim as usize], r.seg, r.t);
                rg[k].q = (p - q) * (-2.0 * dd2);
            }
        }
        out
    });

    // fixed-order reduction: records in pixel row-major order
    let mut ctrl: Vec<Vec<Vec2>> = tape.shapes.iter().map(|s| vec![Vec2::ZERO; s.n_controls]).collect();
    let mut colour = vec![0.0; tape.colours.len()];
    for (r, g) in tape.records.iter().zip(per_row.iter().flatten()) {
        let k = r.prim as usize;
        if g.q != Vec2::ZERO {
            tape.shapes[k].scatter(r.seg, r.t, g.q, &mut ctrl[k]);
        }
        for c in 0..ch {
            colour[k * ch + c] += g.colour[c];
        }
    }

    let mut grad = ParamVector::zeros(tape.layout.clone());
    for (k, e) in tape.layout.entries.iter().enumerate() {
        for (i, gi) in e.geo.clone().enumerate() {
            let v = ctrl[k][i / 2];
            // parameters are normalised; pixel x = x_norm * width
            grad.values[gi] = if i % 2 == 0 { v.x * w as f64 } else { v.y * h as f64 };
        }
        for (c, gi) in e.col.clone().enumerate() {
            grad.values[gi] = colour[k * ch + c];
        }
    }
    Ok(grad)
}

#[inline]
fn nearest_point(shape: &Shape, seg: u32, t: f64) -> Vec2 {
    let v = &shape.vertices;
    if v.len() == 1 {
        return v[0];
    }
    let a = v[seg as usize];
    let b = v[seg as usize + 1];
    a + (b - a) * t
}
