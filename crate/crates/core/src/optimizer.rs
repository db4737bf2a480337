//! Primitive initialisation and the annealed Adam optimisation loop.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::canvas::{Canvas, TargetImage};
use crate::error::{Error, Result};
use crate::losses::Objective;
use crate::par::Exec;
use crate::primitives::{pack, unpack, ParamVector, Primitive, PrimitiveKind, SketchModel, COORD_MAX, COORD_MIN};
use crate::rasterizer::{rasterize, rasterize_backward, render, Compose, RasterConfig};
use crate::rng::SketchRng;

/// Maximum initial segment length, in normalised units.
pub const MAX_INIT_SEGMENT: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    RandomUniform,
    Grid,
    Saliency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub iterations: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub sigma_start_px: f64,
    pub sigma_end_px: f64,
    pub seed: u64,
    /// Snapshot after every `snapshot_every` iterations; 0 disables snapshots.
    pub snapshot_every: usize,
    pub init: InitKind,
    /// Compositing mode; by default darken-min for grayscale and soft-over for colour.
    pub compose: Option<Compose>,
    pub deterministic: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            sigma_start_px: 8.0,
            sigma_end_px: 1.0,
            seed: 0,
            snapshot_every: 0,
            init: InitKind::RandomUniform,
            compose: None,
            deterministic: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::validation("iterations must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::validation("adam betas must lie in [0, 1) and eps must be positive"));
        }
        if !(self.sigma_end_px > 0.0 && self.sigma_end_px <= self.sigma_start_px && self.sigma_start_px.is_finite()) {
            return Err(Error::validation(format!(
                "sigma schedule needs 0 < end ({}) <= start ({})",
                self.sigma_end_px, self.sigma_start_px
            )));
        }
        Ok(())
    }

    pub fn exec(&self) -> Exec {
        Exec::from_deterministic(self.deterministic)
    }

    /// Exponential decay from `sigma_start_px` at iteration 0 to
    /// `sigma_end_px` at the final iteration.
    pub fn sigma_at(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 || iteration == 0 {
            return self.sigma_start_px;
        }
        if iteration >= self.iterations - 1 {
            return self.sigma_end_px;
        }
        let frac = iteration as f64 / (self.iterations - 1) as f64;
        self.sigma_start_px * (self.sigma_end_px / self.sigma_start_px).powf(frac)
    }

    pub fn compose_for(&self, channels: usize) -> Compose {
        self.compose.unwrap_or(if channels == 1 {
            Compose::DarkenMin
        } else {
            Compose::SoftOver
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Clamps coordinates to the allowed excursion and colours to `[0, 1]`.
pub fn project(params: &mut ParamVector) {
    for e in &params.layout.entries {
        for v in &mut params.values[e.geo.clone()] {
            *v = v.clamp(COORD_MIN, COORD_MAX);
        }
        for v in &mut params.values[e.col.clone()] {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// One bias-corrected Adam update followed by projection onto the feasible box.
pub fn adam_step(
    params: &ParamVector,
    grad: &ParamVector,
    state: &AdamState,
    cfg: &OptimConfig,
) -> Result<(ParamVector, AdamState)> {
    if grad.values.len() != params.values.len() || state.m.len() != params.values.len() || state.v.len() != params.values.len() {
        return Err(Error::validation(format!(
            "adam shapes disagree: params {}, grad {}, state {}",
            params.values.len(),
            grad.values.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grad.values.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "gradient is {} at parameter index {i}",
            grad.values[i]
        )));
    }
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let t = state.t + 1;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let mut next = params.clone();
    let mut s = AdamState {
        m: state.m.clone(),
        v: state.v.clone(),
        t,
    };
    for i in 0..params.values.len() {
        let g = grad.values[i];
        s.m[i] = b1 * s.m[i] + (1.0 - b1) * g;
        s.v[i] = b2 * s.v[i] + (1.0 - b2) * g * g;
        let m_hat = s.m[i] / c1;
        let v_hat = s.v[i] / c2;
        next.values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    project(&mut next);
    Ok((next, s))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveCounts {
    pub points: usize,
    pub lines: usize,
    pub splines: usize,
}

impl PrimitiveCounts {
    pub fn total(&self) -> usize {
        self.points + self.lines + self.splines
    }
}

/// Magnitude of the central-difference luma gradient, per pixel.
fn gradient_magnitude(img: &Canvas) -> Vec<f64> {
    let g = img.to_grayscale();
    let (w, h) = (g.width(), g.height());
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        g.get(r, c, 0)
    };
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (at(r, c + 1) - at(r, c - 1)) / 2.0;
            let gy = (at(r + 1, c) - at(r - 1, c)) / 2.0;
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

struct Anchors<'a> {
    kind: InitKind,
    rng: &'a mut SketchRng,
    total: usize,
    next: usize,
    saliency: Option<(Vec<f64>, f64, usize, usize)>,
}

impl Anchors<'_> {
    fn sample(&mut self) -> [f64; 2] {
        let i = self.next;
        self.next += 1;
        match self.kind {
            InitKind::RandomUniform => [self.rng.uniform(), self.rng.uniform()],
            InitKind::Grid => {
                let side = (self.total as f64).sqrt().ceil() as usize;
                let jitter = 0.5 / (self.total as f64).sqrt();
                let cx = ((i % side) as f64 + 0.5) / side as f64;
                let cy = ((i / side) as f64 + 0.5) / side as f64;
                [
                    (cx + self.rng.uniform_range(-jitter, jitter)).clamp(0.0, 1.0),
                    (cy + self.rng.uniform_range(-jitter, jitter)).clamp(0.0, 1.0),
                ]
            }
            InitKind::Saliency => {
                let (mag, max, w, h) = self.saliency.as_ref().expect("saliency map");
                if *max > 0.0 {
                    for _ in 0..100_000 {
                        let x = self.rng.uniform();
                        let y = self.rng.uniform();
                        let col = ((x * *w as f64) as usize).min(w - 1);
                        let row = ((y * *h as f64) as usize).min(h - 1);
                        if self.rng.uniform() * max < mag[row * w + col] {
                            return [x, y];
                        }
                    }
                }
                [self.rng.uniform(), self.rng.uniform()]
            }
        }
    }
}

fn clamp_coord(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(COORD_MIN, COORD_MAX), p[1].clamp(COORD_MIN, COORD_MAX)]
}

fn inside_unit(p: [f64; 2]) -> bool {
    (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])
}

/// Builds the initial model: points, then segments, then Catmull-Rom splines,
/// each coloured by the target at its first control point.
pub fn init_model(target: &TargetImage, counts: PrimitiveCounts, cfg: &OptimConfig) -> Result<SketchModel> {
    if counts.total() == 0 {
        return Err(Error::validation("at least one of points, lines or splines must be positive"));
    }
    let canvas = &target.canvas;
    let mut rng = SketchRng::new(cfg.seed);
    let saliency = (cfg.init == InitKind::Saliency).then(|| {
        let mag = gradient_magnitude(canvas);
        let max = mag.iter().copied().fold(0.0, f64::max);
        (mag, max, canvas.width(), canvas.height())
    });
    let mut anchors = Anchors {
        kind: cfg.init,
        rng: &mut rng,
        total: counts.total(),
        next: 0,
        saliency,
    };
    let sigma = cfg.sigma_start_px;
    let mut prims = Vec::with_capacity(counts.total());
    let colour_at = |p: [f64; 2]| canvas.sample_normalised(p[0], p[1]);

    for _ in 0..counts.points {
        let a = anchors.sample();
        prims.push(Primitive::point(a, colour_at(a), sigma));
    }
    for _ in 0..counts.lines {
        let a = anchors.sample();
        let rng = &mut *anchors.rng;
        let len = MAX_INIT_SEGMENT * (1.0 - rng.uniform());
        let mut b = a;
        for _ in 0..16 {
            let theta = rng.uniform() * std::f64::consts::TAU;
            b = [a[0] + len * theta.cos(), a[1] + len * theta.sin()];
            if inside_unit(b) {
                break;
            }
        }
        prims.push(Primitive::segment(a, clamp_coord(b), colour_at(a), sigma));
    }
    for _ in 0..counts.splines {
        let a = anchors.sample();
        let rng = &mut *anchors.rng;
        let step = MAX_INIT_SEGMENT / 3.0;
        let mut theta = rng.uniform() * std::f64::consts::TAU;
        let mut pts = vec![a];
        for _ in 1..4 {
            theta += 0.3 * rng.normal();
            let prev = *pts.last().unwrap();
            pts.push(clamp_coord([
                prev[0] + step * theta.cos() + 0.02 * rng.normal(),
                prev[1] + step * theta.sin() + 0.02 * rng.normal(),
            ]));
        }
        prims.push(Primitive::new(PrimitiveKind::CatmullRom, pts, colour_at(a), sigma));
    }
    let mut model = SketchModel::new(canvas.width(), canvas.height(), canvas.channels(), prims);
    model.validate()?;
    // keep the grid lattice meaningful for multi-point primitives: centre each shape on its anchor
    if cfg.init == InitKind::Grid {
        for p in &mut model.primitives {
            let n = p.points.len() as f64;
            let (mx, my) = p.points.iter().fold((0.0, 0.0), |(x, y), q| (x + q[0] / n, y + q[1] / n));
            let (dx, dy) = (p.points[0][0] - mx, p.points[0][1] - my);
            for q in &mut p.points {
                *q = clamp_coord([q[0] + dx, q[1] + dy]);
            }
        }
    }
    Ok(model)
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub loss_history: Vec<(usize, f64)>,
    pub final_model: SketchModel,
    pub wall_time: Duration,
    pub config: OptimConfig,
}

impl RunReport {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in &self.loss_history {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }

    pub fn initial_loss(&self) -> f64 {
        self.loss_history[0].1
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_history.last().unwrap().1
    }
}

pub fn raster_config(cfg: &OptimConfig, channels: usize, sigma: f64) -> RasterConfig {
    RasterConfig::new(sigma, cfg.compose_for(channels)).with_exec(cfg.exec())
}

/// Writes `snap_{iter:06}.json` and `snap_{iter:06}.ppm`.
pub fn write_snapshot(dir: &Path, iteration: usize, model: &SketchModel, canvas: &Canvas) -> Result<()> {
    model.save(dir.join(format!("snap_{iteration:06}.json")))?;
    canvas.save_ppm(dir.join(format!("snap_{iteration:06}.ppm")))
}

/// Runs the annealed optimisation loop. Each iteration renders at the
/// scheduled sigma, evaluates the objective, back-propagates and takes one
/// Adam step. The loss recorded for an iteration is the loss before its step.
pub fn optimise(
    target: &TargetImage,
    model: &SketchModel,
    objective: &Objective,
    cfg: &OptimConfig,
    snapshot_dir: Option<&Path>,
) -> Result<RunReport> {
    cfg.validate()?;
    model.validate()?;
    let c = &target.canvas;
    if (model.canvas.w, model.canvas.h, model.channels()) != (c.width(), c.height(), c.channels()) {
        return Err(Error::validation(format!(
            "model is {}x{}x{}, target is {}x{}x{}",
            model.canvas.w,
            model.canvas.h,
            model.channels(),
            c.width(),
            c.height(),
            c.channels()
        )));
    }
    if let Some(dir) = snapshot_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let start = Instant::now();
    let mut template = model.clone();
    let mut params = pack(&template);
    let mut state = AdamState::new(params.len());
    let mut history = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let sigma = cfg.sigma_at(it);
        template.set_sigma(sigma);
        let current = unpack(&params, &template)?;
        let rc = raster_config(cfg, current.channels(), sigma);
        let (img, tape) = rasterize(&current, &rc)?;
        let (loss, dimg) = objective.eval(&img)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss} at iteration {it}")));
        }
        history.push((it, loss));
        let grad = rasterize_backward(&tape, &dimg).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("{m} at iteration {it}")),
            e => e,
        })?;
        let (p, s) = adam_step(&params, &grad, &state, cfg).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("{m} at iteration {it}")),
            e => e,
        })?;
        params = p;
        state = s;

        let last = it + 1 == cfg.iterations;
        if let Some(dir) = snapshot_dir {
            if cfg.snapshot_every > 0 && ((it + 1) % cfg.snapshot_every == 0 || last) {
                let snap = unpack(&params, &template)?;
                write_snapshot(dir, it, &snap, &render(&snap, &rc)?)?;
            }
        }
    }
    template.set_sigma(cfg.sigma_at(cfg.iterations - 1));
    let final_model = unpack(&params, &template)?;
    Ok(RunReport {
        loss_history: history,
        final_model,
        wall_time: start.elapsed(),
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossSpec;
    use crate::primitives::Layout;

    fn scalar(v: f64) -> (ParamVector, SketchModel) {
        let m = SketchModel::new(4, 4, 1, vec![Primitive::point([v, 0.5], vec![0.0], 1.0).with_learnable(true, false)]);
        (pack(&m), m)
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let (p, _) = scalar(0.3);
        let g = ParamVector::zeros(p.layout.clone());
        let (next, s) = adam_step(&p, &g, &AdamState::new(p.len()), &OptimConfig::default()).unwrap();
        assert_eq!(next, p);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_first_step_by_hand() {
        let (mut p, _) = scalar(1.0);
        p.values = vec![1.0, 0.5];
        let mut g = ParamVector::zeros(p.layout.clone());
        g.values = vec![1.0, 0.0];
        let cfg = OptimConfig {
            lr: 0.001,
            ..OptimConfig::default()
        };
        let (next, _) = adam_step(&p, &g, &AdamState::new(2), &cfg).unwrap();
        // m_hat = 1, v_hat = 1 at t = 1
        let expect = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8);
        assert!((next.values[0] - expect).abs() < 1e-15);
        assert!((next.values[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn adam_rejects_nan_with_index() {
        let (p, _) = scalar(0.5);
        let mut g = ParamVector::zeros(p.layout.clone());
        g.values[1] = f64::NAN;
        let err = adam_step(&p, &g, &AdamState::new(2), &OptimConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::Numeric(m) if m.contains("index 1")), "{err}");
    }

    #[test]
    fn projection_clamps() {
        let m = SketchModel::new(4, 4, 1, vec![Primitive::point([0.5, 0.5], vec![0.5], 1.0)]);
        let mut p = pack(&m);
        p.values = vec![-3.0, 4.0, 1.5];
        project(&mut p);
        assert_eq!(p.values, vec![COORD_MIN, COORD_MAX, 1.0]);
    }

    #[test]
    fn sigma_schedule_endpoints_and_monotone() {
        let cfg = OptimConfig {
            iterations: 137,
            ..OptimConfig::default()
        };
        assert_eq!(cfg.sigma_at(0), 8.0);
        assert!((cfg.sigma_at(136) - 1.0).abs() < 1e-9);
        for i in 1..137 {
            assert!(cfg.sigma_at(i) <= cfg.sigma_at(i - 1));
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            OptimConfig {
                iterations: 0,
                ..OptimConfig::default()
            },
            OptimConfig {
                sigma_end_px: 9.0,
                ..OptimConfig::default()
            },
            OptimConfig {
                lr: -1.0,
                ..OptimConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    fn target(w: usize, h: usize, ch: usize) -> TargetImage {
        let mut data = Vec::new();
        for r in 0..h {
            for c in 0..w {
                for k in 0..ch {
                    data.push(((r * 3 + c * 5 + k * 7) % 17) as f64 / 16.0);
                }
            }
        }
        TargetImage::from_canvas(Canvas::from_data(w, h, ch, data).unwrap(), "synthetic")
    }

    #[test]
    fn init_counts_and_determinism() {
        let t = target(32, 32, 3);
        let cfg = OptimConfig {
            seed: 5,
            ..OptimConfig::default()
        };
        let counts = PrimitiveCounts {
            points: 2000,
            lines: 3,
            splines: 2,
        };
        let a = init_model(&t, counts, &cfg).unwrap();
        assert_eq!(a.count(PrimitiveKind::Point), 2000);
        assert_eq!(a.count(PrimitiveKind::Segment), 3);
        assert_eq!(a.count(PrimitiveKind::CatmullRom), 2);
        assert_eq!(a, init_model(&t, counts, &cfg).unwrap());
        for p in &a.primitives {
            if p.kind == PrimitiveKind::Segment {
                let d = ((p.points[1][0] - p.points[0][0]).powi(2) + (p.points[1][1] - p.points[0][1]).powi(2)).sqrt();
                assert!(d <= MAX_INIT_SEGMENT + 1e-12);
            }
            assert_eq!(p.colour, t.canvas.sample_normalised(p.points[0][0], p.points[0][1]));
        }
        assert!(init_model(&t, PrimitiveCounts::default(), &cfg).is_err());
    }

    #[test]
    fn grid_init_spreads_over_lattice() {
        let t = target(16, 16, 1);
        let cfg = OptimConfig {
            init: InitKind::Grid,
            ..OptimConfig::default()
        };
        let m = init_model(&t, PrimitiveCounts { points: 16, ..Default::default() }, &cfg).unwrap();
        // 4x4 lattice, jitter at most half a cell: each point stays in its own cell
        for (i, p) in m.primitives.iter().enumerate() {
            let (cx, cy) = ((i % 4) as f64, (i / 4) as f64);
            assert!((p.points[0][0] * 4.0 - cx - 0.5).abs() <= 0.5 + 1e-12);
            assert!((p.points[0][1] * 4.0 - cy - 0.5).abs() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn saliency_init_stays_near_the_only_edge() {
        let (w, h) = (16, 16);
        let mut data = vec![0.0; w * h];
        data[7 * w + 9] = 1.0;
        let t = TargetImage::from_canvas(Canvas::from_data(w, h, 1, data).unwrap(), "dot");
        // oracle: pixels with non-zero central-difference gradient are the 4-neighbours of (7, 9)
        let support = [(6usize, 9usize), (8, 9), (7, 8), (7, 10)];
        let cfg = OptimConfig {
            init: InitKind::Saliency,
            seed: 3,
            ..OptimConfig::default()
        };
        let m = init_model(&t, PrimitiveCounts { points: 500, ..Default::default() }, &cfg).unwrap();
        for p in &m.primitives {
            let col = (p.points[0][0] * w as f64) as usize;
            let row = (p.points[0][1] * h as f64) as usize;
            assert!(support.contains(&(row, col)), "sample at ({row}, {col})");
            assert!((row as isize - 7).abs() <= 1 && (col as isize - 9).abs() <= 1);
        }
    }

    #[test]
    fn one_iteration_history_and_zero_rejected() {
        let t = target(16, 16, 1);
        let cfg = OptimConfig {
            iterations: 1,
            ..OptimConfig::default()
        };
        let m = init_model(&t, PrimitiveCounts { lines: 4, ..Default::default() }, &cfg).unwrap();
        let obj = Objective::single(t.canvas.clone(), LossSpec::Mse, Exec::Serial).unwrap();
        let r = optimise(&t, &m, &obj, &cfg, None).unwrap();
        assert_eq!(r.loss_history.len(), 1);
        let zero = OptimConfig {
            iterations: 0,
            ..OptimConfig::default()
        };
        assert!(optimise(&t, &m, &obj, &zero, None).is_err());
    }

    #[test]
    fn projection_holds_and_runs_are_deterministic() {
        let t = target(24, 24, 3);
        let cfg = OptimConfig {
            iterations: 30,
            lr: 0.05,
            seed: 9,
            deterministic: true,
            ..OptimConfig::default()
        };
        let counts = PrimitiveCounts {
            points: 5,
            lines: 5,
            splines: 2,
        };
        let m = init_model(&t, counts, &cfg).unwrap();
        let obj = Objective::single(t.canvas.clone(), LossSpec::Mse, cfg.exec()).unwrap();
        let a = optimise(&t, &m, &obj, &cfg, None).unwrap();
        let b = optimise(&t, &m, &obj, &cfg, None).unwrap();
        assert_eq!(a.final_model, b.final_model);
        assert_eq!(a.loss_csv(), b.loss_csv());
        let layout = Layout::of(&a.final_model);
        let v = pack(&a.final_model);
        for (i, x) in v.values.iter().enumerate() {
            if layout.is_colour_index(i) {
                assert!((0.0..=1.0).contains(x));
            } else {
                assert!((COORD_MIN..=COORD_MAX).contains(x));
            }
        }
        // parallel execution gives the same trajectory
        let par = OptimConfig {
            deterministic: false,
            ..cfg.clone()
        };
        let c = optimise(&t, &m, &obj, &par, None).unwrap();
        assert_eq!(a.loss_csv(), c.loss_csv());
    }

    #[test]
    fn snapshots_written() {
        let dir = tempfile::tempdir().unwrap();
        let t = target(16, 16, 1);
        let cfg = OptimConfig {
            iterations: 5,
            snapshot_every: 2,
            ..OptimConfig::default()
        };
        let m = init_model(&t, PrimitiveCounts { lines: 3, ..Default::default() }, &cfg).unwrap();
        let obj = Objective::single(t.canvas.clone(), LossSpec::Mse, Exec::Serial).unwrap();
        let r = optimise(&t, &m, &obj, &cfg, Some(dir.path())).unwrap();
        for it in [1, 3, 4] {
            assert!(dir.path().join(format!("snap_{it:06}.json")).exists());
            assert!(dir.path().join(format!("snap_{it:06}.ppm")).exists());
        }
        let last = SketchModel::load(dir.path().join("snap_000004.json")).unwrap();
        assert_eq!(last, r.final_model);
    }
}
