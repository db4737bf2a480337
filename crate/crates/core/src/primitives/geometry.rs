//! Closest-point queries, Catmull-Rom sampling and squared-distance gradients.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    #[inline]
    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(p: [f64; 2]) -> Self {
        Vec2::new(p[0], p[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(p: Vec2) -> Self {
        [p.x, p.y]
    }
}

const DEGENERATE_LEN2: f64 = 1e-12;

/// Nearest point to `p` on segment `ab`, and its parameter along the segment.
#[inline]
pub fn closest_point_segment(p: Vec2, a: Vec2, b: Vec2) -> (Vec2, f64) {
    let ab = b - a;
    let len2 = ab.norm2();
    if len2 < DEGENERATE_LEN2 {
        return (a, 0.0);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    (a + ab * t, t)
}

/// Uniform Catmull-Rom basis weights for `(P0, P1, P2, P3)` at `t`.
#[inline]
pub fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t + 2.0 * t2 - t3),
        0.5 * (2.0 - 5.0 * t2 + 3.0 * t3),
        0.5 * (t + 4.0 * t2 - 3.0 * t3),
        0.5 * (-t2 + t3),
    ]
}

#[inline]
pub fn catmull_rom_point(ctrl: &[Vec2], span: usize, t: f64) -> Vec2 {
    let w = catmull_rom_weights(t);
    let c = &ctrl[span..span + 4];
    c[0] * w[0] + c[1] * w[1] + c[2] * w[2] + c[3] * w[3]
}

/// A sampled spline vertex: a fixed linear combination of four consecutive controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplineSample {
    pub point: Vec2,
    pub first_ctrl: usize,
    pub weights: [f64; 4],
}

/// Samples every interior span at `t = k / samples_per_span`, merging exact
/// consecutive duplicates.
pub fn sample_spline(ctrl: &[Vec2], samples_per_span: usize) -> Result<Vec<SplineSample>> {
    if ctrl.len() < 4 {
        return Err(Error::validation(format!(
            "catmull-rom spline needs at least 4 controls, got {}",
            ctrl.len()
        )));
    }
    if samples_per_span == 0 {
        return Err(Error::validation("samples_per_span must be at least 1"));
    }
    let spans = ctrl.len() - 3;
    let mut out: Vec<SplineSample> = Vec::with_capacity(spans * samples_per_span + 1);
    let mut push = |s: SplineSample| {
        if out.last().is_none_or(|l| l.point != s.point) {
            out.push(s);
        }
    };
    for span in 0..spans {
        // span ends coincide with the next span's start, so only the last span emits t = 1
        let last_k = if span + 1 == spans { samples_per_span } else { samples_per_span - 1 };
        for k in 0..=last_k {
            let t = k as f64 / samples_per_span as f64;
            let weights = catmull_rom_weights(t);
            push(SplineSample {
                point: catmull_rom_point(ctrl, span, t),
                first_ctrl: span,
                weights,
            });
        }
    }
    Ok(out)
}

pub fn spline_to_polyline(ctrl: &[Vec2], samples_per_span: usize) -> Result<Vec<Vec2>> {
    Ok(sample_spline(ctrl, samples_per_span)?
        .into_iter()
        .map(|s| s.point)
        .collect())
}

/// Pixel-space geometry of one primitive, ready for distance queries.
#[derive(Clone, Debug)]
pub struct Shape {
    pub vertices: Vec<Vec2>,
    /// Per-vertex control weights for sampled splines; `None` means vertex `i`
    /// is control `i`.
    pub spline: Option<Vec<(usize, [f64; 4])>>,
    pub n_controls: usize,
}

/// Nearest point on a shape: active segment `seg`, its parameter `t` and the
/// squared distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nearest {
    pub d2: f64,
    pub seg: u32,
    pub t: f64,
    pub q: Vec2,
}

impl Shape {
    pub fn polyline(vertices: Vec<Vec2>) -> Self {
        let n_controls = vertices.len();
        Self {
            vertices,
            spline: None,
            n_controls,
        }
    }

    pub fn spline(ctrl: &[Vec2], samples_per_span: usize) -> Result<Self> {
        let samples = sample_spline(ctrl, samples_per_span)?;
        Ok(Self {
            vertices: samples.iter().map(|s| s.point).collect(),
            spline: Some(samples.iter().map(|s| (s.first_ctrl, s.weights)).collect()),
            n_controls: ctrl.len(),
        })
    }

    /// Axis-aligned bounds `(min, max)` of the vertices.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        (lo, hi)
    }

    /// Nearest point; ties between segments go to the lowest segment index.
    #[inline]
    pub fn nearest(&self, p: Vec2) -> Nearest {
        let v = &self.vertices;
        if v.len() == 1 {
            return Nearest {
                d2: (p - v[0]).norm2(),
                seg: 0,
                t: 0.0,
                q: v[0],
            };
        }
        let mut best = Nearest {
            d2: f64::INFINITY,
            seg: 0,
            t: 0.0,
            q: v[0],
        };
        for (i, w) in v.windows(2).enumerate() {
            let (q, t) = closest_point_segment(p, w[0], w[1]);
            let d2 = (p - q).norm2();
            if d2 < best.d2 {
                best = Nearest {
                    d2,
                    seg: i as u32,
                    t,
                    q,
                };
            }
        }
        best
    }

    /// Adds `g * dq/d(control)` to `out` for the nearest point described by
    /// `(seg, t)`, i.e. back-propagates a gradient on the nearest point.
    ///
    /// Since `q` minimises the distance, `d(d2)/d(vertices)` only needs the
    /// explicit dependence of `q` on the active segment's endpoints.
    #[inline]
    pub fn scatter(&self, seg: u32, t: f64, g: Vec2, out: &mut [Vec2]) {
        let seg = seg as usize;
        let mut vertex = |vi: usize, s: f64| {
            if s == 0.0 {
                return;
            }
            match &self.spline {
                None => out[vi] += g * s,
                Some(w) => {
                    let (first, ws) = w[vi];
                    for (k, wk) in ws.iter().enumerate() {
                        out[first + k] += g * (s * wk);
                    }
                }
            }
        };
        if self.vertices.len() == 1 {
            vertex(0, 1.0);
            return;
        }
        vertex(seg, 1.0 - t);
        vertex(seg + 1, t);
    }
}

/// Squared distance from `p` to the shape and its gradient with respect to
/// each control point (pixel units).
pub fn distance_and_grad(p: Vec2, shape: &Shape) -> (f64, Vec<Vec2>) {
    let n = shape.nearest(p);
    let mut grad = vec![Vec2::ZERO; shape.n_controls];
    if n.d2 > 0.0 {
        shape.scatter(n.seg, n.t, (p - n.q) * -2.0, &mut grad);
    }
    (n.d2, grad)
}
