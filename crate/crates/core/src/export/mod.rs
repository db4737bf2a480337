//! Physical outputs: millimetre toolpaths, stroke ordering, G-code and SVG.

mod gcode;
mod order;
mod svg;

pub use gcode::{simulate_gcode, toolpath_to_gcode, GcodeParams, GcodeProgram, GcodeStats, PLUNGE_FEED};
pub use order::{order_strokes, OrderAlgorithm};
pub use svg::model_to_svg;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::{catmull_rom_point, PrimitiveKind, SketchModel, Vec2};

/// Upper bound on spline flattening subdivisions per span.
const MAX_FLATTEN_SEGMENTS: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    /// Geometry in millimetres, in its original direction.
    pub polyline: Vec<[f64; 2]>,
    /// Draw the polyline back to front.
    pub reversed: bool,
    pub pen_id: u32,
}

impl Stroke {
    pub fn new(polyline: Vec<[f64; 2]>) -> Self {
        Self {
            polyline,
            reversed: false,
            pen_id: 0,
        }
    }

    /// First point in drawing order.
    pub fn start(&self) -> [f64; 2] {
        if self.reversed {
            *self.polyline.last().unwrap()
        } else {
            self.polyline[0]
        }
    }

    /// Last point in drawing order.
    pub fn end(&self) -> [f64; 2] {
        if self.reversed {
            self.polyline[0]
        } else {
            *self.polyline.last().unwrap()
        }
    }

    /// Points in drawing order.
    pub fn drawn(&self) -> Vec<[f64; 2]> {
        let mut p = self.polyline.clone();
        if self.reversed {
            p.reverse();
        }
        p
    }

    pub fn length(&self) -> f64 {
        self.polyline.windows(2).map(|w| dist(w[0], w[1])).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Toolpath {
    pub strokes: Vec<Stroke>,
    pub bed_w_mm: f64,
    pub bed_h_mm: f64,
    pub margin_mm: f64,
}

impl Toolpath {
    /// Pen-up distance starting from the origin, excluding the return home.
    pub fn pen_up_travel(&self) -> f64 {
        let mut pos = [0.0, 0.0];
        let mut total = 0.0;
        for s in &self.strokes {
            total += dist(pos, s.start());
            pos = s.end();
        }
        total
    }

    pub fn pen_down_length(&self) -> f64 {
        self.strokes.iter().map(Stroke::length).sum()
    }

    /// Checks that every stroke is non-empty and lies inside the margins.
    pub fn validate(&self) -> Result<()> {
        check_bed(self.bed_w_mm, self.bed_h_mm, self.margin_mm)?;
        let (lo_x, hi_x) = (self.margin_mm, self.bed_w_mm - self.margin_mm);
        let (lo_y, hi_y) = (self.margin_mm, self.bed_h_mm - self.margin_mm);
        for (i, s) in self.strokes.iter().enumerate() {
            if s.polyline.is_empty() {
                return Err(Error::validation(format!("stroke {i} is empty")));
            }
            for p in &s.polyline {
                if !(lo_x..=hi_x).contains(&p[0]) || !(lo_y..=hi_y).contains(&p[1]) {
                    return Err(Error::validation(format!(
                        "stroke {i} point ({}, {}) lies outside the drawable area",
                        p[0], p[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    (dx * dx + dy * dy).sqrt()
}

fn check_bed(w: f64, h: f64, margin: f64) -> Result<()> {
    if !(w.is_finite() && h.is_finite() && margin.is_finite() && margin >= 0.0) || w <= 2.0 * margin || h <= 2.0 * margin {
        return Err(Error::validation(format!(
            "bed {w}x{h} mm with margin {margin} mm leaves no drawable area"
        )));
    }
    Ok(())
}

/// Affine map from normalised canvas coordinates to bed millimetres.
#[derive(Clone, Copy, Debug)]
pub struct BedMap {
    ox: f64,
    oy: f64,
    rw: f64,
    rh: f64,
    lo: [f64; 2],
    hi: [f64; 2],
}

impl BedMap {
    /// Largest rectangle with the canvas aspect ratio, centred inside the margins.
    pub fn new(canvas_w: usize, canvas_h: usize, bed_w_mm: f64, bed_h_mm: f64, margin_mm: f64) -> Result<Self> {
        check_bed(bed_w_mm, bed_h_mm, margin_mm)?;
        if canvas_w == 0 || canvas_h == 0 {
            return Err(Error::validation("canvas must be non-empty"));
        }
        let (aw, ah) = (bed_w_mm - 2.0 * margin_mm, bed_h_mm - 2.0 * margin_mm);
        let scale = (aw / canvas_w as f64).min(ah / canvas_h as f64);
        let (rw, rh) = (scale * canvas_w as f64, scale * canvas_h as f64);
        Ok(Self {
            ox: margin_mm + (aw - rw) / 2.0,
            oy: margin_mm + (ah - rh) / 2.0,
            rw,
            rh,
            lo: [margin_mm, margin_mm],
            hi: [bed_w_mm - margin_mm, bed_h_mm - margin_mm],
        })
    }

    /// Image top maps to the far (maximum) bed Y.
    pub fn apply(&self, p: Vec2) -> [f64; 2] {
        [
            (self.ox + p.x * self.rw).clamp(self.lo[0], self.hi[0]),
            (self.oy + (1.0 - p.y) * self.rh).clamp(self.lo[1], self.hi[1]),
        ]
    }

    pub fn size_mm(&self) -> (f64, f64) {
        (self.rw, self.rh)
    }
}

/// Liang-Barsky clip of segment `a`-`b` to the unit square.
fn clip_unit(a: Vec2, b: Vec2) -> Option<(Vec2, Vec2)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d.x, a.x), (d.x, 1.0 - a.x), (-d.y, a.y), (d.y, 1.0 - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    let clamp = |v: Vec2| Vec2::new(v.x.clamp(0.0, 1.0), v.y.clamp(0.0, 1.0));
    let ca = if t0 == 0.0 { a } else { clamp(a.lerp(b, t0)) };
    let cb = if t1 == 1.0 { b } else { clamp(a.lerp(b, t1)) };
    Some((ca, cb))
}

/// Clips a polyline to the unit square, splitting it where it leaves and re-enters.
fn clip_polyline(pts: &[Vec2]) -> Vec<Vec<Vec2>> {
    let mut out: Vec<Vec<Vec2>> = Vec::new();
    let mut open = false;
    for w in pts.windows(2) {
        match clip_unit(w[0], w[1]) {
            Some((a, b)) => {
                if !open || out.last().and_then(|l| l.last()) != Some(&a) {
                    out.push(vec![a]);
                }
                out.last_mut().unwrap().push(b);
                // the piece continues only if the segment end was not cut off
                open = b == w[1];
            }
            None => open = false,
        }
    }
    out
}

/// Samples one spline span so that every chord midpoint lies within `tol_mm`
/// of the curve point at the chord's mid-parameter.
fn flatten_span(ctrl: &[Vec2], span: usize, map: &BedMap, tol_mm: f64) -> Vec<Vec2> {
    let mm = |p: Vec2| map_unclamped(map, p);
    // a single chord can miss an S-shaped span whose midpoint sits on it
    let mut n = 4;
    loop {
        let pts: Vec<Vec2> = (0..=n).map(|k| catmull_rom_point(ctrl, span, k as f64 / n as f64)).collect();
        let ok = (0..n).all(|k| {
            let mid = catmull_rom_point(ctrl, span, (k as f64 + 0.5) / n as f64);
            let c = (pts[k] + pts[k + 1]) * 0.5;
            dist(mm(c), mm(mid)) < tol_mm
        });
        if ok || n >= MAX_FLATTEN_SEGMENTS {
            return pts;
        }
        n *= 2;
    }
}

fn map_unclamped(map: &BedMap, p: Vec2) -> [f64; 2] {
    [map.ox + p.x * map.rw, map.oy + (1.0 - p.y) * map.rh]
}

/// Converts a model into millimetre strokes on the bed. Off-canvas geometry is
/// clipped away, splines are flattened adaptively, points become single-point
/// strokes.
pub fn model_to_toolpath(
    model: &SketchModel,
    bed_w_mm: f64,
    bed_h_mm: f64,
    margin_mm: f64,
    flatten_tol_mm: f64,
) -> Result<Toolpath> {
    if !(flatten_tol_mm > 0.0 && flatten_tol_mm.is_finite()) {
        return Err(Error::validation(format!("flatten tolerance must be positive, got {flatten_tol_mm}")));
    }
    model.validate()?;
    let map = BedMap::new(model.canvas.w, model.canvas.h, bed_w_mm, bed_h_mm, margin_mm)?;
    let mut strokes = Vec::new();
    for prim in &model.primitives {
        let pts: Vec<Vec2> = prim.points.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        let line = match prim.kind {
            PrimitiveKind::Point => {
                let p = pts[0];
                if (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y) {
                    strokes.push(Stroke::new(vec![map.apply(p)]));
                }
                continue;
            }
            PrimitiveKind::Segment | PrimitiveKind::Polyline => pts,
            PrimitiveKind::CatmullRom => {
                let mut line = Vec::new();
                for span in 0..pts.len() - 3 {
                    let s = flatten_span(&pts, span, &map, flatten_tol_mm);
                    let skip = usize::from(span > 0);
                    line.extend_from_slice(&s[skip..]);
                }
                line
            }
        };
        for piece in clip_polyline(&line) {
            strokes.push(Stroke::new(piece.into_iter().map(|p| map.apply(p)).collect()));
        }
    }
    Ok(Toolpath {
        strokes,
        bed_w_mm,
        bed_h_mm,
        margin_mm,
    })
}
