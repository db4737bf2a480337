//! Drawable primitives, the sketch model and its JSON interchange format.

mod geometry;
mod params;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use geometry::{
    catmull_rom_point, catmull_rom_weights, closest_point_segment, distance_and_grad, sample_spline,
    spline_to_polyline, Nearest, Shape, SplineSample, Vec2,
};
pub use params::{pack, unpack, Layout, LayoutEntry, ParamVector, COORD_MAX, COORD_MIN};

/// Default Catmull-Rom sampling density used for distance queries.
pub const SAMPLES_PER_SPAN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Point,
    Segment,
    Polyline,
    CatmullRom,
}

/// A stroke element. Coordinates are normalised to the canvas: `(0, 0)` is the
/// top-left corner and `(1, 1)` the bottom-right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub points: Vec<[f64; 2]>,
    /// Soft stroke radius in pixels. Set by the annealing schedule, never learned.
    pub sigma: f64,
    pub colour: Vec<f64>,
    #[serde(default = "yes")]
    pub learn_geo: bool,
    #[serde(default = "yes")]
    pub learn_col: bool,
}

fn yes() -> bool {
    true
}

impl Primitive {
    pub fn point(p: [f64; 2], colour: Vec<f64>, sigma: f64) -> Self {
        Self::new(PrimitiveKind::Point, vec![p], colour, sigma)
    }

    pub fn segment(a: [f64; 2], b: [f64; 2], colour: Vec<f64>, sigma: f64) -> Self {
        Self::new(PrimitiveKind::Segment, vec![a, b], colour, sigma)
    }

    pub fn new(kind: PrimitiveKind, points: Vec<[f64; 2]>, colour: Vec<f64>, sigma: f64) -> Self {
        Self {
            kind,
            points,
            sigma,
            colour,
            learn_geo: true,
            learn_col: true,
        }
    }

    pub fn with_learnable(mut self, geo: bool, col: bool) -> Self {
        self.learn_geo = geo;
        self.learn_col = col;
        self
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut p = self.clone();
        for c in &mut p.points {
            c[0] += dx;
            c[1] += dy;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        let ok = match self.kind {
            PrimitiveKind::Point => n == 1,
            PrimitiveKind::Segment => n == 2,
            PrimitiveKind::Polyline => n >= 2,
            PrimitiveKind::CatmullRom => n >= 4,
        };
        if !ok {
            return Err(Error::validation(format!("{:?} primitive with {n} control points", self.kind)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::validation(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.colour.len() != 1 && self.colour.len() != 3 {
            return Err(Error::validation(format!("colour must have 1 or 3 components, got {}", self.colour.len())));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite primitive coordinate"));
        }
        if self.colour.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::validation("colour component outside [0, 1]"));
        }
        Ok(())
    }

    /// Pixel-space shape on a `width x height` canvas.
    pub fn shape(&self, width: usize, height: usize, samples_per_span: usize) -> Result<Shape> {
        let ctrl: Vec<Vec2> = self
            .points
            .iter()
            .map(|p| Vec2::new(p[0] * width as f64, p[1] * height as f64))
            .collect();
        match self.kind {
            PrimitiveKind::CatmullRom => Shape::spline(&ctrl, samples_per_span),
            _ => Ok(Shape::polyline(ctrl)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasSize {
    pub w: usize,
    pub h: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchModel {
    pub canvas: CanvasSize,
    #[serde(default = "white")]
    pub background: Vec<f64>,
    pub primitives: Vec<Primitive>,
}

fn white() -> Vec<f64> {
    vec![1.0]
}

impl SketchModel {
    pub fn new(w: usize, h: usize, channels: usize, primitives: Vec<Primitive>) -> Self {
        Self {
            canvas: CanvasSize { w, h },
            background: vec![1.0; channels],
            primitives,
        }
    }

    pub fn channels(&self) -> usize {
        self.background.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas.w == 0 || self.canvas.h == 0 {
            return Err(Error::validation("model canvas has a zero dimension"));
        }
        let ch = self.channels();
        if ch != 1 && ch != 3 {
            return Err(Error::validation(format!("background must have 1 or 3 components, got {ch}")));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            p.validate()
                .map_err(|e| Error::validation(format!("primitive {i}: {e}")))?;
            if p.colour.len() != ch {
                return Err(Error::validation(format!(
                    "primitive {i}: colour has {} components, model has {ch}",
                    p.colour.len()
                )));
            }
        }
        Ok(())
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            primitives: self.primitives.iter().map(|p| p.translated(dx, dy)).collect(),
            ..self.clone()
        }
    }

    pub fn set_sigma(&mut self, sigma: f64) {
        for p in &mut self.primitives {
            p.sigma = sigma;
        }
    }

    pub fn count(&self, kind: PrimitiveKind) -> usize {
        self.primitives.iter().filter(|p| p.kind == kind).count()
    }

    /// Grayscale models whose background has one component expand to 3 on request.
    pub fn with_channels(&self, channels: usize) -> Self {
        let expand = |c: &[f64]| -> Vec<f64> {
            match (c.len(), channels) {
                (1, 3) => vec![c[0]; 3],
                (3, 1) => vec![crate::canvas::luma(c[0], c[1], c[2])],
                _ => c.to_vec(),
            }
        };
        Self {
            canvas: self.canvas,
            background: expand(&self.background),
            primitives: self
                .primitives
                .iter()
                .map(|p| Primitive {
                    colour: expand(&p.colour),
                    ..p.clone()
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: SketchModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let m = SketchModel::new(
            32,
            16,
            1,
            vec![Primitive::segment([0.0, 0.0], [1.0, 0.5], vec![0.0], 2.0).with_learnable(true, false)],
        );
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(v["canvas"]["w"], 32);
        assert_eq!(v["canvas"]["h"], 16);
        let p = &v["primitives"][0];
        assert_eq!(p["kind"], "segment");
        assert_eq!(p["points"][1][1], 0.5);
        assert_eq!(p["sigma"], 2.0);
        assert_eq!(p["learn_geo"], true);
        assert_eq!(p["learn_col"], false);
        assert_eq!(SketchModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    #[test]
    fn json_defaults_and_validation() {
        let s = r#"{"canvas":{"w":8,"h":8},"primitives":[{"kind":"catmull_rom","points":[[0,0],[0.1,0.1],[0.2,0.1],[0.3,0]],"sigma":1.0,"colour":[0.5]}]}"#;
        let m = SketchModel::from_json(s).unwrap();
        assert_eq!(m.background, vec![1.0]);
        assert!(m.primitives[0].learn_geo && m.primitives[0].learn_col);

        let bad = r#"{"canvas":{"w":8,"h":8},"primitives":[{"kind":"segment","points":[[0,0]],"sigma":1.0,"colour":[0.5]}]}"#;
        assert!(matches!(SketchModel::from_json(bad), Err(Error::Validation(_))));
        let bad_col = r#"{"canvas":{"w":8,"h":8},"primitives":[{"kind":"point","points":[[0,0]],"sigma":1.0,"colour":[0.5,0.5,0.5]}]}"#;
        assert!(SketchModel::from_json(bad_col).is_err());
        let bad_sigma = r#"{"canvas":{"w":8,"h":8},"primitives":[{"kind":"point","points":[[0,0]],"sigma":0.0,"colour":[0.5]}]}"#;
        assert!(SketchModel::from_json(bad_sigma).is_err());
    }
}
