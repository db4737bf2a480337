use std::ops::Range;

use super::SketchModel;
use crate::error::{Error, Result};

/// Coordinates may leave the canvas by this much during optimisation.
pub const COORD_MIN: f64 = -0.25;
pub const COORD_MAX: f64 = 1.25;

/// Index ranges of one primitive's learnable scalars. Empty ranges mean the
/// field is frozen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutEntry {
    pub geo: Range<usize>,
    pub col: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
    pub len: usize,
}

impl Layout {
    /// Primitives in list order; within one, `x, y` per control point, then
    /// colour components.
    pub fn of(model: &SketchModel) -> Self {
        let mut off = 0;
        let entries = model
            .primitives
            .iter()
            .map(|p| {
                let g = if p.learn_geo { 2 * p.points.len() } else { 0 };
                let geo = off..off + g;
                off += g;
                let c = if p.learn_col { p.colour.len() } else { 0 };
                let col = off..off + c;
                off += c;
                LayoutEntry { geo, col }
            })
            .collect();
        Self { entries, len: off }
    }

    pub fn is_colour_index(&self, i: usize) -> bool {
        self.entries.iter().any(|e| e.col.contains(&i))
    }
}

/// Flat learnable parameters (or a gradient with the same layout).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: vec![0.0; layout.len],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn pack(model: &SketchModel) -> ParamVector {
    let layout = Layout::of(model);
    let mut values = Vec::with_capacity(layout.len);
    for p in &model.primitives {
        if p.learn_geo {
            values.extend(p.points.iter().flatten());
        }
        if p.learn_col {
            values.extend(&p.colour);
        }
    }
    ParamVector { values, layout }
}

/// Writes the learnable scalars of `v` into a copy of `template`, clamping
/// coordinates to `[COORD_MIN, COORD_MAX]` and colours to `[0, 1]`.
pub fn unpack(v: &ParamVector, template: &SketchModel) -> Result<SketchModel> {
    let layout = Layout::of(template);
    if v.values.len() != layout.len {
        return Err(Error::validation(format!(
            "parameter vector has {} values, model expects {}",
            v.values.len(),
            layout.len
        )));
    }
    if v.layout != layout {
        return Err(Error::validation("parameter layout does not match the model"));
    }
    let mut model = template.clone();
    for (p, e) in model.primitives.iter_mut().zip(&layout.entries) {
        for (k, &x) in v.values[e.geo.clone()].iter().enumerate() {
            p.points[k / 2][k % 2] = x.clamp(COORD_MIN, COORD_MAX);
        }
        for (c, &x) in p.colour.iter_mut().zip(&v.values[e.col.clone()]) {
            *c = x.clamp(0.0, 1.0);
        }
    }
    Ok(model)
}
