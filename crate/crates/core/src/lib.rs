//! Image-to-plotter stroke optimisation.
//!
//! A [`SketchModel`] holds a fixed budget of stroke primitives. The
//! [`rasterizer`] renders it softly so that image-space losses from
//! [`losses`] can be back-propagated to the primitive parameters, the
//! [`optimizer`] runs Adam over those parameters, and [`export`] turns the
//! result into SVG and pen-plotter G-code.

pub mod canvas;
pub mod encoder;
pub mod error;
pub mod export;
pub mod losses;
pub mod optimizer;
pub mod par;
pub mod primitives;
pub mod rasterizer;
pub mod rng;

pub use canvas::{Canvas, CanvasGrad, ColourMode, TargetImage};
pub use error::{Error, Result};
pub use par::Exec;
pub use primitives::{ParamVector, Primitive, PrimitiveKind, SketchModel};
pub use rasterizer::{Compose, RasterConfig};
