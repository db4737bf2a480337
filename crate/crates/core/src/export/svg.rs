//! SVG preview of a model, one element per primitive.

use std::fmt::Write;

use crate::primitives::{Primitive, PrimitiveKind, SketchModel};

fn colour(c: &[f64]) -> String {
    let byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    match c {
        [g] => format!("#{0:02x}{0:02x}{0:02x}", byte(*g)),
        [r, g, b] => format!("#{:02x}{:02x}{:02x}", byte(*r), byte(*g), byte(*b)),
        _ => "#000000".to_owned(),
    }
}

fn f(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_owned()
    } else {
        s
    }
}

fn path_data(p: &Primitive, sx: f64, sy: f64) -> String {
    let pt = |q: [f64; 2]| format!("{} {}", f(q[0] * sx), f(q[1] * sy));
    let mut d = String::new();
    match p.kind {
        PrimitiveKind::Segment | PrimitiveKind::Polyline => {
            let _ = write!(d, "M {}", pt(p.points[0]));
            for q in &p.points[1..] {
                let _ = write!(d, " L {}", pt(*q));
            }
        }
        PrimitiveKind::CatmullRom => {
            // each interior span as the equivalent cubic Bezier
            let c = &p.points;
            let _ = write!(d, "M {}", pt(c[1]));
            for i in 0..c.len() - 3 {
                let b1 = [c[i + 1][0] + (c[i + 2][0] - c[i][0]) / 6.0, c[i + 1][1] + (c[i + 2][1] - c[i][1]) / 6.0];
                let b2 = [
                    c[i + 2][0] - (c[i + 3][0] - c[i + 1][0]) / 6.0,
                    c[i + 2][1] - (c[i + 3][1] - c[i + 1][1]) / 6.0,
                ];
                let _ = write!(d, " C {} {} {}", pt(b1), pt(b2), pt(c[i + 2]));
            }
        }
        PrimitiveKind::Point => unreachable!(),
    }
    d
}

/// Renders the model as SVG 1.1 with a millimetre viewBox. Stroke widths are
/// twice the primitive sigma, point radii equal sigma, both scaled from pixels.
pub fn model_to_svg(model: &SketchModel, width_mm: f64, height_mm: f64) -> String {
    let (sx, sy) = (width_mm, height_mm);
    let px_to_mm = 0.5 * (width_mm / model.canvas.w.max(1) as f64 + height_mm / model.canvas.h.max(1) as f64);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}mm" height="{h}mm" viewBox="0 0 {w} {h}">"#,
        w = f(width_mm),
        h = f(height_mm)
    );
    for p in &model.primitives {
        let col = colour(&p.colour);
        match p.kind {
            PrimitiveKind::Point => {
                let _ = writeln!(
                    s,
                    r#"  <circle cx="{}" cy="{}" r="{}" fill="{col}"/>"#,
                    f(p.points[0][0] * sx),
                    f(p.points[0][1] * sy),
                    f(p.sigma * px_to_mm)
                );
            }
            _ => {
                let _ = writeln!(
                    s,
                    r#"  <path d="{}" fill="none" stroke="{col}" stroke-width="{}" stroke-linecap="round" stroke-linejoin="round"/>"#,
                    path_data(p, sx, sy),
                    f(2.0 * p.sigma * px_to_mm)
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::catmull_rom_point;
    use crate::primitives::Vec2;

    fn model() -> SketchModel {
        SketchModel::new(
            100,
            50,
            3,
            vec![
                Primitive::segment([0.1, 0.2], [0.9, 0.8], vec![1.0, 0.0, 0.5], 2.0),
                Primitive::point([0.5, 0.5], vec![0.0, 0.0, 0.0], 1.5),
                Primitive::new(
                    PrimitiveKind::CatmullRom,
                    vec![[0.0, 0.0], [0.2, 0.5], [0.6, 0.4], [1.0, 1.0], [1.1, 0.2]],
                    vec![0.2, 0.4, 0.6],
                    1.0,
                ),
            ],
        )
    }

    #[test]
    fn well_formed_with_one_element_per_primitive() {
        let svg = model_to_svg(&model(), 200.0, 100.0);
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let root = doc.root_element();
        assert_eq!(root.attribute("viewBox"), Some("0 0 200.000 100.000"));
        assert_eq!(root.attribute("width"), Some("200.000mm"));
        let drawn: Vec<_> = root.children().filter(|n| n.is_element()).collect();
        assert_eq!(drawn.len(), 3);
        assert_eq!(drawn[0].tag_name().name(), "path");
        assert_eq!(drawn[0].attribute("d"), Some("M 20.000 20.000 L 180.000 80.000"));
        assert_eq!(drawn[0].attribute("stroke"), Some("#ff0080"));
        assert_eq!(drawn[0].attribute("stroke-width"), Some("8.000"));
        assert_eq!(drawn[1].tag_name().name(), "circle");
        assert_eq!(drawn[1].attribute("r"), Some("3.000"));
    }

    #[test]
    fn bezier_spans_pass_through_spline() {
        let m = model();
        let svg = model_to_svg(&m, 1.0, 1.0);
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let d = doc.descendants().filter(|n| n.has_tag_name("path")).nth(1).unwrap().attribute("d").unwrap().to_owned();
        let nums: Vec<f64> = d.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        // M p, then per span three points
        let ctrl: Vec<Vec2> = m.primitives[2].points.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        for span in 0..2 {
            let base = 2 + span * 6;
            let p0 = Vec2::new(nums[base - 2], nums[base - 1]);
            let b1 = Vec2::new(nums[base], nums[base + 1]);
            let b2 = Vec2::new(nums[base + 2], nums[base + 3]);
            let p3 = Vec2::new(nums[base + 4], nums[base + 5]);
            for t in [0.0, 0.25, 0.5, 0.9] {
                let u = 1.0 - t;
                let bez = p0 * (u * u * u) + b1 * (3.0 * u * u * t) + b2 * (3.0 * u * t * t) + p3 * (t * t * t);
                let cr = catmull_rom_point(&ctrl, span, t);
                assert!(bez.dist(cr) < 2e-3, "span {span} t {t}");
            }
        }
    }

    #[test]
    fn grayscale_colour_and_empty_model() {
        let m = SketchModel::new(10, 10, 1, vec![Primitive::segment([0.0, 0.0], [1.0, 1.0], vec![0.5], 1.0)]);
        assert!(model_to_svg(&m, 10.0, 10.0).contains("stroke=\"#808080\""));
        let empty = SketchModel::new(10, 10, 1, vec![]);
        let doc_text = model_to_svg(&empty, 10.0, 10.0);
        let doc = roxmltree::Document::parse(&doc_text).unwrap();
        assert_eq!(doc.root_element().children().filter(|n| n.is_element()).count(), 0);
    }
}
