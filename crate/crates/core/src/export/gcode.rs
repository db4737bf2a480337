//! G-code emission and a small simulator for the emitted subset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{dist, Stroke, Toolpath};
use crate::error::{Error, Result};

/// Feed rate for the pen plunge, mm/min.
pub const PLUNGE_FEED: f64 = 500.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcodeParams {
    pub feed_draw_mm_min: f64,
    pub feed_travel_mm_min: f64,
    pub pen_up_z: f64,
    pub pen_down_z: f64,
}

impl Default for GcodeParams {
    fn default() -> Self {
        Self {
            feed_draw_mm_min: 1500.0,
            feed_travel_mm_min: 3000.0,
            pen_up_z: 5.0,
            pen_down_z: 0.0,
        }
    }
}

impl GcodeParams {
    pub fn validate(&self) -> Result<()> {
        let feeds_ok = [self.feed_draw_mm_min, self.feed_travel_mm_min]
            .iter()
            .all(|f| f.is_finite() && *f > 0.0);
        if !feeds_ok {
            return Err(Error::validation("feed rates must be positive"));
        }
        if !(self.pen_up_z.is_finite() && self.pen_down_z.is_finite() && self.pen_up_z > self.pen_down_z) {
            return Err(Error::validation(format!(
                "pen-up z ({}) must be above pen-down z ({})",
                self.pen_up_z, self.pen_down_z
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GcodeStats {
    pub pen_down_mm: f64,
    /// Includes the final return to the origin.
    pub pen_up_mm: f64,
    pub command_count: usize,
    /// Drawing plus travel time at the programmed feeds; absent for parsed programs.
    pub estimated_minutes: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcodeProgram {
    pub lines: Vec<String>,
    pub stats: GcodeStats,
    pub bed_w_mm: f64,
    pub bed_h_mm: f64,
    pub margin_mm: f64,
}

impl GcodeProgram {
    pub fn to_text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Parses program text, recomputing move statistics.
    pub fn from_text(text: &str, bed_w_mm: f64, bed_h_mm: f64, margin_mm: f64) -> Result<Self> {
        let lines: Vec<String> = text.lines().map(str::to_owned).collect();
        let (_, stats) = replay(&lines)?;
        Ok(Self {
            lines,
            stats,
            bed_w_mm,
            bed_h_mm,
            margin_mm,
        })
    }
}

fn fmt3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_owned()
    } else {
        s
    }
}

/// Emits the program: preamble, one plunge/draw/lift block per stroke, postamble.
pub fn toolpath_to_gcode(tp: &Toolpath, params: &GcodeParams) -> Result<GcodeProgram> {
    params.validate()?;
    let up = fmt3(params.pen_up_z);
    let xy = |p: [f64; 2]| -> Result<String> {
        let (x, y) = (fmt3(p[0]), fmt3(p[1]));
        let (xv, yv): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
        if !(0.0..=tp.bed_w_mm).contains(&xv) || !(0.0..=tp.bed_h_mm).contains(&yv) {
            return Err(Error::validation(format!(
                "coordinate X{x} Y{y} lies outside the {}x{} mm bed",
                tp.bed_w_mm, tp.bed_h_mm
            )));
        }
        Ok(format!("X{x} Y{y}"))
    };
    let mut lines = vec!["G21".to_owned(), "G90".to_owned(), format!("G0 Z{up}")];
    let plunge = format!("G1 Z{} F{}", fmt3(params.pen_down_z), fmt3(PLUNGE_FEED));
    let feed = fmt3(params.feed_draw_mm_min);
    for s in &tp.strokes {
        let pts = s.drawn();
        let Some(first) = pts.first() else {
            return Err(Error::validation("toolpath contains an empty stroke"));
        };
        lines.push(format!("G0 {}", xy(*first)?));
        lines.push(plunge.clone());
        for p in &pts[1..] {
            lines.push(format!("G1 {} F{feed}", xy(*p)?));
        }
        lines.push(format!("G0 Z{up}"));
    }
    lines.push(format!("G0 Z{up}"));
    lines.push("G0 X0.000 Y0.000".to_owned());
    let (_, mut stats) = replay(&lines)?;
    stats.estimated_minutes =
        Some(stats.pen_down_mm / params.feed_draw_mm_min + stats.pen_up_mm / params.feed_travel_mm_min);
    Ok(GcodeProgram {
        lines,
        stats,
        bed_w_mm: tp.bed_w_mm,
        bed_h_mm: tp.bed_h_mm,
        margin_mm: tp.margin_mm,
    })
}

#[derive(Default)]
struct Words {
    x: Option<f64>,
    y: Option<f64>,
    z: Option<f64>,
}

fn parse_words(tokens: &[&str], line: usize) -> Result<Words> {
    let mut w = Words::default();
    for tok in tokens {
        let mut chars = tok.chars();
        let letter = chars.next().unwrap();
        let value: f64 = chars
            .as_str()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::Parse {
                line,
                message: format!("malformed token '{tok}'"),
            })?;
        match letter {
            'X' => w.x = Some(value),
            'Y' => w.y = Some(value),
            'Z' => w.z = Some(value),
            'F' => {}
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("unsupported word '{tok}'"),
                })
            }
        }
    }
    Ok(w)
}

/// Replays the program. The pen counts as down whenever Z is below the first
/// Z height the program sets.
fn replay(lines: &[String]) -> Result<(Vec<Vec<[f64; 2]>>, GcodeStats)> {
    let mut pos = [0.0, 0.0];
    let mut up_z: Option<f64> = None;
    let mut down = false;
    let mut strokes: Vec<Vec<[f64; 2]>> = Vec::new();
    let mut stats = GcodeStats::default();
    for (i, raw) in lines.iter().enumerate() {
        let line = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        let Some((&cmd, rest)) = tokens.split_first() else {
            continue;
        };
        stats.command_count += 1;
        match cmd {
            "G21" | "G90" if rest.is_empty() => continue,
            "G0" | "G1" => {}
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown command '{}'", raw.trim()),
                })
            }
        }
        let w = parse_words(rest, line)?;
        if let Some(z) = w.z {
            let ref_z = *up_z.get_or_insert(z);
            let now_down = z < ref_z;
            if now_down && !down {
                strokes.push(vec![pos]);
            }
            down = now_down;
        }
        if w.x.is_some() || w.y.is_some() {
            let next = [w.x.unwrap_or(pos[0]), w.y.unwrap_or(pos[1])];
            let d = dist(pos, next);
            pos = next;
            if down {
                stats.pen_down_mm += d;
                strokes.last_mut().unwrap().push(pos);
            } else {
                stats.pen_up_mm += d;
            }
        }
    }
    Ok((strokes, stats))
}

/// Replays a program into the pen-down polylines it draws.
pub fn simulate_gcode(prog: &GcodeProgram) -> Result<Toolpath> {
    let (strokes, _) = replay(&prog.lines)?;
    Ok(Toolpath {
        strokes: strokes.into_iter().map(Stroke::new).collect(),
        bed_w_mm: prog.bed_w_mm,
        bed_h_mm: prog.bed_h_mm,
        margin_mm: prog.margin_mm,
    })
}
