use std::fs;
use std::path::{Path, PathBuf};

use sketchforge_core::canvas::{load_image, resize_bilinear};
use sketchforge_core::export::{
    model_to_svg, model_to_toolpath, order_strokes, toolpath_to_gcode, BedMap, GcodeParams, OrderAlgorithm,
};
use sketchforge_core::optimizer::{init_model, optimise, raster_config};
use sketchforge_core::rasterizer::render;
use sketchforge_core::{Error, RasterConfig, Result, SketchModel, TargetImage};

use crate::args::{FitArgs, PlotArgs, RenderArgs};
use crate::manifest::RunManifest;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source: e,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Prefixes format and validation messages with the offending file.
fn in_file(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        e => e,
    }
}

fn svg_for(model: &SketchModel, bed: (f64, f64), margin: f64) -> Result<String> {
    let map = BedMap::new(model.canvas.w, model.canvas.h, bed.0, bed.1, margin)?;
    let (w, h) = map.size_mm();
    Ok(model_to_svg(model, w, h))
}

pub fn load_target(m: &RunManifest) -> Result<TargetImage> {
    let mut t = load_image(&m.image, m.colour).map_err(in_file(&m.image))?;
    let [w, h] = m.resolution;
    t.canvas = resize_bilinear(&t.canvas, w, h)?;
    Ok(t)
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let manifest = match &args.manifest {
        Some(p) => RunManifest::load(p)?,
        None => RunManifest::from_args(args)?,
    };
    let cfg = &manifest.optim;
    cfg.validate()?;
    let target = load_target(&manifest)?;
    let model = init_model(&target, manifest.counts, cfg)?;
    let objective = manifest.objective(&target.canvas, cfg.exec())?;

    let out = &args.out_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let snaps = (cfg.snapshot_every > 0).then(|| out.join("snapshots"));
    let report = optimise(&target, &model, &objective, cfg, snaps.as_deref())?;

    let fin = &report.final_model;
    let rc = raster_config(cfg, fin.channels(), cfg.sigma_end_px);
    let bed = (manifest.bed.bed_w_mm, manifest.bed.bed_h_mm);
    fin.save(out.join("model.json"))?;
    render(fin, &rc)?.save_ppm(out.join("render.ppm"))?;
    write(&out.join("render.svg"), svg_for(fin, bed, manifest.bed.margin_mm)?)?;
    write(&out.join("loss.csv"), report.loss_csv())?;
    manifest.save(&out.join("manifest.json"))?;

    println!(
        "fitted {} primitives to {} in {} iterations ({:.2} s)",
        fin.primitives.len(),
        manifest.image.display(),
        cfg.iterations,
        report.wall_time.as_secs_f64()
    );
    println!("loss {:.6} -> {:.6}", report.initial_loss(), report.final_loss());
    println!("wrote {}", out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<SketchModel> {
    SketchModel::load(path).map_err(in_file(path))
}

pub fn plot(args: &PlotArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let g = &args.gcode;
    let params = GcodeParams {
        feed_draw_mm_min: g.feed_draw,
        feed_travel_mm_min: g.feed_travel,
        pen_up_z: g.pen_up_z,
        pen_down_z: g.pen_down_z,
    };
    params.validate()?;
    let (bw, bh) = args.bed.bed;
    let tp = model_to_toolpath(&model, bw, bh, args.bed.margin, g.flatten_tol)?;
    let algo: OrderAlgorithm = g.order.into();
    let ordered = order_strokes(&tp, algo);
    let prog = toolpath_to_gcode(&ordered, &params)?;
    let out = args.out.clone().unwrap_or_else(|| args.model.with_extension("gcode"));
    prog.save(&out)?;

    println!("strokes: {}", ordered.strokes.len());
    println!("pen-up travel before ordering: {:.3} mm", tp.pen_up_travel());
    println!("pen-up travel after {algo}: {:.3} mm", ordered.pen_up_travel());
    println!("pen-down distance: {:.3} mm", prog.stats.pen_down_mm);
    if let Some(t) = prog.stats.estimated_minutes {
        println!("estimated time: {t:.1} min");
    }
    println!("wrote {} ({} commands)", out.display(), prog.stats.command_count);
    Ok(())
}

fn default_render_path(model: &Path) -> PathBuf {
    model.with_extension("render.ppm")
}

pub fn render_cmd(args: &RenderArgs) -> Result<()> {
    let mut model = load_model(&args.model)?;
    if model.primitives.is_empty() {
        return Err(Error::Validation(format!("{}: model has no primitives", args.model.display())));
    }
    let stored_sigma = model.primitives[0].sigma;
    let (w, h) = args.resolution.unwrap_or((model.canvas.w, model.canvas.h));
    let sigma = args
        .sigma
        .unwrap_or(stored_sigma * w as f64 / model.canvas.w as f64);
    model.canvas.w = w;
    model.canvas.h = h;
    model.set_sigma(sigma);
    let compose = args.compose.map(Into::into).unwrap_or(if model.channels() == 1 {
        sketchforge_core::Compose::DarkenMin
    } else {
        sketchforge_core::Compose::SoftOver
    });
    let rc = RasterConfig::new(sigma, compose);
    let img = render(&model, &rc)?;
    let out = args.out.clone().unwrap_or_else(|| default_render_path(&args.model));
    img.save_ppm(&out)?;
    let svg_path = out.with_extension("svg");
    write(&svg_path, svg_for(&model, args.bed.bed, args.bed.margin)?)?;
    println!("wrote {} and {}", out.display(), svg_path.display());
    Ok(())
}
