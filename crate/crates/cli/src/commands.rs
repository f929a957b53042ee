use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use hybrid_render::assets::{
    load_hdr, load_texture, parse_scene, sg_light_section, write_image, write_mask_pfm, write_scene, Image,
    ImageFormat, Lighting, Mask, Scene,
};
use hybrid_render::diffgrad::{finite_diff_check, LinearLoss};
use hybrid_render::invopt::{loss_image_l1, loss_iou, metric_ncc_images, optimize as run_task, parse_task};
use hybrid_render::mathkit::{Rgb, RngStream};
use hybrid_render::raster::rasterize;
use hybrid_render::sgalg::{fit_env_sg_report, sg_env_to_equirect, PARAMS_PER_LOBE};
use hybrid_render::shade::render as render_scene;

use crate::table::{num, print_config, Report};
use crate::{CheckGradArgs, CompareArgs, FitEnvArgs, GbufferArgs, Metric, OptimizeArgs, RenderArgs};

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

fn load_scene(path: &Path) -> Result<Scene> {
    Ok(parse_scene(path)?)
}

fn lighting_desc(scene: &Scene) -> String {
    match &scene.lighting {
        Lighting::Env(e) => format!("environment map {}×{}", e.width, e.height),
        Lighting::Sg(l) => format!("{} lobes", l.len()),
    }
}

pub fn render(a: &RenderArgs, threads: usize) -> Result<ExitCode> {
    let mut scene = load_scene(&a.scene)?;
    if let Some(b) = a.backend {
        scene.render.backend = b;
    }
    if let Some(n) = a.samples {
        scene.render.samples = n;
    }
    if let Some(s) = a.seed {
        scene.render.seed = s;
    }
    let (png, pfm) = (with_ext(&a.out, "png"), with_ext(&a.out, "pfm"));
    print_config(
        "render",
        &[
            ("scene", a.scene.display().to_string()),
            ("backend", scene.render.backend.to_string()),
            ("samples", scene.render.samples.to_string()),
            ("seed", scene.render.seed.to_string()),
            ("resolution", format!("{}×{}", scene.camera.width, scene.camera.height)),
            ("lighting", lighting_desc(&scene)),
            ("threads", threads.to_string()),
            ("out", format!("{}, {}", png.display(), pfm.display())),
        ],
    );
    let t0 = Instant::now();
    let out = render_scene(&scene, scene.render.backend)?;
    let elapsed = t0.elapsed();
    ensure_parent(&a.out)?;
    write_image(&out.image, &png, ImageFormat::Png)?;
    write_image(&out.image, &pfm, ImageFormat::Pfm)?;

    let shaded: Vec<u32> = out.samples.data.iter().copied().filter(|&n| n > 0).collect();
    let mut r = Report::new(&["stat", "value"]);
    r.row(vec!["render_seconds".into(), format!("{:.3}", elapsed.as_secs_f64())]);
    r.row(vec!["covered_pixels".into(), out.mask.data.iter().filter(|&&v| v >= 1.0).count().to_string()]);
    r.row(vec!["sampled_pixels".into(), shaded.len().to_string()]);
    r.row(vec!["samples_total".into(), shaded.iter().map(|&n| n as u64).sum::<u64>().to_string()]);
    r.row(vec!["samples_min".into(), shaded.iter().min().copied().unwrap_or(0).to_string()]);
    r.row(vec!["samples_max".into(), shaded.iter().max().copied().unwrap_or(0).to_string()]);
    r.print();
    Ok(ExitCode::SUCCESS)
}

pub fn fit_env(a: &FitEnvArgs, threads: usize) -> Result<ExitCode> {
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        bail!("--lr must be positive, got {}", a.lr);
    }
    let env = load_hdr(&a.hdr)?;
    let k = a.k;
    let (sg, pfm, csv) = (with_ext(&a.out, "sg"), with_ext(&a.out, "pfm"), with_ext(&a.out, "trace.csv"));
    print_config(
        "fit-env",
        &[
            ("map", format!("{} ({}×{})", a.hdr.display(), env.width, env.height)),
            ("lobes", k.to_string()),
            ("iterations", a.iters.to_string()),
            ("lr", a.lr.to_string()),
            ("threads", threads.to_string()),
            ("out", format!("{}, {}, {}", sg.display(), pfm.display(), csv.display())),
        ],
    );
    let report = fit_env_sg_report(&env, k, a.iters, a.lr);
    ensure_parent(&a.out)?;
    fs::write(&sg, sg_light_section(&report.light)).with_context(|| format!("cannot write {}", sg.display()))?;
    write_image(&sg_env_to_equirect(&report.light, env.width, env.height), &pfm, ImageFormat::Pfm)?;
    let mut trace = String::from("iteration,loss\n");
    for (i, l) in report.trace.iter().enumerate() {
        trace += &format!("{i},{l:.9e}\n");
    }
    fs::write(&csv, trace).with_context(|| format!("cannot write {}", csv.display()))?;

    let lobe_params = k * PARAMS_PER_LOBE;
    let map_params = 3 * env.width * env.height;
    let mut r = Report::new(&["quantity", "value"]);
    r.row(vec!["initial_loss".into(), num(report.initial_loss)]);
    r.row(vec!["final_loss".into(), num(report.final_loss)]);
    r.row(vec!["relative_l2".into(), num(report.relative_l2())]);
    r.row(vec!["lobe_parameters".into(), lobe_params.to_string()]);
    r.row(vec!["map_parameters".into(), map_params.to_string()]);
    r.row(vec!["parameter_ratio".into(), format!("{:.4}", lobe_params as f64 / map_params as f64)]);
    r.print();
    Ok(ExitCode::SUCCESS)
}

pub fn optimize(a: &OptimizeArgs, threads: usize) -> Result<ExitCode> {
    let tf = parse_task(&a.task)?;
    let t = &tf.task;
    let c = &t.config;
    let w = c.weights;
    print_config(
        "optimize",
        &[
            ("task", a.task.display().to_string()),
            ("scene", tf.scene_path.display().to_string()),
            ("backend", t.backend.to_string()),
            ("views", t.targets.len().to_string()),
            ("free", t.free.join(" ")),
            ("steps", c.steps.to_string()),
            ("lr_shape", c.lr_shape.to_string()),
            ("lr_material", c.lr_material.to_string()),
            ("lr_lighting", c.lr_lighting.to_string()),
            ("pixel_fraction", c.pixel_fraction.map_or("all".into(), |f| f.to_string())),
            ("weights", format!("image {} mask {} perceptual 0 (no model) laplacian {}", w.image, w.mask, w.laplacian)),
            ("seed", c.seed.to_string()),
            ("threads", threads.to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    let result = run_task(t, &tf.scene, None)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    write_scene(&result.scene, &a.out.join("fitted.scene"))?;
    fs::write(a.out.join("trace.csv"), result.trace_csv())
        .with_context(|| format!("cannot write {}", a.out.join("trace.csv").display()))?;
    for (i, (target, (before, after))) in t.targets.iter().zip(result.before.iter().zip(&result.after)).enumerate() {
        write_image(&target.image, &a.out.join(format!("view{i}_target.png")), ImageFormat::Png)?;
        write_image(before, &a.out.join(format!("view{i}_before.png")), ImageFormat::Png)?;
        write_image(after, &a.out.join(format!("view{i}_after.png")), ImageFormat::Png)?;
    }

    let first = result.trace[0].terms.total;
    let last = result.trace.last().expect("trace is never empty").terms.total;
    let best = result.best();
    let mut r = Report::new(&["quantity", "initial", "final"]);
    r.row(vec!["loss".into(), num(first), num(last)]);
    let (b0, b1) = (&tf.scene.brdf, &result.scene.brdf);
    r.row(vec!["specular".into(), num(b0.specular), num(b1.specular)]);
    r.row(vec!["roughness".into(), num(b0.roughness), num(b1.roughness)]);
    r.row(vec!["metalness".into(), num(b0.metalness), num(b1.metalness)]);
    r.print();
    println!("\nbest loss {} at step {}", num(best.terms.total), best.step);
    Ok(ExitCode::SUCCESS)
}

fn load_any(path: &Path) -> Result<Image> {
    Ok(load_texture(path)?)
}

fn as_mask(img: &Image) -> Option<Mask> {
    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
    img.data.iter().all(|c| in_unit(c.r) && in_unit(c.g) && in_unit(c.b)).then(|| img.map(|c| (c.r + c.g + c.b) / 3.0))
}

pub fn compare(a: &CompareArgs) -> Result<ExitCode> {
    print_config(
        "compare",
        &[
            ("a", a.a.display().to_string()),
            ("b", a.b.display().to_string()),
            ("metric", format!("{:?}", a.metric).to_lowercase()),
        ],
    );
    let (x, y) = (load_any(&a.a)?, load_any(&a.b)?);
    if !x.same_shape(&y) {
        bail!("images differ in size: {}×{} vs {}×{}", x.width, x.height, y.width, y.height);
    }
    let want = |m: Metric| a.metric == Metric::All || a.metric == m;
    let mut r = Report::new(&["metric", "value"]);
    if want(Metric::L1) {
        r.row(vec!["l1".into(), num(loss_image_l1(&x, &y, None)?)]);
    }
    if want(Metric::Iou) {
        match (as_mask(&x), as_mask(&y)) {
            (Some(mx), Some(my)) => r.row(vec!["iou_loss".into(), num(loss_iou(&mx, &my)?)]),
            _ if a.metric == Metric::Iou => bail!("IoU needs masks with values in [0, 1]"),
            _ => r.row(vec!["iou_loss".into(), "n/a".into()]),
        }
    }
    if want(Metric::Ncc) {
        match metric_ncc_images(&x, &y, None) {
            Ok(v) => r.row(vec!["ncc_loss".into(), num(v)]),
            Err(e) if a.metric == Metric::Ncc => return Err(e.into()),
            Err(_) => r.row(vec!["ncc_loss".into(), "n/a".into()]),
        }
    }
    r.print();
    Ok(ExitCode::SUCCESS)
}

pub fn gbuffer(a: &GbufferArgs, threads: usize) -> Result<ExitCode> {
    let scene = load_scene(&a.scene)?;
    let names = ["position", "normal", "uv", "view", "mask", "soft_mask"];
    let paths: Vec<PathBuf> = names.iter().map(|n| with_ext(&a.out, &format!("{n}.pfm"))).collect();
    print_config(
        "gbuffer",
        &[
            ("scene", a.scene.display().to_string()),
            ("resolution", format!("{}×{}", scene.camera.width, scene.camera.height)),
            ("threads", threads.to_string()),
            ("out", paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")),
        ],
    );
    scene.validate()?;
    let g = rasterize(&scene.mesh, &scene.camera);
    let grid = |data: Vec<Rgb>| Image::from_vec(g.width, g.height, data);
    let v3 = |v: &hybrid_render::mathkit::Vec3| Rgb::new(v.x, v.y, v.z);
    ensure_parent(&a.out)?;
    write_image(&grid(g.position.iter().map(v3).collect())?, &paths[0], ImageFormat::Pfm)?;
    write_image(&grid(g.normal.iter().map(v3).collect())?, &paths[1], ImageFormat::Pfm)?;
    write_image(&grid(g.uv.iter().map(|t| Rgb::new(t[0], t[1], 0.0)).collect())?, &paths[2], ImageFormat::Pfm)?;
    write_image(&grid(g.view_dir.iter().map(v3).collect())?, &paths[3], ImageFormat::Pfm)?;
    write_mask_pfm(&g.hard_mask(), &paths[4])?;
    write_mask_pfm(&g.soft_mask(), &paths[5])?;

    let mut r = Report::new(&["stat", "value"]);
    r.row(vec!["covered_pixels".into(), g.covered_count().to_string()]);
    r.row(vec!["soft_mask_sum".into(), num(g.soft_mask.iter().sum())]);
    r.print();
    Ok(ExitCode::SUCCESS)
}

/// Deterministic random weights over the image and the soft mask.
fn random_linear_loss(w: usize, h: usize, seed: u64) -> LinearLoss {
    let s = RngStream::new(seed, 0);
    let image = Image::from_vec(
        w,
        h,
        (0..w * h)
            .map(|i| {
                let k = 4 * i as u64;
                Rgb::new(s.uniform_at(k), s.uniform_at(k + 1), s.uniform_at(k + 2))
            })
            .collect(),
    )
    .expect("sizes agree");
    let mask =
        Mask::from_vec(w, h, (0..w * h).map(|i| s.uniform_at(4 * i as u64 + 3) - 0.5).collect()).expect("sizes agree");
    LinearLoss { image, mask: Some(mask) }
}

pub fn check_grad(a: &CheckGradArgs, threads: usize) -> Result<ExitCode> {
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        bail!("--eps must be positive, got {}", a.eps);
    }
    if a.tol.is_nan() || a.tol < 0.0 {
        bail!("--tol must be non-negative, got {}", a.tol);
    }
    let scene = load_scene(&a.scene)?;
    let backend = a.backend.unwrap_or(scene.render.backend);
    print_config(
        "check-grad",
        &[
            ("scene", a.scene.display().to_string()),
            ("backend", backend.to_string()),
            ("selector", a.selector.clone()),
            ("eps", a.eps.to_string()),
            ("tol", a.tol.to_string()),
            ("samples", scene.render.samples.to_string()),
            ("seed", scene.render.seed.to_string()),
            ("loss_seed", a.loss_seed.to_string()),
            ("threads", threads.to_string()),
        ],
    );
    let loss = random_linear_loss(scene.camera.width, scene.camera.height, a.loss_seed);
    let report = finite_diff_check(&scene, backend, &a.selector, a.eps, a.tol, &loss)?;
    let mut r = Report::new(&["parameter", "analytic", "numeric", "rel_error", "ok"]);
    for e in &report.entries {
        r.row(vec![
            e.name.clone(),
            num(e.analytic),
            num(e.numeric),
            num(e.rel_error),
            if e.rel_error <= a.tol { "yes" } else { "no" }.into(),
        ]);
    }
    r.print();
    if let Some(p) = &a.csv {
        ensure_parent(p)?;
        fs::write(p, r.csv()).with_context(|| format!("cannot write {}", p.display()))?;
    }
    let passed = report.passed();
    println!(
        "\n{} of {} parameters within tolerance; max relative error {}",
        report.entries.iter().filter(|e| e.rel_error <= a.tol).count(),
        report.entries.len(),
        num(report.max_rel_error())
    );
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
