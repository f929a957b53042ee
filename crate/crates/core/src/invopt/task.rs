//! Task files: a scene to start from, target views, the free parameters
//! and optimizer settings.
//!
//! ```text
//! [task]
//! scene = init.scene
//! backend = sg
//!
//! [targets]            # or [synthetic] to render targets from a known scene
//! view.0.image = v0.pfm
//! view.0.mask = v0_mask.pfm
//! view.0.eye = 0, 0.5, 3
//!
//! [free]
//! roughness
//! specular
//!
//! [opt]
//! steps = 800
//! lr_material = 0.005
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::losses::LossWeights;
use super::optimize::{OptimizeTask, OptimizerConfig, TargetView};
use crate::assets::scene::{Entry, Parser};
use crate::assets::{load_mask, load_texture, parse_scene, Backend, Scene};
use crate::error::{Error, Result};
use crate::mathkit::Vec3;
use crate::raster::Camera;

const SECTIONS: &[&str] = &["task", "targets", "synthetic", "opt"];
const LISTS: &[&str] = &["free"];

/// Orbit cameras around a ground-truth scene whose renders become targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticViews {
    pub truth: PathBuf,
    pub views: usize,
    pub distance: f64,
    pub elevation_deg: f64,
    pub fov_deg: f64,
    pub size: usize,
}

impl SyntheticViews {
    /// Evenly spaced azimuths; elevations alternate above and below the
    /// equator so the views see both hemispheres.
    pub fn cameras(&self, target: Vec3) -> Vec<Camera> {
        (0..self.views)
            .map(|i| {
                let az = 360.0 * i as f64 / self.views as f64;
                let el = if i % 2 == 0 { self.elevation_deg } else { -self.elevation_deg };
                Camera::orbit(target, self.distance, az, el, self.fov_deg, self.size)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TaskFile {
    pub path: PathBuf,
    pub scene_path: PathBuf,
    pub scene: Scene,
    pub task: OptimizeTask,
    pub synthetic: Option<SyntheticViews>,
}

pub fn parse_task(path: &Path) -> Result<TaskFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), cause: e })?;
    parse_task_str(&text, path)
}

/// Parses a task as if read from `path`; relative paths resolve against
/// its directory. Synthetic targets are rendered here.
pub fn parse_task_str(text: &str, path: &Path) -> Result<TaskFile> {
    let p = Parser::new(text, path, SECTIONS, LISTS)?;
    p.check_keys("task", |k| matches!(k, "scene" | "backend"))?;
    let scene_entry = p.require("task", "scene")?;
    let scene_path = p.resolve(scene_entry);
    let scene = p.load(scene_entry, parse_scene)?;
    let backend = match p.get("task", "backend") {
        Some(e) => e.value.parse().map_err(|m: String| p.err(e.line, m))?,
        None => scene.render.backend,
    };
    let config = opt_section(&p)?;
    let free: Vec<String> =
        p.sections.get("free").map_or(Vec::new(), |s| s.items.iter().map(|e| e.value.clone()).collect());

    let (targets, synthetic) = match (p.sections.get("targets"), p.sections.get("synthetic")) {
        (Some(_), Some(s)) => return Err(p.err(s.line, "[targets] and [synthetic] are mutually exclusive")),
        (Some(_), None) => (explicit_targets(&p, &scene)?, None),
        (None, Some(_)) => {
            let syn = synthetic_section(&p)?;
            (synthetic_targets(&p, &syn, backend)?, Some(syn))
        }
        (None, None) => return Err(p.err(0, "missing [targets] or [synthetic] section")),
    };
    let task = OptimizeTask { targets, free, backend, config };
    task.validate()?;
    Ok(TaskFile { path: path.to_path_buf(), scene_path, scene, task, synthetic })
}

fn opt_section(p: &Parser) -> Result<OptimizerConfig> {
    const KEYS: &[&str] = &[
        "steps",
        "lr",
        "lr_shape",
        "lr_material",
        "lr_lighting",
        "fraction",
        "seed",
        "w_image",
        "w_mask",
        "w_perceptual",
        "w_laplacian",
    ];
    p.check_keys("opt", |k| KEYS.contains(&k))?;
    let mut c = OptimizerConfig::default();
    let real = |k: &str| p.get("opt", k).map(|e| p.real(e)).transpose();
    if let Some(e) = p.get("opt", "steps") {
        c.steps = p.value(e, "a step count")?;
    }
    if let Some(lr) = real("lr")? {
        c.set_lr(lr);
    }
    c.lr_shape = real("lr_shape")?.unwrap_or(c.lr_shape);
    c.lr_material = real("lr_material")?.unwrap_or(c.lr_material);
    c.lr_lighting = real("lr_lighting")?.unwrap_or(c.lr_lighting);
    c.pixel_fraction = real("fraction")?;
    if let Some(e) = p.get("opt", "seed") {
        c.seed = p.value(e, "an unsigned seed")?;
    }
    let d = LossWeights::default();
    c.weights = LossWeights {
        image: real("w_image")?.unwrap_or(d.image),
        mask: real("w_mask")?.unwrap_or(d.mask),
        perceptual: real("w_perceptual")?.unwrap_or(d.perceptual),
        laplacian: real("w_laplacian")?.unwrap_or(d.laplacian),
    };
    let line = p.sections.get("opt").map_or(0, |s| s.line);
    c.weights.validate().map_err(|e| p.err(line, e.to_string()))?;
    Ok(c)
}

fn explicit_targets(p: &Parser, scene: &Scene) -> Result<Vec<TargetView>> {
    let sec = &p.sections["targets"];
    let mut views: BTreeMap<usize, BTreeMap<&str, &Entry>> = BTreeMap::new();
    for (key, e) in &sec.entries {
        let parsed = key.strip_prefix("view.").and_then(|r| r.split_once('.')).and_then(|(i, f)| {
            let i: usize = i.parse().ok()?;
            matches!(f, "image" | "mask" | "eye" | "lookat" | "up" | "fov_deg").then_some((i, f))
        });
        let (i, field) = parsed.ok_or_else(|| p.err(e.line, format!("unknown key `{key}` in [targets]")))?;
        views.entry(i).or_default().insert(field, e);
    }
    let mut out = Vec::with_capacity(views.len());
    for (i, f) in views {
        let need =
            |k: &str| f.get(k).copied().ok_or_else(|| p.err(sec.line, format!("view {i} is missing `view.{i}.{k}`")));
        let image = p.load(need("image")?, load_texture)?;
        let mask = p.load(need("mask")?, load_mask)?;
        let eye = p.vec3(need("eye")?)?;
        let lookat = f.get("lookat").map(|e| p.vec3(e)).transpose()?.unwrap_or(scene.camera.lookat);
        let up = f.get("up").map(|e| p.vec3(e)).transpose()?.unwrap_or(*scene.camera.up);
        let fov = f.get("fov_deg").map(|e| p.real(e)).transpose()?.map_or(scene.camera.vertical_fov, f64::to_radians);
        let line = f["image"].line;
        let camera =
            Camera::new(eye, lookat, up, fov, image.width, image.height).map_err(|e| p.err(line, e.to_string()))?;
        if !mask.same_shape(&image) {
            return Err(p.err(f["mask"].line, format!("view {i}: mask and image sizes differ")));
        }
        out.push(TargetView { camera, image, mask });
    }
    Ok(out)
}

fn synthetic_section(p: &Parser) -> Result<SyntheticViews> {
    p.check_keys("synthetic", |k| matches!(k, "truth" | "views" | "distance" | "elevation_deg" | "fov_deg" | "size"))?;
    let truth = p.resolve(p.require("synthetic", "truth")?);
    let real = |k: &str, d: f64| p.get("synthetic", k).map(|e| p.real(e)).transpose().map(|v| v.unwrap_or(d));
    let count = |k: &str, d: usize| -> Result<usize> {
        match p.get("synthetic", k) {
            Some(e) => {
                let v: usize = p.value(e, "a positive count")?;
                if v == 0 {
                    return Err(p.err(e.line, format!("`{k}` must be positive")));
                }
                Ok(v)
            }
            None => Ok(d),
        }
    };
    Ok(SyntheticViews {
        truth,
        views: count("views", 4)?,
        distance: real("distance", 3.0)?,
        elevation_deg: real("elevation_deg", 20.0)?,
        fov_deg: real("fov_deg", 40.0)?,
        size: count("size", 64)?,
    })
}

fn synthetic_targets(p: &Parser, syn: &SyntheticViews, backend: Backend) -> Result<Vec<TargetView>> {
    let e = p.require("synthetic", "truth")?;
    let truth = p.load(e, parse_scene)?;
    syn.cameras(truth.mesh.centroid())
        .into_iter()
        .map(|c| TargetView::render_from(&truth, c, backend).map_err(|err| p.err(e.line, err.to_string())))
        .collect()
}
