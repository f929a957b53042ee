use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{
    load_hdr, load_obj, load_texture, procedural_sky, write_image, write_obj, EquirectImage, ImageFormat, Mesh,
    SkyParams,
};
use crate::brdf::BrdfParams;
use crate::error::{Error, Result};
use crate::mathkit::{Direction, Rgb, Vec3};
use crate::raster::Camera;
use crate::sgalg::{fibonacci_sphere, SgEnvLight, SgLobe};

pub const DEFAULT_SAMPLES: usize = 64;
pub const DEFAULT_SEED: u64 = 0;
/// Lobe count used when an environment map is shaded by the SG backend.
pub const DEFAULT_LOBES: usize = 32;
pub const DEFAULT_FIT_ITERS: usize = 500;
pub const DEFAULT_FIT_LR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Mc,
    Sg,
}

impl FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mc" => Ok(Backend::Mc),
            "sg" => Ok(Backend::Sg),
            other => Err(format!("unknown backend `{other}` (expected mc or sg)")),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Mc => "mc",
            Backend::Sg => "sg",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lighting {
    Env(EquirectImage),
    Sg(SgEnvLight),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    Color(Rgb),
    /// Looked up along each primary ray.
    Env(EquirectImage),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub backend: Backend,
    /// Monte Carlo samples per pixel.
    pub samples: usize,
    pub seed: u64,
    /// Lobes fitted when an environment map meets the SG backend.
    pub lobes: usize,
    pub fit_iters: usize,
    pub fit_lr: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            backend: Backend::Sg,
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
            lobes: DEFAULT_LOBES,
            fit_iters: DEFAULT_FIT_ITERS,
            fit_lr: DEFAULT_FIT_LR,
        }
    }
}

/// Everything needed to render one view.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub mesh: Mesh,
    pub camera: Camera,
    pub brdf: BrdfParams,
    pub lighting: Lighting,
    pub background: Background,
    pub render: RenderConfig,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.render.samples == 0 {
            return Err(Error::Validation("sample count must be at least 1".into()));
        }
        if self.render.lobes == 0 {
            return Err(Error::Validation("lobe count must be at least 1".into()));
        }
        let b = &self.brdf;
        for (name, v) in [("specular", b.specular), ("roughness", b.roughness), ("metalness", b.metalness)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if let Lighting::Env(env) = &self.lighting {
            if env.data.iter().any(|c| !c.is_finite() || c.r < 0.0 || c.g < 0.0 || c.b < 0.0) {
                return Err(Error::Validation("environment map has negative or non-finite texels".into()));
            }
        }
        Ok(())
    }
}

/// One `key = value` line, or one bare item of a list section.
pub(crate) struct Entry {
    pub value: String,
    pub line: usize,
}

pub(crate) struct Section {
    pub line: usize,
    pub entries: BTreeMap<String, Entry>,
    pub items: Vec<Entry>,
}

/// Line-oriented `[section]` / `key = value` reader shared by scene and
/// task files. Sections named in `lists` hold bare items instead of keys.
pub(crate) struct Parser<'a> {
    pub path: &'a Path,
    pub sections: BTreeMap<String, Section>,
}

const SECTIONS: &[&str] = &["mesh", "camera", "brdf", "envmap", "sg_light", "render", "background"];

impl<'a> Parser<'a> {
    pub fn new(text: &str, path: &'a Path, known: &[&str], lists: &[&str]) -> Result<Self> {
        let mut sections: BTreeMap<String, Section> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let err = |message: String| Error::Scene { path: path.to_path_buf(), line, message };
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header `{s}`")))?
                    .trim()
                    .to_string();
                if !known.contains(&name.as_str()) && !lists.contains(&name.as_str()) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                if sections.contains_key(&name) {
                    return Err(err(format!("section [{name}] repeated")));
                }
                sections.insert(name.clone(), Section { line, entries: BTreeMap::new(), items: Vec::new() });
                current = Some(name);
                continue;
            }
            if let Some(sec) = current.as_ref().filter(|c| lists.contains(&c.as_str())) {
                sections.get_mut(sec).unwrap().items.push(Entry { value: s.to_string(), line });
                continue;
            }
            let (key, value) = s.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{s}`")))?;
            let key = key.trim().to_string();
            let sec = current.as_ref().ok_or_else(|| err(format!("key `{key}` outside any section")))?;
            let entries = &mut sections.get_mut(sec).unwrap().entries;
            if entries.contains_key(&key) {
                return Err(err(format!("key `{key}` repeated in [{sec}]")));
            }
            entries.insert(key, Entry { value: value.trim().to_string(), line });
        }
        Ok(Parser { path, sections })
    }

    pub fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Scene { path: self.path.to_path_buf(), line, message: message.into() }
    }

    /// Rejects keys a section does not define.
    pub fn check_keys(&self, section: &str, allowed: impl Fn(&str) -> bool) -> Result<()> {
        if let Some(sec) = self.sections.get(section) {
            for (k, e) in &sec.entries {
                if !allowed(k) {
                    return Err(self.err(e.line, format!("unknown key `{k}` in [{section}]")));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section)?.entries.get(key)
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&Entry> {
        match self.sections.get(section) {
            None => Err(self.err(0, format!("missing section [{section}]"))),
            Some(sec) => sec
                .entries
                .get(key)
                .ok_or_else(|| self.err(sec.line, format!("[{section}] is missing required key `{key}`"))),
        }
    }

    pub fn value<T: FromStr>(&self, e: &Entry, what: &str) -> Result<T> {
        e.value.parse().map_err(|_| self.err(e.line, format!("cannot parse `{}` as {what}", e.value)))
    }

    pub fn real(&self, e: &Entry) -> Result<f64> {
        let v: f64 = self.value(e, "a number")?;
        if !v.is_finite() {
            return Err(self.err(e.line, format!("`{}` is not finite", e.value)));
        }
        Ok(v)
    }

    pub fn unit_real(&self, e: &Entry) -> Result<f64> {
        let v = self.real(e)?;
        if !(0.0..=1.0).contains(&v) {
            return Err(self.err(e.line, format!("{v} outside [0, 1]")));
        }
        Ok(v)
    }

    pub fn vec3(&self, e: &Entry) -> Result<Vec3> {
        let parts: Vec<&str> =
            e.value.split(|c: char| c == ',' || c.is_whitespace()).filter(|p| !p.is_empty()).collect();
        if parts.len() != 3 {
            return Err(self.err(e.line, format!("expected three numbers, got `{}`", e.value)));
        }
        let mut out = [0.0; 3];
        for (o, p) in out.iter_mut().zip(&parts) {
            *o = p
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| self.err(e.line, format!("cannot parse `{p}` as a number")))?;
        }
        Ok(Vec3::from_array(out))
    }

    pub fn color(&self, e: &Entry) -> Result<Rgb> {
        let v = self.vec3(e)?;
        if v.x < 0.0 || v.y < 0.0 || v.z < 0.0 {
            return Err(self.err(e.line, "colors must be non-negative"));
        }
        Ok(Rgb::new(v.x, v.y, v.z))
    }

    pub fn direction(&self, e: &Entry) -> Result<Direction> {
        Direction::try_new(self.vec3(e)?).ok_or_else(|| self.err(e.line, "direction has zero length"))
    }

    pub fn resolve(&self, e: &Entry) -> PathBuf {
        let p = Path::new(&e.value);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    /// Wraps an asset-loading failure with the line that referenced it.
    pub fn load<T>(&self, e: &Entry, f: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
        let p = self.resolve(e);
        f(&p).map_err(|inner| self.err(e.line, format!("cannot load `{}`: {inner}", p.display())))
    }

    pub fn exclusive<'b>(&'b self, section: &str, keys: &[&'b str]) -> Result<Option<(&'b str, &'b Entry)>> {
        let present: Vec<(&str, &Entry)> = keys.iter().filter_map(|&k| self.get(section, k).map(|e| (k, e))).collect();
        if present.len() > 1 {
            return Err(
                self.err(present[1].1.line, format!("[{section}] sets both `{}` and `{}`", present[0].0, present[1].0))
            );
        }
        Ok(present.into_iter().next())
    }

    fn mesh(&self) -> Result<Mesh> {
        self.check_keys("mesh", |k| matches!(k, "path" | "icosphere" | "radius" | "center"))?;
        match self.exclusive("mesh", &["path", "icosphere"])? {
            Some(("path", e)) => {
                for k in ["radius", "center"] {
                    if let Some(x) = self.get("mesh", k) {
                        return Err(self.err(x.line, format!("`{k}` only applies to icosphere meshes")));
                    }
                }
                self.load(e, load_obj)
            }
            Some((_, e)) => {
                let level: u32 = self.value(e, "a subdivision level")?;
                if level > 7 {
                    return Err(self.err(e.line, "icosphere subdivision level above 7"));
                }
                let radius = self.get("mesh", "radius").map(|r| self.real(r)).transpose()?.unwrap_or(1.0);
                if radius <= 0.0 {
                    return Err(self.err(self.get("mesh", "radius").unwrap().line, "radius must be positive"));
                }
                let center = self.get("mesh", "center").map(|c| self.vec3(c)).transpose()?.unwrap_or(Vec3::ZERO);
                Ok(Mesh::icosphere(level, radius, center))
            }
            None => {
                let line = self.sections.get("mesh").map_or(0, |s| s.line);
                Err(self.err(line, "[mesh] needs `path` or `icosphere`"))
            }
        }
    }

    fn camera(&self) -> Result<Camera> {
        self.check_keys("camera", |k| matches!(k, "eye" | "lookat" | "up" | "fov_deg" | "width" | "height"))?;
        let eye = self.vec3(self.require("camera", "eye")?)?;
        let lookat = self.vec3(self.require("camera", "lookat")?)?;
        let up = self.get("camera", "up").map(|e| self.vec3(e)).transpose()?.unwrap_or(Vec3::new(0.0, 1.0, 0.0));
        let fov = self.require("camera", "fov_deg")?;
        let fov_deg = self.real(fov)?;
        let width: usize = self.value(self.require("camera", "width")?, "a pixel count")?;
        let height: usize = self.value(self.require("camera", "height")?, "a pixel count")?;
        let line = self.sections["camera"].line;
        Camera::new(eye, lookat, up, fov_deg.to_radians(), width, height).map_err(|e| self.err(line, e.to_string()))
    }

    fn brdf(&self) -> Result<BrdfParams> {
        self.check_keys("brdf", |k| matches!(k, "albedo" | "texture" | "specular" | "roughness" | "metalness"))?;
        let mut p = BrdfParams::uniform(Rgb::gray(0.8), 0.5, 0.5, 0.0);
        match self.exclusive("brdf", &["albedo", "texture"])? {
            Some(("albedo", e)) => p.albedo = super::Image::filled(1, 1, self.color(e)?),
            Some((_, e)) => p.albedo = self.load(e, load_texture)?,
            None => {}
        }
        if let Some(e) = self.get("brdf", "specular") {
            p.specular = self.unit_real(e)?;
        }
        if let Some(e) = self.get("brdf", "roughness") {
            p.roughness = self.unit_real(e)?;
        }
        if let Some(e) = self.get("brdf", "metalness") {
            p.metalness = self.unit_real(e)?;
        }
        Ok(p)
    }

    fn envmap(&self) -> Result<EquirectImage> {
        self.check_keys("envmap", |k| matches!(k, "path" | "constant" | "procedural" | "width" | "height"))?;
        let size = |default: usize| -> Result<(usize, usize)> {
            let w = self.get("envmap", "width").map(|e| self.value::<usize>(e, "a pixel count")).transpose()?;
            let h = self.get("envmap", "height").map(|e| self.value::<usize>(e, "a pixel count")).transpose()?;
            let (w, h) = (w.unwrap_or(default), h.unwrap_or(default / 2));
            if w == 0 || h == 0 {
                return Err(self.err(self.sections["envmap"].line, "environment size must be at least 1×1"));
            }
            Ok((w, h))
        };
        match self.exclusive("envmap", &["path", "constant", "procedural"])? {
            Some(("path", e)) => {
                for k in ["width", "height"] {
                    if let Some(x) = self.get("envmap", k) {
                        return Err(self.err(x.line, format!("`{k}` does not apply to loaded maps")));
                    }
                }
                self.load(e, load_hdr)
            }
            Some(("constant", e)) => {
                let c = self.color(e)?;
                let (w, h) = size(8)?;
                Ok(EquirectImage::filled(w, h, c))
            }
            Some((_, e)) => {
                if e.value != "sky" {
                    return Err(self.err(e.line, format!("unknown procedural environment `{}`", e.value)));
                }
                let (w, h) = size(256)?;
                Ok(procedural_sky(w, h, &SkyParams::default()))
            }
            None => Err(self.err(self.sections["envmap"].line, "[envmap] needs `path`, `constant` or `procedural`")),
        }
    }

    fn sg_light(&self) -> Result<SgEnvLight> {
        let sec = &self.sections["sg_light"];
        let count: usize = self.value(self.require("sg_light", "count")?, "a lobe count")?;
        let mut lobe_keys: BTreeMap<(usize, String), &Entry> = BTreeMap::new();
        for (k, e) in &sec.entries {
            match k.as_str() {
                "count" | "init" | "sharpness" | "amplitude" => {}
                _ => {
                    let parts: Vec<&str> = k.split('.').collect();
                    let ok = parts.len() == 3
                        && parts[0] == "lobe"
                        && matches!(parts[2], "axis" | "sharpness" | "amplitude");
                    let idx = parts.get(1).and_then(|s| s.parse::<usize>().ok());
                    match (ok, idx) {
                        (true, Some(i)) if i < count => {
                            lobe_keys.insert((i, parts[2].to_string()), e);
                        }
                        (true, Some(i)) => return Err(self.err(e.line, format!("lobe {i} beyond count {count}"))),
                        _ => return Err(self.err(e.line, format!("unknown key `{k}` in [sg_light]"))),
                    }
                }
            }
        }
        let fib = match self.get("sg_light", "init") {
            Some(e) if e.value == "fibonacci" => true,
            Some(e) => return Err(self.err(e.line, format!("unknown init `{}` (expected fibonacci)", e.value))),
            None => false,
        };
        for k in ["sharpness", "amplitude"] {
            if let (Some(e), false) = (self.get("sg_light", k), fib) {
                return Err(self.err(e.line, format!("default `{k}` requires init = fibonacci")));
            }
        }
        let default_sharpness = self.get("sg_light", "sharpness").map(|e| self.real(e)).transpose()?.unwrap_or(4.0);
        let default_amplitude =
            self.get("sg_light", "amplitude").map(|e| self.color(e)).transpose()?.unwrap_or(Rgb::gray(1.0));
        let axes = fibonacci_sphere(count);
        let mut lobes = Vec::with_capacity(count);
        for (i, &fib_axis) in axes.iter().enumerate() {
            let field = |name: &str| -> Result<Option<&Entry>> {
                match lobe_keys.get(&(i, name.to_string())) {
                    Some(e) => Ok(Some(*e)),
                    None if fib => Ok(None),
                    None => Err(self.err(sec.line, format!("[sg_light] is missing required key `lobe.{i}.{name}`"))),
                }
            };
            let axis = field("axis")?.map(|e| self.direction(e)).transpose()?.unwrap_or(fib_axis);
            let sharpness = field("sharpness")?.map(|e| self.real(e)).transpose()?.unwrap_or(default_sharpness);
            if sharpness < 0.0 {
                return Err(self.err(sec.line, format!("lobe {i} has negative sharpness")));
            }
            let amplitude = field("amplitude")?.map(|e| self.color(e)).transpose()?.unwrap_or(default_amplitude);
            lobes.push(SgLobe::new(axis, sharpness, amplitude));
        }
        Ok(SgEnvLight::new(lobes))
    }

    fn render(&self) -> Result<RenderConfig> {
        self.check_keys("render", |k| matches!(k, "backend" | "samples" | "seed" | "lobes" | "fit_iters" | "fit_lr"))?;
        let mut r = RenderConfig::default();
        if let Some(e) = self.get("render", "backend") {
            r.backend = e.value.parse().map_err(|m: String| self.err(e.line, m))?;
        }
        if let Some(e) = self.get("render", "samples") {
            r.samples = self.value(e, "a sample count")?;
            if r.samples == 0 {
                return Err(self.err(e.line, "samples must be at least 1"));
            }
        }
        if let Some(e) = self.get("render", "seed") {
            r.seed = self.value(e, "an unsigned seed")?;
        }
        if let Some(e) = self.get("render", "lobes") {
            r.lobes = self.value(e, "a lobe count")?;
            if r.lobes == 0 {
                return Err(self.err(e.line, "lobes must be at least 1"));
            }
        }
        if let Some(e) = self.get("render", "fit_iters") {
            r.fit_iters = self.value(e, "an iteration count")?;
        }
        if let Some(e) = self.get("render", "fit_lr") {
            r.fit_lr = self.real(e)?;
        }
        Ok(r)
    }

    fn background(&self) -> Result<Background> {
        self.check_keys("background", |k| matches!(k, "color" | "path"))?;
        Ok(match self.exclusive("background", &["color", "path"])? {
            Some(("color", e)) => Background::Color(self.color(e)?),
            Some((_, e)) => Background::Env(self.load(e, load_hdr)?),
            None => Background::Color(Rgb::BLACK),
        })
    }

    fn scene(&self) -> Result<Scene> {
        let mesh = self.mesh()?;
        let camera = self.camera()?;
        let brdf = self.brdf()?;
        let lighting = match (self.sections.get("envmap"), self.sections.get("sg_light")) {
            (Some(_), Some(sg)) => {
                return Err(self.err(sg.line, "conflicting lighting: both [envmap] and [sg_light] are present"))
            }
            (Some(_), None) => Lighting::Env(self.envmap()?),
            (None, Some(_)) => Lighting::Sg(self.sg_light()?),
            (None, None) => return Err(self.err(0, "missing lighting: add an [envmap] or [sg_light] section")),
        };
        let background = self.background()?;
        let render = self.render()?;
        Ok(Scene { mesh, camera, brdf, lighting, background, render })
    }
}

/// Parses a scene description. Relative asset paths are resolved against
/// the directory holding `path`.
pub fn parse_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), cause: e })?;
    parse_scene_str(&text, path)
}

/// Parses scene text as if it had been read from `path`.
pub fn parse_scene_str(text: &str, path: &Path) -> Result<Scene> {
    Parser::new(text, path, SECTIONS, &[])?.scene()
}

fn fmt_vec(v: Vec3) -> String {
    format!("{:?}, {:?}, {:?}", v.x, v.y, v.z)
}

fn fmt_rgb(c: Rgb) -> String {
    format!("{:?}, {:?}, {:?}", c.r, c.g, c.b)
}

/// An `[sg_light]` section listing every lobe explicitly.
pub fn sg_light_section(light: &SgEnvLight) -> String {
    let mut s = format!("[sg_light]\ncount = {}\n", light.len());
    for (i, l) in light.lobes.iter().enumerate() {
        let _ = writeln!(s, "lobe.{i}.axis = {}", fmt_vec(*l.axis));
        let _ = writeln!(s, "lobe.{i}.sharpness = {:?}", l.sharpness);
        let _ = writeln!(s, "lobe.{i}.amplitude = {}", fmt_rgb(l.amplitude));
    }
    s
}

/// Writes `scene` to `path`. Mesh, texture and map data go into sibling
/// files named after the scene file's stem.
pub fn write_scene(scene: &Scene, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
    let side = |suffix: &str| (format!("{stem}.{suffix}"), dir.join(format!("{stem}.{suffix}")));
    let mut s = String::new();

    let (name, p) = side("mesh.obj");
    write_obj(&scene.mesh, &p)?;
    let _ = writeln!(s, "[mesh]\npath = {name}\n");

    let c = &scene.camera;
    let _ = writeln!(
        s,
        "[camera]\neye = {}\nlookat = {}\nup = {}\nfov_deg = {:?}\nwidth = {}\nheight = {}\n",
        fmt_vec(c.eye),
        fmt_vec(c.lookat),
        fmt_vec(*c.up),
        c.vertical_fov.to_degrees(),
        c.width,
        c.height
    );

    let b = &scene.brdf;
    s.push_str("[brdf]\n");
    if b.albedo.len() == 1 {
        let _ = writeln!(s, "albedo = {}", fmt_rgb(b.albedo.data[0]));
    } else {
        let (name, p) = side("albedo.pfm");
        write_image(&b.albedo, &p, ImageFormat::Pfm)?;
        let _ = writeln!(s, "texture = {name}");
    }
    let _ = writeln!(s, "specular = {:?}\nroughness = {:?}\nmetalness = {:?}\n", b.specular, b.roughness, b.metalness);

    match &scene.lighting {
        Lighting::Env(env) => {
            let (name, p) = side("env.pfm");
            write_image(env, &p, ImageFormat::Pfm)?;
            let _ = writeln!(s, "[envmap]\npath = {name}\n");
        }
        Lighting::Sg(light) => {
            s.push_str(&sg_light_section(light));
            s.push('\n');
        }
    }

    match &scene.background {
        Background::Color(c) => {
            let _ = writeln!(s, "[background]\ncolor = {}\n", fmt_rgb(*c));
        }
        Background::Env(env) => {
            let (name, p) = side("background.pfm");
            write_image(env, &p, ImageFormat::Pfm)?;
            let _ = writeln!(s, "[background]\npath = {name}\n");
        }
    }

    let r = &scene.render;
    let _ = writeln!(
        s,
        "[render]\nbackend = {}\nsamples = {}\nseed = {}\nlobes = {}\nfit_iters = {}\nfit_lr = {:?}",
        r.backend, r.samples, r.seed, r.lobes, r.fit_iters, r.fit_lr
    );
    fs::write(path, s).map_err(|e| Error::Io { path: path.to_path_buf(), cause: e })
}
