use std::ops::Range;

use crate::assets::{EquirectImage, Lighting, Scene};
use crate::brdf::ROUGHNESS_MIN;
use crate::error::{Error, Result};
use crate::mathkit::{logit, sigmoid, softplus, softplus_inv, Direction, Rgb, Vec3};
use crate::sgalg::SgLobe;

/// Unconstrained parameters per SG lobe: two tangent coordinates for the
/// axis, the inverse-softplus sharpness, and three amplitudes.
pub const LOBE_PARAMS: usize = 6;

/// Keeps logits of boundary values finite.
const UNIT_EPS: f64 = 1e-9;

const CHANNELS: [&str; 3] = ["r", "g", "b"];
const AXES: [&str; 3] = ["x", "y", "z"];

#[derive(Debug, Clone, PartialEq)]
pub enum LightingLayout {
    Env {
        width: usize,
        height: usize,
    },
    /// Axes are charted on the tangent plane at these reference directions.
    Sg {
        base_axes: Vec<Direction>,
    },
}

/// What a flat parameter index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Vertex { vertex: usize, axis: usize },
    Albedo { x: usize, y: usize, channel: usize },
    Specular,
    Roughness,
    Metalness,
    EnvTexel { x: usize, y: usize, channel: usize },
    LobeAxis { lobe: usize, coord: usize },
    LobeSharpness { lobe: usize },
    LobeAmplitude { lobe: usize, channel: usize },
}

/// Fixed ordering of the differentiable scene state: vertex positions,
/// albedo texels, specular, roughness, metalness, then lighting.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub vertex_count: usize,
    pub albedo_width: usize,
    pub albedo_height: usize,
    pub lighting: LightingLayout,
}

impl ParamLayout {
    pub fn of_scene(scene: &Scene) -> Self {
        ParamLayout {
            vertex_count: scene.mesh.vertices.len(),
            albedo_width: scene.brdf.albedo.width,
            albedo_height: scene.brdf.albedo.height,
            lighting: match &scene.lighting {
                Lighting::Env(e) => LightingLayout::Env { width: e.width, height: e.height },
                Lighting::Sg(l) => LightingLayout::Sg { base_axes: l.lobes.iter().map(|l| l.axis).collect() },
            },
        }
    }

    pub fn vertices(&self) -> Range<usize> {
        0..3 * self.vertex_count
    }

    pub fn albedo(&self) -> Range<usize> {
        let s = self.vertices().end;
        s..s + 3 * self.albedo_width * self.albedo_height
    }

    pub fn specular(&self) -> usize {
        self.albedo().end
    }

    pub fn roughness(&self) -> usize {
        self.specular() + 1
    }

    pub fn metalness(&self) -> usize {
        self.specular() + 2
    }

    pub fn lighting(&self) -> Range<usize> {
        let s = self.specular() + 3;
        let n = match &self.lighting {
            LightingLayout::Env { width, height } => 3 * width * height,
            LightingLayout::Sg { base_axes } => LOBE_PARAMS * base_axes.len(),
        };
        s..s + n
    }

    pub fn len(&self) -> usize {
        self.lighting().end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self, i: usize) -> ParamKind {
        let (v, a, l) = (self.vertices(), self.albedo(), self.lighting());
        if v.contains(&i) {
            return ParamKind::Vertex { vertex: i / 3, axis: i % 3 };
        }
        if a.contains(&i) {
            let k = i - a.start;
            let t = k / 3;
            return ParamKind::Albedo { x: t % self.albedo_width, y: t / self.albedo_width, channel: k % 3 };
        }
        if i == self.specular() {
            return ParamKind::Specular;
        }
        if i == self.roughness() {
            return ParamKind::Roughness;
        }
        if i == self.metalness() {
            return ParamKind::Metalness;
        }
        assert!(l.contains(&i), "parameter index {i} out of range");
        let k = i - l.start;
        match &self.lighting {
            LightingLayout::Env { width, .. } => {
                let t = k / 3;
                ParamKind::EnvTexel { x: t % width, y: t / width, channel: k % 3 }
            }
            LightingLayout::Sg { .. } => {
                let lobe = k / LOBE_PARAMS;
                match k % LOBE_PARAMS {
                    c @ 0..=1 => ParamKind::LobeAxis { lobe, coord: c },
                    2 => ParamKind::LobeSharpness { lobe },
                    c => ParamKind::LobeAmplitude { lobe, channel: c - 3 },
                }
            }
        }
    }

    /// Stable human-readable name used by selectors.
    pub fn name(&self, i: usize) -> String {
        match self.kind(i) {
            ParamKind::Vertex { vertex, axis } => format!("vertex.{vertex}.{}", AXES[axis]),
            ParamKind::Albedo { x, y, channel } => format!("albedo.{x}.{y}.{}", CHANNELS[channel]),
            ParamKind::Specular => "specular".into(),
            ParamKind::Roughness => "roughness".into(),
            ParamKind::Metalness => "metalness".into(),
            ParamKind::EnvTexel { x, y, channel } => format!("env.{x}.{y}.{}", CHANNELS[channel]),
            ParamKind::LobeAxis { lobe, coord } => format!("lobe.{lobe}.xi{coord}"),
            ParamKind::LobeSharpness { lobe } => format!("lobe.{lobe}.lambda"),
            ParamKind::LobeAmplitude { lobe, channel } => format!("lobe.{lobe}.mu.{}", CHANNELS[channel]),
        }
    }

    /// Indices matching a glob over parameter names, or one of the groups
    /// `all`, `shape`, `material` and `lighting`. Sorted and deduplicated.
    pub fn select(&self, selector: &str) -> Result<Vec<usize>> {
        let sel = selector.trim();
        let out: Vec<usize> = match sel {
            "all" => (0..self.len()).collect(),
            "shape" => self.vertices().collect(),
            "material" => self.albedo().chain(self.specular()..self.metalness() + 1).collect(),
            "lighting" => self.lighting().collect(),
            _ => {
                let pat =
                    glob::Pattern::new(sel).map_err(|e| Error::Validation(format!("bad selector `{sel}`: {e}")))?;
                (0..self.len()).filter(|&i| pat.matches(&self.name(i))).collect()
            }
        };
        if out.is_empty() {
            return Err(Error::SelectorNotFound(sel.to_string()));
        }
        Ok(out)
    }

    /// Union of several selectors.
    pub fn select_all<S: AsRef<str>>(&self, selectors: &[S]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for s in selectors {
            out.extend(self.select(s.as_ref())?);
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Whether the index belongs to scene lighting.
    pub fn is_lighting(&self, i: usize) -> bool {
        self.lighting().contains(&i)
    }
}

/// Maps an unconstrained value to roughness in `[ROUGHNESS_MIN, 1]`.
pub fn roughness_from_param(p: f64) -> f64 {
    ROUGHNESS_MIN + (1.0 - ROUGHNESS_MIN) * sigmoid(p)
}

pub fn roughness_to_param(beta: f64) -> f64 {
    logit(((beta - ROUGHNESS_MIN) / (1.0 - ROUGHNESS_MIN)).clamp(UNIT_EPS, 1.0 - UNIT_EPS))
}

fn unit_to_param(x: f64) -> f64 {
    logit(x.clamp(UNIT_EPS, 1.0 - UNIT_EPS))
}

/// Chart of the unit sphere around `base`: `normalize(base + t₀e₀ + t₁e₁)`.
pub(crate) fn chart_raw(base: Direction, t: [f64; 2]) -> Vec3 {
    let (e0, e1) = base.tangent_frame();
    *base + e0 * t[0] + e1 * t[1]
}

/// The scene's differentiable state in unconstrained coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ParamSet {
    pub fn from_scene(scene: &Scene) -> Self {
        let layout = ParamLayout::of_scene(scene);
        let mut values = Vec::with_capacity(layout.len());
        for v in &scene.mesh.vertices {
            values.extend_from_slice(&v.to_array());
        }
        for c in &scene.brdf.albedo.data {
            values.extend_from_slice(&c.to_array());
        }
        values.push(unit_to_param(scene.brdf.specular));
        values.push(roughness_to_param(scene.brdf.roughness));
        values.push(unit_to_param(scene.brdf.metalness));
        match &scene.lighting {
            Lighting::Env(env) => {
                for c in &env.data {
                    values.extend_from_slice(&c.to_array());
                }
            }
            Lighting::Sg(light) => {
                for l in &light.lobes {
                    values.extend_from_slice(&[0.0, 0.0, softplus_inv(l.sharpness.max(UNIT_EPS))]);
                    values.extend_from_slice(&l.amplitude.to_array());
                }
            }
        }
        debug_assert_eq!(values.len(), layout.len());
        ParamSet { layout, values }
    }

    fn check(&self, scene: &Scene) -> Result<()> {
        if ParamLayout::of_scene(scene).len() != self.layout.len()
            || scene.brdf.albedo.width != self.layout.albedo_width
            || scene.mesh.vertices.len() != self.layout.vertex_count
        {
            return Err(Error::ShapeMismatch("parameter set does not describe this scene".into()));
        }
        Ok(())
    }

    fn lobe(&self, k: usize, base: Direction) -> SgLobe {
        let s = self.layout.lighting().start + k * LOBE_PARAMS;
        let v = &self.values[s..s + LOBE_PARAMS];
        SgLobe::new(Direction::new(chart_raw(base, [v[0], v[1]])), softplus(v[2]), Rgb::new(v[3], v[4], v[5]))
    }

    /// Writes every parameter into `scene`. Normals are recomputed from the
    /// vertex positions.
    pub fn apply(&self, scene: &mut Scene) -> Result<()> {
        self.write(scene, None)
    }

    /// Writes only the groups that differ from `base`: the vertex block
    /// (then normals are recomputed), the albedo block, each scalar, and
    /// each texel or lobe.
    pub fn apply_changes(&self, base: &ParamSet, scene: &mut Scene) -> Result<()> {
        if base.layout != self.layout {
            return Err(Error::ShapeMismatch("parameter layouts differ".into()));
        }
        self.write(scene, Some(base))
    }

    fn write(&self, scene: &mut Scene, base: Option<&ParamSet>) -> Result<()> {
        self.check(scene)?;
        let l = &self.layout;
        let changed = |r: Range<usize>| base.is_none_or(|b| self.values[r.clone()] != b.values[r]);
        let v = &self.values;
        if changed(l.vertices()) {
            for (i, p) in scene.mesh.vertices.iter_mut().enumerate() {
                *p = Vec3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
            }
            scene.mesh.recompute_normals();
        }
        let a0 = l.albedo().start;
        if changed(l.albedo()) {
            for (i, c) in scene.brdf.albedo.data.iter_mut().enumerate() {
                let k = a0 + 3 * i;
                *c = Rgb::new(v[k], v[k + 1], v[k + 2]);
            }
        }
        if changed(l.specular()..l.specular() + 1) {
            scene.brdf.specular = sigmoid(v[l.specular()]);
        }
        if changed(l.roughness()..l.roughness() + 1) {
            scene.brdf.roughness = roughness_from_param(v[l.roughness()]);
        }
        if changed(l.metalness()..l.metalness() + 1) {
            scene.brdf.metalness = sigmoid(v[l.metalness()]);
        }
        let s = l.lighting().start;
        match (&l.lighting, &mut scene.lighting) {
            (LightingLayout::Env { .. }, Lighting::Env(env)) => {
                for (i, c) in env.data.iter_mut().enumerate() {
                    let k = s + 3 * i;
                    if changed(k..k + 3) {
                        *c = Rgb::new(v[k], v[k + 1], v[k + 2]);
                    }
                }
            }
            (LightingLayout::Sg { base_axes }, Lighting::Sg(light)) => {
                for (k, (lobe, &axis)) in light.lobes.iter_mut().zip(base_axes).enumerate() {
                    let r = s + k * LOBE_PARAMS;
                    if changed(r..r + LOBE_PARAMS) {
                        *lobe = self.lobe(k, axis);
                    }
                }
            }
            _ => return Err(Error::ShapeMismatch("lighting representation differs from the parameter set".into())),
        }
        Ok(())
    }

    /// Clamps values whose physical domain is bounded: albedo to `[0, 1]`,
    /// map texels and lobe amplitudes to `≥ 0`.
    pub fn project(&mut self) {
        let l = self.layout.clone();
        for x in &mut self.values[l.albedo()] {
            *x = x.clamp(0.0, 1.0);
        }
        let r = l.lighting();
        match &l.lighting {
            LightingLayout::Env { .. } => {
                for x in &mut self.values[r] {
                    *x = x.max(0.0);
                }
            }
            LightingLayout::Sg { base_axes } => {
                for k in 0..base_axes.len() {
                    let s = r.start + k * LOBE_PARAMS;
                    for x in &mut self.values[s + 3..s + 6] {
                        *x = x.max(0.0);
                    }
                }
            }
        }
    }

    /// Lighting as an equirect map: the map itself, or the lobes sampled at
    /// texel centers.
    pub fn lighting_image(&self, scene: &Scene, width: usize, height: usize) -> Result<EquirectImage> {
        let mut s = scene.clone();
        self.apply(&mut s)?;
        Ok(match &s.lighting {
            Lighting::Env(e) => e.clone(),
            Lighting::Sg(l) => crate::sgalg::sg_env_to_equirect(l, width, height),
        })
    }
}

/// `∂L/∂p` for every entry of a [`ParamSet`] with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradRecord {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl GradRecord {
    pub fn zeros(layout: &ParamLayout) -> Self {
        GradRecord { layout: layout.clone(), values: vec![0.0; layout.len()] }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn add_scaled(&mut self, other: &GradRecord, scale: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }
}
