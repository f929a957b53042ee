use super::adam::{adam_step_with, AdamState};
use super::losses::{loss_image_l1_grad, loss_iou_grad, loss_laplacian_grad, LossTerms, LossWeights, PerceptualLoss};
use crate::assets::{Backend, Image, Mask, Mesh, Scene};
use crate::diffgrad::{backward, render_recorded, GradRecord, ParamKind, ParamSet};
use crate::error::{Error, Result};
use crate::mathkit::{Rgb, RngStream};
use crate::raster::Camera;
use crate::shade::{render, subsample_pixels, RenderOutput};

pub const DEFAULT_LR_LIGHTING: f64 = 0.01;
pub const DEFAULT_LR_MATERIAL: f64 = 0.005;
pub const DEFAULT_LR_SHAPE: f64 = 0.001;
pub const DEFAULT_STEPS: usize = 500;

/// One observation: what the camera saw and where the object covered it.
#[derive(Debug, Clone)]
pub struct TargetView {
    pub camera: Camera,
    pub image: Image,
    pub mask: Mask,
}

impl TargetView {
    /// Renders `scene` from `camera` to make a self-consistent target.
    pub fn render_from(scene: &Scene, camera: Camera, backend: Backend) -> Result<TargetView> {
        let mut s = scene.clone();
        s.camera = camera;
        let out = render(&s, backend)?;
        Ok(TargetView { camera, image: out.image, mask: out.mask })
    }

    fn validate(&self, i: usize) -> Result<()> {
        self.camera.validate()?;
        let (w, h) = (self.camera.width, self.camera.height);
        if self.image.width != w || self.image.height != h || !self.mask.same_shape(&self.image) {
            return Err(Error::ShapeMismatch(format!(
                "view {i}: camera is {w}×{h}, image {}×{}, mask {}×{}",
                self.image.width, self.image.height, self.mask.width, self.mask.height
            )));
        }
        Ok(())
    }
}

/// Learning rates by parameter group, step budget and pixel subsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub steps: usize,
    pub lr_shape: f64,
    pub lr_material: f64,
    pub lr_lighting: f64,
    /// Fraction of foreground pixels shaded per view and step, or every
    /// pixel when `None`.
    pub pixel_fraction: Option<f64>,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            steps: DEFAULT_STEPS,
            lr_shape: DEFAULT_LR_SHAPE,
            lr_material: DEFAULT_LR_MATERIAL,
            lr_lighting: DEFAULT_LR_LIGHTING,
            pixel_fraction: None,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl OptimizerConfig {
    /// Same learning rate for every group.
    pub fn set_lr(&mut self, lr: f64) {
        self.lr_shape = lr;
        self.lr_material = lr;
        self.lr_lighting = lr;
    }

    pub fn lr_for(&self, kind: ParamKind) -> f64 {
        match kind {
            ParamKind::Vertex { .. } => self.lr_shape,
            ParamKind::Albedo { .. } | ParamKind::Specular | ParamKind::Roughness | ParamKind::Metalness => {
                self.lr_material
            }
            ParamKind::EnvTexel { .. }
            | ParamKind::LobeAxis { .. }
            | ParamKind::LobeSharpness { .. }
            | ParamKind::LobeAmplitude { .. } => self.lr_lighting,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeTask {
    pub targets: Vec<TargetView>,
    /// Globs or group names over parameter names.
    pub free: Vec<String>,
    pub backend: Backend,
    pub config: OptimizerConfig,
}

impl OptimizeTask {
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::Validation("optimization needs at least one target view".into()));
        }
        if self.free.is_empty() {
            return Err(Error::Validation("no free parameters selected".into()));
        }
        for (i, t) in self.targets.iter().enumerate() {
            t.validate(i)?;
        }
        let c = &self.config;
        for (n, lr) in [("shape", c.lr_shape), ("material", c.lr_material), ("lighting", c.lr_lighting)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Validation(format!("{n} learning rate {lr} must be finite and non-negative")));
            }
        }
        if let Some(f) = c.pixel_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Validation(format!("pixel fraction {f} outside (0, 1]")));
            }
        }
        c.weights.validate()
    }
}

/// Settings of one loss evaluation.
#[derive(Clone, Copy)]
pub struct LossOptions<'a> {
    pub backend: Backend,
    pub weights: LossWeights,
    pub perceptual: Option<&'a dyn PerceptualLoss>,
    pub pixel_fraction: Option<f64>,
    pub seed: u64,
    /// Selects the pixel subsample; one value per optimization step.
    pub round: u64,
}

impl<'a> LossOptions<'a> {
    pub fn new(backend: Backend) -> Self {
        LossOptions {
            backend,
            weights: LossWeights::default(),
            perceptual: None,
            pixel_fraction: None,
            seed: 0,
            round: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossEval {
    pub terms: LossTerms,
    pub grad: GradRecord,
    pub outputs: Vec<RenderOutput>,
}

/// Weighted multi-view loss of `scene` against `targets` and its gradient
/// over every parameter of `params`. Per-view terms are averaged over the
/// views; the Laplacian term compares the scene's mesh with `initial`.
pub fn total_loss(
    scene: &Scene,
    params: &ParamSet,
    targets: &[TargetView],
    initial: &Mesh,
    opts: &LossOptions,
) -> Result<LossEval> {
    if targets.is_empty() {
        return Err(Error::Validation("loss needs at least one target view".into()));
    }
    let w = opts.weights.effective(opts.perceptual.is_some());
    let mut grad = GradRecord::zeros(&params.layout);
    let scale = 1.0 / targets.len() as f64;
    let (mut l_im, mut l_msk, mut l_per) = (0.0, 0.0, 0.0);
    let mut outputs = Vec::with_capacity(targets.len());
    for (v, t) in targets.iter().enumerate() {
        let mut s = scene.clone();
        s.camera = t.camera;
        let pixels = opts.pixel_fraction.map(|f| {
            let stream = RngStream::new(!opts.seed, opts.round * targets.len() as u64 + v as u64);
            subsample_pixels(&t.mask, f, stream)
        });
        let rec = render_recorded(&s, opts.backend, pixels.as_deref())?;
        let out = rec.output();
        let (im, d_im) = loss_image_l1_grad(&out.image, &t.image, pixels.as_deref())?;
        let (msk, d_msk) = loss_iou_grad(&out.mask, &t.mask)?;
        let mut d_image = d_im.map(|c| *c * w.image);
        if let (Some(p), true) = (opts.perceptual, w.perceptual > 0.0) {
            let (lp, d_p) = p.loss(&out.image, &t.image);
            if !d_p.same_shape(&d_image) {
                return Err(Error::ShapeMismatch("perceptual adjoint has the wrong size".into()));
            }
            l_per += lp * scale;
            for (a, b) in d_image.data.iter_mut().zip(&d_p.data) {
                *a += *b * w.perceptual;
            }
        }
        let d_mask = d_msk.map(|x| x * w.mask);
        let g = backward(&s, &rec, &d_image, Some(&d_mask), params)?;
        grad.add_scaled(&g, scale);
        l_im += im * scale;
        l_msk += msk * scale;
        outputs.push(rec.output().clone());
    }
    let (l_lap, d_lap) = loss_laplacian_grad(&scene.mesh, initial)?;
    for (i, d) in d_lap.iter().enumerate() {
        for k in 0..3 {
            grad.values[3 * i + k] += w.laplacian * d[k];
        }
    }
    Ok(LossEval { terms: LossTerms::weighted(l_im, l_msk, l_per, l_lap, &w), grad, outputs })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub step: usize,
    pub terms: LossTerms,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub scene: Scene,
    pub params: ParamSet,
    /// Loss before each update plus one entry after the last.
    pub trace: Vec<TraceEntry>,
    /// Full renders of the initial and fitted scenes, one per target view.
    pub before: Vec<Image>,
    pub after: Vec<Image>,
}

impl OptimizeResult {
    pub fn best(&self) -> &TraceEntry {
        self.trace.iter().min_by(|a, b| a.terms.total.total_cmp(&b.terms.total)).expect("trace is never empty")
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("step,loss,l_im,l_msk,l_lap\n");
        for e in &self.trace {
            let t = &e.terms;
            s += &format!("{},{:.9e},{:.9e},{:.9e},{:.9e}\n", e.step, t.total, t.image, t.mask, t.laplacian);
        }
        s
    }
}

fn render_views(scene: &Scene, targets: &[TargetView], backend: Backend) -> Result<Vec<Image>> {
    targets
        .iter()
        .map(|t| {
            let mut s = scene.clone();
            s.camera = t.camera;
            Ok(render(&s, backend)?.image)
        })
        .collect()
}

/// Gradient descent on the free parameters of `scene` toward the targets.
/// Each step renders every view, evaluates the weighted loss, runs the
/// backward pass and takes one Adam step, then projects bounded
/// parameters back into their domain. With no vertex free, the silhouette
/// and Laplacian terms are left out of the loss.
pub fn optimize(task: &OptimizeTask, scene: &Scene, perceptual: Option<&dyn PerceptualLoss>) -> Result<OptimizeResult> {
    task.validate()?;
    scene.validate()?;
    let base = ParamSet::from_scene(scene);
    let free = base.layout.select_all(&task.free)?;
    let mut start = scene.clone();
    let shape_free = free.iter().any(|&i| matches!(base.layout.kind(i), ParamKind::Vertex { .. }));
    let mut weights = task.config.weights;
    if shape_free {
        start.mesh.recompute_normals();
    } else {
        // constant without free vertices
        weights.mask = 0.0;
        weights.laplacian = 0.0;
    }
    let initial_mesh = start.mesh.clone();
    let c = &task.config;
    let lrs: Vec<f64> = free.iter().map(|&i| c.lr_for(base.layout.kind(i))).collect();
    let mut params = base.clone();
    let mut current = start.clone();
    let mut adam = AdamState::new(free.len());
    let mut trace = Vec::with_capacity(c.steps + 1);
    let before = render_views(&start, &task.targets, task.backend)?;

    for step in 0..=c.steps {
        let opts = LossOptions {
            backend: task.backend,
            weights,
            perceptual,
            pixel_fraction: c.pixel_fraction,
            seed: c.seed,
            round: step as u64,
        };
        let eval = total_loss(&current, &params, &task.targets, &initial_mesh, &opts)?;
        let finite_grad = free.iter().all(|&i| eval.grad.values[i].is_finite());
        if !eval.terms.total.is_finite() || !finite_grad {
            return Err(Error::NonFinite { step });
        }
        log::debug!("step {step}: loss {:.6e}", eval.terms.total);
        trace.push(TraceEntry { step, terms: eval.terms });
        if step == c.steps {
            break;
        }
        let mut x: Vec<f64> = free.iter().map(|&i| params.values[i]).collect();
        let g: Vec<f64> = free.iter().map(|&i| eval.grad.values[i]).collect();
        adam_step_with(&mut x, &g, &mut adam, |k| lrs[k])?;
        let mut next = params.clone();
        for (&i, v) in free.iter().zip(x) {
            next.values[i] = v;
        }
        next.project();
        next.apply_changes(&params, &mut current)?;
        params = next;
    }
    let after = render_views(&current, &task.targets, task.backend)?;
    Ok(OptimizeResult { scene: current, params, trace, before, after })
}

/// Texels of a `width × height` lighting map that influence at least one
/// target pixel: the luminance-weighted sensitivity of every view's image
/// to each texel, thresholded at `threshold` times its maximum.
pub fn lit_region(scene: &Scene, cameras: &[Camera], backend: Backend, threshold: f64) -> Result<Mask> {
    let params = ParamSet::from_scene(scene);
    let range = params.layout.lighting();
    let mut sens = vec![0.0; range.len() / 3];
    for cam in cameras {
        let mut s = scene.clone();
        s.camera = *cam;
        let rec = render_recorded(&s, backend, None)?;
        let weight = Rgb::from_array(crate::mathkit::LUMINANCE);
        let d_image = Image::filled(cam.width, cam.height, weight);
        let g = backward(&s, &rec, &d_image, None, &params)?;
        for (t, v) in sens.iter_mut().enumerate() {
            let k = range.start + 3 * t;
            *v += g.values[k].abs() + g.values[k + 1].abs() + g.values[k + 2].abs();
        }
    }
    let (w, h) = match params.layout.lighting {
        crate::diffgrad::LightingLayout::Env { width, height } => (width, height),
        crate::diffgrad::LightingLayout::Sg { .. } => {
            return Err(Error::Validation("lit regions are defined for environment-map lighting".into()))
        }
    };
    let max = sens.iter().cloned().fold(0.0, f64::max);
    let cut = threshold * max;
    Mask::from_vec(w, h, sens.into_iter().map(|v| if max > 0.0 && v > cut { 1.0 } else { 0.0 }).collect())
}
