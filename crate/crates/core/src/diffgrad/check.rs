use super::backward::{backward, render_recorded, Recorded};
use super::params::{ParamKind, ParamSet};
use crate::assets::{Backend, Image, Mask, Scene};
use crate::error::Result;
use crate::mathkit::Rgb;
use crate::shade::{prepare_light, render_shaded, Frozen, RenderOutput};

/// A scalar objective on a render with its adjoints with respect to the
/// image and the soft mask.
pub trait RenderLoss: Sync {
    fn value(&self, out: &RenderOutput) -> f64;
    fn adjoint(&self, out: &RenderOutput) -> (Image, Option<Mask>);
}

/// `⟨W_image, I⟩ + ⟨W_mask, V⟩`.
#[derive(Debug, Clone)]
pub struct LinearLoss {
    pub image: Image,
    pub mask: Option<Mask>,
}

impl LinearLoss {
    /// Weight one pixel of the image by `weight`.
    pub fn pixel(width: usize, height: usize, idx: usize, weight: Rgb) -> Self {
        let mut image = Image::filled(width, height, Rgb::BLACK);
        image.data[idx] = weight;
        LinearLoss { image, mask: None }
    }

    /// Sum of the soft mask.
    pub fn mask_sum(width: usize, height: usize) -> Self {
        LinearLoss { image: Image::filled(width, height, Rgb::BLACK), mask: Some(Mask::filled(width, height, 1.0)) }
    }
}

impl RenderLoss for LinearLoss {
    fn value(&self, out: &RenderOutput) -> f64 {
        let im: f64 = self.image.data.iter().zip(&out.image.data).map(|(a, b)| a.dot(*b)).sum();
        let m: f64 = self.mask.as_ref().map_or(0.0, |m| m.data.iter().zip(&out.mask.data).map(|(a, b)| a * b).sum());
        im + m
    }

    fn adjoint(&self, _: &RenderOutput) -> (Image, Option<Mask>) {
        (self.image.clone(), self.mask.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub tolerance: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.rel_error <= self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }
}

/// `|a − n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Renders a perturbed scene replaying the Monte Carlo samples of `base`.
pub fn render_frozen(scene: &Scene, base_scene: &Scene, base: &Recorded) -> Result<RenderOutput> {
    scene.validate()?;
    let light = prepare_light(scene, base.backend);
    let frozen = Frozen { gbuffer: &base.shaded.gbuffer, brdf: &base_scene.brdf };
    Ok(render_shaded(scene, base.backend, &light, base.only.as_deref(), Some(frozen)).output)
}

/// Compares the analytic gradient of `loss` with a central difference of
/// step `eps` in unconstrained coordinates, for every parameter the
/// selector matches. Monte Carlo samples are replayed from the unperturbed
/// render, so both sides differentiate the same estimator.
pub fn finite_diff_check(
    scene: &Scene,
    backend: Backend,
    selector: &str,
    eps: f64,
    tolerance: f64,
    loss: &dyn RenderLoss,
) -> Result<FdReport> {
    let base_params = ParamSet::from_scene(scene);
    let picked = base_params.layout.select(selector)?;
    let mut base = scene.clone();
    // perturbed vertices recompute normals, so the reference must as well
    if picked.iter().any(|&i| matches!(base_params.layout.kind(i), ParamKind::Vertex { .. })) {
        base.mesh.recompute_normals();
    }
    let rec = render_recorded(&base, backend, None)?;
    let (d_image, d_mask) = loss.adjoint(rec.output());
    let grad = backward(&base, &rec, &d_image, d_mask.as_ref(), &base_params)?;

    let mut entries = Vec::with_capacity(picked.len());
    for i in picked {
        let eval = |delta: f64| -> Result<f64> {
            let mut p = base_params.clone();
            p.values[i] += delta;
            let mut s = base.clone();
            p.apply_changes(&base_params, &mut s)?;
            Ok(loss.value(&render_frozen(&s, &base, &rec)?))
        };
        let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
        let analytic = grad.values[i];
        entries.push(FdEntry {
            name: base_params.layout.name(i),
            index: i,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    Ok(FdReport { entries, tolerance })
}
