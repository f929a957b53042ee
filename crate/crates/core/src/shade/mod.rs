//! Deferred shading of a G-buffer and composition over the background.
//!
//! Two integrators share one interface: an importance-sampled Monte Carlo
//! estimator against an equirectangular map, and a closed-form evaluation
//! against spherical-Gaussian lighting.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::assets::{Backend, Background, EquirectImage, Grid, Image, Lighting, Mask, Scene};
use crate::brdf::{
    brdf_eval, brdf_eval_vjp, brdf_sample, specular_to_sg, specular_to_sg_vjp, BrdfParams, BrdfSample, Material,
    MaterialGrad, SpecularSgGrad,
};
use crate::error::Result;
use crate::mathkit::{Direction, Rgb, RngStream, Vec3};
use crate::raster::{rasterize, GBuffer};
use crate::sgalg::{
    fit_env_sg, sg_env_to_equirect, sg_product_integral, SgEnvLight, SgLobeGrad, COSINE_SG_AMPLITUDE,
    COSINE_SG_SHARPNESS,
};

/// Resolution at which SG lighting is rasterized for the Monte Carlo backend.
pub const SG_RASTER_WIDTH: usize = 256;
pub const SG_RASTER_HEIGHT: usize = 128;

/// Shading inputs at one covered pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRecord {
    pub position: Vec3,
    pub normal: Direction,
    pub uv: [f64; 2],
    pub view_dir: Direction,
}

impl PixelRecord {
    /// The record at pixel `idx`, or `None` where no triangle is visible.
    pub fn from_gbuffer(g: &GBuffer, idx: usize) -> Option<PixelRecord> {
        if !g.visibility[idx] {
            return None;
        }
        Some(PixelRecord {
            position: g.position[idx],
            normal: Direction::new_unchecked(g.normal[idx]),
            uv: g.uv[idx],
            view_dir: Direction::new_unchecked(g.view_dir[idx]),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    /// Shaded object premultiplied by the mask, so that
    /// `image = foreground + (1 − mask) · background`.
    pub foreground: Image,
    pub mask: Mask,
    /// Monte Carlo samples spent per pixel (zero for the SG backend).
    pub samples: Grid<u32>,
}

/// Lighting in the form a backend consumes.
#[derive(Debug, Clone)]
pub(crate) enum PreparedLight {
    Env(EquirectImage),
    Sg(SgEnvLight),
}

pub(crate) fn prepare_light(scene: &Scene, backend: Backend) -> PreparedLight {
    match (&scene.lighting, backend) {
        (Lighting::Env(env), Backend::Mc) => PreparedLight::Env(env.clone()),
        (Lighting::Sg(sg), Backend::Mc) => {
            PreparedLight::Env(sg_env_to_equirect(sg, SG_RASTER_WIDTH, SG_RASTER_HEIGHT))
        }
        (Lighting::Sg(sg), Backend::Sg) => PreparedLight::Sg(sg.clone()),
        (Lighting::Env(env), Backend::Sg) => {
            let r = &scene.render;
            PreparedLight::Sg(fit_env_sg(env, r.lobes, r.fit_iters, r.fit_lr))
        }
    }
}

/// Draws sample `k` of a pixel's stream. Each sample consumes three draws.
#[inline]
pub fn mc_sample(mat: &Material, n: Direction, wo: Direction, stream: &RngStream, k: usize) -> BrdfSample {
    let base = 3 * k as u64;
    brdf_sample(mat, n, wo, stream.uniform_at(base), stream.uniform_at(base + 1), stream.uniform_at(base + 2))
}

/// Where Monte Carlo directions come from: usually the pixel being shaded,
/// but a frozen reference when replaying samples under perturbation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SampleSource {
    pub mat: Material,
    pub normal: Direction,
    pub view_dir: Direction,
}

fn mc_estimate(
    src: &SampleSource,
    mat: &Material,
    rec: &PixelRecord,
    env: &EquirectImage,
    n: usize,
    stream: &RngStream,
) -> Rgb {
    let mut acc = Rgb::BLACK;
    for k in 0..n {
        let s = mc_sample(&src.mat, src.normal, src.view_dir, stream, k);
        if s.pdf <= 0.0 {
            continue;
        }
        let f = brdf_eval(mat, rec.normal, s.direction, rec.view_dir);
        let cos = rec.normal.dot(*s.direction).abs();
        acc += f * env.lookup_dir(s.direction) * (cos / s.pdf);
    }
    acc / n as f64
}

/// Importance-sampled estimate of reflected radiance at one pixel:
/// the mean over `n` BRDF samples of `f · L · |n·ωi| / p`.
pub fn shade_mc(rec: &PixelRecord, env: &EquirectImage, params: &BrdfParams, n: usize, stream: RngStream) -> Rgb {
    let mat = params.at(rec.uv);
    let src = SampleSource { mat, normal: rec.normal, view_dir: rec.view_dir };
    mc_estimate(&src, &mat, rec, env, n.max(1), &stream)
}

/// Gradient of `⟨d_out, estimate⟩` with every sampled direction and pdf
/// held at the values drawn from `src`. Texel adjoints go to `d_env`;
/// the material gradient and the normal adjoint are returned.
#[allow(clippy::too_many_arguments)]
pub(crate) fn shade_mc_vjp(
    src: &SampleSource,
    mat: &Material,
    rec: &PixelRecord,
    env: &EquirectImage,
    n: usize,
    stream: &RngStream,
    d_out: Rgb,
    mut d_env: impl FnMut(usize, Rgb),
) -> (MaterialGrad, Vec3) {
    let mut gm = MaterialGrad::default();
    let mut d_n = Vec3::ZERO;
    let inv_n = 1.0 / n as f64;
    for k in 0..n {
        let s = mc_sample(&src.mat, src.normal, src.view_dir, stream, k);
        if s.pdf <= 0.0 {
            continue;
        }
        let wi = s.direction;
        let f = brdf_eval(mat, rec.normal, wi, rec.view_dir);
        let ni = rec.normal.dot(*wi);
        let cos = ni.abs();
        let light = env.lookup_dir(wi);
        let w = inv_n / s.pdf;

        let (g, dn, _) = brdf_eval_vjp(mat, rec.normal, wi, rec.view_dir, d_out * light * (cos * w));
        gm += g;
        d_n += dn;
        d_n += *wi * (ni.signum() * (f * light).dot(d_out) * w);
        let d_light = d_out * f * (cos * w);
        if d_light != Rgb::BLACK {
            let (u, v) = crate::mathkit::dir_to_equirect(wi);
            for (t, tw) in env.bilinear_taps(u, v) {
                d_env(t, d_light * tw);
            }
        }
    }
    (gm, d_n)
}

/// Closed-form SG shading: each light lobe against the cosine lobe for the
/// diffuse term and against the specular lobe times the cosine lobe for
/// the specular term.
pub fn shade_sg(rec: &PixelRecord, light: &SgEnvLight, params: &BrdfParams) -> Rgb {
    let mat = params.at(rec.uv);
    shade_sg_material(rec, light, &mat)
}

pub(crate) fn shade_sg_material(rec: &PixelRecord, light: &SgEnvLight, mat: &Material) -> Rgb {
    let n = *rec.normal;
    let diffuse = mat.diffuse_weight() / PI;
    let spec = specular_to_sg(mat, rec.normal, rec.view_dir);
    let mu_s = spec.amplitude.r;
    let cos_lobe = (n, COSINE_SG_SHARPNESS);
    let spec_lobe = (*spec.axis, spec.sharpness);
    let mut out = Rgb::BLACK;
    for l in &light.lobes {
        let lobe = (*l.axis, l.sharpness);
        let (i2, _) = sg_product_integral([lobe, cos_lobe]);
        let (i3, _) = sg_product_integral([spec_lobe, lobe, cos_lobe]);
        out += l.amplitude * (diffuse * (COSINE_SG_AMPLITUDE * i2) + Rgb::gray(mu_s * COSINE_SG_AMPLITUDE * i3));
    }
    out
}

/// Gradient of `⟨d_out, shade_sg⟩`. Lobe adjoints are added to `d_lobes`;
/// the material gradient and the normal adjoint are returned.
pub(crate) fn shade_sg_vjp(
    rec: &PixelRecord,
    light: &SgEnvLight,
    mat: &Material,
    d_out: Rgb,
    d_lobes: &mut [SgLobeGrad],
) -> (MaterialGrad, Vec3) {
    let n = *rec.normal;
    let diffuse = mat.diffuse_weight() / PI;
    let spec = specular_to_sg(mat, rec.normal, rec.view_dir);
    let mu_s = spec.amplitude.r;
    let cos_lobe = (n, COSINE_SG_SHARPNESS);
    let spec_lobe = (*spec.axis, spec.sharpness);
    let ca = COSINE_SG_AMPLITUDE;

    let mut d_diffuse = Rgb::BLACK;
    let mut d_spec = SpecularSgGrad::default();
    let mut d_n = Vec3::ZERO;
    for (l, dl) in light.lobes.iter().zip(d_lobes.iter_mut()) {
        let lobe = (*l.axis, l.sharpness);
        let (i2, g2) = sg_product_integral([lobe, cos_lobe]);
        let (i3, g3) = sg_product_integral([spec_lobe, lobe, cos_lobe]);
        dl.amplitude += d_out * (diffuse * (ca * i2) + Rgb::gray(mu_s * ca * i3));
        let weighted = d_out * l.amplitude;
        d_diffuse += weighted * (ca * i2);
        let d_i2 = ca * (weighted * diffuse).sum();
        let d_i3 = ca * mu_s * weighted.sum();
        d_spec.amplitude += ca * i3 * weighted.sum();

        dl.axis += g2[0].0 * d_i2 + g3[1].0 * d_i3;
        dl.sharpness += g2[0].1 * d_i2 + g3[1].1 * d_i3;
        d_n += g2[1].0 * d_i2 + g3[2].0 * d_i3;
        d_spec.axis += g3[0].0 * d_i3;
        d_spec.sharpness += g3[0].1 * d_i3;
    }
    let (mut gm, dn_spec, _) = specular_to_sg_vjp(mat, rec.normal, rec.view_dir, d_spec);
    d_n += dn_spec;
    // diffuse = (1 − m) a / π
    gm.albedo += d_diffuse * ((1.0 - mat.metalness) / PI);
    gm.metalness -= d_diffuse.dot(mat.albedo) / PI;
    (gm, d_n)
}

/// Background radiance behind pixel `idx`.
pub(crate) fn background_at(bg: &Background, g: &GBuffer, idx: usize) -> Rgb {
    match bg {
        Background::Color(c) => *c,
        Background::Env(env) => env.lookup_dir(Direction::new_unchecked(-g.view_dir[idx])),
    }
}

/// Intermediates of a forward render that the adjoint pass reuses.
#[derive(Debug, Clone)]
pub(crate) struct Shaded {
    pub output: RenderOutput,
    pub gbuffer: GBuffer,
    /// Unmasked shading per pixel (black where nothing is visible).
    pub shading: Vec<Rgb>,
    pub background: Vec<Rgb>,
}

/// A previous render whose Monte Carlo samples are replayed.
#[derive(Clone, Copy)]
pub(crate) struct Frozen<'a> {
    pub gbuffer: &'a GBuffer,
    pub brdf: &'a BrdfParams,
}

/// The sampling source for pixel `idx`: the frozen reference where it saw
/// the surface, the pixel itself otherwise.
pub(crate) fn sample_source(rec: &PixelRecord, mat: &Material, frozen: Option<Frozen>, idx: usize) -> SampleSource {
    if let Some(f) = frozen {
        if let Some(r) = PixelRecord::from_gbuffer(f.gbuffer, idx) {
            return SampleSource { mat: f.brdf.at(r.uv), normal: r.normal, view_dir: r.view_dir };
        }
    }
    SampleSource { mat: *mat, normal: rec.normal, view_dir: rec.view_dir }
}

pub(crate) fn pixel_stream(seed: u64, idx: usize) -> RngStream {
    RngStream::new(seed, idx as u64)
}

/// Rasterizes, shades and composes. `only` restricts shading to a pixel
/// subset; other covered pixels get zero shading.
pub(crate) fn render_shaded(
    scene: &Scene,
    backend: Backend,
    light: &PreparedLight,
    only: Option<&[bool]>,
    frozen: Option<Frozen>,
) -> Shaded {
    let g = rasterize(&scene.mesh, &scene.camera);
    let (w, h) = (g.width, g.height);
    let n = scene.render.samples.max(1);
    let seed = scene.render.seed;
    let per_pixel: Vec<(Rgb, Rgb, u32)> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let bg = background_at(&scene.background, &g, idx);
            let Some(rec) = PixelRecord::from_gbuffer(&g, idx) else {
                return (Rgb::BLACK, bg, 0);
            };
            if only.is_some_and(|o| !o[idx]) {
                return (Rgb::BLACK, bg, 0);
            }
            let mat = scene.brdf.at(rec.uv);
            match (light, backend) {
                (PreparedLight::Env(env), _) => {
                    let src = sample_source(&rec, &mat, frozen, idx);
                    (mc_estimate(&src, &mat, &rec, env, n, &pixel_stream(seed, idx)), bg, n as u32)
                }
                (PreparedLight::Sg(sg), _) => (shade_sg_material(&rec, sg, &mat), bg, 0),
            }
        })
        .collect();

    let mut image = Image::filled(w, h, Rgb::BLACK);
    let mut foreground = Image::filled(w, h, Rgb::BLACK);
    let mut samples = Grid::filled(w, h, 0u32);
    let mut shading = Vec::with_capacity(w * h);
    let mut background = Vec::with_capacity(w * h);
    for (idx, &(s, b, count)) in per_pixel.iter().enumerate() {
        let v = g.soft_mask[idx];
        foreground.data[idx] = s * v;
        image.data[idx] = s * v + b * (1.0 - v);
        samples.data[idx] = count;
        shading.push(s);
        background.push(b);
    }
    let mask = g.soft_mask();
    Shaded { output: RenderOutput { image, foreground, mask, samples }, gbuffer: g, shading, background }
}

/// Renders `scene` with the chosen backend. An environment map meeting the
/// SG backend is first fitted with the scene's lobe budget; SG lighting
/// meeting the Monte Carlo backend is rasterized to a map.
pub fn render(scene: &Scene, backend: Backend) -> Result<RenderOutput> {
    scene.validate()?;
    let light = prepare_light(scene, backend);
    Ok(render_shaded(scene, backend, &light, None, None).output)
}

/// Uniform sample without replacement of `⌈fraction · |F|⌉` foreground
/// pixels, where the foreground `F` is where the mask exceeds one half.
/// Indices come back sorted.
pub fn subsample_pixels(mask: &Mask, fraction: f64, stream: RngStream) -> Vec<usize> {
    let mut fg: Vec<usize> = (0..mask.len()).filter(|&i| mask.data[i] > 0.5).collect();
    if fg.is_empty() {
        return fg;
    }
    let fraction = fraction.clamp(f64::MIN_POSITIVE, 1.0);
    let k = ((fraction * fg.len() as f64).ceil() as usize).clamp(1, fg.len());
    let mut rng = stream;
    for i in 0..k {
        let j = i + rng.next_below((fg.len() - i) as u64) as usize;
        fg.swap(i, j);
    }
    fg.truncate(k);
    fg.sort_unstable();
    fg
}
