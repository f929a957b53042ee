use rayon::prelude::*;

use super::params::{chart_raw, roughness_from_param, GradRecord, LightingLayout, ParamSet, LOBE_PARAMS};
use crate::assets::{Backend, Image, Lighting, Mask, Scene};
use crate::brdf::ROUGHNESS_MIN;
use crate::error::{Error, Result};
use crate::mathkit::{normalize_vjp, sigmoid, Rgb, Vec3};
use crate::raster::{raster_backward, GBufferAdjoint};
use crate::sgalg::{sg_env_to_equirect_vjp, SgLobeGrad};
use crate::shade::{
    pixel_stream, prepare_light, render_shaded, sample_source, shade_mc_vjp, shade_sg_vjp, PixelRecord, PreparedLight,
    RenderOutput, Shaded,
};

/// Rows per block of the backward pass; partial sums are merged in block
/// order so results do not depend on scheduling.
const BLOCK_ROWS: usize = 8;

/// A forward render together with what its adjoint needs.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub backend: Backend,
    pub(crate) shaded: Shaded,
    pub(crate) light: PreparedLight,
    pub(crate) only: Option<Vec<bool>>,
}

impl Recorded {
    pub fn output(&self) -> &RenderOutput {
        &self.shaded.output
    }

    pub fn gbuffer(&self) -> &crate::raster::GBuffer {
        &self.shaded.gbuffer
    }
}

/// Forward render that keeps its intermediates. With `pixels`, only those
/// pixels are shaded; the rest of the foreground is treated as black.
pub fn render_recorded(scene: &Scene, backend: Backend, pixels: Option<&[usize]>) -> Result<Recorded> {
    scene.validate()?;
    let light = prepare_light(scene, backend);
    let only = pixels.map(|p| {
        let mut m = vec![false; scene.camera.pixel_count()];
        for &i in p {
            if i < m.len() {
                m[i] = true;
            }
        }
        m
    });
    let shaded = render_shaded(scene, backend, &light, only.as_deref(), None);
    Ok(Recorded { backend, shaded, light, only })
}

#[derive(Default)]
struct Partial {
    scalars: [f64; 3],
    albedo: Vec<Rgb>,
    env: Vec<Rgb>,
    lobes: Vec<SgLobeGrad>,
    pixels: Vec<(usize, Vec3, [f64; 2])>,
}

/// Gradient of a scalar objective whose adjoints with respect to the image
/// and the soft mask are `d_image` and `d_mask`, evaluated at the render
/// in `rec`. `params` must describe `scene`.
pub fn backward(
    scene: &Scene,
    rec: &Recorded,
    d_image: &Image,
    d_mask: Option<&Mask>,
    params: &ParamSet,
) -> Result<GradRecord> {
    let out = rec.output();
    if !d_image.same_shape(&out.image) || d_mask.is_some_and(|m| !m.same_shape(&out.mask)) {
        return Err(Error::ShapeMismatch(format!(
            "adjoint is {}×{}, render is {}×{}",
            d_image.width, d_image.height, out.image.width, out.image.height
        )));
    }
    if let (PreparedLight::Sg(_), Lighting::Env(_)) = (&rec.light, &scene.lighting) {
        return Err(Error::Validation("SG gradients need SG lighting; fit the environment map to lobes first".into()));
    }
    let g = &rec.shaded.gbuffer;
    let (w, h) = (g.width, g.height);
    let albedo = &scene.brdf.albedo;
    let seed = scene.render.seed;
    let n = scene.render.samples.max(1);

    let blocks: Vec<Partial> = (0..h.div_ceil(BLOCK_ROWS))
        .into_par_iter()
        .map(|block| {
            let mut p = Partial { albedo: vec![Rgb::BLACK; albedo.len()], ..Partial::default() };
            match &rec.light {
                PreparedLight::Env(env) => p.env = vec![Rgb::BLACK; env.len()],
                PreparedLight::Sg(l) => p.lobes = vec![SgLobeGrad::default(); l.len()],
            }
            for idx in block * BLOCK_ROWS * w..((block + 1) * BLOCK_ROWS).min(h) * w {
                let v = g.soft_mask[idx];
                let d_s = d_image.data[idx] * v;
                if d_s == Rgb::BLACK || rec.only.as_ref().is_some_and(|o| !o[idx]) {
                    continue;
                }
                let Some(pr) = PixelRecord::from_gbuffer(g, idx) else { continue };
                let mat = scene.brdf.at(pr.uv);
                let (gm, d_n) = match &rec.light {
                    PreparedLight::Env(env) => {
                        let src = sample_source(&pr, &mat, None, idx);
                        let stream = pixel_stream(seed, idx);
                        shade_mc_vjp(&src, &mat, &pr, env, n, &stream, d_s, |t, gr| p.env[t] += gr)
                    }
                    PreparedLight::Sg(l) => shade_sg_vjp(&pr, l, &mat, d_s, &mut p.lobes),
                };
                p.scalars[0] += gm.specular;
                p.scalars[1] += gm.roughness;
                p.scalars[2] += gm.metalness;
                let taps = albedo.bilinear_taps(pr.uv[0], pr.uv[1]);
                let wg = albedo.bilinear_weight_grads(pr.uv[0], pr.uv[1]);
                let mut d_uv = [0.0; 2];
                for ((t, tw), (gu, gv)) in taps.into_iter().zip(wg) {
                    p.albedo[t] += gm.albedo * tw;
                    let s = albedo.data[t].dot(gm.albedo);
                    d_uv[0] += gu * s;
                    d_uv[1] += gv * s;
                }
                p.pixels.push((idx, d_n, d_uv));
            }
            p
        })
        .collect();

    let layout = &params.layout;
    let mut grad = GradRecord::zeros(layout);
    let mut adj = GBufferAdjoint::zeros(w, h);
    let mut scalars = [0.0; 3];
    let mut d_albedo = vec![Rgb::BLACK; albedo.len()];
    let mut d_env = match &rec.light {
        PreparedLight::Env(env) => vec![Rgb::BLACK; env.len()],
        PreparedLight::Sg(_) => Vec::new(),
    };
    let mut d_lobes = match &rec.light {
        PreparedLight::Sg(l) => vec![SgLobeGrad::default(); l.len()],
        PreparedLight::Env(_) => Vec::new(),
    };
    for p in blocks {
        for k in 0..3 {
            scalars[k] += p.scalars[k];
        }
        for (a, b) in d_albedo.iter_mut().zip(&p.albedo) {
            *a += *b;
        }
        for (a, b) in d_env.iter_mut().zip(&p.env) {
            *a += *b;
        }
        for (a, b) in d_lobes.iter_mut().zip(&p.lobes) {
            *a += *b;
        }
        for (idx, d_n, d_uv) in p.pixels {
            adj.normal[idx] = d_n;
            adj.uv[idx] = d_uv;
        }
    }

    // I = V·S + (1 − V)·B
    for idx in 0..w * h {
        let d_v = d_image.data[idx].dot(rec.shaded.shading[idx] - rec.shaded.background[idx]);
        adj.soft_mask[idx] = d_v + d_mask.map_or(0.0, |m| m.data[idx]);
    }

    if !scene.mesh.is_empty() {
        let rg = raster_backward(&scene.mesh, &scene.camera, g, &adj)?;
        let mut d_vert = rg.vertices;
        scene.mesh.area_weighted_normals_vjp(&rg.normals, &mut d_vert);
        for (i, d) in d_vert.iter().enumerate() {
            grad.values[3 * i..3 * i + 3].copy_from_slice(&d.to_array());
        }
    }

    let a0 = layout.albedo().start;
    for (i, d) in d_albedo.iter().enumerate() {
        grad.values[a0 + 3 * i..a0 + 3 * i + 3].copy_from_slice(&d.to_array());
    }
    let v = &params.values;
    let ds = |p: f64| {
        let s = sigmoid(p);
        s * (1.0 - s)
    };
    grad.values[layout.specular()] = scalars[0] * ds(v[layout.specular()]);
    // roughness clamps at its floor, where it has no gradient
    let r = roughness_from_param(v[layout.roughness()]);
    grad.values[layout.roughness()] =
        if r > ROUGHNESS_MIN { scalars[1] * (1.0 - ROUGHNESS_MIN) * ds(v[layout.roughness()]) } else { 0.0 };
    grad.values[layout.metalness()] = scalars[2] * ds(v[layout.metalness()]);

    let l0 = layout.lighting().start;
    match (&layout.lighting, &scene.lighting) {
        (LightingLayout::Env { .. }, Lighting::Env(_)) => {
            for (i, d) in d_env.iter().enumerate() {
                grad.values[l0 + 3 * i..l0 + 3 * i + 3].copy_from_slice(&d.to_array());
            }
        }
        (LightingLayout::Sg { base_axes }, Lighting::Sg(light)) => {
            if let PreparedLight::Env(env) = &rec.light {
                let d_img = Image::from_vec(env.width, env.height, d_env)?;
                d_lobes = sg_env_to_equirect_vjp(light, &d_img);
            }
            for (k, (d, &base)) in d_lobes.iter().zip(base_axes).enumerate() {
                let s = l0 + k * LOBE_PARAMS;
                let raw = chart_raw(base, [v[s], v[s + 1]]);
                let d_raw = normalize_vjp(raw, d.axis);
                let (e0, e1) = base.tangent_frame();
                grad.values[s] = d_raw.dot(e0);
                grad.values[s + 1] = d_raw.dot(e1);
                grad.values[s + 2] = d.sharpness * sigmoid(v[s + 2]);
                grad.values[s + 3..s + 6].copy_from_slice(&d.amplitude.to_array());
            }
        }
        _ => return Err(Error::ShapeMismatch("parameter set does not describe this scene".into())),
    }
    Ok(grad)
}

/// Gradient of `⟨d_image, image⟩` with respect to every scene parameter.
pub fn render_backward(scene: &Scene, backend: Backend, d_image: &Image) -> Result<GradRecord> {
    let rec = render_recorded(scene, backend, None)?;
    backward(scene, &rec, d_image, None, &ParamSet::from_scene(scene))
}
