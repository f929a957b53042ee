//! Simplified isotropic Disney-style reflectance.
//!
//! `f_r = (1 − m)·a/π + D·F·G / (4 |n·ωi| |n·ωo|)` with a GGX distribution
//! (α = β²), height-correlated Smith masking-shadowing and Schlick Fresnel
//! with `F0 = (1 − m)·0.08·s + m·a`.

mod specular_sg;

pub use specular_sg::{specular_to_sg, specular_to_sg_vjp, SpecularSgGrad};

use std::f64::consts::PI;
use std::ops::AddAssign;

use crate::assets::Image;
use crate::mathkit::{normalize_vjp, reflect, Direction, Rgb, Vec3, LUMINANCE};

/// Smallest roughness the model evaluates; lower values are clamped.
pub const ROUGHNESS_MIN: f64 = 0.01;
/// Dielectric reflectance at normal incidence for `s = 1`.
pub const DIELECTRIC_F0_SCALE: f64 = 0.08;
const F90_SCALE: f64 = 50.0;

/// Material description of a whole object: a diffuse albedo texture plus
/// global specular, roughness and metalness.
#[derive(Debug, Clone, PartialEq)]
pub struct BrdfParams {
    pub albedo: Image,
    pub specular: f64,
    pub roughness: f64,
    pub metalness: f64,
}

impl BrdfParams {
    pub fn uniform(albedo: Rgb, specular: f64, roughness: f64, metalness: f64) -> Self {
        BrdfParams { albedo: Image::filled(1, 1, albedo), specular, roughness, metalness }
    }

    /// The material seen at texture coordinate `uv` (bilinear albedo).
    pub fn at(&self, uv: [f64; 2]) -> Material {
        Material {
            albedo: self.albedo.sample_bilinear(uv[0], uv[1]),
            specular: self.specular,
            roughness: self.roughness,
            metalness: self.metalness,
        }
    }
}

/// The BRDF inputs at a single shading point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub albedo: Rgb,
    pub specular: f64,
    pub roughness: f64,
    pub metalness: f64,
}

impl Material {
    pub fn new(albedo: Rgb, specular: f64, roughness: f64, metalness: f64) -> Self {
        Material { albedo, specular, roughness, metalness }
    }

    #[inline]
    pub fn effective_roughness(&self) -> f64 {
        self.roughness.max(ROUGHNESS_MIN)
    }

    /// GGX width α = β².
    #[inline]
    pub fn alpha(&self) -> f64 {
        let b = self.effective_roughness();
        b * b
    }

    /// dα/dβ, zero where β is clamped.
    #[inline]
    fn d_alpha_d_roughness(&self) -> f64 {
        if self.roughness > ROUGHNESS_MIN {
            2.0 * self.roughness
        } else {
            0.0
        }
    }

    #[inline]
    pub fn f0(&self) -> Rgb {
        let dielectric = (1.0 - self.metalness) * DIELECTRIC_F0_SCALE * self.specular;
        Rgb::gray(dielectric) + self.albedo * self.metalness
    }

    #[inline]
    pub fn diffuse_weight(&self) -> Rgb {
        self.albedo * (1.0 - self.metalness)
    }

    /// Probability of picking the diffuse lobe in [`brdf_sample`].
    pub fn diffuse_probability(&self) -> f64 {
        let wd = self.diffuse_weight().luminance().max(0.0);
        let ws = self.f0().luminance().max(0.0);
        if wd + ws <= 0.0 {
            1.0
        } else {
            wd / (wd + ws)
        }
    }
}

/// Gradient of a scalar objective with respect to a [`Material`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MaterialGrad {
    pub albedo: Rgb,
    pub specular: f64,
    pub roughness: f64,
    pub metalness: f64,
}

impl AddAssign for MaterialGrad {
    fn add_assign(&mut self, o: MaterialGrad) {
        self.albedo += o.albedo;
        self.specular += o.specular;
        self.roughness += o.roughness;
        self.metalness += o.metalness;
    }
}

/// A direction drawn by [`brdf_sample`]. `pdf == 0` marks a null sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrdfSample {
    pub direction: Direction,
    pub pdf: f64,
    pub value: Rgb,
}

#[inline]
pub fn ggx_d(alpha: f64, nh: f64) -> f64 {
    if nh <= 0.0 {
        return 0.0;
    }
    let a2 = alpha * alpha;
    let q = nh * nh * (a2 - 1.0) + 1.0;
    a2 / (PI * q * q)
}

/// (∂D/∂α, ∂D/∂(n·h))
#[inline]
fn ggx_d_grad(alpha: f64, nh: f64) -> (f64, f64) {
    if nh <= 0.0 {
        return (0.0, 0.0);
    }
    let a2 = alpha * alpha;
    let q = nh * nh * (a2 - 1.0) + 1.0;
    let d_alpha = 2.0 * alpha / (PI * q * q) - 4.0 * alpha * a2 * nh * nh / (PI * q * q * q);
    let d_nh = -4.0 * a2 * nh * (a2 - 1.0) / (PI * q * q * q);
    (d_alpha, d_nh)
}

/// Smith Λ for GGX at cosine `c`.
#[inline]
pub fn smith_lambda(alpha: f64, c: f64) -> f64 {
    let t = 1.0 + alpha * alpha * (1.0 / (c * c) - 1.0);
    0.5 * (t.sqrt() - 1.0)
}

/// (∂Λ/∂α, ∂Λ/∂c)
#[inline]
pub(crate) fn smith_lambda_grad(alpha: f64, c: f64) -> (f64, f64) {
    let inv2 = 1.0 / (c * c) - 1.0;
    let st = (1.0 + alpha * alpha * inv2).sqrt();
    (alpha * inv2 / (2.0 * st), -alpha * alpha / (2.0 * c * c * c * st))
}

/// Height-correlated Smith masking-shadowing.
#[inline]
pub fn smith_g2(alpha: f64, ci: f64, co: f64) -> f64 {
    1.0 / (1.0 + smith_lambda(alpha, ci) + smith_lambda(alpha, co))
}

/// Grazing reflectance paired with `f0`: one for any real material, fading
/// to zero as `f0` does so that a zero `f0` reflects nothing.
#[inline]
pub fn fresnel_f90(f0_luminance: f64) -> f64 {
    (F90_SCALE * f0_luminance).clamp(0.0, 1.0)
}

#[inline]
fn fresnel_f90_grad(f0_luminance: f64) -> f64 {
    let x = F90_SCALE * f0_luminance;
    if x > 0.0 && x < 1.0 {
        F90_SCALE
    } else {
        0.0
    }
}

/// Schlick Fresnel `F0 + (F90 − F0)(1 − cos)⁵`.
#[inline]
pub fn schlick(f0: Rgb, cos: f64) -> Rgb {
    let k = (1.0 - cos).clamp(0.0, 1.0).powi(5);
    f0 + (Rgb::gray(fresnel_f90(f0.luminance())) - f0) * k
}

/// The full BRDF `f_d + f_s`. Zero when either direction is below the
/// shading hemisphere.
pub fn brdf_eval(mat: &Material, n: Direction, wi: Direction, wo: Direction) -> Rgb {
    let ni = n.dot(*wi);
    let no = n.dot(*wo);
    if ni <= 0.0 || no <= 0.0 {
        return Rgb::BLACK;
    }
    let h = (*wi + *wo).normalized();
    let nh = n.dot(h);
    let hv = h.dot(*wo);
    let alpha = mat.alpha();
    let d = ggx_d(alpha, nh);
    let g = smith_g2(alpha, ni, no);
    let f = schlick(mat.f0(), hv);
    mat.diffuse_weight() / PI + f * (d * g / (4.0 * ni * no))
}

/// Gradient of `⟨d_out, brdf_eval(mat, n, wi, wo)⟩` with `wi` held fixed.
/// Returns the material gradient and adjoints of `n` and `wo`.
pub fn brdf_eval_vjp(
    mat: &Material,
    n: Direction,
    wi: Direction,
    wo: Direction,
    d_out: Rgb,
) -> (MaterialGrad, Vec3, Vec3) {
    let mut gm = MaterialGrad::default();
    let mut d_n = Vec3::ZERO;
    let mut d_wo = Vec3::ZERO;
    let ni = n.dot(*wi);
    let no = n.dot(*wo);
    if ni <= 0.0 || no <= 0.0 {
        return (gm, d_n, d_wo);
    }
    let m = mat.metalness;
    let a = mat.albedo;

    // diffuse
    gm.albedo += d_out * ((1.0 - m) / PI);
    gm.metalness -= a.dot(d_out) / PI;

    let h_raw = *wi + *wo;
    let h = h_raw.normalized();
    let nh = n.dot(h);
    let hv = h.dot(*wo);
    let alpha = mat.alpha();
    let d = ggx_d(alpha, nh);
    let g = smith_g2(alpha, ni, no);
    let f0 = mat.f0();
    let k = (1.0 - hv).clamp(0.0, 1.0);
    let k5 = k.powi(5);
    let f90 = fresnel_f90(f0.luminance());
    let f = f0 + (Rgb::gray(f90) - f0) * k5;
    let denom = 4.0 * ni * no;
    let s = d * g / denom;

    let d_f = d_out * s;
    let d_s = f.dot(d_out);

    // Fresnel
    let d_f90 = d_f.sum() * k5;
    let d_f0 = d_f * (1.0 - k5) + Rgb::from_array(LUMINANCE) * (d_f90 * fresnel_f90_grad(f0.luminance()));
    let d_hv = if hv < 1.0 && hv > 0.0 { -5.0 * k.powi(4) * d_f.dot(Rgb::gray(f90) - f0) } else { 0.0 };
    gm.specular += (1.0 - m) * DIELECTRIC_F0_SCALE * d_f0.sum();
    gm.metalness += (a - Rgb::gray(DIELECTRIC_F0_SCALE * mat.specular)).dot(d_f0);
    gm.albedo += d_f0 * m;

    // S = D G / (4 ni no)
    let d_d = d_s * g / denom;
    let d_g = d_s * d / denom;
    let mut d_ni = -d_s * s / ni;
    let mut d_no = -d_s * s / no;
    let (dd_alpha, dd_nh) = ggx_d_grad(alpha, nh);
    let mut d_alpha = d_d * dd_alpha;
    let d_nh = d_d * dd_nh;
    let d_lambda = -g * g * d_g;
    let (la_i, lc_i) = smith_lambda_grad(alpha, ni);
    let (la_o, lc_o) = smith_lambda_grad(alpha, no);
    d_alpha += d_lambda * (la_i + la_o);
    d_ni += d_lambda * lc_i;
    d_no += d_lambda * lc_o;
    gm.roughness += d_alpha * mat.d_alpha_d_roughness();

    // geometry
    d_n += *wi * d_ni + *wo * d_no + h * d_nh;
    d_wo += *n * d_no + h * d_hv;
    let d_h = *n * d_nh + *wo * d_hv;
    d_wo += normalize_vjp(h_raw, d_h);
    (gm, d_n, d_wo)
}

/// Solid-angle density with which [`brdf_sample`] produces `wi`.
pub fn brdf_pdf(mat: &Material, n: Direction, wi: Direction, wo: Direction) -> f64 {
    let ni = n.dot(*wi);
    let no = n.dot(*wo);
    if ni <= 0.0 || no <= 0.0 {
        return 0.0;
    }
    let pd = mat.diffuse_probability();
    let pdf_d = ni / PI;
    let pdf_s = if pd < 1.0 {
        let h = (*wi + *wo).normalized();
        let nh = n.dot(h);
        let oh = wo.dot(h).abs();
        if oh > 0.0 {
            ggx_d(mat.alpha(), nh) * nh.max(0.0) / (4.0 * oh)
        } else {
            0.0
        }
    } else {
        0.0
    };
    pd * pdf_d + (1.0 - pd) * pdf_s
}

/// Draws an incident direction from the lobe mixture with three uniforms:
/// `u3` picks the lobe, `(u1, u2)` place the direction within it.
pub fn brdf_sample(mat: &Material, n: Direction, wo: Direction, u1: f64, u2: f64, u3: f64) -> BrdfSample {
    let null = BrdfSample { direction: n, pdf: 0.0, value: Rgb::BLACK };
    if n.dot(*wo) <= 0.0 {
        return null;
    }
    let pd = mat.diffuse_probability();
    let phi = 2.0 * PI * u2;
    let wi = if u3 < pd {
        let r = u1.sqrt();
        let local = Vec3::new(r * phi.cos(), r * phi.sin(), (1.0 - u1).max(0.0).sqrt());
        n.local_to_world(local)
    } else {
        let alpha = mat.alpha();
        let tan2 = alpha * alpha * u1 / (1.0 - u1);
        let cos_t = 1.0 / (1.0 + tan2).sqrt();
        let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
        let h = n.local_to_world(Vec3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t));
        reflect(*wo, h)
    };
    let Some(wi) = Direction::try_new(wi) else {
        return null;
    };
    if n.dot(*wi) <= 0.0 {
        return null;
    }
    let pdf = brdf_pdf(mat, n, wi, wo);
    if pdf <= 0.0 {
        return null;
    }
    BrdfSample { direction: wi, pdf, value: brdf_eval(mat, n, wi, wo) }
}
