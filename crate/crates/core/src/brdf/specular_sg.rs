use std::f64::consts::PI;

use super::{
    fresnel_f90, fresnel_f90_grad, smith_lambda, smith_lambda_grad, Material, MaterialGrad, DIELECTRIC_F0_SCALE,
};
use crate::mathkit::{Direction, Rgb, Vec3, LUMINANCE};
use crate::sgalg::SgLobe;

/// Floor on `|n·ωo|` where the lobe amplitude divides by it.
const COS_FLOOR: f64 = 1e-4;
/// Guard in the sharpness warp `λ_D / (4|n·ωo| + guard)`.
const WARP_GUARD: f64 = 1e-4;

/// Adjoints of the three outputs of [`specular_to_sg`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SpecularSgGrad {
    pub axis: Vec3,
    pub sharpness: f64,
    /// Adjoint of the (monochromatic) amplitude.
    pub amplitude: f64,
}

struct Forward {
    c: f64,
    ca: f64,
    co: f64,
    alpha: f64,
    lambda_d: f64,
    mu_d: f64,
    f0l: f64,
    fresnel: f64,
    g: f64,
    axis: Vec3,
    sharpness: f64,
    amplitude: f64,
}

fn forward(mat: &Material, n: Direction, wo: Direction) -> Forward {
    let c = n.dot(*wo);
    let ca = c.abs();
    let co = ca.max(COS_FLOOR);
    let alpha = mat.alpha();
    let a2 = alpha * alpha;
    let lambda_d = 2.0 / a2;
    let mu_d = 1.0 / (PI * a2);
    let axis = *n * (2.0 * c) - *wo;
    let sharpness = lambda_d / (4.0 * ca + WARP_GUARD);
    let f0l = mat.f0().luminance();
    let fresnel = f0l + (fresnel_f90(f0l) - f0l) * (1.0 - co).powi(5);
    let g = 1.0 / (1.0 + 2.0 * smith_lambda(alpha, co));
    let amplitude = mu_d * fresnel * g / (4.0 * co * co);
    Forward { c, ca, co, alpha, lambda_d, mu_d, f0l, fresnel, g, axis, sharpness, amplitude }
}

/// Single monochromatic lobe approximating `f_s(ωi, ωo)` as a function of ωi.
///
/// The GGX distribution is written as an SG over half vectors (axis n,
/// sharpness 2/α², amplitude 1/(πα²)), warped about the mirror direction,
/// and scaled by Fresnel and masking evaluated at the lobe center.
pub fn specular_to_sg(mat: &Material, n: Direction, wo: Direction) -> SgLobe {
    let f = forward(mat, n, wo);
    SgLobe { axis: Direction::new_unchecked(f.axis), sharpness: f.sharpness, amplitude: Rgb::gray(f.amplitude) }
}

/// Pulls lobe adjoints back to the material, the normal and `ωo`.
pub fn specular_to_sg_vjp(
    mat: &Material,
    n: Direction,
    wo: Direction,
    d: SpecularSgGrad,
) -> (MaterialGrad, Vec3, Vec3) {
    let f = forward(mat, n, wo);
    let mut gm = MaterialGrad::default();
    let mut d_n = Vec3::ZERO;
    let mut d_wo = Vec3::ZERO;
    let mut d_c = 0.0;
    let mut d_ca = 0.0;
    let mut d_co = 0.0;
    let mut d_alpha = 0.0;

    // axis = 2c n − ωo
    d_n += d.axis * (2.0 * f.c);
    d_c += 2.0 * n.dot(d.axis);
    d_wo -= d.axis;

    // sharpness = λ_D / (4|c| + guard)
    let den = 4.0 * f.ca + WARP_GUARD;
    let d_lambda_d = d.sharpness / den;
    d_ca -= d.sharpness * f.lambda_d * 4.0 / (den * den);

    // amplitude = μ_D F G / (4 co²)
    let k = 1.0 / (4.0 * f.co * f.co);
    let d_mu_d = d.amplitude * f.fresnel * f.g * k;
    let d_fresnel = d.amplitude * f.mu_d * f.g * k;
    let d_g = d.amplitude * f.mu_d * f.fresnel * k;
    d_co -= 2.0 * d.amplitude * f.amplitude / f.co;

    let one_minus = 1.0 - f.co;
    let k5 = one_minus.powi(5);
    let d_f0l = d_fresnel * (1.0 - k5 + k5 * fresnel_f90_grad(f.f0l));
    d_co -= d_fresnel * 5.0 * (fresnel_f90(f.f0l) - f.f0l) * one_minus.powi(4);
    let m = mat.metalness;
    gm.specular += (1.0 - m) * DIELECTRIC_F0_SCALE * d_f0l;
    gm.metalness += (mat.albedo.luminance() - DIELECTRIC_F0_SCALE * mat.specular) * d_f0l;
    gm.albedo += Rgb::from_array(LUMINANCE) * (m * d_f0l);

    // G = 1 / (1 + 2Λ(co))
    let d_lambda = -2.0 * f.g * f.g * d_g;
    let (la, lc) = smith_lambda_grad(f.alpha, f.co);
    d_alpha += d_lambda * la;
    d_co += d_lambda * lc;

    let a3 = f.alpha * f.alpha * f.alpha;
    d_alpha += d_lambda_d * (-4.0 / a3);
    d_alpha += d_mu_d * (-2.0 / (PI * a3));
    gm.roughness += d_alpha * mat.d_alpha_d_roughness();

    if f.ca > COS_FLOOR {
        d_ca += d_co;
    }
    d_c += if f.c >= 0.0 { d_ca } else { -d_ca };
    d_n += *wo * d_c;
    d_wo += *n * d_c;
    (gm, d_n, d_wo)
}
