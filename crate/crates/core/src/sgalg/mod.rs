//! Spherical Gaussians: `G(ω; ξ, λ, μ) = μ · exp(λ (ξ·ω − 1))`.
//!
//! Products of SGs are SGs and every SG has a closed-form integral over
//! the sphere, so a BRDF lobe times a lighting lobe times a cosine lobe
//! integrates analytically. All integrals here reduce to
//! [`sphere_exp_integral`].

mod fit;

pub use fit::{fibonacci_sphere, fit_env_sg, fit_env_sg_report, weighted_fit_loss, FitReport};

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::assets::EquirectImage;
use crate::mathkit::{Direction, Rgb, Vec3};

/// Sharpness of the single-lobe approximation of `|n·ω|`.
pub const COSINE_SG_SHARPNESS: f64 = 2.133;
/// Amplitude of the single-lobe approximation of `|n·ω|`.
pub const COSINE_SG_AMPLITUDE: f64 = 1.17;

/// Real parameters per RGB lobe: axis (3), sharpness (1), amplitude (3).
pub const PARAMS_PER_LOBE: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgLobe {
    pub axis: Direction,
    pub sharpness: f64,
    pub amplitude: Rgb,
}

impl SgLobe {
    pub fn new(axis: Direction, sharpness: f64, amplitude: Rgb) -> Self {
        SgLobe { axis, sharpness, amplitude }
    }
}

/// Environment lighting as a sum of lobes.
#[derive(Debug, Clone, PartialEq)]
pub struct SgEnvLight {
    pub lobes: Vec<SgLobe>,
}

impl SgEnvLight {
    pub fn new(lobes: Vec<SgLobe>) -> Self {
        SgEnvLight { lobes }
    }

    pub fn len(&self) -> usize {
        self.lobes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lobes.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.lobes.len() * PARAMS_PER_LOBE
    }
}

#[inline]
pub fn sg_eval(lobe: &SgLobe, w: Direction) -> Rgb {
    lobe.amplitude * (lobe.sharpness * (lobe.axis.dot(*w) - 1.0)).exp()
}

/// `∫ exp(v·ω − c) dω` over the unit sphere with its gradient in `v` and `c`.
///
/// Equals `4π e^{−c} sinh|v| / |v|`; evaluated in a form that cannot
/// overflow when `c ≥ |v|`, which holds for every SG product.
#[inline]
pub fn sphere_exp_integral(v: Vec3, c: f64) -> (f64, Vec3, f64) {
    let r = v.length();
    let (value, d_r) = if r < 1e-2 {
        let r2 = r * r;
        let e = (-c).exp();
        let f = 1.0 + r2 / 6.0 + r2 * r2 / 120.0 + r2 * r2 * r2 / 5040.0;
        let fp = r / 3.0 + r * r2 / 30.0 + r * r2 * r2 / 840.0 + r * r2 * r2 * r2 / 45360.0;
        (4.0 * PI * e * f, 4.0 * PI * e * fp)
    } else {
        let e = (r - c).exp();
        let em = (-2.0 * r).exp();
        let one_minus = -(-2.0 * r).exp_m1();
        let value = 2.0 * PI * e * one_minus / r;
        let d_r = 4.0 * PI * e * ((1.0 + em) / (2.0 * r) - one_minus / (2.0 * r * r));
        (value, d_r)
    };
    let d_v = if r > 0.0 { v * (d_r / r) } else { Vec3::ZERO };
    (value, d_v, -value)
}

/// `∫ G dω = 2π μ (1 − e^{−2λ}) / λ`, with the `4πμ` limit for tiny λ.
pub fn sg_integral(lobe: &SgLobe) -> Rgb {
    let l = lobe.sharpness;
    let scale = if l < 1e-6 { 4.0 * PI } else { 2.0 * PI * -(-2.0 * l).exp_m1() / l };
    lobe.amplitude * scale
}

/// The lobe equal to the pointwise product of `a` and `b`.
pub fn sg_product(a: &SgLobe, b: &SgLobe) -> SgLobe {
    let v = *a.axis * a.sharpness + *b.axis * b.sharpness;
    let l = v.length();
    let axis = if l < 1e-9 { a.axis } else { Direction::new_unchecked(v / l) };
    let amplitude = a.amplitude * b.amplitude * (l - a.sharpness - b.sharpness).exp();
    SgLobe { axis, sharpness: l, amplitude }
}

/// `∫ G_a G_b dω`.
pub fn sg_inner(a: &SgLobe, b: &SgLobe) -> Rgb {
    let v = *a.axis * a.sharpness + *b.axis * b.sharpness;
    let (k, _, _) = sphere_exp_integral(v, a.sharpness + b.sharpness);
    a.amplitude * b.amplitude * k
}

/// Single-lobe stand-in for the clamped cosine `|n·ω|`.
pub fn cosine_sg(n: Direction) -> SgLobe {
    SgLobe { axis: n, sharpness: COSINE_SG_SHARPNESS, amplitude: Rgb::gray(COSINE_SG_AMPLITUDE) }
}

pub fn sg_env_eval(light: &SgEnvLight, w: Direction) -> Rgb {
    light.lobes.iter().map(|l| sg_eval(l, w)).sum()
}

/// Samples the mixture at every texel center of a `width × height` map.
pub fn sg_env_to_equirect(light: &SgEnvLight, width: usize, height: usize) -> EquirectImage {
    let mut img = EquirectImage::filled(width, height, Rgb::BLACK);
    let w = img.width;
    img.data.par_iter_mut().enumerate().for_each(|(i, px)| {
        let dir =
            crate::mathkit::equirect_to_dir(((i % w) as f64 + 0.5) / w as f64, ((i / w) as f64 + 0.5) / height as f64);
        *px = sg_env_eval(light, dir);
    });
    img
}

/// Adjoint of one lobe's fields.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SgLobeGrad {
    /// Gradient with respect to the axis as a free 3-vector.
    pub axis: Vec3,
    pub sharpness: f64,
    pub amplitude: Rgb,
}

impl std::ops::AddAssign for SgLobeGrad {
    fn add_assign(&mut self, o: SgLobeGrad) {
        self.axis += o.axis;
        self.sharpness += o.sharpness;
        self.amplitude += o.amplitude;
    }
}

/// `∫ Π exp(λᵢ (ξᵢ·ω − 1)) dω` over the given (axis, sharpness) pairs,
/// with the gradient of the integral in each axis and sharpness.
#[inline]
pub fn sg_product_integral<const N: usize>(lobes: [(Vec3, f64); N]) -> (f64, [(Vec3, f64); N]) {
    let mut v = Vec3::ZERO;
    let mut c = 0.0;
    for &(axis, l) in &lobes {
        v += axis * l;
        c += l;
    }
    let (k, d_v, d_c) = sphere_exp_integral(v, c);
    (k, lobes.map(|(axis, l)| (d_v * l, axis.dot(d_v) + d_c)))
}

/// Adjoint of [`sg_env_to_equirect`]: texel adjoints to lobe adjoints.
pub fn sg_env_to_equirect_vjp(light: &SgEnvLight, d_env: &EquirectImage) -> Vec<SgLobeGrad> {
    let (w, h) = (d_env.width, d_env.height);
    let rows: Vec<Vec<SgLobeGrad>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut acc = vec![SgLobeGrad::default(); light.len()];
            for x in 0..w {
                let g = d_env.data[y * w + x];
                if g == Rgb::BLACK {
                    continue;
                }
                let dir = crate::mathkit::equirect_to_dir((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
                for (a, l) in acc.iter_mut().zip(&light.lobes) {
                    let cos = l.axis.dot(*dir);
                    let e = (l.sharpness * (cos - 1.0)).exp();
                    let s = g.dot(l.amplitude) * e;
                    a.amplitude += g * e;
                    a.sharpness += s * (cos - 1.0);
                    a.axis += *dir * (s * l.sharpness);
                }
            }
            acc
        })
        .collect();
    let mut out = vec![SgLobeGrad::default(); light.len()];
    for row in rows {
        for (o, r) in out.iter_mut().zip(row) {
            *o += r;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathkit::{sphere_quadrature, RngStream};

    fn random_dir(rng: &mut RngStream) -> Direction {
        let z = 2.0 * rng.next_uniform() - 1.0;
        let phi = 2.0 * PI * rng.next_uniform();
        let r = (1.0 - z * z).sqrt();
        Direction::new(Vec3::new(r * phi.cos(), r * phi.sin(), z))
    }

    #[test]
    fn eval_examples() {
        let xi = Direction::from_xyz(0.2, 0.5, -0.3);
        let lobe = SgLobe::new(xi, 4.0, Rgb::new(1.0, 2.0, 3.0));
        assert_eq!(sg_eval(&lobe, xi), Rgb::new(1.0, 2.0, 3.0));
        let unit = SgLobe::new(xi, 1.0, Rgb::WHITE);
        assert!((sg_eval(&unit, -xi).r - (-2.0f64).exp()).abs() < 1e-15);
        assert!((sg_eval(&unit, -xi).r - 0.13534).abs() < 1e-5);
        let flat = SgLobe::new(xi, 0.0, Rgb::gray(0.7));
        assert_eq!(sg_eval(&flat, Direction::from_xyz(1.0, 0.0, 0.0)), Rgb::gray(0.7));
    }

    #[test]
    fn integral_examples() {
        let xi = Direction::from_xyz(0.3, 0.4, 0.5);
        assert!((sg_integral(&SgLobe::new(xi, 0.0, Rgb::WHITE)).r - 4.0 * PI).abs() < 1e-12);
        let one = sg_integral(&SgLobe::new(xi, 1.0, Rgb::WHITE)).r;
        assert!((one - 5.432848).abs() < 1e-6);
        let quad = sphere_quadrature(|w| sg_eval(&SgLobe::new(xi, 1.0, Rgb::WHITE), w), 128).r;
        assert!((quad / one - 1.0).abs() < 1e-4);
        let sharp = sg_integral(&SgLobe::new(xi, 100.0, Rgb::WHITE)).r;
        assert!((sharp - 0.0628319).abs() < 1e-6);
        let quad = sphere_quadrature(|w| sg_eval(&SgLobe::new(xi, 100.0, Rgb::WHITE), w), 128).r;
        assert!((quad / sharp - 1.0).abs() < 1e-4);
    }

    #[test]
    fn kernel_matches_integral_and_fd() {
        let mut rng = RngStream::new(11, 0);
        for _ in 0..50 {
            let a = random_dir(&mut rng);
            let l = 10f64.powf(4.0 * rng.next_uniform() - 3.0);
            let (k, _, _) = sphere_exp_integral(*a * l, l);
            let exact = sg_integral(&SgLobe::new(a, l, Rgb::WHITE)).r;
            assert!((k / exact - 1.0).abs() < 1e-12, "l={l}");
        }
        // gradient, including the series branch
        for (v, c) in [
            (Vec3::new(0.001, -0.002, 0.003), 0.5),
            (Vec3::new(0.3, -0.2, 0.1), 1.0),
            (Vec3::new(3.0, 1.0, -2.0), 5.0),
            (Vec3::new(0.004, 0.005, 0.0), 0.01),
        ] {
            let (_, dv, dc) = sphere_exp_integral(v, c);
            let eps = 1e-6;
            for i in 0..3 {
                let mut e = [0.0; 3];
                e[i] = eps;
                let e = Vec3::from_array(e);
                let fd = (sphere_exp_integral(v + e, c).0 - sphere_exp_integral(v - e, c).0) / (2.0 * eps);
                assert!((fd - dv[i]).abs() < 1e-7 * (1.0 + fd.abs()), "{fd} vs {}", dv[i]);
            }
            let fd = (sphere_exp_integral(v, c + eps).0 - sphere_exp_integral(v, c - eps).0) / (2.0 * eps);
            assert!((fd - dc).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn product_examples_and_pointwise_exactness() {
        let mut rng = RngStream::new(3, 1);
        let xi = Direction::from_xyz(0.0, 1.0, 0.0);
        let a = SgLobe::new(xi, 2.0, Rgb::new(1.0, 0.5, 2.0));
        let b = SgLobe::new(xi, 3.0, Rgb::new(2.0, 2.0, 0.5));
        let p = sg_product(&a, &b);
        assert!((p.sharpness - 5.0).abs() < 1e-12);
        assert_eq!(p.amplitude, Rgb::new(2.0, 1.0, 1.0));

        let anti = sg_product(&SgLobe::new(xi, 3.0, Rgb::WHITE), &SgLobe::new(-xi, 3.0, Rgb::WHITE));
        assert!(anti.sharpness.abs() < 1e-12);
        assert!((anti.amplitude.r - (-6.0f64).exp()).abs() < 1e-15);

        let ortho = sg_product(
            &SgLobe::new(Direction::from_xyz(1.0, 0.0, 0.0), 2.0, Rgb::WHITE),
            &SgLobe::new(Direction::from_xyz(0.0, 0.0, 1.0), 2.0, Rgb::WHITE),
        );
        assert!((ortho.sharpness - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((ortho.sharpness - 2.8284).abs() < 1e-4);

        for (l1, l2) in [(3.0, 3.0), (2.0, 2.0), (0.7, 40.0)] {
            let a = SgLobe::new(random_dir(&mut rng), l1, Rgb::new(0.3, 1.0, 2.0));
            let b = SgLobe::new(random_dir(&mut rng), l2, Rgb::new(1.5, 0.2, 1.0));
            let (a, b) = if l1 == 3.0 { (a, SgLobe { axis: -a.axis, ..b }) } else { (a, b) };
            let p = sg_product(&a, &b);
            for _ in 0..100 {
                let w = random_dir(&mut rng);
                let lhs = sg_eval(&p, w);
                let rhs = sg_eval(&a, w) * sg_eval(&b, w);
                for c in 0..3 {
                    let (x, y) = (lhs.channel(c), rhs.channel(c));
                    assert!((x - y).abs() <= 1e-10 * y.abs().max(1e-300), "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn inner_product_against_quadrature() {
        let mut rng = RngStream::new(8, 2);
        let c = SgLobe::new(Direction::UP, 0.0, Rgb::new(2.0, 1.0, 1.0));
        assert!((sg_inner(&c, &c).r - 16.0 * PI).abs() < 1e-12);
        for _ in 0..10 {
            let a = SgLobe::new(random_dir(&mut rng), 0.5 + 49.5 * rng.next_uniform(), Rgb::new(1.0, 0.5, 0.25));
            let b = SgLobe::new(random_dir(&mut rng), 0.5 + 49.5 * rng.next_uniform(), Rgb::new(0.2, 1.0, 3.0));
            let q = sphere_quadrature(|w| sg_eval(&a, w) * sg_eval(&b, w), 128);
            let x = sg_inner(&a, &b);
            for ch in 0..3 {
                assert!((x.channel(ch) / q.channel(ch) - 1.0).abs() < 1e-3);
            }
        }
        let n = Direction::from_xyz(0.1, 0.9, 0.3);
        let light = SgLobe::new(n, 6.0, Rgb::WHITE);
        let cs = cosine_sg(n);
        let q = sphere_quadrature(|w| sg_eval(&light, w) * sg_eval(&cs, w), 128).r;
        assert!((sg_inner(&light, &cs).r / q - 1.0).abs() < 1e-3);
    }

    #[test]
    fn cosine_lobe_constants_and_quality() {
        let n = Direction::from_xyz(0.0, 0.0, 1.0);
        let c = cosine_sg(n);
        assert_eq!(c.sharpness, 2.133);
        assert_eq!(c.amplitude, Rgb::gray(1.17));
        assert!((sg_eval(&c, n).r - 1.17).abs() < 1e-15);
        let side = sg_eval(&c, Direction::from_xyz(1.0, 0.0, 0.0)).r;
        assert!((side - 1.17 * (-2.133f64).exp()).abs() < 1e-15);
        assert!((side - 0.1386).abs() < 1e-4);
        let hemi = crate::mathkit::sphere_quadrature_scalar(|w| if w.z > 0.0 { sg_eval(&c, w).r } else { 0.0 }, 128);
        assert!((hemi / PI - 1.0).abs() < 0.15, "hemispherical integral {hemi}");
    }

    #[test]
    fn env_mixture_is_sum_of_lobes() {
        let mut rng = RngStream::new(9, 0);
        let lobes: Vec<SgLobe> = (0..32)
            .map(|_| SgLobe::new(random_dir(&mut rng), 50.0 * rng.next_uniform(), Rgb::gray(rng.next_uniform())))
            .collect();
        let light = SgEnvLight::new(lobes.clone());
        for _ in 0..100 {
            let w = random_dir(&mut rng);
            let mut manual = Rgb::BLACK;
            for l in &lobes {
                manual += sg_eval(l, w);
            }
            assert!((sg_env_eval(&light, w) - manual).max_component().abs() < 1e-12);
        }
        let single = SgEnvLight::new(vec![lobes[0]]);
        let w = random_dir(&mut rng);
        assert_eq!(sg_env_eval(&single, w), sg_eval(&lobes[0], w));
        let twice = SgEnvLight::new(vec![lobes[0], lobes[0]]);
        assert!((sg_env_eval(&twice, w) - sg_eval(&lobes[0], w) * 2.0).max_component().abs() < 1e-15);
    }

    #[test]
    fn equirect_rasterization() {
        let flat = SgEnvLight::new(vec![SgLobe::new(Direction::UP, 0.0, Rgb::WHITE)]);
        let img = sg_env_to_equirect(&flat, 16, 8);
        assert!(img.data.iter().all(|&c| c == Rgb::WHITE));

        let axis = Direction::from_xyz(0.5, 0.2, -0.6);
        let peaked = SgEnvLight::new(vec![SgLobe::new(axis, 50.0, Rgb::WHITE)]);
        let img = sg_env_to_equirect(&peaked, 64, 32);
        let best = (0..img.len()).max_by(|&a, &b| img.data[a].r.total_cmp(&img.data[b].r)).unwrap();
        let d = img.texel_dir(best % 64, best / 64);
        // within one texel of the axis
        assert!(d.dot(*axis).acos() < 2.0 * PI / 64.0);
    }

    #[test]
    fn product_integral_matches_chained_products() {
        let a = SgLobe::new(Direction::from_xyz(0.2, 0.9, 0.1), 7.0, Rgb::gray(1.0));
        let b = SgLobe::new(Direction::from_xyz(-0.3, 0.5, 0.7), 3.0, Rgb::gray(1.0));
        let c = cosine_sg(Direction::from_xyz(0.0, 1.0, 0.2));
        let chained = sg_integral(&sg_product(&sg_product(&a, &b), &c)).r / COSINE_SG_AMPLITUDE;
        let (k, _) = sg_product_integral([(*a.axis, a.sharpness), (*b.axis, b.sharpness), (*c.axis, c.sharpness)]);
        assert!((k / chained - 1.0).abs() < 1e-12);
        let (k2, _) = sg_product_integral([(*a.axis, a.sharpness), (*b.axis, b.sharpness)]);
        assert!((k2 - sg_inner(&a, &b).r).abs() < 1e-12 * k2);
    }

    #[test]
    fn product_integral_gradient_matches_fd() {
        let lobes = [(Vec3::new(0.3, 0.8, -0.2), 5.0), (Vec3::new(-0.6, 0.1, 0.7), 2.5)];
        let (_, g) = sg_product_integral(lobes);
        let h = 1e-6;
        for i in 0..2 {
            for k in 0..4 {
                let mut p = lobes;
                let mut m = lobes;
                if k < 3 {
                    let mut e = [0.0; 3];
                    e[k] = h;
                    p[i].0 += Vec3::from_array(e);
                    m[i].0 -= Vec3::from_array(e);
                } else {
                    p[i].1 += h;
                    m[i].1 -= h;
                }
                let fd = (sg_product_integral(p).0 - sg_product_integral(m).0) / (2.0 * h);
                let an = if k < 3 { g[i].0[k] } else { g[i].1 };
                assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "{i} {k}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn env_raster_vjp_is_the_adjoint() {
        let light = SgEnvLight::new(vec![
            SgLobe::new(Direction::from_xyz(0.1, 0.9, 0.3), 6.0, Rgb::new(1.0, 0.5, 0.2)),
            SgLobe::new(Direction::from_xyz(-0.7, -0.2, 0.4), 2.0, Rgb::new(0.3, 0.6, 0.9)),
        ]);
        let mut rng = RngStream::new(4, 0);
        let (w, h) = (12, 6);
        let mut d_env = EquirectImage::filled(w, h, Rgb::BLACK);
        for c in &mut d_env.data {
            *c = Rgb::new(rng.next_uniform() - 0.5, rng.next_uniform() - 0.5, rng.next_uniform() - 0.5);
        }
        let g = sg_env_to_equirect_vjp(&light, &d_env);
        let objective = |l: &SgEnvLight| -> f64 {
            sg_env_to_equirect(l, w, h).data.iter().zip(&d_env.data).map(|(a, b)| a.dot(*b)).sum()
        };
        let eps = 1e-6;
        let mut p = light.clone();
        let mut m = light.clone();
        p.lobes[1].sharpness += eps;
        m.lobes[1].sharpness -= eps;
        let fd = (objective(&p) - objective(&m)) / (2.0 * eps);
        assert!((fd - g[1].sharpness).abs() < 1e-6 * (1.0 + fd.abs()));
        let mut p = light.clone();
        let mut m = light.clone();
        p.lobes[0].amplitude.g += eps;
        m.lobes[0].amplitude.g -= eps;
        let fd = (objective(&p) - objective(&m)) / (2.0 * eps);
        assert!((fd - g[0].amplitude.g).abs() < 1e-6 * (1.0 + fd.abs()));
        let mut p = light.clone();
        let mut m = light.clone();
        p.lobes[0].axis = Direction::new_unchecked(*p.lobes[0].axis + Vec3::new(eps, 0.0, 0.0));
        m.lobes[0].axis = Direction::new_unchecked(*m.lobes[0].axis - Vec3::new(eps, 0.0, 0.0));
        let fd = (objective(&p) - objective(&m)) / (2.0 * eps);
        assert!((fd - g[0].axis.x).abs() < 1e-6 * (1.0 + fd.abs()));
    }
}
