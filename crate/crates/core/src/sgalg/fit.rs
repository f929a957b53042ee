use rayon::prelude::*;

use super::{SgEnvLight, SgLobe, PARAMS_PER_LOBE};
use crate::assets::EquirectImage;
use crate::invopt::{adam_step, AdamState};
use crate::mathkit::{sigmoid, softplus, softplus_inv, Direction, Rgb, Vec3};

/// The step size decays geometrically to this fraction of `lr` by the end.
const FINAL_LR_FRACTION: f64 = 0.01;

/// Outcome of [`fit_env_sg_report`].
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Best mixture seen during the fit.
    pub light: SgEnvLight,
    /// Loss of the initial mixture.
    pub initial_loss: f64,
    /// Loss of `light`; never above `initial_loss`.
    pub final_loss: f64,
    /// Loss of every iterate, starting with the initial mixture.
    pub trace: Vec<f64>,
}

impl FitReport {
    /// Square root of the final normalized loss.
    pub fn relative_l2(&self) -> f64 {
        self.final_loss.sqrt()
    }

    /// Running minimum of [`FitReport::trace`].
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.trace
            .iter()
            .map(|&l| {
                best = best.min(l);
                best
            })
            .collect()
    }
}

/// `k` near-uniform directions on a Fibonacci spiral, y from top to bottom.
pub fn fibonacci_sphere(k: usize) -> Vec<Direction> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..k)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / k as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden * i as f64;
            Direction::new(Vec3::new(r * phi.cos(), y, r * phi.sin()))
        })
        .collect()
}

struct FitTarget {
    dirs: Vec<Vec3>,
    weights: Vec<f64>,
    values: Vec<Rgb>,
    width: usize,
    norm: f64,
}

impl FitTarget {
    fn new(env: &EquirectImage) -> Self {
        let mut dirs = Vec::with_capacity(env.len());
        let mut weights = Vec::with_capacity(env.len());
        for y in 0..env.height {
            let w = env.texel_solid_angle(y);
            for x in 0..env.width {
                dirs.push(env.texel_dir(x, y).vec());
                weights.push(w);
            }
        }
        let norm: f64 = env.data.iter().zip(&weights).map(|(c, w)| w * c.dot(*c)).sum();
        FitTarget {
            dirs,
            weights,
            values: env.data.clone(),
            width: env.width,
            norm: if norm > 0.0 { norm } else { 1.0 },
        }
    }

    /// Normalized loss and, when `grad` is given, its gradient with respect
    /// to `(axis, sharpness, amplitude)` per lobe.
    fn evaluate(&self, lobes: &[SgLobe], want_grad: bool) -> (f64, Vec<f64>) {
        let k = lobes.len();
        let glen = if want_grad { k * PARAMS_PER_LOBE } else { 0 };
        let rows: Vec<(f64, Vec<f64>)> = self
            .dirs
            .par_chunks(self.width)
            .zip(self.weights.par_chunks(self.width))
            .zip(self.values.par_chunks(self.width))
            .map(|((dirs, weights), values)| {
                let mut grad = vec![0.0; glen];
                let mut loss = 0.0;
                let mut g = vec![0.0; k];
                for ((&w, &wt), &target) in dirs.iter().zip(weights).zip(values) {
                    let mut pred = Rgb::BLACK;
                    for (gk, lobe) in g.iter_mut().zip(lobes) {
                        *gk = (lobe.sharpness * (lobe.axis.dot(w) - 1.0)).exp();
                        pred += lobe.amplitude * *gk;
                    }
                    let r = pred - target;
                    loss += wt * r.dot(r);
                    if want_grad {
                        for (i, lobe) in lobes.iter().enumerate() {
                            let base = i * PARAMS_PER_LOBE;
                            let d_amp = r * (2.0 * wt * g[i]);
                            let s = lobe.amplitude.dot(d_amp);
                            let cosd = lobe.axis.dot(w);
                            grad[base] += s * lobe.sharpness * w.x;
                            grad[base + 1] += s * lobe.sharpness * w.y;
                            grad[base + 2] += s * lobe.sharpness * w.z;
                            grad[base + 3] += s * (cosd - 1.0);
                            grad[base + 4] += d_amp.r;
                            grad[base + 5] += d_amp.g;
                            grad[base + 6] += d_amp.b;
                        }
                    }
                }
                (loss, grad)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; glen];
        for (l, g) in rows {
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        for v in &mut grad {
            *v /= self.norm;
        }
        (loss / self.norm, grad)
    }
}

/// Normalized, solid-angle-weighted squared error of `light` against `env`:
/// `Σ w ‖L_sg − L_env‖² / Σ w ‖L_env‖²`.
pub fn weighted_fit_loss(light: &SgEnvLight, env: &EquirectImage) -> f64 {
    FitTarget::new(env).evaluate(&light.lobes, false).0
}

/// Fits `k` lobes to `env` and returns the best mixture found.
pub fn fit_env_sg(env: &EquirectImage, k: usize, iterations: usize, lr: f64) -> SgEnvLight {
    fit_env_sg_report(env, k, iterations, lr).light
}

/// Gradient-descent (Adam) fit of a `k`-lobe mixture to `env`.
///
/// Axes start on a Fibonacci sphere, sharpness at `k/2` and every amplitude
/// at the map mean, which makes the initial mixture close to a constant.
/// Sharpness is optimized through softplus and amplitudes through their
/// logarithm, so both stay positive; axes are re-normalized after each step.
/// The step size decays geometrically over the run and the best iterate is
/// returned.
pub fn fit_env_sg_report(env: &EquirectImage, k: usize, iterations: usize, lr: f64) -> FitReport {
    assert!(k >= 1, "fit_env_sg needs at least one lobe");
    let target = FitTarget::new(env);
    let mean = env.mean();
    // log-amplitudes; channels with a zero mean start just above zero
    let floor = mean.max_component().max(1e-12) * 1e-6;

    let mut params = Vec::with_capacity(k * PARAMS_PER_LOBE);
    for axis in fibonacci_sphere(k) {
        params.extend_from_slice(&[axis.x, axis.y, axis.z, softplus_inv(k as f64 / 2.0)]);
        params.extend(mean.to_array().map(|c| c.max(floor).ln()));
    }
    let decode = |p: &[f64]| -> Vec<SgLobe> {
        p.chunks(PARAMS_PER_LOBE)
            .map(|c| SgLobe {
                axis: Direction::new(Vec3::new(c[0], c[1], c[2])),
                sharpness: softplus(c[3]),
                amplitude: Rgb::new(c[4].exp(), c[5].exp(), c[6].exp()),
            })
            .collect()
    };

    let mut state = AdamState::new(params.len());
    let mut lobes = decode(&params);
    let (initial_loss, mut grad) = target.evaluate(&lobes, true);
    let mut trace = vec![initial_loss];
    let mut best = (initial_loss, lobes.clone());

    for it in 0..iterations {
        let loss = *trace.last().expect("trace starts non-empty");
        if loss <= 0.0 {
            break;
        }
        // Descend on ln(loss): same minimizer, but the gradient does not
        // vanish as the fit tightens, which keeps Adam's steps from stalling.
        for (i, lobe) in lobes.iter().enumerate() {
            let b = i * PARAMS_PER_LOBE;
            let g = Vec3::new(grad[b], grad[b + 1], grad[b + 2]);
            let tangential = g - *lobe.axis * lobe.axis.dot(g);
            grad[b] = tangential.x;
            grad[b + 1] = tangential.y;
            grad[b + 2] = tangential.z;
            grad[b + 3] *= sigmoid(params[b + 3]);
            for c in 0..3 {
                grad[b + 4 + c] *= lobe.amplitude.channel(c);
            }
        }
        for g in &mut grad {
            *g /= loss;
        }
        let rate = lr * FINAL_LR_FRACTION.powf(it as f64 / iterations as f64);
        adam_step(&mut params, &grad, &mut state, rate).expect("fit parameter shapes agree");
        for c in params.chunks_mut(PARAMS_PER_LOBE) {
            let a = Vec3::new(c[0], c[1], c[2]).normalized();
            c[0] = a.x;
            c[1] = a.y;
            c[2] = a.z;
        }
        lobes = decode(&params);
        let (loss, g) = target.evaluate(&lobes, true);
        grad = g;
        trace.push(loss);
        if loss < best.0 {
            best = (loss, lobes.clone());
        }
    }

    FitReport { light: SgEnvLight::new(best.1), initial_loss, final_loss: best.0, trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgalg::{sg_env_to_equirect, PARAMS_PER_LOBE};

    #[test]
    fn fibonacci_points_are_unit_and_spread() {
        let pts = fibonacci_sphere(64);
        assert_eq!(pts.len(), 64);
        let mean = pts.iter().fold(Vec3::ZERO, |a, p| a + p.vec()) / 64.0;
        assert!(mean.length() < 0.05);
        for p in &pts {
            assert!((p.length() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_fit_gradient_matches_fd() {
        let env = EquirectImage::from_vec(
            16,
            8,
            (0..128).map(|i| Rgb::new((i % 7) as f64 * 0.2, (i % 5) as f64 * 0.1, 0.3)).collect(),
        )
        .unwrap();
        let t = FitTarget::new(&env);
        let lobes = vec![
            SgLobe::new(Direction::from_xyz(0.3, 0.8, 0.1), 3.0, Rgb::new(0.5, 0.2, 0.4)),
            SgLobe::new(Direction::from_xyz(-0.6, -0.2, 0.5), 7.0, Rgb::new(0.1, 0.9, 0.3)),
        ];
        let (_, g) = t.evaluate(&lobes, true);
        let eps = 1e-6;
        for i in 0..lobes.len() * PARAMS_PER_LOBE {
            let perturb = |s: f64| {
                let mut ls = lobes.clone();
                let l = &mut ls[i / PARAMS_PER_LOBE];
                match i % PARAMS_PER_LOBE {
                    c @ 0..=2 => {
                        let mut a = l.axis.to_array();
                        a[c] += s;
                        l.axis = Direction::new_unchecked(Vec3::from_array(a));
                    }
                    3 => l.sharpness += s,
                    c => *l.amplitude.channel_mut(c - 4) += s,
                }
                t.evaluate(&ls, false).0
            };
            let fd = (perturb(eps) - perturb(-eps)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn single_lobe_round_trip() {
        let axis = Direction::from_xyz(0.4, 0.5, -0.7);
        let truth = SgEnvLight::new(vec![SgLobe::new(axis, 10.0, Rgb::new(2.0, 1.5, 1.0))]);
        let env = sg_env_to_equirect(&truth, 64, 32);
        let report = fit_env_sg_report(&env, 1, 3000, 0.05);
        let fitted = report.light.lobes[0];
        assert!((fitted.sharpness / 10.0 - 1.0).abs() < 0.05, "λ = {}", fitted.sharpness);
        assert!(fitted.axis.dot(*axis).min(1.0).acos().to_degrees() < 2.0);
        assert!(report.relative_l2() < 1e-3, "rel l2 {}", report.relative_l2());
        assert!(report.final_loss <= report.initial_loss);
    }

    #[test]
    fn constant_environment_is_fit_by_flat_lobes() {
        let env = EquirectImage::filled(32, 16, Rgb::new(0.8, 0.6, 0.4));
        for k in [1, 4] {
            let report = fit_env_sg_report(&env, k, 12_000, 0.1);
            assert!(report.relative_l2() < 1e-4, "K={k}: {}", report.relative_l2());
        }
    }

    #[test]
    fn parameter_count_is_seven_per_lobe() {
        let env = EquirectImage::filled(8, 4, Rgb::WHITE);
        let light = fit_env_sg(&env, 128, 0, 0.01);
        assert_eq!(light.parameter_count(), 896);
        assert_eq!(256 * 128 * 3, 98_304);
    }

    #[test]
    fn reported_trace_has_a_non_increasing_best() {
        let env = EquirectImage::from_vec(
            16,
            8,
            (0..128).map(|i| Rgb::new(1.0 + (i % 9) as f64, 0.5, (i / 16) as f64)).collect(),
        )
        .unwrap();
        let report = fit_env_sg_report(&env, 4, 200, 0.05);
        assert_eq!(report.trace.len(), 201);
        let best = report.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*best.last().unwrap(), report.final_loss);
        assert!(report.final_loss <= report.initial_loss);
    }
}
