//! Numeric foundation shared by every stage of the renderer.
//!
//! World convention: y is up, the azimuth φ is measured from −z toward +x.
//! Latitude–longitude images put the north pole (+y) on the top row and
//! the forward axis (−z) at the horizontal center.

mod rng;
mod vector;

pub use rng::RngStream;
pub use vector::{normalize_vjp, reflect, Direction, Rgb, Vec3, LUMINANCE};

use std::f64::consts::PI;

/// Largest `f64` strictly below one.
pub const ONE_MINUS_EPSILON: f64 = 1.0 - f64::EPSILON / 2.0;

/// Maps a unit direction to equirectangular coordinates in `[0, 1)²`.
pub fn dir_to_equirect(w: Direction) -> (f64, f64) {
    // `+ 0.0` turns -0 into +0 so the poles land on u = 0.5
    let phi = (w.x + 0.0).atan2(-w.z + 0.0);
    let theta = w.y.clamp(-1.0, 1.0).acos();
    let mut u = (phi + PI) / (2.0 * PI);
    if u >= 1.0 {
        u -= 1.0;
    }
    let v = (theta / PI).min(ONE_MINUS_EPSILON);
    (u.clamp(0.0, ONE_MINUS_EPSILON), v)
}

/// Inverse of [`dir_to_equirect`]. `u` wraps modulo one, `v` is clamped.
pub fn equirect_to_dir(u: f64, v: f64) -> Direction {
    let u = u - u.floor();
    let v = v.clamp(0.0, 1.0);
    let phi = 2.0 * PI * u - PI;
    let theta = PI * v;
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Direction::new_unchecked(Vec3::new(st * sp, ct, -st * cp))
}

/// Midpoint quadrature of `f` over the unit sphere on a latitude–longitude
/// grid of `2·level` rows by `4·level` columns.
///
/// Row weights are the exact solid angle of each latitude band, so constant
/// integrands are reproduced to rounding. Error is O(1/level²) for smooth
/// `f` whose features stay away from the poles.
pub fn sphere_quadrature(f: impl Fn(Direction) -> Rgb, level: usize) -> Rgb {
    let mut acc = Rgb::BLACK;
    for_each_quadrature_node(level, |w, weight| acc += f(w) * weight);
    acc
}

/// Scalar variant of [`sphere_quadrature`].
pub fn sphere_quadrature_scalar(f: impl Fn(Direction) -> f64, level: usize) -> f64 {
    let mut acc = 0.0;
    for_each_quadrature_node(level, |w, weight| acc += f(w) * weight);
    acc
}

/// Visits every node of the [`sphere_quadrature`] grid with its weight.
pub fn for_each_quadrature_node(level: usize, mut visit: impl FnMut(Direction, f64)) {
    let level = level.max(1);
    let rows = 2 * level;
    let cols = 4 * level;
    let dphi = 2.0 * PI / cols as f64;
    for r in 0..rows {
        let t0 = PI * r as f64 / rows as f64;
        let t1 = PI * (r + 1) as f64 / rows as f64;
        let band = (t0.cos() - t1.cos()) * dphi;
        let v = (r as f64 + 0.5) / rows as f64;
        for c in 0..cols {
            let u = (c as f64 + 0.5) / cols as f64;
            visit(equirect_to_dir(u, v), band);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equirect_landmarks() {
        assert_eq!(dir_to_equirect(Direction::UP), (0.5, 0.0));
        let (u, v) = dir_to_equirect(Direction::from_xyz(0.0, -1.0, 0.0));
        assert_eq!(u, 0.5);
        assert_eq!(v, ONE_MINUS_EPSILON);
        assert_eq!(dir_to_equirect(Direction::FORWARD), (0.5, 0.5));

        let d = equirect_to_dir(0.5, 0.5);
        assert!((d.vec() - Vec3::new(0.0, 0.0, -1.0)).length() < 1e-15);
        let d = equirect_to_dir(0.5, 0.0);
        assert!((d.vec() - Vec3::new(0.0, 1.0, 0.0)).length() < 1e-15);
    }

    #[test]
    fn equirect_round_trip_away_from_poles() {
        let mut rng = RngStream::new(7, 0);
        let mut tested = 0;
        while tested < 1000 {
            let z = 2.0 * rng.next_uniform() - 1.0;
            let phi = 2.0 * PI * rng.next_uniform();
            let r = (1.0 - z * z).sqrt();
            let w = Direction::new(Vec3::new(r * phi.cos(), z, r * phi.sin()));
            if w.y.abs() > 0.999 {
                continue;
            }
            let (u, v) = dir_to_equirect(w);
            assert!((0.0..1.0).contains(&u) && (0.0..1.0).contains(&v));
            let back = equirect_to_dir(u, v);
            let ang = w.dot(*back).clamp(-1.0, 1.0).acos();
            assert!(ang < 1e-5, "angle {ang}");
            tested += 1;
        }
    }

    #[test]
    fn quadrature_reference_integrals() {
        let area = sphere_quadrature(|_| Rgb::WHITE, 64).r;
        assert!((area / (4.0 * PI) - 1.0).abs() < 1e-4);

        let cos_hemi = sphere_quadrature_scalar(|w| w.z.max(0.0), 64);
        assert!((cos_hemi / PI - 1.0).abs() < 1e-3);

        let axis = Direction::from_xyz(0.3, 0.2, -0.9);
        let sg = sphere_quadrature_scalar(|w| (axis.dot(*w) - 1.0).exp(), 128);
        let exact = 2.0 * PI * (1.0 - (-2.0f64).exp());
        assert!((exact - 5.432848).abs() < 1e-6);
        assert!((sg / exact - 1.0).abs() < 1e-4);
    }

    #[test]
    fn quadrature_error_shrinks_with_level() {
        let axis = Direction::from_xyz(0.4, -0.1, 0.6);
        let exact = 2.0 * PI * (1.0 - (-2.0f64 * 40.0).exp()) / 40.0;
        let err =
            |level| (sphere_quadrature_scalar(|w| (40.0 * (axis.dot(*w) - 1.0)).exp(), level) / exact - 1.0).abs();
        let (e8, e16, e32) = (err(8), err(16), err(32));
        assert!(e16 < e8 && e32 < e16, "{e8} {e16} {e32}");
    }

    #[test]
    fn reparameterizations_invert() {
        for x in [-40.0, -3.0, 0.0, 0.7, 12.0, 45.0] {
            assert!((softplus_inv(softplus(x)) - x).abs() < 1e-9 * (1.0 + x.abs()) || x < -30.0);
            let p = sigmoid(x);
            if x.abs() < 20.0 {
                assert!((logit(p) - x).abs() < 1e-9);
            }
        }
    }
}
