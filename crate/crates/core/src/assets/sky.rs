use rayon::prelude::*;

use super::EquirectImage;
use crate::mathkit::{Direction, Rgb};

/// A soft disc of light, `radiance · exp(sharpness (cos θ − 1))` around `dir`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyLight {
    pub dir: Direction,
    pub radiance: Rgb,
    pub sharpness: f64,
}

/// Analytic outdoor-style environment: a vertical sky gradient over a flat
/// ground color plus a few soft emitters.
#[derive(Debug, Clone, PartialEq)]
pub struct SkyParams {
    pub zenith: Rgb,
    pub horizon: Rgb,
    pub ground: Rgb,
    pub lights: Vec<SkyLight>,
}

impl Default for SkyParams {
    fn default() -> Self {
        SkyParams {
            zenith: Rgb::new(0.25, 0.4, 0.8),
            horizon: Rgb::new(0.8, 0.85, 0.9),
            ground: Rgb::new(0.3, 0.25, 0.2),
            lights: vec![
                SkyLight {
                    dir: Direction::from_xyz(0.5, 0.6, 0.6),
                    radiance: Rgb::new(12.0, 10.5, 8.0),
                    sharpness: 120.0,
                },
                SkyLight {
                    dir: Direction::from_xyz(-0.7, 0.3, -0.4),
                    radiance: Rgb::new(1.5, 2.0, 3.0),
                    sharpness: 8.0,
                },
            ],
        }
    }
}

impl SkyParams {
    pub fn radiance(&self, w: Direction) -> Rgb {
        let y = w.y;
        let base = if y >= 0.0 {
            let t = y.sqrt();
            self.horizon * (1.0 - t) + self.zenith * t
        } else {
            let t = (-y * 8.0).min(1.0);
            self.horizon * (1.0 - t) + self.ground * t
        };
        self.lights.iter().fold(base, |acc, l| acc + l.radiance * (l.sharpness * (l.dir.dot(*w) - 1.0)).exp())
    }
}

/// Point-samples the sky at every texel center.
pub fn procedural_sky(width: usize, height: usize, params: &SkyParams) -> EquirectImage {
    let mut img = EquirectImage::filled(width.max(1), height.max(1), Rgb::BLACK);
    let w = img.width;
    let h = img.height;
    img.data.par_iter_mut().enumerate().for_each(|(i, px)| {
        let d = crate::mathkit::equirect_to_dir(((i % w) as f64 + 0.5) / w as f64, ((i / w) as f64 + 0.5) / h as f64);
        *px = params.radiance(d);
    });
    img
}
