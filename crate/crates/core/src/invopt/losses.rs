use crate::assets::{Grid, Image, Mask, Mesh};
use crate::error::{Error, Result};
use crate::mathkit::{Rgb, Vec3};

/// Weights of the image, silhouette, perceptual and Laplacian terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub image: f64,
    pub mask: f64,
    pub perceptual: f64,
    pub laplacian: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { image: 20.0, mask: 5.0, perceptual: 0.5, laplacian: 5.0 }
    }
}

impl LossWeights {
    /// The weights actually used: the perceptual term drops out when no
    /// perceptual loss is registered.
    pub fn effective(&self, has_perceptual: bool) -> LossWeights {
        LossWeights { perceptual: if has_perceptual { self.perceptual } else { 0.0 }, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in
            [("image", self.image), ("mask", self.mask), ("perceptual", self.perceptual), ("laplacian", self.laplacian)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{n} weight {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Image-space loss from an external model, such as a pretrained feature
/// network. Returns the loss and its adjoint with respect to `image`.
pub trait PerceptualLoss: Send + Sync {
    fn loss(&self, image: &Image, target: &Image) -> (f64, Image);
}

/// Values of the individual terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub image: f64,
    pub mask: f64,
    pub perceptual: f64,
    pub laplacian: f64,
}

impl LossTerms {
    pub fn weighted(image: f64, mask: f64, perceptual: f64, laplacian: f64, w: &LossWeights) -> Self {
        LossTerms {
            total: w.image * image + w.mask * mask + w.perceptual * perceptual + w.laplacian * laplacian,
            image,
            mask,
            perceptual,
            laplacian,
        }
    }
}

fn same_shape<A, B>(a: &Grid<A>, b: &Grid<B>, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!("{what}: {}×{} vs {}×{}", a.width, a.height, b.width, b.height)));
    }
    Ok(())
}

/// Mean absolute difference over the pixels in `pixels` (all pixels when
/// `None`) and the three channels.
pub fn loss_image_l1(image: &Image, target: &Image, pixels: Option<&[usize]>) -> Result<f64> {
    Ok(loss_image_l1_grad(image, target, pixels)?.0)
}

/// [`loss_image_l1`] with its adjoint with respect to `image`.
pub fn loss_image_l1_grad(image: &Image, target: &Image, pixels: Option<&[usize]>) -> Result<(f64, Image)> {
    same_shape(image, target, "image loss")?;
    let all: Vec<usize>;
    let set = match pixels {
        Some(p) => p,
        None => {
            all = (0..image.len()).collect();
            &all
        }
    };
    let mut grad = Image::filled(image.width, image.height, Rgb::BLACK);
    if set.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / (3 * set.len()) as f64;
    let mut sum = 0.0;
    for &i in set {
        let d = image.data[i] - target.data[i];
        sum += d.r.abs() + d.g.abs() + d.b.abs();
        grad.data[i] += d.map(|x| {
            if x > 0.0 {
                scale
            } else if x < 0.0 {
                -scale
            } else {
                0.0
            }
        });
    }
    Ok((sum * scale, grad))
}

/// `1 − Σ Ṽ V / Σ (Ṽ + V − Ṽ V)`: one minus the soft intersection over
/// union. Two empty masks overlap perfectly.
pub fn loss_iou(mask: &Mask, target: &Mask) -> Result<f64> {
    Ok(loss_iou_grad(mask, target)?.0)
}

/// [`loss_iou`] with its adjoint with respect to `mask`.
pub fn loss_iou_grad(mask: &Mask, target: &Mask) -> Result<(f64, Mask)> {
    same_shape(mask, target, "silhouette loss")?;
    let mut inter = 0.0;
    let mut union = 0.0;
    for (&v, &t) in mask.data.iter().zip(&target.data) {
        inter += v * t;
        union += v + t - v * t;
    }
    let mut grad = Mask::filled(mask.width, mask.height, 0.0);
    if union <= 0.0 {
        return Ok((0.0, grad));
    }
    for (g, &t) in grad.data.iter_mut().zip(&target.data) {
        *g = -(t * union - inter * (1.0 - t)) / (union * union);
    }
    Ok((1.0 - inter / union, grad))
}

fn check_topology(a: &Mesh, b: &Mesh) -> Result<()> {
    if a.vertices.len() != b.vertices.len() || a.adjacency != b.adjacency {
        return Err(Error::ShapeMismatch("meshes differ in topology".into()));
    }
    Ok(())
}

fn laplacian_coords(m: &Mesh) -> Vec<Vec3> {
    m.vertices
        .iter()
        .zip(&m.adjacency)
        .map(|(&v, nb)| {
            if nb.is_empty() {
                Vec3::ZERO
            } else {
                v - nb.iter().fold(Vec3::ZERO, |a, &j| a + m.vertices[j]) / nb.len() as f64
            }
        })
        .collect()
}

/// Mean over vertices of `‖δ(current) − δ(initial)‖²` with the uniform
/// Laplacian `δᵥ = v − mean(neighbours of v)`.
pub fn loss_laplacian(current: &Mesh, initial: &Mesh) -> Result<f64> {
    Ok(loss_laplacian_grad(current, initial)?.0)
}

/// [`loss_laplacian`] with its gradient with respect to the current
/// vertex positions.
pub fn loss_laplacian_grad(current: &Mesh, initial: &Mesh) -> Result<(f64, Vec<Vec3>)> {
    check_topology(current, initial)?;
    let n = current.vertices.len();
    let mut grad = vec![Vec3::ZERO; n];
    if n == 0 {
        return Ok((0.0, grad));
    }
    let r: Vec<Vec3> =
        laplacian_coords(current).into_iter().zip(laplacian_coords(initial)).map(|(a, b)| a - b).collect();
    let loss = r.iter().map(|d| d.length_squared()).sum::<f64>() / n as f64;
    let s = 2.0 / n as f64;
    for (v, nb) in current.adjacency.iter().enumerate() {
        if nb.is_empty() {
            continue;
        }
        grad[v] += r[v] * s;
        let share = r[v] * (s / nb.len() as f64);
        for &j in nb {
            grad[j] -= share;
        }
    }
    Ok((loss, grad))
}

/// `1 − ⟨a, b⟩ / (‖a‖ ‖b‖)` over matching entries.
pub fn metric_ncc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("ncc: {} vs {} values", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Validation("ncc is undefined for an all-zero input".into()));
    }
    // one square root keeps identical inputs at exactly zero
    Ok(1.0 - dot / (saa * sbb).sqrt())
}

/// [`metric_ncc`] over all channels of two images, optionally restricted
/// to pixels where `region` is positive.
pub fn metric_ncc_images(a: &Image, b: &Image, region: Option<&Mask>) -> Result<f64> {
    same_shape(a, b, "ncc")?;
    if let Some(r) = region {
        same_shape(a, r, "ncc region")?;
    }
    let mut xa = Vec::new();
    let mut xb = Vec::new();
    for i in 0..a.len() {
        if region.is_none_or(|r| r.data[i] > 0.0) {
            xa.extend_from_slice(&a.data[i].to_array());
            xb.extend_from_slice(&b.data[i].to_array());
        }
    }
    metric_ncc(&xa, &xb)
}
