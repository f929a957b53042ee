use rayon::prelude::*;

use super::{is_back_face, silhouette_terms, tri_vertices, Bins, Camera, GBuffer, SILHOUETTE_CUTOFF};
use crate::assets::Mesh;
use crate::error::{Error, Result};
use crate::mathkit::{normalize_vjp, Vec3};

/// Rows of pixels whose vertex adjoints are gathered together before the
/// ordered merge.
const BLOCK_ROWS: usize = 8;

/// Adjoints of the differentiable G-buffer outputs. View directions depend
/// only on the pixel and carry no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GBufferAdjoint {
    pub width: usize,
    pub height: usize,
    pub position: Vec<Vec3>,
    pub normal: Vec<Vec3>,
    pub uv: Vec<[f64; 2]>,
    pub soft_mask: Vec<f64>,
}

impl GBufferAdjoint {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        GBufferAdjoint {
            width,
            height,
            position: vec![Vec3::ZERO; n],
            normal: vec![Vec3::ZERO; n],
            uv: vec![[0.0; 2]; n],
            soft_mask: vec![0.0; n],
        }
    }

    fn check(&self, g: &GBuffer) -> Result<()> {
        let n = g.len();
        if self.width != g.width
            || self.height != g.height
            || [self.position.len(), self.normal.len(), self.uv.len(), self.soft_mask.len()].iter().any(|&l| l != n)
        {
            return Err(Error::ShapeMismatch(format!(
                "G-buffer is {}×{}, adjoint is {}×{}",
                g.width, g.height, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Gradients with respect to per-vertex data.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrads {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
}

impl RasterGrads {
    pub fn zeros(n: usize) -> Self {
        RasterGrads { vertices: vec![Vec3::ZERO; n], normals: vec![Vec3::ZERO; n], uvs: vec![[0.0; 2]; n] }
    }
}

#[derive(Clone, Copy)]
enum Contribution {
    Vertex(usize, Vec3),
    Normal(usize, Vec3),
    Uv(usize, [f64; 2]),
}

/// Solves `Mᵀ z = y` for the 3×3 matrix with columns `c0, c1, c2`.
fn solve_transposed(c0: Vec3, c1: Vec3, c2: Vec3, y: Vec3) -> Option<Vec3> {
    // rows of Mᵀ are the columns of M
    let det = c0.dot(c1.cross(c2));
    if det.abs() < 1e-300 {
        return None;
    }
    // Cramer's rule: Mᵀ z = y with Mᵀ rows c0, c1, c2 means z = (c1×c2, c2×c0, c0×c1) y / det
    let z = (c1.cross(c2) * y.x + c2.cross(c0) * y.y + c0.cross(c1) * y.z) / det;
    Some(z)
}

/// Pulls G-buffer adjoints back to vertex positions, normals and UVs.
///
/// Covered pixels differentiate the interpolation, including the movement
/// of the barycentrics with the vertices; hard visibility is constant.
/// Uncovered pixels differentiate the soft silhouette through the closest
/// feature of every nearby face.
pub fn raster_backward(mesh: &Mesh, cam: &Camera, g: &GBuffer, adj: &GBufferAdjoint) -> Result<RasterGrads> {
    adj.check(g)?;
    if g.width != cam.width || g.height != cam.height {
        return Err(Error::ShapeMismatch("G-buffer and camera resolutions differ".into()));
    }
    let frame = cam.frame();
    let bins = Bins::build(mesh, cam, &frame, (SILHOUETTE_CUTOFF * g.sigma).sqrt());
    let w = g.width;

    let blocks: Vec<Vec<Contribution>> = (0..g.height.div_ceil(BLOCK_ROWS))
        .into_par_iter()
        .map(|block| {
            let mut out = Vec::new();
            for j in block * BLOCK_ROWS..((block + 1) * BLOCK_ROWS).min(g.height) {
                for i in 0..w {
                    let idx = j * w + i;
                    match g.triangle[idx] {
                        Some(t) => covered_pixel(mesh, cam, &frame, g, adj, i, j, t as usize, &mut out),
                        None => {
                            let d_soft = adj.soft_mask[idx];
                            if d_soft != 0.0 {
                                silhouette_pixel(mesh, cam, &frame, &bins, g.sigma, i, j, d_soft, &mut out);
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();

    let mut grads = RasterGrads::zeros(mesh.vertices.len());
    for c in blocks.into_iter().flatten() {
        match c {
            Contribution::Vertex(v, d) => grads.vertices[v] += d,
            Contribution::Normal(v, d) => grads.normals[v] += d,
            Contribution::Uv(v, d) => {
                grads.uvs[v][0] += d[0];
                grads.uvs[v][1] += d[1];
            }
        }
    }
    Ok(grads)
}

#[allow(clippy::too_many_arguments)]
fn covered_pixel(
    mesh: &Mesh,
    cam: &Camera,
    frame: &super::Frame,
    g: &GBuffer,
    adj: &GBufferAdjoint,
    i: usize,
    j: usize,
    t: usize,
    out: &mut Vec<Contribution>,
) {
    let idx = j * g.width + i;
    let (d_x, d_n, d_uv) = (adj.position[idx], adj.normal[idx], adj.uv[idx]);
    if d_x == Vec3::ZERO && d_n == Vec3::ZERO && d_uv == [0.0; 2] {
        return;
    }
    let tri = mesh.triangles[t];
    let b = g.barycentric[idx];
    let v = tri_vertices(mesh, t);
    let ray = cam.ray_dir(frame, i, j);

    let mut raw = Vec3::ZERO;
    for k in 0..3 {
        raw += mesh.normals[tri[k]] * b[k];
    }
    let sign = if is_back_face(v, ray) { -1.0 } else { 1.0 };
    let d_raw = normalize_vjp(raw, d_n * sign);

    let mut d_b = [0.0; 3];
    for k in 0..3 {
        let vi = tri[k];
        out.push(Contribution::Vertex(vi, d_x * b[k]));
        out.push(Contribution::Normal(vi, d_raw * b[k]));
        out.push(Contribution::Uv(vi, [d_uv[0] * b[k], d_uv[1] * b[k]]));
        d_b[k] = mesh.vertices[vi].dot(d_x)
            + mesh.normals[vi].dot(d_raw)
            + mesh.uvs[vi][0] * d_uv[0]
            + mesh.uvs[vi][1] * d_uv[1];
    }

    // (t, b1, b2) solve [−d | e1 | e2] y = eye − v0; perturbing the
    // vertices gives dy = −M⁻¹ Σ b_k dv_k.
    let y_bar = Vec3::new(0.0, d_b[1] - d_b[0], d_b[2] - d_b[0]);
    if let Some(z) = solve_transposed(-ray, v[1] - v[0], v[2] - v[0], y_bar) {
        for k in 0..3 {
            out.push(Contribution::Vertex(tri[k], -z * b[k]));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn silhouette_pixel(
    mesh: &Mesh,
    cam: &Camera,
    frame: &super::Frame,
    bins: &Bins,
    sigma: f64,
    i: usize,
    j: usize,
    d_soft: f64,
    out: &mut Vec<Contribution>,
) {
    let mut terms: Vec<(u32, f64, [[f64; 2]; 3])> = Vec::new();
    silhouette_terms(bins, cam.pixel_ndc(i, j), bins.faces_near(i, j), sigma, |t, e, grad| terms.push((t, e, grad)));
    let n = terms.len();
    // product of (1 − e) over all other faces, via prefix and suffix products
    let mut prefix = vec![1.0; n + 1];
    for k in 0..n {
        prefix[k + 1] = prefix[k] * (1.0 - terms[k].1);
    }
    let mut suffix = 1.0;
    for k in (0..n).rev() {
        let (t, e, grad) = terms[k];
        let others = prefix[k] * suffix;
        suffix *= 1.0 - e;
        // S = 1 − Π(1 − e), e = exp(−d²/σ)
        let d_d2 = d_soft * others * (-e / sigma);
        if d_d2 == 0.0 {
            continue;
        }
        let tri = mesh.triangles[t as usize];
        for c in 0..3 {
            let (jx, jy) = cam.project_jacobian(frame, mesh.vertices[tri[c]]);
            out.push(Contribution::Vertex(tri[c], (jx * grad[c][0] + jy * grad[c][1]) * d_d2));
        }
    }
}
