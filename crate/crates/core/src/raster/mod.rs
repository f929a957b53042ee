//! Rasterization of a triangle mesh into per-pixel G-buffers, a soft
//! silhouette for boundary gradients, and the adjoint of both.

mod backward;
mod camera;

pub use backward::{raster_backward, GBufferAdjoint, RasterGrads};
pub use camera::Camera;
pub(crate) use camera::Frame;

use rayon::prelude::*;

use crate::assets::{Mask, Mesh};
use crate::mathkit::Vec3;

/// Default silhouette softness, in squared NDC units.
pub const DEFAULT_SIGMA: f64 = 1e-4;
/// Faces farther than `sqrt(CUTOFF · σ)` from a pixel are ignored by the
/// silhouette (their contribution is below e⁻⁴⁰).
pub const SILHOUETTE_CUTOFF: f64 = 40.0;
/// Edge length in pixels of the square tiles the image is split into.
pub const TILE: usize = 16;
const NEAR: f64 = 1e-6;

/// Per-pixel surface attributes produced by [`rasterize`].
#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub position: Vec<Vec3>,
    /// Unit shading normal, turned towards the camera on back faces.
    pub normal: Vec<Vec3>,
    pub uv: Vec<[f64; 2]>,
    /// Unit direction from the surface towards the camera.
    pub view_dir: Vec<Vec3>,
    pub visibility: Vec<bool>,
    pub soft_mask: Vec<f64>,
    pub triangle: Vec<Option<u32>>,
    pub barycentric: Vec<[f64; 3]>,
    pub sigma: f64,
}

impl GBuffer {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hard_mask(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.visibility.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn soft_mask(&self) -> Mask {
        Mask { width: self.width, height: self.height, data: self.soft_mask.clone() }
    }

    pub fn covered_count(&self) -> usize {
        self.visibility.iter().filter(|&&v| v).count()
    }

    /// Interpolates a per-vertex attribute at every covered pixel.
    pub fn interpolate<const N: usize>(&self, mesh: &Mesh, attr: &[[f64; N]]) -> Vec<Option<[f64; N]>> {
        self.triangle
            .iter()
            .zip(&self.barycentric)
            .map(|(t, b)| {
                t.map(|t| {
                    let tri = mesh.triangles[t as usize];
                    std::array::from_fn(|c| (0..3).map(|k| b[k] * attr[tri[k]][c]).sum())
                })
            })
            .collect()
    }
}

/// Closest hit along a primary ray.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Hit {
    pub tri: u32,
    pub t: f64,
    pub b: [f64; 3],
}

/// Ray/triangle intersection (Möller–Trumbore). `t` is measured in units
/// of `d`.
#[inline]
pub(crate) fn intersect(o: Vec3, d: Vec3, v: [Vec3; 3]) -> Option<(f64, f64, f64)> {
    let e1 = v[1] - v[0];
    let e2 = v[2] - v[0];
    let p = d.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - v[0];
    let b1 = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&b1) {
        return None;
    }
    let q = s.cross(e1);
    let b2 = d.dot(q) * inv;
    if b2 < 0.0 || b1 + b2 > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    (t > NEAR).then_some((t, b1, b2))
}

/// Projected triangles and the per-tile lists of faces that may touch
/// each tile.
pub(crate) struct Bins {
    tiles_x: usize,
    /// NDC vertices per face, `None` when a vertex is behind the camera.
    pub projected: Vec<Option<[(f64, f64); 3]>>,
    lists: Vec<Vec<u32>>,
}

impl Bins {
    pub fn build(mesh: &Mesh, cam: &Camera, frame: &Frame, margin_ndc: f64) -> Bins {
        let tiles_x = cam.width.div_ceil(TILE);
        let tiles_y = cam.height.div_ceil(TILE);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        let projected: Vec<Option<[(f64, f64); 3]>> = mesh
            .triangles
            .iter()
            .map(|tri| {
                let mut out = [(0.0, 0.0); 3];
                for k in 0..3 {
                    let (x, y, z) = cam.project(frame, mesh.vertices[tri[k]]);
                    if z <= NEAR {
                        return None;
                    }
                    out[k] = (x, y);
                }
                Some(out)
            })
            .collect();
        let (w, h) = (cam.width as f64, cam.height as f64);
        for (t, proj) in projected.iter().enumerate() {
            let (i0, i1, j0, j1) = match proj {
                None => (0, cam.width - 1, 0, cam.height - 1),
                Some(p) => {
                    let xmin = p.iter().map(|v| v.0).fold(f64::INFINITY, f64::min) - margin_ndc;
                    let xmax = p.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max) + margin_ndc;
                    let ymin = p.iter().map(|v| v.1).fold(f64::INFINITY, f64::min) - margin_ndc;
                    let ymax = p.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max) + margin_ndc;
                    // continuous pixel coordinates, one pixel of slack
                    let px0 = (xmin + 1.0) * 0.5 * w - 1.5;
                    let px1 = (xmax + 1.0) * 0.5 * w + 0.5;
                    let py0 = (1.0 - ymax) * 0.5 * h - 1.5;
                    let py1 = (1.0 - ymin) * 0.5 * h + 0.5;
                    if px1 < 0.0 || py1 < 0.0 || px0 > w || py0 > h {
                        continue;
                    }
                    let clamp_x = |v: f64| v.clamp(0.0, w - 1.0) as usize;
                    let clamp_y = |v: f64| v.clamp(0.0, h - 1.0) as usize;
                    (clamp_x(px0.ceil()), clamp_x(px1.floor()), clamp_y(py0.ceil()), clamp_y(py1.floor()))
                }
            };
            for ty in j0 / TILE..=j1 / TILE {
                for tx in i0 / TILE..=i1 / TILE {
                    lists[ty * tiles_x + tx].push(t as u32);
                }
            }
        }
        Bins { tiles_x, projected, lists }
    }

    #[inline]
    pub fn faces_near(&self, i: usize, j: usize) -> &[u32] {
        &self.lists[(j / TILE) * self.tiles_x + i / TILE]
    }
}

/// Squared distance from `p` to a 2D triangle and its gradient with respect
/// to the three corners (zero inside).
pub(crate) fn point_triangle_distance2(p: (f64, f64), tri: &[(f64, f64); 3]) -> (f64, [[f64; 2]; 3]) {
    let cross = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let c0 = cross(tri[0], tri[1]);
    let c1 = cross(tri[1], tri[2]);
    let c2 = cross(tri[2], tri[0]);
    if (c0 >= 0.0 && c1 >= 0.0 && c2 >= 0.0) || (c0 <= 0.0 && c1 <= 0.0 && c2 <= 0.0) {
        let area = (tri[1].0 - tri[0].0) * (tri[2].1 - tri[0].1) - (tri[1].1 - tri[0].1) * (tri[2].0 - tri[0].0);
        if area != 0.0 {
            return (0.0, [[0.0; 2]; 3]);
        }
    }
    let mut best = (f64::INFINITY, [[0.0; 2]; 3]);
    for e in 0..3 {
        let (ia, ib) = (e, (e + 1) % 3);
        let (a, b) = (tri[ia], tri[ib]);
        let ab = (b.0 - a.0, b.1 - a.1);
        let len2 = ab.0 * ab.0 + ab.1 * ab.1;
        let s = if len2 > 0.0 { (((p.0 - a.0) * ab.0 + (p.1 - a.1) * ab.1) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let r = (p.0 - (a.0 + s * ab.0), p.1 - (a.1 + s * ab.1));
        let d2 = r.0 * r.0 + r.1 * r.1;
        if d2 < best.0 {
            let mut g = [[0.0; 2]; 3];
            g[ia] = [-2.0 * r.0 * (1.0 - s), -2.0 * r.1 * (1.0 - s)];
            g[ib] = [-2.0 * r.0 * s, -2.0 * r.1 * s];
            best = (d2, g);
        }
    }
    best
}

/// Whether the face's geometric normal points away from the ray origin.
#[inline]
pub(crate) fn is_back_face(v: [Vec3; 3], ray: Vec3) -> bool {
    (v[1] - v[0]).cross(v[2] - v[0]).dot(ray) > 0.0
}

#[inline]
pub(crate) fn tri_vertices(mesh: &Mesh, t: usize) -> [Vec3; 3] {
    let tri = mesh.triangles[t];
    [mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]]
}

#[derive(Debug, Clone, Copy)]
struct PixelOut {
    hit: Option<Hit>,
    position: Vec3,
    normal: Vec3,
    uv: [f64; 2],
    view_dir: Vec3,
    soft: f64,
}

/// Rasterizes with the default silhouette softness.
pub fn rasterize(mesh: &Mesh, cam: &Camera) -> GBuffer {
    rasterize_with_sigma(mesh, cam, DEFAULT_SIGMA)
}

/// Casts one primary ray per pixel center, keeps the nearest hit and
/// interpolates vertex attributes with its barycentrics (which are exact
/// perspective-correct weights). Uncovered pixels receive the soft
/// silhouette `1 − Π(1 − exp(−d²/σ))` over nearby projected faces.
pub fn rasterize_with_sigma(mesh: &Mesh, cam: &Camera, sigma: f64) -> GBuffer {
    let frame = cam.frame();
    let margin = (SILHOUETTE_CUTOFF * sigma).sqrt();
    let bins = Bins::build(mesh, cam, &frame, margin);
    let (w, h) = (cam.width, cam.height);
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);

    let tiles: Vec<Vec<(usize, PixelOut)>> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let mut out = Vec::with_capacity(TILE * TILE);
            for j in ty * TILE..((ty + 1) * TILE).min(h) {
                for i in tx * TILE..((tx + 1) * TILE).min(w) {
                    out.push((j * w + i, shade_pixel(mesh, cam, &frame, &bins, i, j, sigma)));
                }
            }
            out
        })
        .collect();

    let n = w * h;
    let mut g = GBuffer {
        width: w,
        height: h,
        position: vec![Vec3::ZERO; n],
        normal: vec![Vec3::ZERO; n],
        uv: vec![[0.0; 2]; n],
        view_dir: vec![Vec3::ZERO; n],
        visibility: vec![false; n],
        soft_mask: vec![0.0; n],
        triangle: vec![None; n],
        barycentric: vec![[0.0; 3]; n],
        sigma,
    };
    for (idx, px) in tiles.into_iter().flatten() {
        g.view_dir[idx] = px.view_dir;
        g.soft_mask[idx] = px.soft;
        if let Some(hit) = px.hit {
            g.position[idx] = px.position;
            g.normal[idx] = px.normal;
            g.uv[idx] = px.uv;
            g.visibility[idx] = true;
            g.triangle[idx] = Some(hit.tri);
            g.barycentric[idx] = hit.b;
        }
    }
    g
}

pub(crate) fn nearest_hit(mesh: &Mesh, cam: &Camera, ray: Vec3, faces: &[u32]) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for &t in faces {
        let v = tri_vertices(mesh, t as usize);
        if let Some((dist, b1, b2)) = intersect(cam.eye, ray, v) {
            if best.is_none_or(|h| dist < h.t) {
                best = Some(Hit { tri: t, t: dist, b: [1.0 - b1 - b2, b1, b2] });
            }
        }
    }
    best
}

/// Silhouette value and, per contributing face, `(face, e, d², ∂d²/∂corners)`.
pub(crate) fn silhouette_terms(
    bins: &Bins,
    ndc: (f64, f64),
    faces: &[u32],
    sigma: f64,
    mut visit: impl FnMut(u32, f64, [[f64; 2]; 3]),
) -> f64 {
    let mut keep = 1.0;
    for &t in faces {
        let Some(proj) = &bins.projected[t as usize] else { continue };
        let (d2, grad) = point_triangle_distance2(ndc, proj);
        if d2 > SILHOUETTE_CUTOFF * sigma {
            continue;
        }
        let e = (-d2 / sigma).exp();
        keep *= 1.0 - e;
        visit(t, e, grad);
    }
    1.0 - keep
}

fn shade_pixel(mesh: &Mesh, cam: &Camera, frame: &Frame, bins: &Bins, i: usize, j: usize, sigma: f64) -> PixelOut {
    let ray = cam.ray_dir(frame, i, j);
    let view_dir = -ray.normalized();
    let faces = bins.faces_near(i, j);
    let hit = nearest_hit(mesh, cam, ray, faces);
    let mut out = PixelOut { hit, position: Vec3::ZERO, normal: Vec3::ZERO, uv: [0.0; 2], view_dir, soft: 1.0 };
    match hit {
        Some(h) => {
            let tri = mesh.triangles[h.tri as usize];
            let mut n = Vec3::ZERO;
            let mut uv = [0.0; 2];
            let mut x = Vec3::ZERO;
            for k in 0..3 {
                x += mesh.vertices[tri[k]] * h.b[k];
                n += mesh.normals[tri[k]] * h.b[k];
                uv[0] += mesh.uvs[tri[k]][0] * h.b[k];
                uv[1] += mesh.uvs[tri[k]][1] * h.b[k];
            }
            let mut n = n.normalized();
            if is_back_face(tri_vertices(mesh, h.tri as usize), ray) {
                n = -n;
            }
            out.position = x;
            out.normal = n;
            out.uv = uv;
        }
        None => {
            out.soft = silhouette_terms(bins, cam.pixel_ndc(i, j), faces, sigma, |_, _, _| {});
        }
    }
    out
}

/// The soft coverage mask alone.
pub fn soft_silhouette(mesh: &Mesh, cam: &Camera, sigma: f64) -> Mask {
    rasterize_with_sigma(mesh, cam, sigma).soft_mask()
}
