use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mathkit::{dir_to_equirect, normalize_vjp, Direction, Vec3};

/// Indexed triangle mesh. Positions, normals and uvs share one index space.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// Texture coordinates, v = 0 at the top row of the texture.
    pub uvs: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Sorted, deduplicated one-ring neighbours of each vertex.
    pub adjacency: Vec<Vec<usize>>,
}

const MIN_TRIANGLE_AREA: f64 = 1e-12;

impl Mesh {
    /// Assembles a mesh and validates indices. Missing normals and uvs
    /// (empty vectors) are synthesized.
    pub fn new(
        vertices: Vec<Vec3>,
        normals: Vec<Vec3>,
        uvs: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidMesh(format!("triangle {t:?} references a vertex >= {n}")));
        }
        let mut mesh = Mesh { vertices, normals, uvs, triangles, adjacency: Vec::new() };
        if mesh.normals.len() != n {
            mesh.normals = mesh.area_weighted_normals();
        } else {
            for nrm in &mut mesh.normals {
                *nrm = nrm.normalized();
            }
        }
        if mesh.uvs.len() != n {
            mesh.uvs = mesh.spherical_uvs();
        }
        mesh.adjacency = build_adjacency(n, &mesh.triangles);
        Ok(mesh)
    }

    /// An empty mesh renders as pure background.
    pub fn empty() -> Self {
        Mesh { vertices: vec![], normals: vec![], uvs: vec![], triangles: vec![], adjacency: vec![] }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * (self.vertices[b] - self.vertices[a]).cross(self.vertices[c] - self.vertices[a]).length()
    }

    /// Unnormalized per-vertex sums of face cross products (twice the area
    /// times the face normal).
    fn raw_vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::ZERO; self.vertices.len()];
        for &[a, b, c] in &self.triangles {
            let fnrm = (self.vertices[b] - self.vertices[a]).cross(self.vertices[c] - self.vertices[a]);
            acc[a] += fnrm;
            acc[b] += fnrm;
            acc[c] += fnrm;
        }
        acc
    }

    /// Area-weighted average of incident face normals.
    pub fn area_weighted_normals(&self) -> Vec<Vec3> {
        self.raw_vertex_normals()
            .into_iter()
            .map(|n| if n.length_squared() > 0.0 { n.normalized() } else { Vec3::new(0.0, 1.0, 0.0) })
            .collect()
    }

    /// Replaces the normals with [`Mesh::area_weighted_normals`].
    pub fn recompute_normals(&mut self) {
        self.normals = self.area_weighted_normals();
    }

    /// Adjoint of [`Mesh::area_weighted_normals`]: maps normal adjoints to
    /// position adjoints, accumulated into `d_vertices`.
    pub fn area_weighted_normals_vjp(&self, d_normals: &[Vec3], d_vertices: &mut [Vec3]) {
        let raw = self.raw_vertex_normals();
        let d_raw: Vec<Vec3> = raw.iter().zip(d_normals).map(|(&r, &g)| normalize_vjp(r, g)).collect();
        for &[a, b, c] in &self.triangles {
            let e1 = self.vertices[b] - self.vertices[a];
            let e2 = self.vertices[c] - self.vertices[a];
            let g = d_raw[a] + d_raw[b] + d_raw[c];
            let d_e1 = e2.cross(g);
            let d_e2 = g.cross(e1);
            d_vertices[b] += d_e1;
            d_vertices[c] += d_e2;
            d_vertices[a] -= d_e1 + d_e2;
        }
    }

    /// Projects positions onto a sphere around the centroid and reads off
    /// latitude–longitude coordinates.
    pub fn spherical_uvs(&self) -> Vec<[f64; 2]> {
        let c = self.centroid();
        self.vertices
            .iter()
            .map(|&p| match Direction::try_new(p - c) {
                Some(d) => {
                    let (u, v) = dir_to_equirect(d);
                    [u, v]
                }
                None => [0.5, 0.5],
            })
            .collect()
    }

    pub fn centroid(&self) -> Vec3 {
        if self.vertices.is_empty() {
            return Vec3::ZERO;
        }
        self.vertices.iter().fold(Vec3::ZERO, |a, &b| a + b) / self.vertices.len() as f64
    }

    /// Geodesic sphere from a subdivided icosahedron: `10·4^s + 2` vertices.
    pub fn icosphere(subdivisions: u32, radius: f64, center: Vec3) -> Mesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalized())
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
            let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
                let key = (a.min(b), a.max(b));
                *cache.entry(key).or_insert_with(|| {
                    verts.push(((verts[a] + verts[b]) * 0.5).normalized());
                    verts.len() - 1
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for &[a, b, c] in &faces {
                let ab = midpoint(a, b, &mut verts);
                let bc = midpoint(b, c, &mut verts);
                let ca = midpoint(c, a, &mut verts);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        let normals = verts.clone();
        let positions = verts.iter().map(|&v| center + v * radius).collect();
        Mesh::new(positions, normals, vec![], faces).expect("icosphere indices are valid")
    }
}

fn build_adjacency(n: usize, triangles: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &[a, b, c] in triangles {
        for (p, q) in [(a, b), (b, c), (c, a)] {
            adj[p].push(q);
            adj[q].push(p);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// Parses a Wavefront OBJ file. Polygons are fan-triangulated.
pub fn load_obj(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), cause: e })?;
    parse_obj(&text, path)
}

type Corner = (usize, Option<usize>, Option<usize>);

pub(crate) fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let mut positions: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<[f64; 2]> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    // (position, texcoord, normal) corners per triangle, with source line.
    let mut corners: Vec<([Corner; 3], usize)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let tag = it.next().unwrap();
        let rest: Vec<&str> = it.collect();
        let floats = |n: usize| -> Result<Vec<f64>> {
            if rest.len() < n {
                return Err(parse_err(path, line_no, format!("'{tag}' needs {n} numbers")));
            }
            rest[..n]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| parse_err(path, line_no, format!("bad number {s:?}"))))
                .collect()
        };
        match tag {
            "v" => {
                let v = floats(3)?;
                positions.push(Vec3::new(v[0], v[1], v[2]));
            }
            "vt" => {
                let v = floats(2)?;
                texcoords.push([v[0], 1.0 - v[1]]);
            }
            "vn" => {
                let v = floats(3)?;
                normals.push(Vec3::new(v[0], v[1], v[2]));
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(parse_err(path, line_no, "face needs at least 3 vertices"));
                }
                let mut poly = Vec::with_capacity(rest.len());
                for tok in &rest {
                    let mut parts = tok.split('/');
                    let resolve = |s: Option<&str>, count: usize, what: &str| -> Result<Option<usize>> {
                        match s {
                            None | Some("") => Ok(None),
                            Some(s) => {
                                let i: i64 = s
                                    .parse()
                                    .map_err(|_| parse_err(path, line_no, format!("bad {what} index {s:?}")))?;
                                let idx = if i > 0 { i - 1 } else { count as i64 + i };
                                if i == 0 || idx < 0 || idx >= count as i64 {
                                    return Err(parse_err(
                                        path,
                                        line_no,
                                        format!("{what} index {i} out of range (have {count})"),
                                    ));
                                }
                                Ok(Some(idx as usize))
                            }
                        }
                    };
                    let v = resolve(parts.next(), positions.len(), "vertex")?
                        .ok_or_else(|| parse_err(path, line_no, "face corner without vertex index"))?;
                    let t = resolve(parts.next(), texcoords.len(), "texcoord")?;
                    let n = resolve(parts.next(), normals.len(), "normal")?;
                    poly.push((v, t, n));
                }
                for k in 1..poly.len() - 1 {
                    corners.push(([poly[0], poly[k], poly[k + 1]], line_no));
                }
            }
            "mtllib" | "usemtl" => {
                log::warn!("{}:{line_no}: materials are ignored", path.display());
            }
            "o" | "g" | "s" | "l" | "p" => {}
            other => {
                log::debug!("{}:{line_no}: skipping unsupported statement {other:?}", path.display());
            }
        }
    }
    if corners.is_empty() {
        return Err(Error::InvalidMesh(format!("{}: mesh has no faces", path.display())));
    }

    let all_uv = corners.iter().all(|(c, _)| c.iter().all(|k| k.1.is_some()));
    let all_nrm = corners.iter().all(|(c, _)| c.iter().all(|k| k.2.is_some()));
    let key = |k: &Corner| (k.0, if all_uv { k.1 } else { None }, if all_nrm { k.2 } else { None });

    let mut remap: HashMap<Corner, usize> = HashMap::new();
    let mut out_v = Vec::new();
    let mut out_t = Vec::new();
    let mut out_n = Vec::new();
    // `f a/a/a` files (what write_obj emits) keep their vertex order
    let aligned =
        corners.iter().all(|(c, _)| c.iter().all(|k| k.1.is_none_or(|t| t == k.0) && k.2.is_none_or(|n| n == k.0)))
            && (!all_uv || texcoords.len() == positions.len())
            && (!all_nrm || normals.len() == positions.len());
    if aligned {
        let mut used = vec![false; positions.len()];
        for (c, _) in &corners {
            for k in c {
                used[k.0] = true;
            }
        }
        if used.iter().all(|&u| u) {
            for i in 0..positions.len() {
                let kk = (i, all_uv.then_some(i), all_nrm.then_some(i));
                remap.insert(kk, i);
                out_v.push(positions[i]);
                if all_uv {
                    out_t.push(texcoords[i]);
                }
                if all_nrm {
                    out_n.push(normals[i]);
                }
            }
        }
    }
    let mut tris = Vec::with_capacity(corners.len());
    for (c, line_no) in &corners {
        let mut tri = [0usize; 3];
        for (slot, k) in tri.iter_mut().zip(c.iter()) {
            let kk = key(k);
            *slot = *remap.entry(kk).or_insert_with(|| {
                out_v.push(positions[kk.0]);
                if let Some(t) = kk.1 {
                    out_t.push(texcoords[t]);
                }
                if let Some(n) = kk.2 {
                    out_n.push(normals[n]);
                }
                out_v.len() - 1
            });
        }
        let area = 0.5 * (out_v[tri[1]] - out_v[tri[0]]).cross(out_v[tri[2]] - out_v[tri[0]]).length();
        if area <= MIN_TRIANGLE_AREA {
            return Err(parse_err(path, *line_no, format!("degenerate triangle (area {area:e})")));
        }
        tris.push(tri);
    }
    Mesh::new(out_v, out_n, out_t, tris)
}

/// Writes positions, texture coordinates and normals as OBJ text.
pub fn write_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    let mut s = String::new();
    for v in &mesh.vertices {
        writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z).unwrap();
    }
    for t in &mesh.uvs {
        writeln!(s, "vt {:?} {:?}", t[0], 1.0 - t[1]).unwrap();
    }
    for n in &mesh.normals {
        writeln!(s, "vn {:?} {:?} {:?}", n.x, n.y, n.z).unwrap();
    }
    for &[a, b, c] in &mesh.triangles {
        let (a, b, c) = (a + 1, b + 1, c + 1);
        writeln!(s, "f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}").unwrap();
    }
    fs::write(path, s).map_err(|e| Error::Io { path: path.to_path_buf(), cause: e })
}
