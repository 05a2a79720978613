//! Zero level set extraction and per-element curvature sampling.

mod tables;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::phase_field::{CurvatureFields, PhaseField, DOMAIN_LENGTH};
use tables::TRIANGLES;

/// Triangles with less area than this are dropped.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Cube corners in the table's numbering.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs joined by each cube edge.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
    pub areas: Vec<f64>,
    pub centroids: Vec<[f64; 3]>,
}

impl TriMesh {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Isotropic scaling of every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> TriMesh {
        let scale = |p: &[f64; 3]| [p[0] * factor, p[1] * factor, p[2] * factor];
        TriMesh {
            vertices: self.vertices.iter().map(scale).collect(),
            triangles: self.triangles.clone(),
            areas: self.areas.iter().map(|a| a * factor * factor).collect(),
            centroids: self.centroids.iter().map(scale).collect(),
        }
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v[0], v[1], v[2])?;
        }
        for t in &self.triangles {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the `v` and `f` records of an OBJ file; faces with more than three
    /// corners are fanned, texture/normal indices are ignored.
    pub fn read_obj(path: &Path) -> Result<TriMesh> {
        let mut text = String::new();
        crate::error::open_artifact(path)?.read_to_string(&mut text)?;
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let bad = || {
                Error::InvalidInput(format!(
                    "{}:{}: malformed OBJ record",
                    path.display(),
                    lineno + 1
                ))
            };
            match parts.next() {
                Some("v") => {
                    let coords: Vec<f64> = parts
                        .take(3)
                        .map(|s| s.parse::<f64>().map_err(|_| bad()))
                        .collect::<Result<_>>()?;
                    if coords.len() != 3 {
                        return Err(bad());
                    }
                    vertices.push([coords[0], coords[1], coords[2]]);
                }
                Some("f") => {
                    let idx: Vec<usize> = parts
                        .map(|s| {
                            let head = s.split('/').next().unwrap_or("");
                            head.parse::<usize>()
                                .ok()
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                                .ok_or_else(bad)
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() < 3 {
                        return Err(bad());
                    }
                    for w in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[w], idx[w + 1]]);
                    }
                }
                _ => {}
            }
        }
        if faces.iter().flatten().any(|&i| i >= vertices.len()) {
            return Err(Error::InvalidInput(format!(
                "{}: face index out of range",
                path.display()
            )));
        }
        Ok(TriMesh::from_faces(vertices, faces))
    }

    /// Keeps the triangles whose centroid satisfies `keep`; vertices are left
    /// untouched.
    pub fn retain_by_centroid(&mut self, keep: impl Fn(&[f64; 3]) -> bool) {
        let mut t = 0;
        for i in 0..self.triangles.len() {
            if keep(&self.centroids[i]) {
                self.triangles.swap(t, i);
                self.areas.swap(t, i);
                self.centroids.swap(t, i);
                t += 1;
            }
        }
        self.triangles.truncate(t);
        self.areas.truncate(t);
        self.centroids.truncate(t);
    }

    /// Builds a mesh from raw faces, computing areas and centroids and dropping
    /// degenerate triangles.
    pub fn from_faces(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> TriMesh {
        let mut mesh = TriMesh {
            vertices,
            ..Default::default()
        };
        for f in faces {
            let p = [
                mesh.vertices[f[0]],
                mesh.vertices[f[1]],
                mesh.vertices[f[2]],
            ];
            let area = triangle_area(&p);
            if area > MIN_TRIANGLE_AREA {
                mesh.triangles.push(f);
                mesh.areas.push(area);
                mesh.centroids.push(centroid(&p));
            }
        }
        mesh
    }
}

fn triangle_area(p: &[[f64; 3]; 3]) -> f64 {
    let a = [p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]];
    let b = [p[2][0] - p[0][0], p[2][1] - p[0][1], p[2][2] - p[0][2]];
    let c = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

fn centroid(p: &[[f64; 3]; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (d, slot) in out.iter_mut().enumerate() {
        *slot = (p[0][d] + p[1][d] + p[2][d]) / 3.0;
    }
    out
}

/// Triangulates the `iso` level set of the periodic field. The grid is padded
/// with one wrapped layer, so vertices span `[0, 100]³` and the surface closes
/// up to the periodic identification of opposite faces.
pub fn marching_cubes(u: &PhaseField, iso: f64) -> Result<TriMesh> {
    extract(u, iso, u.n())
}

/// Triangulates the `iso` level set without wrapping: only the `(n−1)³` cells
/// between grid points are visited, so the surface is open at the box faces.
pub fn marching_cubes_open(u: &PhaseField, iso: f64) -> Result<TriMesh> {
    extract(u, iso, u.n() - 1)
}

fn extract(u: &PhaseField, iso: f64, cells: usize) -> Result<TriMesh> {
    let n = u.n();
    let h = u.spacing();
    let m = n + 1;
    let node = |i: usize, j: usize, k: usize| i + m * (j + m * k);
    // Vertex index per (padded node, axis) edge, created on first use.
    let mut edge_vertex = vec![u32::MAX; m * m * m * 3];
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces = Vec::new();

    for k in 0..cells {
        for j in 0..cells {
            for i in 0..cells {
                let mut vals = [0.0; 8];
                let mut mask = 0usize;
                for (c, o) in CORNERS.iter().enumerate() {
                    vals[c] = u.get((i + o[0]) % n, (j + o[1]) % n, (k + o[2]) % n);
                    if vals[c] < iso {
                        mask |= 1 << c;
                    }
                }
                if mask == 0 || mask == 255 {
                    continue;
                }
                let row = &TRIANGLES[mask];
                let mut t = 0;
                while t < 16 && row[t] >= 0 {
                    let mut tri = [0usize; 3];
                    for (slot, &e) in tri.iter_mut().zip(&row[t..t + 3]) {
                        let [a, b] = EDGES[e as usize];
                        let (ca, cb) = (CORNERS[a], CORNERS[b]);
                        // The edge runs from its lower corner along one axis.
                        let axis = (0..3)
                            .find(|&d| ca[d] != cb[d])
                            .expect("edge spans one axis");
                        let (lo, lo_val, hi_val) = if ca[axis] < cb[axis] {
                            (ca, vals[a], vals[b])
                        } else {
                            (cb, vals[b], vals[a])
                        };
                        let key = node(i + lo[0], j + lo[1], k + lo[2]) * 3 + axis;
                        if edge_vertex[key] == u32::MAX {
                            let frac = (iso - lo_val) / (hi_val - lo_val);
                            let mut p = [
                                (i + lo[0]) as f64 * h,
                                (j + lo[1]) as f64 * h,
                                (k + lo[2]) as f64 * h,
                            ];
                            p[axis] += frac * h;
                            edge_vertex[key] = vertices.len() as u32;
                            vertices.push(p);
                        }
                        *slot = edge_vertex[key] as usize;
                    }
                    faces.push(tri);
                    t += 3;
                }
            }
        }
    }
    let mesh = TriMesh::from_faces(vertices, faces);
    if mesh.is_empty() {
        return Err(Error::EmptySurface);
    }
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureSample {
    pub k1: f64,
    pub k2: f64,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurvatureSamples {
    pub samples: Vec<CurvatureSample>,
}

impl CurvatureSamples {
    /// Samples with `k1 >= k2` enforced by swapping.
    pub fn from_triples(triples: impl IntoIterator<Item = (f64, f64, f64)>) -> Self {
        let samples = triples
            .into_iter()
            .map(|(a, b, area)| CurvatureSample {
                k1: a.max(b),
                k2: a.min(b),
                area,
            })
            .collect();
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.samples.iter().map(|s| s.area).sum()
    }

    /// Similarity transform of the underlying geometry by `factor`: areas
    /// scale by `factor²`, curvatures by `1/factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| CurvatureSample {
                    k1: s.k1 / factor,
                    k2: s.k2 / factor,
                    area: s.area * factor * factor,
                })
                .collect(),
        }
    }

    /// `u64` count, then `(k1, k2, area)` as little-endian `f64` triples.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        for s in &self.samples {
            for v in [s.k1, s.k2, s.area] {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(crate::error::open_artifact(path)?);
        let mut word = [0u8; 8];
        input.read_exact(&mut word)?;
        let count = u64::from_le_bytes(word) as usize;
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != count * 24 {
            return Err(Error::Shape {
                expected: count * 24,
                got: bytes.len(),
            });
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self::from_triples(
            vals.chunks_exact(3).map(|t| (t[0], t[1], t[2])),
        ))
    }
}

/// Principal curvatures at each triangle centroid by trilinear interpolation of
/// the curvature fields. Masked corners are left out and the remaining
/// weights renormalized; when all eight are masked the nearest valid cell is
/// used.
pub fn element_curvatures(mesh: &TriMesh, fields: &CurvatureFields) -> Result<CurvatureSamples> {
    if mesh.is_empty() {
        return Err(Error::EmptySurface);
    }
    let n = fields.n;
    if fields.valid_count() == 0 {
        return Err(Error::EmptySurface);
    }
    let h = DOMAIN_LENGTH / n as f64;
    let index = |i: usize, j: usize, k: usize| i + n * (j + n * k);
    let triples = mesh.centroids.iter().zip(&mesh.areas).map(|(c, &area)| {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for d in 0..3 {
            let x = c[d] / h;
            let f = x.floor();
            base[d] = (f as i64).rem_euclid(n as i64) as usize;
            frac[d] = x - f;
        }
        let (mut k1, mut k2, mut wsum) = (0.0, 0.0, 0.0);
        for o in CORNERS {
            let w: f64 = (0..3)
                .map(|d| if o[d] == 1 { frac[d] } else { 1.0 - frac[d] })
                .product();
            let idx = index(
                (base[0] + o[0]) % n,
                (base[1] + o[1]) % n,
                (base[2] + o[2]) % n,
            );
            if fields.mask[idx] {
                k1 += w * fields.k1[idx];
                k2 += w * fields.k2[idx];
                wsum += w;
            }
        }
        if wsum > 0.0 {
            (k1 / wsum, k2 / wsum, area)
        } else {
            let idx = nearest_valid(fields, base);
            (fields.k1[idx], fields.k2[idx], area)
        }
    });
    Ok(CurvatureSamples::from_triples(triples))
}

/// Closest valid cell to `start` in periodic Chebyshev shells, ties broken by
/// Euclidean distance and then by index.
fn nearest_valid(fields: &CurvatureFields, start: [usize; 3]) -> usize {
    let n = fields.n as i64;
    for r in 1..=n / 2 + 1 {
        let mut best: Option<(i64, usize)> = None;
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                        continue;
                    }
                    let w = |s: usize, d: i64| (s as i64 + d).rem_euclid(n) as usize;
                    let idx =
                        w(start[0], dx) + fields.n * (w(start[1], dy) + fields.n * w(start[2], dz));
                    if fields.mask[idx] {
                        let d2 = dx * dx + dy * dy + dz * dz;
                        if best.is_none_or(|b| (d2, idx) < b) {
                            best = Some((d2, idx));
                        }
                    }
                }
            }
        }
        if let Some((_, idx)) = best {
            return idx;
        }
    }
    // Only reached when the field has no valid cell, which callers exclude.
    fields
        .mask
        .iter()
        .position(|&m| m)
        .expect("at least one valid cell")
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalized(a: [f64; 3]) -> [f64; 3] {
    let l = dot(&a, &a).sqrt();
    if l > 0.0 {
        [a[0] / l, a[1] / l, a[2] / l]
    } else {
        a
    }
}

/// Principal curvatures per triangle estimated from the mesh alone.
///
/// Vertex normals are area-weighted face normals; on each face the second
/// fundamental form is the least-squares fit of the normal change along the
/// three edges, and the reported value averages the face tensors around its
/// three vertices. Counter-clockwise faces are taken to face away from the
/// enclosed phase, the convention of [`marching_cubes`], so a closed sphere
/// has positive curvatures.
pub fn mesh_curvatures(mesh: &TriMesh) -> Result<CurvatureSamples> {
    if mesh.is_empty() {
        return Err(Error::EmptySurface);
    }
    let mut vn = vec![[0.0; 3]; mesh.vertices.len()];
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.vertices[i]);
        let fnrm = cross(&sub(&b, &a), &sub(&c, &a));
        for &i in t {
            for d in 0..3 {
                vn[i][d] += fnrm[d];
            }
        }
    }
    let vn: Vec<[f64; 3]> = vn.into_iter().map(normalized).collect();
    // Per-face tensors in ambient coordinates, then smoothed through the vertices.
    let mut vt = vec![[[0.0; 3]; 3]; mesh.vertices.len()];
    let mut vw = vec![0.0; mesh.vertices.len()];
    let mut frames = Vec::with_capacity(mesh.len());
    for (t, &area) in mesh.triangles.iter().zip(&mesh.areas) {
        let p = t.map(|i| mesh.vertices[i]);
        let nrm = t.map(|i| vn[i]);
        let fnrm = normalized(cross(&sub(&p[1], &p[0]), &sub(&p[2], &p[0])));
        let eu = normalized(sub(&p[1], &p[0]));
        let ev = cross(&fnrm, &eu);
        // Normal equations for II = [[a, b], [b, c]] with II·(eu, ev) = (du, dv).
        let mut m = [[0.0; 3]; 3];
        let mut r = [0.0; 3];
        for (s, e) in [(1, 2), (2, 0), (0, 1)] {
            let edge = sub(&p[e], &p[s]);
            let dn = sub(&nrm[e], &nrm[s]);
            let (x, y) = (dot(&edge, &eu), dot(&edge, &ev));
            let (du, dv) = (dot(&dn, &eu), dot(&dn, &ev));
            let rows = [([x, y, 0.0], du), ([0.0, x, y], dv)];
            for (row, rhs) in rows {
                for i in 0..3 {
                    for j in 0..3 {
                        m[i][j] += row[i] * row[j];
                    }
                    r[i] += row[i] * rhs;
                }
            }
        }
        let [a, b, c] = solve3(m, r);
        let tensor: [[f64; 3]; 3] = std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                a * eu[i] * eu[j] + b * (eu[i] * ev[j] + ev[i] * eu[j]) + c * ev[i] * ev[j]
            })
        });
        for &v in t {
            vw[v] += area;
            for i in 0..3 {
                for j in 0..3 {
                    vt[v][i][j] += area * tensor[i][j];
                }
            }
        }
        frames.push((eu, ev));
    }
    let triples = mesh.triangles.iter().zip(&mesh.areas).zip(frames).map(|((t, &area), (eu, ev))| {
        let mut tensor = [[0.0; 3]; 3];
        for &v in t {
            if vw[v] > 0.0 {
                for i in 0..3 {
                    for j in 0..3 {
                        tensor[i][j] += vt[v][i][j] / (3.0 * vw[v]);
                    }
                }
            }
        }
        let apply = |x: &[f64; 3]| -> [f64; 3] { std::array::from_fn(|i| dot(&tensor[i], x)) };
        let a = dot(&eu, &apply(&eu));
        let b = 0.5 * (dot(&eu, &apply(&ev)) + dot(&ev, &apply(&eu)));
        let c = dot(&ev, &apply(&ev));
        let mean = 0.5 * (a + c);
        let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        (mean + disc, mean - disc, area)
    });
    Ok(CurvatureSamples::from_triples(triples))
}

/// Cramer's rule; a singular system yields zeros.
fn solve3(m: [[f64; 3]; 3], r: [f64; 3]) -> [f64; 3] {
    let det = |m: &[[f64; 3]; 3]| dot(&m[0], &cross(&m[1], &m[2]));
    let d = det(&m);
    if d.abs() < 1e-300 {
        return [0.0; 3];
    }
    std::array::from_fn(|col| {
        let mut mc = m;
        for (row, &v) in mc.iter_mut().zip(&r) {
            row[col] = v;
        }
        det(&mc) / d
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_field::{level_set_curvatures, SolverConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;
    use std::f64::consts::PI;

    fn sphere(n: usize, radius: f64) -> PhaseField {
        let eps = SolverConfig::default().epsilon_for(DOMAIN_LENGTH / n as f64);
        PhaseField::from_fn(n, |x, y, z| {
            let r = ((x - 50.0).powi(2) + (y - 50.0).powi(2) + (z - 50.0).powi(2)).sqrt();
            ((radius - r) / (2f64.sqrt() * eps)).tanh()
        })
    }

    fn slab(n: usize) -> PhaseField {
        let eps = SolverConfig::default().epsilon_for(DOMAIN_LENGTH / n as f64);
        PhaseField::from_fn(n, |_, _, z| {
            let d = 25.0 - (z - 50.0).abs();
            (d / (2f64.sqrt() * eps)).tanh()
        })
    }

    #[test]
    fn sphere_area() {
        let mesh = marching_cubes(&sphere(64, 20.0), 0.0).unwrap();
        let exact = 4.0 * PI * 400.0;
        assert!((mesh.total_area() - exact).abs() <= 0.02 * exact);
    }

    #[test]
    fn slab_area() {
        let mesh = marching_cubes(&slab(32), 0.0).unwrap();
        assert!((mesh.total_area() - 2e4).abs() <= 0.01 * 2e4);
    }

    #[test]
    fn constant_field_has_no_surface() {
        let u = PhaseField::constant(8, 0.5);
        assert!(matches!(marching_cubes(&u, 0.0), Err(Error::EmptySurface)));
    }

    #[test]
    fn area_error_shrinks_with_resolution() {
        let exact = 4.0 * PI * 400.0;
        let err = |n| (marching_cubes(&sphere(n, 20.0), 0.0).unwrap().total_area() - exact).abs();
        assert!(err(64) < err(32));
    }

    #[test]
    fn open_extraction_stops_at_box_faces() {
        // A slab crossing the whole box: the periodic mesh closes over the
        // seam, the open one loses one cell layer per face.
        let u = slab(32);
        let periodic = marching_cubes(&u, 0.0).unwrap();
        let mut open = marching_cubes_open(&u, 0.0).unwrap();
        let h = u.spacing();
        let expected = 2.0 * (DOMAIN_LENGTH - h) * (DOMAIN_LENGTH - h);
        assert!((open.total_area() - expected).abs() < 1e-6 * expected);
        assert!(open.total_area() < periodic.total_area());
        open.retain_by_centroid(|c| c[0] > 50.0);
        assert!(open.centroids.iter().all(|c| c[0] > 50.0));
        assert_eq!(open.areas.len(), open.triangles.len());
    }

    #[test]
    fn mesh_curvatures_of_sphere() {
        for radius in [15.0, 25.0] {
            let mesh = marching_cubes(&sphere(64, radius), 0.0).unwrap();
            let s = mesh_curvatures(&mesh).unwrap();
            let total = s.total_area();
            let mean = |f: fn(&CurvatureSample) -> f64| {
                s.samples.iter().map(|x| f(x) * x.area).sum::<f64>() / total
            };
            assert!((mean(|x| 0.5 * (x.k1 + x.k2)) * radius - 1.0).abs() < 0.03);
            assert!((mean(|x| x.k1) * radius - 1.0).abs() < 0.12);
            assert!((mean(|x| x.k2) * radius - 1.0).abs() < 0.12);
        }
    }

    #[test]
    fn mesh_curvatures_flip_with_orientation() {
        let mut mesh = marching_cubes(&sphere(32, 20.0), 0.0).unwrap();
        mesh.triangles.iter_mut().for_each(|t| t.swap(1, 2));
        let s = mesh_curvatures(&mesh).unwrap();
        let mean = s.samples.iter().map(|x| (x.k1 + x.k2) * x.area).sum::<f64>() / s.total_area();
        assert!((mean * 20.0 + 2.0).abs() < 0.2);
    }

    #[test]
    fn mesh_curvatures_of_flat_sheet_vanish() {
        let mesh = marching_cubes(&slab(16), 0.0).unwrap();
        let s = mesh_curvatures(&mesh).unwrap();
        assert!(s.samples.iter().all(|x| x.k1.abs() < 1e-9 && x.k2.abs() < 1e-9));
    }

    #[test]
    fn vertices_stay_in_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals = (0..12 * 12 * 12)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let mesh = marching_cubes(&PhaseField::from_values(12, vals).unwrap(), 0.0).unwrap();
        for v in &mesh.vertices {
            assert!(v.iter().all(|&c| (0.0..=DOMAIN_LENGTH).contains(&c)));
        }
        assert!(mesh.areas.iter().all(|&a| a > MIN_TRIANGLE_AREA));
    }

    #[test]
    fn random_surface_is_closed_up_to_periodicity() {
        // Every edge belongs to exactly two triangles once vertices on opposite
        // faces of the box are identified.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 10;
        let vals = (0..n * n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mesh = marching_cubes(&PhaseField::from_values(n, vals).unwrap(), 0.0).unwrap();
        let key = |v: usize| {
            let p = mesh.vertices[v];
            let q = |c: f64| ((c.rem_euclid(DOMAIN_LENGTH)) * 1e6).round() as i64;
            (q(p[0]), q(p[1]), q(p[2]))
        };
        let mut count: HashMap<_, usize> = HashMap::new();
        for t in &mesh.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let (ka, kb) = (key(a), key(b));
                *count
                    .entry(if ka < kb { (ka, kb) } else { (kb, ka) })
                    .or_default() += 1;
            }
        }
        assert!(count.values().all(|&c| c == 2));
    }

    #[test]
    fn sphere_element_curvatures() {
        let cfg = SolverConfig::default();
        for radius in [10.0, 20.0, 30.0] {
            let u = sphere(64, radius);
            let mesh = marching_cubes(&u, 0.0).unwrap();
            let samples = element_curvatures(&mesh, &level_set_curvatures(&u, &cfg)).unwrap();
            for s in &samples.samples {
                assert!(s.k1 >= s.k2);
                for k in [s.k1, s.k2] {
                    assert!((k * radius - 1.0).abs() <= 0.05, "R={radius} k={k}");
                }
            }
            assert_eq!(samples.total_area(), mesh.total_area());
        }
    }

    #[test]
    fn slab_element_curvatures_vanish() {
        let u = slab(32);
        let mesh = marching_cubes(&u, 0.0).unwrap();
        let samples =
            element_curvatures(&mesh, &level_set_curvatures(&u, &SolverConfig::default())).unwrap();
        assert!(samples
            .samples
            .iter()
            .all(|s| s.k1.abs() <= 1e-3 && s.k2.abs() <= 1e-3));
    }

    #[test]
    fn masked_centroids_use_nearest_valid_cell() {
        let n = 8;
        let mut fields = CurvatureFields {
            n,
            k1: vec![0.0; n * n * n],
            k2: vec![0.0; n * n * n],
            mask: vec![false; n * n * n],
        };
        let far = 5 + n * (5 + n * 5);
        fields.mask[far] = true;
        fields.k1[far] = 0.3;
        fields.k2[far] = -0.1;
        let mesh = TriMesh::from_faces(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        );
        let s = element_curvatures(&mesh, &fields).unwrap();
        assert_eq!((s.samples[0].k1, s.samples[0].k2), (0.3, -0.1));
    }

    #[test]
    fn samples_binary_round_trip() {
        let samples = CurvatureSamples::from_triples([(0.1, 0.2, 1.5), (-0.3, -0.4, 0.25)]);
        assert!(samples.samples.iter().all(|s| s.k1 >= s.k2));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        samples.write_binary(&path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 + 2 * 24);
        assert_eq!(CurvatureSamples::read_binary(&path).unwrap(), samples);
    }

    #[test]
    fn obj_round_trip() {
        let mesh = marching_cubes(&sphere(16, 20.0), 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        mesh.write_obj(&path).unwrap();
        let back = TriMesh::read_obj(&path).unwrap();
        assert_eq!(back.triangles, mesh.triangles);
        assert!((back.total_area() - mesh.total_area()).abs() < 1e-9 * mesh.total_area());
    }
}
