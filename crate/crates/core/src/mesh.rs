//! Per-class surface extraction by marching cubes, with binary STL and ASCII
//! OBJ export.
//!
//! The 256-case triangle table is built at first use from per-face rules
//! rather than copied from a published table. On each cube face the crossings
//! are joined so that inside corners are kept apart (the ambiguous face with
//! two diagonal inside corners gets two separate cuts). Because the rule only
//! looks at the four values of a face, two cells sharing a face always agree
//! on its segments, which is what makes the output watertight. The segments
//! of a cell chain into closed loops that are then triangulated without any
//! diagonal lying on a cube face.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::volume::{Dims, LabelVolume, Spacing};

/// Indexed triangle surface in millimetres. Triangles wind counter-clockwise
/// seen from outside.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Checks that every index is in range.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for t in &self.triangles {
            for &i in t {
                if i as usize >= n {
                    return Err(Error::IndexOutOfRange { index: i as usize, limit: n });
                }
            }
        }
        Ok(())
    }

    fn corners(&self, t: &[u32; 3]) -> [[f64; 3]; 3] {
        t.map(|i| self.vertices[i as usize])
    }

    /// Unit normal from the winding; zero for a degenerate triangle.
    pub fn normal(&self, t: usize) -> [f64; 3] {
        let [a, b, c] = self.corners(&self.triangles[t]);
        let n = cross(sub(b, a), sub(c, a));
        let len = dot(n, n).sqrt();
        if len == 0.0 {
            [0.0; 3]
        } else {
            n.map(|x| x / len)
        }
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(&self.triangles[t]);
        let n = cross(sub(b, a), sub(c, a));
        0.5 * dot(n, n).sqrt()
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        edge_uses(self).len()
    }

    /// V - E + F over the vertices referenced by triangles.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_count() as i64 + self.triangles.len() as i64
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Directed uses of each undirected edge: (forward count, backward count),
/// keyed by (min, max) vertex index.
fn edge_uses(m: &TriMesh) -> HashMap<(u32, u32), (u32, u32)> {
    let mut uses: HashMap<(u32, u32), (u32, u32)> = HashMap::new();
    for t in &m.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let e = uses.entry((a.min(b), a.max(b))).or_default();
            if a < b {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
    }
    uses
}

/// Verifies every edge borders exactly two triangles, traversed once in each
/// direction.
pub fn check_watertight(m: &TriMesh) -> Result<()> {
    m.validate()?;
    let mut bad: Vec<(u32, u32)> = edge_uses(m)
        .into_iter()
        .filter(|(_, uses)| *uses != (1, 1))
        .map(|(e, _)| e)
        .collect();
    if bad.is_empty() {
        return Ok(());
    }
    bad.sort_unstable();
    Err(Error::OpenMesh {
        open_edges: bad.len(),
        first: bad[0],
    })
}

pub fn is_watertight(m: &TriMesh) -> bool {
    check_watertight(m).is_ok()
}

/// Signed sum of origin tetrahedra; positive for outward-facing triangles.
pub fn signed_volume(m: &TriMesh) -> f64 {
    m.triangles
        .iter()
        .map(|t| {
            let [a, b, c] = m.corners(t);
            dot(a, cross(b, c))
        })
        .sum::<f64>()
        / 6.0
}

/// Enclosed volume in mm³. Refuses meshes that are not closed.
pub fn mesh_volume(m: &TriMesh) -> Result<f64> {
    check_watertight(m)?;
    Ok(signed_volume(m).abs())
}

/// Total surface area in mm².
pub fn mesh_area(m: &TriMesh) -> f64 {
    (0..m.triangles.len()).map(|t| m.triangle_area(t)).sum()
}

/// Scalar field on a voxel grid. Sample `(i, j, k)` sits at voxel coordinate
/// `(i, j, k) + origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    dims: Dims,
    origin: [i64; 3],
    data: Vec<f32>,
}

impl ScalarField {
    pub fn new(dims: Dims, origin: [i64; 3], data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::DimsMismatch(format!(
                "{} samples supplied for {dims}",
                data.len()
            )));
        }
        Ok(ScalarField { dims, origin, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn origin(&self) -> [i64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index(x, y, z)]
    }
}

/// 1.0 where the label is `class`, 0.0 elsewhere, padded by one zero voxel on
/// every side (origin -1) so every surface closes.
pub fn binarize(l: &LabelVolume, class: usize) -> Result<ScalarField> {
    let limit = l.classes().count();
    if class >= limit {
        return Err(Error::IndexOutOfRange { index: class, limit });
    }
    let d = l.dims();
    let padded = Dims::new(d.nx + 2, d.ny + 2, d.nz + 2);
    let mut data = vec![0.0f32; padded.len()];
    for z in 0..d.nz {
        for y in 0..d.ny {
            let src = &l.labels()[d.index(0, y, z)..d.index(0, y, z) + d.nx];
            let dst = padded.index(1, y + 1, z + 1);
            for (o, &lab) in data[dst..dst + d.nx].iter_mut().zip(src) {
                if lab as usize == class {
                    *o = 1.0;
                }
            }
        }
    }
    ScalarField::new(padded, [-1, -1, -1], data)
}

/// Corner `k` of a cell sits at offset `(k & 1, (k >> 1) & 1, (k >> 2) & 1)`.
fn corner_offset(k: usize) -> [usize; 3] {
    [k & 1, (k >> 1) & 1, (k >> 2) & 1]
}

/// The 12 cell edges as (lower corner, upper corner, axis).
fn cell_edges() -> [(usize, usize, usize); 12] {
    let mut edges = [(0, 0, 0); 12];
    let mut n = 0;
    for axis in 0..3 {
        let bit = 1 << axis;
        for a in 0..8 {
            if a & bit == 0 {
                edges[n] = (a, a | bit, axis);
                n += 1;
            }
        }
    }
    edges
}

fn edge_between(edges: &[(usize, usize, usize); 12], a: usize, b: usize) -> usize {
    edges
        .iter()
        .position(|&(p, q, _)| (p, q) == (a.min(b), a.max(b)))
        .expect("corners are adjacent")
}

/// Corners of the six faces, counter-clockwise seen from outside the cell.
fn cell_faces() -> [[usize; 4]; 6] {
    let mut faces = [[0; 4]; 6];
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let corner = |du: usize, dv: usize| (side << axis) | (du << u) | (dv << v);
            let ccw = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
            faces[axis * 2 + side] = if side == 1 {
                ccw
            } else {
                [ccw[3], ccw[2], ccw[1], ccw[0]]
            };
        }
    }
    faces
}

/// Face segments for one cube configuration, as (from edge, to edge). Walking
/// a face counter-clockwise, each inside-to-outside crossing is joined to the
/// nearest crossing behind it, which cuts each run of inside corners off on
/// its own.
fn face_segments(case: usize) -> Vec<(usize, usize)> {
    let edges = cell_edges();
    let inside = |k: usize| case & (1 << k) != 0;
    let mut segments = Vec::new();
    for face in cell_faces() {
        let crossing = |k: usize| inside(face[k]) != inside(face[(k + 1) % 4]);
        for k in 0..4 {
            if inside(face[k]) && !inside(face[(k + 1) % 4]) {
                let j = (1..4)
                    .map(|s| (k + 4 - s) % 4)
                    .find(|&j| crossing(j))
                    .expect("crossings come in pairs");
                let from = edge_between(&edges, face[k], face[(k + 1) % 4]);
                let to = edge_between(&edges, face[j], face[(j + 1) % 4]);
                segments.push((from, to));
            }
        }
    }
    segments
}

/// Faces (by index into `cell_faces`) that contain each edge.
fn edge_faces() -> [[usize; 2]; 12] {
    let edges = cell_edges();
    let faces = cell_faces();
    let mut out = [[0; 2]; 12];
    for (e, &(a, b, _)) in edges.iter().enumerate() {
        let on: Vec<usize> = (0..6)
            .filter(|&f| faces[f].contains(&a) && faces[f].contains(&b))
            .collect();
        out[e] = [on[0], on[1]];
    }
    out
}

fn share_face(ef: &[[usize; 2]; 12], a: usize, b: usize) -> bool {
    ef[a].iter().any(|f| ef[b].contains(f))
}

/// Triangulates a polygon so that no diagonal joins two vertices on a common
/// cube face. Triangles keep the polygon's winding.
fn triangulate(poly: &[usize], ef: &[[usize; 2]; 12]) -> Option<Vec<[usize; 3]>> {
    fn solve(
        poly: &[usize],
        i: usize,
        j: usize,
        ef: &[[usize; 2]; 12],
        out: &mut Vec<[usize; 3]>,
    ) -> bool {
        if j - i < 2 {
            return true;
        }
        let n = poly.len();
        let ok = |a: usize, b: usize| {
            let boundary = b - a == 1 || (a == 0 && b == n - 1);
            boundary || !share_face(ef, poly[a], poly[b])
        };
        for k in i + 1..j {
            if !ok(i, k) || !ok(k, j) {
                continue;
            }
            let mark = out.len();
            out.push([poly[i], poly[k], poly[j]]);
            if solve(poly, i, k, ef, out) && solve(poly, k, j, ef, out) {
                return true;
            }
            out.truncate(mark);
        }
        false
    }
    let mut out = Vec::new();
    solve(poly, 0, poly.len() - 1, ef, &mut out).then_some(out)
}

/// Triangles (as edge triples) for one configuration.
fn case_triangles(case: usize) -> Vec<[usize; 3]> {
    let segments = face_segments(case);
    let mut next = [usize::MAX; 12];
    for &(a, b) in &segments {
        debug_assert_eq!(next[a], usize::MAX, "one outgoing segment per crossing");
        next[a] = b;
    }
    let ef = edge_faces();
    let mut seen = [false; 12];
    let mut tris = Vec::new();
    for &(start, _) in &segments {
        if seen[start] {
            continue;
        }
        let mut poly = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            poly.push(e);
            e = next[e];
        }
        debug_assert_eq!(e, start, "segments close into loops");
        tris.extend(triangulate(&poly, &ef).expect("every loop admits a triangulation"));
    }
    tris
}

/// Triangle table indexed by the 8-bit inside-corner mask. Orientation is
/// fixed so that the triangle cutting off a lone inside corner faces away
/// from it.
fn table() -> &'static [Vec<[usize; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[usize; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table: [Vec<[usize; 3]>; 256] = std::array::from_fn(case_triangles);
        let edges = cell_edges();
        let mid = |e: usize| {
            let (a, b, _) = edges[e];
            let (pa, pb) = (corner_offset(a), corner_offset(b));
            [0, 1, 2].map(|i| (pa[i] + pb[i]) as f64 / 2.0)
        };
        let [e0, e1, e2] = table[1][0];
        let n = cross(sub(mid(e1), mid(e0)), sub(mid(e2), mid(e0)));
        if dot(n, [1.0, 1.0, 1.0]) < 0.0 {
            for tris in table.iter_mut() {
                for t in tris.iter_mut() {
                    t.swap(1, 2);
                }
            }
        }
        table
    })
}

/// Extracts the `iso` level set of a field; samples strictly above `iso`
/// count as inside. Vertices are placed by linear interpolation along cell
/// edges, welded by edge identity, and scaled per axis by `spacing`.
pub fn marching_cubes(field: &ScalarField, iso: f32, spacing: Spacing) -> Result<TriMesh> {
    let d = field.dims();
    if d.nx < 2 || d.ny < 2 || d.nz < 2 {
        return Err(Error::InvalidSize(format!(
            "marching cubes needs at least 2 samples per axis, field is {d}"
        )));
    }
    let table = table();
    let edges = cell_edges();
    let scale = spacing.as_array();
    let origin = field.origin();
    let stride = [1, d.nx, d.nx * d.ny];
    let mut mesh = TriMesh::default();
    let mut welded: HashMap<usize, u32> = HashMap::new();

    for z in 0..d.nz - 1 {
        for y in 0..d.ny - 1 {
            for x in 0..d.nx - 1 {
                let base = d.index(x, y, z);
                let value = |k: usize| {
                    let [ox, oy, oz] = corner_offset(k);
                    field.data[base + ox * stride[0] + oy * stride[1] + oz * stride[2]]
                };
                let mut case = 0;
                for k in 0..8 {
                    if value(k) > iso {
                        case |= 1 << k;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                for tri in &table[case] {
                    let ids = tri.map(|e| {
                        let (a, b, axis) = edges[e];
                        let off = corner_offset(a);
                        let lower = base + off[0] * stride[0] + off[1] * stride[1] + off[2] * stride[2];
                        *welded.entry(lower * 3 + axis).or_insert_with(|| {
                            let (va, vb) = (value(a) as f64, value(b) as f64);
                            let t = (iso as f64 - va) / (vb - va);
                            let cell = [x, y, z];
                            let p = [0, 1, 2].map(|i| {
                                let c = ((cell[i] + off[i]) as i64 + origin[i]) as f64;
                                let frac = if i == axis { t } else { 0.0 };
                                (c + frac) * scale[i]
                            });
                            mesh.vertices.push(p);
                            (mesh.vertices.len() - 1) as u32
                        })
                    });
                    mesh.triangles.push(ids);
                }
            }
        }
    }
    Ok(mesh)
}

/// Surface of one class at iso 0.5, in millimetres.
pub fn class_mesh(l: &LabelVolume, class: usize) -> Result<TriMesh> {
    marching_cubes(&binarize(l, class)?, 0.5, l.spacing())
}

pub const STL_HEADER_PREFIX: &[u8] = b"axiseg";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    out.write_all(bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Binary STL: 80-byte header, u32 triangle count, then per triangle a unit
/// normal, three vertices (all f32 LE) and a zero u16 attribute.
pub fn encode_stl(m: &TriMesh) -> Result<Vec<u8>> {
    m.validate()?;
    let count = u32::try_from(m.triangles.len())
        .map_err(|_| Error::InvalidSize("too many triangles for STL".to_string()))?;
    let mut out = Vec::with_capacity(84 + 50 * m.triangles.len());
    let mut header = [0u8; 80];
    header[..STL_HEADER_PREFIX.len()].copy_from_slice(STL_HEADER_PREFIX);
    out.extend_from_slice(&header);
    out.extend_from_slice(&count.to_le_bytes());
    for (i, t) in m.triangles.iter().enumerate() {
        for x in m.normal(i) {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        for v in m.corners(t) {
            for x in v {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    Ok(out)
}

pub fn write_stl(m: &TriMesh, path: &Path) -> Result<()> {
    write_file(path, &encode_stl(m)?)
}

/// ASCII OBJ with `v x y z` lines followed by 1-based `f i j k` lines.
pub fn encode_obj(m: &TriMesh) -> Result<String> {
    m.validate()?;
    use std::fmt::Write as _;
    let mut out = String::new();
    for v in &m.vertices {
        let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
    }
    for t in &m.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    Ok(out)
}

pub fn write_obj(m: &TriMesh, path: &Path) -> Result<()> {
    write_file(path, encode_obj(m)?.as_bytes())
}
