//! Triangle surface meshes for scatterers and equivalent surfaces: file
//! loading, parametric generators, topology indexing, barycentric refinement
//! and mirroring for image theory.

use crate::Vec3;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("parse error in {path} line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("non-manifold edge ({a}, {b}) shared by {count} triangles")]
    NonManifold { a: usize, b: usize, count: usize },
    #[error("degenerate triangle {index} (zero area or repeated vertex)")]
    DegenerateTriangle { index: usize },
    #[error("mesh has no interior edges")]
    NoInteriorEdges,
    #[error("mesh is not closed")]
    NotClosed,
    #[error("mesh touches or crosses the mirror plane z = {plane_z}")]
    TouchesMirrorPlane { plane_z: f64 },
    #[error("invalid generator parameter: {0}")]
    BadParameter(String),
    #[error("scatterer is not strictly inside the equivalent surface")]
    NotEnclosed,
    #[error("orientation repair failed: surface is not orientable")]
    NotOrientable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    MshAscii,
    SimpleTri,
}

/// An edge of the triangulation with references to its adjacent triangles.
#[derive(Debug, Clone)]
pub struct Edge {
    /// Vertex indices, lower first.
    pub verts: [usize; 2],
    /// Adjacent triangle indices (1 for boundary, 2 for interior edges).
    pub tris: Vec<usize>,
}

impl Edge {
    pub fn is_interior(&self) -> bool {
        self.tris.len() == 2
    }
}

/// Indexed triangle surface with derived edge topology.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    pub closed: bool,
    /// edge index per (triangle, local edge 0..3); local edge i connects
    /// triangle vertices i and (i+1)%3.
    pub tri_edges: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Build topology from raw vertices and triangles. Checks manifoldness,
    /// rejects degenerate triangles and, for closed meshes, repairs winding
    /// to a consistent outward orientation.
    pub fn from_raw(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        for (i, t) in triangles.iter().enumerate() {
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(MeshError::DegenerateTriangle { index: i });
            }
            let a = vertices[t[1]] - vertices[t[0]];
            let b = vertices[t[2]] - vertices[t[0]];
            if a.cross(&b).norm() <= 0.0 {
                return Err(MeshError::DegenerateTriangle { index: i });
            }
        }
        let mut mesh = Self {
            vertices,
            triangles,
            edges: Vec::new(),
            closed: false,
            tri_edges: Vec::new(),
        };
        mesh.build_topology()?;
        if mesh.closed {
            mesh.repair_orientation()?;
        }
        Ok(mesh)
    }

    fn build_topology(&mut self) -> Result<(), MeshError> {
        let mut map: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut tri_edges = vec![[usize::MAX; 3]; self.triangles.len()];
        for (ti, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let ei = *map.entry(key).or_insert_with(|| {
                    edges.push(Edge { verts: [key.0, key.1], tris: Vec::new() });
                    edges.len() - 1
                });
                edges[ei].tris.push(ti);
                tri_edges[ti][k] = ei;
            }
        }
        for e in &edges {
            if e.tris.len() > 2 {
                return Err(MeshError::NonManifold {
                    a: e.verts[0],
                    b: e.verts[1],
                    count: e.tris.len(),
                });
            }
        }
        self.closed = edges.iter().all(|e| e.is_interior());
        self.edges = edges;
        self.tri_edges = tri_edges;
        Ok(())
    }

    /// Make winding consistent by BFS propagation, then flip globally so the
    /// signed volume is positive (outward normals).
    fn repair_orientation(&mut self) -> Result<(), MeshError> {
        let nt = self.triangles.len();
        let mut visited = vec![false; nt];
        let mut stack = Vec::new();
        for seed in 0..nt {
            if visited[seed] {
                continue;
            }
            visited[seed] = true;
            stack.push(seed);
            while let Some(ti) = stack.pop() {
                for ei in self.tri_edges[ti] {
                    let adjacent = self.edges[ei].tris.clone();
                    for tj in adjacent {
                        if tj == ti || visited[tj] {
                            if tj != ti
                                && self.traverses_forward(ti, ei) == self.traverses_forward(tj, ei)
                            {
                                return Err(MeshError::NotOrientable);
                            }
                            continue;
                        }
                        if self.traverses_forward(ti, ei) == self.traverses_forward(tj, ei) {
                            self.triangles[tj].swap(1, 2);
                            self.rebuild_tri_edges(tj);
                        }
                        visited[tj] = true;
                        stack.push(tj);
                    }
                }
            }
        }
        if self.signed_volume() < 0.0 {
            for ti in 0..nt {
                self.triangles[ti].swap(1, 2);
                self.rebuild_tri_edges(ti);
            }
        }
        Ok(())
    }

    fn rebuild_tri_edges(&mut self, ti: usize) {
        let t = self.triangles[ti];
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let key = [a.min(b), a.max(b)];
            let ei = self
                .edges
                .iter()
                .position(|e| e.verts == key && e.tris.contains(&ti))
                .expect("edge lookup");
            self.tri_edges[ti][k] = ei;
        }
    }

    /// True when triangle `ti` traverses edge `ei` from its lower to its
    /// higher vertex index.
    fn traverses_forward(&self, ti: usize, ei: usize) -> bool {
        let t = self.triangles[ti];
        let [a, b] = self.edges[ei].verts;
        for k in 0..3 {
            if t[k] == a && t[(k + 1) % 3] == b {
                return true;
            }
            if t[k] == b && t[(k + 1) % 3] == a {
                return false;
            }
        }
        unreachable!("edge not in triangle");
    }

    pub fn tri_vertices(&self, ti: usize) -> [Vec3; 3] {
        let t = self.triangles[ti];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn tri_area(&self, ti: usize) -> f64 {
        let [a, b, c] = self.tri_vertices(ti);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit normal by right-hand rule on the stored winding (outward for
    /// closed, repaired meshes).
    pub fn tri_normal(&self, ti: usize) -> Vec3 {
        let [a, b, c] = self.tri_vertices(ti);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn tri_centroid(&self, ti: usize) -> Vec3 {
        let [a, b, c] = self.tri_vertices(ti);
        (a + b + c) / 3.0
    }

    pub fn tri_diameter(&self, ti: usize) -> f64 {
        let [a, b, c] = self.tri_vertices(ti);
        (a - b).norm().max((b - c).norm()).max((c - a).norm())
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.tri_area(t)).sum()
    }

    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn interior_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.is_interior()).count()
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.edges.len() - self.interior_edge_count()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| (self.vertices[e.verts[0]] - self.vertices[e.verts[1]]).norm())
            .fold(0.0, f64::max)
    }

    pub fn translated(&self, offset: Vec3) -> TriangleMesh {
        let mut m = self.clone();
        for v in m.vertices.iter_mut() {
            *v += offset;
        }
        m
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Generalized winding number of a point with respect to this (closed)
    /// surface; ~1 inside, ~0 outside.
    pub fn winding_number(&self, p: &Vec3) -> f64 {
        let mut total = 0.0;
        for t in &self.triangles {
            let a = self.vertices[t[0]] - p;
            let b = self.vertices[t[1]] - p;
            let c = self.vertices[t[2]] - p;
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let num = a.dot(&b.cross(&c));
            let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            total += 2.0 * num.atan2(den);
        }
        total / (4.0 * std::f64::consts::PI)
    }

    pub fn contains_point(&self, p: &Vec3) -> bool {
        self.winding_number(p) > 0.5
    }
}

/// Translation-invariant geometry fingerprint: vertex coordinates relative to
/// the vertex centroid, quantized to 1 nm, hashed together with the triangle
/// connectivity expressed in coordinates.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ShapeId(pub [u8; 32]);

impl fmt::Debug for ShapeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Display for ShapeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

const SHAPE_QUANTUM: f64 = 1e-9;

fn quantize(v: &Vec3, origin: &Vec3) -> [i64; 3] {
    let d = v - origin;
    [
        (d.x / SHAPE_QUANTUM).round() as i64,
        (d.y / SHAPE_QUANTUM).round() as i64,
        (d.z / SHAPE_QUANTUM).round() as i64,
    ]
}

fn hash_mesh(h: &mut Sha256, mesh: &TriangleMesh, origin: &Vec3) {
    let mut tris: Vec<[[i64; 3]; 3]> = mesh
        .triangles
        .iter()
        .map(|t| {
            let mut q = [
                quantize(&mesh.vertices[t[0]], origin),
                quantize(&mesh.vertices[t[1]], origin),
                quantize(&mesh.vertices[t[2]], origin),
            ];
            q.sort();
            q
        })
        .collect();
    tris.sort();
    for t in tris {
        for v in t {
            for c in v {
                h.update(c.to_le_bytes());
            }
        }
    }
}

/// One array element: a scatterer mesh strictly enclosed by a closed
/// equivalent surface, placed at a translation offset.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub scatterer_mesh: TriangleMesh,
    pub equivalent_mesh: TriangleMesh,
    pub translation: Vec3,
    pub shape_id: ShapeId,
}

impl ElementGeometry {
    /// Copy of the element in its canonical local frame: the translation is
    /// removed and coordinates are snapped to the same grid used for shape
    /// identification. Two placements of one shape therefore yield bitwise
    /// identical local geometry, so anything derived from it (in particular
    /// the condensed per-shape matrices) is placement independent.
    pub fn localized(&self) -> Self {
        let snap = |mesh: &TriangleMesh| -> TriangleMesh {
            let mut m = mesh.clone();
            for v in &mut m.vertices {
                let q = quantize(v, &self.translation);
                *v = Vec3::new(q[0] as f64, q[1] as f64, q[2] as f64) * SHAPE_QUANTUM;
            }
            m
        };
        Self {
            scatterer_mesh: snap(&self.scatterer_mesh),
            equivalent_mesh: snap(&self.equivalent_mesh),
            translation: Vec3::zeros(),
            shape_id: self.shape_id,
        }
    }

    pub fn new(scatterer_mesh: TriangleMesh, equivalent_mesh: TriangleMesh) -> Result<Self, MeshError> {
        if !equivalent_mesh.closed {
            return Err(MeshError::NotClosed);
        }
        for v in &scatterer_mesh.vertices {
            if !equivalent_mesh.contains_point(v) {
                return Err(MeshError::NotEnclosed);
            }
        }
        let translation = equivalent_mesh
            .vertices
            .iter()
            .fold(Vec3::zeros(), |acc, v| acc + v)
            / equivalent_mesh.vertices.len() as f64;
        let mut h = Sha256::new();
        hash_mesh(&mut h, &scatterer_mesh, &translation);
        h.update([0xff_u8]);
        hash_mesh(&mut h, &equivalent_mesh, &translation);
        let digest = h.finalize();
        let mut id = [0u8; 32];
        id.copy_from_slice(&digest);
        Ok(Self { scatterer_mesh, equivalent_mesh, translation, shape_id: ShapeId(id) })
    }

    pub fn translated(&self, offset: Vec3) -> Result<Self, MeshError> {
        Self::new(
            self.scatterer_mesh.translated(offset),
            self.equivalent_mesh.translated(offset),
        )
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|e| MeshError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_mesh(&text, format, &path.display().to_string())
}

pub fn parse_mesh(text: &str, format: MeshFormat, path: &str) -> Result<TriangleMesh, MeshError> {
    match format {
        MeshFormat::SimpleTri => parse_simple_tri(text, path),
        MeshFormat::MshAscii => parse_msh_ascii(text, path),
    }
}

fn parse_simple_tri(text: &str, path: &str) -> Result<TriangleMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| MeshError::Parse {
            path: path.to_string(),
            line: ln + 1,
            msg: msg.to_string(),
        };
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for x in c.iter_mut() {
                    *x = it
                        .next()
                        .ok_or_else(|| err("vertex needs 3 coordinates"))?
                        .parse()
                        .map_err(|_| err("bad coordinate"))?;
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut t = [0usize; 3];
                for x in t.iter_mut() {
                    let i: usize = it
                        .next()
                        .ok_or_else(|| err("face needs 3 indices"))?
                        .parse()
                        .map_err(|_| err("bad index"))?;
                    if i == 0 || i > vertices.len() {
                        return Err(err("face index out of range (1-based)"));
                    }
                    *x = i - 1;
                }
                triangles.push(t);
            }
            _ => return Err(err("expected 'v' or 'f' record")),
        }
    }
    TriangleMesh::from_raw(vertices, triangles)
}

fn parse_msh_ascii(text: &str, path: &str) -> Result<TriangleMesh, MeshError> {
    let mut lines = text.lines().enumerate().peekable();
    let mut vertices = Vec::new();
    let mut id_map: BTreeMap<usize, usize> = BTreeMap::new();
    let mut triangles = Vec::new();
    let err = |ln: usize, msg: String| MeshError::Parse { path: path.to_string(), line: ln + 1, msg };
    while let Some((ln, line)) = lines.next() {
        match line.trim() {
            "$Nodes" => {
                let (nln, nline) =
                    lines.next().ok_or_else(|| err(ln, "missing node count".into()))?;
                let n: usize = nline
                    .trim()
                    .parse()
                    .map_err(|_| err(nln, "bad node count".into()))?;
                for _ in 0..n {
                    let (vln, vline) =
                        lines.next().ok_or_else(|| err(nln, "truncated node list".into()))?;
                    let mut it = vline.split_whitespace();
                    let id: usize = it
                        .next()
                        .ok_or_else(|| err(vln, "empty node line".into()))?
                        .parse()
                        .map_err(|_| err(vln, "bad node id".into()))?;
                    let mut c = [0.0; 3];
                    for x in c.iter_mut() {
                        *x = it
                            .next()
                            .ok_or_else(|| err(vln, "node needs 3 coordinates".into()))?
                            .parse()
                            .map_err(|_| err(vln, "bad node coordinate".into()))?;
                    }
                    id_map.insert(id, vertices.len());
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
            }
            "$Elements" => {
                let (nln, nline) =
                    lines.next().ok_or_else(|| err(ln, "missing element count".into()))?;
                let n: usize = nline
                    .trim()
                    .parse()
                    .map_err(|_| err(nln, "bad element count".into()))?;
                for _ in 0..n {
                    let (eln, eline) =
                        lines.next().ok_or_else(|| err(nln, "truncated element list".into()))?;
                    let fields: Vec<&str> = eline.split_whitespace().collect();
                    if fields.len() < 3 {
                        return Err(err(eln, "short element line".into()));
                    }
                    let etype: usize =
                        fields[1].parse().map_err(|_| err(eln, "bad element type".into()))?;
                    if etype != 2 {
                        continue; // only surface triangles are used
                    }
                    let ntags: usize =
                        fields[2].parse().map_err(|_| err(eln, "bad tag count".into()))?;
                    if fields.len() != 3 + ntags + 3 {
                        return Err(err(eln, "triangle element needs 3 node ids".into()));
                    }
                    let mut t = [0usize; 3];
                    for (k, x) in t.iter_mut().enumerate() {
                        let id: usize = fields[3 + ntags + k]
                            .parse()
                            .map_err(|_| err(eln, "bad node reference".into()))?;
                        *x = *id_map
                            .get(&id)
                            .ok_or_else(|| err(eln, format!("unknown node id {id}")))?;
                    }
                    triangles.push(t);
                }
            }
            _ => {}
        }
    }
    if vertices.is_empty() || triangles.is_empty() {
        return Err(err(0, "no nodes or no triangle elements found".into()));
    }
    TriangleMesh::from_raw(vertices, triangles)
}

/// Deterministic vertex welder for the generators.
struct Welder {
    vertices: Vec<Vec3>,
    map: BTreeMap<[i64; 3], usize>,
    quantum: f64,
}

impl Welder {
    fn new(quantum: f64) -> Self {
        Self { vertices: Vec::new(), map: BTreeMap::new(), quantum }
    }

    fn add(&mut self, p: Vec3) -> usize {
        let key = [
            (p.x / self.quantum).round() as i64,
            (p.y / self.quantum).round() as i64,
            (p.z / self.quantum).round() as i64,
        ];
        *self.map.entry(key).or_insert_with(|| {
            self.vertices.push(p);
            self.vertices.len() - 1
        })
    }
}

/// Closed axis-aligned box mesh centered at `center` with extents `dims`,
/// all edge lengths <= `target_edge`, outward-oriented.
pub fn generate_box(center: Vec3, dims: Vec3, target_edge: f64) -> Result<TriangleMesh, MeshError> {
    if dims.x <= 0.0 || dims.y <= 0.0 || dims.z <= 0.0 {
        return Err(MeshError::BadParameter("box dims must be positive".into()));
    }
    if target_edge <= 0.0 {
        return Err(MeshError::BadParameter("target_edge must be positive".into()));
    }
    // cell edge <= target/sqrt(2) so the cell diagonal satisfies the bound
    let limit = target_edge / std::f64::consts::SQRT_2;
    let ndiv = |len: f64| ((len / limit).ceil() as usize).max(1);
    let n = [ndiv(dims.x), ndiv(dims.y), ndiv(dims.z)];
    let half = dims / 2.0;
    let mut w = Welder::new(dims.norm() * 1e-12);
    let mut triangles = Vec::new();
    // each face: (fixed axis, sign); (u axis, v axis) chosen so u x v = outward normal
    let faces: [(usize, f64, usize, usize); 6] = [
        (0, 1.0, 1, 2),
        (0, -1.0, 2, 1),
        (1, 1.0, 2, 0),
        (1, -1.0, 0, 2),
        (2, 1.0, 0, 1),
        (2, -1.0, 1, 0),
    ];
    for (axis, sign, ua, va) in faces {
        let (nu, nv) = (n[ua], n[va]);
        let point = |i: usize, j: usize| {
            let mut p = Vec3::zeros();
            p[axis] = sign * half[axis];
            p[ua] = -half[ua] + dims[ua] * i as f64 / nu as f64;
            p[va] = -half[va] + dims[va] * j as f64 / nv as f64;
            center + p
        };
        for i in 0..nu {
            for j in 0..nv {
                let p00 = w.add(point(i, j));
                let p10 = w.add(point(i + 1, j));
                let p01 = w.add(point(i, j + 1));
                let p11 = w.add(point(i + 1, j + 1));
                triangles.push([p00, p10, p11]);
                triangles.push([p00, p11, p01]);
            }
        }
    }
    TriangleMesh::from_raw(w.vertices, triangles)
}

/// Closed icosphere: 20 * 4^subdivisions triangles projected onto the sphere.
pub fn generate_sphere(
    center: Vec3,
    radius: f64,
    subdivisions: usize,
) -> Result<TriangleMesh, MeshError> {
    if radius <= 0.0 {
        return Err(MeshError::BadParameter("sphere radius must be positive".into()));
    }
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = vec![
        Vec3::new(-1.0, phi, 0.0),
        Vec3::new(1.0, phi, 0.0),
        Vec3::new(-1.0, -phi, 0.0),
        Vec3::new(1.0, -phi, 0.0),
        Vec3::new(0.0, -1.0, phi),
        Vec3::new(0.0, 1.0, phi),
        Vec3::new(0.0, -1.0, -phi),
        Vec3::new(0.0, 1.0, -phi),
        Vec3::new(phi, 0.0, -1.0),
        Vec3::new(phi, 0.0, 1.0),
        Vec3::new(-phi, 0.0, -1.0),
        Vec3::new(-phi, 0.0, 1.0),
    ];
    for v in verts.iter_mut() {
        *v = v.normalize();
    }
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        for t in &tris {
            let mut m = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                m[k] = *mid.entry(key).or_insert_with(|| {
                    verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                    verts.len() - 1
                });
            }
            next.push([t[0], m[0], m[2]]);
            next.push([t[1], m[1], m[0]]);
            next.push([t[2], m[2], m[1]]);
            next.push([m[0], m[1], m[2]]);
        }
        tris = next;
    }
    let vertices = verts.into_iter().map(|v| center + v * radius).collect();
    TriangleMesh::from_raw(vertices, tris)
}

/// Planar mesh in the z = `center.z` plane covering the cells of a bitmap
/// shape. `cols` x `rows` cells of size `cell`; `covered(i, j)` selects cells.
/// The sheet is centered at `center` and oriented with normal +z.
fn generate_bitmap_plate(
    center: Vec3,
    cols: usize,
    rows: usize,
    cell: f64,
    covered: impl Fn(usize, usize) -> bool,
) -> Result<TriangleMesh, MeshError> {
    let mut w = Welder::new(cell * 1e-9);
    let mut triangles = Vec::new();
    let x0 = center.x - cols as f64 * cell / 2.0;
    let y0 = center.y - rows as f64 * cell / 2.0;
    for i in 0..cols {
        for j in 0..rows {
            if !covered(i, j) {
                continue;
            }
            let mut p = |di: usize, dj: usize| {
                w.add(Vec3::new(
                    x0 + (i + di) as f64 * cell,
                    y0 + (j + dj) as f64 * cell,
                    center.z,
                ))
            };
            let (p00, p10, p01, p11) = (p(0, 0), p(1, 0), p(0, 1), p(1, 1));
            triangles.push([p00, p10, p11]);
            triangles.push([p00, p11, p01]);
        }
    }
    if triangles.is_empty() {
        return Err(MeshError::BadParameter("empty plate".into()));
    }
    TriangleMesh::from_raw(w.vertices, triangles)
}

fn plate_cell(target_edge: f64) -> Result<f64, MeshError> {
    if target_edge <= 0.0 {
        return Err(MeshError::BadParameter("target_edge must be positive".into()));
    }
    Ok(target_edge / std::f64::consts::SQRT_2)
}

/// Flat rectangular plate in a z = const plane.
pub fn generate_plate(
    center: Vec3,
    width: f64,
    height: f64,
    target_edge: f64,
) -> Result<TriangleMesh, MeshError> {
    if width <= 0.0 || height <= 0.0 {
        return Err(MeshError::BadParameter("plate dims must be positive".into()));
    }
    let limit = plate_cell(target_edge)?;
    let cols = ((width / limit).ceil() as usize).max(1);
    let rows = ((height / limit).ceil() as usize).max(1);
    // non-square cells: mesh with the exact dims via per-axis cell sizes by
    // scaling a unit bitmap
    let mut w = Welder::new((width + height) * 1e-12);
    let mut triangles = Vec::new();
    for i in 0..cols {
        for j in 0..rows {
            let mut p = |di: usize, dj: usize| {
                w.add(Vec3::new(
                    center.x - width / 2.0 + width * (i + di) as f64 / cols as f64,
                    center.y - height / 2.0 + height * (j + dj) as f64 / rows as f64,
                    center.z,
                ))
            };
            let (p00, p10, p01, p11) = (p(0, 0), p(1, 0), p(0, 1), p(1, 1));
            triangles.push([p00, p10, p11]);
            triangles.push([p00, p11, p01]);
        }
    }
    TriangleMesh::from_raw(w.vertices, triangles)
}

/// Flat plus-shaped cross: two orthogonal arms of total length `arm_length`
/// and width `arm_width`, in a z = const plane.
pub fn generate_cross(
    center: Vec3,
    arm_length: f64,
    arm_width: f64,
    target_edge: f64,
) -> Result<TriangleMesh, MeshError> {
    if arm_length <= 0.0 || arm_width <= 0.0 || arm_width > arm_length {
        return Err(MeshError::BadParameter("cross needs 0 < arm_width <= arm_length".into()));
    }
    let limit = plate_cell(target_edge)?;
    // snap to a grid that resolves the arm width with at least one cell
    let n = ((arm_length / limit).ceil() as usize).max(3);
    let cell = arm_length / n as f64;
    let wc = ((arm_width / cell).round() as usize).clamp(1, n);
    // centered band of wc cells
    let lo = (n - wc) / 2;
    let hi = lo + wc;
    generate_bitmap_plate(center, n, n, cell, |i, j| {
        (i >= lo && i < hi) || (j >= lo && j < hi)
    })
}

/// Serpentine (meander) strip: `turns` vertical runs connected alternately at
/// top and bottom, footprint `width` x `height`, trace width `trace`.
pub fn generate_meander(
    center: Vec3,
    width: f64,
    height: f64,
    trace: f64,
    turns: usize,
    target_edge: f64,
) -> Result<TriangleMesh, MeshError> {
    if width <= 0.0 || height <= 0.0 || trace <= 0.0 || turns < 2 {
        return Err(MeshError::BadParameter("meander needs positive dims and turns >= 2".into()));
    }
    let limit = plate_cell(target_edge)?;
    let cols = ((width / limit).ceil() as usize).max(2 * turns - 1);
    let cell = width / cols as f64;
    let rows = ((height / cell).ceil() as usize).max(3);
    let tw = ((trace / cell).round() as usize).clamp(1, cols);
    // vertical runs: evenly spaced columns of width tw
    let runs: Vec<usize> = (0..turns)
        .map(|k| {
            if turns == 1 {
                0
            } else {
                ((cols - tw) as f64 * k as f64 / (turns - 1) as f64).round() as usize
            }
        })
        .collect();
    generate_bitmap_plate(center, cols, rows, cell, |i, j| {
        for (k, &r) in runs.iter().enumerate() {
            if i >= r && i < r + tw {
                return true;
            }
            // connector between run k and k+1
            if k + 1 < runs.len() {
                let (a, b) = (r, runs[k + 1] + tw);
                let at_top = k % 2 == 0;
                let band = if at_top { j >= rows - tw } else { j < tw };
                if band && i >= a && i < b {
                    return true;
                }
            }
        }
        false
    })
}

/// Barycentric 6-way refinement with parent provenance for dual-basis
/// construction.
#[derive(Debug, Clone)]
pub struct RefinedMesh {
    pub mesh: std::sync::Arc<TriangleMesh>,
    /// parent triangle of each micro triangle
    pub parent_tri: Vec<usize>,
    /// refined vertex index of each parent vertex (identity prefix)
    pub parent_vertex: Vec<usize>,
    /// refined vertex index of each parent edge midpoint
    pub edge_midpoint: Vec<usize>,
    /// refined vertex index of each parent triangle barycenter
    pub tri_center: Vec<usize>,
}

pub fn barycentric_refine(mesh: &TriangleMesh) -> RefinedMesh {
    let nv = mesh.vertices.len();
    let ne = mesh.edges.len();
    let nt = mesh.triangles.len();
    let mut vertices = mesh.vertices.clone();
    let edge_midpoint: Vec<usize> = (0..ne)
        .map(|ei| {
            let [a, b] = mesh.edges[ei].verts;
            vertices.push((mesh.vertices[a] + mesh.vertices[b]) / 2.0);
            nv + ei
        })
        .collect();
    let tri_center: Vec<usize> = (0..nt)
        .map(|ti| {
            vertices.push(mesh.tri_centroid(ti));
            nv + ne + ti
        })
        .collect();
    let mut triangles = Vec::with_capacity(6 * nt);
    let mut parent_tri = Vec::with_capacity(6 * nt);
    for ti in 0..nt {
        let t = mesh.triangles[ti];
        let c = tri_center[ti];
        for k in 0..3 {
            let a = t[k];
            let b = t[(k + 1) % 3];
            let m = edge_midpoint[mesh.tri_edges[ti][k]];
            triangles.push([a, m, c]);
            triangles.push([m, b, c]);
            parent_tri.push(ti);
            parent_tri.push(ti);
        }
    }
    let mesh = TriangleMesh::from_raw(vertices, triangles).expect("refinement is manifold");
    RefinedMesh {
        mesh: std::sync::Arc::new(mesh),
        parent_tri,
        parent_vertex: (0..nv).collect(),
        edge_midpoint,
        tri_center,
    }
}

/// Reflect a mesh across the plane z = `plane_z`, flipping winding so normals
/// stay consistent. The input must lie strictly above the plane.
pub fn mirror_across_plane(mesh: &TriangleMesh, plane_z: f64) -> Result<TriangleMesh, MeshError> {
    if mesh.vertices.iter().any(|v| v.z <= plane_z) {
        return Err(MeshError::TouchesMirrorPlane { plane_z });
    }
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| Vec3::new(v.x, v.y, 2.0 * plane_z - v.z))
        .collect();
    let triangles = mesh.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect();
    TriangleMesh::from_raw(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub fn tetrahedron() -> TriangleMesh {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let t = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
        TriangleMesh::from_raw(v, t).unwrap()
    }

    #[test]
    fn two_triangle_strip_counts() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3\nf 2 4 3\n";
        let m = parse_mesh(text, MeshFormat::SimpleTri, "inline").unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles.len(), 2);
        assert_eq!(m.edges.len(), 5);
        assert_eq!(m.interior_edge_count(), 1);
        assert!(!m.closed);
    }

    #[test]
    fn tetrahedron_closed_euler() {
        let m = tetrahedron();
        assert!(m.closed);
        assert_eq!(m.edges.len(), 6);
        assert_eq!(m.interior_edge_count(), 6);
        // V - E + F = 2
        assert_eq!(m.vertices.len() as i64 - m.edges.len() as i64 + m.triangles.len() as i64, 2);
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn nonmanifold_rejected() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nv 0 0 -1\nf 1 2 3\nf 1 2 4\nf 1 2 5\n";
        match parse_mesh(text, MeshFormat::SimpleTri, "inline") {
            Err(MeshError::NonManifold { count: 3, .. }) => {}
            other => panic!("expected non-manifold error, got {other:?}"),
        }
    }

    #[test]
    fn msh_ascii_parses_triangles() {
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n$EndNodes\n$Elements\n5\n1 15 2 0 1 1\n2 2 2 0 1 1 3 2\n3 2 2 0 1 1 2 4\n4 2 2 0 1 1 4 3\n5 2 2 0 1 2 3 4\n$EndElements\n";
        let m = parse_mesh(text, MeshFormat::MshAscii, "inline").unwrap();
        assert_eq!(m.triangles.len(), 4);
        assert!(m.closed);
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn orientation_repaired_on_inconsistent_winding() {
        // tetrahedron with two faces flipped
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let t = vec![[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
        let m = TriangleMesh::from_raw(v, t).unwrap();
        assert!(m.closed);
        assert!(m.signed_volume() > 0.0);
        // adjacent triangles traverse shared edges oppositely
        for e in &m.edges {
            let f: Vec<bool> = e
                .tris
                .iter()
                .map(|&ti| {
                    let ei = m.tri_edges[ti].iter().position(|&x| m.edges[x].verts == e.verts);
                    m.traverses_forward(ti, m.tri_edges[ti][ei.unwrap()])
                })
                .collect();
            assert_ne!(f[0], f[1]);
        }
    }

    #[test]
    fn box_coarse_counts() {
        let m = generate_box(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), 2.0).unwrap();
        assert_eq!(m.triangles.len(), 12);
        assert!(m.closed);
        assert_relative_eq!(m.total_area(), 6.0, max_relative = 1e-12);
        assert_relative_eq!(m.signed_volume(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn box_respects_target_edge() {
        let m = generate_box(
            Vec3::new(0.1, -0.2, 0.3),
            Vec3::new(3.6e-3, 3.6e-3, 4.0e-3),
            1e-3,
        )
        .unwrap();
        assert!(m.closed);
        assert!(m.max_edge_length() <= 1e-3 + 1e-12);
    }

    #[test]
    fn box_zero_dim_rejected() {
        assert!(generate_box(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0), 0.5).is_err());
    }

    #[test]
    fn icosphere_counts() {
        let m0 = generate_sphere(Vec3::zeros(), 1.0, 0).unwrap();
        assert_eq!(m0.triangles.len(), 20);
        assert_eq!(m0.edges.len(), 30);
        assert!(m0.closed);
        let m2 = generate_sphere(Vec3::zeros(), 1.0, 2).unwrap();
        assert_eq!(m2.triangles.len(), 320);
        assert_eq!(m2.edges.len(), 480);
        let m3 = generate_sphere(Vec3::new(1.0, 2.0, 3.0), 0.05, 3).unwrap();
        assert_eq!(m3.triangles.len(), 1280);
        assert!(m3.closed);
    }

    #[test]
    fn refine_counts_and_area() {
        let m = tetrahedron();
        let r = barycentric_refine(&m);
        assert_eq!(r.mesh.triangles.len(), 24);
        assert!(r.mesh.closed);
        assert_relative_eq!(r.mesh.total_area(), m.total_area(), max_relative = 1e-12);
        let sphere = generate_sphere(Vec3::zeros(), 0.3, 1).unwrap();
        let rs = barycentric_refine(&sphere);
        assert_eq!(rs.mesh.triangles.len(), 6 * 80);
        assert_relative_eq!(rs.mesh.total_area(), sphere.total_area(), max_relative = 1e-12);
    }

    #[test]
    fn mirror_reflects_and_preserves_volume_sign() {
        let m = generate_sphere(Vec3::new(0.0, 0.0, 1.0), 0.5, 1).unwrap();
        let img = mirror_across_plane(&m, 0.0).unwrap();
        assert!(img.closed);
        assert!(img.vertices.iter().all(|v| v.z < 0.0));
        assert!(img.signed_volume() > 0.0);
        // element 0.75 mm above ground -> image at -0.75 mm
        let plate = generate_plate(Vec3::new(0.0, 0.0, 0.75e-3), 1e-3, 1e-3, 1e-3).unwrap();
        let pimg = mirror_across_plane(&plate, 0.0).unwrap();
        assert_relative_eq!(pimg.vertices[0].z, -0.75e-3, max_relative = 1e-12);
        // touching plane is an error
        let touching = generate_plate(Vec3::zeros(), 1.0, 1.0, 1.0).unwrap();
        assert!(mirror_across_plane(&touching, 0.0).is_err());
    }

    #[test]
    fn shape_id_translation_invariant() {
        let scat = generate_plate(Vec3::zeros(), 0.4, 0.4, 0.2).unwrap();
        let boxm = generate_box(Vec3::zeros(), Vec3::new(1.0, 1.0, 0.8), 0.5).unwrap();
        let e1 = ElementGeometry::new(scat.clone(), boxm.clone()).unwrap();
        let off = Vec3::new(12.5, -3.25, 0.125);
        let e2 = ElementGeometry::new(scat.translated(off), boxm.translated(off)).unwrap();
        assert_eq!(e1.shape_id, e2.shape_id);
        assert_relative_eq!((e2.translation - e1.translation - off).norm(), 0.0, epsilon = 1e-9);
        // different scatterer -> different id
        let other = generate_plate(Vec3::zeros(), 0.3, 0.4, 0.2).unwrap();
        let e3 = ElementGeometry::new(other, boxm).unwrap();
        assert_ne!(e1.shape_id, e3.shape_id);
    }

    #[test]
    fn enclosure_enforced() {
        let scat = generate_plate(Vec3::zeros(), 2.0, 2.0, 1.0).unwrap();
        let boxm = generate_box(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), 0.8).unwrap();
        assert!(matches!(ElementGeometry::new(scat, boxm), Err(MeshError::NotEnclosed)));
    }

    #[test]
    fn winding_number_inside_outside() {
        let m = generate_sphere(Vec3::zeros(), 1.0, 1).unwrap();
        assert!(m.contains_point(&Vec3::new(0.2, 0.1, -0.3)));
        assert!(!m.contains_point(&Vec3::new(1.5, 0.0, 0.0)));
    }

    #[test]
    fn cross_and_meander_generate() {
        let c = generate_cross(Vec3::zeros(), 0.1, 0.02, 0.01).unwrap();
        assert!(!c.closed);
        assert!(c.interior_edge_count() > 0);
        // plus shape area = 2*L*w - w^2 approximately (grid snapping)
        let expect = 2.0 * 0.1 * 0.02 - 0.02 * 0.02;
        assert!((c.total_area() - expect).abs() / expect < 0.3);
        let m = generate_meander(Vec3::zeros(), 0.1, 0.06, 0.008, 4, 0.006).unwrap();
        assert!(!m.closed);
        assert!(m.interior_edge_count() > 40);
    }
}
