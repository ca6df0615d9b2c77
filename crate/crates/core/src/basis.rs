//! RWG basis functions and their dual (Buffa-Christiansen style) functions on
//! the barycentric refinement, plus the mixed Gram matrix between the two.

use crate::linalg::{Csr, CsrBuilder};
use crate::mesh::{barycentric_refine, MeshError, RefinedMesh, TriangleMesh};
use crate::Vec3;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Divergence-conforming function on the pair of triangles sharing an
/// interior edge.
#[derive(Debug, Clone)]
pub struct RwgFunction {
    pub edge_index: usize,
    pub plus_triangle: usize,
    pub minus_triangle: usize,
    pub edge_length: f64,
    pub free_vertex_plus: usize,
    pub free_vertex_minus: usize,
}

/// Dual function expanded in micro-RWG functions of the refined mesh.
#[derive(Debug, Clone)]
pub struct DualRwgFunction {
    pub parent_edge_index: usize,
    /// (micro-RWG index, weight)
    pub coefficients: Vec<(usize, f64)>,
}

/// RWG space over a mesh: one function per interior edge, ordered by edge
/// index.
#[derive(Debug, Clone)]
pub struct RwgSpace {
    pub mesh: Arc<TriangleMesh>,
    pub functions: Vec<RwgFunction>,
    /// function index per edge (interior edges only)
    pub edge_function: Vec<Option<usize>>,
    /// per triangle: (function index, sign, free vertex); sign +1 on the plus
    /// triangle, -1 on the minus triangle
    pub tri_functions: Vec<Vec<(usize, f64, usize)>>,
}

impl RwgSpace {
    pub fn dof_count(&self) -> usize {
        self.functions.len()
    }

    /// Value of function `n` at point `r` lying in triangle `tri`.
    pub fn eval(&self, n: usize, tri: usize, r: &Vec3) -> Vec3 {
        let f = &self.functions[n];
        let (sign, free) = if tri == f.plus_triangle {
            (1.0, f.free_vertex_plus)
        } else {
            debug_assert_eq!(tri, f.minus_triangle);
            (-1.0, f.free_vertex_minus)
        };
        let a = self.mesh.tri_area(tri);
        (r - self.mesh.vertices[free]) * (sign * f.edge_length / (2.0 * a))
    }

    /// Surface divergence of function `n` on triangle `tri`.
    pub fn divergence(&self, n: usize, tri: usize) -> f64 {
        let f = &self.functions[n];
        let sign = if tri == f.plus_triangle { 1.0 } else { -1.0 };
        sign * f.edge_length / self.mesh.tri_area(tri)
    }
}

pub fn build_rwg(mesh: Arc<TriangleMesh>) -> Result<RwgSpace, MeshError> {
    if mesh.interior_edge_count() == 0 {
        return Err(MeshError::NoInteriorEdges);
    }
    let mut functions = Vec::new();
    let mut edge_function = vec![None; mesh.edges.len()];
    let mut tri_functions = vec![Vec::new(); mesh.triangles.len()];
    for (ei, edge) in mesh.edges.iter().enumerate() {
        if !edge.is_interior() {
            continue;
        }
        let [a, b] = edge.verts;
        // plus triangle: the one whose winding traverses the edge a -> b
        let (t0, t1) = (edge.tris[0], edge.tris[1]);
        let forward = |ti: usize| {
            let t = mesh.triangles[ti];
            (0..3).any(|k| t[k] == a && t[(k + 1) % 3] == b)
        };
        let (plus, minus) = if forward(t0) { (t0, t1) } else { (t1, t0) };
        let free = |ti: usize| {
            mesh.triangles[ti]
                .into_iter()
                .find(|&v| v != a && v != b)
                .expect("triangle has a free vertex")
        };
        let n = functions.len();
        let f = RwgFunction {
            edge_index: ei,
            plus_triangle: plus,
            minus_triangle: minus,
            edge_length: (mesh.vertices[a] - mesh.vertices[b]).norm(),
            free_vertex_plus: free(plus),
            free_vertex_minus: free(minus),
        };
        tri_functions[plus].push((n, 1.0, f.free_vertex_plus));
        tri_functions[minus].push((n, -1.0, f.free_vertex_minus));
        edge_function[ei] = Some(n);
        functions.push(f);
    }
    Ok(RwgSpace { mesh, functions, edge_function, tri_functions })
}

/// Dual space on the barycentric refinement. Dual function `n` corresponds to
/// parent interior edge `n` in the same ordering as `build_rwg`.
#[derive(Debug, Clone)]
pub struct DualRwgSpace {
    pub parent: Arc<TriangleMesh>,
    pub refined: RefinedMesh,
    pub micro: RwgSpace,
    pub functions: Vec<DualRwgFunction>,
    /// dual coefficients, dof_count x micro dof
    pub coeffs: Csr<f64>,
    /// parent RWG functions expressed in the micro basis, same shape
    pub parent_in_micro: Csr<f64>,
}

impl DualRwgSpace {
    pub fn dof_count(&self) -> usize {
        self.functions.len()
    }
}

/// In-plane unit normal of micro edge `ei`, pointing from the plus side to
/// the minus side of the micro-RWG on that edge.
fn micro_edge_normal(space: &RwgSpace, n: usize) -> Vec3 {
    let f = &space.functions[n];
    let [a, b] = space.mesh.edges[f.edge_index].verts;
    let pa = space.mesh.vertices[a];
    let pb = space.mesh.vertices[b];
    let e = (pb - pa).normalize();
    let mid = (pa + pb) / 2.0;
    let d = mid - space.mesh.vertices[f.free_vertex_plus];
    (d - e * d.dot(&e)).normalize()
}

/// Express a parent RWG function in the micro-RWG basis: the coefficient on a
/// micro edge is the parent's normal flux density across that edge.
fn parent_rwg_in_micro(
    parent_space: &RwgSpace,
    refined: &RefinedMesh,
    micro: &RwgSpace,
    n: usize,
) -> Vec<(usize, f64)> {
    let f = &parent_space.functions[n];
    let mut out = Vec::new();
    for &pt in [f.plus_triangle, f.minus_triangle].iter() {
        for (mt, &parent) in refined.parent_tri.iter().enumerate() {
            if parent != pt {
                continue;
            }
            for &ei in &refined.mesh.tri_edges[mt] {
                let Some(mi) = micro.edge_function[ei] else { continue };
                let mf = &micro.functions[mi];
                // handle each micro edge once, from its plus triangle
                if mf.plus_triangle != mt {
                    continue;
                }
                let [a, b] = refined.mesh.edges[ei].verts;
                let mid = (refined.mesh.vertices[a] + refined.mesh.vertices[b]) / 2.0;
                // skip micro edges whose minus triangle is outside the
                // parent function's support (flux is zero there)
                let minus_parent = refined.parent_tri[mf.minus_triangle];
                if minus_parent != f.plus_triangle && minus_parent != f.minus_triangle {
                    continue;
                }
                let val = parent_space.eval(n, pt, &mid);
                let c = val.dot(&micro_edge_normal(micro, mi));
                if c.abs() > 1e-14 {
                    out.push((mi, c));
                }
            }
        }
    }
    out.sort_by_key(|&(i, _)| i);
    out.dedup_by(|a, b| {
        if a.0 == b.0 {
            // same edge reached from both parent triangles: same flux
            true
        } else {
            false
        }
    });
    out
}

pub fn build_dual_rwg(mesh: Arc<TriangleMesh>) -> Result<DualRwgSpace, MeshError> {
    if !mesh.closed {
        return Err(MeshError::NotClosed);
    }
    let parent_space = build_rwg(mesh.clone())?;
    let refined = barycentric_refine(&mesh);
    let micro = build_rwg(refined.mesh.clone())?;

    // micro triangles per refined vertex, for dual-cell lookup
    let mut vert_tris: Vec<Vec<usize>> = vec![Vec::new(); refined.mesh.vertices.len()];
    for (ti, t) in refined.mesh.triangles.iter().enumerate() {
        for &v in t {
            vert_tris[v].push(ti);
        }
    }
    // micro edges incident to a refined vertex
    let mut vert_edges: Vec<Vec<usize>> = vec![Vec::new(); refined.mesh.vertices.len()];
    for (ei, e) in refined.mesh.edges.iter().enumerate() {
        for &v in &e.verts {
            vert_edges[v].push(ei);
        }
    }

    let mut functions = Vec::new();
    for pf in &parent_space.functions {
        let pe = pf.edge_index;
        let [v1, v2] = mesh.edges[pe].verts;
        let m = refined.edge_midpoint[pe];
        let c1 = refined.tri_center[pf.plus_triangle];
        let c2 = refined.tri_center[pf.minus_triangle];

        // support: dual cells of v1 and v2
        let cell1 = &vert_tris[refined.parent_vertex[v1]];
        let cell2 = &vert_tris[refined.parent_vertex[v2]];
        let area = |cell: &Vec<usize>| -> f64 { cell.iter().map(|&t| refined.mesh.tri_area(t)).sum() };
        let (a1, a2) = (area(cell1), area(cell2));

        // unknown micro-RWG functions: radial edges of both cells plus the
        // two crossing edges (c1, m) and (c2, m)
        let mut unk: Vec<usize> = Vec::new();
        for &v in &[refined.parent_vertex[v1], refined.parent_vertex[v2]] {
            for &ei in &vert_edges[v] {
                if let Some(mi) = micro.edge_function[ei] {
                    unk.push(mi);
                }
            }
        }
        for (ca, cb) in [(c1, m), (c2, m)] {
            let key = [ca.min(cb), ca.max(cb)];
            let ei = refined.mesh.edges.iter().position(|e| e.verts == key).expect("crossing edge");
            unk.push(micro.edge_function[ei].expect("interior"));
        }
        unk.sort_unstable();
        unk.dedup();

        // dual edge length sets the total crossing flux (RWG-like scaling)
        let dual_len = (refined.mesh.vertices[c1] - refined.mesh.vertices[m]).norm()
            + (refined.mesh.vertices[c2] - refined.mesh.vertices[m]).norm();

        // rows: divergence on each support triangle, then flux normalization
        let mut rows: Vec<usize> = cell1.iter().chain(cell2.iter()).copied().collect();
        rows.sort_unstable();
        rows.dedup();
        let nrows = rows.len() + 1;
        let mut mat = DMatrix::<f64>::zeros(nrows, unk.len());
        let mut rhs = DVector::<f64>::zeros(nrows);
        for (ri, &t) in rows.iter().enumerate() {
            let in1 = cell1.contains(&t);
            rhs[ri] = if in1 { dual_len / a1 } else { -dual_len / a2 };
            for (ci, &mi) in unk.iter().enumerate() {
                let mf = &micro.functions[mi];
                if mf.plus_triangle == t || mf.minus_triangle == t {
                    mat[(ri, ci)] = micro.divergence(mi, t);
                }
            }
        }
        // flux row: net flux from cell1 into cell2 across the crossing edges
        let fr = nrows - 1;
        rhs[fr] = dual_len;
        for (ci, &mi) in unk.iter().enumerate() {
            let mf = &micro.functions[mi];
            let e = &refined.mesh.edges[mf.edge_index];
            if e.verts.contains(&m) && (e.verts.contains(&c1) || e.verts.contains(&c2)) {
                let toward2 = cell1.contains(&mf.plus_triangle);
                mat[(fr, ci)] = if toward2 { mf.edge_length } else { -mf.edge_length };
            }
        }

        let svd = mat.clone().svd(true, true);
        let sol = svd.solve(&rhs, 1e-12).expect("dual fan solve");
        let resid = (&mat * &sol - &rhs).norm() / rhs.norm();
        assert!(resid < 1e-10, "dual basis fan solve residual {resid:.3e}");

        let mut coefficients: Vec<(usize, f64)> = unk
            .iter()
            .zip(sol.iter())
            .filter(|(_, &w)| w.abs() > 1e-13)
            .map(|(&mi, &w)| (mi, w))
            .collect();

        // orient so the Gram diagonal (inward-normal convention) is positive
        let d = gram_entry_micro(&parent_space, &refined, &micro, pf, &coefficients);
        if d < 0.0 {
            for c in coefficients.iter_mut() {
                c.1 = -c.1;
            }
        }
        functions.push(DualRwgFunction { parent_edge_index: pe, coefficients });
    }

    let nmicro = micro.dof_count();
    let mut cb = CsrBuilder::<f64>::new(nmicro);
    for f in &functions {
        for &(mi, w) in &f.coefficients {
            cb.push(mi, w);
        }
        cb.finish_row();
    }
    let coeffs = cb.build();

    let mut rb = CsrBuilder::<f64>::new(nmicro);
    for n in 0..parent_space.dof_count() {
        for (mi, w) in parent_rwg_in_micro(&parent_space, &refined, &micro, n) {
            rb.push(mi, w);
        }
        rb.finish_row();
    }
    let parent_in_micro = rb.build();

    Ok(DualRwgSpace { parent: mesh, refined, micro, functions, coeffs, parent_in_micro })
}

// 3-point rule is exact for the degree-2 integrand of the Gram entries.
const GRAM_QUAD: [([f64; 3], f64); 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

/// <Lambda_n, n_in x g> for a parent RWG function and a micro-expanded dual
/// function, integrated exactly over the shared micro triangles.
fn gram_entry_micro(
    parent_space: &RwgSpace,
    refined: &RefinedMesh,
    micro: &RwgSpace,
    pf: &RwgFunction,
    dual_coeffs: &[(usize, f64)],
) -> f64 {
    let mut total = 0.0;
    for &(mi, w) in dual_coeffs {
        let mf = &micro.functions[mi];
        for &mt in [mf.plus_triangle, mf.minus_triangle].iter() {
            let pt = refined.parent_tri[mt];
            if pt != pf.plus_triangle && pt != pf.minus_triangle {
                continue;
            }
            let verts = refined.mesh.tri_vertices(mt);
            let area = refined.mesh.tri_area(mt);
            let n_in = -refined.mesh.tri_normal(mt);
            let pn = parent_space.edge_function[pf.edge_index].expect("interior");
            for (bary, wq) in GRAM_QUAD {
                let r = verts[0] * bary[0] + verts[1] * bary[1] + verts[2] * bary[2];
                let a = parent_space.eval(pn, pt, &r);
                let b = micro.eval(mi, mt, &r) * w;
                total += wq * area * a.dot(&n_in.cross(&b));
            }
        }
    }
    total
}

/// Mixed Gram matrix D with entries <Lambda_n, n_in x Lambda'_n'>, n_in the
/// inward normal of the closed surface. Sparse; nonzero only where supports
/// overlap.
pub fn assemble_gram(rwg: &RwgSpace, dual: &DualRwgSpace) -> Result<Csr<f64>, MeshError> {
    if !Arc::ptr_eq(&rwg.mesh, &dual.parent)
        && (rwg.mesh.vertices.len() != dual.parent.vertices.len()
            || rwg.mesh.triangles != dual.parent.triangles)
    {
        return Err(MeshError::BadParameter("gram: spaces built on different meshes".into()));
    }
    let n = rwg.dof_count();
    let mut b = CsrBuilder::<f64>::new(dual.dof_count());
    for row in 0..n {
        let pf = &rwg.functions[row];
        let support = [pf.plus_triangle, pf.minus_triangle];
        for (col, df) in dual.functions.iter().enumerate() {
            // quick overlap test via parent triangles of the dual support
            let overlaps = df.coefficients.iter().any(|&(mi, _)| {
                let mf = &dual.micro.functions[mi];
                support.contains(&dual.refined.parent_tri[mf.plus_triangle])
                    || support.contains(&dual.refined.parent_tri[mf.minus_triangle])
            });
            if !overlaps {
                continue;
            }
            let v = gram_entry_micro(rwg, &dual.refined, &dual.micro, pf, &df.coefficients);
            if v != 0.0 {
                b.push(col, v);
            }
        }
        b.finish_row();
    }
    Ok(b.build())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_box, generate_plate, generate_sphere, parse_mesh, MeshFormat};
    use approx::assert_relative_eq;

    fn tetra() -> Arc<TriangleMesh> {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n";
        Arc::new(parse_mesh(text, MeshFormat::SimpleTri, "tetra").unwrap())
    }

    #[test]
    fn rwg_counts() {
        let strip = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3\nf 2 4 3\n";
        let m = Arc::new(parse_mesh(strip, MeshFormat::SimpleTri, "strip").unwrap());
        assert_eq!(build_rwg(m).unwrap().dof_count(), 1);
        assert_eq!(build_rwg(tetra()).unwrap().dof_count(), 6);
        let sphere = Arc::new(generate_sphere(Vec3::zeros(), 1.0, 1).unwrap());
        assert_eq!(build_rwg(sphere).unwrap().dof_count(), 120);
    }

    #[test]
    fn rwg_normal_component_continuous() {
        let space = build_rwg(tetra()).unwrap();
        for (n, f) in space.functions.iter().enumerate() {
            let [a, b] = space.mesh.edges[f.edge_index].verts;
            let pa = space.mesh.vertices[a];
            let pb = space.mesh.vertices[b];
            let mid = (pa + pb) / 2.0;
            let e = (pb - pa).normalize();
            // normal flux density across the edge, seen from each side
            let from = |tri: usize| {
                let v = space.eval(n, tri, &mid);
                let nt = space.mesh.tri_normal(tri);
                let edge_n = e.cross(&nt); // in-plane, perpendicular to edge
                v.dot(&edge_n).abs()
            };
            let (p, m) = (from(f.plus_triangle), from(f.minus_triangle));
            assert_relative_eq!(p, m, max_relative = 1e-12);
            assert_relative_eq!(p, 1.0, max_relative = 1e-12); // unit flux density
        }
    }

    #[test]
    fn rwg_charge_neutrality() {
        let space = build_rwg(tetra()).unwrap();
        for (n, f) in space.functions.iter().enumerate() {
            let q = space.divergence(n, f.plus_triangle) * space.mesh.tri_area(f.plus_triangle)
                + space.divergence(n, f.minus_triangle) * space.mesh.tri_area(f.minus_triangle);
            assert!(q.abs() < 1e-12);
        }
    }

    #[test]
    fn rwg_deterministic() {
        let m = Arc::new(generate_sphere(Vec3::zeros(), 1.0, 1).unwrap());
        let a = build_rwg(m.clone()).unwrap();
        let b = build_rwg(m).unwrap();
        for (fa, fb) in a.functions.iter().zip(&b.functions) {
            assert_eq!(fa.edge_index, fb.edge_index);
            assert_eq!(fa.plus_triangle, fb.plus_triangle);
        }
    }

    #[test]
    fn rwg_open_mesh_without_interior_edges_fails() {
        let one = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
        let m = Arc::new(parse_mesh(one, MeshFormat::SimpleTri, "one").unwrap());
        assert!(matches!(build_rwg(m), Err(MeshError::NoInteriorEdges)));
    }

    #[test]
    fn dual_counts_and_open_mesh_rejected() {
        let dual = build_dual_rwg(tetra()).unwrap();
        assert_eq!(dual.dof_count(), 6);
        let sphere = Arc::new(generate_sphere(Vec3::zeros(), 1.0, 1).unwrap());
        assert_eq!(build_dual_rwg(sphere).unwrap().dof_count(), 120);
        let plate = Arc::new(generate_plate(Vec3::zeros(), 1.0, 1.0, 0.5).unwrap());
        assert!(matches!(build_dual_rwg(plate), Err(MeshError::NotClosed)));
    }

    #[test]
    fn dual_solenoidal_balance() {
        // total divergence integral of each dual function vanishes
        let dual = build_dual_rwg(tetra()).unwrap();
        for f in &dual.functions {
            let mut q = 0.0;
            for &(mi, w) in &f.coefficients {
                let mf = &dual.micro.functions[mi];
                for &t in [mf.plus_triangle, mf.minus_triangle].iter() {
                    q += w * dual.micro.divergence(mi, t) * dual.refined.mesh.tri_area(t);
                }
            }
            assert!(q.abs() < 1e-10, "net charge {q:.3e}");
        }
    }

    #[test]
    fn dual_divergence_constant_on_cells() {
        let mesh = Arc::new(generate_box(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), 0.8).unwrap());
        let dual = build_dual_rwg(mesh.clone()).unwrap();
        let f = &dual.functions[0];
        let [v1, v2] = mesh.edges[f.parent_edge_index].verts;
        // divergence per micro triangle in the support
        let mut per_tri: std::collections::BTreeMap<usize, f64> = Default::default();
        for &(mi, w) in &f.coefficients {
            let mf = &dual.micro.functions[mi];
            for &t in [mf.plus_triangle, mf.minus_triangle].iter() {
                *per_tri.entry(t).or_insert(0.0) += w * dual.micro.divergence(mi, t);
            }
        }
        let mut vals1 = Vec::new();
        let mut vals2 = Vec::new();
        for (&t, &d) in &per_tri {
            if d.abs() < 1e-9 {
                continue;
            }
            let tv = dual.refined.mesh.triangles[t];
            if tv.contains(&dual.refined.parent_vertex[v1]) {
                vals1.push(d);
            } else if tv.contains(&dual.refined.parent_vertex[v2]) {
                vals2.push(d);
            } else {
                panic!("divergence outside dual cells");
            }
        }
        for v in &vals1 {
            assert_relative_eq!(*v, vals1[0], max_relative = 1e-9);
        }
        for v in &vals2 {
            assert_relative_eq!(*v, vals2[0], max_relative = 1e-9);
        }
        assert!(vals1[0] * vals2[0] < 0.0);
    }

    #[test]
    fn gram_diagonally_dominant_and_invertible() {
        for mesh in [
            tetra(),
            Arc::new(generate_sphere(Vec3::zeros(), 1.0, 1).unwrap()),
        ] {
            let rwg = build_rwg(mesh.clone()).unwrap();
            let dual = build_dual_rwg(mesh).unwrap();
            let d = assemble_gram(&rwg, &dual).unwrap();
            let dd = d.to_dense();
            for i in 0..dd.nrows() {
                assert!(dd[(i, i)] > 0.0);
                for j in 0..dd.ncols() {
                    if i != j {
                        assert!(
                            dd[(i, i)].abs() > dd[(i, j)].abs(),
                            "row {i}: diag {} vs off {} at {j}",
                            dd[(i, i)],
                            dd[(i, j)]
                        );
                    }
                }
            }
            let svd = dd.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            assert!(smin > 0.0);
            assert!(smax / smin <= 100.0, "gram condition {}", smax / smin);
        }
    }

    #[test]
    fn gram_disjoint_supports_zero() {
        let mesh = Arc::new(generate_sphere(Vec3::zeros(), 1.0, 1).unwrap());
        let rwg = build_rwg(mesh.clone()).unwrap();
        let dual = build_dual_rwg(mesh.clone()).unwrap();
        let d = assemble_gram(&rwg, &dual).unwrap();
        // find a pair with disjoint supports: edges on opposite sides
        let f0 = &rwg.functions[0];
        let mid = |ei: usize| {
            let [a, b] = mesh.edges[ei].verts;
            (mesh.vertices[a] + mesh.vertices[b]) / 2.0
        };
        let m0 = mid(f0.edge_index);
        let far = rwg
            .functions
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                (mid(a.edge_index) - m0)
                    .norm()
                    .partial_cmp(&(mid(b.edge_index) - m0).norm())
                    .unwrap()
            })
            .unwrap()
            .0;
        assert_eq!(d.get(0, far), 0.0);
        assert!(d.nnz() < rwg.dof_count() * dual.dof_count() / 4);
    }

    #[test]
    fn parent_rwg_micro_representation_exact() {
        // the micro expansion must reproduce the parent function pointwise
        let mesh = tetra();
        let rwg = build_rwg(mesh.clone()).unwrap();
        let dual = build_dual_rwg(mesh).unwrap();
        let micro = &dual.micro;
        for n in 0..rwg.dof_count() {
            let (cols, vals) = dual.parent_in_micro.row(n);
            for mt in 0..dual.refined.mesh.triangles.len() {
                let pt = dual.refined.parent_tri[mt];
                let verts = dual.refined.mesh.tri_vertices(mt);
                let r = (verts[0] + verts[1] + verts[2]) / 3.0;
                let mut got = Vec3::zeros();
                for (&mi, &w) in cols.iter().zip(vals) {
                    let mf = &micro.functions[mi];
                    if mf.plus_triangle == mt || mf.minus_triangle == mt {
                        got += micro.eval(mi, mt, &r) * w;
                    }
                }
                let f = &rwg.functions[n];
                let want = if pt == f.plus_triangle || pt == f.minus_triangle {
                    rwg.eval(n, pt, &r)
                } else {
                    Vec3::zeros()
                };
                assert!((got - want).norm() < 1e-12, "fn {n} tri {mt}: {got:?} vs {want:?}");
            }
        }
    }
}
