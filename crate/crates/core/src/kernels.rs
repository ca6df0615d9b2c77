//! Free-space Green's function and Galerkin assembly of the L and K
//! integral operators between arbitrary divergence-conforming spaces.
//!
//! Near and touching triangle pairs use singularity subtraction: the static
//! 1/R, R and grad(1/R) moments are integrated with closed forms and only the
//! smooth remainder is sampled numerically.

use crate::basis::{DualRwgSpace, RwgSpace};
use crate::mesh::TriangleMesh;
use crate::quadrature::{points, QuadratureRule, TriPoint};
use crate::{C64, CMat, Vec3};
use nalgebra::Vector3;
use rayon::prelude::*;
use std::sync::Arc;

pub const C0: f64 = 299_792_458.0;
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;
pub const EPS0: f64 = 1.0 / (MU0 * C0 * C0);
const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("degenerate triangle in pair integral")]
    DegenerateTriangle,
}

#[derive(Debug, Clone, Copy)]
pub struct MediumParams {
    pub frequency: f64,
    pub omega: f64,
    pub mu0: f64,
    pub eps0: f64,
    pub k0: f64,
}

impl MediumParams {
    pub fn free_space(frequency: f64) -> Self {
        assert!(frequency > 0.0, "frequency must be positive");
        let omega = 2.0 * std::f64::consts::PI * frequency;
        Self { frequency, omega, mu0: MU0, eps0: EPS0, k0: omega * (MU0 * EPS0).sqrt() }
    }

    pub fn wavelength(&self) -> f64 {
        C0 / self.frequency
    }

    pub fn eta0(&self) -> f64 {
        (self.mu0 / self.eps0).sqrt()
    }
}

/// e^{-j k0 |r - r'|} / (4 pi |r - r'|)
pub fn green(r: &Vec3, r_src: &Vec3, k0: f64) -> C64 {
    let rr = (r - r_src).norm();
    assert!(rr > 0.0, "green: coincident points");
    C64::from_polar(1.0 / (FOUR_PI * rr), -k0 * rr)
}

/// One linear contribution `scale * (r - v_free)` of a basis function on a
/// triangle; its surface divergence is `2 * scale`.
#[derive(Debug, Clone, Copy)]
pub struct BasisTerm {
    pub func: usize,
    pub scale: f64,
    pub free_vertex: usize,
}

/// Divergence-conforming space in a form the assemblers can consume: a mesh
/// plus, per triangle, the linear terms of every function supported there.
#[derive(Debug, Clone)]
pub struct BasisSpace {
    pub mesh: Arc<TriangleMesh>,
    pub dof_count: usize,
    pub tri_terms: Vec<Vec<BasisTerm>>,
}

impl BasisSpace {
    pub fn from_rwg(space: &RwgSpace) -> Self {
        let mut tri_terms = vec![Vec::new(); space.mesh.triangles.len()];
        for (ti, funcs) in space.tri_functions.iter().enumerate() {
            let area = space.mesh.tri_area(ti);
            for &(n, sign, free) in funcs {
                let l = space.functions[n].edge_length;
                tri_terms[ti].push(BasisTerm {
                    func: n,
                    scale: sign * l / (2.0 * area),
                    free_vertex: free,
                });
            }
        }
        Self { mesh: space.mesh.clone(), dof_count: space.functions.len(), tri_terms }
    }

    /// Dual functions expanded on the barycentric refinement.
    pub fn from_dual(dual: &DualRwgSpace) -> Self {
        let mesh = dual.refined.mesh.clone();
        let mut tri_terms = vec![Vec::new(); mesh.triangles.len()];
        for (n, f) in dual.functions.iter().enumerate() {
            for &(mi, w) in &f.coefficients {
                let mf = &dual.micro.functions[mi];
                for (tri, sign, free) in [
                    (mf.plus_triangle, 1.0, mf.free_vertex_plus),
                    (mf.minus_triangle, -1.0, mf.free_vertex_minus),
                ] {
                    let area = mesh.tri_area(tri);
                    tri_terms[tri].push(BasisTerm {
                        func: n,
                        scale: w * sign * mf.edge_length / (2.0 * area),
                        free_vertex: free,
                    });
                }
            }
        }
        Self { mesh, dof_count: dual.functions.len(), tri_terms }
    }

    /// Value of the expansion with coefficients `x` at a point of triangle
    /// `tri`.
    pub fn eval(&self, x: &crate::CVec, tri: usize, r: &Vec3) -> Vector3<C64> {
        let mut out = Vector3::<C64>::zeros();
        for t in &self.tri_terms[tri] {
            let v = (r - self.mesh.vertices[t.free_vertex]) * t.scale;
            out += v.map(|c| C64::new(c, 0.0)) * x[t.func];
        }
        out
    }
}

struct TriGeom {
    v: [Vec3; 3],
    n: Vec3,
    area: f64,
    centroid: Vec3,
    diameter: f64,
}

fn tri_geom(mesh: &TriangleMesh, ti: usize) -> TriGeom {
    TriGeom {
        v: mesh.tri_vertices(ti),
        n: mesh.tri_normal(ti),
        area: mesh.tri_area(ti),
        centroid: mesh.tri_centroid(ti),
        diameter: mesh.tri_diameter(ti),
    }
}

/// Closed-form static moments over a source triangle for observation `r`:
/// i1 = int 1/R dA', iv = int (r'-rho)/R dA', ig = PV int (r-r')/R^3 dA',
/// ir = int R dA'; rho is the projection of r onto the triangle plane.
struct StaticInts {
    i1: f64,
    iv: Vec3,
    ig: Vec3,
    ir: f64,
    rho: Vec3,
    d: f64,
}

fn static_integrals(r: &Vec3, g: &TriGeom) -> StaticInts {
    let n = g.n;
    let d = (r - g.v[0]).dot(&n);
    let rho = r - n * d;
    let eps_len = 1e-12 * g.diameter;
    let mut i1 = 0.0;
    let mut iv = Vec3::zeros();
    let mut ig_t = Vec3::zeros();
    let mut beta_sum = 0.0;
    let mut ir_line = 0.0;
    for i in 0..3 {
        let p1 = g.v[i];
        let p2 = g.v[(i + 1) % 3];
        let lhat = (p2 - p1).normalize();
        let m = n.cross(&lhat); // in-plane, points into the triangle
        let s = (rho - p1).dot(&m);
        let lm = (p1 - rho).dot(&lhat);
        let lp = (p2 - rho).dot(&lhat);
        let rm = (r - p1).norm();
        let rp = (r - p2).norm();
        let r0sq = s * s + d * d;
        // observation on the edge segment itself: the sf2 and r0^2 f2 terms
        // vanish in the limit; the gradient's in-plane log term is killed by
        // the coplanar cross-product projection downstream
        let on_segment = r0sq <= eps_len * eps_len && lm <= eps_len && lp >= -eps_len;
        let f2 = if on_segment {
            0.0
        } else if lm + lp > 0.0 {
            ((rp + lp) / (rm + lm)).ln()
        } else {
            ((rm - lm) / (rp - lp)).ln()
        };
        let beta = if on_segment {
            0.0
        } else {
            (s * lp).atan2(r0sq + d.abs() * rp) - (s * lm).atan2(r0sq + d.abs() * rm)
        };
        i1 += s * f2 - d.abs() * beta;
        beta_sum += beta;
        // int_edge R dl = line / 2
        let line = r0sq * f2 + lp * rp - lm * rm;
        iv -= m * (0.5 * line);
        ig_t -= m * f2;
        ir_line += s * 0.5 * line;
    }
    let ir = (ir_line + d * d * i1) / 3.0;
    let ig = if d.abs() > eps_len {
        ig_t + n * (d.signum() * beta_sum)
    } else {
        ig_t // principal value on the surface
    };
    StaticInts { i1, iv, ig, ir, rho, d }
}

// Smooth remainder kernels after subtracting the leading static terms, as
// functions of u = k0 R. Series are used for small u to avoid cancellation.

/// (e^{-ju} - 1 + ju + u^2/2) / u
fn rem_phi(u: f64) -> C64 {
    if u < 0.05 {
        let mj = C64::new(0.0, -1.0);
        let mut term = mj * mj * mj / 6.0 * u * u; // n = 3
        let mut sum = term;
        let mut pw = mj * mj * mj;
        for n in 4..9 {
            pw *= mj;
            term = pw * u.powi(n - 1) / (1..=n).map(|m| m as f64).product::<f64>();
            sum += term;
        }
        sum
    } else {
        (C64::from_polar(1.0, -u) - 1.0 + C64::new(0.0, u) + u * u / 2.0) / u
    }
}

/// (e^{-ju} - 1 + ju) / u
fn rem_vec(u: f64) -> C64 {
    if u < 0.05 {
        let mj = C64::new(0.0, -1.0);
        let mut sum = C64::new(0.0, 0.0);
        let mut pw = C64::new(1.0, 0.0);
        let mut fact = 1.0;
        for n in 1..9 {
            pw *= mj;
            fact *= n as f64;
            if n >= 2 {
                sum += pw * u.powi(n - 1) / fact;
            }
        }
        sum
    } else {
        (C64::from_polar(1.0, -u) - 1.0 + C64::new(0.0, u)) / u
    }
}

/// (1 + u^2/2 - (1+ju) e^{-ju}) / u^3
fn rem_grad(u: f64) -> C64 {
    if u < 0.05 {
        let mj = C64::new(0.0, -1.0);
        let mut sum = C64::new(0.0, 0.0);
        let mut pw = C64::new(1.0, 0.0);
        let mut fact = 1.0;
        for n in 1..9 {
            pw *= mj;
            fact *= n as f64;
            if n >= 3 {
                sum += pw * ((n - 1) as f64) * u.powi(n - 3) / fact;
            }
        }
        sum
    } else {
        let e = C64::from_polar(1.0, -u);
        (1.0 + u * u / 2.0 - (C64::new(1.0, u)) * e) / (u * u * u)
    }
}

fn cv(v: Vec3) -> Vector3<C64> {
    v.map(|x| C64::new(x, 0.0))
}

/// Scalar and first-moment potentials: returns (iphi, ivec, refpt) with
/// iphi = int G dA' and int G (r' - v) dA' = ivec + (refpt - v) iphi.
fn potentials(
    r: &Vec3,
    g: &TriGeom,
    k0: f64,
    pts: &[TriPoint],
    near: bool,
) -> (C64, Vector3<C64>, Vec3) {
    if !near {
        let mut iphi = C64::new(0.0, 0.0);
        let mut ivec = Vector3::<C64>::zeros();
        for p in pts {
            let rp = g.v[0] * p.bary[0] + g.v[1] * p.bary[1] + g.v[2] * p.bary[2];
            let gg = green(r, &rp, k0) * (p.weight * g.area);
            iphi += gg;
            ivec += cv(rp) * gg;
        }
        return (iphi, ivec, Vec3::zeros());
    }
    let st = static_integrals(r, g);
    let a = g.area;
    let mut iphi = C64::new(st.i1 - k0 * k0 / 2.0 * st.ir, -k0 * a);
    let mut ivec = cv(st.iv) + cv((g.centroid - st.rho) * a) * C64::new(0.0, -k0);
    for p in pts {
        let rp = g.v[0] * p.bary[0] + g.v[1] * p.bary[1] + g.v[2] * p.bary[2];
        let u = k0 * (r - rp).norm();
        let w = p.weight * a;
        iphi += rem_phi(u) * (k0 * w);
        ivec += cv(rp - st.rho) * (rem_vec(u) * (k0 * w));
    }
    (iphi / FOUR_PI, ivec * C64::new(1.0 / FOUR_PI, 0.0), st.rho)
}

/// int grad_r G(r, r') dA' over the source triangle (principal value when r
/// lies in the triangle plane).
fn grad_potential(r: &Vec3, g: &TriGeom, k0: f64, pts: &[TriPoint], near: bool) -> Vector3<C64> {
    if !near {
        let mut ig = Vector3::<C64>::zeros();
        for p in pts {
            let rp = g.v[0] * p.bary[0] + g.v[1] * p.bary[1] + g.v[2] * p.bary[2];
            let rr = (r - rp).norm();
            let u = k0 * rr;
            let w = -(C64::new(1.0, u)) * C64::from_polar(1.0, -u) / (FOUR_PI * rr * rr * rr);
            ig += cv(r - rp) * (w * (p.weight * g.area));
        }
        return ig;
    }
    let st = static_integrals(r, g);
    let mut ig = cv(-st.ig - (st.d * g.n * st.i1 - st.iv) * (k0 * k0 / 2.0));
    let k3 = k0 * k0 * k0;
    for p in pts {
        let rp = g.v[0] * p.bary[0] + g.v[1] * p.bary[1] + g.v[2] * p.bary[2];
        let u = k0 * (r - rp).norm();
        ig += cv(r - rp) * (rem_grad(u) * (k3 * p.weight * g.area));
    }
    ig * C64::new(1.0 / FOUR_PI, 0.0)
}

/// Pair treatment: touching/overlapping pairs need adaptive outer
/// integration of the subtracted kernel; merely near pairs are accurate with
/// a fixed refined rule; far pairs use plain quadrature.
#[derive(Clone, Copy, PartialEq)]
enum PairTier {
    Far,
    Near,
    Touching,
}

fn shift_geom(g: &TriGeom, origin: &Vec3) -> TriGeom {
    TriGeom {
        v: [g.v[0] - origin, g.v[1] - origin, g.v[2] - origin],
        n: g.n,
        area: g.area,
        centroid: g.centroid - origin,
        diameter: g.diameter,
    }
}

fn shares_vertex(gt: &TriGeom, gs: &TriGeom) -> bool {
    let eps = 1e-9 * gt.diameter.max(gs.diameter);
    gt.v.iter().any(|a| gs.v.iter().any(|b| (a - b).norm() < eps))
}

fn pair_tier(gt: &TriGeom, gs: &TriGeom, threshold: f64) -> PairTier {
    let dist = (gt.centroid - gs.centroid).norm();
    let scale = gt.diameter.max(gs.diameter);
    if dist <= scale {
        PairTier::Touching
    } else if dist <= threshold * scale {
        PairTier::Near
    } else {
        PairTier::Far
    }
}

/// Coplanar triangle pairs contribute exactly zero to the tested K operator:
/// the (principal-value) gradient integral lies in the common plane, its
/// cross product with the in-plane source current is normal to the plane,
/// and the tangential test function annihilates it.
fn coplanar(gt: &TriGeom, gs: &TriGeom) -> bool {
    let scale = gt.diameter.max(gs.diameter);
    gt.n.cross(&gs.n).norm() < 1e-10
        && (gs.centroid - gt.centroid).dot(&gt.n).abs() < 1e-10 * scale
}

fn quad_pts(rule: &QuadratureRule, near: bool) -> &'static [TriPoint] {
    points(if near { rule.near_order } else { rule.order }).expect("validated order")
}

const ADAPT_TOL: f64 = 1e-7;
/// recursion depth for pairs sharing vertices (true singular family)
const ADAPT_DEPTH_SINGULAR: usize = 9;
/// depth for touching-but-disjoint pairs, whose integrand is smooth
const ADAPT_DEPTH_SMOOTH: usize = 4;

fn eval_rule(v: &[Vec3; 3], pts: &[TriPoint], f: &dyn Fn(&Vec3, &mut [C64]), nvals: usize) -> Vec<C64> {
    let area = 0.5 * (v[1] - v[0]).cross(&(v[2] - v[0])).norm();
    let mut acc = vec![C64::new(0.0, 0.0); nvals];
    let mut tmp = vec![C64::new(0.0, 0.0); nvals];
    for p in pts {
        let r = v[0] * p.bary[0] + v[1] * p.bary[1] + v[2] * p.bary[2];
        for t in tmp.iter_mut() {
            *t = C64::new(0.0, 0.0);
        }
        f(&r, &mut tmp);
        for (a, t) in acc.iter_mut().zip(&tmp) {
            *a += t * (p.weight * area);
        }
    }
    acc
}

fn split4(v: &[Vec3; 3]) -> [[Vec3; 3]; 4] {
    let m01 = (v[0] + v[1]) / 2.0;
    let m12 = (v[1] + v[2]) / 2.0;
    let m20 = (v[2] + v[0]) / 2.0;
    [[v[0], m01, m20], [m01, v[1], m12], [m20, m12, v[2]], [m01, m12, m20]]
}

/// Adaptive outer integration over the test triangle for touching/singular
/// pairs: the closed-form inner potentials are smooth inside the triangle
/// but vary sharply near source edges, so a fixed rule is not enough.
///
/// Level-synchronized refinement: each round refines every leaf whose local
/// error exceeds an equal share of the remaining tolerance. Decisions depend
/// only on local comparisons and the leaf count, so refinement is
/// deterministic and translation-invariant, while effort still concentrates
/// where the error lives.
fn adaptive_outer(
    v: [Vec3; 3],
    pts: &[TriPoint],
    f: &dyn Fn(&Vec3, &mut [C64]),
    nvals: usize,
    tol_abs: Option<f64>,
    depth: usize,
) -> Vec<C64> {
    struct Cell {
        children: [[Vec3; 3]; 4],
        child_vals: [Vec<C64>; 4],
        err: f64,
        depth: usize,
    }
    let make_cell = |tri: &[Vec3; 3], own: &[C64], depth: usize| -> Cell {
        let children = split4(tri);
        let child_vals: [Vec<C64>; 4] =
            std::array::from_fn(|i| eval_rule(&children[i], pts, f, nvals));
        let mut err = 0.0;
        for k in 0..nvals {
            let fine: C64 = child_vals.iter().map(|c| c[k]).sum();
            err += (fine - own[k]).norm();
        }
        Cell { children, child_vals, err, depth }
    };
    let root_vals = eval_rule(&v, pts, f, nvals);
    let tol = tol_abs
        .unwrap_or_else(|| ADAPT_TOL * root_vals.iter().map(|c| c.norm()).sum::<f64>().max(1e-300));
    let mut leaves = vec![make_cell(&v, &root_vals, depth)];
    const MAX_LEAVES: usize = 4096;
    loop {
        let err_sum: f64 = leaves.iter().map(|c| c.err).sum();
        let mag: f64 = leaves
            .iter()
            .flat_map(|c| c.child_vals.iter())
            .flat_map(|cv| cv.iter())
            .map(|x| x.norm())
            .sum();
        // noise floor: when the integrand cancels pointwise, the residual is
        // rounding and no subdivision improves it
        if err_sum <= tol.max(1e-12 * mag) || leaves.len() >= MAX_LEAVES {
            break;
        }
        // equal-share local threshold: decisions depend only on local errors
        // and the leaf count, keeping refinement translation-invariant
        let threshold = 0.5 * tol / leaves.len() as f64;
        let mut next = Vec::with_capacity(leaves.len());
        let mut refined = false;
        for cell in leaves {
            if cell.err > threshold && cell.depth > 0 {
                for i in 0..4 {
                    next.push(make_cell(&cell.children[i], &cell.child_vals[i], cell.depth - 1));
                }
                refined = true;
            } else {
                next.push(cell);
            }
        }
        leaves = next;
        if !refined {
            break;
        }
    }
    (0..nvals)
        .map(|k| leaves.iter().flat_map(|c| c.child_vals.iter().map(move |cv| cv[k])).sum())
        .collect()
}

/// Galerkin matrix of the tested L operator in mixed-potential form, scaled
/// so that entry (n, n') = -j omega mu0 [ <f_n, int G f_n'> -
/// (1/k0^2) <div f_n, int G div f_n'> ].
pub fn assemble_l(
    test: &BasisSpace,
    src: &BasisSpace,
    medium: &MediumParams,
    quad: &QuadratureRule,
) -> CMat {
    assemble(test, src, medium, quad, Operator::L)
}

/// Galerkin matrix of the tested K operator: entry (n, n') =
/// <f_n, int grad_r G x f_n'>, principal value on shared surfaces.
pub fn assemble_k(
    test: &BasisSpace,
    src: &BasisSpace,
    medium: &MediumParams,
    quad: &QuadratureRule,
) -> CMat {
    assemble(test, src, medium, quad, Operator::K)
}

#[derive(Clone, Copy, PartialEq)]
enum Operator {
    L,
    K,
}

fn assemble(
    test: &BasisSpace,
    src: &BasisSpace,
    medium: &MediumParams,
    quad: &QuadratureRule,
    op: Operator,
) -> CMat {
    quad.validate().expect("quadrature rule");
    let k0 = medium.k0;
    let src_geom: Vec<TriGeom> = (0..src.mesh.triangles.len())
        .map(|t| tri_geom(&src.mesh, t))
        .collect();
    let scale_l = C64::new(0.0, -medium.omega * medium.mu0);
    // Galerkin L on a single space is exactly symmetric; assemble one
    // triangle-pair order and mirror so reciprocity holds to the bit (and the
    // self-block costs half as much)
    let self_adjoint = std::ptr::eq(test, src) && op == Operator::L;
    // one pass per (test triangle, source triangle): all basis-term
    // combinations share the expensive inner integrals
    let blocks: Vec<Vec<(usize, usize, C64)>> = (0..test.mesh.triangles.len())
        .into_par_iter()
        .map(|tt| {
            let terms_t = &test.tri_terms[tt];
            let mut out = Vec::new();
            if terms_t.is_empty() {
                return out;
            }
            let gt_raw = tri_geom(&test.mesh, tt);
            // work in coordinates relative to the test triangle so the pair
            // integrals are functions of relative geometry only (exact
            // translation invariance, and no large-coordinate cancellation)
            let origin = gt_raw.v[0];
            let gt = shift_geom(&gt_raw, &origin);
            let vts: Vec<Vec3> =
                terms_t.iter().map(|t| test.mesh.vertices[t.free_vertex] - origin).collect();
            let nt = terms_t.len();
            for (ss, gs_raw) in src_geom.iter().enumerate() {
                if self_adjoint && ss < tt {
                    continue;
                }
                let terms_s = &src.tri_terms[ss];
                if terms_s.is_empty() {
                    continue;
                }
                let tier = pair_tier(&gt_raw, gs_raw, quad.near_threshold);
                if op == Operator::K && coplanar(&gt_raw, gs_raw) {
                    continue;
                }
                let gs = &shift_geom(gs_raw, &origin);
                let near = tier != PairTier::Far;
                let ns = terms_s.len();
                let ipts = quad_pts(quad, near);
                let integrand = |r: &Vec3, vals: &mut [C64]| match op {
                    Operator::L => {
                        let (iphi, ivec, refpt) = potentials(r, gs, k0, ipts, near);
                        for (i, term_s) in terms_s.iter().enumerate() {
                            let vs = src.mesh.vertices[term_s.free_vertex] - origin;
                            let vp = ivec + cv(refpt - vs) * iphi;
                            for (j, vt) in vts.iter().enumerate() {
                                vals[j * ns + i] = (cv(r - vt).dot(&vp)
                                    - iphi * (4.0 / (k0 * k0)))
                                    * term_s.scale;
                            }
                        }
                    }
                    Operator::K => {
                        let ig = grad_potential(r, gs, k0, ipts, near);
                        for (i, term_s) in terms_s.iter().enumerate() {
                            let vs = src.mesh.vertices[term_s.free_vertex] - origin;
                            let kv = ig.cross(&cv(r - vs)) * C64::new(term_s.scale, 0.0);
                            for (j, vt) in vts.iter().enumerate() {
                                vals[j * ns + i] = cv(r - vt).dot(&kv);
                            }
                        }
                    }
                };
                let vals = if tier == PairTier::Touching {
                    let depth = if shares_vertex(&gt_raw, gs_raw) {
                        ADAPT_DEPTH_SINGULAR
                    } else {
                        ADAPT_DEPTH_SMOOTH
                    };
                    adaptive_outer(gt.v, ipts, &integrand, nt * ns, None, depth)
                } else {
                    eval_rule(&gt.v, ipts, &integrand, nt * ns)
                };
                for (j, term_t) in terms_t.iter().enumerate() {
                    let pref = match op {
                        Operator::L => scale_l * term_t.scale,
                        Operator::K => C64::new(term_t.scale, 0.0),
                    };
                    for (i, term_s) in terms_s.iter().enumerate() {
                        let v = pref * vals[j * ns + i];
                        if self_adjoint && ss > tt {
                            out.push((term_t.func, term_s.func, v));
                            out.push((term_s.func, term_t.func, v));
                        } else if self_adjoint {
                            // diagonal triangle pair: split each basis-term
                            // combination across both entry orders so the
                            // (i, j) and (j, i) quadrature values average out
                            let h = v * 0.5;
                            out.push((term_t.func, term_s.func, h));
                            out.push((term_s.func, term_t.func, h));
                        } else {
                            out.push((term_t.func, term_s.func, v));
                        }
                    }
                }
            }
            out
        })
        .collect();
    let mut m = CMat::zeros(test.dof_count, src.dof_count);
    for block in blocks {
        for (i, j, v) in block {
            m[(i, j)] += v;
        }
    }
    m
}

/// Scattered electric field of an expanded current at an observation point
/// off the source surface: E = -j omega mu0 [ int G J + (1/k0^2) grad_r
/// int G div J ]. Plain quadrature; keep `r` at least a triangle diameter
/// away from the mesh.
pub fn scattered_field(
    src: &BasisSpace,
    x: &crate::CVec,
    medium: &MediumParams,
    r: &Vec3,
) -> Vector3<C64> {
    let k0 = medium.k0;
    let pts = points(6).unwrap();
    let mut acc = Vector3::<C64>::zeros();
    for (ti, terms) in src.tri_terms.iter().enumerate() {
        if terms.is_empty() {
            continue;
        }
        let v = src.mesh.tri_vertices(ti);
        let area = src.mesh.tri_area(ti);
        let mut div = C64::new(0.0, 0.0);
        for t in terms {
            div += x[t.func] * (2.0 * t.scale);
        }
        for p in pts {
            let rp = v[0] * p.bary[0] + v[1] * p.bary[1] + v[2] * p.bary[2];
            let w = p.weight * area;
            let g = green(r, &rp, k0);
            let mut j = Vector3::<C64>::zeros();
            for t in terms {
                j += cv((rp - src.mesh.vertices[t.free_vertex]) * t.scale) * x[t.func];
            }
            acc += j * (g * w);
            let d = r - rp;
            let dist = d.norm();
            let grad_g = cv(d)
                * (-(C64::new(1.0, k0 * dist)) * g / (dist * dist));
            acc += grad_g * (div * (w / (k0 * k0)));
        }
    }
    acc * C64::new(0.0, -medium.omega * medium.mu0)
}

/// Pairwise integral kinds handled by `singular_pair_integral`.
#[derive(Debug, Clone, Copy)]
pub enum PairKind {
    /// int int G (r - v_test).(r' - v_src) dA' dA
    LSmooth { v_test: Vec3, v_src: Vec3 },
    /// int int G dA' dA
    LCharge,
    /// int int (r - v_test) . [grad_r G x (r' - v_src)] dA' dA
    K { v_test: Vec3, v_src: Vec3 },
}

/// Double integral over a near or touching triangle pair using singularity
/// subtraction. Also valid for separated pairs (subtraction is harmless).
pub fn singular_pair_integral(
    tri_test: [Vec3; 3],
    tri_src: [Vec3; 3],
    kind: PairKind,
    k0: f64,
    quad: &QuadratureRule,
) -> Result<C64, KernelError> {
    let area = |t: &[Vec3; 3]| 0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm();
    let a_t = area(&tri_test);
    if a_t <= 0.0 || area(&tri_src) <= 0.0 {
        return Err(KernelError::DegenerateTriangle);
    }
    let diam = |t: &[Vec3; 3]| {
        (t[0] - t[1]).norm().max((t[1] - t[2]).norm()).max((t[2] - t[0]).norm())
    };
    let gs = TriGeom {
        v: tri_src,
        n: (tri_src[1] - tri_src[0]).cross(&(tri_src[2] - tri_src[0])).normalize(),
        area: area(&tri_src),
        centroid: (tri_src[0] + tri_src[1] + tri_src[2]) / 3.0,
        diameter: diam(&tri_src),
    };
    let pts = points(quad.near_order).expect("validated order");
    let integrand = |r: &Vec3, vals: &mut [C64]| match kind {
        PairKind::LCharge => {
            let (iphi, _, _) = potentials(r, &gs, k0, pts, true);
            vals[0] = iphi;
        }
        PairKind::LSmooth { v_test, v_src } => {
            let (iphi, ivec, refpt) = potentials(r, &gs, k0, pts, true);
            let vp = ivec + cv(refpt - v_src) * iphi;
            vals[0] = cv(r - v_test).dot(&vp);
        }
        PairKind::K { v_test, v_src } => {
            let ig = grad_potential(r, &gs, k0, pts, true);
            vals[0] = cv(r - v_test).dot(&ig.cross(&cv(r - v_src)));
        }
    };
    Ok(adaptive_outer(tri_test, pts, &integrand, 1, None, ADAPT_DEPTH_SINGULAR)[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_rwg;
    use crate::mesh::{parse_mesh, MeshFormat};
    use approx::assert_relative_eq;

    fn tetra() -> Arc<TriangleMesh> {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n";
        Arc::new(parse_mesh(text, MeshFormat::SimpleTri, "tetra").unwrap())
    }

    fn strip(offset: Vec3) -> Arc<TriangleMesh> {
        let base = "v 0 0 0\nv 0.2 0 0\nv 0 0.2 0\nv 0.2 0.2 0\nf 1 2 3\nf 2 4 3\n";
        let m = parse_mesh(base, MeshFormat::SimpleTri, "strip").unwrap();
        Arc::new(m.translated(offset))
    }

    #[test]
    fn green_examples() {
        let g = green(&Vec3::zeros(), &Vec3::new(1.0, 0.0, 0.0), 0.0);
        assert_relative_eq!(g.re, 1.0 / FOUR_PI, max_relative = 1e-12);
        assert_relative_eq!(g.im, 0.0, epsilon = 1e-15);

        // one wavelength: phase -2pi, i.e. real positive again
        let lambda = 2.0;
        let k0 = 2.0 * std::f64::consts::PI / lambda;
        let g = green(&Vec3::zeros(), &Vec3::new(lambda, 0.0, 0.0), k0);
        assert_relative_eq!(g.re, 1.0 / (FOUR_PI * lambda), max_relative = 1e-12);
        assert!(g.im.abs() < 1e-15);

        // half wavelength at k0 = 2pi: magnitude 1/(2pi), phase -pi
        let g = green(&Vec3::zeros(), &Vec3::new(0.5, 0.0, 0.0), 2.0 * std::f64::consts::PI);
        assert_relative_eq!(g.norm(), 1.0 / (2.0 * std::f64::consts::PI), max_relative = 1e-12);
        assert_relative_eq!(g.re, -1.0 / (2.0 * std::f64::consts::PI), max_relative = 1e-12);
    }

    #[test]
    fn l_matrix_symmetric() {
        let rwg = build_rwg(tetra()).unwrap();
        let space = BasisSpace::from_rwg(&rwg);
        let medium = MediumParams::free_space(C0 / 10.0); // edges near lambda/10
        let l = assemble_l(&space, &space, &medium, &QuadratureRule::default());
        let diff = (&l - l.transpose()).norm() / l.norm();
        assert!(diff <= 1e-6, "asymmetry {diff:.3e}");
    }

    #[test]
    fn quadrature_convergence_far_pair() {
        let s1 = strip(Vec3::zeros());
        let tilted = "v 2 0.3 0.2\nv 2.2 0.3 0.3\nv 2 0.5 0.25\nv 2.2 0.5 0.35\nf 1 2 3\nf 2 4 3\n";
        let s2 = Arc::new(parse_mesh(tilted, MeshFormat::SimpleTri, "tilted").unwrap());
        let b1 = BasisSpace::from_rwg(&build_rwg(s1).unwrap());
        let b2 = BasisSpace::from_rwg(&build_rwg(s2).unwrap());
        // triangles well below a wavelength: the usual electrical density
        let medium = MediumParams::free_space(C0 / 8.0);
        let q = QuadratureRule::default();
        for op in [Operator::L, Operator::K] {
            let a = assemble(&b1, &b2, &medium, &q, op);
            let b = assemble(&b1, &b2, &medium, &q.refined(), op);
            let rel = (&a - &b).norm() / a.norm();
            assert!(rel < 1e-3, "quadrature sensitivity {rel:.3e}");
        }
    }

    #[test]
    fn translation_invariance() {
        let medium = MediumParams::free_space(C0);
        let q = QuadratureRule::default();
        let shift = Vec3::new(3.2, -1.7, 0.9);
        let b1 = BasisSpace::from_rwg(&build_rwg(tetra()).unwrap());
        let b1t = BasisSpace::from_rwg(&build_rwg(Arc::new(tetra().translated(shift))).unwrap());
        let a = assemble_l(&b1, &b1, &medium, &q);
        let b = assemble_l(&b1t, &b1t, &medium, &q);
        let rel = (&a - &b).norm() / a.norm();
        assert!(rel < 1e-12, "translation sensitivity {rel:.3e}");
    }

    #[test]
    fn self_term_static_frozen() {
        // int int 1/(4 pi R) over the unit right triangle against itself;
        // reference value from high-precision adaptive integration
        let t = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let got = singular_pair_integral(t, t, PairKind::LCharge, 0.0, &QuadratureRule::default())
            .unwrap();
        let want = 1.003065884773180 / FOUR_PI;
        assert_relative_eq!(got.re, want, max_relative = 1e-6);
        assert!(got.im.abs() < 1e-15);
    }

    #[test]
    fn k_self_patch_vanishes() {
        let t = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let kind = PairKind::K { v_test: t[0], v_src: t[1] };
        let got = singular_pair_integral(t, t, kind, 2.0, &QuadratureRule::default()).unwrap();
        assert!(got.norm() < 1e-14, "self PV {got}");
    }

    #[test]
    fn k_coplanar_adjacent_vanishes() {
        // zero-measure overlap, same plane: tested component is zero
        let t1 = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let t2 = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let kind = PairKind::K { v_test: t1[0], v_src: t2[1] };
        let got = singular_pair_integral(t1, t2, kind, 2.0, &QuadratureRule::default()).unwrap();
        assert!(got.norm() < 1e-13, "coplanar PV {got}");
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let t1 = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        let t2 = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        assert!(matches!(
            singular_pair_integral(t1, t2, PairKind::LCharge, 1.0, &QuadratureRule::default()),
            Err(KernelError::DegenerateTriangle)
        ));
    }

    #[test]
    fn low_frequency_charge_dominance() {
        // EFIE charge term scales as 1/omega as k0 -> 0
        let rwg = build_rwg(tetra()).unwrap();
        let space = BasisSpace::from_rwg(&rwg);
        let q = QuadratureRule::default();
        let l1 = assemble_l(&space, &space, &MediumParams::free_space(1.0e3), &q);
        let l2 = assemble_l(&space, &space, &MediumParams::free_space(1.0e2), &q);
        let r = l2[(0, 0)].im / l1[(0, 0)].im;
        assert_relative_eq!(r, 10.0, max_relative = 1e-3);
        assert!(l1[(0, 0)].im.abs() > 1e3 * l1[(0, 0)].re.abs());
    }

    #[test]
    fn near_and_far_paths_agree_at_moderate_separation() {
        // a pair just past the near threshold must give the same entries
        // through either code path
        let medium = MediumParams::free_space(C0);
        let t1 = [Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.1, 0.0)];
        let t2 = [
            Vec3::new(0.25, 0.05, 0.2),
            Vec3::new(0.35, 0.0, 0.2),
            Vec3::new(0.3, 0.1, 0.25),
        ];
        let q = QuadratureRule { order: 12, near_order: 12, near_threshold: 2.0 };
        let kind = PairKind::LSmooth { v_test: t1[0], v_src: t2[0] };
        let near = singular_pair_integral(t1, t2, kind, medium.k0, &q).unwrap();
        // far path via raw quadrature
        let gs = TriGeom {
            v: t2,
            n: (t2[1] - t2[0]).cross(&(t2[2] - t2[0])).normalize(),
            area: 0.5 * (t2[1] - t2[0]).cross(&(t2[2] - t2[0])).norm(),
            centroid: (t2[0] + t2[1] + t2[2]) / 3.0,
            diameter: 0.15,
        };
        let pts = points(12).unwrap();
        let a_t = 0.005;
        let mut far = C64::new(0.0, 0.0);
        for p in pts {
            let r = t1[0] * p.bary[0] + t1[1] * p.bary[1] + t1[2] * p.bary[2];
            let (iphi, ivec, refpt) = potentials(&r, &gs, medium.k0, pts, false);
            let vp = ivec + cv(refpt - t2[0]) * iphi;
            far += cv(r - t1[0]).dot(&vp) * (p.weight * a_t);
        }
        assert_relative_eq!(near.re, far.re, max_relative = 1e-8);
        assert_relative_eq!(near.im, far.im, max_relative = 1e-8);
    }
}
