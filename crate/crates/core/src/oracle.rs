//! Independent reference implementations used by the test suite and the
//! `validate` subcommand: Mie series for PEC spheres and brute-force /
//! adaptive integration of kernel pairs.
//!
//! Nothing here shares quadrature machinery with the assembly path: all
//! cubature is tensor Gauss-Legendre on a collapsed-square map of the
//! triangle, with nodes computed by Newton iteration.

use crate::{C64, Vec3};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("mie series did not converge within {0} terms")]
    MieNonConvergence(usize),
    #[error("adaptive integration budget exhausted (tol {0:.3e})")]
    BudgetExhausted(f64),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

/// Gauss-Legendre nodes and weights on [0, 1].
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // initial guess on [-1, 1]
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n and derivative by recurrence
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push(((x + 1.0) / 2.0, w / 2.0));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// Tensor Gauss-Legendre cubature over a triangle via the collapsed-square
/// map r(u, v) = a + u (b - a) + u v (c - b), |J| = 2 A u.
pub fn tri_cubature<F: FnMut(&Vec3) -> C64>(v: &[Vec3; 3], n: usize, f: &mut F) -> C64 {
    let gl = gauss_legendre(n);
    let area2 = (v[1] - v[0]).cross(&(v[2] - v[0])).norm();
    let mut acc = C64::new(0.0, 0.0);
    for &(u, wu) in &gl {
        for &(t, wt) in &gl {
            let r = v[0] + (v[1] - v[0]) * u + (v[2] - v[1]) * (u * t);
            acc += f(&r) * (wu * wt * area2 * u);
        }
    }
    acc
}

/// Brute-force double cubature over a triangle pair. Different orders on the
/// two triangles keep node sets disjoint even for coincident triangles.
pub fn pair_cubature<F: FnMut(&Vec3, &Vec3) -> C64>(
    t1: &[Vec3; 3],
    t2: &[Vec3; 3],
    n: usize,
    f: &mut F,
) -> C64 {
    tri_cubature(t1, n, &mut |r: &Vec3| tri_cubature(t2, n + 1, &mut |rp: &Vec3| f(r, rp)))
}

fn split(t: &[Vec3; 3]) -> [[Vec3; 3]; 4] {
    let m01 = (t[0] + t[1]) / 2.0;
    let m12 = (t[1] + t[2]) / 2.0;
    let m20 = (t[2] + t[0]) / 2.0;
    [[t[0], m01, m20], [m01, t[1], m12], [m20, m12, t[2]], [m01, m12, m20]]
}

/// Adaptive single-triangle integral: a worklist keeps refining whichever
/// cell carries the largest error estimate until the global estimate meets
/// the tolerance.
pub fn adaptive_tri_integral<F: FnMut(&Vec3) -> C64>(
    v: &[Vec3; 3],
    tol: f64,
    f: &mut F,
) -> Result<C64, OracleError> {
    struct Cell {
        v: [Vec3; 3],
        value: C64,
        err: f64,
    }
    let assess = |v: &[Vec3; 3], f: &mut F| {
        let coarse = tri_cubature(v, 3, f);
        let fine = tri_cubature(v, 5, f);
        Cell { v: *v, value: fine, err: (fine - coarse).norm() }
    };
    let mut cells = vec![assess(v, f)];
    let mut budget = 40_000usize;
    loop {
        let total_err: f64 = cells.iter().map(|c| c.err).sum();
        if total_err <= tol {
            return Ok(cells.iter().map(|c| c.value).sum());
        }
        if budget == 0 {
            return Err(OracleError::BudgetExhausted(tol));
        }
        budget -= 1;
        let worst = cells
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.err.partial_cmp(&b.1.err).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let c = cells.swap_remove(worst);
        for child in &split(&c.v) {
            cells.push(assess(child, f));
        }
    }
}

/// Inner integral over a source triangle in polar coordinates about the
/// projection of the observation point: the R dR Jacobian cancels a 1/R
/// singularity, and a sinh substitution handles the near-singular case of an
/// observation point just off the plane.
fn polar_inner<F: FnMut(&Vec3, &Vec3) -> C64>(
    r: &Vec3,
    tri: &[Vec3; 3],
    n: usize,
    f: &mut F,
) -> C64 {
    let nrm = (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).normalize();
    let d = (r - tri[0]).dot(&nrm);
    let p = r - nrm * d;
    let gl = gauss_legendre(n);
    let mut acc = C64::new(0.0, 0.0);
    let scale = (tri[0] - tri[1]).norm().max((tri[1] - tri[2]).norm());
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let va = a - p;
        let vb = b - p;
        let ra = va.norm();
        if ra < 1e-14 * scale {
            continue; // degenerate wedge: p sits on this vertex
        }
        let e1 = va / ra;
        let e2 = nrm.cross(&e1);
        let phi = vb.dot(&e2).atan2(vb.dot(&e1));
        if phi.abs() < 1e-15 {
            continue;
        }
        let m = nrm.cross(&(b - a)).normalize();
        let am = va.dot(&m);
        // radial integral at a single azimuth
        let radial = |th: f64, f: &mut F| -> C64 {
            let dir = e1 * th.cos() + e2 * th.sin();
            let denom = dir.dot(&m);
            let rline = am / denom;
            // a collapsed wedge contributes O(rline) and would otherwise put
            // quadrature points on top of the observation point
            if !rline.is_finite() || rline <= 1e-9 * scale {
                return C64::new(0.0, 0.0);
            }
            let mut acc = C64::new(0.0, 0.0);
            if d.abs() > 1e-12 * scale {
                let tmax = (rline / d.abs()).asinh();
                for &(sq, wr) in &gl {
                    let t = tmax * sq;
                    let rr = d.abs() * t.sinh();
                    let y = p + dir * rr;
                    acc += f(r, &y) * (rr * d.abs() * t.cosh() * tmax * wr);
                }
            } else {
                for &(sq, wr) in &gl {
                    let rr = rline * sq;
                    let y = p + dir * rr;
                    acc += f(r, &y) * (rr * rline * wr);
                }
            }
            acc
        };
        // the azimuthal integrand varies like sec(theta) when p approaches a
        // vertex, so bisect adaptively instead of using one fixed rule
        let gl8: Vec<(f64, f64)> = gauss_legendre(8);
        fn theta_int<G: FnMut(f64) -> C64>(
            t0: f64,
            t1: f64,
            gl8: &[(f64, f64)],
            gl16: &[(f64, f64)],
            depth: usize,
            g: &mut G,
        ) -> C64 {
            let span = t1 - t0;
            let eval = |rule: &[(f64, f64)], g: &mut G| {
                rule.iter().map(|&(x, w)| g(t0 + span * x) * (span * w)).sum::<C64>()
            };
            let coarse = eval(gl8, g);
            let fine = eval(gl16, g);
            if depth == 0 || (fine - coarse).norm() <= 1e-12 * fine.norm().max(1e-30) {
                return fine;
            }
            let tm = (t0 + t1) / 2.0;
            theta_int(t0, tm, gl8, gl16, depth - 1, g)
                + theta_int(tm, t1, gl8, gl16, depth - 1, g)
        }
        let mut g = |th: f64| radial(th, f);
        acc += theta_int(0.0, phi, &gl8, &gl, 14, &mut g);
    }
    acc
}

/// Adaptive double integral over a triangle pair, valid for singular kernels
/// such as 1/R on coincident or adjacent triangles: the singular sub-pairs
/// shrink under subdivision and their contribution vanishes geometrically.
pub fn adaptive_pair_integral<F: FnMut(&Vec3, &Vec3) -> C64>(
    t1: &[Vec3; 3],
    t2: &[Vec3; 3],
    tol: f64,
    f: &mut F,
) -> Result<C64, OracleError> {
    adaptive_tri_integral(t1, tol, &mut |r: &Vec3| polar_inner(r, t2, 16, f))
}

/// Mie solution for a PEC sphere under a linearly polarized plane wave.
/// `theta_rad` is the scattering angle measured from the propagation
/// direction (pi = backscatter). `sigma_e` is the bistatic RCS in the plane
/// containing the incident E field, `sigma_h` the orthogonal plane.
#[derive(Debug, Clone)]
pub struct MieSolution {
    pub theta_rad: Vec<f64>,
    pub sigma_e: Vec<f64>,
    pub sigma_h: Vec<f64>,
    pub s1: Vec<C64>,
    pub s2: Vec<C64>,
    pub terms: usize,
}

pub fn mie_pec_sphere(
    radius: f64,
    frequency: f64,
    theta_rad: &[f64],
) -> Result<MieSolution, OracleError> {
    let k = 2.0 * std::f64::consts::PI * frequency / SPEED_OF_LIGHT;
    let x = k * radius;
    if !(x > 0.0 && x <= 50.0) {
        return Err(OracleError::BadParameter(format!("ka = {x} outside (0, 50]")));
    }
    let n_cap = (x + 4.0 * x.cbrt() + 20.0).ceil() as usize;

    // Riccati-Bessel psi_n = x j_n(x): downward recurrence, normalized by j0
    let m = n_cap + 15 + x as usize;
    let mut jj = vec![0.0f64; m + 2];
    jj[m + 1] = 0.0;
    jj[m] = 1e-30;
    for n in (1..=m).rev() {
        jj[n - 1] = (2.0 * n as f64 + 1.0) / x * jj[n] - jj[n + 1];
        if jj[n - 1].abs() > 1e250 {
            for v in jj.iter_mut().skip(n - 1) {
                *v *= 1e-250;
            }
        }
    }
    let scale = (x.sin() / x) / jj[0];
    let psi: Vec<f64> = (0..=n_cap).map(|n| x * jj[n] * scale).collect();
    // zeta_n = x y_n(x): stable upward
    let mut zeta = vec![0.0f64; n_cap + 1];
    zeta[0] = -x.cos();
    if n_cap >= 1 {
        zeta[1] = -x.cos() / x - x.sin();
        for n in 1..n_cap {
            zeta[n + 1] = (2.0 * n as f64 + 1.0) / x * zeta[n] - zeta[n - 1];
        }
    }
    // outgoing convention e^{+j omega t}: xi_n = psi_n - j zeta_n
    let xi = |n: usize| C64::new(psi[n], -zeta[n]);
    let dpsi = |n: usize| psi[n - 1] - n as f64 / x * psi[n];
    let dxi = |n: usize| xi(n - 1) - xi(n) * (n as f64 / x);

    // scattering coefficients for a PEC sphere
    let mut a = vec![C64::new(0.0, 0.0); n_cap + 1];
    let mut b = vec![C64::new(0.0, 0.0); n_cap + 1];
    let mut terms = n_cap;
    let mut converged = false;
    let mut running = 0.0f64;
    for n in 1..=n_cap {
        a[n] = C64::new(dpsi(n), 0.0) / dxi(n);
        b[n] = C64::new(psi[n], 0.0) / xi(n);
        let t = (2.0 * n as f64 + 1.0) * (a[n].norm() + b[n].norm());
        running += t;
        if t < 1e-12 * running {
            terms = n;
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OracleError::MieNonConvergence(n_cap));
    }

    let mut s1 = Vec::with_capacity(theta_rad.len());
    let mut s2 = Vec::with_capacity(theta_rad.len());
    for &th in theta_rad {
        let mu = th.cos();
        let (mut s1v, mut s2v) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        let (mut pi_nm1, mut pi_n) = (0.0f64, 1.0f64); // pi_0, pi_1
        for n in 1..=terms {
            let nf = n as f64;
            let tau_n = nf * mu * pi_n - (nf + 1.0) * pi_nm1;
            let c = (2.0 * nf + 1.0) / (nf * (nf + 1.0));
            s1v += (a[n] * pi_n + b[n] * tau_n) * c;
            s2v += (a[n] * tau_n + b[n] * pi_n) * c;
            let pi_next = ((2.0 * nf + 1.0) * mu * pi_n - (nf + 1.0) * pi_nm1) / nf;
            pi_nm1 = pi_n;
            pi_n = pi_next;
        }
        s1.push(s1v);
        s2.push(s2v);
    }
    let sigma_e: Vec<f64> = s2.iter().map(|s| 4.0 * std::f64::consts::PI * s.norm_sqr() / (k * k)).collect();
    let sigma_h: Vec<f64> = s1.iter().map(|s| 4.0 * std::f64::consts::PI * s.norm_sqr() / (k * k)).collect();
    Ok(MieSolution { theta_rad: theta_rad.to_vec(), sigma_e, sigma_h, s1, s2, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

    #[test]
    fn gauss_legendre_exactness() {
        for n in [2usize, 4, 6, 9] {
            let gl = gauss_legendre(n);
            for p in 0..(2 * n) {
                let got: f64 = gl.iter().map(|&(x, w)| w * x.powi(p as i32)).sum();
                assert_relative_eq!(got, 1.0 / (p as f64 + 1.0), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn constant_kernel_gives_area_products() {
        let t1 = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let t2 = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(2.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 1.0)];
        let got = pair_cubature(&t1, &t2, 4, &mut |_, _| C64::new(1.0, 0.0));
        assert_relative_eq!(got.re, 0.5 * 1.0, max_relative = 1e-12);
        let single = tri_cubature(&t2, 5, &mut |_| C64::new(3.0, -1.0));
        assert_relative_eq!(single.re, 3.0, max_relative = 1e-12);
        assert_relative_eq!(single.im, -1.0, max_relative = 1e-12);
    }

    #[test]
    fn adaptive_self_term_matches_reference() {
        let t = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let got = adaptive_pair_integral(&t, &t, 1e-7, &mut |r, rp| {
            C64::new(1.0 / (r - rp).norm(), 0.0)
        })
        .unwrap();
        assert_relative_eq!(got.re, 1.003065884773180, max_relative = 2e-6);
    }

    #[test]
    fn adaptive_tolerance_contract() {
        let t1 = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let t2 = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let mut kern = |r: &Vec3, rp: &Vec3| C64::new(1.0 / (r - rp).norm(), 0.0);
        let loose = adaptive_pair_integral(&t1, &t2, 1e-4, &mut kern).unwrap();
        let tight = adaptive_pair_integral(&t1, &t2, 1e-5, &mut kern).unwrap();
        assert!((loose - tight).norm() < 1e-4);
    }

    #[test]
    fn mie_rayleigh_slope() {
        // log-log slope of backscatter RCS vs ka must be 4 within 1%
        let radius = 1.0;
        let f = |ka: f64| ka * SPEED_OF_LIGHT / (2.0 * std::f64::consts::PI * radius);
        let sol1 = mie_pec_sphere(radius, f(0.01), &[std::f64::consts::PI]).unwrap();
        let sol2 = mie_pec_sphere(radius, f(0.1), &[std::f64::consts::PI]).unwrap();
        let slope = (sol2.sigma_e[0] / sol1.sigma_e[0]).log10();
        assert!((slope - 4.0).abs() < 0.04, "Rayleigh slope {slope}");
    }

    #[test]
    fn mie_geometric_optics_limit() {
        let radius = 1.0;
        let ka = 20.0;
        let f = ka * SPEED_OF_LIGHT / (2.0 * std::f64::consts::PI * radius);
        let sol = mie_pec_sphere(radius, f, &[std::f64::consts::PI]).unwrap();
        let norm = sol.sigma_e[0] / (std::f64::consts::PI * radius * radius);
        assert!((norm - 1.0).abs() < 0.1, "GO limit sigma/pi a^2 = {norm}");
    }

    #[test]
    fn mie_term_count_tracks_ka() {
        let radius = 1.0;
        for ka in [5.0f64, 15.0, 30.0] {
            let f = ka * SPEED_OF_LIGHT / (2.0 * std::f64::consts::PI * radius);
            let sol = mie_pec_sphere(radius, f, &[0.5]).unwrap();
            let excess = sol.terms as f64 - ka;
            assert!((2.0..25.0).contains(&excess), "ka {ka}: terms {}", sol.terms);
        }
    }

    #[test]
    fn mie_forward_exceeds_backscatter_at_large_ka() {
        let radius = 1.0;
        let ka = 10.0;
        let f = ka * SPEED_OF_LIGHT / (2.0 * std::f64::consts::PI * radius);
        let sol = mie_pec_sphere(radius, f, &[1e-6, std::f64::consts::PI]).unwrap();
        assert!(sol.sigma_e[0] > 10.0 * sol.sigma_e[1]);
    }

    #[test]
    fn kernel_assembly_cross_checks() {
        use crate::kernels::{singular_pair_integral, PairKind};
        use crate::quadrature::QuadratureRule;
        let q = QuadratureRule::default();
        let k0 = 2.0;

        // edge-adjacent, non-coplanar pair: L charge kind vs adaptive oracle
        let t1 = [Vec3::zeros(), Vec3::new(0.3, 0.0, 0.0), Vec3::new(0.0, 0.3, 0.0)];
        let t2 = [Vec3::new(0.3, 0.0, 0.0), Vec3::new(0.3, 0.2, 0.2), Vec3::new(0.0, 0.3, 0.0)];
        let main = singular_pair_integral(t1, t2, PairKind::LCharge, k0, &q).unwrap();
        let want = adaptive_pair_integral(&t1, &t2, 1e-9, &mut |r, rp| {
            crate::kernels::green(r, rp, k0)
        })
        .unwrap();
        assert!(
            (main - want).norm() / want.norm() < 1e-5,
            "edge-adjacent LCharge: {main} vs {want}"
        );

        // separated pair (>= 1 diameter): K kind vs brute-force cubature
        let t3 = [Vec3::new(0.6, 0.1, 0.5), Vec3::new(0.9, 0.0, 0.55), Vec3::new(0.7, 0.3, 0.6)];
        let (vt, vs) = (t1[0], t3[0]);
        let main = singular_pair_integral(t1, t3, PairKind::K { v_test: vt, v_src: vs }, k0, &q)
            .unwrap();
        let want = pair_cubature(&t1, &t3, 10, &mut |r, rp| {
            let rr = (r - rp).norm();
            let w = -(C64::new(1.0, k0 * rr)) * C64::from_polar(1.0, -k0 * rr)
                / (FOUR_PI * rr * rr * rr);
            let grad = (r - rp).map(|c| C64::new(c, 0.0)) * w;
            let fs = (rp - vs).map(|c| C64::new(c, 0.0));
            let ft = (r - vt).map(|c| C64::new(c, 0.0));
            ft.dot(&grad.cross(&fs))
        });
        assert!(
            (main - want).norm() / want.norm() < 1e-4,
            "separated K: {main} vs {want}"
        );

        // separated pair: L smooth kind vs brute-force cubature
        let main =
            singular_pair_integral(t1, t3, PairKind::LSmooth { v_test: vt, v_src: vs }, k0, &q)
                .unwrap();
        let want = pair_cubature(&t1, &t3, 10, &mut |r, rp| {
            crate::kernels::green(r, rp, k0) * (r - vt).dot(&(rp - vs))
        });
        assert!(
            (main - want).norm() / want.norm() < 1e-6,
            "separated LSmooth: {main} vs {want}"
        );
    }
}
