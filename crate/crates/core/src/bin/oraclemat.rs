use arraymom::basis::build_rwg;
use arraymom::excitation::{project_rhs, Excitation};
use arraymom::kernels::{assemble_l, scattered_field, BasisSpace, MediumParams, C0, MU0};
use arraymom::linalg::LuFactors;
use arraymom::mesh::generate_sphere;
use arraymom::oracle::{adaptive_pair_integral, mie_pec_sphere, pair_cubature};
use arraymom::quadrature::QuadratureRule;
use arraymom::{C64, CMat, Vec3};
use std::sync::Arc;

struct Moments {
    m0: C64,
    m_r: [C64; 3],
    m_rp: [C64; 3],
    m_rr: C64,
}

fn pair_moments(vt: &[Vec3; 3], vs: &[Vec3; 3], k0: f64) -> Moments {
    let g = move |r: &Vec3, rp: &Vec3| -> C64 {
        let d = (r - rp).norm();
        C64::new(0.0, -k0 * d).exp() / C64::new(4.0 * std::f64::consts::PI * d, 0.0)
    };
    let close = vt
        .iter()
        .flat_map(|a| vs.iter().map(move |b| (a - b).norm()))
        .fold(f64::INFINITY, f64::min)
        < 0.08;
    let int = |f: &mut dyn FnMut(&Vec3, &Vec3) -> C64| -> C64 {
        let mut wrap = |r: &Vec3, rp: &Vec3| f(r, rp);
        if close {
            adaptive_pair_integral(vt, vs, 1e-8, &mut wrap).unwrap()
        } else {
            pair_cubature(vt, vs, 6, &mut wrap)
        }
    };
    let m0 = int(&mut |r, rp| g(r, rp));
    let mut m_r = [C64::new(0.0, 0.0); 3];
    let mut m_rp = [C64::new(0.0, 0.0); 3];
    for a in 0..3 {
        m_r[a] = int(&mut |r, rp| g(r, rp) * C64::new(r[a], 0.0));
        m_rp[a] = int(&mut |r, rp| g(r, rp) * C64::new(rp[a], 0.0));
    }
    let m_rr = int(&mut |r, rp| g(r, rp) * C64::new(r.dot(rp), 0.0));
    Moments { m0, m_r, m_rp, m_rr }
}

fn main() {
    let med = MediumParams::free_space(C0 / 1.5);
    let quad = QuadratureRule::default();
    let radius = 0.25;
    let mesh = generate_sphere(Vec3::zeros(), radius, 1).unwrap();
    let rwg = build_rwg(Arc::new(mesh)).unwrap();
    let bs = BasisSpace::from_rwg(&rwg);
    let n = bs.dof_count;
    println!("n = {n}, tris = {}", bs.mesh.triangles.len());
    let g_fast = assemble_l(&bs, &bs, &med, &quad);

    let k0 = med.k0;
    let jw = C64::new(0.0, med.omega * MU0);
    let mut g_oracle = CMat::zeros(n, n);
    let nt = bs.mesh.triangles.len();
    for tt in 0..nt {
        let vt = bs.mesh.tri_vertices(tt);
        for ss in 0..nt {
            let vs = bs.mesh.tri_vertices(ss);
            let m = pair_moments(&vt, &vs, k0);
            for term_t in &bs.tri_terms[tt] {
                let a = bs.mesh.vertices[term_t.free_vertex];
                for term_s in &bs.tri_terms[ss] {
                    let b = bs.mesh.vertices[term_s.free_vertex];
                    let sc = term_t.scale * term_s.scale;
                    let mut vecpart = m.m_rr + m.m0 * C64::new(a.dot(&b), 0.0);
                    for x in 0..3 {
                        vecpart -= m.m_r[x] * C64::new(b[x], 0.0) + m.m_rp[x] * C64::new(a[x], 0.0);
                    }
                    let val = -jw
                        * (vecpart * C64::new(sc, 0.0)
                            - m.m0 * C64::new(4.0 * sc / (k0 * k0), 0.0));
                    g_oracle[(term_t.func, term_s.func)] += val;
                }
            }
        }
    }

    let dg = (&g_fast - &g_oracle).norm() / g_oracle.norm();
    println!("matrix rel diff (fro) = {dg:.3e}");

    let exc = Excitation::plane_wave(
        Vec3::new(0.0, 0.0, -1.0),
        Vec3::new(1.0, 0.0, 0.0),
        C64::new(1.0, 0.0),
    )
    .unwrap();
    let rhs = project_rhs(&exc, &bs, &med, &quad).unwrap();
    let thetas = [std::f64::consts::PI, 2.0, 1.0];
    let mie = mie_pec_sphere(radius, med.frequency, &thetas).unwrap();
    let d = Vec3::new(0.0, 0.0, -1.0);
    for (name, gm) in [("fast", &g_fast), ("oracle", &g_oracle)] {
        let j = LuFactors::factor(gm).unwrap().solve_vec(&rhs);
        for (i, &th) in thetas.iter().enumerate() {
            let u = d * th.cos() + Vec3::new(1.0, 0.0, 0.0) * th.sin();
            let es = scattered_field(&bs, &j, &med, &(u * 200.0));
            let sigma = 4.0 * std::f64::consts::PI * 200.0 * 200.0 * es.norm_squared();
            println!(
                "{name} theta={th:.2}: sigma = {sigma:.4e}, mie = {:.4e}, ratio {:.3}",
                mie.sigma_e[i],
                sigma / mie.sigma_e[i]
            );
        }
    }
}
