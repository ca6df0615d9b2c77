use arraymom::basis::build_rwg;
use arraymom::excitation::{project_rhs, Excitation};
use arraymom::kernels::{scattered_field, BasisSpace, MediumParams, C0, MU0};
use arraymom::mesh::parse_mesh;
use arraymom::mesh::MeshFormat;
use arraymom::quadrature::{points, QuadratureRule};
use arraymom::{C64, CVec, Vec3};
use std::sync::Arc;

fn main() {
    let med = MediumParams::free_space(C0 / 1.5);
    let quad = QuadratureRule::default();
    let k0 = med.k0;

    // 1) plane-wave phase: d = -z, pol = x  =>  E = x exp(+j k z)
    let exc = Excitation::plane_wave(
        Vec3::new(0.0, 0.0, -1.0),
        Vec3::new(1.0, 0.0, 0.0),
        C64::new(1.0, 0.0),
    )
    .unwrap();
    let r = Vec3::new(0.0, 0.0, 0.1);
    let e = exc.incident_field(&med, &r).unwrap();
    let expect = C64::new(0.0, k0 * 0.1).exp();
    println!("plane wave at z=0.1: got {:?}, expect e^(+jkz) = {expect:?}", e.x);

    // 2) rhs convention vs independent projection
    let obj = "v 0 0 0\nv 0.1 0 0\nv 0 0.1 0\nv 0.1 0.1 0\nf 1 2 3\nf 2 4 3\n";
    let mesh = parse_mesh(obj, MeshFormat::SimpleTri, "pair").unwrap();
    let rwg = build_rwg(Arc::new(mesh)).unwrap();
    let bs = BasisSpace::from_rwg(&rwg);
    let rhs = project_rhs(&exc, &bs, &med, &quad).unwrap();
    let pts = points(7).unwrap();
    let mut proj = C64::new(0.0, 0.0);
    for (ti, terms) in bs.tri_terms.iter().enumerate() {
        let [va, vb, vc] = bs.mesh.tri_vertices(ti);
        let area = bs.mesh.tri_area(ti);
        for q in pts {
            let rq = va * q.bary[0] + vb * q.bary[1] + vc * q.bary[2];
            let eq = exc.incident_field(&med, &rq).unwrap();
            for t in terms {
                let lam = (rq - bs.mesh.vertices[t.free_vertex]) * t.scale;
                proj += (eq.x * C64::new(lam.x, 0.0)
                    + eq.y * C64::new(lam.y, 0.0)
                    + eq.z * C64::new(lam.z, 0.0))
                    * C64::new(q.weight * area, 0.0);
            }
        }
    }
    println!("rhs[0] = {:?}, -<Lam,Einc> = {:?}", rhs[0], -proj);

    // 3) far field of one RWG coefficient vs transverse-dipole formula
    let mut x = CVec::zeros(bs.dof_count);
    x[0] = C64::new(1.0, 0.0);
    let u = Vec3::new(0.3, -0.5, 0.81).normalize();
    let robs = u * 150.0;
    let es = scattered_field(&bs, &x, &med, &robs);
    // radiation vector with per-triangle phase at centroid
    let mut i_vec = nalgebra::Vector3::new(C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
    for (ti, terms) in bs.tri_terms.iter().enumerate() {
        let [va, vb, vc] = bs.mesh.tri_vertices(ti);
        let c = (va + vb + vc) / 3.0;
        let area = bs.mesh.tri_area(ti);
        let phase = C64::new(0.0, k0 * u.dot(&c)).exp();
        for t in terms {
            let m = (c - bs.mesh.vertices[t.free_vertex]) * (t.scale * area);
            i_vec += nalgebra::Vector3::new(
                phase * C64::new(m.x, 0.0),
                phase * C64::new(m.y, 0.0),
                phase * C64::new(m.z, 0.0),
            );
        }
    }
    let udot = i_vec.x * C64::new(u.x, 0.0) + i_vec.y * C64::new(u.y, 0.0) + i_vec.z * C64::new(u.z, 0.0);
    let it = nalgebra::Vector3::new(
        i_vec.x - udot * C64::new(u.x, 0.0),
        i_vec.y - udot * C64::new(u.y, 0.0),
        i_vec.z - udot * C64::new(u.z, 0.0),
    );
    let rdist = robs.norm();
    let g0 = C64::new(0.0, -k0 * rdist).exp() / C64::new(4.0 * std::f64::consts::PI * rdist, 0.0);
    let pref = -C64::new(0.0, med.omega * MU0) * g0;
    let eref = nalgebra::Vector3::new(pref * it.x, pref * it.y, pref * it.z);
    println!("far field: scattered_field = {es:?}");
    println!("           reference       = {eref:?}");
    println!("           rel err = {:.3e}", (es - eref).norm() / eref.norm());

    // 4) LU solver residual on a random complex system
    use arraymom::linalg::LuFactors;
    let n = 40;
    let mut a = arraymom::CMat::zeros(n, n);
    let mut b = CVec::zeros(n);
    let mut s = 1234567u64;
    let mut rnd = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
    };
    for i in 0..n {
        b[i] = C64::new(rnd(), rnd());
        for j in 0..n {
            a[(i, j)] = C64::new(rnd(), rnd());
        }
    }
    let lu = LuFactors::factor(&a).unwrap();
    let x = lu.solve_vec(&b);
    let res = (&a * &x - &b).norm() / b.norm();
    println!("lu residual = {res:.3e}");
    let xm = lu.solve_mat(&a);
    let mut eye = arraymom::CMat::zeros(n, n);
    for i in 0..n { eye[(i,i)] = C64::new(1.0,0.0); }
    println!("solve_mat(A) vs I: {:.3e}", (&xm - &eye).norm());
}
