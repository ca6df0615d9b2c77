use arraymom::basis::build_rwg;
use arraymom::excitation::Excitation;
use arraymom::kernels::{assemble_l, scattered_field, BasisSpace, MediumParams, C0};
use arraymom::linalg::LuFactors;
use arraymom::mesh::generate_sphere;
use arraymom::oracle::mie_pec_sphere;
use arraymom::excitation::project_rhs;
use arraymom::quadrature::{points, QuadratureRule};
use arraymom::{C64, CVec, Vec3};
use std::sync::Arc;

fn project_field<F: Fn(&Vec3) -> nalgebra::Vector3<C64>>(bs: &BasisSpace, f: &F) -> CVec {
    let pts = points(6).unwrap();
    let mut v = CVec::zeros(bs.dof_count);
    for (ti, terms) in bs.tri_terms.iter().enumerate() {
        if terms.is_empty() {
            continue;
        }
        let [va, vb, vc] = bs.mesh.tri_vertices(ti);
        let area = bs.mesh.tri_area(ti);
        for q in pts {
            let r = va * q.bary[0] + vb * q.bary[1] + vc * q.bary[2];
            let e = f(&r);
            for t in terms {
                let lam = (r - bs.mesh.vertices[t.free_vertex]) * t.scale;
                let val = e.x * C64::new(lam.x, 0.0)
                    + e.y * C64::new(lam.y, 0.0)
                    + e.z * C64::new(lam.z, 0.0);
                v[t.func] += val * C64::new(q.weight * area, 0.0);
            }
        }
    }
    v
}

fn run(name: &str, mesh: arraymom::mesh::TriangleMesh) {
    let med = MediumParams::free_space(C0 / 1.5);
    let quad = QuadratureRule::default();
    let rwg = build_rwg(Arc::new(mesh)).unwrap();
    let bs = BasisSpace::from_rwg(&rwg);
    let g = assemble_l(&bs, &bs, &med, &quad);
    let lu = LuFactors::factor(&g).unwrap();
    let dip = Excitation::hertzian_dipole(
        Vec3::new(0.02, -0.03, 0.04),
        nalgebra::Vector3::new(C64::new(1.0, 0.0), C64::new(0.3, 0.2), C64::new(-0.5, 0.1)),
    );
    let e_dip = |r: &Vec3| dip.incident_field(&med, r).unwrap();
    let w = project_field(&bs, &e_dip);
    let j_eq = lu.solve_vec(&w);
    let svd = g.clone().svd(false, false);
    println!(
        "{name}: n = {}, cond = {:.3e}, |j| = {:.3e}",
        bs.dof_count,
        svd.singular_values.max() / svd.singular_values.min(),
        j_eq.norm()
    );
    for probe in [Vec3::new(1.0, 0.5, 0.8), Vec3::new(-0.7, -1.2, 0.3)] {
        let ed = e_dip(&probe);
        let ej = scattered_field(&bs, &j_eq, &med, &probe);
        println!(
            "  {name} equivalence at {probe:?}: {:.3e} (flipped {:.3e}), |ed| {:.3e} |ej| {:.3e}",
            (ej - ed).norm() / ed.norm(),
            (-ej - ed).norm() / ed.norm(),
            ed.norm(),
            ej.norm()
        );
    }
}

fn main() {
    mie_check();
    run("sphere", generate_sphere(Vec3::zeros(), 0.25, 2).unwrap());
}

fn mie_check() {
    let med = MediumParams::free_space(C0 / 1.5);
    let quad = QuadratureRule::default();
    let radius = 0.25;
    let mesh = generate_sphere(Vec3::zeros(), radius, 2).unwrap();
    let rwg = build_rwg(Arc::new(mesh)).unwrap();
    let bs = BasisSpace::from_rwg(&rwg);
    let g = assemble_l(&bs, &bs, &med, &quad);
    let lu = LuFactors::factor(&g).unwrap();
    let exc = Excitation::plane_wave(
        Vec3::new(0.0, 0.0, -1.0),
        Vec3::new(1.0, 0.0, 0.0),
        C64::new(1.0, 0.0),
    )
    .unwrap();
    let rhs = project_rhs(&exc, &bs, &med, &quad).unwrap();
    let j = lu.solve_vec(&rhs);
    let thetas = [std::f64::consts::PI, 2.5, 2.0, 1.5, 1.0];
    let mie = mie_pec_sphere(radius, med.frequency, &thetas).unwrap();
    let d = Vec3::new(0.0, 0.0, -1.0);
    let r_far = 200.0;
    for (i, &th) in thetas.iter().enumerate() {
        let u = d * th.cos() + Vec3::new(1.0, 0.0, 0.0) * th.sin();
        let es = scattered_field(&bs, &j, &med, &(u * r_far));
        let sigma = 4.0 * std::f64::consts::PI * r_far * r_far * es.norm_squared();
        println!(
            "mie theta={th:.2}: sigma_mom = {sigma:.4e}, sigma_e = {:.4e}, ratio = {:.3}",
            mie.sigma_e[i],
            sigma / mie.sigma_e[i]
        );
    }
}
