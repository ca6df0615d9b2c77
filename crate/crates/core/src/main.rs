use arraymom::basis::assemble_gram;
use arraymom::excitation::{project_rhs, Excitation};
use arraymom::kernels::{assemble_k, assemble_l, scattered_field, BasisSpace, MediumParams, C0};
use arraymom::linalg::LuFactors;
use arraymom::macromodel::build_element_bases;
use arraymom::mesh::{generate_box, generate_plate, ElementGeometry};
use arraymom::quadrature::QuadratureRule;
use arraymom::{C64, CMat, Vec3};
use std::time::Instant;

fn main() {
    let plate = generate_plate(Vec3::zeros(), 0.15, 0.15, 0.075).unwrap();
    let ebox = generate_box(Vec3::zeros(), Vec3::new(0.45, 0.45, 0.3), 0.15).unwrap();
    let elem = ElementGeometry::new(plate, ebox).unwrap();
    let med = MediumParams::free_space(C0 / 1.5);
    let quad = QuadratureRule::default();
    let bases = build_element_bases(&elem).unwrap();
    let bs_s = BasisSpace::from_rwg(&bases.scatterer);
    let bs_h = BasisSpace::from_rwg(&bases.hat);
    let bs_d = BasisSpace::from_dual(&bases.hat_dual);
    println!("N = {}, Nhat = {}", bs_s.dof_count, bs_h.dof_count);

    let t0 = Instant::now();
    let g_ej = assemble_l(&bs_s, &bs_s, &med, &quad);
    println!("g_ej      {:?}", t0.elapsed());
    let t0 = Instant::now();
    let g_eh = assemble_l(&bs_s, &bs_h, &med, &quad);
    println!("g_eh      {:?}", t0.elapsed());
    let t0 = Instant::now();
    let g_hat_j = assemble_l(&bs_h, &bs_s, &med, &quad);
    println!("g_hat_j   {:?}", t0.elapsed());
    let t0 = Instant::now();
    let g_hat_h = assemble_l(&bs_h, &bs_h, &med, &quad);
    println!("g_hat_h   {:?}", t0.elapsed());
    let t0 = Instant::now();
    let k_se = assemble_k(&bs_s, &bs_d, &med, &quad);
    let k_hh = assemble_k(&bs_h, &bs_d, &med, &quad);
    println!("k blocks  {:?}", t0.elapsed());
    let gram = assemble_gram(&bases.hat, &bases.hat_dual).unwrap();

    let nh = bs_h.dof_count;
    let mut d = CMat::zeros(nh, nh);
    for i in 0..nh {
        let (cols, vals) = gram.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            d[(i, j)] = C64::new(v, 0.0);
        }
    }

    let exc = Excitation::plane_wave(
        Vec3::new(0.0, 0.0, -1.0),
        Vec3::new(1.0, 0.0, 0.0),
        C64::new(1.0, 0.0),
    )
    .unwrap();
    let rhs_s = project_rhs(&exc, &bs_s, &med, &quad).unwrap();
    let rhs_h = project_rhs(&exc, &bs_h, &med, &quad).unwrap();
    let j_direct = LuFactors::factor(&g_ej).unwrap().solve_vec(&rhs_s);

    let gheh = LuFactors::factor(&g_hat_h).unwrap();
    let t = gheh.solve_mat(&g_hat_j);
    let a = &g_ej - &g_eh * &t;
    let a_lu = LuFactors::factor(&a).unwrap();


    // conditioning of the hat-surface L block
    let svd = g_hat_h.clone().svd(false, false);
    println!(
        "cond(Gheh) = {:.3e}",
        svd.singular_values.max() / svd.singular_values.min()
    );

    // cross-check scattered_field against the assembled L blocks:
    // project_field returns -<Lam, E>, and G = <Lam, E_rad>, so the two
    // should be negatives of each other
    {
        let mut x = arraymom::CVec::zeros(bs_h.dof_count);
        for i in 0..x.len() {
            x[i] = C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos());
        }
        let ef = |r: &Vec3| scattered_field(&bs_h, &x, &med, r);
        let p = project_field(&bs_s, &ef);
        let g = &g_eh * &x;
        println!("field-vs-assembly (hat->plate): {:.3e}", (&p + &g).norm() / g.norm());
        let mut y = arraymom::CVec::zeros(bs_s.dof_count);
        for i in 0..y.len() {
            y[i] = C64::new((i as f64 * 0.53).cos(), (i as f64 * 0.29).sin());
        }
        let ef2 = |r: &Vec3| scattered_field(&bs_s, &y, &med, r);
        let p2 = project_field(&bs_h, &ef2);
        let g2 = &g_hat_j * &y;
        println!("field-vs-assembly (plate->hat): {:.3e}", (&p2 + &g2).norm() / g2.norm());
    }

    // equivalence test with a known interior source: a Hertzian dipole at the
    // box center. Solve Gheh jhat = <Lam, E_dip> and compare fields outside.
    {
        let dip = Excitation::hertzian_dipole(
            Vec3::new(0.02, -0.03, 0.04),
            nalgebra::Vector3::new(C64::new(1.0, 0.0), C64::new(0.3, 0.2), C64::new(-0.5, 0.1)),
        );
        let e_dip = |r: &Vec3| dip.incident_field(&med, r).unwrap();
        let w = -project_field(&bs_h, &e_dip);
        let j_eq = gheh.solve_vec(&w);
        for probe in [Vec3::new(1.0, 0.5, 0.8), Vec3::new(-0.7, -1.2, 0.3)] {
            let ed = e_dip(&probe);
            let ej = scattered_field(&bs_h, &j_eq, &med, &probe);
            println!(
                "dipole equivalence at {probe:?}: {:.3e}",
                (ej - ed).norm() / ed.norm()
            );
        }
    }

    // ground-truth diagnostics against the direct solve
    let e_tot = |r: &Vec3| -> nalgebra::Vector3<C64> {
        exc.incident_field(&med, r).unwrap() + scattered_field(&bs_s, &j_direct, &med, r)
    };

    // (1) transfer matrix: does Jhat = T J_direct radiate the same exterior field?
    let j_hat = &t * &j_direct;
    for probe in [Vec3::new(1.2, 0.3, 0.9), Vec3::new(-0.9, -1.1, 0.4), Vec3::new(0.2, 1.4, -1.0)] {
        let ej = scattered_field(&bs_s, &j_direct, &med, &probe);
        let ejh = scattered_field(&bs_h, &j_hat, &med, &probe);
        println!("T field err at {probe:?}: {:.3e}  (also -T: {:.3e})",
            (ejh - ej).norm() / ej.norm(), (-ejh - ej).norm() / ej.norm());
    }

    // (2) project the true total tangential field on S-hat: D Ehat = -<Lam, E_tot>
    let v_true = project_field(&bs_h, &e_tot);
    let d_lu = LuFactors::factor(&d).unwrap();
    let e_hat_true = d_lu.solve_vec(&v_true);

    // interior relation A J + B Ehat = 0, both half-identity signs
    for s_half in [1.0f64, -1.0] {
        let g_hat_e = &k_hh + &d * C64::new(0.5 * s_half, 0.0);
        let b = &k_se - &g_eh * gheh.solve_mat(&g_hat_e);
        let aj = &a * &j_direct;
        let be = &b * &e_hat_true;
        let res = (&aj + &be).norm() / aj.norm().max(be.norm());
        let j_rec = -a_lu.solve_vec(&be);
        let jerr = (&j_rec - &j_direct).norm() / j_direct.norm();
        println!(
            "interior s_half={s_half:+}: |AJ+BE|/max = {res:.3e}, |AJ|={:.3e}, |BE|={:.3e}, j_rec err={jerr:.3e}",
            aj.norm(), be.norm()
        );
    }

    // (3) exterior relation D Ehat + Ghh Jhat - Vhat = 0
    let de = &d * &e_hat_true;
    let gj = &g_hat_h * &j_hat;
    let r3 = (&de + &gj - &rhs_h).norm() / rhs_h.norm();
    let r3m = (&de - &gj - &rhs_h).norm() / rhs_h.norm();
    println!(
        "exterior: |DE+GJ-V|/|V| = {r3:.3e}, |DE-GJ-V|/|V| = {r3m:.3e}, |DE|={:.3e}, |GJ|={:.3e}, |V|={:.3e}",
        de.norm(), gj.norm(), rhs_h.norm()
    );
}

fn project_field<F: Fn(&Vec3) -> nalgebra::Vector3<C64>>(bs: &BasisSpace, f: &F) -> arraymom::CVec {
    let pts = arraymom::quadrature::points(6).unwrap();
    let mut v = arraymom::CVec::zeros(bs.dof_count);
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
                let val = e.x * C64::new(lam.x, 0.0) + e.y * C64::new(lam.y, 0.0) + e.z * C64::new(lam.z, 0.0);
                v[t.func] -= val * C64::new(q.weight * area, 0.0);
            }
        }
    }
    v
}
