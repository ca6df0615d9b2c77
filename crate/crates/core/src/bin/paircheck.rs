use arraymom::basis::build_rwg;
use arraymom::kernels::{assemble_l, BasisSpace, MediumParams, C0};
use arraymom::mesh::{parse_mesh, MeshFormat};
use arraymom::oracle::adaptive_pair_integral;
use arraymom::quadrature::QuadratureRule;
use arraymom::{C64, Vec3};
use std::sync::Arc;

fn oracle_l_entry(
    bs_t: &BasisSpace,
    bs_s: &BasisSpace,
    med: &MediumParams,
) -> C64 {
    let k0 = med.k0;
    let green = move |r: &Vec3, rp: &Vec3| -> C64 {
        let d = (r - rp).norm();
        C64::new(0.0, -k0 * d).exp() / C64::new(4.0 * std::f64::consts::PI * d, 0.0)
    };
    let mut total = C64::new(0.0, 0.0);
    for (tt, terms_t) in bs_t.tri_terms.iter().enumerate() {
        let vt = bs_t.mesh.tri_vertices(tt);
        for term_t in terms_t {
            let ft_free = bs_t.mesh.vertices[term_t.free_vertex];
            let st = term_t.scale;
            for (ss, terms_s) in bs_s.tri_terms.iter().enumerate() {
                let vs = bs_s.mesh.tri_vertices(ss);
                for term_s in terms_s {
                    let fs_free = bs_s.mesh.vertices[term_s.free_vertex];
                    let sc = term_s.scale;
                    let i1 = adaptive_pair_integral(&vt, &vs, 1e-10, &mut |r: &Vec3,
                                                                           rp: &Vec3|
                     -> C64 {
                        let dot = (r - ft_free).dot(&(rp - fs_free));
                        green(r, rp) * C64::new(dot * st * sc, 0.0)
                    })
                    .unwrap();
                    let i2 = adaptive_pair_integral(&vt, &vs, 1e-10, &mut |r: &Vec3,
                                                                           rp: &Vec3|
                     -> C64 {
                        green(r, rp)
                    })
                    .unwrap()
                        * C64::new(4.0 * st * sc / (k0 * k0), 0.0);
                    total += i1 - i2;
                }
            }
        }
    }
    let jw = C64::new(0.0, med.omega * arraymom::kernels::MU0);
    -jw * total
}

fn check(name: &str, obj: &str) {
    let med = MediumParams::free_space(C0 / 1.5);
    let quad = QuadratureRule::default();
    let mesh = parse_mesh(obj, MeshFormat::SimpleTri, name).unwrap();
    let rwg = build_rwg(Arc::new(mesh.clone())).unwrap();
    let bs = BasisSpace::from_rwg(&rwg);
    assert_eq!(bs.dof_count, 1, "{name}: expected a single RWG function");
    let g = assemble_l(&bs, &bs, &med, &quad);
    let o = oracle_l_entry(&bs, &bs, &med);
    println!(
        "{name}: assembled = {:?}, oracle = {:?}, rel err = {:.3e}",
        g[(0, 0)],
        o,
        (g[(0, 0)] - o).norm() / o.norm()
    );
}

fn build_bs(obj: &str, name: &str) -> BasisSpace {
    let mesh = parse_mesh(obj, MeshFormat::SimpleTri, name).unwrap();
    let rwg = build_rwg(Arc::new(mesh)).unwrap();
    BasisSpace::from_rwg(&rwg)
}

fn check_cross(name: &str, obj_t: &str, obj_s: &str) {
    let med = MediumParams::free_space(C0 / 1.5);
    let quad = QuadratureRule::default();
    let bs_t = build_bs(obj_t, name);
    let bs_s = build_bs(obj_s, name);
    let g = assemble_l(&bs_t, &bs_s, &med, &quad);
    let o = oracle_l_entry(&bs_t, &bs_s, &med);
    println!(
        "{name}: assembled = {:?}, oracle = {:?}, rel err = {:.3e}",
        g[(0, 0)],
        o,
        (g[(0, 0)] - o).norm() / o.norm()
    );
}

fn main() {
    check(
        "coplanar",
        "v 0 0 0\nv 0.1 0 0\nv 0 0.1 0\nv 0.1 0.1 0\nf 1 2 3\nf 2 4 3\n",
    );
    check(
        "bent",
        "v 0 0 0\nv 0.1 0 0\nv 0 0.1 0\nv 0.07 0.07 0.08\nf 1 2 3\nf 2 4 3\n",
    );
    let a = "v 0 0 0\nv 0.1 0 0\nv 0 0.1 0\nv 0.1 0.1 0\nf 1 2 3\nf 2 4 3\n";
    // shares the vertex (0.1, 0.1, 0) with mesh a, tilted out of plane
    let b = "v 0.1 0.1 0\nv 0.2 0.1 0.03\nv 0.1 0.2 0.03\nv 0.2 0.2 0.05\nf 1 2 3\nf 2 4 3\n";
    check_cross("shared-vertex", a, b);
    // near tier: one diameter of clearance
    let c = "v 0.25 0 0.05\nv 0.35 0 0.05\nv 0.25 0.1 0.05\nv 0.35 0.1 0.05\nf 1 2 3\nf 2 4 3\n";
    check_cross("near", a, c);
    // far tier
    let d = "v 0.8 0 0.3\nv 0.9 0 0.3\nv 0.8 0.1 0.3\nv 0.9 0.1 0.3\nf 1 2 3\nf 2 4 3\n";
    check_cross("far", a, d);
}
