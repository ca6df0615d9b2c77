use arraymom::oracle::adaptive_pair_integral;
use arraymom::{C64, Vec3};

fn main() {
    let t1 = [
        Vec3::new(0.1, 0.0, 0.0),
        Vec3::new(0.07, 0.07, 0.08),
        Vec3::new(0.0, 0.1, 0.0),
    ];
    let t2 = t1;
    let k0 = 2.0 * std::f64::consts::PI / 1.5;
    let mut nprint = 0usize;
    let res = adaptive_pair_integral(&t1, &t2, 1e-10, &mut |r: &Vec3, rp: &Vec3| -> C64 {
        let d = (r - rp).norm();
        let val = C64::new(0.0, -k0 * d).exp() / C64::new(4.0 * std::f64::consts::PI * d, 0.0);
        if !val.re.is_finite() || !val.im.is_finite() {
            if nprint < 5 {
                println!("non-finite at r={r:?} rp={rp:?} d={d:e}");
                nprint += 1;
            }
        }
        val
    });
    println!("{res:?}");
}
