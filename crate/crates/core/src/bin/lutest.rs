use arraymom::linalg::LuFactors;
use arraymom::{C64, CMat, CVec};

fn main() {
    let n = 4;
    let mut s = 99u64;
    let mut rnd = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
    };
    let mut a = CMat::zeros(n, n);
    for i in 0..n { for j in 0..n { a[(i,j)] = C64::new(rnd(), rnd()); } }
    let lu = LuFactors::factor(&a).unwrap();
    let b = CVec::from_fn(n, |i,_| C64::new(i as f64 + 1.0, -(i as f64)));

    // explicit: Pb, then L then U solve
    let mut pb = b.clone();
    for (k, &p) in lu.pivots.iter().enumerate() {
        if p != k { pb.swap_rows(p, k); }
    }
    let mut y = pb.clone();
    for k in 0..n {
        let yk = y[k];
        for i in k+1..n { let v = lu.lu[(i,k)] * yk; y[i] -= v; }
    }
    for k in (0..n).rev() {
        y[k] /= lu.lu[(k,k)];
        let yk = y[k];
        for i in 0..k { let v = lu.lu[(i,k)] * yk; y[i] -= v; }
    }
    println!("explicit residual = {:.3e}", (&a * &y - &b).norm() / b.norm());
    let x = lu.solve_vec(&b);
    println!("solve_vec residual = {:.3e}", (&a * &x - &b).norm() / b.norm());
    println!("x - y = {:?}", (&x - &y).norm());
}
