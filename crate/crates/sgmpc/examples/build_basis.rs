//! Constructs the orthonormal polynomial basis for the shipped bimodal
//! Gaussian mixture and checks orthonormality against the analytic moments.

use sgmpc::{gram_schmidt, MomentOracle};

fn main() {
    let gm = sgmpc::default_obstacle_mixture();
    let p = 2;
    let oracle = MomentOracle::for_order(&gm, p);
    let basis = gram_schmidt(&oracle, gm.dim(), p, 1e-8).expect("basis construction");
    println!(
        "basis: d={}, p={}, N_p={}, gram residual {:.3e}",
        basis.dim(),
        basis.degree(),
        basis.len(),
        basis.gram_residual
    );
    println!("monomial coefficients per basis function (graded-lex order):");
    for k in 0..basis.len() {
        let row: Vec<String> = basis
            .coeffs
            .row(k)
            .iter()
            .map(|c| format!("{c:+.4}"))
            .collect();
        println!("  psi_{}: [{}]", k + 1, row.join(", "));
    }
    // spot-check: E[psi_i psi_j] from the moment oracle
    let mono = &basis.order;
    let mut worst: f64 = 0.0;
    for i in 0..basis.len() {
        for j in 0..basis.len() {
            let mut acc = 0.0;
            for (a, &ca) in mono.indices.iter().zip(basis.coeffs.row(i).iter()) {
                for (b, &cb) in mono.indices.iter().zip(basis.coeffs.row(j).iter()) {
                    if ca != 0.0 && cb != 0.0 {
                        acc += ca * cb * gm.raw_moment(&a.add(b));
                    }
                }
            }
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((acc - target).abs());
        }
    }
    println!("max |E[psi_i psi_j] - delta_ij| = {worst:.3e}");
}
