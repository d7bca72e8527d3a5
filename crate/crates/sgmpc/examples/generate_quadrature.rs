//! Generates a sparse quadrature rule for the shipped mixture and verifies
//! that it reproduces the analytic raw moments.

use sgmpc::{generate, gram_schmidt, MomentOracle, MultiIndex, QuadConfig};

fn main() {
    let gm = sgmpc::default_obstacle_mixture();
    let p = 2;
    let oracle = MomentOracle::for_order(&gm, p);
    let basis2p = gram_schmidt(&oracle, gm.dim(), 2 * p, 1e-8).expect("order-2p basis");
    let rule = generate(&gm, &basis2p, &QuadConfig::for_basis(&basis2p, 7)).expect("quadrature");
    println!(
        "rule: M={} nodes in d={}, residual {:.3e}, negative weights {}",
        rule.len(),
        rule.nodes.ncols(),
        rule.residual,
        rule.negative_weight_count
    );
    for l in 0..rule.len() {
        println!(
            "  node ({:+.6}, {:+.6})  weight {:+.6}",
            rule.nodes[(l, 0)],
            rule.nodes[(l, 1)],
            rule.weights[l]
        );
    }
    println!("moment reproduction up to total degree {}:", 2 * p);
    for a in 0..=(2 * p) as u32 {
        for b in 0..=(2 * p) as u32 - a {
            let alpha = MultiIndex(vec![a, b]);
            let exact = gm.raw_moment(&alpha);
            let mut quad = 0.0;
            for l in 0..rule.len() {
                quad += rule.weights[l]
                    * rule.nodes[(l, 0)].powi(a as i32)
                    * rule.nodes[(l, 1)].powi(b as i32);
            }
            println!("  E[xi1^{a} xi2^{b}] exact {exact:+.6e} rule {quad:+.6e}");
        }
    }
}
