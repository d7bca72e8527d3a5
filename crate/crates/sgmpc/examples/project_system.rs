//! Projects the uncertain obstacle-avoidance system onto the expansion
//! basis and prints the lifted block structure.

use sgmpc::{generate, gram_schmidt, scenario_obstacle, MomentOracle, QuadConfig};

fn main() {
    let scenario = scenario_obstacle(true);
    let p = 2;
    let oracle = MomentOracle::for_order(&scenario.mixture, p);
    let basis2p = gram_schmidt(&oracle, 2, 2 * p, 1e-8).expect("basis");
    let basis = basis2p.truncate(p);
    let rule = generate(
        &scenario.mixture,
        &basis2p,
        &QuadConfig::for_basis(&basis2p, 7),
    )
    .expect("quadrature");
    let gs = scenario.galerkin(&basis, &rule).expect("projection");
    println!(
        "lifted system: n_x={} n_u={} N_p={} -> {} states",
        gs.n_x,
        gs.n_u,
        gs.n_p,
        gs.lifted_dim()
    );
    println!("gramian deviation from identity: {:.3e}", {
        let mut v = gs.v.clone();
        for i in 0..v.nrows() {
            v[(i, i)] -= 1.0;
        }
        v.amax()
    });
    println!("A-hat block magnitudes (row block j, column block k):");
    for j in 0..gs.n_p {
        let mut row = String::new();
        for k in 0..gs.n_p {
            let block = gs
                .a_hat
                .view((j * gs.n_x, k * gs.n_x), (gs.n_x, gs.n_x))
                .into_owned();
            row.push_str(&format!(" {:9.2e}", block.amax()));
        }
        println!(" {row}");
    }
}
