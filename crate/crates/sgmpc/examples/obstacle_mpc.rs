//! Solves the chance-constrained obstacle-avoidance problem open loop and
//! prints the mean trajectory with its uncertainty band.

use sgmpc::{
    generate, gram_schmidt, scenario_obstacle, solve_open_loop, CoeffVector, MomentOracle,
    QuadConfig, SolverConfig,
};

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
    let prob = scenario.problem_for(gs.n_p);
    let w = vec![CoeffVector::zeros(gs.n_w, gs.n_p); prob.horizon];
    let sol = solve_open_loop(&prob, &gs, &w, &SolverConfig::default()).expect("solve");
    println!(
        "status {:?}, objective {:.4e}, max constraint violation {:.2e}",
        sol.status, sol.objective, sol.stats.max_violation
    );
    println!("t   mean x1    mean x2    std x1   std x2   x1+x2    u");
    for (t, x) in sol.x_traj.iter().enumerate() {
        let (mean, var) = x.mean_var();
        let u = if t < prob.horizon {
            format!("{:+.4}", sol.u_star[(t, 0)])
        } else {
            String::from("   -  ")
        };
        println!(
            "{t}  {:8.4}  {:8.4}  {:7.4}  {:7.4}  {:7.3}  {u}",
            mean[0],
            mean[1],
            var[0].sqrt(),
            var[1].sqrt(),
            mean[0] + mean[1]
        );
    }
    println!(
        "forbidden half-space: x1 + x2 < {} (99% avoidance required)",
        sgmpc::scenario::OBSTACLE_HALFSPACE_OFFSET
    );
}
