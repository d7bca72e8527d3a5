//! Compares the lifted-surrogate solve against the sample-average Monte
//! Carlo baseline: wall times, resulting inputs, and the distribution of
//! the first state at the end of the horizon.

use nalgebra::DVector;
use sgmpc::{
    compare_pdf, generate, gram_schmidt, mc_mpc, mc_propagate, scenario_obstacle,
    solve_open_loop, CoeffVector, MomentOracle, QuadConfig, SolverConfig,
};

fn main() {
    let scenario = scenario_obstacle(true);
    let p = 2;
    let n = 5000;

    let t0 = std::time::Instant::now();
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
    let surrogate_time = t0.elapsed().as_secs_f64();

    let t1 = std::time::Instant::now();
    let (mc_sol, _) = mc_mpc(&scenario, n, 42, &SolverConfig::default()).expect("baseline");
    let mc_time = t1.elapsed().as_secs_f64();

    println!("surrogate pipeline: {surrogate_time:.3}s, baseline ({n} samples): {mc_time:.3}s");
    println!("speed ratio: {:.1}x", mc_time / surrogate_time);
    for t in 0..prob.horizon {
        println!(
            "u[{t}]: surrogate {:+.6}  baseline {:+.6}",
            sol.u_star[(t, 0)],
            mc_sol.u_star[(t, 0)]
        );
    }

    // distribution agreement at the final step under the surrogate input
    let u_seq: Vec<DVector<f64>> = (0..prob.horizon)
        .map(|t| sol.u_star.row(t).transpose())
        .collect();
    let x0 = prob.x_init.block(0);
    let (_, per_time) = mc_propagate(&scenario, |_| x0.clone(), &u_seq, prob.horizon, &[], n, 42)
        .expect("propagation");
    let batch = scenario.mixture.sample(n, 42);
    let surrogate_samples =
        sgmpc::galerkin::sample_surrogate(&sol.x_traj[prob.horizon], &basis, &batch)
            .expect("surrogate sampling");
    let a: Vec<f64> = surrogate_samples.column(0).iter().cloned().collect();
    let b: Vec<f64> = per_time[prob.horizon].column(0).iter().cloned().collect();
    println!(
        "two-sample KS distance of x1 at t={}: {:.4}",
        prob.horizon,
        compare_pdf(&a, &b)
    );
}
