//! Receding-horizon vehicle path following: regulates a 1 m lateral error
//! to zero under uncertain tire cornering stiffness.

use sgmpc::{
    generate, gram_schmidt, receding_horizon, scenario_vehicle, CoeffVector, MomentOracle,
    QuadConfig, SolverConfig,
};

fn main() {
    let scenario = scenario_vehicle();
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
    let steps = 40;
    let n_w = gs.n_w;
    let n_p = gs.n_p;
    let record = receding_horizon(
        &prob,
        &gs,
        steps,
        prob.horizon,
        &SolverConfig::default(),
        |_| CoeffVector::zeros(n_w, n_p),
    )
    .expect("closed loop");
    println!("t[s]   e1 mean    e1 std    steering");
    for (t, x) in record.states.iter().enumerate().step_by(4) {
        let (mean, var) = x.mean_var();
        let u = record
            .inputs
            .get(t)
            .map(|u| format!("{:+.4}", u[0]))
            .unwrap_or_else(|| "  -  ".into());
        println!(
            "{:5.2}  {:+8.4}  {:8.4}  {u}",
            t as f64 * 0.05,
            mean[0],
            var[0].sqrt()
        );
    }
    let (final_mean, _) = record.states.last().unwrap().mean_var();
    println!("final lateral error: {:+.4} m", final_mean[0]);
}
