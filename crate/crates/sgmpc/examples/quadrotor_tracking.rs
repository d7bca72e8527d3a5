//! Quadrotor helix tracking with additive position disturbances and
//! chance-constrained attitude bounds.

use sgmpc::scenario::quad_reference_at;
use sgmpc::{
    default_quadrotor_model, generate, gram_schmidt, receding_horizon, scenario_quadrotor,
    MomentOracle, QuadConfig, QuadReference, SolverConfig,
};

fn main() {
    let model = default_quadrotor_model();
    let steps = 50;
    let scenario =
        scenario_quadrotor(&model, QuadReference::Helix, steps).expect("scenario");
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
    let w_hat = scenario.disturbance_hat(&basis, &rule);
    let record = receding_horizon(
        &prob,
        &gs,
        steps,
        prob.horizon,
        &SolverConfig::default(),
        |_| w_hat.clone(),
    )
    .expect("closed loop");
    println!("t[s]   tracking err   roll[rad]  pitch[rad]");
    for (t, x) in record.states.iter().enumerate().step_by(5) {
        let (mean, _) = x.mean_var();
        let r = quad_reference_at(QuadReference::Helix, t as f64 * model.dt);
        let err = ((mean[0] - r[0]).powi(2) + (mean[1] - r[1]).powi(2)
            + (mean[2] - r[2]).powi(2))
        .sqrt();
        println!(
            "{:5.2}  {:10.4}  {:+9.4}  {:+9.4}",
            t as f64 * model.dt,
            err,
            mean[6],
            mean[7]
        );
    }
}
