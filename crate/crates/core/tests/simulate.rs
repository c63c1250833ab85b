//! Integrator behaviour on the pendulum.

use cpagain::expr::SystemModel;
use cpagain::verify::{simulate, InputSignal};

fn zero_input() -> InputSignal {
    InputSignal::Piecewise {
        dwell: 0.5,
        values: vec![vec![0.0]],
    }
}

#[test]
fn equilibrium_stays_put() {
    let sys = SystemModel::builtin("pendulum").unwrap();
    let traj = simulate(&sys, &[0.0, 0.0], &zero_input(), 5.0, 0.01, |_| true).unwrap();
    assert!(traj.x.iter().all(|x| x == &vec![0.0, 0.0]));
}

#[test]
fn free_pendulum_decays() {
    let sys = SystemModel::builtin("pendulum").unwrap();
    let traj = simulate(&sys, &[0.5, 0.0], &zero_input(), 10.0, 0.01, |_| true).unwrap();
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm(traj.x.last().unwrap()) < norm(&traj.x[0]));
    // energy 1 - cos(x1) + x2^2 / 2 never increases
    let energy: Vec<f64> = traj.x.iter().map(|x| 1.0 - x[0].cos() + 0.5 * x[1] * x[1]).collect();
    assert!(energy.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn halving_the_step_agrees() {
    let sys = SystemModel::builtin("pendulum").unwrap();
    let coarse = simulate(&sys, &[0.5, 0.0], &zero_input(), 10.0, 0.01, |_| true).unwrap();
    let fine = simulate(&sys, &[0.5, 0.0], &zero_input(), 10.0, 0.005, |_| true).unwrap();
    let (a, b) = (coarse.x.last().unwrap(), fine.x.last().unwrap());
    assert!((a[0] - b[0]).abs() <= 1e-6 && (a[1] - b[1]).abs() <= 1e-6, "{a:?} vs {b:?}");
}

#[test]
fn early_stop_truncates_the_trajectory() {
    let sys = SystemModel::builtin("pendulum").unwrap();
    let traj = simulate(&sys, &[0.5, 0.0], &zero_input(), 10.0, 0.01, |x| x[1] > -0.1).unwrap();
    assert!(traj.x.len() < 1001);
    assert!(traj.x.last().unwrap()[1] <= -0.1);
}
