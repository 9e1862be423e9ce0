use hybrid_dispatch::design::DesignConfig;
use hybrid_dispatch::dynamics::{BatterySpec, JacobiParams, WindModel};
use hybrid_dispatch::evaluate::{rollout, value_estimate, ZeroPolicy};
use hybrid_dispatch::objectives::{Objective, ObjectiveKind};
use hybrid_dispatch::solver::{backward_solve, Problem, SolverConfig};

fn table1(k: usize) -> Problem {
    Problem {
        model: WindModel::Jacobi(JacobiParams::stationary(0.5, 5.0, 0.2, 10.0, 0.25, k).unwrap()),
        battery: BatterySpec::new(0.0, 3.0, -1.0, 1.0, 1.0, 1.5, 10.0).unwrap(),
        objective: Objective::constant(ObjectiveKind::Quadratic, 5.0, k).unwrap(),
        x0: 5.0,
        i0: 1.5,
    }
}

fn desk() -> SolverConfig {
    SolverConfig {
        design: DesignConfig {
            n_loc: 200,
            n_rep: 20,
            n_b: 200,
            ..DesignConfig::default()
        },
        ..SolverConfig::default()
    }
}

#[test]
fn charging_is_throttled_near_full() {
    let problem = table1(24);
    let policy = backward_solve(&problem, &desk(), 1).unwrap();
    let (x_hi, i_hi) = (7.0, 0.95 * 3.0);
    assert!(policy.raw_control(0, x_hi, i_hi) < x_hi - 5.0);
    // and discharging near empty
    assert!(policy.raw_control(0, 3.0, 0.15) > 3.0 - 5.0);
    // mid-range SoC absorbs part of a positive deviation
    let mid = policy.raw_control(0, 5.5, 1.5);
    assert!(mid > 0.0 && mid <= 0.5, "control {mid}");
}

#[test]
fn learned_policy_beats_idle_battery() {
    let problem = table1(12);
    let policy = backward_solve(&problem, &desk(), 2).unwrap();
    let run = |p: &dyn hybrid_dispatch::evaluate::ControlPolicy| {
        let tr = rollout(p, &problem.model, &problem.battery, &problem.objective, 5.0, 1.5, 2000, 9).unwrap();
        value_estimate(&tr).unwrap().mean
    };
    let (learned, idle) = (run(&policy), run(&ZeroPolicy));
    assert!(learned < 0.95 * idle, "learned {learned} idle {idle}");
}
