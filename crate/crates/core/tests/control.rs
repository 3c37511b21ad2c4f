use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voltguard_core::control::{
    build_nominal_qp, solve_control_qp, solve_robust, verify_robustness, ControlError, ControlOptions, PvPlantConfig,
    RobustControlProblem, Setpoint,
};
use voltguard_core::estimation::{SensitivityEstimate, SensitivityEstimates};

const S_BASE: f64 = 1.0e5;

/// Random instance in pu on `S_BASE`: `n` nodes, plants at the first `m`
/// nodes, positive coefficients growing with the plant's electrical distance.
fn instance(rng: &mut ChaCha8Rng, n: usize, m: usize, rel_dk: f64) -> (RobustControlProblem<f64>, Vec<PvPlantConfig>) {
    let plants: Vec<PvPlantConfig> = (0..m)
        .map(|j| PvPlantConfig {
            node: j,
            s_max_va: rng.random_range(20e3..50e3),
            pf_min: rng.random_range(0.85..0.98),
            reactive_capable: rng.random_bool(0.6),
        })
        .collect();
    let nodes = (0..n)
        .map(|i| {
            let kp: Vec<f64> = (0..n).map(|j| if j == i { rng.random_range(0.02..0.06) } else { rng.random_range(0.005..0.02) }).collect();
            let kq: Vec<f64> = kp.iter().map(|k| k * rng.random_range(0.2..0.5)).collect();
            let mut e = SensitivityEstimate::exact(i, kp.clone(), kq.clone());
            e.dkp = kp.iter().map(|k| k * rel_dk * rng.random::<f64>()).collect();
            e.dkq = kq.iter().map(|k| k * rel_dk * rng.random::<f64>()).collect();
            e
        })
        .collect();
    let mpp: Vec<f64> = plants.iter().map(|p| rng.random_range(0.3..1.0) * p.s_max_va / S_BASE).collect();
    let p_meas: Vec<f64> = mpp.iter().map(|x| x * rng.random_range(0.4..1.0)).collect();
    let q_meas = vec![0.0; m];
    let problem = RobustControlProblem {
        v_prev: (0..n).map(|_| rng.random_range(1.02..1.045)).collect(),
        p_meas,
        q_meas,
        mpp,
        estimates: SensitivityEstimates { nodes },
        v_min: 0.96,
        v_max: 1.04,
        xi: vec![m as f64; n],
        power_unit_va: S_BASE,
        v_margin: 0.0,
    };
    (problem, plants)
}

fn check_deterministic_constraints(sp: &Setpoint<f64>, problem: &RobustControlProblem<f64>, plants: &[PvPlantConfig]) {
    for (j, pl) in plants.iter().enumerate() {
        let (p, q) = (sp.p[j], sp.q[j]);
        let s = pl.s_max_va / problem.power_unit_va;
        assert!(p >= -1e-6 && p <= problem.mpp[j] + 1e-6, "p {p} outside [0, {}]", problem.mpp[j]);
        assert!(p * p + q * q <= s * s * (1.0 + 1e-9), "({p}, {q}) outside circle of {s}");
        assert!(q.abs() <= pl.zeta() * p + 1e-6, "power factor violated");
        if !pl.reactive_capable {
            assert_eq!(q, 0.0);
        }
    }
}

#[test]
fn full_budget_guarantee_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let opts = ControlOptions::default();
    let mut solved = 0;
    let mut attempts = 0;
    while solved < 50 {
        attempts += 1;
        assert!(attempts < 500, "too few feasible instances");
        let n = rng.random_range(2..=4);
        let m = rng.random_range(1..=2);
        let (problem, plants) = instance(&mut rng, n, m, 0.4);
        let sp = match solve_robust(&problem, &plants, &opts) {
            Ok(sp) => sp,
            Err(ControlError::Qp(_)) => continue,
            Err(e) => panic!("{e}"),
        };
        solved += 1;
        check_deterministic_constraints(&sp, &problem, &plants);
        let r = verify_robustness(&sp, &problem, &plants).unwrap();
        assert!(r.max_upper_violation(problem.v_max) <= 1e-6, "upper violation {}", r.max_upper_violation(problem.v_max));
        assert!(r.max_lower_violation(problem.v_min) <= 1e-6);

        let exact = RobustControlProblem { estimates: problem.estimates.without_uncertainty(), ..problem.clone() };
        let robust = solve_robust(&exact, &plants, &opts).unwrap();
        let nominal = solve_control_qp(&build_nominal_qp(&exact, &plants, &opts).unwrap()).unwrap();
        assert!((robust.objective - nominal.objective).abs() <= 1e-6, "{} vs {}", robust.objective, nominal.objective);
    }
}

#[test]
fn watts_and_per_unit_give_the_same_setpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let opts = ControlOptions::default();
    let mut compared = 0;
    for _ in 0..40 {
        let (pu, plants) = instance(&mut rng, 3, 2, 0.3);
        let Ok(a) = solve_robust(&pu, &plants, &opts) else { continue };
        let scale = |e: &SensitivityEstimate<f64>| SensitivityEstimate {
            kp_hat: e.kp_hat.iter().map(|k| k / S_BASE).collect(),
            kq_hat: e.kq_hat.iter().map(|k| k / S_BASE).collect(),
            dkp: e.dkp.iter().map(|k| k / S_BASE).collect(),
            dkq: e.dkq.iter().map(|k| k / S_BASE).collect(),
            ..e.clone()
        };
        let w = RobustControlProblem {
            p_meas: pu.p_meas.iter().map(|x| x * S_BASE).collect(),
            q_meas: pu.q_meas.iter().map(|x| x * S_BASE).collect(),
            mpp: pu.mpp.iter().map(|x| x * S_BASE).collect(),
            estimates: SensitivityEstimates { nodes: pu.estimates.nodes.iter().map(scale).collect() },
            power_unit_va: 1.0,
            ..pu.clone()
        };
        let b = solve_robust(&w, &plants, &opts).unwrap();
        for j in 0..2 {
            let tol = 1e-8 * plants[j].s_max_va;
            assert!((a.p[j] * S_BASE - b.p[j]).abs() <= tol, "{} W vs {} W", a.p[j] * S_BASE, b.p[j]);
            assert!((a.q[j] * S_BASE - b.q[j]).abs() <= tol);
        }
        compared += 1;
    }
    assert!(compared >= 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn objective_is_non_decreasing_in_budget(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (problem, plants) = instance(&mut rng, 3, 2, 0.5);
        let mut last = f64::NEG_INFINITY;
        for k in 0..=8 {
            let xi = 2.0 * k as f64 / 8.0;
            let p = RobustControlProblem { xi: vec![xi; 3], ..problem.clone() };
            match solve_robust(&p, &plants, &ControlOptions::default()) {
                Ok(sp) => {
                    prop_assert!(sp.objective >= last - 1e-9, "xi {xi}: {} < {last}", sp.objective);
                    last = sp.objective;
                }
                // once infeasible, larger budgets stay infeasible
                Err(_) => last = f64::INFINITY,
            }
        }
    }

    #[test]
    fn setpoints_stay_inside_capability_circle(seed in any::<u64>(), segments in 4usize..32) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut problem, mut plants) = instance(&mut rng, 2, 2, 0.2);
        // MPP above the rating and a high voltage push the solution onto the circle
        for (j, pl) in plants.iter_mut().enumerate() {
            pl.reactive_capable = true;
            pl.pf_min = 0.5;
            problem.mpp[j] = 1.2 * pl.s_max_va / S_BASE;
        }
        problem.v_prev = vec![1.05, 1.05];
        let opts = ControlOptions { polygon_segments: segments, ..ControlOptions::default() };
        if let Ok(sp) = solve_robust(&problem, &plants, &opts) {
            for (j, pl) in plants.iter().enumerate() {
                let s = pl.s_max_va / S_BASE;
                prop_assert!(sp.p[j].hypot(sp.q[j]) <= s * (1.0 + 1e-9));
            }
        }
    }
}

#[test]
fn zero_budget_may_exceed_but_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut exceeded = false;
    for _ in 0..60 {
        let (mut problem, plants) = instance(&mut rng, 3, 2, 0.6);
        problem.xi = vec![0.0; 3];
        let Ok(sp) = solve_robust(&problem, &plants, &ControlOptions::default()) else { continue };
        let r = verify_robustness(&sp, &problem, &plants).unwrap();
        for i in 0..3 {
            assert!(r.worst_max[i] >= r.nominal[i] && r.worst_min[i] <= r.nominal[i]);
        }
        exceeded |= r.max_upper_violation(problem.v_max) > 1e-6;
    }
    assert!(exceeded, "no zero-budget instance exceeded the bound");
}
