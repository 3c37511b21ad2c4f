use std::path::PathBuf;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voltguard_core::grid::{linearized_voltage, oracle_sensitivities, GridState, Injections, NetworkModel, PowerFlow};

fn bundled_feeder() -> NetworkModel {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/clear_sky/network.json");
    NetworkModel::load(p).expect("bundled network")
}

/// Random operating point: loads everywhere, generation at two buses.
fn operating_point(rng: &mut ChaCha8Rng, n: usize) -> Injections<f64> {
    let mut inj = Injections::zeros(n);
    for j in 0..n {
        inj.p[j] = -rng.random_range(0.0..0.05);
        inj.q[j] = -rng.random_range(0.0..0.015);
    }
    inj.p[7] += rng.random_range(0.0..0.4);
    inj.p[9] += rng.random_range(0.0..0.3);
    inj
}

/// Complex power injected at every bus, computed branch by branch from the
/// line impedances in ohms.
fn branch_balance(model: &NetworkModel, st: &GridState<f64>) -> Vec<(f64, f64)> {
    let zb = model.v_base_v * model.v_base_v / model.s_base_va;
    let v: Vec<(f64, f64)> = st.v_mag.iter().zip(&st.v_ang).map(|(m, a)| (m * a.cos(), m * a.sin())).collect();
    let mut s = vec![(0.0, 0.0); v.len()];
    for br in &model.branches {
        let (r, x) = (br.r_ohm / zb, br.x_ohm / zb);
        let d = r * r + x * x;
        let y = (r / d, -x / d);
        for (a, b) in [(br.from, br.to), (br.to, br.from)] {
            let dv = (v[a].0 - v[b].0, v[a].1 - v[b].1);
            let i = (y.0 * dv.0 - y.1 * dv.1, y.0 * dv.1 + y.1 * dv.0);
            // S = V · conj(I)
            s[a].0 += v[a].0 * i.0 + v[a].1 * i.1;
            s[a].1 += v[a].1 * i.0 - v[a].0 * i.1;
        }
    }
    s
}

#[test]
fn solution_satisfies_independent_power_balance() {
    let model = bundled_feeder();
    let pf = PowerFlow::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let inj = operating_point(&mut rng, pf.n_non_slack());
        let st = pf.solve(&inj, rng.random_range(0.98..1.03)).unwrap();
        let s = branch_balance(&model, &st);
        for (k, bus) in model.non_slack_buses().into_iter().enumerate() {
            assert!((s[bus].0 - inj.p[k]).abs() < 1e-8, "bus {bus}: p {} vs {}", s[bus].0, inj.p[k]);
            assert!((s[bus].1 - inj.q[k]).abs() < 1e-8);
        }
    }
}

/// First-order prediction against a fresh power flow for random deltas of at
/// most 0.01 pu per bus.
#[test]
fn linearization_error_is_small_on_bundled_feeder() {
    let model = bundled_feeder();
    let pf = PowerFlow::new(&model);
    let n = pf.n_non_slack();
    let slack = pf.slack_bus();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let base = operating_point(&mut rng, n);
        let slack_v = rng.random_range(0.98..1.03);
        let st = pf.solve(&base, slack_v).unwrap();
        let k = oracle_sensitivities(&model, &st).unwrap();
        let dp: Vec<f64> = (0..n).map(|_| rng.random_range(-0.01..0.01)).collect();
        let dq: Vec<f64> = (0..n).map(|_| rng.random_range(-0.01..0.01)).collect();
        let mut next = base.clone();
        for j in 0..n {
            next.p[j] += dp[j];
            next.q[j] += dq[j];
        }
        let truth = pf.solve_from(&next, slack_v, &st).unwrap().non_slack_v(slack);
        let pred = linearized_voltage(&st.non_slack_v(slack), &k, &dp, &dq);
        for i in 0..n {
            worst = worst.max((truth[i] - pred[i]).abs());
        }
    }
    assert!(worst < 1e-4, "max linearization error {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn per_unit_base_does_not_change_voltages(seed in any::<u64>(), s_base in 1e4f64..1e7) {
        let model = bundled_feeder();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inj = operating_point(&mut rng, 13);
        let a = PowerFlow::new(&model).solve(&inj, 1.0).unwrap();
        let rebased = model.with_s_base(s_base);
        let f = model.s_base_va / s_base;
        let inj_b = Injections { p: inj.p.iter().map(|x| x * f).collect(), q: inj.q.iter().map(|x| x * f).collect() };
        let b = PowerFlow::new(&rebased).solve(&inj_b, 1.0).unwrap();
        for (x, y) in a.v_mag.iter().zip(&b.v_mag) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
