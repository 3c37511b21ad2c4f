use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use voltguard_core::estimation::{ls_bootstrap, EstimatorState, RegressionWindow, SelectiveForgetting};
use voltguard_core::linalg::Matrix;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_rows(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<Vec<f64>> {
    (0..m).map(|_| (0..n).map(|_| gaussian(rng)).collect()).collect()
}

/// Normal equations `(HᵀH + λI) x = HᵀΓ` by Gaussian elimination with
/// partial pivoting, written out independently of the crate's LU.
fn normal_equations(rows: &[Vec<f64>], gamma: &[f64], lambda: f64) -> Vec<f64> {
    let n = rows[0].len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for (row, &g) in rows.iter().zip(gamma) {
        for i in 0..n {
            for j in 0..n {
                a[i][j] += row[i] * row[j];
            }
            a[i][n] += row[i] * g;
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += lambda;
    }
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..=n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (a[i][n] - s) / a[i][i];
    }
    x
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn window(rows: &[Vec<f64>], gamma: &[f64]) -> RegressionWindow<f64> {
    RegressionWindow::from_rows(gamma.to_vec(), Matrix::from_rows(rows)).unwrap()
}

#[test]
fn ridge_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let rows = random_rows(&mut rng, 40, 6);
    let gamma: Vec<f64> = (0..40).map(|_| gaussian(&mut rng)).collect();
    let st = ls_bootstrap(&window(&rows, &gamma), 1e-6, 1.0).unwrap();
    let oracle = normal_equations(&rows, &gamma, 1e-6);
    assert!(rel_err(&st.x_hat, &oracle) < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn recursive_with_unit_forgetting_equals_batch(seed in any::<u64>(), n in 2usize..7, extra in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m0 = 2 * n + 2;
        let rows = random_rows(&mut rng, m0 + extra, n);
        let gamma: Vec<f64> = (0..m0 + extra).map(|_| gaussian(&mut rng)).collect();
        let mut st = ls_bootstrap(&window(&rows[..m0], &gamma[..m0]), 0.0, 1.0).unwrap();
        for k in m0..m0 + extra {
            st.rls_f_update(gamma[k], &rows[k], 1.0, None).unwrap();
        }
        let batch = normal_equations(&rows, &gamma, 0.0);
        prop_assert!(rel_err(&st.x_hat, &batch) < 1e-8, "relative error {}", rel_err(&st.x_hat, &batch));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn covariance_stays_symmetric_psd(seed in any::<u64>(), selective in any::<bool>(), mu in 0.9f64..1.0, sparse in 0.0f64..0.8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4;
        let rows = random_rows(&mut rng, 12, n);
        let gamma: Vec<f64> = (0..12).map(|_| gaussian(&mut rng)).collect();
        let mut st = ls_bootstrap(&window(&rows, &gamma), 1e-6, mu).unwrap();
        let sf = SelectiveForgetting::new(0.01, 100.0, n);
        for _ in 0..200 {
            // rows with zeroed entries mimic columns without excitation
            let h: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < sparse { 0.0 } else { gaussian(&mut rng) }).collect();
            let g = gaussian(&mut rng);
            if selective {
                st.rls_sf_update(g, &h, &sf).unwrap();
            } else {
                st.rls_f_update(g, &h, mu, None).unwrap();
            }
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(st.p_cov[(i, j)], st.p_cov[(j, i)]);
                }
            }
            prop_assert!(st.min_cov_eigenvalue().unwrap() > -1e-10);
        }
    }

    #[test]
    fn selective_eigenvalues_stay_in_bounds(seed in any::<u64>(), tau_min in 1e-4f64..0.1, ratio in 10.0f64..1e4) {
        let tau_max = tau_min * ratio;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4;
        let mut st = EstimatorState::with_prior(vec![0.0; n], 10.0 * tau_max, 0.98);
        let sf = SelectiveForgetting::new(tau_min, tau_max, n);
        for k in 0..100 {
            let h: Vec<f64> = if k % 3 == 0 { vec![0.0; n] } else { (0..n).map(|_| 10.0 * gaussian(&mut rng)).collect() };
            st.rls_sf_update(gaussian(&mut rng), &h, &sf).unwrap();
            for &t in &st.tau {
                prop_assert!(t >= tau_min && t <= tau_max, "tau {t} outside [{tau_min}, {tau_max}]");
            }
        }
    }

    #[test]
    fn column_permutation_permutes_estimate(seed in any::<u64>(), perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6;
        let rows = random_rows(&mut rng, 30, n);
        let gamma: Vec<f64> = (0..30).map(|_| gaussian(&mut rng)).collect();
        let permuted: Vec<Vec<f64>> = rows.iter().map(|r| perm.iter().map(|&c| r[c]).collect()).collect();
        let mut a = ls_bootstrap(&window(&rows[..14], &gamma[..14]), 1e-6, 1.0).unwrap();
        let mut b = ls_bootstrap(&window(&permuted[..14], &gamma[..14]), 1e-6, 1.0).unwrap();
        let sf = SelectiveForgetting::new(0.01, 100.0, n);
        for k in 14..30 {
            a.rls_sf_update(gamma[k], &rows[k], &sf).unwrap();
            b.rls_sf_update(gamma[k], &permuted[k], &sf).unwrap();
        }
        for (k, &c) in perm.iter().enumerate() {
            prop_assert!((b.x_hat[k] - a.x_hat[c]).abs() <= 1e-8 * (1.0 + a.x_hat[c].abs()));
        }
    }
}

#[test]
fn selective_without_tau_update_is_plain_rls() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 5;
    let rows = random_rows(&mut rng, 60, n);
    let gamma: Vec<f64> = (0..60).map(|_| gaussian(&mut rng)).collect();
    let mut f = ls_bootstrap(&window(&rows[..12], &gamma[..12]), 0.0, 1.0).unwrap();
    let mut s = f.clone();
    let mut sf = SelectiveForgetting::new(0.01, 100.0, n);
    sf.update_tau = false;
    for k in 12..60 {
        f.rls_f_update(gamma[k], &rows[k], 1.0, None).unwrap();
        s.rls_sf_update(gamma[k], &rows[k], &sf).unwrap();
    }
    assert!(rel_err(&s.x_hat, &f.x_hat) < 1e-10);
    assert!(s.p_cov.sub(&f.p_cov).max_abs() < 1e-10 * f.p_cov.max_abs());
}

#[test]
fn stationary_stream_bounds_selective_trace_only() {
    let n = 4;
    let h = vec![1.0, 0.5, 0.0, 0.0];
    let mut f = EstimatorState::with_prior(vec![0.0; n], 1.0, 0.98);
    let mut s = f.clone();
    let sf = SelectiveForgetting::new(0.01, 100.0, n);
    let f0 = f.trace();
    for _ in 0..10_000 {
        f.rls_f_update(0.3, &h, 0.98, None).unwrap();
        s.rls_sf_update(0.3, &h, &sf).unwrap();
        let t = s.trace();
        assert!(t >= n as f64 * 0.01 - 1e-12 && t <= n as f64 * 100.0 + 1e-9);
    }
    assert!(f.trace() > 1e6 * f0);
}

/// Monte-Carlo coverage of the 99% interval on a linear system with known
/// Gaussian noise.
#[test]
fn interval_coverage_matches_confidence() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let truth = [0.8, -0.3, 0.05, 1.2];
    let sigma = 0.1;
    let mut covered = 0;
    for _ in 0..1000 {
        let rows = random_rows(&mut rng, 200, 4);
        let gamma: Vec<f64> =
            rows.iter().map(|r| r.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + sigma * gaussian(&mut rng)).collect();
        let st = ls_bootstrap(&window(&rows, &gamma), 0.0, 1.0).unwrap();
        let dk = st.half_widths(0.99);
        if (st.x_hat[0] - truth[0]).abs() <= dk[0] {
            covered += 1;
        }
    }
    let rate = covered as f64 / 1000.0;
    assert!((0.97..=1.0).contains(&rate), "coverage {rate}");
}

#[test]
fn selective_forgetting_converges_under_excitation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = [0.02, 0.01, -0.004, 0.006];
    let noise = 1e-4;
    let sample = |rng: &mut ChaCha8Rng| {
        let h: Vec<f64> = (0..4).map(|_| 0.05 * gaussian(rng)).collect();
        let g = h.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + noise * gaussian(rng);
        (g, h)
    };
    let (gamma, rows): (Vec<f64>, Vec<Vec<f64>>) = (0..20).map(|_| sample(&mut rng)).unzip();
    let mut st = ls_bootstrap(&window(&rows, &gamma), 1e-6, 0.98).unwrap();
    let sf = SelectiveForgetting::new(1e-4, 100.0, 4);
    for _ in 0..3000 {
        let (g, h) = sample(&mut rng);
        st.rls_sf_update(g, &h, &sf).unwrap();
    }
    let dk = st.half_widths(0.99);
    for j in 0..4 {
        assert!((st.x_hat[j] - truth[j]).abs() <= dk[j], "coefficient {j}: {} vs {} ± {}", st.x_hat[j], truth[j], dk[j]);
        assert!((st.x_hat[j] - truth[j]).abs() < 0.05 * truth.iter().fold(0.0f64, |a, b| a.max(b.abs())));
    }
}

#[test]
fn single_precision_bootstrap_agrees_with_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let rows = random_rows(&mut rng, 30, 3);
    let gamma: Vec<f64> = (0..30).map(|_| gaussian(&mut rng)).collect();
    let d = ls_bootstrap(&window(&rows, &gamma), 1e-6, 1.0).unwrap();
    let rows32: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|&x| x as f32).collect()).collect();
    let w32 = RegressionWindow::from_rows(gamma.iter().map(|&x| x as f32).collect(), Matrix::from_rows(&rows32)).unwrap();
    let s = ls_bootstrap(&w32, 1e-6f32, 1.0).unwrap();
    for (a, b) in s.x_hat.iter().zip(&d.x_hat) {
        assert!((*a as f64 - b).abs() < 1e-4);
    }
}
