use glmlab::denoisers::Penalty;
use glmlab::harness::{
    baseline_fit, calibrate_snr, oracle_error_rate, run_sweep, write_rows_csv, BaselineOptions, Config, SweepRow,
    CSV_HEADER,
};
use glmlab::linalg::{mat_t_vec, mat_vec, norm};
use glmlab::mc::stream_rng;
use glmlab::mlvamp::{fit, VampConfig};
use glmlab::spectra::SpectrumModel;
use glmlab::synthdata::{generate_dataset, sigmoid, Channel, TrueModel, W0Law};
use rand::Rng;

fn model(channel: Channel, sigma: f64, var_w0: f64) -> TrueModel {
    TrueModel {
        spectrum: SpectrumModel::iid(sigma),
        channel,
        w0_law: W0Law::Gaussian { var: var_w0 },
    }
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b)
}

#[test]
fn ridge_baseline_agrees_with_mlvamp() {
    for (n, p) in [(80, 40), (30, 60)] {
        let mut rng = stream_rng(11, &[n as u64]);
        let ds = generate_dataset(n, p, &model(Channel::Linear { noise_var: 0.1 }, 1.0, 1.0), &mut rng).unwrap();
        let (f_in, f_out) = (Penalty::ridge(0.5), Penalty::SquaredLoss { weight: 2.0 });
        let base = baseline_fit(&ds, &f_in, &f_out, &BaselineOptions::default(), &mut rng).unwrap();
        let cfg = VampConfig {
            tol: 1e-12,
            max_iters: 2000,
            ..VampConfig::default()
        };
        let vamp = fit(&ds, &f_in, &f_out, &cfg).unwrap();
        assert!(vamp.converged);
        let gap = rel_diff(&vamp.w_hat, &base.w_hat);
        assert!(gap < 1e-5, "n={n} p={p}: {gap}");
    }
}

#[test]
fn logistic_fit_on_separable_data_is_finite() {
    let (n, p) = (20, 50);
    let mut rng = stream_rng(12, &[]);
    let ds = generate_dataset(n, p, &model(Channel::Logistic, 3.0, 1.0), &mut rng).unwrap();
    let lambda = 0.1;
    let fit = baseline_fit(&ds, &Penalty::ridge(lambda), &Penalty::LogisticLoss, &BaselineOptions::default(), &mut rng).unwrap();
    assert!(fit.w_hat.iter().all(|w| w.is_finite()));
    let x = ds.x();
    let scores = mat_vec(&x, &fit.w_hat);
    let resid: Vec<f64> = scores.iter().zip(&ds.y).map(|(s, y)| sigmoid(*s) - y).collect();
    let mut grad = mat_t_vec(&x, &resid);
    for (g, w) in grad.iter_mut().zip(&fit.w_hat) {
        *g += lambda * w;
    }
    assert!(norm(&grad) <= 1e-8, "gradient norm {}", norm(&grad));
}

#[test]
fn tanh_fit_recovers_a_near_linear_truth() {
    let p = 20;
    let mut rng = stream_rng(13, &[]);
    let ds = generate_dataset(10 * p, p, &model(Channel::Tanh { noise_var: 0.0 }, 1.0, 0.04), &mut rng).unwrap();
    let fit = baseline_fit(
        &ds,
        &Penalty::ridge(1e-6),
        &Penalty::TanhLoss { noise_var: 1.0 },
        &BaselineOptions::default(),
        &mut rng,
    )
    .unwrap();
    let gap = rel_diff(&fit.w_hat, &ds.w0);
    assert!(gap < 0.05, "relative error {gap}");
}

#[test]
fn baseline_rejects_unsupported_penalties() {
    let mut rng = stream_rng(14, &[]);
    let ds = generate_dataset(20, 10, &model(Channel::Linear { noise_var: 0.1 }, 1.0, 1.0), &mut rng).unwrap();
    let res = baseline_fit(
        &ds,
        &Penalty::L1 { lambda: 0.1 },
        &Penalty::SquaredLoss { weight: 1.0 },
        &BaselineOptions::default(),
        &mut rng,
    );
    assert!(res.is_err());
}

#[test]
fn calibration_hits_the_target_oracle_error() {
    let spectrum = SpectrumModel::iid(1.0);
    let law = W0Law::Gaussian { var: 1.0 };
    let (a, scaled) = calibrate_snr(&spectrum, &law, 0.5, 2e-3).unwrap();
    assert_eq!(a, 0.0);
    assert_eq!(scaled.test_second_moment(), 0.0);

    let (a, scaled) = calibrate_snr(&spectrum, &law, 0.05, 2e-3).unwrap();
    assert!(a > 0.0);
    let v = scaled.test_second_moment() * law.second_moment();
    let mut rng = stream_rng(15, &[]);
    let draws = 1_000_000;
    let mut wrong = 0usize;
    for _ in 0..draws {
        let z = v.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let y = sigmoid(z) > rng.random::<f64>();
        if y != (z > 0.0) {
            wrong += 1;
        }
    }
    let rate = wrong as f64 / draws as f64;
    assert!((rate - 0.05).abs() < 2e-3, "oracle error {rate}");
}

#[test]
fn oracle_error_decreases_with_signal() {
    let vals: Vec<f64> = [0.0, 0.1, 1.0, 10.0, 100.0, 1e4].iter().map(|&v| oracle_error_rate(v)).collect();
    assert!((vals[0] - 0.5).abs() < 1e-15);
    assert!(vals.windows(2).all(|w| w[1] < w[0]));
}

fn run(text: &str) -> glmlab::harness::SweepResult {
    let cfg = Config::parse(text).unwrap();
    run_sweep(&cfg.sweep_plan().unwrap()).unwrap()
}

#[test]
fn ridgeless_sweep_prediction_matches_the_closed_form() {
    let res = run(
        "seed = 3\np = 40\ntrials = 1\ngrid = 0.4, 0.7, 1.5, 2.5, 4\nmetric = squared\n\
         penalty.in.lambda = 1e-7\nclosed_form = ridgeless\n",
    );
    for s in &res.summary {
        let cf = s.closedform_pred.unwrap();
        assert!((s.se_pred / cf - 1.0).abs() < 0.03, "beta={}: {} vs {cf}", s.beta, s.se_pred);
    }
}

#[test]
fn zero_predictor_error_is_the_output_power() {
    let res = run(
        "seed = 4\np = 40\ntrials = 4\ngrid = 0.5, 2\nmetric = squared\ntest_samples = 20000\n\
         penalty.in.lambda = 1e12\nchannel.noise_var = 0.5\nw0 = constant\n",
    );
    let power = 1.0 + 0.5;
    for r in &res.rows {
        assert!((r.empirical_err / power - 1.0).abs() < 0.05, "{}", r.empirical_err);
    }
}

fn strip_runtime(rows: &[SweepRow]) -> Vec<SweepRow> {
    rows.iter()
        .cloned()
        .map(|mut r| {
            r.runtime_ms = 0.0;
            r
        })
        .collect()
}

#[test]
fn sweeps_are_reproducible_and_write_the_header() {
    let text = "seed = 5\np = 30\ntrials = 3\ngrid = 0.5, 1.5\nchannel = logistic\nse.mc_samples = 20000\n";
    let a = run(text);
    let b = run(text);
    assert_eq!(strip_runtime(&a.rows), strip_runtime(&b.rows));
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.rows.len(), 6);

    let mut buf = Vec::new();
    write_rows_csv(&a.rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER);
    assert_eq!(CSV_HEADER, "beta,n,p,trial,empirical_err,se_pred,closedform_pred,runtime_ms,status");
    assert_eq!(lines.count(), 6);
}

#[test]
fn config_rejects_unknown_keys_and_applies_overrides() {
    assert!(Config::parse("sede = 3\n").is_err());
    let mut cfg = Config::parse("# comment\nseed = 3\np = 10\n").unwrap();
    assert_eq!(cfg.seed().unwrap(), 3);
    cfg.apply_override("seed=9").unwrap();
    assert_eq!(cfg.seed().unwrap(), 9);
    assert!(cfg.apply_override("no_equals").is_err());
    assert!(Config::parse("channel = linear\ncalibrate.target = 0.05\n").unwrap().true_model().is_err());
}
