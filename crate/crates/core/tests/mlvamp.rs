mod common;

use common::rel_err;
use glmlab::denoisers::Penalty;
use glmlab::harness::{baseline_fit, BaselineOptions};
use glmlab::mc::stream_rng;
use glmlab::mlvamp::{fit, fit_from, kkt_residual, VampConfig, VampState};
use glmlab::spectra::SpectrumModel;
use glmlab::synthdata::{generate_dataset, Channel, Dataset, TrueModel, W0Law};
use glmlab::linalg::norm;
use rand::Rng;

fn dataset(n: usize, p: usize, channel: Channel, seed: u64) -> Dataset {
    let model = TrueModel {
        spectrum: SpectrumModel::LogNormal {
            scale: 1.0,
            sigma_u_db: 3.0,
            rho: 1.0,
        },
        channel,
        w0_law: W0Law::Gaussian { var: 1.0 },
    };
    generate_dataset(n, p, &model, &mut stream_rng(seed, &[])).unwrap()
}

#[test]
fn strictly_convex_solutions_do_not_depend_on_initialization() {
    let cases = [
        (dataset(120, 60, Channel::Linear { noise_var: 0.1 }, 1), Penalty::SquaredLoss { weight: 1.0 }),
        (dataset(60, 90, Channel::Linear { noise_var: 0.1 }, 2), Penalty::SquaredLoss { weight: 1.0 }),
        (dataset(120, 60, Channel::Logistic, 3), Penalty::LogisticLoss),
    ];
    let f_in = Penalty::ridge(0.5);
    let cfg = VampConfig::default();
    for (ds, f_out) in cases {
        let reference = fit(&ds, &f_in, &f_out, &cfg).unwrap();
        assert!(reference.converged);
        let mut rng = stream_rng(9, &[]);
        for _ in 0..5 {
            let gamma = [0; 3].map(|_| 10f64.powf(rng.random_range(-1.0..1.0)));
            let scale = rng.random_range(0.1..3.0);
            let init = VampState::random(&ds, scale, gamma, &mut rng).unwrap();
            let other = fit_from(&ds, &f_in, &f_out, &cfg, init).unwrap();
            assert!(other.converged);
            assert!(rel_err(&other.w_hat, &reference.w_hat) <= 1e-5);
        }
    }
}

#[test]
fn kkt_residual_and_precision_positivity() {
    let f_in = Penalty::ridge(1.0);
    for (ds, f_out) in [
        (dataset(150, 100, Channel::Logistic, 4), Penalty::LogisticLoss),
        (dataset(80, 100, Channel::Tanh { noise_var: 0.25 }, 5), Penalty::SquaredLoss { weight: 4.0 }),
    ] {
        let res = fit(&ds, &f_in, &f_out, &VampConfig::default()).unwrap();
        assert!(res.converged);
        let kkt = kkt_residual(&ds, &f_in, &f_out, &res.w_hat, None);
        assert!(kkt <= 1e-6 * (1.0 + norm(&res.w_hat)), "{kkt}");
        for rec in &res.history {
            assert!(rec.gamma_plus.iter().chain(&rec.gamma_minus).all(|&g| g > 0.0));
            assert!(rec.alpha_plus.iter().chain(&rec.alpha_minus).all(|&a| a > 0.0 && a < 1.0));
        }
    }
}

#[test]
fn ridge_matches_normal_equations() {
    let ds = dataset(100, 70, Channel::Linear { noise_var: 0.2 }, 6);
    let f_in = Penalty::L2 {
        lambda: 0.3,
        beta_scale: 0.7,
    };
    let f_out = Penalty::SquaredLoss { weight: 2.0 };
    let vamp = fit(&ds, &f_in, &f_out, &VampConfig::default()).unwrap();
    let direct = baseline_fit(&ds, &f_in, &f_out, &BaselineOptions::default(), &mut stream_rng(0, &[])).unwrap();
    assert!(rel_err(&vamp.w_hat, &direct.w_hat) <= 1e-5);
}

#[test]
fn l1_fit_satisfies_subgradient_conditions() {
    let ds = dataset(80, 60, Channel::Linear { noise_var: 0.05 }, 7);
    let f_in = Penalty::L1 { lambda: 0.2 };
    let f_out = Penalty::SquaredLoss { weight: 1.0 };
    let res = fit(&ds, &f_in, &f_out, &VampConfig::default()).unwrap();
    assert!(res.converged);
    assert!(kkt_residual(&ds, &f_in, &f_out, &res.w_hat, None) <= 1e-6);
    assert!(res.w_hat.contains(&0.0));
}

#[test]
fn rejects_mismatched_inputs() {
    let ds = dataset(10, 5, Channel::Logistic, 8);
    assert!(fit(&ds, &Penalty::LogisticLoss, &Penalty::LogisticLoss, &VampConfig::default()).is_err());
    let bad = VampConfig {
        damping: 0.0,
        ..VampConfig::default()
    };
    assert!(fit(&ds, &Penalty::ridge(1.0), &Penalty::LogisticLoss, &bad).is_err());
}
