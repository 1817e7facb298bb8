use glmlab::closedform::{
    mismatch_gen, mismatch_line, ridge_constants, ridge_gen, ridgeless_gen, squared_error_gen, ErrorConstants,
};
use glmlab::denoisers::Penalty;
use glmlab::spectra::{MpLaw, SpectrumModel};
use glmlab::stateevo::{m_matrix, se_fixed_point, SeConfig, SeProblem};
use glmlab::synthdata::{Channel, W0Law};
use proptest::prelude::*;

fn ridge_problem(spectrum: SpectrumModel, beta: f64, lambda: f64, noise_var: f64) -> SeProblem {
    SeProblem {
        spectrum,
        channel: Channel::Linear { noise_var },
        w0_law: W0Law::Gaussian { var: 1.0 },
        f_in: Penalty::L2 { lambda, beta_scale: beta },
        f_out: Penalty::SquaredLoss { weight: 1.0 },
        beta,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ridge_constants_invariants(
        beta in prop_oneof![0.05f64..0.95, 1.05f64..6.0],
        lambda in 1e-4f64..10.0,
        sigma_tr2 in 0.1f64..5.0,
        var_w0 in 0.1f64..3.0,
        sigma_d2 in 0.0f64..1.0,
    ) {
        let rc = ridge_constants(beta, lambda, sigma_tr2, var_w0, sigma_d2).unwrap();
        prop_assert!((rc.gamma0_plus - lambda / beta).abs() <= 1e-12 * rc.gamma0_plus);
        prop_assert_eq!(rc.k22, var_w0);
        prop_assert!(rc.gamma1_minus > 0.0);
        prop_assert!(rc.z_residual.abs() <= 1e-10);
        prop_assert!(rc.tau1_minus >= 0.0);
    }
}

#[test]
fn noise_floor_without_estimation_error() {
    let c = ErrorConstants {
        gamma0_plus: 0.3,
        gamma1_minus: 1.7,
        k22: 0.0,
        tau1_minus: 0.0,
    };
    for spectrum in [SpectrumModel::iid(1.4), SpectrumModel::BernoulliMismatch { epsilon: 0.4 }] {
        let e = squared_error_gen(&c, &spectrum, 0.25).unwrap();
        assert!((e - 0.25).abs() < 1e-14);
    }
}

#[test]
fn ridgeless_formula_spot_values() {
    assert!((ridgeless_gen(0.5, 1.0, 1.0, 0.1).unwrap() - 0.2).abs() < 1e-14);
    assert!((ridgeless_gen(2.0, 1.0, 1.0, 0.1).unwrap() - 0.7).abs() < 1e-14);
    assert!(ridgeless_gen(1.0, 1.0, 1.0, 0.1).is_err());
    let far = ridgeless_gen(1e9, 1.3, 0.8, 0.1).unwrap();
    assert!((far - (0.1 + 1.3 * 0.8)).abs() < 1e-6);
}

#[test]
fn ridge_constants_reach_the_ridgeless_limits() {
    let (sigma_tr2, var_w0, sigma_d2) = (1.0, 1.0, 0.1);
    for beta in [0.3, 0.7, 1.5, 3.0] {
        let rc = ridge_constants(beta, 1e-8, sigma_tr2, var_w0, sigma_d2).unwrap();
        let g0 = MpLaw::new(beta).unwrap().g0().unwrap();
        let tau = if beta < 1.0 {
            sigma_d2 * g0
        } else {
            beta * sigma_d2 * g0 + sigma_tr2 * var_w0 * (beta - 1.0)
        };
        assert!((rc.tau1_minus / tau - 1.0).abs() < 1e-3, "beta={beta}: {} vs {tau}", rc.tau1_minus);
        if beta < 1.0 {
            let g = (1.0 - beta) / beta;
            assert!((rc.gamma1_minus / g - 1.0).abs() < 1e-3, "beta={beta}: {} vs {g}", rc.gamma1_minus);
        }
        let r = ridge_gen(beta, 1e-8, sigma_tr2, var_w0, sigma_d2).unwrap();
        let l = ridgeless_gen(beta, sigma_tr2, var_w0, sigma_d2).unwrap();
        assert!((r / l - 1.0).abs() < 1e-3, "beta={beta}: {r} vs {l}");
    }
}

#[test]
fn ridgeless_error_has_the_double_descent_shape() {
    let below: Vec<f64> = (1..99).map(|i| i as f64 / 100.0).collect();
    let vals: Vec<f64> = below.iter().map(|&b| ridgeless_gen(b, 1.0, 1.0, 0.1).unwrap()).collect();
    assert!(vals.windows(2).all(|w| w[1] > w[0]));

    let floor = 0.1 + 1.0;
    let above: Vec<f64> = (101..2000).map(|i| i as f64 / 100.0).collect();
    let vals: Vec<f64> = above.iter().map(|&b| ridgeless_gen(b, 1.0, 1.0, 0.1).unwrap()).collect();
    let turn = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    assert!(vals[..=turn].windows(2).all(|w| w[1] < w[0]));
    assert!(vals[turn..].windows(2).all(|w| w[1] >= w[0]));
    assert!(vals.iter().all(|&v| v > 0.0));
    assert!(*vals.last().unwrap() < floor);
    assert!((ridgeless_gen(1e6, 1.0, 1.0, 0.1).unwrap() - floor).abs() < 1e-5);
}

#[test]
fn ridge_constants_agree_with_state_evolution() {
    for beta in [0.3, 0.7, 1.5, 3.0] {
        for lambda in [0.01, 0.5] {
            let prob = ridge_problem(SpectrumModel::iid(1.0), beta, lambda, 0.1);
            let fp = se_fixed_point(&prob, &SeConfig::default()).unwrap();
            let rc = ridge_constants(beta, lambda, 1.0, 1.0, 0.1).unwrap();
            for (a, b) in [
                (fp.gamma_plus[0], rc.gamma0_plus),
                (fp.gamma_minus[1], rc.gamma1_minus),
                (fp.tau_minus[1], rc.tau1_minus),
            ] {
                assert!((a / b - 1.0).abs() < 0.01, "beta={beta} lambda={lambda}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn squared_error_formula_matches_the_se_pipeline() {
    let (beta, lambda) = (0.5, 0.1);
    let spectrum = SpectrumModel::IsoConstant {
        sigma_tr: 1.0,
        sigma_ts: 1.0,
    };
    let prob = ridge_problem(spectrum, beta, lambda, 0.1);
    let cfg = SeConfig::default();
    let fp = se_fixed_point(&prob, &cfg).unwrap();
    let m = m_matrix(&fp, &spectrum, cfg.hermite_nodes).unwrap();
    let se = m.k11 - 2.0 * m.k12 + m.k22 + 0.1;
    let rc = ridge_constants(beta, lambda, 1.0, 1.0, 0.1).unwrap();
    let cf = squared_error_gen(&rc.error_constants(), &spectrum, 0.1).unwrap();
    assert!((cf / se - 1.0).abs() < 0.01, "{cf} vs {se}");
}

#[test]
fn tau1_minus_matches_monte_carlo_state_evolution() {
    let prob = ridge_problem(SpectrumModel::iid(1.0), 2.0, 0.1, 0.1);
    let cfg = SeConfig {
        quadratic_fast_path: false,
        mc_samples: 200_000,
        ..SeConfig::default()
    };
    let fp = se_fixed_point(&prob, &cfg).unwrap();
    let rc = ridge_constants(2.0, 0.1, 1.0, 1.0, 0.1).unwrap();
    assert!((fp.tau_minus[1] / rc.tau1_minus - 1.0).abs() < 0.02, "{} vs {}", fp.tau_minus[1], rc.tau1_minus);
}

fn bernoulli_constants() -> ErrorConstants {
    let spectrum = SpectrumModel::BernoulliMismatch { epsilon: 0.0 };
    let fp = se_fixed_point(&ridge_problem(spectrum, 0.8, 0.2, 0.05), &SeConfig::default()).unwrap();
    ErrorConstants::from(&fp)
}

#[test]
fn mismatch_error_is_affine_in_epsilon() {
    let c = bernoulli_constants();
    let sigma_d2 = 0.05;
    let e0 = mismatch_gen(&c, 0.0, sigma_d2).unwrap();
    let gs = c.gamma0_plus / (c.gamma0_plus + c.gamma1_minus);
    let slope = c.k22 * (1.0 - gs * gs) / 2.0 - c.tau1_minus * (1.0 - gs).powi(2) / 2.0;
    for eps in [0.1, 0.35, 0.8, 1.0] {
        let e = mismatch_gen(&c, eps, sigma_d2).unwrap();
        assert!((e - e0 - eps * slope).abs() < 1e-12);
    }
    let e1 = mismatch_gen(&c, 1.0, sigma_d2).unwrap();
    assert!((e1 - (c.k22 / 2.0 + sigma_d2)).abs() < 1e-12);
    assert!((mismatch_line(&c, sigma_d2).1 - slope).abs() < 1e-14);
    assert!(mismatch_gen(&c, 1.5, sigma_d2).is_err());
}

#[test]
fn mismatch_formula_specializes_the_general_one() {
    let c = bernoulli_constants();
    for eps in [0.0, 0.3, 1.0] {
        let general = squared_error_gen(&c, &SpectrumModel::BernoulliMismatch { epsilon: eps }, 0.05).unwrap();
        let special = mismatch_gen(&c, eps, 0.05).unwrap();
        assert!((general - special).abs() < 1e-10, "eps={eps}: {general} vs {special}");
    }
}
