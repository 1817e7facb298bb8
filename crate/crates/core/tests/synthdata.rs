use glmlab::linalg::{mat_vec, norm};
use glmlab::mc::stream_rng;
use glmlab::mlvamp::rotation_norms;
use glmlab::spectra::SpectrumModel;
use glmlab::synthdata::{
    generate_dataset, generate_test_pairs, load_dataset, normalized_mse_db, save_dataset, Channel, TrueModel, W0Law,
};
use rand::Rng;
use rand_distr::StandardNormal;

fn model(channel: Channel) -> TrueModel {
    TrueModel {
        spectrum: SpectrumModel::LogNormal {
            scale: 1.0,
            sigma_u_db: 3.0,
            rho: 0.5,
        },
        channel,
        w0_law: W0Law::BernoulliGaussian { density: 0.3, var: 2.0 },
    }
}

#[test]
fn empirical_moments_of_w0() {
    let law = W0Law::BernoulliGaussian { density: 0.3, var: 2.0 };
    let mut rng = stream_rng(1, &[]);
    let p = 100_000;
    let w: Vec<f64> = (0..p).map(|_| law.sample(&mut rng)).collect();
    let m1 = w.iter().sum::<f64>() / p as f64;
    let m2 = w.iter().map(|x| x * x).sum::<f64>() / p as f64;
    // Standard errors: √(0.6/p) ≈ 0.0024 and √(Var W²/p) ≈ 0.011.
    assert!(m1.abs() < 0.012);
    assert!((m2 - law.second_moment()).abs() < 0.05);
}

#[test]
fn factored_product_reconstructs_x() {
    let mut rng = stream_rng(2, &[]);
    for (n, p) in [(60, 40), (40, 60)] {
        let ds = generate_dataset(n, p, &model(Channel::Linear { noise_var: 0.1 }), &mut rng).unwrap();
        let x = ds.x();
        let w: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let a = ds.apply_x(&w);
        let b = mat_vec(&x, &w);
        let d: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u - v).collect();
        assert!(norm(&d) <= 1e-9 * norm(&w));
    }
}

#[test]
fn orthogonal_stages_preserve_norms() {
    let mut rng = stream_rng(3, &[]);
    for (n, p) in [(50, 30), (30, 50)] {
        let ds = generate_dataset(n, p, &model(Channel::Logistic), &mut rng).unwrap();
        let xp: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let xn: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for (before, after) in rotation_norms(&ds, &xp, &xn).unwrap() {
            assert!((before - after).abs() <= 1e-10 * before);
        }
    }
}

#[test]
fn dataset_files_round_trip() {
    let mut rng = stream_rng(4, &[]);
    let ds = generate_dataset(20, 15, &model(Channel::Tanh { noise_var: 0.01 }), &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.bin");
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.y, ds.y);
    assert_eq!(back.w0, ds.w0);
    assert_eq!(back.s_ts, ds.s_ts);
    std::fs::write(&path, b"GLMDS0").unwrap();
    assert!(load_dataset(&path).is_err());
}

#[test]
fn logistic_labels_are_binary_and_zero_predictor_has_unit_loss() {
    let mut rng = stream_rng(5, &[]);
    let ds = generate_dataset(200, 50, &model(Channel::Logistic), &mut rng).unwrap();
    assert!(ds.y.iter().all(|&y| y == 0.0 || y == 1.0));
    let ds = generate_dataset(50, 50, &model(Channel::Linear { noise_var: 0.1 }), &mut rng).unwrap();
    let pairs = generate_test_pairs(&ds, &Channel::Linear { noise_var: 0.1 }, &vec![0.0; 50], 2000, &mut rng).unwrap();
    assert!(normalized_mse_db(&pairs).unwrap().abs() < 1e-12);
}
