use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn glmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glmlab")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn gen_then_fit_agrees_across_solvers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 7\np = 30\nn = 60\nchannel = linear\npenalty.in.lambda = 0.3\n");
    let data = dir.path().join("data.bin");
    let data = data.to_str().unwrap();
    stdout(&glmlab(&["gen", "--config", &cfg, "--out", data]));

    let last = |solver: &str| -> serde_json::Value {
        let text = stdout(&glmlab(&["fit", "--config", &cfg, "--data", data, "--solver", solver]));
        serde_json::from_str(text.lines().last().unwrap()).unwrap()
    };
    let vamp = last("vamp");
    let base = last("baseline");
    assert_eq!(vamp["converged"], true);
    let w = |v: &serde_json::Value| -> Vec<f64> {
        v["w_hat"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
    };
    let (a, b) = (w(&vamp), w(&base));
    assert_eq!(a.len(), 30);
    let gap = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    assert!(gap / scale < 1e-5, "{gap} / {scale}");
}

#[test]
fn closed_form_prints_the_ridgeless_values() {
    let text = stdout(&glmlab(&[
        "closed-form", "--beta", "0.5,2", "--lambda", "0.1", "--sigma-d2", "0.1", "--epsilon", "0,1", "--csv",
    ]));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "ridgeless").unwrap();
    let ridgeless: Vec<f64> = lines.by_ref().take(2).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert!((ridgeless[0] - 0.2).abs() < 1e-6);
    assert!((ridgeless[1] - 0.7).abs() < 1e-6);

    let mismatch: Vec<&str> = text.lines().skip_while(|l| !l.starts_with("beta,epsilon")).skip(1).collect();
    assert_eq!(mismatch.len(), 4);
    for row in mismatch.iter().filter(|l| l.split(',').nth(1) == Some("1")) {
        let v: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((v - 0.6).abs() < 1e-6, "{row}");
    }
}

#[test]
fn sweep_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 2\np = 30\ntrials = 2\ngrid = 0.5, 2\nchannel = linear\n");
    let summary = dir.path().join("summary.csv");
    let text = stdout(&glmlab(&["sweep", "--config", &cfg, "--summary", summary.to_str().unwrap()]));
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "beta,n,p,trial,empirical_err,se_pred,closedform_pred,runtime_ms,status"
    );
    assert_eq!(lines.count(), 4);
    assert_eq!(fs::read_to_string(summary).unwrap().lines().count(), 3);
}

#[test]
fn se_reports_a_prediction() {
    let text = stdout(&glmlab(&["se", "--beta", "0.5", "--set", "channel=linear"]));
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(v["metric"], "squared_db");
    let e_ts = v["report"]["e_ts"].as_f64().unwrap();
    assert!(e_ts > 0.0);
    assert!((v["prediction"].as_f64().unwrap() - 10.0 * (e_ts / 1.1).log10()).abs() < 1e-9);
    assert!(v["fixed_point"]["trajectory"].as_array().unwrap().is_empty());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\nnot_a_key = 3\n");
    let out = glmlab(&["sweep", "--config", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
    assert!(!glmlab(&["se", "--set", "bogus=1"]).status.success());
}
