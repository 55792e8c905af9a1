use std::process::{Command, Output};

use serde_json::Value;

fn tfmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfmlab"))
        .args(args)
        .env_remove("TFMLAB_SEED")
        .output()
        .expect("tfmlab runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json report")
}

#[test]
fn first_price_uic_is_violated_with_witness() {
    let out = tfmlab(&[
        "check",
        "--mechanism",
        "first_price",
        "--k",
        "1",
        "--property",
        "uic",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let r = report(&out);
    assert_eq!(r["verdict"], "violated");
    assert!(r["witness"]["strategy"].is_object());
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["config_fingerprint"].as_str().unwrap().len(), 64);
}

#[test]
fn pay_nothing_mic_holds() {
    let out = tfmlab(&[
        "check",
        "--mechanism",
        "pay_nothing",
        "--k",
        "1",
        "--property",
        "mic",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["verdict"], "holds_on_grid");
}

#[test]
fn oca_search_without_sigma_is_inconclusive() {
    let out = tfmlab(&[
        "check",
        "--mechanism",
        "even_auction",
        "--property",
        "oca:search",
        "--grid",
        "values=0,1,4;n=3",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_input_exits_64() {
    for args in [
        &[
            "check",
            "--mechanism",
            "first_price",
            "--k",
            "1",
            "--property",
            "uic",
            "--grid",
            "0:5:zero",
        ][..],
        &["check", "--mechanism", "nope", "--property", "uic"],
        &[
            "check",
            "--mechanism",
            "first_price",
            "--k",
            "1",
            "--property",
            "sideways",
        ],
        &[
            "check",
            "--mechanism",
            "first_price",
            "--k",
            "1",
            "--property",
            "bayes:uic",
            "--model",
            "plain",
        ],
        &["check", "--no-such-flag"],
        &["table", "reserve", "--k", "2"],
    ] {
        let out = tfmlab(args);
        assert_eq!(
            out.status.code(),
            Some(64),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn help_exits_zero() {
    assert_eq!(tfmlab(&["--help"]).status.code(), Some(0));
    assert_eq!(tfmlab(&["--version"]).status.code(), Some(0));
}

#[test]
fn saved_config_reproduces_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let first = tfmlab(&[
        "check",
        "--mechanism",
        "second_price_no_burn",
        "--k",
        "2",
        "--property",
        "mic",
        "--seed",
        "4",
        "--save-config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(first.status.code(), Some(2));
    let second = tfmlab(&[
        "check",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(second.status.code(), Some(2));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn env_overrides_apply() {
    let out = Command::new(env!("CARGO_BIN_EXE_tfmlab"))
        .args(["check", "--k", "1", "--property", "mic"])
        .env("TFMLAB_MECHANISM", "pay_nothing")
        .env("TFMLAB_SEED", "12")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["seed"], 12);
}

#[test]
fn curve_matches_myerson_for_second_price() {
    let out = tfmlab(&[
        "curve",
        "--mechanism",
        "second_price_reserve_burn",
        "--k",
        "1",
        "--r",
        "0.5",
        "--profile",
        "0,2",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("bid,probability,payment,myerson_payment"));
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((f[2] - f[3]).abs() <= 1e-6, "{line}");
    }
}

#[test]
fn transform_emits_description() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let out = tfmlab(&[
        "transform",
        "--mechanism",
        "even_auction",
        "--mode",
        "multi",
        "--emit",
        spec.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&std::fs::read(&spec).unwrap()).unwrap();
    assert_eq!(v["mechanism"]["name"], "revealed_multi:even_auction");
    assert_eq!(v["equivalence"]["verdict"], "holds_on_grid");
}
