use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn infocomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infocomp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = infocomp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, args: &[&str]) -> String {
    let path = dir.join(name);
    let path_str = path.to_str().unwrap().to_string();
    let mut full = vec!["--out", &path_str];
    full.extend_from_slice(args);
    ok(&full);
    path_str
}

#[test]
fn uniform_subset_has_log_ratio_divergence() {
    let out = ok(&["gen", "uniform-subset", "--q-size", "16", "--p-size", "1"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!((v["divergence"].as_f64().unwrap() - 4.0).abs() < 1e-12);
    let p: Vec<f64> = serde_json::from_value(v["p"]["probs"].clone()).unwrap();
    let q: Vec<f64> = serde_json::from_value(v["q"]["probs"].clone()).unwrap();
    assert_eq!(p.iter().filter(|&&x| x > 0.0).count(), 1);
    assert_eq!(q.iter().filter(|&&x| x > 0.0).count(), 16);
}

#[test]
fn larger_p_support_is_rejected() {
    let out = infocomp(&["gen", "uniform-subset", "--q-size", "4", "--p-size", "8"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_trials_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let pair = write(
        dir.path(),
        "pair.json",
        &["gen", "uniform-subset", "--q-size", "8", "--p-size", "2"],
    );
    let out = infocomp(&["--trials", "0", "sample", "--p", &pair, "--q", &pair]);
    assert_eq!(out.status.code(), Some(2));
    let out = infocomp(&["--eps", "0.7", "sample", "--p", &pair, "--q", &pair]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identical_config_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(
        dir.path(),
        "f.json",
        &[
            "--seed",
            "0123456789abcdef0123456789abcdef",
            "gen",
            "random-cpj",
        ],
    );
    let run = |name: &str| {
        let csv = write(
            dir.path(),
            name,
            &["--trials", "200", "cpj", "--instance", &inst],
        );
        std::fs::read_to_string(csv).unwrap()
    };
    let first = run("a.csv");
    assert_eq!(first, run("b.csv"));
    assert!(first.starts_with("trial,leafA,leafB,match,bits,divcost_path,bound\n"));
    assert_eq!(first.lines().count(), 201);
    assert!(dir.path().join("a.csv.json").exists());

    let other = write(
        dir.path(),
        "c.csv",
        &[
            "--seed",
            "ffffffffffffffffffffffffffffffff",
            "--trials",
            "200",
            "cpj",
            "--instance",
            &inst,
        ],
    );
    assert_ne!(first, std::fs::read_to_string(other).unwrap());
}

#[test]
fn sample_campaign_mean_is_within_leading_terms() {
    let dir = tempfile::tempdir().unwrap();
    let pair = write(
        dir.path(),
        "pair.json",
        &["gen", "uniform-subset", "--q-size", "1024", "--p-size", "4"],
    );
    let csv = dir.path().join("s.csv");
    let summary = ok(&[
        "--out",
        csv.to_str().unwrap(),
        "sample",
        "--p",
        &pair,
        "--q",
        &pair,
    ]);
    let v: Value = serde_json::from_str(&summary).unwrap();
    let mean = v["bits"]["mean"].as_f64().unwrap();
    let limit = 8.0 + 2.0 * 100f64.log2() + 5.0 * 8f64.sqrt() + 12.0;
    assert!(mean <= limit, "mean {mean} above {limit}");
    assert_eq!(v["bound_violations"].as_u64(), Some(0));
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("trial,a,b,outcome,bits_A,bits_B,rounds_t,k,bound\n"));
    assert_eq!(text.lines().count(), 10_001);
}

#[test]
fn promise_cpj_meets_its_margin() {
    let out = ok(&["gen", "promise-cpj", "--margin", "0.9"]);
    let f: infocomp::cpj::CpjInstance = serde_json::from_str(&out).unwrap();
    assert!(infocomp::cpj::label_mass(&f, 1) >= 0.9);
}

#[test]
fn info_reports_the_test_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = write(dir.path(), "ct.json", &["gen", "compression-test"]);
    let v: Value = serde_json::from_str(&ok(&["info", "--protocol", &bundle])).unwrap();
    assert_eq!(v["cc"].as_u64(), Some(6));
    assert!((v["internal_ic"].as_f64().unwrap() - 2.0).abs() < 0.05);
    assert!(v["identity_residual"].as_f64().unwrap() < 1e-9);
}

#[test]
fn compress_and_amortize_run_on_a_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = write(dir.path(), "ct.json", &["gen", "compression-test"]);
    let v: Value = serde_json::from_str(&ok(&[
        "--trials",
        "300",
        "--out",
        dir.path().join("c.csv").to_str().unwrap(),
        "compress",
        "--protocol",
        &bundle,
    ]))
    .unwrap();
    assert_eq!(v["bound_violations"].as_u64(), Some(0));
    let v: Value = serde_json::from_str(&ok(&[
        "--trials",
        "40",
        "--out",
        dir.path().join("am.csv").to_str().unwrap(),
        "amortize",
        "--protocol",
        &bundle,
        "--n-list",
        "1,2",
    ]))
    .unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn selftest_passes() {
    let out = ok(&["selftest"]);
    assert!(out.lines().count() >= 8);
    assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
}

#[test]
fn bad_seed_is_a_usage_error() {
    assert_eq!(
        infocomp(&["--seed", "xyz", "selftest"]).status.code(),
        Some(2)
    );
}

#[test]
fn serve_pair_over_tcp_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let pair = write(
        dir.path(),
        "pair.json",
        &["gen", "uniform-subset", "--q-size", "64", "--p-size", "4"],
    );
    let p: infocomp::cli::gen::SamplePair =
        serde_json::from_str(&std::fs::read_to_string(&pair).unwrap()).unwrap();
    let spec =
        serde_json::to_string(&infocomp::wire::EngineSpec::sample_for(&p.p, &p.q, 0.01)).unwrap();
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let bin = env!("CARGO_BIN_EXE_infocomp");
    let server = Command::new(bin)
        .args([
            "serve", "--role", "A", "--listen", &addr, "--engine", &spec, "--input", &pair,
        ])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let client = infocomp(&[
        "serve",
        "--role",
        "B",
        "--connect",
        &addr,
        "--engine",
        &spec,
        "--input",
        &pair,
    ]);
    let server = server.wait_with_output().unwrap();
    assert!(client.status.success() && server.status.success());
    let a: Value = serde_json::from_slice(&server.stdout).unwrap();
    let b: Value = serde_json::from_slice(&client.stdout).unwrap();
    assert_eq!(a["report"]["output"], b["report"]["output"]);
    assert_eq!(a["stats"]["bits_sent"], b["stats"]["bits_received"]);
    assert_eq!(a["stats"]["bits_received"], b["stats"]["bits_sent"]);
}
