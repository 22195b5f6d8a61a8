use std::path::PathBuf;
use std::process::{Command, Output};

use kron_noma::fixtures;
use kron_noma::general::SicPolicy;
use kron_noma::patterns::{expand, KroneckerPattern, PatternSpec};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn load(name: &str) -> KroneckerPattern {
    PatternSpec::from_json(&std::fs::read_to_string(fixture(name)).unwrap())
        .unwrap()
        .build()
        .unwrap()
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kron-noma"))
        .args(args)
        .env_remove("KRON_NOMA_THREADS")
        .output()
        .unwrap()
}

fn path(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

#[test]
fn fixture_files_match_library_patterns() {
    let same = |a: &KroneckerPattern, b: &KroneckerPattern| {
        assert_eq!(a.to_spec(), b.to_spec());
    };
    same(&load("p3_p4.json"), &fixtures::p3_p4_pattern());
    same(&load("chain_1x2_2x3_2x3.json"), &fixtures::chain_1x2_2x3_2x3());
    same(&load("pair_1x2_2x3.json"), &fixtures::pair_1x2_2x3());
    for r in 0..=5 {
        same(
            &load(&format!("pdma_p3_r{r}.json")),
            &fixtures::pdma_p3_pattern(r),
        );
    }
    let policy = SicPolicy::from_json(&std::fs::read_to_string(fixture("p3_sic.json")).unwrap()).unwrap();
    assert_eq!(policy, fixtures::p3_sic_policy());
}

#[test]
fn design_writes_json_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p3.json");
    let o = cli(&["design", "--m", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["gains"], serde_json::json!(["4/3", "4/3", "4/3"]));
}

#[test]
fn searchspace_and_complexity_report_counts() {
    let o = cli(&["searchspace", "--factors", "2x3,3x3"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("35"));
    let o = cli(&[
        "complexity",
        "--pattern",
        &path("pair_1x2_2x3.json"),
        "--mod",
        "qpsk",
    ]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["search_space"]["recursive"], "777");
    assert_eq!(v["search_space"]["direct"], "4096");
}

#[test]
fn noiseless_detection_reports_every_user() {
    let g = expand(&fixtures::pair_1x2_2x3()).unwrap();
    let x: Vec<i64> = vec![1, 1, -1, 1, -1, -1];
    let y: Vec<String> = g.mul_vec(&x).iter().map(|v| v.to_string()).collect();
    let o = cli(&[
        "detect",
        "--pattern",
        &path("pair_1x2_2x3.json"),
        "--y",
        &y.join(","),
        "--noise-variance",
        "0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["symbols"].as_array().unwrap().len(), 6);
    assert_eq!(v["flagged"].as_array().unwrap().len(), 6);
}

#[test]
fn exit_codes_separate_infeasible_from_bad_input() {
    let o = cli(&["searchspace", "--factors", "2x4"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    // an inconsistent noiseless observation is answered with every user flagged
    let o = cli(&[
        "detect",
        "--pattern",
        &path("pair_1x2_2x3.json"),
        "--y",
        "7,0",
        "--noise-variance",
        "0",
    ]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["flagged"].as_array().unwrap().iter().all(|f| f == true));
    let o = cli(&["detect", "--pattern", &path("pair_1x2_2x3.json"), "--y", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = cli(&[
        "ber",
        "--pattern",
        &path("p3_p4.json"),
        "--snr-db",
        "0",
        "--trials",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = cli(&["sumrate", "--pattern", "/nonexistent.json", "--snr-db", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ber_csv_has_one_row_per_user_and_point() {
    let o = cli(&[
        "ber",
        "--pattern",
        &path("p3_p4.json"),
        "--snr-db",
        "0:2:1",
        "--trials",
        "500",
        "--users",
        "1,4",
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 2);
}
