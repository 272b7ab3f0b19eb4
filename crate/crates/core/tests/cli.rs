use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symauction")).args(args).output().unwrap()
}

fn write_dist(dir: &Path) -> String {
    let p = dir.join("dist.json");
    std::fs::write(
        &p,
        r#"{"setting":"k-bidders","delta":"1/10","factors":[{"iid_items":2,"values":[["1/2","1/2"],["1","1/2"]],"copies":2}],"demands":[1,1]}"#,
    )
    .unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn solve_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let dist = write_dist(dir.path());
    let out = dir.path().join("out");
    let o = cli(&["solve", "--input", &dist, "--epsilon", "1/10", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["formulation"], "k-bidders");
    assert_eq!(summary["naive_matches"], true);
    let mech = out.join("mechanism.csv");
    // the ε-relaxed optimum is audited clean at ε and flagged at 0
    assert_eq!(cli(&["verify", "--input", &dist, "--mechanism", mech.to_str().unwrap(), "--epsilon", "1/10"]).status.code(), Some(0));
    assert_eq!(cli(&["verify", "--input", &dist, "--mechanism", mech.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn oracle_compare_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let dist = write_dist(dir.path());
    let o = cli(&["oracle-compare", "--input", &dist]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["equal"], true);
}

#[test]
fn bad_input_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"setting":"k-items","delta":"1/10","factors":[{"iid_items":1,"values":[["1/2","1/3"]],"copies":2}]}"#).unwrap();
    let o = cli(&["solve", "--input", p.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    // stochastic commands insist on a seed
    assert_eq!(cli(&["sample", "--input", "x", "--mechanism", "y", "--out", "z"]).status.code(), Some(1));
}
