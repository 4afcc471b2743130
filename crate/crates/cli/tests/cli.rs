use std::path::PathBuf;
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn sfgame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfgame")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn cell(line: &str, k: usize) -> f64 {
    line.split(',').nth(k).unwrap().parse().unwrap()
}

#[test]
fn nash_two_node_prices() {
    let out = sfgame(&["nash", scenario("two_node.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("scope,id,quantity,price,theta,payoff,lerner,ms,rsi"));
    let p1 = cell(lines.next().unwrap(), 3);
    let p2 = cell(lines.next().unwrap(), 3);
    assert!((p1 - 1.32051282).abs() < 1e-8, "p1 = {p1}");
    assert!((p2 - 1.164056).abs() < 1e-5, "p2 = {p2}");
    assert!(text.contains("# verified=true\n"));
}

#[test]
fn pivotal_producer_is_refused() {
    let out = sfgame(&["nash", scenario("pivotal.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("producer 0"), "{err}");
}

#[test]
fn envelope_bounds_and_flags() {
    let out = sfgame(&["envelope", scenario("envelope.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).filter(|l| !l.starts_with('#')).map(|l| l.split(',').collect()).collect();
    let bounds: Vec<&str> = rows.iter().map(|r| r[4]).collect();
    let flags: Vec<&str> = rows.iter().map(|r| r[5]).collect();
    assert_eq!(bounds, ["48.0000000", "24.0000000", "16.0000000", "16.0000000", "88.0000000", ""]);
    assert_eq!(flags, ["true", "false", "true", "false", "true", "false"]);
    assert_eq!(rows[4][6], "12.0000000");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let market = scenario("two_node.json");
    let f = market.to_str().unwrap();
    for args in [vec!["nash", f], vec!["--format", "json", "indices", "--nash", f], vec!["braess"], vec!["poa-example"]] {
        let a = sfgame(&args);
        let b = sfgame(&args);
        assert_eq!(a.status.code(), Some(0), "{args:?}");
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn verify_round_trips_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let market = scenario("two_node.json");
    for (format, file) in [("csv", "ne.csv"), ("json", "ne.json")] {
        let path = dir.path().join(file);
        let p = path.to_str().unwrap();
        let out = sfgame(&["--format", format, "nash", market.to_str().unwrap(), "-o", p]);
        assert_eq!(out.status.code(), Some(0));
        let out = sfgame(&["verify", market.to_str().unwrap(), p]);
        assert_eq!(out.status.code(), Some(0), "{format}: {}", stdout(&out));
        assert!(stdout(&out).contains("# verified=true\n"));
    }
}

#[test]
fn verify_rejects_a_profitable_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let market = scenario("two_node.json");
    let text = stdout(&sfgame(&["nash", market.to_str().unwrap()]));
    // Producer 0 submits a much lower bid; its rivals then gain by deviating.
    let edited: String = text
        .lines()
        .map(|l| if l.starts_with("producer,0,") { l.replace("0.906752137", "0.5") } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, edited).unwrap();
    let out = sfgame(&["verify", market.to_str().unwrap(), path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("# verified=false\n"));
}

#[test]
fn malformed_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"network\": {\n").unwrap();
    let out = sfgame(&["nash", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"network": {"H": [[1]], "c": [1], "demand": [1]}, "producers": [], "bogus": 1}"#).unwrap();
    let out = sfgame(&["ce", unknown.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    assert_eq!(sfgame(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sfgame(&["braess", "--c-step", "0"]).status.code(), Some(2));
}

#[test]
fn failed_command_leaves_no_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("out.csv");
    let out = sfgame(&["nash", scenario("pivotal.json").to_str().unwrap(), "-o", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!target.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn braess_sweep_switches_near_the_cost_peak() {
    let out = sfgame(&["--format", "json", "braess"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 81);
    let switch = v["switch_point"].as_f64().unwrap();
    assert!((0.29..=0.32).contains(&switch), "switch point {switch}");
}
