use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_strata-bounds"));
    c.current_dir(root());
    c
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("strata-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json report")
}

const APPC: [&str; 4] = ["--model", "data/three_valued/model.json", "--data", "data/three_valued/counts.csv"];
const BIN: [&str; 4] = ["--model", "data/binary_iv/no_defier.json", "--data", "data/binary_iv/counts.csv"];

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

#[test]
fn bounds_on_the_three_valued_example() {
    let r = json(&run(&with(&["bounds"], &with(&APPC, &["--param", "ate_contrast:1,0", "--stratum", "012"]))));
    let lo = r["result"]["lower"].as_f64().unwrap();
    let hi = r["result"]["upper"].as_f64().unwrap();
    assert!((lo + 0.219).abs() < 2e-3, "{lo}");
    assert!((hi - 0.766).abs() < 2e-3, "{hi}");
    assert_eq!(r["result"]["status"], "nonempty");
    assert_eq!(r["manifest"]["files"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn stratum_mass_is_the_sharp_interval() {
    let r = json(&run(&with(&["bounds"], &with(&APPC, &["--param", "stratum_mass", "--stratum", "012"]))));
    assert!((r["result"]["lower"].as_f64().unwrap() - 0.235).abs() < 1e-9);
    assert!((r["result"]["upper"].as_f64().unwrap() - 0.419).abs() < 1e-9);
}

#[test]
fn identified_late_with_closed_form() {
    let r = json(&run(&with(&["bounds"], &with(&BIN, &["--closed-form"]))));
    assert!((r["result"]["lower"].as_f64().unwrap() - 0.3).abs() < 1e-9);
    assert!((r["result"]["upper"].as_f64().unwrap() - 0.3).abs() < 1e-9);
    let cf = &r["closed_form"];
    assert!((cf["lower_value"].as_f64().unwrap() - 0.3).abs() < 1e-9);
    assert!((cf["upper_value"].as_f64().unwrap() - 0.3).abs() < 1e-9);
}

#[test]
fn malformed_data_is_an_input_error() {
    let bad = scratch("bad.csv");
    std::fs::write(&bad, "y,d,z,count\n0,0,0,5\n1,7,0,3\n").unwrap();
    let out = run(&["bounds", "--model", "data/binary_iv/no_defier.json", "--data", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    let missing = run(&["bounds", "--model", "data/binary_iv/nope.json", "--data", "data/binary_iv/counts.csv"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn data_outside_the_model_exit_three_unless_allowed() {
    // Z moves D up and Y down for the same cells: violates the no-defier implications.
    let bad = scratch("pearl.csv");
    std::fs::write(&bad, "y,d,z,count\n0,0,0,100\n1,0,0,400\n0,1,0,400\n1,1,0,100\n0,0,1,400\n1,0,1,100\n0,1,1,100\n1,1,1,400\n")
        .unwrap();
    let args = ["bounds", "--model", "data/binary_iv/no_defier.json", "--data", bad.to_str().unwrap()];
    let out = run(&args);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("<="));
    let r = json(&run(&with(&args, &["--allow-infeasible"])));
    assert_eq!(r["result"]["status"], "empty_model");
}

#[test]
fn replicate_passes_and_writes_figure_data() {
    let fig = scratch("figure.csv");
    let r = json(&run(&["replicate-appendix-c", "--figure", fig.to_str().unwrap(), "--figure-n", "21"]));
    assert_eq!(r["pass"], true);
    let text = std::fs::read_to_string(&fig).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 22);
}

#[test]
fn confidence_region_covers_the_wald_estimate() {
    let r = json(&run(&with(&["ci"], &with(&BIN, &["--bootstrap", "99", "--seed", "3"]))));
    let iv = &r["result"]["intervals"][0];
    let (lo, hi) = (iv[0].as_f64().unwrap(), iv[1].as_f64().unwrap());
    assert!(lo < 0.3 && 0.3 < hi, "[{lo}, {hi}]");
    assert!(hi - lo < 0.5);
}

#[test]
fn test_and_spec_test_reports() {
    let r = json(&run(&with(&["test"], &with(&BIN, &["--theta0", "0.3", "--bootstrap", "99"]))));
    assert_eq!(r["result"]["reject"], false);
    let r = json(&run(&with(&["test"], &with(&BIN, &["--theta0", "-0.6", "--bootstrap", "99"]))));
    assert_eq!(r["result"]["reject"], true);
    let r = json(&run(&with(&["spec-test"], &with(&BIN, &["--bootstrap", "99"]))));
    assert_eq!(r["result"]["reject"], false);
}

#[test]
fn implications_of_no_defiers() {
    let path = scratch("ineq.txt");
    let r = json(&run(&["implications", "--model", "data/binary_iv/no_defier.json", "--inequalities", path.to_str().unwrap()]));
    assert!(!r["nontrivial"].as_array().unwrap().is_empty());
    assert!(std::fs::read_to_string(&path).unwrap().contains("<="));
    // Exclusion alone still bites: the four instrument inequalities.
    let r = json(&run(&["implications", "--model", "data/binary_iv/unrestricted.json"]));
    let found: Vec<&str> = r["nontrivial"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(found.len(), 4, "{found:?}");
    assert!(found.contains(&"p[00|0] + p[10|1] <= 1"));
    assert!(found.contains(&"p[10|0] + p[00|1] <= 1"));
}

fn strip(mut v: Value) -> Value {
    let m = v["manifest"].as_object_mut().unwrap();
    m.remove("wall_clock_seconds");
    m.remove("threads");
    v
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let args = with(&["test"], &with(&APPC, &["--theta0", "0.8", "--bootstrap", "60", "--seed", "11", "--keep-draws"]));
    let one = strip(json(&run(&with(&["--threads", "1"], &args))));
    let four = strip(json(&run(&with(&["--threads", "4"], &args))));
    assert_eq!(one, four);
    let env = strip(json(&bin().env("STRATA_BOUNDS_THREADS", "3").args(&args).output().unwrap()));
    assert_eq!(one, env);
}
