use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dpol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpol"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_spec(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.spec");
    fs::write(&path, format!("{body}\nout = {}\n", dir.join("out").display())).unwrap();
    path.display().to_string()
}

#[test]
fn run_writes_artifacts_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "# small sweep\nkind = privacy_sweep\nseeds = 2\nlearners = 4\ncount = 2000\nsweep = inf, 1\nper_run_csv = true",
    );
    let o = dpol(&["run", &spec, "--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("eps_non-private"));
    for f in ["manifest.json", "summary.csv", "curves.csv", "plot.svg"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["all_ok"], true);
    assert_eq!(manifest["cells"].as_array().unwrap().len(), 4);
}

#[test]
fn failed_cells_give_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "kind = node_sweep\nseeds = 1\ncount = 300\nepsilon = 1\nsweep = 2, 500");
    let o = dpol(&["run", &spec]);
    assert_eq!(o.status.code(), Some(1));
    assert!(dir.path().join("out/manifest.json").exists());
}

#[test]
fn bad_specs_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "kind = privacy_sweep\neta = lots");
    let o = dpol(&["run", &spec]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eta"));
}

#[test]
fn audit_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = dpol(&["audit", "--trials", "50", "--batch", "4", "--out", &out]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("passed=true"));
    let csv = fs::read_to_string(dir.path().join("audit.csv")).unwrap();
    assert!(csv.starts_with("trial,t,measured_L1,bound,ratio"));
    assert_eq!(csv.lines().count(), 51);
}

#[test]
fn bounds_prints_each_quantity() {
    let o = dpol(&["bounds", "--m", "4", "--epsilon", "0.5", "--regret", "10"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for key in ["theta=", "beta=", "online_regret_bound=", "offline_utility_bound=", "centralized_bound="] {
        assert!(text.contains(key), "{key} missing from {text}");
    }
    let convex = dpol(&["bounds", "--case", "convex", "--lambda", "0"]);
    assert!(convex.status.success());
    assert_eq!(dpol(&["bounds", "--lambda", "0"]).status.code(), Some(2));
}

#[test]
fn topology_dump_can_be_checked() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("a.txt").display().to_string();
    for mode in ["fixed-complete", "random-pairwise-gossip", "ring-rotation"] {
        let o = dpol(&["validate-topology", "--mode", mode, "--m", "5", "--rounds", "60", "--dump", &dump]);
        assert!(o.status.success(), "{mode}: {}", stdout(&o));
        let c = dpol(&["validate-topology", "--check", &dump]);
        assert!(c.status.success(), "{mode}: {}", stdout(&c));
    }
    let infeasible = dpol(&["validate-topology", "--mode", "fixed-complete", "--m", "8", "--eta", "0.3"]);
    assert_eq!(infeasible.status.code(), Some(2));
}
