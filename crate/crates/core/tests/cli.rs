use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_cylvortex")
}

struct Case {
    _dir: tempfile::TempDir,
    config: PathBuf,
}

impl Case {
    fn new(text: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("run.toml");
        fs::write(&config, text).unwrap();
        Self { _dir: dir, config }
    }

    fn run(&self, command: &str) -> Output {
        Command::new(exe()).arg(command).arg(&self.config).output().unwrap()
    }

    fn out(&self, file: &str) -> PathBuf {
        self.config.parent().unwrap().join("out").join(file)
    }

    fn json(&self, file: &str) -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(self.out(file)).unwrap()).unwrap()
    }
}

fn config(metric: &str, half: f64, n_t: usize, n_theta: usize, vortices: &[(f64, f64)]) -> String {
    let mut s = format!("[metric]\n{metric}\n\n[grid]\nT = {half:?}\nn_t = {n_t}\nn_theta = {n_theta}\n");
    for (t, theta) in vortices {
        s.push_str(&format!("\n[[vortices]]\nt = {t:?}\ntheta = {theta:?}\n"));
    }
    s
}

const NECK: &str = "preset = \"neck\"";

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn zero_vortex_solve_reports_zero_flux_and_energy() {
    let case = Case::new(&config("preset = \"wormhole\"\nmass = 1.0", 8.0, 129, 32, &[]));
    let o = case.run("solve");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = case.json("summary.json");
    assert_eq!(s["flux"], 0.0);
    assert_eq!(s["energy"], 0.0);
    assert_eq!(s["status"], "converged");
    for f in ["w.csv", "u.csv", "ubar.csv", "grid.json", "convergence.log"] {
        assert!(case.out(f).exists(), "{f}");
    }
    assert!(!case.out("failed").exists());
}

#[test]
fn single_vortex_solve_records_quantized_flux() {
    let case = Case::new(&config(NECK, 8.0, 257, 64, &[(0.3, 2.0)]));
    let o = case.run("solve");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = case.json("summary.json");
    let flux = s["flux"].as_f64().unwrap();
    let quantum = 2.0 * std::f64::consts::PI;
    assert!((flux.abs() - quantum).abs() / quantum < 0.01, "{flux}");
    // Defaults are written out in full.
    assert_eq!(s["config"]["solver"]["max_newton"], 60);
    assert_eq!(s["config"]["problem"]["annulus_scale"], 1.0);
    assert_eq!(s["config"]["vortices"][0]["multiplicity"], 1);
    let log = fs::read_to_string(case.out("convergence.log")).unwrap();
    assert!(log.lines().next().unwrap().starts_with("step   1 newton"));
    let w = fs::read_to_string(case.out("w.csv")).unwrap();
    assert_eq!(w.lines().next(), Some("t,theta,value"));
    assert_eq!(w.lines().count(), 1 + 257 * 64);
}

#[test]
fn vortex_near_the_boundary_is_a_usage_error() {
    let case = Case::new(&config(NECK, 6.0, 97, 32, &[(5.99, 1.0)]));
    let o = case.run("solve");
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("t = ±6"), "{err}");
    assert!(!case.out("summary.json").exists());
}

#[test]
fn malformed_configs_are_usage_errors() {
    let case = Case::new(&format!("{}\ncolour = 3\n", config(NECK, 6.0, 97, 32, &[])));
    assert_eq!(case.run("solve").status.code(), Some(2));
    let missing = Case::new("[metric]\npreset = \"neck\"\n");
    assert_eq!(missing.run("verify").status.code(), Some(2));
    let o = Command::new(exe()).arg("solve").arg("/nonexistent/run.toml").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(exe()).arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_worker_override_is_a_usage_error() {
    let case = Case::new(&config(NECK, 6.0, 97, 32, &[]));
    let o = Command::new(exe())
        .arg("solve")
        .arg(&case.config)
        .env(cylvortex::cli::WORKERS_ENV, "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn nonconvergence_leaves_partial_artifacts_and_a_marker() {
    let text = format!("{}\n[solver]\nmax_newton = 1\n", config(NECK, 8.0, 129, 32, &[(0.3, 2.0)]));
    let case = Case::new(&text);
    let o = case.run("solve");
    assert_eq!(o.status.code(), Some(1));
    assert!(case.out("failed").exists());
    assert!(case.out("w.csv").exists());
    let s = case.json("summary.json");
    assert_eq!(s["status"], "max-newton");
    assert!(s["error"].is_string());
    // A later successful run clears the marker.
    fs::write(&case.config, config(NECK, 8.0, 129, 32, &[(0.3, 2.0)])).unwrap();
    assert_eq!(case.run("solve").status.code(), Some(0));
    assert!(!case.out("failed").exists());
}

#[test]
fn verify_passes_for_vacuum() {
    let case = Case::new(&config(NECK, 6.0, 97, 32, &[]));
    let o = case.run("verify");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = case.json("report.json");
    assert_eq!(r["pass"], true);
    assert!(r["invariants"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn verify_passes_for_a_single_vortex() {
    let case = Case::new(&config(NECK, 10.0, 321, 64, &[(0.4, 1.3)]));
    let o = case.run("verify");
    assert_eq!(o.status.code(), Some(0), "{}\n{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    let r = case.json("report.json");
    let names: Vec<&str> = r["invariants"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    for n in [
        "converged",
        "energy_descent",
        "flux",
        "energy",
        "sign_ledger",
        "negativity",
        "decay",
        "envelope",
        "symmetry_theta_shift",
        "symmetry_t_reflection",
    ] {
        assert!(names.contains(&n), "{n} missing from {names:?}");
    }
}

#[test]
fn verify_flags_a_truncated_domain() {
    let case = Case::new(&config(NECK, 4.0, 161, 48, &[(0.3, 2.0)]));
    let o = case.run("verify");
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("decay"), "{err}");
    let r = case.json("report.json");
    let decay = r["invariants"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "decay")
        .unwrap()
        .clone();
    assert_eq!(decay["pass"], false);
    assert!(decay["detail"].as_str().unwrap().contains("lengthen"));
    assert!(case.out("failed").exists());
}

#[test]
fn decay_on_a_short_strip_fails_with_advice() {
    let case = Case::new(&config(NECK, 4.0, 161, 48, &[(0.3, 2.0)]));
    let o = case.run("decay");
    assert_eq!(o.status.code(), Some(1));
    let d = case.json("decay.json");
    assert_eq!(d["pass"], false);
    assert!(!d["problems"].as_array().unwrap().is_empty());
}

#[test]
fn decay_on_a_long_strip_passes() {
    let case = Case::new(&config(NECK, 12.0, 385, 64, &[(0.4, 1.3)]));
    let o = case.run("decay");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let d = case.json("decay.json");
    let reports = d["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 4);
    for r in reports {
        let b = r["b_fit"].as_f64().unwrap();
        assert!((0.8..=1.1).contains(&b), "{r}");
    }
}

#[test]
fn decay_on_the_asymmetric_wormhole_stays_exponential() {
    let case = Case::new(&config("preset = \"wormhole\"\nmass = 1.0", 12.0, 385, 64, &[(0.4, 1.3)]));
    let o = case.run("decay");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let d = case.json("decay.json");
    for r in d["reports"].as_array().unwrap() {
        assert!(r["b_fit"].as_f64().unwrap() > 0.5, "{r}");
        assert!(r["r_squared"].as_f64().unwrap() > 0.99, "{r}");
    }
}

fn mms_config(case: &str, grids: &str) -> String {
    format!("{}\n[mms]\ncase = \"{case}\"\ngrids = {grids}\n", config(NECK, 10.0, 128, 64, &[]))
}

#[test]
fn mms_gauss_cos_converges_at_second_order() {
    let case = Case::new(&mms_config("gauss-cos", "[[64, 32], [128, 64], [256, 128]]"));
    let o = case.run("mms");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = fs::read_to_string(case.out("mms.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("n_t,n_theta,T,max_error,order"));
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn mms_zero_case_is_exact() {
    let case = Case::new(&mms_config("zero", "[[64, 32], [128, 64], [256, 128]]"));
    assert_eq!(case.run("mms").status.code(), Some(0));
    assert_eq!(case.json("mms.json")["exact"], true);
}

#[test]
fn mms_needs_three_grids() {
    let case = Case::new(&mms_config("gauss-cos", "[[128, 64]]"));
    let o = case.run("mms");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least 3"));
    let case = Case::new(&mms_config("no-such-case", "[[64, 32], [128, 64], [256, 128]]"));
    assert_eq!(case.run("mms").status.code(), Some(2));
}

#[test]
fn mms_order_outside_band_fails() {
    let text = format!(
        "{}\n[mms]\ncase = \"gauss-cos\"\ngrids = [[64, 32], [128, 64], [256, 128]]\norder_band = [3.0, 4.0]\n",
        config(NECK, 10.0, 128, 64, &[])
    );
    let case = Case::new(&text);
    assert_eq!(case.run("mms").status.code(), Some(1));
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let case = Case::new(&config(NECK, 8.0, 193, 48, &[(0.3, 2.0), (-0.8, 5.0)]));
    assert_eq!(case.run("verify").status.code(), Some(0));
    let first = snapshot(&case.out(""));
    assert_eq!(case.run("verify").status.code(), Some(0));
    assert_eq!(first, snapshot(&case.out("")));
}
