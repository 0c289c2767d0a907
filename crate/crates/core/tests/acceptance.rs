//! Acceptance run: one pass/fail line per criterion, nonzero exit if any fails.

mod common;

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{neck, solve, solve_with, spread, vortices, wormhole, Run};
use cylvortex::config::VerifyConfig;
use cylvortex::fields::{fit_decay, DecayOptions, DecayQuantity, UnitsLedger};
use cylvortex::geometry::{make_metric, CylinderMetric, End, MetricParams, Preset, Table};
use cylvortex::grid::StripGrid;
use cylvortex::oracle::{self, Isometry};
use cylvortex::solver::ProblemOptions;
use cylvortex::verify::diagnose;

struct Ledger {
    lines: Vec<(usize, bool, String)>,
    /// Every solve's energy trace, for the descent criterion.
    traces: Vec<(String, bool)>,
}

impl Ledger {
    fn record(&mut self, n: usize, pass: bool, detail: String) {
        println!("criterion {n:>2}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((n, pass, detail));
    }

    fn track(&mut self, label: &str, run: &Run) {
        self.traces.push((label.to_string(), run.descends()));
    }
}

fn rel(x: f64, target: f64) -> f64 {
    (x - target).abs() / target
}

fn vacuum(ledger: &mut Ledger) {
    let table = Table::from_fn(-8.0, 16.0 / 320.0, 321, 16, |t, th| t.cosh().powi(2) * (1.0 + 0.05 * th.sin() / t.cosh()));
    let presets: [(&str, Preset); 3] = [
        ("neck", Preset::Neck),
        ("wormhole", Preset::Wormhole { mass: 1.0 }),
        ("tabulated", Preset::Tabulated(table)),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, preset) in presets {
        let start = Instant::now();
        let metric = make_metric(preset, MetricParams::default()).unwrap();
        let run = solve(&metric, 8.0, 512, 128, &[]);
        let (flux, energy) = run.flux_energy();
        let secs = start.elapsed().as_secs_f64();
        let s = &run.solution;
        let good = s.converged()
            && s.u.max_abs() == 0.0
            && s.residual_inf < 1e-12
            && s.iterations <= 1
            && flux == 0.0
            && energy == 0.0
            && secs < 1.0;
        ok &= good;
        detail.push(format!(
            "{name}: max|u| {:e}, residual {:e}, {} steps, flux {flux:e}, energy {energy:e}, {secs:.3} s",
            s.u.max_abs(),
            s.residual_inf,
            s.iterations
        ));
    }
    ledger.record(1, ok, detail.join("; "));
}

fn mms(ledger: &mut Ledger) {
    let start = Instant::now();
    let metric = neck();
    let grids: Vec<StripGrid> = [(128, 64), (256, 128), (512, 256)]
        .iter()
        .map(|&(a, b)| StripGrid::new(10.0, a, b).unwrap())
        .collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for name in ["gauss-cos", "cos-mode", "vortex-gauss"] {
        let case = oracle::named_case(name).unwrap();
        let study = oracle::convergence_study(
            &case,
            &metric,
            &grids,
            ProblemOptions::default(),
            &Default::default(),
        )
        .unwrap();
        let finest = study.rows.last().unwrap().max_error;
        let orders: Vec<f64> = study.rows.iter().filter_map(|r| r.order).collect();
        let good = study.passes([1.8, 2.2]) && finest < 1e-5;
        ok &= good;
        detail.push(format!(
            "{name}: orders {}, finest error {finest:.2e}",
            orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>().join("/")
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 300.0;
    detail.push(format!("{secs:.1} s"));
    ledger.record(2, ok, detail.join("; "));
}

/// Criteria 3, 4 and 5 share the same runs.
fn quantization(ledger: &mut Ledger) {
    let presets: [(&str, CylinderMetric); 2] = [("neck", neck()), ("wormhole(m=1)", wormhole(1.0))];
    let mut flux_ok = true;
    let mut energy_ok = true;
    let mut sign_ok = true;
    let mut flux_detail = Vec::new();
    let mut energy_detail = Vec::new();
    let mut sign_detail = Vec::new();
    let tol = VerifyConfig::default();
    for (name, metric) in &presets {
        let mut pair_flux = f64::NAN;
        for n in 1..=3u32 {
            let quantum = 2.0 * PI * n as f64;
            let coarse = solve(metric, 12.0, 256, 64, &spread(n));
            let fine = solve(metric, 12.0, 512, 128, &spread(n));
            ledger.track(&format!("{name} N={n} 256x64"), &coarse);
            ledger.track(&format!("{name} N={n} 512x128"), &fine);
            let (f_c, e_c) = coarse.flux_energy();
            let (flux, energy) = fine.flux_energy();
            if n == 2 {
                pair_flux = flux;
            }
            let fe = rel(flux.abs(), quantum);
            flux_ok &= fine.solution.converged() && fe < 0.01;
            flux_detail.push(format!("{name} N={n}: {fe:.1e}"));
            let ee = rel(energy, quantum);
            let gap_c = (e_c - f_c.abs()).abs();
            let gap_f = (energy - flux.abs()).abs();
            let shrink = gap_c / gap_f;
            energy_ok &= ee < 0.02 && shrink >= 3.0;
            energy_detail.push(format!("{name} N={n}: {ee:.1e}, gap {gap_c:.1e}→{gap_f:.1e} ({shrink:.1}×)"));
            let (_, diag) = diagnose(
                &fine.problem,
                &fine.solution,
                &UnitsLedger::default(),
                &DecayOptions::default(),
                &tol,
            )
            .unwrap();
            let neg = diag.checks.iter().find(|c| c.name == "negativity").unwrap();
            let env = diag.checks.iter().find(|c| c.name == "envelope").unwrap();
            sign_ok &= neg.pass && env.pass;
            sign_detail.push(format!(
                "{name} N={n}: {} resolvable w ≥ 0 (max w {:.1e}), envelope {}",
                diag.negativity.resolvable_violations,
                diag.negativity.max_w,
                if env.pass { "holds" } else { "broken" }
            ));
        }
        // Position independence for N = 2.
        let b = solve(metric, 12.0, 512, 128, &[(-1.6, 0.4, 1), (1.3, 4.4, 1)]);
        ledger.track(&format!("{name} N=2 second placement"), &b);
        let (fb, _) = b.flux_energy();
        let d = ((pair_flux - fb) / fb).abs();
        flux_ok &= d < 0.005;
        flux_detail.push(format!("{name} N=2 placements differ by {d:.1e}"));
    }
    ledger.record(3, flux_ok, format!("| |flux| − 2πN | / 2πN: {}", flux_detail.join("; ")));
    ledger.record(4, energy_ok, format!("| E − 2πN | / 2πN: {}", energy_detail.join("; ")));
    ledger.record(5, sign_ok, sign_detail.join("; "));
}

fn decay(ledger: &mut Ledger) {
    let start = Instant::now();
    let run = solve(&neck(), 14.0, 768, 128, &[(0.4, 1.3, 1)]);
    ledger.track("neck decay T=14", &run);
    let fields = run.fields();
    let mut ok = run.solution.converged();
    let mut detail = Vec::new();
    for end in End::BOTH {
        for q in [DecayQuantity::W, DecayQuantity::GradW] {
            match fit_decay(&run.problem, &fields, &run.solution.w, end, q, None, &DecayOptions::default()) {
                Ok(r) => {
                    ok &= (0.8..=1.1).contains(&r.b_fit) && r.r_squared > 0.99 && r.b_fit > 0.5;
                    detail.push(format!("{} {:?}: b {:.3}, r² {:.5}", end.name(), q, r.b_fit, r.r_squared));
                }
                Err(e) => {
                    ok = false;
                    detail.push(format!("{} {:?}: {e}", end.name(), q));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 600.0;
    detail.push(format!("{secs:.1} s"));
    ledger.record(6, ok, detail.join("; "));
}

fn splitting(ledger: &mut Ledger) {
    let metric = neck();
    let set = vortices(&[(0.4, 1.3, 1), (-0.9, 4.0, 2)]);
    let a = solve_with(&metric, 12.0, 512, 128, &set, ProblemOptions::default());
    let b = solve_with(
        &metric,
        12.0,
        512,
        128,
        &set,
        ProblemOptions {
            annulus_scale: 0.8,
            ..Default::default()
        },
    );
    ledger.track("split ε₁", &a);
    ledger.track("split 0.8 ε₁", &b);
    let dw = a.solution.w.max_abs_diff(&b.solution.w);
    let dubar = a.problem.ubar.max_abs_diff(&b.problem.ubar);
    ledger.record(
        7,
        dw < 1e-6 && dubar > 0.1,
        format!("max |Δw| {dw:.2e}, max |Δū| {dubar:.3}"),
    );
}

fn symmetry(ledger: &mut Ledger) {
    let metric = neck();
    let grid = StripGrid::new(12.0, 512, 128).unwrap();
    let base = solve(&metric, 12.0, 512, 128, &[(0.4, 1.3, 1), (-1.1, 3.5, 1)]);
    ledger.track("symmetry base", &base);
    let mut ok = true;
    let mut detail = Vec::new();
    for iso in [Isometry::ThetaShift(PI), Isometry::ThetaShift(PI / 2.0), Isometry::TReflection] {
        let image = iso.map_vortices(&base.problem.vortices, &metric).unwrap();
        let other = solve_with(&metric, 12.0, 512, 128, &image, ProblemOptions::default());
        ledger.track(&format!("symmetry {iso:?}"), &other);
        let dev = oracle::symmetry_check(&grid, &metric, &base.solution.w, &other.solution.w, iso).unwrap();
        ok &= dev < 1e-8;
        detail.push(format!("{iso:?}: {dev:.1e}"));
    }
    ledger.record(8, ok, detail.join("; "));
}

fn descent(ledger: &mut Ledger) {
    let bad: Vec<&str> = ledger.traces.iter().filter(|(_, ok)| !ok).map(|(l, _)| l.as_str()).collect();
    let n = ledger.traces.len();
    ledger.record(
        9,
        bad.is_empty(),
        format!("{n} solves, energy nonincreasing on accepted steps in {}{}", n - bad.len(), if bad.is_empty() { String::new() } else { format!("; rises in {}", bad.join(", ")) }),
    );
}

fn determinism(ledger: &mut Ledger) {
    let exe = env!("CARGO_BIN_EXE_cylvortex");
    let root = tempfile::tempdir().unwrap();
    let config = "[metric]\npreset = \"wormhole\"\nmass = 1.0\n\n[grid]\nT = 10.0\nn_t = 384\nn_theta = 96\n\n\
                  [[vortices]]\nt = 0.4\ntheta = 1.3\n\n[[vortices]]\nt = -1.2\ntheta = 4.0\nmultiplicity = 2\n";
    let files = ["summary.json", "convergence.log", "grid.json", "w.csv", "u.csv", "ubar.csv"];
    let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
    let mut ok = true;
    for workers in [1, 4, 8] {
        let dir = root.path().join(format!("w{workers}"));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.toml");
        std::fs::write(&path, config).unwrap();
        let status = Command::new(exe)
            .arg("solve")
            .arg(&path)
            .env(cylvortex::cli::WORKERS_ENV, workers.to_string())
            .output()
            .unwrap();
        ok &= status.status.code() == Some(0);
        outputs.push(files.iter().map(|f| read(&dir.join("out").join(f))).collect());
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    ledger.record(
        10,
        ok && same,
        format!("workers 1/4/8: {} files {}", files.len(), if same { "byte-identical" } else { "differ" }),
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_default()
}

fn main() {
    let start = Instant::now();
    let mut ledger = Ledger {
        lines: Vec::new(),
        traces: Vec::new(),
    };
    vacuum(&mut ledger);
    mms(&mut ledger);
    quantization(&mut ledger);
    decay(&mut ledger);
    splitting(&mut ledger);
    symmetry(&mut ledger);
    descent(&mut ledger);
    determinism(&mut ledger);
    ledger.lines.sort_by_key(|l| l.0);
    let failed: Vec<usize> = ledger.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    println!(
        "acceptance: {}/{} criteria pass in {:.0} s",
        ledger.lines.len() - failed.len(),
        ledger.lines.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
