//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary under `cargo test`. A failing criterion is reported,
//! not raised; the process fails only when the harness breaks or the IEEE-39
//! numbers drift from the golden file. `OSCILLOPF_ACCEPTANCE=quick` skips the
//! IEEE-39 solves and `OSCILLOPF_BLESS=1` rewrites the golden file.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use oscillopf::experiments::{par_map, pareto_rows, resolve_jobs, summarize_front};
use oscillopf_core::ambient::{simulate_eigensystem, simulate_swing, SimConfig};
use oscillopf_core::dynamics::{eigenstate_variance, spectrum, stability_metric, BandMode};
use oscillopf_core::network::{build_ybus, kron_reduce, quadratic_forms};
use oscillopf_core::pipeline::{lemma1_value, mass_scaled, solve_point, PointOptions, Study, TradeoffPoint};
use oscillopf_core::solver::SolverSettings;
use oscillopf_core::synthetic::{random_case, random_dynamics, random_voltages, random_weighted_graph};
use oscillopf_core::{CVector, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const K: usize = 3;
/// Relative band for reproducing published magnitudes with the shipped data.
const PAPER_BAND: f64 = 0.20;
const GOLDEN_REL: f64 = 1e-4;
const GOLDEN_MC_REL: f64 = 1e-3;

const EXACT_LOADS: [f64; 3] = [0.5, 0.8, 1.0];
const EXACT_MUS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const SWEEP_LOADS: [f64; 7] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1];
/// Denser towards µ = 1, where the front bends (cost dominates f_y in size).
const FRONT_MUS: [f64; 11] = [0.0, 0.25, 0.5, 0.75, 0.9, 0.95, 0.98, 0.99, 0.995, 0.999, 1.0];

struct Verdict {
    id: u32,
    title: &'static str,
    /// `None` when skipped.
    passed: Option<bool>,
    detail: String,
    seconds: f64,
}

impl Verdict {
    fn print(&self) {
        let tag = match self.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!(
            "criterion {} {tag} {}: {} [{:.1} s]",
            self.id, self.title, self.detail, self.seconds
        );
    }
}

fn within(value: f64, target: f64, band: f64) -> bool {
    ((value - target) / target).abs() <= band
}

fn lemma1_equivalence() -> Verdict {
    let start = Instant::now();
    let settings = SolverSettings::default();
    let (mut worst, mut failures, mut solves) = (0.0f64, Vec::new(), 0);
    for g in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(g);
        let n = rng.random_range(5..=15);
        let (l, m) = random_weighted_graph(&mut rng, n);
        let gamma = rng.random_range(0.05..1.0);
        let mut ev: Vec<f64> = SymmetricEigen::new(mass_scaled(&l, &m)).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for k in 1..=3 {
            let exact = ev[1..=k].iter().map(|x| 1.0 / x).sum::<f64>() / (2.0 * gamma);
            solves += 1;
            match lemma1_value(&l, &m, k, gamma, &settings) {
                Ok(v) => worst = worst.max((v - exact).abs() / exact),
                Err(e) => failures.push(format!("graph {g} K={k}: {e}")),
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    Verdict {
        id: 1,
        title: "Lemma-1 equivalence",
        passed: Some(failures.is_empty() && worst <= 1e-6 && seconds < 120.0),
        detail: format!(
            "{solves} solves on 50 graphs, max relative error {worst:.2e} (limit 1e-6){}",
            if failures.is_empty() { String::new() } else { format!(", failures: {}", failures.join("; ")) }
        ),
        seconds,
    }
}

fn variance_oracle() -> Verdict {
    let start = Instant::now();
    let pairs = [
        (1.0, 1.0),
        (4.0, 0.1467),
        (9.0, 0.5),
        (0.5, 0.8),
        (25.0, 1.0),
        (1.0, 2.0),
        (2.0, 3.0),
        (1.0, 5.0),
        (4.0, 8.0),
        (1.0, 10.0),
    ];
    let cfg = SimConfig::default();
    let (mut max_z, mut max_rel, mut ok) = (0.0f64, 0.0f64, true);
    for (lambda, gamma) in pairs {
        let target = eigenstate_variance(lambda, gamma).unwrap();
        match simulate_eigensystem(lambda, gamma, &cfg) {
            Ok(est) => {
                let z = est.z_score(target).abs();
                let rel = (est.mean - target).abs() / target;
                max_z = max_z.max(z);
                max_rel = max_rel.max(rel);
                ok &= z <= 3.0 && rel <= 0.05;
            }
            Err(_) => ok = false,
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    Verdict {
        id: 2,
        title: "variance oracle",
        passed: Some(ok && seconds < 600.0),
        detail: format!(
            "10 (λ, γ) pairs, max |z| {max_z:.2} (limit 3), max relative error {:.2}% (limit 5%)",
            100.0 * max_rel
        ),
        seconds,
    }
}

fn quadratic_form_fidelity() -> Verdict {
    let start = Instant::now();
    let (mut worst_pf, mut worst_kron) = (0.0f64, 0.0f64);
    let rel = |a: C64, b: C64| (a - b).norm() / b.norm().max(1.0);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(5..30);
        let case = random_case(&mut rng, n);
        let dynamics = random_dynamics(&mut rng, &case, 0.5);
        let y = build_ybus(&case).unwrap();
        let forms = quadratic_forms(&y, &case).unwrap();
        let v = random_voltages(&mut rng, n);
        let outer = &v * v.adjoint();
        let direct = y.injections(&v);
        for k in 0..n {
            let lifted = C64::new((&forms.m_p[k] * &outer).trace().re, (&forms.m_q[k] * &outer).trace().re);
            worst_pf = worst_pf.max(rel(lifted, direct[k]));
        }

        let kron = kron_reduce(&y, &dynamics, &case.synchronous_buses()).unwrap();
        let e = random_voltages(&mut rng, kron.size());
        let ys = kron.ys_diag();
        let mut aug = y.y.clone();
        let mut rhs = CVector::zeros(n);
        for (k, &row) in kron.sync_index.iter().enumerate() {
            aug[(row, row)] += ys[k];
            rhs[row] = ys[k] * e[k];
        }
        let full = aug.lu().solve(&rhs).unwrap();
        let reduced = kron.external_from_internal(&e);
        for (k, &row) in kron.sync_index.iter().enumerate() {
            worst_kron = worst_kron.max(rel(reduced[k], full[row]));
        }
    }
    Verdict {
        id: 3,
        title: "quadratic-form fidelity",
        passed: Some(worst_pf <= 1e-9 && worst_kron <= 1e-9),
        detail: format!(
            "20 random networks, trace vs direct injections {worst_pf:.2e}, Kron vs augmented solve {worst_kron:.2e} (limit 1e-9)"
        ),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn key(load: f64, mu: f64) -> (i64, i64) {
    ((load * 1e3).round() as i64, (mu * 1e6).round() as i64)
}

struct Solved {
    load: f64,
    mu: f64,
    point: Result<TradeoffPoint, String>,
    seconds: f64,
}

impl Solved {
    fn optimal(&self) -> Option<&TradeoffPoint> {
        self.point.as_ref().ok().filter(|p| p.is_optimal())
    }

    fn f_y(&self) -> Option<f64> {
        self.optimal().and_then(|p| p.f_y())
    }

    /// `f_y` of a point that stopped short of the tolerance.
    fn f_y_inexact(&self) -> Option<f64> {
        self.point.as_ref().ok().filter(|p| !p.is_optimal() && p.status.is_usable())?.f_y()
    }

    fn label(&self) -> String {
        format!("load {} µ {}", self.load, self.mu)
    }
}

struct Bench {
    studies: BTreeMap<i64, Study>,
    solved: BTreeMap<(i64, i64), Solved>,
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

impl Bench {
    fn run(tasks: &[(f64, f64)]) -> Self {
        let mut studies = BTreeMap::new();
        for &(load, _) in tasks {
            studies
                .entry(key(load, 0.0).0)
                .or_insert_with(|| Study::from_files(&data("case39.m"), &data("case39.dyn"), load).expect("IEEE-39 loads"));
        }
        let opts = PointOptions::default();
        let results = par_map(tasks, resolve_jobs(None), |&(load, mu)| {
            let study = &studies[&key(load, 0.0).0];
            let start = Instant::now();
            let point = solve_point(study, study.tradeoff(mu, K), &opts).map_err(|e| e.to_string());
            let seconds = start.elapsed().as_secs_f64();
            match &point {
                Ok(p) => eprintln!(
                    "  solved load {load} µ {mu}: {} ratio {:.2e} f_y {:?} ({seconds:.1} s)",
                    p.status,
                    p.rank_ratio().unwrap_or(f64::NAN),
                    p.f_y()
                ),
                Err(e) => eprintln!("  load {load} µ {mu}: {e}"),
            }
            Solved { load, mu, point, seconds }
        });
        let solved = results.into_iter().map(|s| (key(s.load, s.mu), s)).collect();
        Self { studies, solved }
    }

    fn get(&self, load: f64, mu: f64) -> &Solved {
        &self.solved[&key(load, mu)]
    }

    fn study(&self, load: f64) -> &Study {
        &self.studies[&key(load, 0.0).0]
    }
}

fn exactness(bench: &Bench, start: Instant) -> Verdict {
    let mut bad = Vec::new();
    let (mut worst, mut slowest) = (0.0f64, 0.0f64);
    for load in EXACT_LOADS {
        for mu in EXACT_MUS {
            let s = bench.get(load, mu);
            slowest = slowest.max(s.seconds);
            match s.optimal().and_then(|p| p.rank_ratio()) {
                Some(r) => {
                    worst = worst.max(r);
                    if r >= 1e-3 || s.seconds >= 60.0 {
                        bad.push(format!("{} ratio {r:.2e}", s.label()));
                    }
                }
                None => bad.push(format!("{} unsolved", s.label())),
            }
        }
    }
    Verdict {
        id: 4,
        title: "IEEE-39 exactness",
        passed: Some(bad.is_empty()),
        detail: format!(
            "{} of 15 instances with rank-1 ratio < 1e-3 in < 60 s, worst ratio {worst:.2e}, slowest solve {slowest:.1} s{}",
            15 - bad.len(),
            if bad.is_empty() { String::new() } else { format!("; failing: {}", bad.join(", ")) }
        ),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn improvement(bench: &Bench, load: f64) -> Option<f64> {
    let (f0, f1) = (bench.get(load, 0.0).f_y()?, bench.get(load, 1.0).f_y()?);
    Some(100.0 * (f0 - f1) / f0)
}

fn stability_dominance(bench: &Bench, start: Instant) -> Verdict {
    let mut notes = Vec::new();
    let mut dominated = true;
    let mut best: f64 = f64::NEG_INFINITY;
    for load in SWEEP_LOADS {
        match (bench.get(load, 0.0).f_y(), bench.get(load, 1.0).f_y()) {
            (Some(f0), Some(f1)) => {
                dominated &= f1 <= f0 * (1.0 + 1e-6);
                let imp = 100.0 * (f0 - f1) / f0;
                best = best.max(imp);
                notes.push(format!("{load}: {imp:.2}%"));
            }
            _ => {
                dominated = false;
                let (s0, s1) = (bench.get(load, 0.0), bench.get(load, 1.0));
                let f0 = s0.f_y().or(s0.f_y_inexact());
                let f1 = s1.f_y().or(s1.f_y_inexact());
                match (f0, f1) {
                    (Some(f0), Some(f1)) => {
                        notes.push(format!("{load}: unsolved, {:.2}% at reduced accuracy", 100.0 * (f0 - f1) / f0))
                    }
                    _ => notes.push(format!("{load}: unsolved")),
                }
            }
        }
    }
    let ordered = matches!((improvement(bench, 0.5), improvement(bench, 1.1)), (Some(a), Some(b)) if a > b);
    let f0 = bench.get(0.5, 0.0).f_y().unwrap_or(f64::NAN);
    let f1 = bench.get(0.5, 1.0).f_y().unwrap_or(f64::NAN);
    let magnitudes = within(f0, 0.3530, PAPER_BAND) && within(f1, 0.3173, PAPER_BAND) && within(best, 11.18, PAPER_BAND);
    Verdict {
        id: 5,
        title: "stability dominance",
        passed: Some(dominated && ordered && magnitudes),
        detail: format!(
            "f_y(µ=1) ≤ f_y(µ=0) at all loads: {dominated}; improvement 0.5 > 1.1: {ordered}; improvements by load [{}]; \
             50% load f_y {f0:.4} -> {f1:.4} (published 0.3530 -> 0.3173), best improvement {best:.2}% (published 11.18%), \
             within ±20%: {magnitudes}",
            notes.join(", ")
        ),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn pareto_front(bench: &Bench, start: Instant) -> Verdict {
    let points: Vec<Result<TradeoffPoint, String>> = FRONT_MUS
        .iter()
        .map(|&mu| bench.get(0.5, mu).point.clone())
        .collect();
    let rows = pareto_rows(&FRONT_MUS, &points);
    let Some(s) = summarize_front(&rows) else {
        return Verdict {
            id: 6,
            title: "Pareto front",
            passed: Some(false),
            detail: "no solved points".into(),
            seconds: start.elapsed().as_secs_f64(),
        };
    };
    let knee = s.knee_share >= 0.5;
    let magnitudes = within(s.f_y_improvement_pct, 10.14, PAPER_BAND) && within(s.cost_increase_pct, 4.78, PAPER_BAND);
    Verdict {
        id: 6,
        title: "Pareto front",
        passed: Some(s.monotone && knee && magnitudes),
        detail: format!(
            "{} µ values at 50% load, monotone: {}; knee share {:.2} of the f_y gain within a quarter of the cost increase (needs ≥ 0.5); \
             f_y improvement {:.2}% (published 10.14%), cost increase {:.2}% (published 4.78%), within ±20%: {magnitudes}",
            FRONT_MUS.len(),
            s.monotone,
            s.knee_share,
            s.f_y_improvement_pct,
            s.cost_increase_pct
        ),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn base_laplacian(bench: &Bench) -> Option<(&Study, DMatrix<f64>)> {
    let p = bench.get(0.5, 0.0).optimal()?;
    Some((bench.study(0.5), p.laplacian.clone()?))
}

fn spectrum_sanity(bench: &Bench, start: Instant) -> (Verdict, Option<f64>) {
    let ratio = base_laplacian(bench).and_then(|(study, l)| {
        let spec = spectrum(&l, &study.inertia).ok()?;
        Some(spec.eigvals[1] / study.dynamics.gamma.powi(2))
    });
    let v = Verdict {
        id: 7,
        title: "spectrum sanity",
        passed: Some(ratio.is_some_and(|r| (100.0..=5000.0).contains(&r))),
        detail: format!(
            "λ₂/γ² = {} at the µ = 0, 50% load solution (range [100, 5000], published ≃ 829)",
            ratio.map_or("n/a".into(), |r| format!("{r:.1}"))
        ),
        seconds: start.elapsed().as_secs_f64(),
    };
    (v, ratio)
}

fn metric_end_to_end(bench: &Bench) -> (Verdict, Option<(f64, f64)>) {
    let start = Instant::now();
    let result = base_laplacian(bench).and_then(|(study, l)| {
        let spec = spectrum(&l, &study.inertia).ok()?.with_band(BandMode::Count(K)).ok()?;
        let f_y = stability_metric(&spec, study.dynamics.gamma).ok()?;
        let damping = study.dynamics.damping_vector(&study.kron.sync_buses).ok()?;
        let est = simulate_swing(&study.inertia, &damping, &l, BandMode::Count(K), &SimConfig::default()).ok()?;
        Some((est.band_energy.mean, est.band_energy.stderr, f_y))
    });
    let seconds = start.elapsed().as_secs_f64();
    match result {
        Some((mean, stderr, f_y)) => {
            let rel = (mean - f_y).abs() / f_y;
            (
                Verdict {
                    id: 8,
                    title: "metric end-to-end",
                    passed: Some(rel <= 0.05),
                    detail: format!(
                        "swing simulation E[‖y‖²] = {mean:.5} ± {stderr:.5} vs f_y {f_y:.5} at the µ = 0, 50% load solution, \
                         relative error {:.2}% (limit 5%)",
                        100.0 * rel
                    ),
                    seconds,
                },
                Some((mean, f_y)),
            )
        }
        None => (
            Verdict {
                id: 8,
                title: "metric end-to-end",
                passed: Some(false),
                detail: "no solved µ = 0 operating point".into(),
                seconds,
            },
            None,
        ),
    }
}

fn three_way(bench: &Bench, start: Instant) -> Verdict {
    let (mut n, mut worst, mut missing) = (0, 0.0f64, 0);
    for s in bench.solved.values() {
        let Some(p) = s.optimal().filter(|p| p.is_exact()) else { continue };
        n += 1;
        match p.report.as_ref().and_then(|r| r.f_y_spread()) {
            Some(spread) => worst = worst.max(spread),
            None => missing += 1,
        }
    }
    Verdict {
        id: 9,
        title: "three-way f_y consistency",
        passed: Some(n > 0 && missing == 0 && worst <= 1e-3),
        detail: format!(
            "{n} exact IEEE-39 solves, max pairwise relative spread {worst:.2e} (limit 1e-3){}",
            if missing > 0 { format!(", {missing} with a path missing") } else { String::new() }
        ),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn golden_values(bench: &Bench, lambda_ratio: Option<f64>, mc: Option<(f64, f64)>) -> Value {
    let points: Vec<Value> = bench
        .solved
        .values()
        .map(|s| {
            let p = s.point.as_ref().ok();
            json!({
                "load": s.load,
                "mu": s.mu,
                "status": p.map(|p| p.status.to_string()),
                "exact": p.map(|p| p.is_exact()),
                "cost": s.optimal().map(|p| p.cost),
                "f_y": s.f_y(),
                "rank_ratio_V": s.optimal().and_then(|p| p.rank_ratio()),
            })
        })
        .collect();
    json!({
        "k": K,
        "points": points,
        "lambda2_over_gamma2": lambda_ratio,
        "band_energy_mc": mc.map(|m| m.0),
        "band_energy_f_y": mc.map(|m| m.1),
    })
}

/// Differences between `now` and `golden` beyond the tolerances.
fn golden_diff(now: &Value, golden: &Value) -> Vec<String> {
    let mut diffs = Vec::new();
    let close = |a: &Value, b: &Value, rel: f64| match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => (x - y).abs() <= rel * y.abs().max(1e-12),
        _ => a == b,
    };
    let empty = Vec::new();
    let old = golden["points"].as_array().unwrap_or(&empty);
    for p in now["points"].as_array().unwrap_or(&empty) {
        let label = format!("load {} µ {}", p["load"], p["mu"]);
        let Some(g) = old.iter().find(|g| g["load"] == p["load"] && g["mu"] == p["mu"]) else {
            diffs.push(format!("{label} not in golden file"));
            continue;
        };
        for field in ["status", "exact"] {
            if p[field] != g[field] {
                diffs.push(format!("{label} {field} {} vs {}", p[field], g[field]));
            }
        }
        for field in ["cost", "f_y"] {
            if !close(&p[field], &g[field], GOLDEN_REL) {
                diffs.push(format!("{label} {field} {} vs {}", p[field], g[field]));
            }
        }
    }
    if !close(&now["lambda2_over_gamma2"], &golden["lambda2_over_gamma2"], GOLDEN_REL) {
        diffs.push("λ₂/γ²".into());
    }
    for field in ["band_energy_mc", "band_energy_f_y"] {
        if !close(&now[field], &golden[field], GOLDEN_MC_REL) {
            diffs.push(format!("{field} {} vs {}", now[field], golden[field]));
        }
    }
    diffs
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let quick = std::env::var("OSCILLOPF_ACCEPTANCE").is_ok_and(|v| v == "quick");
    let mut verdicts = vec![lemma1_equivalence()];
    verdicts[0].print();
    for f in [variance_oracle, quadratic_form_fidelity] {
        let v = f();
        v.print();
        verdicts.push(v);
    }

    let mut golden_ok = true;
    if quick {
        for (id, title) in [
            (4, "IEEE-39 exactness"),
            (5, "stability dominance"),
            (6, "Pareto front"),
            (7, "spectrum sanity"),
            (8, "metric end-to-end"),
            (9, "three-way f_y consistency"),
        ] {
            let v = Verdict { id, title, passed: None, detail: "skipped in quick mode".into(), seconds: 0.0 };
            v.print();
            verdicts.push(v);
        }
    } else {
        let start = Instant::now();
        let mut tasks: Vec<(f64, f64)> = Vec::new();
        let mut add = |load: f64, mu: f64| {
            if !tasks.iter().any(|&(l, m)| key(l, m) == key(load, mu)) {
                tasks.push((load, mu));
            }
        };
        for load in EXACT_LOADS {
            for mu in EXACT_MUS {
                add(load, mu);
            }
        }
        for load in SWEEP_LOADS {
            add(load, 0.0);
            add(load, 1.0);
        }
        for mu in FRONT_MUS {
            add(0.5, mu);
        }
        eprintln!("solving {} IEEE-39 instances", tasks.len());
        let bench = Bench::run(&tasks);
        let (v7, lambda_ratio) = spectrum_sanity(&bench, start);
        let (v8, mc) = metric_end_to_end(&bench);
        for v in [
            exactness(&bench, start),
            stability_dominance(&bench, start),
            pareto_front(&bench, start),
            v7,
            v8,
            three_way(&bench, start),
        ] {
            v.print();
            verdicts.push(v);
        }

        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/acceptance_ieee39.json");
        let now = golden_values(&bench, lambda_ratio, mc);
        let bless = std::env::var_os("OSCILLOPF_BLESS").is_some();
        match std::fs::read_to_string(&path) {
            Ok(text) if !bless => {
                let golden: Value = serde_json::from_str(&text).expect("golden file parses");
                let diffs = golden_diff(&now, &golden);
                if diffs.is_empty() {
                    println!("golden PASS IEEE-39 values match {}", path.display());
                } else {
                    golden_ok = false;
                    println!("golden FAIL {} differences: {}", diffs.len(), diffs.join("; "));
                }
            }
            _ => {
                std::fs::create_dir_all(path.parent().unwrap()).unwrap();
                std::fs::write(&path, serde_json::to_string_pretty(&now).unwrap() + "\n").unwrap();
                println!("golden WROTE {}", path.display());
            }
        }
    }

    let passed = verdicts.iter().filter(|v| v.passed == Some(true)).count();
    let ran = verdicts.iter().filter(|v| v.passed.is_some()).count();
    println!("acceptance: {passed} of {ran} criteria pass");
    if golden_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
