//! The experiments behind each subcommand, independent of argument parsing
//! and file layout.

use std::io::Write;

use nalgebra::DMatrix;
use oscillopf_core::ambient::{simulate_eigensystem, simulate_swing, SimConfig};
use oscillopf_core::dynamics::{
    eigenstate_variance, spectrum, stability_metric, write_freqresp_csv, BandMode,
};
use oscillopf_core::pipeline::{lemma1_value, solve_point, PointOptions, Study, TradeoffPoint};
use oscillopf_core::sdp::Formulation;
use rayon::prelude::*;
use serde::Serialize;

/// Relative slack allowed when checking monotonicity of solved values.
pub const FRONT_TOL: f64 = 1e-6;

/// Number of workers: `OSCILLOPF_JOBS` if set, else `requested`, else all
/// cores.
pub fn resolve_jobs(requested: Option<usize>) -> usize {
    std::env::var("OSCILLOPF_JOBS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .or(requested)
        .filter(|&j| j > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` over `items` on `jobs` workers, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

/// Outcome of one solve; build errors are kept as text so sweeps continue.
pub type PointResult = Result<TradeoffPoint, String>;

pub fn solve_mu(study: &Study, mu: f64, k: usize, formulation: Formulation, opts: &PointOptions) -> PointResult {
    let cfg = study.tradeoff(mu, k).with_formulation(formulation);
    solve_point(study, cfg, opts).map_err(|e| e.to_string())
}

/// Parses either a point count (`21` gives `0, 0.05, …, 1`) or a comma list.
pub fn parse_mu_grid(text: &str) -> Result<Vec<f64>, String> {
    let text = text.trim();
    if !text.contains(',') {
        if let Ok(n) = text.parse::<usize>() {
            if n < 2 {
                return Err("a µ grid needs at least two points".into());
            }
            return Ok((0..n).map(|i| i as f64 / (n - 1) as f64).collect());
        }
    }
    let mut grid = parse_list(text)?;
    if grid.len() < 2 {
        return Err("a µ grid needs at least two points".into());
    }
    if grid.iter().any(|m| !(0.0..=1.0).contains(m)) {
        return Err("µ values must lie in [0, 1]".into());
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

/// Comma-separated numbers; empty text gives an empty list.
pub fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
        .collect()
}

/// `start:stop:count` for an evenly spaced grid, or a comma list.
pub fn parse_omega_grid(text: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let start: f64 = parts[0].trim().parse().map_err(|_| "bad grid start".to_string())?;
        let stop: f64 = parts[1].trim().parse().map_err(|_| "bad grid stop".to_string())?;
        let n: usize = parts[2].trim().parse().map_err(|_| "bad grid count".to_string())?;
        return Ok(match n {
            0 => Vec::new(),
            1 => vec![start],
            _ => (0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect(),
        });
    }
    parse_list(text)
}

/// 1-based mode numbers as `a..b` (inclusive) or a comma list; returns
/// 0-based indices. Mode 1 is the uniform shift and is refused.
pub fn parse_modes(text: &str) -> Result<Vec<usize>, String> {
    let text = text.trim();
    let modes: Vec<usize> = if let Some((a, b)) = text.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| "bad mode range".to_string())?;
        let b: usize = b.trim().parse().map_err(|_| "bad mode range".to_string())?;
        (a..=b).collect()
    } else {
        text.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<usize>().map_err(|_| format!("'{t}' is not a mode number")))
            .collect::<Result<_, _>>()?
    };
    if modes.iter().any(|&m| m < 2) {
        return Err("mode numbers start at 2; mode 1 is the marginally stable shift".into());
    }
    Ok(modes.into_iter().map(|m| m - 1).collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn status_of(p: &PointResult) -> String {
    match p {
        Ok(pt) if pt.is_optimal() && !pt.is_exact() => "optimal_inexact".into(),
        Ok(pt) => pt.status.to_string(),
        Err(_) => "build_error".into(),
    }
}

fn solved(p: &PointResult) -> Option<&TradeoffPoint> {
    p.as_ref().ok().filter(|pt| pt.is_optimal())
}

#[derive(Debug, Clone, Serialize)]
pub struct ParetoRow {
    pub mu: f64,
    pub status: String,
    pub cost: Option<f64>,
    pub f_y: Option<f64>,
    pub rank_ratio: Option<f64>,
    /// Cost did not drop relative to the previous solved row.
    pub cost_monotone: bool,
    /// `f_y` did not rise relative to the previous solved row.
    pub f_y_monotone: bool,
    pub error: Option<String>,
}

pub fn pareto_rows(mus: &[f64], points: &[PointResult]) -> Vec<ParetoRow> {
    let mut rows = Vec::with_capacity(mus.len());
    let mut prev: Option<(f64, f64)> = None;
    for (&mu, p) in mus.iter().zip(points) {
        let pt = solved(p);
        let cost = pt.map(|pt| pt.cost);
        let f_y = pt.and_then(|pt| pt.f_y());
        let (mut cost_ok, mut f_y_ok) = (true, true);
        if let (Some((c0, f0)), Some(c), Some(f)) = (prev, cost, f_y) {
            cost_ok = c >= c0 - FRONT_TOL * (1.0 + c0.abs());
            f_y_ok = f <= f0 + FRONT_TOL * (1.0 + f0.abs());
        }
        if let (Some(c), Some(f)) = (cost, f_y) {
            prev = Some((c, f));
        }
        rows.push(ParetoRow {
            mu,
            status: status_of(p),
            cost,
            f_y,
            rank_ratio: pt.and_then(|pt| pt.rank_ratio()),
            cost_monotone: cost_ok,
            f_y_monotone: f_y_ok,
            error: p.as_ref().err().cloned(),
        });
    }
    rows
}

pub fn write_pareto_csv<W: Write>(mut w: W, rows: &[ParetoRow]) -> std::io::Result<()> {
    writeln!(w, "mu,cost,f_y,rank_ratio,status,cost_monotone,f_y_monotone")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.mu,
            fmt_opt(r.cost),
            fmt_opt(r.f_y),
            fmt_opt(r.rank_ratio),
            r.status,
            r.cost_monotone,
            r.f_y_monotone
        )?;
    }
    Ok(())
}

/// Shape of a solved front.
#[derive(Debug, Clone, Serialize)]
pub struct FrontSummary {
    pub monotone: bool,
    /// `(f_y(first) − f_y(last))/f_y(first)` in percent.
    pub f_y_improvement_pct: f64,
    /// `(cost(last) − cost(first))/cost(first)` in percent.
    pub cost_increase_pct: f64,
    /// Largest share of the total `f_y` improvement reached by a point that
    /// spends at most a quarter of the total cost increase.
    pub knee_share: f64,
}

pub fn summarize_front(rows: &[ParetoRow]) -> Option<FrontSummary> {
    let solved: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.cost?, r.f_y?)))
        .collect();
    let (&(c0, f0), &(c1, f1)) = (solved.first()?, solved.last()?);
    let (dc, df) = (c1 - c0, f0 - f1);
    let knee_share = solved
        .iter()
        .filter(|(c, _)| c - c0 <= 0.25 * dc + FRONT_TOL * (1.0 + c0.abs()))
        .map(|(_, f)| if df > 0.0 { (f0 - f) / df } else { 0.0 })
        .fold(0.0, f64::max);
    Some(FrontSummary {
        monotone: rows.iter().all(|r| r.cost_monotone && r.f_y_monotone),
        f_y_improvement_pct: 100.0 * df / f0,
        cost_increase_pct: 100.0 * dc / c0,
        knee_share,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub factor: f64,
    pub f_y_mu0: Option<f64>,
    pub f_y_mu1: Option<f64>,
    pub improvement_pct: Option<f64>,
    pub cost_mu0: Option<f64>,
    pub cost_mu1: Option<f64>,
    pub rank_ratio_mu0: Option<f64>,
    pub rank_ratio_mu1: Option<f64>,
    pub status_mu0: String,
    pub status_mu1: String,
}

pub fn sweep_row(factor: f64, at0: &PointResult, at1: &PointResult) -> SweepRow {
    let (p0, p1) = (solved(at0), solved(at1));
    let f0 = p0.and_then(|p| p.f_y());
    let f1 = p1.and_then(|p| p.f_y());
    SweepRow {
        factor,
        f_y_mu0: f0,
        f_y_mu1: f1,
        improvement_pct: match (f0, f1) {
            (Some(a), Some(b)) => Some(100.0 * (a - b) / a),
            _ => None,
        },
        cost_mu0: p0.map(|p| p.cost),
        cost_mu1: p1.map(|p| p.cost),
        rank_ratio_mu0: p0.and_then(|p| p.rank_ratio()),
        rank_ratio_mu1: p1.and_then(|p| p.rank_ratio()),
        status_mu0: status_of(at0),
        status_mu1: status_of(at1),
    }
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "factor,f_y_mu0,f_y_mu1,improvement_pct,cost_mu0,cost_mu1,rank_ratio_mu0,rank_ratio_mu1,status_mu0,status_mu1"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.factor,
            fmt_opt(r.f_y_mu0),
            fmt_opt(r.f_y_mu1),
            fmt_opt(r.improvement_pct),
            fmt_opt(r.cost_mu0),
            fmt_opt(r.cost_mu1),
            fmt_opt(r.rank_ratio_mu0),
            fmt_opt(r.rank_ratio_mu1),
            r.status_mu0,
            r.status_mu1
        )?;
    }
    Ok(())
}

/// `|H_i(jω)|²` for the given 0-based modes of the Laplacian `l`.
pub fn freqresp_csv<W: Write>(
    w: W,
    study: &Study,
    l: &DMatrix<f64>,
    modes: &[usize],
    omegas: &[f64],
) -> Result<(), String> {
    let spec = spectrum(l, &study.inertia).map_err(|e| e.to_string())?;
    if let Some(&bad) = modes.iter().find(|&&m| m >= spec.eigvals.len()) {
        return Err(format!(
            "mode {} requested but the system has {} modes",
            bad + 1,
            spec.eigvals.len()
        ));
    }
    write_freqresp_csv(w, &spec, modes, study.dynamics.gamma, omegas).map_err(|e| e.to_string())
}

/// One PASS/FAIL line of `validate`.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub estimate: Option<f64>,
    pub target: Option<f64>,
    pub stderr: Option<f64>,
    pub z_score: Option<f64>,
    pub detail: String,
}

impl Check {
    fn failed(name: String, detail: String) -> Self {
        Self {
            name,
            passed: false,
            estimate: None,
            target: None,
            stderr: None,
            z_score: None,
            detail,
        }
    }
}

/// Monte-Carlo and conic checks of the metric on the Laplacian `l`.
pub fn validate_laplacian(
    study: &Study,
    l: &DMatrix<f64>,
    k: usize,
    sim: &SimConfig,
    opts: &PointOptions,
) -> Vec<Check> {
    let gamma = study.dynamics.gamma;
    let mut checks = Vec::new();
    let spec = match spectrum(l, &study.inertia).and_then(|s| s.with_band(BandMode::Count(k))) {
        Ok(s) => s,
        Err(e) => return vec![Check::failed("spectrum".into(), e.to_string())],
    };
    for &i in &spec.band {
        let lambda = spec.eigvals[i];
        let name = format!("mode {} variance", i + 1);
        let target = eigenstate_variance(lambda, gamma).ok();
        match simulate_eigensystem(lambda, gamma, sim) {
            Ok(est) => {
                let z = target.map(|t| est.z_score(t));
                checks.push(Check {
                    name,
                    passed: z.is_some_and(|z| z.abs() <= 3.0),
                    estimate: Some(est.mean),
                    target,
                    stderr: Some(est.stderr),
                    z_score: z,
                    detail: format!("λ = {lambda:.6e}, within 3 standard errors"),
                });
            }
            Err(e) => checks.push(Check::failed(name, e.to_string())),
        }
    }
    let f_y = stability_metric(&spec, gamma).ok();
    let damping = study.dynamics.damping_vector(&study.kron.sync_buses);
    match damping.map_err(|e| e.to_string()).and_then(|d| {
        simulate_swing(&study.inertia, &d, l, BandMode::Count(k), sim).map_err(|e| e.to_string())
    }) {
        Ok(est) => {
            let e = est.band_energy;
            let rel = f_y.map(|f| (e.mean - f).abs() / f);
            checks.push(Check {
                name: "band energy".into(),
                passed: rel.is_some_and(|r| r <= 0.05),
                estimate: Some(e.mean),
                target: f_y,
                stderr: Some(e.stderr),
                z_score: f_y.map(|f| e.z_score(f)),
                detail: format!(
                    "swing simulation against f_y, relative error {} (limit 5%)",
                    rel.map_or("n/a".into(), |r| format!("{:.3}%", 100.0 * r))
                ),
            });
        }
        Err(e) => checks.push(Check::failed("band energy".into(), e)),
    }
    match lemma1_value(l, &study.inertia, k, gamma, &opts.solver) {
        Ok(v) => {
            let rel = f_y.map(|f| (v - f).abs() / f);
            checks.push(Check {
                name: "conic band energy".into(),
                passed: rel.is_some_and(|r| r <= 1e-6),
                estimate: Some(v),
                target: f_y,
                stderr: None,
                z_score: None,
                detail: format!(
                    "stability program against the eigenvalue sum, relative error {} (limit 1e-6)",
                    rel.map_or("n/a".into(), |r| format!("{r:.3e}"))
                ),
            });
        }
        Err(e) => checks.push(Check::failed("conic band energy".into(), e.to_string())),
    }
    checks
}
