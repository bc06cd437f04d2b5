use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use oscillopf_core::ambient::SimConfig;
use oscillopf_core::pipeline::{parse_inputs, PointOptions, Study};
use oscillopf_core::recovery::EXACTNESS_THRESHOLD;
use oscillopf_core::sdp::Formulation;
use oscillopf_core::solver::SolverSettings;
use serde_json::json;

use oscillopf::experiments::*;
use oscillopf::manifest::RunManifest;

#[derive(Parser)]
#[command(name = "oscillopf", version, about = "Stability-aware optimal power flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one trade-off point and report exactness.
    Opf {
        #[command(flatten)]
        common: Common,
        /// Weight of the stability metric in [0, 1].
        #[arg(long, default_value_t = 0.0)]
        mu: f64,
    },
    /// Solve a grid of trade-off weights.
    Pareto {
        #[command(flatten)]
        common: Common,
        /// Point count for an even grid on [0, 1], or a comma list of weights.
        #[arg(long, default_value = "21")]
        mu_grid: String,
    },
    /// Compare µ = 0 and µ = 1 across load levels.
    SweepLoad {
        #[command(flatten)]
        common: Common,
        /// Comma list of load scale factors.
        #[arg(long, default_value = "0.5,0.6,0.7,0.8,0.9,1.0,1.1")]
        factors: String,
    },
    /// Frequency responses of the eigensystems at a solved operating point.
    Freqresp {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        mu: f64,
        /// 1-based mode numbers, `a..b` or a comma list; mode 1 is excluded.
        #[arg(long, default_value = "2..11")]
        modes: String,
        /// `start:stop:count` in rad/s, or a comma list.
        #[arg(long, default_value = "0:10:1001")]
        omega_grid: String,
    },
    /// Monte-Carlo and conic checks of the metric at a solved operating point.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        mu: f64,
        /// JSON file with any of dt, horizon, burn_in, n_trials, seed.
        #[arg(long)]
        sim_config: Option<PathBuf>,
        /// Overrides the simulation step.
        #[arg(long)]
        dt: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormulationArg {
    Reduced,
    Full,
}

#[derive(Args)]
struct Common {
    /// MATPOWER case file.
    #[arg(long)]
    case: PathBuf,
    /// Dynamics sidecar file.
    #[arg(long = "dyn")]
    dynamics: PathBuf,
    /// Number of low-frequency modes in the metric.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    load_scale: f64,
    /// Relative duality gap and feasibility tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: u32,
    /// Largest rank-one ratio accepted as exact.
    #[arg(long, default_value_t = EXACTNESS_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "reduced")]
    formulation: FormulationArg,
    /// Concurrent solves; OSCILLOPF_JOBS takes precedence.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

impl Common {
    fn options(&self) -> PointOptions {
        PointOptions {
            solver: SolverSettings {
                tol: self.tol,
                max_iter: self.max_iter,
                verbose: false,
            },
            exactness_threshold: self.threshold,
        }
    }

    fn formulation(&self) -> Formulation {
        match self.formulation {
            FormulationArg::Reduced => Formulation::Reduced,
            FormulationArg::Full => Formulation::Full,
        }
    }

    fn study(&self, load_scale: f64) -> Result<Study> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).with_context(|| format!("input stage: reading {}", p.display()))
        };
        let (case_text, dyn_text) = (read(&self.case)?, read(&self.dynamics)?);
        let (case, dynamics) = parse_inputs(&case_text, &dyn_text, load_scale).map_err(|e| {
            anyhow!(
                "input stage: {} with {}: {e}",
                self.case.display(),
                self.dynamics.display()
            )
        })?;
        Study::new(case, dynamics).map_err(|e| anyhow!("build stage: {e}"))
    }

    fn config(&self) -> serde_json::Value {
        json!({
            "k": self.k,
            "load_scale": self.load_scale,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "exactness_threshold": self.threshold,
            "formulation": self.formulation(),
            "jobs": resolve_jobs(self.jobs),
        })
    }

    fn manifest(&self, command: &str, extra: serde_json::Value) -> RunManifest {
        let mut config = self.config();
        if let (Some(c), Some(e)) = (config.as_object_mut(), extra.as_object()) {
            c.extend(e.clone());
        }
        RunManifest::new(command, &self.case, &self.dynamics, config)
    }

    fn output(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        Ok(self.out.join(name))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn cmd_opf(common: &Common, mu: f64) -> Result<ExitCode> {
    let study = common.study(common.load_scale)?;
    let point = solve_mu(&study, mu, common.k, common.formulation(), &common.options())
        .map_err(|e| anyhow!("build stage: {e}"))?;
    let manifest = common.manifest("opf", json!({ "mu": mu }));
    let path = common.output("opf_report.json")?;
    write_json(&path, &json!({ "manifest": manifest, "point": point }))?;

    println!("status      {}", point.status);
    println!("objective   {:.8}", point.objective);
    println!("cost f_c    {:.8}", point.cost);
    if let Some(r) = &point.report {
        println!("f_y         {}", point.f_y().map_or("n/a".into(), |f| format!("{f:.8}")));
        println!("rank ratio  V {:.3e}  E {:.3e}", r.rank_ratio_v, r.rank_ratio_e);
        println!("pf residual {:.3e} pu", r.max_pf_residual);
        println!("violations  {}", r.limit_violations.len());
        if !r.exact {
            println!("relaxation gap: the solution is not rank one; the recovered point is the best rank-one approximation");
        }
    }
    println!("report      {}", path.display());
    Ok(if !point.is_optimal() {
        eprintln!("error: solve stage: status {}", point.status);
        ExitCode::from(1)
    } else if point.is_exact() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_pareto(common: &Common, grid: &str) -> Result<ExitCode> {
    let mus = parse_mu_grid(grid).map_err(|e| anyhow!(e))?;
    let study = common.study(common.load_scale)?;
    let opts = common.options();
    let jobs = resolve_jobs(common.jobs);
    let points = par_map(&mus, jobs, |&mu| solve_mu(&study, mu, common.k, common.formulation(), &opts));
    let rows = pareto_rows(&mus, &points);
    let csv = common.output("pareto.csv")?;
    write_pareto_csv(create(&csv)?, &rows)?;
    let summary = summarize_front(&rows);
    let manifest = common.manifest("pareto", json!({ "mu_grid": mus }));
    write_json(
        &common.output("pareto.manifest.json")?,
        &json!({ "manifest": manifest, "output": "pareto.csv", "front": summary, "rows": rows }),
    )?;
    if let Some(s) = &summary {
        println!(
            "front: monotone {}, f_y improvement {:.3}%, cost increase {:.3}%, knee share {:.3}",
            s.monotone, s.f_y_improvement_pct, s.cost_increase_pct, s.knee_share
        );
    }
    println!("wrote {}", csv.display());
    let all_ok = points.iter().all(|p| p.as_ref().is_ok_and(|p| p.is_exact()));
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_sweep_load(common: &Common, factors: &str) -> Result<ExitCode> {
    let factors = parse_list(factors).map_err(|e| anyhow!(e))?;
    if factors.is_empty() || factors.iter().any(|&f| !(f > 0.0)) {
        bail!("load factors must be positive");
    }
    let opts = common.options();
    let jobs = resolve_jobs(common.jobs);
    let studies: Vec<Result<Study, String>> = factors
        .iter()
        .map(|&f| common.study(f).map_err(|e| format!("{e:#}")))
        .collect();
    let tasks: Vec<(usize, f64)> = (0..factors.len()).flat_map(|i| [(i, 0.0), (i, 1.0)]).collect();
    let points = par_map(&tasks, jobs, |&(i, mu)| match &studies[i] {
        Ok(s) => solve_mu(s, mu, common.k, common.formulation(), &opts),
        Err(e) => Err(e.clone()),
    });
    let rows: Vec<SweepRow> = factors
        .iter()
        .enumerate()
        .map(|(i, &f)| sweep_row(f, &points[2 * i], &points[2 * i + 1]))
        .collect();
    let csv = common.output("sweep_load.csv")?;
    write_sweep_csv(create(&csv)?, &rows)?;
    let manifest = common.manifest("sweep-load", json!({ "factors": factors }));
    write_json(
        &common.output("sweep_load.manifest.json")?,
        &json!({ "manifest": manifest, "output": "sweep_load.csv" }),
    )?;
    for r in &rows {
        println!(
            "factor {:>5}: f_y {} -> {} ({}%)",
            r.factor,
            r.f_y_mu0.map_or("n/a".into(), |v| format!("{v:.6}")),
            r.f_y_mu1.map_or("n/a".into(), |v| format!("{v:.6}")),
            r.improvement_pct.map_or("n/a".into(), |v| format!("{v:.3}"))
        );
    }
    println!("wrote {}", csv.display());
    let all_ok = points.iter().all(|p| p.as_ref().is_ok_and(|p| p.is_exact()));
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

/// Solves at `mu` and returns the Laplacian of the solution.
fn solved_laplacian(common: &Common, study: &Study, mu: f64) -> Result<nalgebra::DMatrix<f64>> {
    let point = solve_mu(study, mu, common.k, common.formulation(), &common.options())
        .map_err(|e| anyhow!("build stage: {e}"))?;
    if !point.is_optimal() {
        bail!("solve stage: status {}", point.status);
    }
    point.laplacian.ok_or_else(|| anyhow!("solve stage: no Laplacian"))
}

fn cmd_freqresp(common: &Common, mu: f64, modes: &str, grid: &str) -> Result<ExitCode> {
    let modes = parse_modes(modes).map_err(|e| anyhow!(e))?;
    let omegas = parse_omega_grid(grid).map_err(|e| anyhow!(e))?;
    let study = common.study(common.load_scale)?;
    let l = solved_laplacian(common, &study, mu)?;
    let csv = common.output("freqresp.csv")?;
    let mut w = create(&csv)?;
    freqresp_csv(&mut w, &study, &l, &modes, &omegas).map_err(|e| anyhow!(e))?;
    w.flush()?;
    let manifest = common.manifest(
        "freqresp",
        json!({ "mu": mu, "modes": modes.iter().map(|m| m + 1).collect::<Vec<_>>(), "omega_grid": omegas }),
    );
    write_json(
        &common.output("freqresp.manifest.json")?,
        &json!({ "manifest": manifest, "output": "freqresp.csv" }),
    )?;
    println!("wrote {}", csv.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(common: &Common, mu: f64, sim_path: Option<&Path>, dt: Option<f64>) -> Result<ExitCode> {
    let mut sim = match sim_path {
        Some(p) => serde_json::from_str::<SimConfig>(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing {}", p.display()))?,
        None => SimConfig::default(),
    };
    if let Some(dt) = dt {
        sim.dt = dt;
    }
    sim.validate().map_err(|e| anyhow!("simulation config: {e}"))?;
    let study = common.study(common.load_scale)?;
    let l = solved_laplacian(common, &study, mu)?;
    let checks = validate_laplacian(&study, &l, common.k, &sim, &common.options());
    for c in &checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        match c.z_score {
            Some(z) => println!("{verdict} {:<20} z = {z:+.2}  {}", c.name, c.detail),
            None => println!("{verdict} {:<20} {}", c.name, c.detail),
        }
    }
    let manifest = common.manifest("validate", json!({ "mu": mu, "sim": sim }));
    let path = common.output("validate.json")?;
    write_json(&path, &json!({ "manifest": manifest, "checks": checks }))?;
    Ok(if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Opf { common, mu } => cmd_opf(common, *mu),
        Command::Pareto { common, mu_grid } => cmd_pareto(common, mu_grid),
        Command::SweepLoad { common, factors } => cmd_sweep_load(common, factors),
        Command::Freqresp {
            common,
            mu,
            modes,
            omega_grid,
        } => cmd_freqresp(common, *mu, modes, omega_grid),
        Command::Validate {
            common,
            mu,
            sim_config,
            dt,
        } => cmd_validate(common, *mu, sim_config.as_deref(), *dt),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
