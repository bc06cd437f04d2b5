//! One trade-off point end to end: prepare the network, build and solve the
//! relaxation, recover and verify the operating point.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::casefile::{apply_cost_records, load_dynamics, parse_matpower, scale_loads, DynamicParams, RawCase};
use crate::network::{build_ybus, kron_reduce, quadratic_forms, AdmittanceModel, KronModel, QuadraticForms};
use crate::recovery::{assess, ExactnessReport, NetworkRefs, EXACTNESS_THRESHOLD};
use crate::sdp::{build_opf_sdp, lemma1_program, standard_form, Formulation, OpfProgram, TradeoffConfig};
use crate::solver::{solve, SolveStatus, SolverSettings};
use crate::{Error, Result};

/// Parses a case and its sidecar and scales the loads, without validating
/// the network.
pub fn parse_inputs(case_text: &str, dyn_text: &str, load_scale: f64) -> Result<(RawCase, DynamicParams)> {
    let mut case = scale_loads(&parse_matpower(case_text)?, load_scale)?;
    apply_cost_records(dyn_text, &mut case)?;
    let dynamics = load_dynamics(dyn_text, &case)?;
    Ok((case, dynamics))
}

/// A validated case with everything derived from it that the relaxation
/// needs.
#[derive(Debug, Clone)]
pub struct Study {
    pub case: RawCase,
    pub dynamics: DynamicParams,
    pub y: AdmittanceModel,
    pub kron: KronModel,
    pub forms: QuadraticForms,
    /// Inertias in synchronous-bus order.
    pub inertia: DVector<f64>,
}

impl Study {
    pub fn new(case: RawCase, dynamics: DynamicParams) -> Result<Self> {
        case.validate_topology()?;
        case.check_generation_limits()?;
        let y = build_ybus(&case)?;
        let kron = kron_reduce(&y, &dynamics, &case.synchronous_buses())?;
        let forms = quadratic_forms(&y, &case)?;
        let inertia = dynamics.inertia_vector(&kron.sync_buses)?;
        Ok(Self {
            case,
            dynamics,
            y,
            kron,
            forms,
            inertia,
        })
    }

    /// Parses a MATPOWER case and its sidecar, then scales the loads.
    pub fn from_texts(case_text: &str, dyn_text: &str, load_scale: f64) -> Result<Self> {
        let (case, dynamics) = parse_inputs(case_text, dyn_text, load_scale)?;
        Self::new(case, dynamics)
    }

    pub fn from_files(case_path: &Path, dyn_path: &Path, load_scale: f64) -> Result<Self> {
        let case_text = std::fs::read_to_string(case_path)?;
        let dyn_text = std::fs::read_to_string(dyn_path)?;
        Self::from_texts(&case_text, &dyn_text, load_scale)
    }

    pub fn net(&self) -> NetworkRefs<'_> {
        NetworkRefs {
            case: &self.case,
            y: &self.y,
            kron: &self.kron,
            forms: &self.forms,
            inertia: &self.inertia,
        }
    }

    /// Trade-off point with the damping ratio of the sidecar.
    pub fn tradeoff(&self, mu: f64, k: usize) -> TradeoffConfig {
        TradeoffConfig::new(mu, k, self.dynamics.gamma)
    }

    pub fn build(&self, cfg: TradeoffConfig) -> Result<OpfProgram> {
        build_opf_sdp(&self.case, &self.y, &self.kron, &self.forms, &self.dynamics, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointOptions {
    pub solver: SolverSettings,
    /// Largest rank-one ratio accepted as exact.
    pub exactness_threshold: f64,
}

impl Default for PointOptions {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            exactness_threshold: EXACTNESS_THRESHOLD,
        }
    }
}

/// Everything learned from one solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub mu: f64,
    pub k: usize,
    pub formulation: Formulation,
    pub status: SolveStatus,
    pub objective: f64,
    pub gap: f64,
    pub iterations: u32,
    pub solve_time: f64,
    /// Generation cost `f_c` of the relaxation's dispatch.
    pub cost: f64,
    /// Active and reactive generation per synchronous bus (pu).
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
    /// Recovery report; absent unless the solve ended optimal or with
    /// reduced accuracy.
    pub report: Option<ExactnessReport>,
    /// The Laplacian block of the solution.
    #[serde(skip)]
    pub laplacian: Option<DMatrix<f64>>,
}

impl TradeoffPoint {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn is_exact(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.exact)
    }

    /// `f_y` of the solved Laplacian, falling back to the conic bound and then
    /// to the recovered operating point.
    pub fn f_y(&self) -> Option<f64> {
        let r = self.report.as_ref()?;
        r.f_y_lifted.or(r.f_y_sdp).or(r.f_y_recovered)
    }

    pub fn rank_ratio(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.rank_ratio_v)
    }
}

/// `M^{-1/2} L M^{-1/2}`.
pub fn mass_scaled(l: &DMatrix<f64>, inertia: &DVector<f64>) -> DMatrix<f64> {
    let w = inertia.map(|m| 1.0 / m.sqrt());
    DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| w[i] * l[(i, j)] * w[j])
}

/// Optimum of the stand-alone stability program for a fixed Laplacian.
pub fn lemma1_value(l: &DMatrix<f64>, inertia: &DVector<f64>, k: usize, gamma: f64, settings: &SolverSettings) -> Result<f64> {
    let prog = lemma1_program(&mass_scaled(l, inertia), inertia, k, gamma)?;
    let sol = solve(&standard_form(&prog), settings)?;
    if sol.status != SolveStatus::Optimal {
        return Err(Error::Build(format!("stability program ended {}", sol.status)));
    }
    Ok(sol.primal_obj)
}

/// Builds, solves and recovers one trade-off point. Solver failures are
/// reported in the status; build errors are returned.
pub fn solve_point(study: &Study, cfg: TradeoffConfig, opts: &PointOptions) -> Result<TradeoffPoint> {
    let k = cfg.validate()?;
    let opf = study.build(cfg)?;
    let sf = standard_form(&opf.program);
    let sol = solve(&sf, &opts.solver)?;
    let x = &sol.primal;
    let p_g = opf.p_g(x)?;
    let q_g = opf.q_g(x)?;
    let mut point = TradeoffPoint {
        mu: cfg.mu,
        k,
        formulation: cfg.formulation,
        status: sol.status,
        objective: sol.primal_obj,
        gap: sol.gap,
        iterations: sol.iterations,
        solve_time: sol.solve_time,
        cost: opf.cost_of(&p_g, &q_g),
        p_g: p_g.iter().copied().collect(),
        q_g: q_g.iter().copied().collect(),
        report: None,
        laplacian: None,
    };
    if !sol.status.is_usable() {
        return Ok(point);
    }
    let v = opf.v(x)?;
    let e = opf.e(x)?;
    let l = opf.program.symmetric_value("L", x)?;
    let mut report = assess(&v, &e, study.net(), &cfg, opts.exactness_threshold)?;
    // Without weight on the stability term its epigraph variables are not
    // pushed down, so the bound is re-evaluated on the solved Laplacian.
    report.f_y_sdp = if cfg.mu > 0.0 {
        Some(opf.stability_term(x)?)
    } else {
        lemma1_value(&l, &study.inertia, k, cfg.gamma, &opts.solver).ok()
    };
    point.report = Some(report);
    point.laplacian = Some(l);
    Ok(point)
}
