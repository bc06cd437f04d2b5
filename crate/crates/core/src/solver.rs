//! Solving standard-form cone programs. The backend boundary is the
//! standard-form tuple; the shipped backend is Clarabel.

use std::time::Instant;

use clarabel::algebra as ca;
use clarabel::solver::{self as cs, IPSolver, SolverStatus};
use serde::{Deserialize, Serialize};

use crate::sdp::{ConeSpec, StandardForm};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative duality gap and feasibility tolerance.
    pub tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    /// Stopped short of the requested tolerance but within the backend's
    /// reduced-accuracy thresholds.
    ReducedAccuracy,
    NumericalError,
}

impl SolveStatus {
    /// Whether the iterate is a usable approximate optimum.
    pub fn is_usable(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::ReducedAccuracy)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::ReducedAccuracy => "reduced_accuracy",
            SolveStatus::NumericalError => "numerical_error",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    /// Multipliers of the rows of `A x + s = b`.
    pub dual: Vec<f64>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub gap: f64,
    /// `‖Ax + s − b‖∞ / (1 + ‖b‖∞)` at the returned point.
    pub primal_residual: f64,
    /// `‖Aᵀz + c‖∞ / (1 + ‖c‖∞)` at the returned point.
    pub dual_residual: f64,
    pub iterations: u32,
    pub solve_time: f64,
}

pub trait ConicBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, prob: &StandardForm, settings: &SolverSettings) -> Result<ConicSolution>;
}

/// Static KKT regularisation. The default 1e-8 is too small for the dense
/// equality rows of the lifted power-flow programs.
const STATIC_REG: f64 = 1e-7;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Unscaled primal and dual residuals of `(x, s, z)`.
fn residuals(prob: &StandardForm, x: &[f64], s: &[f64], z: &[f64]) -> (f64, f64) {
    let ax = prob.a.mul_vec(x);
    let rp: Vec<f64> = (0..ax.len()).map(|i| ax[i] + s[i] - prob.b[i]).collect();
    let atz = prob.a.transpose_mul_vec(z);
    let rd: Vec<f64> = (0..atz.len()).map(|j| atz[j] + prob.c[j]).collect();
    (
        inf_norm(&rp) / (1.0 + inf_norm(&prob.b)),
        inf_norm(&rd) / (1.0 + inf_norm(&prob.c)),
    )
}

/// Interior-point solver with sparse direct factorisation.
#[derive(Debug, Clone, Default)]
pub struct ClarabelBackend;

fn to_clarabel_csc(a: &crate::sdp::CscMatrix) -> ca::CscMatrix<f64> {
    ca::CscMatrix::new(
        a.nrows,
        a.ncols,
        a.colptr.clone(),
        a.rowval.clone(),
        a.nzval.clone(),
    )
}

fn map_status(s: SolverStatus) -> SolveStatus {
    match s {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            SolveStatus::Unbounded
        }
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::MaxIter,
        SolverStatus::AlmostSolved => SolveStatus::ReducedAccuracy,
        _ => SolveStatus::NumericalError,
    }
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, prob: &StandardForm, settings: &SolverSettings) -> Result<ConicSolution> {
        let start = Instant::now();
        let n = prob.n();
        let p = ca::CscMatrix::<f64>::zeros((n, n));
        let a = to_clarabel_csc(&prob.a);
        let cones: Vec<cs::SupportedConeT<f64>> = prob
            .cones
            .iter()
            .map(|c| match *c {
                ConeSpec::Zero(m) => cs::ZeroConeT(m),
                ConeSpec::Nonneg(m) => cs::NonnegativeConeT(m),
                ConeSpec::Psd(d) => cs::PSDTriangleConeT(d),
            })
            .collect();
        let cfg = cs::DefaultSettingsBuilder::default()
            .verbose(settings.verbose)
            .max_iter(settings.max_iter)
            .tol_gap_abs(settings.tol)
            .tol_gap_rel(settings.tol)
            .tol_feas(settings.tol)
            .direct_solve_method("faer".to_string())
            .static_regularization_constant(STATIC_REG)
            .max_threads(1)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("solver settings: {e}")))?;
        let mut solver = cs::DefaultSolver::new(&p, &prob.c, &a, &prob.b, &cones, cfg)
            .map_err(|e| Error::Build(format!("solver setup: {e}")))?;
        solver.solve();
        let sol = &solver.solution;
        let mut status = map_status(sol.status);
        let primal_obj = sol.obj_val + prob.c0;
        let dual_obj = sol.obj_val_dual + prob.c0;
        let gap = (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs());
        let (primal_residual, dual_residual) = residuals(prob, &sol.x, &sol.s, &sol.z);
        // A stalled final step can leave the backend's scaled test marginally
        // unmet while the unscaled optimality conditions already hold.
        if sol.status == SolverStatus::AlmostSolved
            && gap <= settings.tol
            && primal_residual <= settings.tol
            && dual_residual <= settings.tol
        {
            status = SolveStatus::Optimal;
        }
        if status != SolveStatus::Optimal {
            log::warn!("conic solve ended with status {status} ({:?})", sol.status);
        }
        Ok(ConicSolution {
            status,
            primal: sol.x.clone(),
            dual: sol.z.clone(),
            primal_obj,
            dual_obj,
            gap,
            primal_residual,
            dual_residual,
            iterations: sol.iterations,
            solve_time: start.elapsed().as_secs_f64(),
        })
    }
}

pub fn solve(prob: &StandardForm, settings: &SolverSettings) -> Result<ConicSolution> {
    ClarabelBackend.solve(prob, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{standard_form, BlockShape, ConeProgram};

    #[test]
    fn lp_corner() {
        let mut p = ConeProgram::new();
        let x = p.add_block("x", BlockShape::Vector(1)).unwrap();
        p.objective = x.entry(0);
        let mut r = x.entry(0);
        r.constant = -1.0;
        p.add_nonneg("x >= 1", vec![r]);
        let sol = solve(&standard_form(&p), &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal[0] - 1.0).abs() < 1e-7);
        assert!(sol.gap <= 1e-8);
    }

    #[test]
    fn psd_completion() {
        let mut p = ConeProgram::new();
        let x = p.add_block("X", BlockShape::Symmetric(2)).unwrap();
        p.objective = x.sym(0, 0);
        p.objective.add_scaled(&x.sym(1, 1), 1.0);
        let mut r = x.sym(0, 0);
        r.constant = -1.0;
        p.add_zero("X11 = 1", vec![r]);
        p.add_psd("X psd", 2, |i, j| x.sym(i, j));
        let sol = solve(&standard_form(&p), &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal_obj - 1.0).abs() < 1e-7);
        let xv = p.symmetric_value("X", &sol.primal).unwrap();
        assert!((xv - nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax() < 1e-6);
    }

    #[test]
    fn infeasible_is_reported() {
        let mut p = ConeProgram::new();
        let x = p.add_block("x", BlockShape::Vector(1)).unwrap();
        p.objective = x.entry(0);
        let mut lo = x.entry(0);
        lo.constant = -2.0;
        let mut hi = x.entry(0).scaled(-1.0);
        hi.constant = 1.0;
        p.add_nonneg("1 >= x >= 2", vec![lo, hi]);
        let sol = solve(&standard_form(&p), &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_is_reported() {
        let mut p = ConeProgram::new();
        let x = p.add_block("x", BlockShape::Vector(1)).unwrap();
        p.objective = x.entry(0).scaled(-1.0);
        p.add_nonneg("x >= 0", vec![x.entry(0)]);
        let sol = solve(&standard_form(&p), &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }
}
