//! Monte-Carlo simulation of swing dynamics under white-noise injections, an
//! independent check of the closed-form variances.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{spectrum, BandMode};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Step in seconds.
    pub dt: f64,
    /// Simulated time per trial in seconds.
    pub horizon: f64,
    /// Initial stretch discarded from the statistics, in seconds.
    pub burn_in: f64,
    pub n_trials: usize,
    /// Trial `i` uses seed `seed + i`.
    pub seed: u64,
    /// Keep every `stride`-th sample of the first trial, if set.
    pub trajectory_stride: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 2000.0,
            burn_in: 200.0,
            n_trials: 8,
            seed: 42,
            trajectory_stride: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument("time step must be positive".into()));
        }
        if !(self.burn_in >= 0.0) || !(self.burn_in < self.horizon) {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} must lie in [0, horizon {})",
                self.burn_in, self.horizon
            )));
        }
        if self.n_trials == 0 {
            return Err(Error::InvalidArgument("at least one trial is needed".into()));
        }
        if self.trajectory_stride == Some(0) {
            return Err(Error::InvalidArgument("trajectory stride must be positive".into()));
        }
        if self.recorded_steps() == 0 {
            return Err(Error::InvalidArgument("no samples after burn-in".into()));
        }
        Ok(())
    }

    fn total_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn burn_steps(&self) -> usize {
        (self.burn_in / self.dt).round() as usize
    }

    fn recorded_steps(&self) -> usize {
        self.total_steps().saturating_sub(self.burn_steps())
    }
}

/// Sample mean over trials with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// `NaN` for a single trial.
    pub stderr: f64,
}

impl Estimate {
    pub fn from_trials(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, stderr }
    }

    /// `(mean − target)/stderr`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.stderr
    }
}

/// Largest step for which the scheme is stable on a mode `(λ, γ)`.
///
/// The update `v ← v − h(γ v + λ y) + noise`, `y ← y + h v` is stable iff
/// `γh < 2` and `λh² < 4 − 2γh`.
pub fn max_stable_dt(lambda: f64, gamma: f64) -> f64 {
    let by_damping = 2.0 / gamma;
    let by_stiffness = if lambda > 0.0 {
        (-gamma + (gamma * gamma + 4.0 * lambda).sqrt()) / lambda
    } else {
        f64::INFINITY
    };
    by_damping.min(by_stiffness)
}

fn check_step(dt: f64, lambda: f64, gamma: f64) -> Result<()> {
    let limit = max_stable_dt(lambda, gamma);
    if dt >= limit {
        return Err(Error::Simulation(format!(
            "time step {dt} is unstable for λ = {lambda:.4e}, γ = {gamma}; use dt ≤ {:.3e}",
            0.1 * limit
        )));
    }
    Ok(())
}

/// Stationary variance of `ÿ + γ ẏ + λ y = ξ` with unit white noise `ξ`,
/// estimated by semi-implicit Euler–Maruyama.
pub fn simulate_eigensystem(lambda: f64, gamma: f64, cfg: &SimConfig) -> Result<Estimate> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eigenvalue {lambda} has no stationary variance"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument("damping ratio must be positive".into()));
    }
    cfg.validate()?;
    check_step(cfg.dt, lambda, gamma)?;
    let (steps, burn, h) = (cfg.total_steps(), cfg.burn_steps(), cfg.dt);
    let kick = h.sqrt();
    let per_trial: Vec<f64> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
            let (mut y, mut v) = (0.0f64, 0.0f64);
            let mut acc = 0.0;
            for k in 0..steps {
                let xi: f64 = StandardNormal.sample(&mut rng);
                v += -h * (gamma * v + lambda * y) + kick * xi;
                y += h * v;
                if k >= burn {
                    acc += y * y;
                }
            }
            acc / (steps - burn) as f64
        })
        .collect();
    Ok(Estimate::from_trials(&per_trial))
}

/// Decimated eigenstate trajectory of the first trial.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Zero-based mode indices of the columns.
    pub modes: Vec<usize>,
    pub t: Vec<f64>,
    /// One row per sample, one entry per mode.
    pub y: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Writes `t,y_<i>...` with 1-based mode numbers in the header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t")?;
        for m in &self.modes {
            write!(w, ",y_{}", m + 1)?;
        }
        writeln!(w)?;
        for (t, row) in self.t.iter().zip(&self.y) {
            write!(w, "{t}")?;
            for v in row {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Result of a full swing simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwingEstimate {
    /// Zero-based indices of the band modes.
    pub band: Vec<usize>,
    pub band_eigvals: Vec<f64>,
    /// `E[y_i²]` per band mode.
    pub mode_variance: Vec<Estimate>,
    /// `E[‖y_ℰ‖²]`.
    pub band_energy: Estimate,
    pub trajectory: Option<Trajectory>,
}

/// Angles and angular velocities of the swing system.
#[derive(Debug, Clone, PartialEq)]
pub struct SwingState {
    pub delta: DVector<f64>,
    pub omega: DVector<f64>,
    force: DVector<f64>,
}

impl SwingState {
    pub fn new(delta: DVector<f64>, omega: DVector<f64>) -> Self {
        let force = DVector::zeros(delta.len());
        Self { delta, omega, force }
    }

    pub fn at_rest(s: usize) -> Self {
        Self::new(DVector::zeros(s), DVector::zeros(s))
    }
}

/// One semi-implicit Euler–Maruyama step of `M δ̈ + D δ̇ + L δ = p`, where `p`
/// has covariance `M`: the velocity of bus `n` receives `√(dt/M_n) ξ_n`.
#[derive(Debug, Clone)]
pub struct SwingStepper {
    m_inv_l: DMatrix<f64>,
    gammas: DVector<f64>,
    kick: DVector<f64>,
    dt: f64,
}

impl SwingStepper {
    pub fn new(inertia: &DVector<f64>, damping: &DVector<f64>, l: &DMatrix<f64>, dt: f64) -> Self {
        let s = inertia.len();
        Self {
            m_inv_l: DMatrix::from_fn(s, s, |i, j| l[(i, j)] / inertia[i]),
            gammas: damping.component_div(inertia),
            kick: inertia.map(|m| (dt / m).sqrt()),
            dt,
        }
    }

    /// Advances `state` by one step; without `rng` the system is noise-free.
    pub fn step<R: rand::Rng>(&self, state: &mut SwingState, mut rng: Option<&mut R>) {
        state.force.gemv(1.0, &self.m_inv_l, &state.delta, 0.0);
        let h = self.dt;
        for n in 0..state.delta.len() {
            let xi: f64 = match rng.as_deref_mut() {
                Some(r) => StandardNormal.sample(r),
                None => 0.0,
            };
            state.omega[n] += -h * (self.gammas[n] * state.omega[n] + state.force[n]) + self.kick[n] * xi;
        }
        state.delta.axpy(h, &state.omega, 1.0);
    }
}

/// Simulates `M δ̈ + D δ̇ + L δ = p` with white noise `p` of covariance `M`,
/// projects onto the eigenstates `y = Uᵀ M^{1/2} δ` and estimates the energy of
/// the band. The initial state is at rest.
pub fn simulate_swing(
    inertia: &DVector<f64>,
    damping: &DVector<f64>,
    l: &DMatrix<f64>,
    band: BandMode,
    cfg: &SimConfig,
) -> Result<SwingEstimate> {
    let s = l.nrows();
    if damping.len() != s || inertia.len() != s {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    if damping.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument("damping must be positive".into()));
    }
    cfg.validate()?;
    let spec = spectrum(l, inertia)?.with_band(band)?;
    let gammas = damping.component_div(inertia);
    for i in 0..s {
        // Per-bus damping ratios need not be equal; the stiffest mode and the
        // largest ratio bound the step.
        check_step(cfg.dt, spec.eigvals[s - 1], gammas[i])?;
    }
    let sqrt_m = inertia.map(f64::sqrt);
    // Rows of the projection onto the band modes: y_i = u_iᵀ M^{1/2} δ.
    let proj: Vec<DVector<f64>> = spec
        .band
        .iter()
        .map(|&i| spec.eigvecs.column(i).component_mul(&sqrt_m))
        .collect();
    let model = SwingStepper::new(inertia, damping, l, cfg.dt);
    let (steps, burn, h) = (cfg.total_steps(), cfg.burn_steps(), cfg.dt);
    let nb = proj.len();

    let trials: Vec<(Vec<f64>, Option<Trajectory>)> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(trial as u64));
            let mut state = SwingState::at_rest(s);
            let mut acc = vec![0.0; nb];
            let stride = if trial == 0 { cfg.trajectory_stride } else { None };
            let mut traj = stride.map(|_| Trajectory {
                modes: spec.band.clone(),
                ..Default::default()
            });
            for k in 0..steps {
                model.step(&mut state, Some(&mut rng));
                if k >= burn {
                    for (a, p) in acc.iter_mut().zip(&proj) {
                        let y = p.dot(&state.delta);
                        *a += y * y;
                    }
                }
                if let (Some(tr), Some(st)) = (traj.as_mut(), stride) {
                    if (k + 1) % st == 0 {
                        tr.t.push((k + 1) as f64 * h);
                        tr.y.push(proj.iter().map(|p| p.dot(&state.delta)).collect());
                    }
                }
            }
            let n = (steps - burn) as f64;
            (acc.iter().map(|a| a / n).collect(), traj)
        })
        .collect();

    let mode_variance: Vec<Estimate> = (0..nb)
        .map(|i| Estimate::from_trials(&trials.iter().map(|t| t.0[i]).collect::<Vec<_>>()))
        .collect();
    let energy: Vec<f64> = trials.iter().map(|t| t.0.iter().sum()).collect();
    let trajectory = trials.into_iter().next().and_then(|t| t.1);
    Ok(SwingEstimate {
        band_eigvals: spec.band_eigvals(),
        band: spec.band,
        mode_variance,
        band_energy: Estimate::from_trials(&energy),
        trajectory,
    })
}

/// `h(t) = (e^{ct} − e^{dt})/r` with `c, d = (−γ ± r)/2`, `r = √(γ² − 4λ)`,
/// evaluated in complex arithmetic.
pub fn impulse_response_complex(lambda: f64, gamma: f64, t: f64) -> C64 {
    let r = C64::new(gamma * gamma - 4.0 * lambda, 0.0).sqrt();
    if r.norm() < 1e-9 * gamma.max(1.0) {
        return C64::new(t * (-gamma * t / 2.0).exp(), 0.0);
    }
    let c = (r - gamma) * 0.5;
    let d = (-r - gamma) * 0.5;
    ((c * t).exp() - (d * t).exp()) / r
}

/// Adaptive Simpson on `[a, b]`.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `∫₀^∞ h(t)² dt` by adaptive quadrature, truncated once the envelope of `h`
/// falls below 1e-12.
pub fn impulse_energy(lambda: f64, gamma: f64) -> Result<f64> {
    if !(lambda > 0.0) || !(gamma > 0.0) {
        return Err(Error::InvalidArgument("impulse energy needs λ > 0 and γ > 0".into()));
    }
    let disc = gamma * gamma - 4.0 * lambda;
    // Slowest decay rate of the two exponentials and the scale of h.
    let (rate, scale) = if disc > 0.0 {
        let r = disc.sqrt();
        ((gamma - r) / 2.0, 1.0 / r)
    } else {
        (gamma / 2.0, 1.0 / (-disc).sqrt().max(gamma))
    };
    let end = ((scale / 1e-12).ln().max(1.0) / rate).max(1.0 / rate);
    // Panels of about one oscillation period keep each Simpson call smooth.
    let period = if disc < 0.0 {
        2.0 * std::f64::consts::PI / ((-disc).sqrt() / 2.0)
    } else {
        1.0 / rate
    };
    let panels = ((end / period).ceil() as usize).clamp(1, 1_000_000);
    let width = end / panels as f64;
    let f = |t: f64| impulse_response_complex(lambda, gamma, t).re.powi(2);
    let total_scale = 1.0 / (2.0 * lambda * gamma);
    let tol = 1e-12 * total_scale / panels as f64;
    Ok((0..panels)
        .map(|p| simpson(&f, p as f64 * width, (p + 1) as f64 * width, tol))
        .sum())
}
