//! Linearised swing dynamics around an operating point: the coupling
//! Laplacian, its inertia-scaled spectrum and the oscillation metrics built
//! on it.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::network::KronModel;
use crate::{CMatrix, CVector, Error, Result, C64};

/// Eigenvalues below this are treated as a broken PSD assumption.
pub const NEG_EIG_TOL: f64 = 1e-8;

/// Internal voltage magnitudes and angles of the synchronous buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub e_mag: DVector<f64>,
    pub e_ang: DVector<f64>,
}

impl OperatingPoint {
    pub fn new(e_mag: DVector<f64>, e_ang: DVector<f64>) -> Result<Self> {
        if e_mag.len() != e_ang.len() {
            return Err(Error::InvalidArgument(
                "magnitude and angle vectors differ in length".into(),
            ));
        }
        if e_mag.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::InvalidArgument(
                "internal voltage magnitudes must be positive".into(),
            ));
        }
        Ok(Self { e_mag, e_ang })
    }

    pub fn from_internal(e: &CVector) -> Result<Self> {
        Self::new(e.map(|z| z.norm()), e.map(|z| z.arg()))
    }

    pub fn to_complex(&self) -> CVector {
        self.e_mag.zip_map(&self.e_ang, C64::from_polar)
    }

    pub fn len(&self) -> usize {
        self.e_mag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_mag.is_empty()
    }

    /// Edges `(n, m, |δ_n − δ_m|)` whose angle spread reaches π/2.
    pub fn violations(&self, kron: &KronModel) -> Vec<(usize, usize, f64)> {
        kron.edges()
            .filter_map(|(n, m)| {
                let spread = wrap_angle(self.e_ang[n] - self.e_ang[m]).abs();
                (spread >= FRAC_PI_2).then_some((n, m, spread))
            })
            .collect()
    }

    pub fn is_admissible(&self, kron: &KronModel) -> bool {
        self.violations(kron).is_empty()
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

fn fill_diagonal(l: &mut DMatrix<f64>) {
    for n in 0..l.nrows() {
        l[(n, n)] = 0.0;
        let row_sum: f64 = l.row(n).sum();
        l[(n, n)] = -row_sum;
    }
}

/// Laplacian with weights `E_n E_m cos(δ_n − δ_m)/γ_nm`. Inadmissible
/// points still produce a matrix, with a warning.
pub fn laplacian_from_angles(op: &OperatingPoint, kron: &KronModel) -> DMatrix<f64> {
    let s = kron.size();
    let mut l = DMatrix::zeros(s, s);
    for (n, m) in kron.edges() {
        let w = op.e_mag[n] * op.e_mag[m] * (op.e_ang[n] - op.e_ang[m]).cos()
            * kron.edge_weight(n, m);
        l[(n, m)] = -w;
        l[(m, n)] = -w;
    }
    fill_diagonal(&mut l);
    let bad = op.violations(kron);
    if !bad.is_empty() {
        log::warn!(
            "operating point is inadmissible on {} edge(s); largest spread {:.3} rad",
            bad.len(),
            bad.iter().map(|b| b.2).fold(0.0, f64::max)
        );
    }
    l
}

/// The same Laplacian as a linear function of the lifted `E = e eᴴ`.
pub fn laplacian_from_lifted(e_lift: &CMatrix, kron: &KronModel) -> DMatrix<f64> {
    let s = kron.size();
    let mut l = DMatrix::zeros(s, s);
    for (n, m) in kron.edges() {
        let w = kron.edge_weight(n, m);
        l[(n, m)] = -e_lift[(n, m)].re * w;
        l[(m, n)] = -e_lift[(m, n)].re * w;
    }
    fill_diagonal(&mut l);
    l
}

/// How the inter-area band is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMode {
    /// The `K` smallest nonzero modes.
    Count(usize),
    /// Modes whose natural frequency `√λ` lies in `[lo, hi]` rad/s.
    Range { lo: f64, hi: f64 },
}

/// Spectrum of `L_M = M^{-1/2} L M^{-1/2}`.
#[derive(Debug, Clone)]
pub struct SwingSpectrum {
    pub l: DMatrix<f64>,
    pub l_m: DMatrix<f64>,
    /// Ascending.
    pub eigvals: DVector<f64>,
    /// Column `i` belongs to `eigvals[i]`; the first column is `α_1 M^{1/2} 1`.
    pub eigvecs: DMatrix<f64>,
    /// Zero-based mode indices of the band; never contains 0.
    pub band: Vec<usize>,
}

pub fn spectrum(l: &DMatrix<f64>, inertia: &DVector<f64>) -> Result<SwingSpectrum> {
    let s = l.nrows();
    if l.ncols() != s || inertia.len() != s {
        return Err(Error::InvalidArgument(format!(
            "Laplacian is {}x{} but there are {} inertias",
            l.nrows(),
            l.ncols(),
            inertia.len()
        )));
    }
    if inertia.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::InvalidArgument("inertias must be positive".into()));
    }
    let inv_sqrt = inertia.map(|m| 1.0 / m.sqrt());
    let mut l_m = DMatrix::from_fn(s, s, |i, j| inv_sqrt[i] * l[(i, j)] * inv_sqrt[j]);
    l_m = (&l_m + l_m.transpose()) * 0.5;
    if l_m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("Laplacian has non-finite entries".into()));
    }
    let eig = SymmetricEigen::try_new(l_m.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let eigvals = DVector::from_iterator(s, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigvecs = DMatrix::from_fn(s, s, |r, c| eig.eigenvectors[(r, order[c])]);
    if let Some(&min) = eigvals.as_slice().first() {
        if min < -NEG_EIG_TOL {
            return Err(Error::Eigen(format!(
                "Laplacian has negative eigenvalue {min:.3e}"
            )));
        }
    }
    if s > 0 {
        let sqrt_m = inertia.map(f64::sqrt);
        let u1 = &sqrt_m / sqrt_m.norm();
        let mut first = eigvecs.column_mut(0);
        if first.dot(&u1) < 0.0 {
            first.neg_mut();
        }
        let misalign = (&first - &u1).norm();
        if misalign > 1e-6 {
            log::warn!("lowest mode deviates from the uniform shift by {misalign:.2e}");
        }
    }
    Ok(SwingSpectrum {
        l: l.clone(),
        l_m,
        eigvals,
        eigvecs,
        band: Vec::new(),
    })
}

/// `α_1 M^{1/2} 1` with `α_1 = (1ᵀ M 1)^{-1/2}`.
pub fn uniform_mode(inertia: &DVector<f64>) -> DVector<f64> {
    let alpha = 1.0 / inertia.sum().sqrt();
    inertia.map(|m| alpha * m.sqrt())
}

pub fn select_band(spec: &SwingSpectrum, mode: BandMode) -> Result<Vec<usize>> {
    let s = spec.eigvals.len();
    match mode {
        BandMode::Count(k) => {
            if k + 1 > s {
                return Err(Error::InvalidArgument(format!(
                    "band of {k} modes requested but only {} nonzero modes exist",
                    s.saturating_sub(1)
                )));
            }
            Ok((1..=k).collect())
        }
        BandMode::Range { lo, hi } => {
            if !(lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "empty frequency range [{lo}, {hi}]"
                )));
            }
            let band: Vec<usize> = (1..s)
                .filter(|&i| {
                    let w = spec.eigvals[i].max(0.0).sqrt();
                    w >= lo && w <= hi
                })
                .collect();
            if band.is_empty() {
                log::warn!("no mode has natural frequency in [{lo}, {hi}] rad/s");
            }
            Ok(band)
        }
    }
}

impl SwingSpectrum {
    pub fn with_band(mut self, mode: BandMode) -> Result<Self> {
        self.band = select_band(&self, mode)?;
        Ok(self)
    }

    pub fn band_eigvals(&self) -> Vec<f64> {
        self.band.iter().map(|&i| self.eigvals[i]).collect()
    }
}

/// `|H(jω)|²` of `ÿ + γ ẏ + λ y = u`.
pub fn freq_response_sq(lambda: f64, gamma: f64, omega: f64) -> f64 {
    let a = lambda - omega * omega;
    1.0 / (a * a + gamma * gamma * omega * omega)
}

/// Peak location of `|H|²`, if the mode is underdamped enough to have one
/// away from zero.
pub fn resonant_frequency(lambda: f64, gamma: f64) -> Option<f64> {
    let d = lambda - gamma * gamma / 2.0;
    (d > 0.0).then(|| d.sqrt())
}

/// Largest value of `|H|²` over `ω ≥ 0`.
pub fn peak_response(lambda: f64, gamma: f64) -> f64 {
    match resonant_frequency(lambda, gamma) {
        Some(_) => 1.0 / (gamma * gamma * (lambda - gamma * gamma / 4.0)),
        None => freq_response_sq(lambda, gamma, 0.0),
    }
}

/// Impulse response `h(t)` of `ÿ + γ ẏ + λ y = δ(t)`.
pub fn impulse_response(lambda: f64, gamma: f64, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    let disc = lambda - gamma * gamma / 4.0;
    let decay = (-gamma * t / 2.0).exp();
    if disc > 1e-12 * lambda.max(1.0) {
        let wd = disc.sqrt();
        decay * (wd * t).sin() / wd
    } else if disc < -1e-12 * lambda.max(1.0) {
        let k = (-disc).sqrt();
        decay * (k * t).sinh() / k
    } else {
        decay * t
    }
}

/// Stationary variance `1/(2λγ)` of a mode driven by unit white noise.
pub fn eigenstate_variance(lambda: f64, gamma: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mode with eigenvalue {lambda} is not asymptotically stable"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument("damping ratio must be positive".into()));
    }
    Ok(1.0 / (2.0 * lambda * gamma))
}

/// `f_y = (1/2γ) Σ_{i∈ℰ} 1/λ_i`.
pub fn stability_metric(spec: &SwingSpectrum, gamma: f64) -> Result<f64> {
    metric_from_eigvals(&spec.band_eigvals(), gamma)
}

pub fn metric_from_eigvals(eigvals: &[f64], gamma: f64) -> Result<f64> {
    eigvals
        .iter()
        .map(|&l| eigenstate_variance(l, gamma))
        .sum()
}

/// Bounds on the angle-domain metric from the extreme inertias.
pub fn f_delta_bounds(f_y: f64, inertia: &DVector<f64>) -> (f64, f64) {
    let max = inertia.max();
    let min = inertia.min();
    (f_y / max.sqrt(), f_y / min.sqrt())
}

/// Writes `mode_index,lambda,omega,H2`; mode indices are 1-based.
pub fn write_freqresp_csv<W: Write>(
    mut w: W,
    spec: &SwingSpectrum,
    modes: &[usize],
    gamma: f64,
    omegas: &[f64],
) -> std::io::Result<()> {
    writeln!(w, "mode_index,lambda,omega,H2")?;
    for &i in modes {
        let lambda = spec.eigvals[i];
        for &om in omegas {
            writeln!(
                w,
                "{},{},{},{}",
                i + 1,
                lambda,
                om,
                freq_response_sq(lambda, gamma, om)
            )?;
        }
    }
    Ok(())
}
