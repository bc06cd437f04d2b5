//! Exactness checks for the relaxation and recovery of a physical operating
//! point from its lifted matrices.

use nalgebra::{DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::casefile::RawCase;
use crate::dynamics::{laplacian_from_angles, spectrum, stability_metric, OperatingPoint};
use crate::network::{AdmittanceModel, KronModel, QuadraticForms};
use crate::sdp::TradeoffConfig;
use crate::{CMatrix, CVector, Error, Result, C64};

/// Largest `λ₂/λ₁` accepted as rank one.
pub const EXACTNESS_THRESHOLD: f64 = 1e-3;

/// Limit excursions smaller than this (pu) are not reported.
pub const VIOLATION_TOL: f64 = 1e-5;

/// Eigenvalues of a Hermitian matrix, descending, with the leading
/// eigenvector.
fn leading_eigen(x: &CMatrix) -> Result<(Vec<f64>, CVector)> {
    if x.nrows() != x.ncols() || x.nrows() == 0 {
        return Err(Error::InvalidArgument("expected a nonempty square matrix".into()));
    }
    let h = (x + x.adjoint()).map(|z| z * 0.5);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if !vals.iter().all(|v| v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    let u = eig.eigenvectors.column(order[0]).into_owned();
    Ok((vals, u))
}

/// `λ₂/λ₁` of a Hermitian PSD matrix, eigenvalues sorted descending.
pub fn rank1_ratio(x: &CMatrix) -> Result<f64> {
    let (vals, _) = leading_eigen(x)?;
    let top = vals[0];
    if !(top > 0.0) {
        return Err(Error::InvalidArgument(
            "matrix has no positive eigenvalue".into(),
        ));
    }
    let bottom = *vals.last().unwrap_or(&0.0);
    if bottom < -1e-6 * top {
        return Err(Error::InvalidArgument(format!(
            "matrix is not positive semidefinite (λ_min/λ_max = {:.3e})",
            bottom / top
        )));
    }
    Ok(vals.get(1).map_or(0.0, |&l| l.max(0.0) / top))
}

/// Multiplies `v` by a unit phase so that `v[reference]` is real positive.
pub fn rotate_to_reference(v: &CVector, reference: usize) -> CVector {
    let r = v[reference];
    if r.norm() == 0.0 {
        return v.clone();
    }
    let phase = r.conj() / r.norm();
    v.map(|z| z * phase)
}

/// `√λ₁ u₁` with the reference entry rotated to angle zero, whatever the rank.
pub fn best_rank_one(x: &CMatrix, reference: usize) -> Result<CVector> {
    let (vals, u) = leading_eigen(x)?;
    if reference >= x.nrows() {
        return Err(Error::InvalidArgument("reference index out of range".into()));
    }
    let scaled = u.map(|z| z * vals[0].max(0.0).sqrt());
    Ok(rotate_to_reference(&scaled, reference))
}

/// Recovers `v` from `V = v vᴴ`; refuses when `λ₂/λ₁` exceeds `threshold`.
pub fn extract_voltages(v_lift: &CMatrix, reference: usize, threshold: f64) -> Result<CVector> {
    let ratio = rank1_ratio(v_lift)?;
    if ratio > threshold {
        return Err(Error::Inexact { ratio, threshold });
    }
    best_rank_one(v_lift, reference)
}

/// One constraint of the original problem that the recovered point breaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitViolation {
    /// `voltage_max`, `voltage_min`, `p_max`, `p_min`, `q_max`, `q_min` or
    /// `line_current`.
    pub kind: String,
    /// Bus id, or the 0-based branch index for line currents.
    pub element: u32,
    pub value: f64,
    pub limit: f64,
    /// Distance beyond the limit, in the units of `value`.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactnessReport {
    #[serde(rename = "rank_ratio_V")]
    pub rank_ratio_v: f64,
    #[serde(rename = "rank_ratio_E")]
    pub rank_ratio_e: f64,
    /// Bus voltages as `[re, im]` pairs in bus order.
    pub recovered_v: Vec<[f64; 2]>,
    /// Internal voltages as `[re, im]` pairs in synchronous-bus order.
    pub recovered_e: Vec<[f64; 2]>,
    /// Largest of the power balance and internal/external coupling residuals.
    pub max_pf_residual: f64,
    pub limit_violations: Vec<LimitViolation>,
    /// Band energy from the Laplacian of the recovered angles and magnitudes.
    pub f_y_recovered: Option<f64>,
    /// Band energy from the Laplacian of the lifted `E`.
    pub f_y_lifted: Option<f64>,
    /// Stability term of the conic objective.
    pub f_y_sdp: Option<f64>,
    /// Cost of the generation implied by the recovered voltages.
    pub cost_recovered: f64,
    /// The rank ratio of `V` is below the exactness threshold.
    pub exact: bool,
}

impl ExactnessReport {
    pub fn v(&self) -> CVector {
        CVector::from_iterator(self.recovered_v.len(), self.recovered_v.iter().map(|p| C64::new(p[0], p[1])))
    }

    pub fn e(&self) -> CVector {
        CVector::from_iterator(self.recovered_e.len(), self.recovered_e.iter().map(|p| C64::new(p[0], p[1])))
    }

    /// Largest pairwise relative difference between the available `f_y`
    /// values, `None` when fewer than two are present.
    pub fn f_y_spread(&self) -> Option<f64> {
        let vals: Vec<f64> = [self.f_y_sdp, self.f_y_lifted, self.f_y_recovered]
            .into_iter()
            .flatten()
            .collect();
        if vals.len() < 2 {
            return None;
        }
        let mut worst: f64 = 0.0;
        for i in 0..vals.len() {
            for j in i + 1..vals.len() {
                let scale = vals[i].abs().max(vals[j].abs());
                if scale > 0.0 {
                    worst = worst.max((vals[i] - vals[j]).abs() / scale);
                }
            }
        }
        Some(worst)
    }
}

fn pairs(v: &CVector) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

/// Network data the checks need.
#[derive(Debug, Clone, Copy)]
pub struct NetworkRefs<'a> {
    pub case: &'a RawCase,
    pub y: &'a AdmittanceModel,
    pub kron: &'a KronModel,
    pub forms: &'a QuadraticForms,
    pub inertia: &'a DVector<f64>,
}

/// Generation at each synchronous bus implied by the bus voltages.
pub fn implied_generation(net: NetworkRefs<'_>, v: &CVector) -> (DVector<f64>, DVector<f64>) {
    let s_inj = net.y.injections(v);
    let s = net.kron.size();
    let mut p = DVector::zeros(s);
    let mut q = DVector::zeros(s);
    for (sn, &idx) in net.kron.sync_index.iter().enumerate() {
        let bus = &net.case.buses[idx];
        p[sn] = s_inj[idx].re + net.case.p_load_pu(bus);
        q[sn] = s_inj[idx].im + net.case.q_load_pu(bus);
    }
    (p, q)
}

/// Checks a recovered `(v, e)` against the scalar constraints of the original
/// problem. Violations are reported, never raised.
pub fn verify_dispatch(
    v: &CVector,
    e: &CVector,
    net: NetworkRefs<'_>,
    cfg: &TradeoffConfig,
) -> ExactnessReport {
    let case = net.case;
    let kron = net.kron;
    let mut residual: f64 = 0.0;
    let mut violations = Vec::new();
    let mut flag = |kind: &str, element: u32, value: f64, limit: f64, over: f64| {
        if over > VIOLATION_TOL {
            violations.push(LimitViolation {
                kind: kind.into(),
                element,
                value,
                limit,
                magnitude: over,
            });
        }
    };

    // Zero-injection buses must balance exactly; synchronous buses define
    // the generation checked against the limits below.
    let s_inj = net.y.injections(v);
    for &idx in &kron.zero_index {
        let bus = &case.buses[idx];
        residual = residual
            .max((s_inj[idx].re + case.p_load_pu(bus)).abs())
            .max((s_inj[idx].im + case.q_load_pu(bus)).abs());
    }
    let v_s = CVector::from_iterator(kron.size(), kron.sync_index.iter().map(|&i| v[i]));
    let coupling = &v_s - kron.external_from_internal(e);
    residual = residual.max(coupling.camax());

    let (p_g, q_g) = implied_generation(net, v);
    let mut cost = 0.0;
    for (sn, &bus) in kron.sync_buses.iter().enumerate() {
        let (cp, cq) = case.cost_at(bus);
        cost += cp * p_g[sn] + cq * q_g[sn];
        match case.gen_limits_pu(bus) {
            Some(g) => {
                flag("p_max", bus, p_g[sn], g.p_max, p_g[sn] - g.p_max);
                flag("p_min", bus, p_g[sn], g.p_min, g.p_min - p_g[sn]);
                flag("q_max", bus, q_g[sn], g.q_max, q_g[sn] - g.q_max);
                flag("q_min", bus, q_g[sn], g.q_min, g.q_min - q_g[sn]);
            }
            None => residual = residual.max(p_g[sn].abs()).max(q_g[sn].abs()),
        }
    }

    for (i, bus) in case.buses.iter().enumerate() {
        let mag = v[i].norm();
        flag("voltage_max", bus.id, mag, bus.v_max, mag - bus.v_max);
        flag("voltage_min", bus.id, mag, bus.v_min, bus.v_min - mag);
    }
    for (bi, m) in &net.forms.m_i {
        let br = &case.branches[*bi];
        if br.rate > 0.0 {
            let cap = br.rate / case.base_mva;
            let current = crate::network::hermitian_form(m, v).max(0.0).sqrt();
            flag("line_current", *bi as u32, current, cap, current - cap);
        }
    }

    let f_y_recovered = OperatingPoint::from_internal(e).ok().and_then(|op| {
        let l = laplacian_from_angles(&op, kron);
        band_energy(&l, net.inertia, cfg)
    });

    ExactnessReport {
        rank_ratio_v: 0.0,
        rank_ratio_e: 0.0,
        recovered_v: pairs(v),
        recovered_e: pairs(e),
        max_pf_residual: residual,
        limit_violations: violations,
        f_y_recovered,
        f_y_lifted: None,
        f_y_sdp: None,
        cost_recovered: cost,
        exact: true,
    }
}

/// `f_y` for the band of `cfg` on Laplacian `l`, `None` if the spectrum is
/// unusable.
pub fn band_energy(l: &nalgebra::DMatrix<f64>, inertia: &DVector<f64>, cfg: &TradeoffConfig) -> Option<f64> {
    let spec = spectrum(l, inertia).ok()?.with_band(cfg.band).ok()?;
    stability_metric(&spec, cfg.gamma).ok()
}

/// Judges a solved relaxation: rank ratios of `V` and `E`, best rank-one
/// recovery and the scalar checks of [`verify_dispatch`].
pub fn assess(
    v_lift: &CMatrix,
    e_lift: &CMatrix,
    net: NetworkRefs<'_>,
    cfg: &TradeoffConfig,
    threshold: f64,
) -> Result<ExactnessReport> {
    let rank_ratio_v = rank1_ratio(v_lift)?;
    let rank_ratio_e = rank1_ratio(e_lift)?;
    let ref_bus = net
        .case
        .reference_bus()
        .and_then(|b| net.y.index_of(b))
        .ok_or_else(|| Error::InvalidCase("no reference bus".into()))?;
    let v = best_rank_one(v_lift, ref_bus)?;
    // E fixes e only up to a global phase; pick the one that best matches
    // v on the synchronous buses so the coupling residual is meaningful.
    let e0 = best_rank_one(e_lift, 0)?;
    let v_s = CVector::from_iterator(net.kron.size(), net.kron.sync_index.iter().map(|&i| v[i]));
    let overlap = net.kron.external_from_internal(&e0).dotc(&v_s);
    let e = if overlap.norm() > 0.0 {
        e0.map(|z| z * overlap / overlap.norm())
    } else {
        e0
    };
    let mut report = verify_dispatch(&v, &e, net, cfg);
    report.rank_ratio_v = rank_ratio_v;
    report.rank_ratio_e = rank_ratio_e;
    report.exact = rank_ratio_v <= threshold;
    let l = crate::dynamics::laplacian_from_lifted(e_lift, net.kron);
    report.f_y_lifted = band_energy(&l, net.inertia, cfg);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn ratio_of_rank_one_and_identity() {
        let v = CVector::from_vec(vec![c(1.0, 0.2), c(-0.3, 0.9), c(0.5, -0.5)]);
        let x = &v * v.adjoint();
        assert!(rank1_ratio(&x).unwrap() < 1e-12);
        let i = CMatrix::identity(2, 2);
        assert!((rank1_ratio(&i).unwrap() - 1.0).abs() < 1e-14);
        assert!(rank1_ratio(&CMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn extraction_inverts_outer_product() {
        let v = CVector::from_vec(vec![c(1.02, 0.1), c(0.97, -0.2), c(1.0, 0.05)]);
        let x = &v * v.adjoint();
        let got = extract_voltages(&x, 1, EXACTNESS_THRESHOLD).unwrap();
        assert!(got[1].im.abs() < 1e-12 && got[1].re > 0.0);
        let phase = v[1] / v[1].norm();
        let want = v.map(|z| z / phase);
        assert!((got - want).camax() < 1e-9);
    }

    #[test]
    fn identity_is_refused() {
        let err = extract_voltages(&CMatrix::identity(2, 2), 0, EXACTNESS_THRESHOLD).unwrap_err();
        assert!(matches!(err, Error::Inexact { ratio, .. } if (ratio - 1.0).abs() < 1e-12));
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let x = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.5, 0.0)]);
        assert!(rank1_ratio(&x).is_err());
    }
}
