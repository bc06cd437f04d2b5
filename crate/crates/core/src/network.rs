//! Bus admittance matrix, Kron reduction onto the synchronous buses and the
//! Hermitian forms of the power-flow quantities.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::casefile::{Branch, DynamicParams, RawCase};
use crate::{CMatrix, CVector, Error, Result, C64};

/// Couplings with `|Im Γ_nm|` below this get no effective edge.
pub const EDGE_THRESHOLD: f64 = 1e-9;

/// Reciprocal condition number below which a block is reported singular.
const RCOND_MIN: f64 = 1e-13;

/// Bus admittance matrix with row `i` belonging to bus `bus_order[i]`.
#[derive(Debug, Clone)]
pub struct AdmittanceModel {
    pub y: CMatrix,
    pub bus_order: Vec<u32>,
}

impl AdmittanceModel {
    pub fn n(&self) -> usize {
        self.bus_order.len()
    }

    pub fn index_of(&self, bus: u32) -> Option<usize> {
        self.bus_order.iter().position(|&b| b == bus)
    }

    /// Complex power `v_n conj((Y v)_n)` injected at every bus.
    pub fn injections(&self, v: &CVector) -> CVector {
        let i = &self.y * v;
        v.zip_map(&i, |vn, in_| vn * in_.conj())
    }
}

/// Two-port admittances `(y_ff, y_ft, y_tf, y_tt)` of a branch (pi model
/// with an off-nominal tap at the from end).
pub fn branch_admittance(br: &Branch) -> Result<(C64, C64, C64, C64)> {
    if br.r == 0.0 && br.x == 0.0 {
        return Err(Error::InvalidCase(format!(
            "branch {}-{} has zero impedance",
            br.from, br.to
        )));
    }
    let ys = C64::new(1.0, 0.0) / C64::new(br.r, br.x);
    let charging = C64::new(0.0, br.b_charging / 2.0);
    let tap = br.tap_ratio();
    let y_tt = ys + charging;
    Ok((y_tt / (tap * tap), -ys / tap, -ys / tap, y_tt))
}

pub fn build_ybus(case: &RawCase) -> Result<AdmittanceModel> {
    let n = case.buses.len();
    let bus_order: Vec<u32> = case.buses.iter().map(|b| b.id).collect();
    let idx = |id: u32| {
        bus_order
            .iter()
            .position(|&b| b == id)
            .ok_or_else(|| Error::InvalidCase(format!("unknown bus {id}")))
    };
    let mut y = CMatrix::zeros(n, n);
    for br in case.in_service_branches() {
        let (f, t) = (idx(br.from)?, idx(br.to)?);
        let (yff, yft, ytf, ytt) = branch_admittance(br)?;
        y[(f, f)] += yff;
        y[(f, t)] += yft;
        y[(t, f)] += ytf;
        y[(t, t)] += ytt;
    }
    for (i, b) in case.buses.iter().enumerate() {
        y[(i, i)] += C64::new(b.shunt_g, b.shunt_b) / case.base_mva;
    }
    Ok(AdmittanceModel { y, bus_order })
}

fn one_norm(m: &CMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse with a condition check.
fn checked_inverse(m: &CMatrix, what: &str) -> Result<CMatrix> {
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    let rcond = 1.0 / (one_norm(m) * one_norm(&inv));
    if !(rcond > RCOND_MIN) {
        return Err(Error::Singular(format!(
            "{what} (reciprocal condition {rcond:.2e})"
        )));
    }
    Ok(inv)
}

fn submatrix(m: &CMatrix, rows: &[usize], cols: &[usize]) -> CMatrix {
    CMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Synchronous-bus model obtained by eliminating zero-injection buses and
/// attaching each machine through its internal reactance.
#[derive(Debug, Clone)]
pub struct KronModel {
    pub sync_buses: Vec<u32>,
    /// Positions of the synchronous buses in the admittance matrix.
    pub sync_index: Vec<usize>,
    /// Positions of the eliminated buses in the admittance matrix.
    pub zero_index: Vec<usize>,
    /// `Γ = (Y_SS + Y_S − Y_SZ Y_ZZ⁻¹ Y_ZS)⁻¹`.
    pub gamma: CMatrix,
    pub internal_reactance: DVector<f64>,
    /// Effective reactances `γ_nm`; `+∞` on the diagonal and where no edge
    /// exists.
    pub eff_reactance: DMatrix<f64>,
}

impl KronModel {
    pub fn size(&self) -> usize {
        self.sync_buses.len()
    }

    /// Diagonal of `Y_S`, entries `1/(j x_n)`.
    pub fn ys_diag(&self) -> CVector {
        self.internal_reactance
            .map(|x| C64::new(1.0, 0.0) / C64::new(0.0, x))
    }

    /// `T = Γ Y_S`, so that `v_S = T e`.
    pub fn coupling(&self) -> CMatrix {
        let ys = self.ys_diag();
        let mut t = self.gamma.clone();
        for (j, mut col) in t.column_iter_mut().enumerate() {
            col *= ys[j];
        }
        t
    }

    pub fn has_edge(&self, n: usize, m: usize) -> bool {
        self.eff_reactance[(n, m)].is_finite()
    }

    /// Edge weight `1/γ_nm`, zero without an edge.
    pub fn edge_weight(&self, n: usize, m: usize) -> f64 {
        let g = self.eff_reactance[(n, m)];
        if g.is_finite() {
            1.0 / g
        } else {
            0.0
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let s = self.size();
        (0..s).flat_map(move |n| ((n + 1)..s).map(move |m| (n, m)))
            .filter(|&(n, m)| self.has_edge(n, m))
    }

    pub fn external_from_internal(&self, e: &CVector) -> CVector {
        self.coupling() * e
    }

    /// `P` (N×S, rows in bus order) with `v = P e`: `T` on the synchronous
    /// rows and `−Y_ZZ⁻¹ Y_ZS T` on the eliminated ones.
    pub fn voltage_map(&self, y: &AdmittanceModel) -> Result<CMatrix> {
        let t = self.coupling();
        let mut p = CMatrix::zeros(y.n(), self.size());
        for (k, &row) in self.sync_index.iter().enumerate() {
            p.row_mut(row).copy_from(&t.row(k));
        }
        if !self.zero_index.is_empty() {
            let y_zz = submatrix(&y.y, &self.zero_index, &self.zero_index);
            let y_zs = submatrix(&y.y, &self.zero_index, &self.sync_index);
            let v_z = y_zz
                .lu()
                .solve(&(y_zs * &t))
                .ok_or_else(|| Error::Singular("zero-injection block Y_ZZ".into()))?;
            for (k, &row) in self.zero_index.iter().enumerate() {
                p.row_mut(row).copy_from(&(-v_z.row(k)));
            }
        }
        Ok(p)
    }

    /// Internal voltages `e = T⁻¹ v_S`.
    pub fn internal_from_external(&self, v_sync: &CVector) -> Result<CVector> {
        self.coupling()
            .lu()
            .solve(v_sync)
            .ok_or_else(|| Error::Singular("Kron coupling Γ·Y_S".into()))
    }
}

pub fn kron_reduce(
    y: &AdmittanceModel,
    dyn_params: &DynamicParams,
    sync: &[u32],
) -> Result<KronModel> {
    let sync_index = sync
        .iter()
        .map(|&b| {
            y.index_of(b)
                .ok_or_else(|| Error::InvalidArgument(format!("synchronous bus {b} not in Y")))
        })
        .collect::<Result<Vec<_>>>()?;
    if sync_index.is_empty() {
        return Err(Error::InvalidArgument("no synchronous buses".into()));
    }
    let zero_index: Vec<usize> = (0..y.n()).filter(|i| !sync_index.contains(i)).collect();
    let x = dyn_params.reactance_vector(sync)?;

    let mut reduced = submatrix(&y.y, &sync_index, &sync_index);
    for (k, &xn) in x.iter().enumerate() {
        reduced[(k, k)] += C64::new(1.0, 0.0) / C64::new(0.0, xn);
    }
    if !zero_index.is_empty() {
        let y_sz = submatrix(&y.y, &sync_index, &zero_index);
        let y_zs = submatrix(&y.y, &zero_index, &sync_index);
        let y_zz = submatrix(&y.y, &zero_index, &zero_index);
        let y_zz_inv = checked_inverse(&y_zz, "zero-injection block Y_ZZ")?;
        reduced -= y_sz * y_zz_inv * y_zs;
    }
    let gamma = checked_inverse(&reduced, "Kron-reduced admittance")?;

    let s = sync.len();
    let mut eff = DMatrix::from_element(s, s, f64::INFINITY);
    for n in 0..s {
        for m in 0..s {
            if n == m {
                continue;
            }
            let im = gamma[(n, m)].im;
            if im.abs() <= EDGE_THRESHOLD {
                continue;
            }
            let g = x[n] * x[m] / im;
            if g <= 0.0 {
                return Err(Error::Inadmissible(format!(
                    "effective reactance between buses {} and {} is {g:.4e}",
                    sync[n], sync[m]
                )));
            }
            eff[(n, m)] = g;
        }
    }
    // Γ is symmetric for reciprocal networks; average out roundoff.
    for n in 0..s {
        for m in (n + 1)..s {
            let avg = 0.5 * (eff[(n, m)] + eff[(m, n)]);
            eff[(n, m)] = avg;
            eff[(m, n)] = avg;
        }
    }

    Ok(KronModel {
        sync_buses: sync.to_vec(),
        sync_index,
        zero_index,
        gamma,
        internal_reactance: x,
        eff_reactance: eff,
    })
}

/// Hermitian matrices whose forms `vᴴ M v` give injections, squared voltage
/// magnitudes and squared from-end branch currents.
#[derive(Debug, Clone)]
pub struct QuadraticForms {
    pub m_p: Vec<CMatrix>,
    pub m_q: Vec<CMatrix>,
    pub m_v: Vec<CMatrix>,
    /// `(index into case.branches, M_i)` for every in-service branch.
    pub m_i: Vec<(usize, CMatrix)>,
}

/// Vector `a` with from-end current `ĩ = aᴴ v`.
pub fn branch_current_vector(y: &AdmittanceModel, br: &Branch) -> Result<CVector> {
    let (f, t) = (
        y.index_of(br.from)
            .ok_or_else(|| Error::InvalidCase(format!("unknown bus {}", br.from)))?,
        y.index_of(br.to)
            .ok_or_else(|| Error::InvalidCase(format!("unknown bus {}", br.to)))?,
    );
    let (yff, yft, _, _) = branch_admittance(br)?;
    let mut a = CVector::zeros(y.n());
    a[f] += yff.conj();
    a[t] += yft.conj();
    Ok(a)
}

pub fn quadratic_forms(y: &AdmittanceModel, case: &RawCase) -> Result<QuadraticForms> {
    let n = y.n();
    let half = C64::new(0.5, 0.0);
    let neg_half_j = C64::new(0.0, -0.5);
    let mut m_p = Vec::with_capacity(n);
    let mut m_q = Vec::with_capacity(n);
    let mut m_v = Vec::with_capacity(n);
    for k in 0..n {
        // Φ_k = e_k e_kᵀ Y keeps row k of Y.
        let mut phi = CMatrix::zeros(n, n);
        phi.row_mut(k).copy_from(&y.y.row(k));
        let phi_h = phi.adjoint();
        m_p.push((&phi_h + &phi) * half);
        m_q.push((&phi_h - &phi) * neg_half_j);
        let mut ind = CMatrix::zeros(n, n);
        ind[(k, k)] = C64::new(1.0, 0.0);
        m_v.push(ind);
    }
    let mut m_i = Vec::new();
    for (k, br) in case.branches.iter().enumerate().filter(|(_, b)| b.status) {
        let a = branch_current_vector(y, br)?;
        m_i.push((k, &a * a.adjoint()));
    }
    Ok(QuadraticForms { m_p, m_q, m_v, m_i })
}

/// `vᴴ M v`, real for Hermitian `M`.
pub fn hermitian_form(m: &CMatrix, v: &CVector) -> f64 {
    (v.adjoint() * m * v)[(0, 0)].re
}

/// Writes `row,col,re,im` for every nonzero entry, 1-based indices.
pub fn write_complex_csv<W: Write>(mut w: W, m: &CMatrix) -> std::io::Result<()> {
    writeln!(w, "row,col,re,im")?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            if z != C64::new(0.0, 0.0) {
                writeln!(w, "{},{},{},{}", i + 1, j + 1, z.re, z.im)?;
            }
        }
    }
    Ok(())
}

/// Writes the finite effective reactances in the same layout.
pub fn write_reactance_csv<W: Write>(mut w: W, kron: &KronModel) -> std::io::Result<()> {
    writeln!(w, "row,col,re,im")?;
    let s = kron.size();
    for i in 0..s {
        for j in 0..s {
            let g = kron.eff_reactance[(i, j)];
            if g.is_finite() {
                writeln!(w, "{},{},{},0", i + 1, j + 1, g)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::casefile::{parse_matpower, Bus, BusType, Generator};
    use std::collections::BTreeMap;

    fn bus(id: u32, kind: BusType, p: f64) -> Bus {
        Bus {
            id,
            kind,
            p_load: p,
            q_load: 0.0,
            shunt_g: 0.0,
            shunt_b: 0.0,
            v_min: 0.9,
            v_max: 1.1,
        }
    }

    fn line(from: u32, to: u32, r: f64, x: f64, b: f64) -> Branch {
        Branch {
            from,
            to,
            r,
            x,
            b_charging: b,
            rate: 0.0,
            tap: 0.0,
            status: true,
        }
    }

    fn gen(bus: u32) -> Generator {
        Generator {
            bus,
            p_min: 0.0,
            p_max: 100.0,
            q_min: -100.0,
            q_max: 100.0,
            status: true,
        }
    }

    fn case(buses: Vec<Bus>, branches: Vec<Branch>, gens: Vec<Generator>) -> RawCase {
        RawCase {
            base_mva: 100.0,
            buses,
            branches,
            gens,
            costs: vec![],
        }
    }

    fn dyn_with_x(x: &[(u32, f64)]) -> DynamicParams {
        let xs: BTreeMap<u32, f64> = x.iter().copied().collect();
        let ones: BTreeMap<u32, f64> = x.iter().map(|&(b, _)| (b, 1.0)).collect();
        DynamicParams {
            inertia: ones.clone(),
            damping: ones,
            internal_reactance: xs,
            gamma: 1.0,
        }
    }

    #[test]
    fn two_bus_line() {
        let c = case(
            vec![bus(1, BusType::Ref, 0.0), bus(2, BusType::PQ, 10.0)],
            vec![line(1, 2, 0.01, 0.1, 0.0)],
            vec![gen(1)],
        );
        let y = build_ybus(&c).unwrap();
        let ys = C64::new(1.0, 0.0) / C64::new(0.01, 0.1);
        assert!((y.y[(0, 0)] - ys).norm() < 1e-14);
        assert!((y.y[(1, 1)] - ys).norm() < 1e-14);
        assert!((y.y[(0, 1)] + ys).norm() < 1e-14);
        assert!((y.y[(1, 0)] + ys).norm() < 1e-14);
    }

    #[test]
    fn charging_adds_half_susceptance_to_both_ends() {
        let b = 0.3;
        let plain = case(
            vec![bus(1, BusType::Ref, 0.0), bus(2, BusType::PQ, 10.0)],
            vec![line(1, 2, 0.01, 0.1, 0.0)],
            vec![gen(1)],
        );
        let mut charged = plain.clone();
        charged.branches[0].b_charging = b;
        let y0 = build_ybus(&plain).unwrap().y;
        let y1 = build_ybus(&charged).unwrap().y;
        let d = &y1 - &y0;
        assert!((d[(0, 0)] - C64::new(0.0, b / 2.0)).norm() < 1e-14);
        assert!((d[(1, 1)] - C64::new(0.0, b / 2.0)).norm() < 1e-14);
        assert!(d[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn zero_impedance_branch_is_rejected() {
        let c = case(
            vec![bus(1, BusType::Ref, 0.0), bus(2, BusType::PQ, 10.0)],
            vec![line(1, 2, 0.0, 0.0, 0.0)],
            vec![gen(1)],
        );
        assert!(build_ybus(&c).is_err());
    }

    #[test]
    fn ybus_is_symmetric_with_taps() {
        let c = parse_matpower(crate::casefile::fixtures::THREE_BUS).unwrap();
        let y = build_ybus(&c).unwrap().y;
        assert!((&y - y.transpose()).norm() < 1e-14);
    }

    #[test]
    fn reduction_of_nothing() {
        let c = case(
            vec![bus(1, BusType::Ref, 0.0), bus(2, BusType::PQ, 10.0)],
            vec![line(1, 2, 0.0, 0.2, 0.0)],
            vec![gen(1)],
        );
        let y = build_ybus(&c).unwrap();
        let d = dyn_with_x(&[(1, 0.05), (2, 0.1)]);
        let k = kron_reduce(&y, &d, &[1, 2]).unwrap();
        let mut direct = y.y.clone();
        direct[(0, 0)] += C64::new(0.0, -1.0 / 0.05);
        direct[(1, 1)] += C64::new(0.0, -1.0 / 0.1);
        let expect = direct.try_inverse().unwrap();
        assert!((&k.gamma - expect).norm() < 1e-12);
        // Series path: 0.05 + 0.2 + 0.1.
        assert!((k.eff_reactance[(0, 1)] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn star_center_is_eliminated_into_series_reactance() {
        let (x, x1, x2) = (0.1, 0.02, 0.03);
        let c = case(
            vec![
                bus(1, BusType::Ref, 0.0),
                bus(2, BusType::PQ, 0.0),
                bus(3, BusType::PQ, 50.0),
            ],
            vec![line(1, 2, 0.0, x, 0.0), line(2, 3, 0.0, x, 0.0)],
            vec![gen(1)],
        );
        assert_eq!(c.zero_injection_buses(), vec![2]);
        let y = build_ybus(&c).unwrap();
        let d = dyn_with_x(&[(1, x1), (3, x2)]);
        let k = kron_reduce(&y, &d, &c.synchronous_buses()).unwrap();
        assert_eq!(k.zero_index, vec![1]);
        assert!((k.eff_reactance[(0, 1)] - (x1 + x2 + 2.0 * x)).abs() < 1e-12);
        assert!((k.eff_reactance[(1, 0)] - k.eff_reactance[(0, 1)]).abs() < 1e-15);
        assert!(!k.has_edge(0, 0));
    }

    #[test]
    fn internal_voltages_invert_coupling() {
        let c = parse_matpower(crate::casefile::fixtures::THREE_BUS).unwrap();
        let y = build_ybus(&c).unwrap();
        let d = dyn_with_x(&[(1, 0.05), (2, 0.07), (3, 0.2)]);
        let k = kron_reduce(&y, &d, &[1, 2, 3]).unwrap();
        let e = CVector::from_vec(vec![
            C64::from_polar(1.05, 0.1),
            C64::from_polar(1.02, 0.05),
            C64::from_polar(0.98, -0.1),
        ]);
        let v = k.external_from_internal(&e);
        let back = k.internal_from_external(&v).unwrap();
        assert!((back - e).norm() < 1e-12);
    }

    #[test]
    fn voltage_map_zeroes_eliminated_injections() {
        let (x, x1, x2) = (0.1, 0.02, 0.03);
        let c = case(
            vec![
                bus(1, BusType::Ref, 0.0),
                bus(2, BusType::PQ, 0.0),
                bus(3, BusType::PQ, 50.0),
            ],
            vec![line(1, 2, 0.01, x, 0.02), line(2, 3, 0.0, x, 0.0)],
            vec![gen(1)],
        );
        let y = build_ybus(&c).unwrap();
        let d = dyn_with_x(&[(1, x1), (3, x2)]);
        let k = kron_reduce(&y, &d, &c.synchronous_buses()).unwrap();
        let p = k.voltage_map(&y).unwrap();
        let e = CVector::from_vec(vec![C64::from_polar(1.0, 0.2), C64::from_polar(1.1, -0.1)]);
        let v = &p * &e;
        let i = &y.y * &v;
        assert!(i[1].norm() < 1e-12);
        // Synchronous buses draw exactly what flows in through x_n.
        for (row, (&bus_idx, xn)) in k.sync_index.iter().zip([x1, x2]).enumerate() {
            let through = (e[row] - v[bus_idx]) / C64::new(0.0, xn);
            assert!((i[bus_idx] - through).norm() < 1e-12);
        }
    }

    #[test]
    fn two_bus_reactance_flow_is_sine_over_x() {
        let x = 0.25;
        let c = case(
            vec![bus(1, BusType::Ref, 0.0), bus(2, BusType::PQ, 10.0)],
            vec![line(1, 2, 0.0, x, 0.0)],
            vec![gen(1)],
        );
        let y = build_ybus(&c).unwrap();
        let f = quadratic_forms(&y, &c).unwrap();
        for theta in [0.0, 0.1, 0.4, -0.3] {
            let v = CVector::from_vec(vec![C64::new(1.0, 0.0), C64::from_polar(1.0, -theta)]);
            let p1 = hermitian_form(&f.m_p[0], &v);
            assert!((p1 - f64::sin(theta) / x).abs() < 1e-12);
        }
    }

    #[test]
    fn voltage_form_is_indicator() {
        let c = parse_matpower(crate::casefile::fixtures::THREE_BUS).unwrap();
        let y = build_ybus(&c).unwrap();
        let f = quadratic_forms(&y, &c).unwrap();
        let v = CVector::from_vec(vec![
            C64::new(1.0, 0.2),
            C64::new(0.9, -0.1),
            C64::new(1.1, 0.05),
        ]);
        for k in 0..3 {
            assert!((hermitian_form(&f.m_v[k], &v) - v[k].norm_sqr()).abs() < 1e-15);
            let tr: C64 = f.m_v[k].trace();
            assert_eq!(tr, C64::new(1.0, 0.0));
        }
    }

    #[test]
    fn forms_are_hermitian() {
        let c = parse_matpower(crate::casefile::fixtures::THREE_BUS).unwrap();
        let y = build_ybus(&c).unwrap();
        let f = quadratic_forms(&y, &c).unwrap();
        let all = f
            .m_p
            .iter()
            .chain(&f.m_q)
            .chain(&f.m_v)
            .chain(f.m_i.iter().map(|(_, m)| m));
        for m in all {
            assert!((m - m.adjoint()).norm() < 1e-12);
        }
        assert_eq!(f.m_i.len(), 3);
    }

    #[test]
    fn csv_dump_lists_nonzeros() {
        let c = parse_matpower(crate::casefile::fixtures::THREE_BUS).unwrap();
        let y = build_ybus(&c).unwrap();
        let mut buf = Vec::new();
        write_complex_csv(&mut buf, &y.y).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("row,col,re,im"));
        assert_eq!(text.lines().count(), 1 + 9);
    }
}
