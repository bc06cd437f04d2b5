//! The stability-aware OPF relaxation.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{build_lemma1_block, BlockShape, ConeProgram, LinExpr};
use crate::casefile::{DynamicParams, RawCase};
use crate::dynamics::BandMode;
use crate::network::{AdmittanceModel, KronModel, QuadraticForms};
use crate::{CMatrix, CVector, Error, Result, C64};

/// Relative size below which Kron coupling coefficients are dropped.
const COUPLING_DROP: f64 = 1e-9;

/// How the lifted bus voltages enter the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// `V = P E Pᴴ` with `v = P e` from the network equations; `E ⪰ 0` is the
    /// only lifted variable. Tighter than `Full` and far cheaper to solve.
    #[default]
    Reduced,
    /// `V` over all buses as its own PSD variable, zero injections pinned by
    /// trace constraints and `V_SS = T E Tᴴ` imposed entrywise.
    Full,
}

/// One point on the cost/stability trade-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffConfig {
    pub mu: f64,
    pub band: BandMode,
    pub gamma: f64,
    #[serde(default)]
    pub formulation: Formulation,
}

impl TradeoffConfig {
    pub fn new(mu: f64, k: usize, gamma: f64) -> Self {
        Self {
            mu,
            band: BandMode::Count(k),
            gamma,
            formulation: Formulation::default(),
        }
    }

    pub fn with_formulation(mut self, f: Formulation) -> Self {
        self.formulation = f;
        self
    }

    pub fn validate(&self) -> Result<usize> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::InvalidArgument(format!(
                "trade-off weight {} outside [0, 1]",
                self.mu
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument("damping ratio must be positive".into()));
        }
        match self.band {
            BandMode::Count(k) if k >= 1 => Ok(k),
            BandMode::Count(_) => Err(Error::InvalidArgument("band size must be at least 1".into())),
            BandMode::Range { .. } => Err(Error::InvalidArgument(
                "the relaxation needs a band size; frequency ranges are for analysis only".into(),
            )),
        }
    }
}

/// A built relaxation together with the data needed to read its solution.
#[derive(Debug, Clone)]
pub struct OpfProgram {
    pub program: ConeProgram,
    pub cfg: TradeoffConfig,
    pub bus_order: Vec<u32>,
    pub sync_buses: Vec<u32>,
    /// Inertias of the synchronous buses.
    pub inertia: DVector<f64>,
    /// Linear cost coefficients `(c_p, c_q)` per synchronous bus.
    pub costs: Vec<(f64, f64)>,
    /// `P` with `V = P E Pᴴ` in the reduced formulation.
    pub voltage_map: Option<CMatrix>,
}

impl OpfProgram {
    pub fn v(&self, x: &[f64]) -> Result<CMatrix> {
        match &self.voltage_map {
            Some(p) => {
                let e = self.e(x)?;
                Ok(p * e * p.adjoint())
            }
            None => self.program.hermitian_value("V", x),
        }
    }

    pub fn e(&self, x: &[f64]) -> Result<CMatrix> {
        self.program.hermitian_value("E", x)
    }

    pub fn p_g(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.program.vector_value("p_g", x)
    }

    pub fn q_g(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.program.vector_value("q_g", x)
    }

    /// Generation cost `Σ c_p p_g + c_q q_g` (pu power).
    pub fn cost_of(&self, p_g: &DVector<f64>, q_g: &DVector<f64>) -> f64 {
        self.costs
            .iter()
            .enumerate()
            .map(|(n, &(cp, cq))| cp * p_g[n] + cq * q_g[n])
            .sum()
    }

    /// Stability term `(tr Z + K s)/(2γ)` at `x`.
    pub fn stability_term(&self, x: &[f64]) -> Result<f64> {
        let z = self.program.symmetric_value("Z", x)?;
        let s = self.program.vector_value("s", x)?[0];
        let k = self.cfg.validate()? as f64;
        Ok((z.trace() + k * s) / (2.0 * self.cfg.gamma))
    }

    /// Side length of the real symmetric matrix carrying the lifted bus
    /// voltages (`2N` in the full formulation, `2S` in the reduced one).
    pub fn voltage_cone_dim(&self) -> usize {
        match self.program.block("V") {
            Ok(b) => b.embedded_dim(),
            Err(_) => self.program.block("E").map(|b| b.embedded_dim()).unwrap_or(0),
        }
    }
}

/// Zeroes entries far below the largest one, which are roundoff from the
/// products forming `Pᴴ M P`.
fn clean(mut m: CMatrix) -> CMatrix {
    let max = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = 1e-13 * max;
    for z in m.iter_mut() {
        if z.re.abs() <= tol {
            z.re = 0.0;
        }
        if z.im.abs() <= tol {
            z.im = 0.0;
        }
    }
    m
}

/// Assembles the relaxation. Bus and synchronous orderings follow `y` and
/// `kron`.
pub fn build_opf_sdp(
    case: &RawCase,
    y: &AdmittanceModel,
    kron: &KronModel,
    forms: &QuadraticForms,
    dyn_params: &DynamicParams,
    cfg: TradeoffConfig,
) -> Result<OpfProgram> {
    let k = cfg.validate()?;
    let n = y.n();
    let s = kron.size();
    if forms.m_p.len() != n || case.buses.len() != n {
        return Err(Error::Build(format!(
            "inconsistent sizes: {} buses, {} rows of Y, {} power forms",
            case.buses.len(),
            n,
            forms.m_p.len()
        )));
    }
    if kron.sync_index.iter().any(|&i| i >= n) {
        return Err(Error::Build("synchronous index outside the network".into()));
    }
    case.check_generation_limits()
        .map_err(|e| Error::Build(e.to_string()))?;
    for b in &case.buses {
        if b.v_min > b.v_max {
            return Err(Error::Build(format!(
                "bus {}: voltage window [{}, {}] is empty",
                b.id, b.v_min, b.v_max
            )));
        }
    }
    let inertia = dyn_params.inertia_vector(&kron.sync_buses)?;

    let mut p = ConeProgram::new();
    let full = cfg.formulation == Formulation::Full;
    let v = if full {
        Some(p.add_block("V", BlockShape::Hermitian(n))?)
    } else {
        None
    };
    let e = p.add_block("E", BlockShape::Hermitian(s))?;
    let l = p.add_block("L", BlockShape::Symmetric(s))?;

    // Z and s come from the stability block; add them before the generator
    // variables so the layout reads [V,] E, L, Z, s, p_g, q_g.
    let inv_sqrt_m = inertia.map(|m| 1.0 / m.sqrt());
    let (_, stab_term) = build_lemma1_block(
        &mut p,
        |i, j| l.sym(i, j).scaled(inv_sqrt_m[i] * inv_sqrt_m[j]),
        &inertia,
        k,
        cfg.gamma,
    )?;
    let pg = p.add_block("p_g", BlockShape::Vector(s))?;
    let qg = p.add_block("q_g", BlockShape::Vector(s))?;

    let pmap = if full { None } else { Some(kron.voltage_map(y)?) };
    // tr(V M) in terms of the decision variables.
    let form = |m: &CMatrix| -> LinExpr {
        match (&v, &pmap) {
            (Some(vb), _) => vb.trace_with(m),
            (None, Some(pm)) => e.trace_with(&clean(pm.adjoint() * m * pm)),
            (None, None) => unreachable!(),
        }
    };

    // Power balance. In the reduced formulation the eliminated buses carry
    // no injection for any E, so their rows vanish identically.
    let sync_pos = |bus_idx: usize| kron.sync_index.iter().position(|&i| i == bus_idx);
    let mut p_bal = Vec::with_capacity(n);
    let mut q_bal = Vec::with_capacity(n);
    for (i, bus) in case.buses.iter().enumerate() {
        let sn = sync_pos(i);
        if sn.is_none() && !full {
            continue;
        }
        let mut rp = form(&forms.m_p[i]);
        let mut rq = form(&forms.m_q[i]);
        rp.constant += case.p_load_pu(bus);
        rq.constant += case.q_load_pu(bus);
        if let Some(sn) = sn {
            rp.add_term(pg.offset + sn, -1.0);
            rq.add_term(qg.offset + sn, -1.0);
        }
        p_bal.push(rp);
        q_bal.push(rq);
    }
    p.add_zero("active balance", p_bal);
    p.add_zero("reactive balance", q_bal);

    // Generation limits; buses without a machine inject nothing.
    let mut fixed = Vec::new();
    let mut limits = Vec::new();
    let mut costs = Vec::with_capacity(s);
    for (sn, &bus) in kron.sync_buses.iter().enumerate() {
        costs.push(case.cost_at(bus));
        match case.gen_limits_pu(bus) {
            None => {
                fixed.push(pg.entry(sn));
                fixed.push(qg.entry(sn));
            }
            Some(g) => {
                for (var, lo, hi) in [(pg.entry(sn), g.p_min, g.p_max), (qg.entry(sn), g.q_min, g.q_max)] {
                    if lo == hi {
                        let mut r = var.clone();
                        r.constant = -lo;
                        fixed.push(r);
                        continue;
                    }
                    if lo.is_finite() {
                        let mut r = var.clone();
                        r.constant = -lo;
                        limits.push(r);
                    }
                    if hi.is_finite() {
                        let mut r = var.scaled(-1.0);
                        r.constant = hi;
                        limits.push(r);
                    }
                }
            }
        }
    }
    p.add_zero("fixed generation", fixed);
    p.add_nonneg("generation limits", limits);

    let mut window = Vec::with_capacity(2 * n);
    for (i, bus) in case.buses.iter().enumerate() {
        let vv = form(&forms.m_v[i]);
        let mut lo = vv.clone();
        lo.constant = -bus.v_min * bus.v_min;
        let mut hi = vv.scaled(-1.0);
        hi.constant = bus.v_max * bus.v_max;
        window.push(lo);
        window.push(hi);
    }
    p.add_nonneg("voltage window", window);

    let mut caps = Vec::new();
    for (bi, m) in &forms.m_i {
        let br = &case.branches[*bi];
        if br.rate > 0.0 {
            // Normalised by the squared cap: 1 − tr(V M_i)/cap² ≥ 0.
            let cap = br.rate / case.base_mva;
            let mut r = form(m).scaled(-1.0 / (cap * cap));
            r.constant = 1.0;
            caps.push(r);
        }
    }
    p.add_nonneg("line current", caps);

    if let Some(v) = &v {
        // V_SS = T E Tᴴ, real and imaginary parts of the upper triangle.
        let t = kron.coupling();
        let tmax = t.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        let drop = COUPLING_DROP * tmax;
        let mut coupling = Vec::with_capacity(s * s);
        for b in 0..s {
            for a in 0..=b {
                let mut re = LinExpr::default();
                let mut im = LinExpr::default();
                let vab = v.herm(kron.sync_index[a], kron.sync_index[b]);
                re.add_scaled(&vab.re, -1.0);
                im.add_scaled(&vab.im, -1.0);
                for col in 0..s {
                    for row in 0..=col {
                        let ekl = e.herm(row, col);
                        if row == col {
                            let c = t[(a, row)] * t[(b, row)].conj();
                            push_coef(&mut re, &mut im, &ekl.re, c, drop);
                        } else {
                            let x1 = t[(a, row)] * t[(b, col)].conj();
                            let x2 = t[(a, col)] * t[(b, row)].conj();
                            push_coef(&mut re, &mut im, &ekl.re, x1 + x2, drop);
                            push_coef(&mut re, &mut im, &ekl.im, C64::new(0.0, 1.0) * (x1 - x2), drop);
                        }
                    }
                }
                coupling.push(re);
                if a != b {
                    coupling.push(im);
                }
            }
        }
        p.add_zero("kron coupling", coupling);
    }

    // L as the lifted Laplacian of E.
    let mut lap = Vec::with_capacity(s * (s + 1) / 2);
    for j in 0..s {
        for i in 0..=j {
            let mut r = l.sym(i, j);
            if i == j {
                for m in 0..s {
                    let wgt = kron.edge_weight(i, m);
                    if m != i && wgt != 0.0 {
                        r.add_scaled(&e.herm(i, m).re, -wgt);
                    }
                }
            } else {
                let wgt = kron.edge_weight(i, j);
                if wgt != 0.0 {
                    r.add_scaled(&e.herm(i, j).re, wgt);
                }
            }
            lap.push(r);
        }
    }
    p.add_zero("laplacian", lap);

    match &v {
        Some(v) => p.add_psd("V psd", 2 * n, |r, c| v.embedded(r, c)),
        None => p.add_psd("E psd", 2 * s, |r, c| e.embedded(r, c)),
    }

    let mut obj = LinExpr::default();
    for (sn, &(cp, cq)) in costs.iter().enumerate() {
        obj.add_term(pg.offset + sn, (1.0 - cfg.mu) * cp);
        obj.add_term(qg.offset + sn, (1.0 - cfg.mu) * cq);
    }
    obj.add_scaled(&stab_term, cfg.mu);
    p.objective = obj;

    Ok(OpfProgram {
        program: p,
        cfg,
        bus_order: y.bus_order.clone(),
        sync_buses: kron.sync_buses.clone(),
        inertia,
        costs,
        voltage_map: pmap,
    })
}

fn push_coef(re: &mut LinExpr, im: &mut LinExpr, var: &LinExpr, c: C64, drop: f64) {
    if c.re.abs() > drop {
        re.add_scaled(var, c.re);
    }
    if c.im.abs() > drop {
        im.add_scaled(var, c.im);
    }
}

/// Sets the block entries of `x` for a rank-one point `V = v vᴴ`,
/// `E = e eᴴ` and the matching Laplacian. Used to check that the relaxation
/// contains every physical operating point.
pub fn assign_rank_one(
    opf: &OpfProgram,
    kron: &KronModel,
    v: &CVector,
    e: &CVector,
    p_g: &DVector<f64>,
    q_g: &DVector<f64>,
) -> Result<Vec<f64>> {
    let p = &opf.program;
    let mut x = vec![0.0; p.n_vars()];
    let set_herm = |x: &mut Vec<f64>, name: &str, u: &CVector| -> Result<()> {
        let b = p.block(name)?;
        let m = u * u.adjoint();
        for j in 0..u.len() {
            for i in 0..=j {
                let h = b.herm(i, j);
                x[h.re.terms[0].0] = m[(i, j)].re;
                if i != j {
                    x[h.im.terms[0].0] = m[(i, j)].im;
                }
            }
        }
        Ok(())
    };
    if opf.voltage_map.is_none() {
        set_herm(&mut x, "V", v)?;
    }
    set_herm(&mut x, "E", e)?;
    let lm = crate::dynamics::laplacian_from_lifted(&(e * e.adjoint()), kron);
    let lb = p.block("L")?;
    for j in 0..lm.nrows() {
        for i in 0..=j {
            x[lb.sym(i, j).terms[0].0] = lm[(i, j)];
        }
    }
    let pgb = p.block("p_g")?;
    let qgb = p.block("q_g")?;
    for i in 0..p_g.len() {
        x[pgb.offset + i] = p_g[i];
        x[qgb.offset + i] = q_g[i];
    }
    Ok(x)
}
