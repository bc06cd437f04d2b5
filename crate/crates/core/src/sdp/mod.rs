//! Cone programs over named matrix blocks and their conversion to the
//! `A x + s = b, s ∈ K` standard form used by the solver.

mod lemma1;
mod opf;

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::{CMatrix, Error, Result, C64};

pub use lemma1::{build_lemma1_block, lemma1_program, projector_off_uniform, Lemma1Vars};
pub use opf::{assign_rank_one, build_opf_sdp, Formulation, OpfProgram, TradeoffConfig};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Sparse affine expression `Σ coef·x[idx] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn var(idx: usize) -> Self {
        Self {
            terms: vec![(idx, 1.0)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn add_term(&mut self, idx: usize, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((idx, coef));
        }
        self
    }

    pub fn add_scaled(&mut self, other: &LinExpr, k: f64) -> &mut Self {
        if k != 0.0 {
            self.terms
                .extend(other.terms.iter().map(|&(i, c)| (i, c * k)));
            self.constant += other.constant * k;
        }
        self
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut e = LinExpr::default();
        e.add_scaled(self, k);
        e
    }

    /// Sorts terms by index, merges duplicates and drops zeros.
    pub fn normalize(&mut self) {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(i, c) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }
}

/// Real and imaginary parts of a complex affine expression.
#[derive(Debug, Clone, Default)]
pub struct ComplexExpr {
    pub re: LinExpr,
    pub im: LinExpr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockShape {
    /// `n×n` Hermitian, stored as `n²` reals: the real upper triangle in
    /// svec order, then the strict upper imaginary part.
    Hermitian(usize),
    /// `n×n` real symmetric, upper triangle in svec order.
    Symmetric(usize),
    Vector(usize),
}

impl BlockShape {
    pub fn len(self) -> usize {
        match self {
            BlockShape::Hermitian(n) => n * n,
            BlockShape::Symmetric(n) => n * (n + 1) / 2,
            BlockShape::Vector(n) => n,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

/// Position of `(i, j)`, `i ≤ j`, in a column-major upper triangle.
pub fn triu_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

#[derive(Debug, Clone)]
pub struct Block {
    pub name: String,
    pub shape: BlockShape,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dimension of the real symmetric matrix representing the block
    /// (`2n` for Hermitian blocks).
    pub fn embedded_dim(&self) -> usize {
        match self.shape {
            BlockShape::Hermitian(n) => 2 * n,
            BlockShape::Symmetric(n) | BlockShape::Vector(n) => n,
        }
    }

    pub fn entry(&self, k: usize) -> LinExpr {
        assert!(k < self.len(), "index {k} outside block {}", self.name);
        LinExpr::var(self.offset + k)
    }

    pub fn sym(&self, i: usize, j: usize) -> LinExpr {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        match self.shape {
            BlockShape::Symmetric(_) => self.entry(triu_index(a, b)),
            _ => panic!("block {} is not symmetric", self.name),
        }
    }

    /// `(i, j)` entry of a Hermitian block.
    pub fn herm(&self, i: usize, j: usize) -> ComplexExpr {
        let BlockShape::Hermitian(n) = self.shape else {
            panic!("block {} is not Hermitian", self.name);
        };
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let re = self.entry(triu_index(a, b));
        let im = if a == b {
            LinExpr::default()
        } else {
            let k = n * (n + 1) / 2 + b * (b - 1) / 2 + a;
            let e = self.entry(k);
            if i < j {
                e
            } else {
                e.scaled(-1.0)
            }
        };
        ComplexExpr { re, im }
    }

    /// `tr(H M)` for the Hermitian block `H` and a numeric Hermitian `M`.
    pub fn trace_with(&self, m: &CMatrix) -> LinExpr {
        let BlockShape::Hermitian(n) = self.shape else {
            panic!("block {} is not Hermitian", self.name);
        };
        let mut e = LinExpr::default();
        for j in 0..n {
            for i in 0..=j {
                let z = m[(i, j)];
                if z == C64::new(0.0, 0.0) {
                    continue;
                }
                let h = self.herm(i, j);
                if i == j {
                    e.add_scaled(&h.re, z.re);
                } else {
                    e.add_scaled(&h.re, 2.0 * z.re);
                    e.add_scaled(&h.im, 2.0 * z.im);
                }
            }
        }
        e
    }

    /// The `2n×2n` real embedding `[[Re H, −Im H], [Im H, Re H]]` entry.
    pub fn embedded(&self, r: usize, c: usize) -> LinExpr {
        let BlockShape::Hermitian(n) = self.shape else {
            panic!("block {} is not Hermitian", self.name);
        };
        match (r < n, c < n) {
            (true, true) => self.herm(r, c).re,
            (false, false) => self.herm(r - n, c - n).re,
            (true, false) => self.herm(r, c - n).im.scaled(-1.0),
            (false, true) => self.herm(r - n, c).im,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    /// Rows equal zero.
    Zero,
    /// Rows are nonnegative.
    Nonneg,
    /// Rows are the upper triangle (column-major) of an `n×n` symmetric
    /// matrix that must be PSD.
    Psd(usize),
}

#[derive(Debug, Clone)]
pub struct ConeConstraint {
    pub name: String,
    pub kind: ConeKind,
    pub rows: Vec<LinExpr>,
}

/// A linear objective over named blocks with affine cone constraints.
#[derive(Debug, Clone, Default)]
pub struct ConeProgram {
    pub blocks: Vec<Block>,
    pub objective: LinExpr,
    pub constraints: Vec<ConeConstraint>,
    n_vars: usize,
}

impl ConeProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn add_block(&mut self, name: &str, shape: BlockShape) -> Result<Block> {
        if self.blocks.iter().any(|b| b.name == name) {
            return Err(Error::Build(format!("block {name} declared twice")));
        }
        let b = Block {
            name: name.to_string(),
            shape,
            offset: self.n_vars,
        };
        self.n_vars += shape.len();
        self.blocks.push(b.clone());
        Ok(b)
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Build(format!("no block named {name}")))
    }

    pub fn add_zero(&mut self, name: &str, rows: Vec<LinExpr>) {
        self.push(name, ConeKind::Zero, rows);
    }

    pub fn add_nonneg(&mut self, name: &str, rows: Vec<LinExpr>) {
        self.push(name, ConeKind::Nonneg, rows);
    }

    /// Requires the symmetric matrix with upper entries `entry(i, j)`,
    /// `i ≤ j`, to be PSD.
    pub fn add_psd(&mut self, name: &str, n: usize, mut entry: impl FnMut(usize, usize) -> LinExpr) {
        let mut rows = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            for i in 0..=j {
                rows.push(entry(i, j));
            }
        }
        self.push(name, ConeKind::Psd(n), rows);
    }

    fn push(&mut self, name: &str, kind: ConeKind, rows: Vec<LinExpr>) {
        if !rows.is_empty() {
            self.constraints.push(ConeConstraint {
                name: name.to_string(),
                kind,
                rows,
            });
        }
    }

    pub fn constraint(&self, name: &str) -> Option<&ConeConstraint> {
        self.constraints.iter().find(|c| c.name == name)
    }

    pub fn hermitian_value(&self, name: &str, x: &[f64]) -> Result<CMatrix> {
        let b = self.block(name)?;
        let BlockShape::Hermitian(n) = b.shape else {
            return Err(Error::Build(format!("block {name} is not Hermitian")));
        };
        Ok(CMatrix::from_fn(n, n, |i, j| {
            let h = b.herm(i, j);
            C64::new(h.re.eval(x), h.im.eval(x))
        }))
    }

    pub fn symmetric_value(&self, name: &str, x: &[f64]) -> Result<DMatrix<f64>> {
        let b = self.block(name)?;
        let BlockShape::Symmetric(n) = b.shape else {
            return Err(Error::Build(format!("block {name} is not symmetric")));
        };
        Ok(DMatrix::from_fn(n, n, |i, j| b.sym(i, j).eval(x)))
    }

    pub fn vector_value(&self, name: &str, x: &[f64]) -> Result<DVector<f64>> {
        let b = self.block(name)?;
        let BlockShape::Vector(n) = b.shape else {
            return Err(Error::Build(format!("block {name} is not a vector")));
        };
        Ok(DVector::from_fn(n, |i, _| x[b.offset + i]))
    }
}

/// Complex PSD constraints as real ones: `[[Re H, −Im H], [Im H, Re H]]`.
pub fn hermitian_embed(h: &CMatrix) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::InvalidArgument("matrix is not square".into()));
    }
    let scale = h.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if (h - h.adjoint()).iter().any(|z| z.norm() > 1e-12 * scale) {
        return Err(Error::InvalidArgument("matrix is not Hermitian".into()));
    }
    Ok(DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let z = h[(r % n, c % n)];
        match (r < n, c < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    }))
}

/// Upper triangle of `m`, column-major, with off-diagonals times √2.
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            v.push(if i == j {
                m[(i, j)]
            } else {
                (m[(i, j)] + m[(j, i)]) * 0.5 * SQRT_2
            });
        }
    }
    v
}

pub fn smat(v: &[f64]) -> Result<DMatrix<f64>> {
    let n = ((((8 * v.len() + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if n * (n + 1) / 2 != v.len() {
        return Err(Error::InvalidArgument(format!(
            "{} is not a triangular number",
            v.len()
        )));
    }
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let x = v[triu_index(i, j)];
            if i == j {
                m[(i, i)] = x;
            } else {
                m[(i, j)] = x / SQRT_2;
                m[(j, i)] = x / SQRT_2;
            }
        }
    }
    Ok(m)
}

/// Compressed sparse column storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowval: Vec<usize>,
    pub nzval: Vec<f64>,
}

impl CscMatrix {
    /// Builds from triplets, summing duplicates and dropping zeros.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut t: Vec<(usize, usize, f64)>,
    ) -> Self {
        t.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|e| e.2 != 0.0);
        let mut colptr = vec![0; ncols + 1];
        for &(_, c, _) in &merged {
            colptr[c + 1] += 1;
        }
        for c in 0..ncols {
            colptr[c + 1] += colptr[c];
        }
        Self {
            nrows,
            ncols,
            colptr,
            rowval: merged.iter().map(|e| e.0).collect(),
            nzval: merged.iter().map(|e| e.2).collect(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.nzval.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for c in 0..self.ncols {
            for k in self.colptr[c]..self.colptr[c + 1] {
                d[(self.rowval[k], c)] += self.nzval[k];
            }
        }
        d
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for c in 0..self.ncols {
            for k in self.colptr[c]..self.colptr[c + 1] {
                y[self.rowval[k]] += self.nzval[k] * x[c];
            }
        }
        y
    }

    pub fn transpose_mul_vec(&self, z: &[f64]) -> Vec<f64> {
        (0..self.ncols)
            .map(|c| {
                (self.colptr[c]..self.colptr[c + 1])
                    .map(|k| self.nzval[k] * z[self.rowval[k]])
                    .sum()
            })
            .collect()
    }
}

/// Cones in row order of a standard-form problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeSpec {
    Zero(usize),
    Nonneg(usize),
    /// PSD cone of `n×n` matrices in svec form.
    Psd(usize),
}

impl ConeSpec {
    pub fn rows(self) -> usize {
        match self {
            ConeSpec::Zero(m) | ConeSpec::Nonneg(m) => m,
            ConeSpec::Psd(n) => n * (n + 1) / 2,
        }
    }
}

/// `min cᵀx + c0` subject to `A x + s = b`, `s ∈ K`.
#[derive(Debug, Clone)]
pub struct StandardForm {
    pub c: Vec<f64>,
    pub c0: f64,
    pub a: CscMatrix,
    pub b: Vec<f64>,
    pub cones: Vec<ConeSpec>,
    /// Number of equality rows dropped as duplicates.
    pub dropped_rows: usize,
}

impl StandardForm {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// Writes the problem as one record per line; see the README for the
    /// format.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# minimize c'x + c0 subject to A x + s = b, s in K")?;
        writeln!(w, "n {}", self.n())?;
        writeln!(w, "m {}", self.m())?;
        writeln!(w, "c0 {:e}", self.c0)?;
        for (j, v) in self.c.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            writeln!(w, "c {j} {v:e}")?;
        }
        for col in 0..self.a.ncols {
            for k in self.a.colptr[col]..self.a.colptr[col + 1] {
                writeln!(w, "A {} {col} {:e}", self.a.rowval[k], self.a.nzval[k])?;
            }
        }
        for (i, v) in self.b.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            writeln!(w, "b {i} {v:e}")?;
        }
        for cone in &self.cones {
            match cone {
                ConeSpec::Zero(m) => writeln!(w, "cone zero {m}")?,
                ConeSpec::Nonneg(m) => writeln!(w, "cone nonneg {m}")?,
                ConeSpec::Psd(n) => writeln!(w, "cone psd {n}")?,
            }
        }
        Ok(())
    }
}

/// Key identifying a row up to positive or negative scaling.
fn row_key(e: &LinExpr) -> Option<Vec<(usize, u64)>> {
    let pivot = e.terms.first()?.1;
    let mut key: Vec<(usize, u64)> = e
        .terms
        .iter()
        .map(|&(i, c)| (i, (c / pivot).to_bits()))
        .collect();
    key.push((usize::MAX, (e.constant / pivot).to_bits()));
    Some(key)
}

/// Flattens a program: all equality rows first (exact duplicates up to
/// scale removed), then inequality rows, then each PSD block.
pub fn standard_form(p: &ConeProgram) -> StandardForm {
    let n = p.n_vars();
    let mut obj = p.objective.clone();
    obj.normalize();
    let mut c = vec![0.0; n];
    for &(i, v) in &obj.terms {
        c[i] += v;
    }

    let mut trip = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let push_row = |e: &LinExpr, scale: f64, trip: &mut Vec<_>, b: &mut Vec<f64>| {
        let r = b.len();
        for &(i, v) in &e.terms {
            trip.push((r, i, -v * scale));
        }
        b.push(e.constant * scale);
    };

    let mut seen: HashMap<Vec<(usize, u64)>, ()> = HashMap::new();
    let mut zero_rows = 0;
    let mut dropped = 0;
    for con in p.constraints.iter().filter(|c| c.kind == ConeKind::Zero) {
        for row in &con.rows {
            let mut e = row.clone();
            e.normalize();
            match row_key(&e) {
                Some(k) => {
                    if seen.insert(k, ()).is_some() {
                        dropped += 1;
                        continue;
                    }
                }
                None if e.constant == 0.0 => {
                    dropped += 1;
                    continue;
                }
                None => {}
            }
            push_row(&e, 1.0, &mut trip, &mut b);
            zero_rows += 1;
        }
    }
    if zero_rows > 0 {
        cones.push(ConeSpec::Zero(zero_rows));
    }

    let mut nonneg_rows = 0;
    for con in p.constraints.iter().filter(|c| c.kind == ConeKind::Nonneg) {
        for row in &con.rows {
            push_row(row, 1.0, &mut trip, &mut b);
            nonneg_rows += 1;
        }
    }
    if nonneg_rows > 0 {
        cones.push(ConeSpec::Nonneg(nonneg_rows));
    }

    for con in &p.constraints {
        if let ConeKind::Psd(dim) = con.kind {
            let mut k = 0;
            for j in 0..dim {
                for i in 0..=j {
                    let scale = if i == j { 1.0 } else { SQRT_2 };
                    push_row(&con.rows[k], scale, &mut trip, &mut b);
                    k += 1;
                }
            }
            cones.push(ConeSpec::Psd(dim));
        }
    }

    StandardForm {
        c,
        c0: obj.constant,
        a: CscMatrix::from_triplets(b.len(), n, trip),
        b,
        cones,
        dropped_rows: dropped,
    }
}
