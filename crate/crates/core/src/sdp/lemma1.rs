//! Epigraph of the sum of the `K` largest eigenvalues of `L_M^†` as an LMI.

use nalgebra::{DMatrix, DVector};

use super::{Block, BlockShape, ConeProgram, LinExpr};
use crate::dynamics::uniform_mode;
use crate::{Error, Result};

/// The extra variables the block introduces.
#[derive(Debug, Clone)]
pub struct Lemma1Vars {
    pub z: Block,
    pub s: Block,
}

/// `W = I − u_1 u_1ᵀ` with `u_1 = α_1 M^{1/2} 1`.
pub fn projector_off_uniform(inertia: &DVector<f64>) -> DMatrix<f64> {
    let u = uniform_mode(inertia);
    let n = u.len();
    DMatrix::identity(n, n) - &u * u.transpose()
}

/// Weight of `u_1 u_1ᵀ` added to the lower-right block.
///
/// `L_M u_1 = 0` and `W u_1 = 0` make `(0, u_1)` a null vector of the plain
/// LMI, so it has no interior and interior-point methods stall. Since
/// `W (L_M + c u_1 u_1ᵀ)⁻¹ W = L_M^†` for any `c > 0`, the shifted LMI has the
/// same feasible `(Z, s)` set and does have an interior.
pub const NULL_SHIFT: f64 = 1.0;

/// Adds `Z ⪰ 0` and `[[Z + sI, W], [W, L_M + c u_1 u_1ᵀ]] ⪰ 0` to `p` and
/// returns the term `(tr Z + K s)/(2γ)`. `l_m(i, j)` gives the upper entries
/// of `L_M`; `inertia` fixes `u_1`.
pub fn build_lemma1_block(
    p: &mut ConeProgram,
    l_m: impl Fn(usize, usize) -> LinExpr,
    inertia: &DVector<f64>,
    k: usize,
    gamma: f64,
) -> Result<(Lemma1Vars, LinExpr)> {
    let w = projector_off_uniform(inertia);
    let u1 = uniform_mode(inertia);
    let s_dim = w.nrows();
    if k == 0 || k >= s_dim {
        return Err(Error::Build(format!(
            "band size {k} must lie in 1..{s_dim} for {s_dim} synchronous buses"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::Build("damping ratio must be positive".into()));
    }
    let z = p.add_block("Z", BlockShape::Symmetric(s_dim))?;
    let s = p.add_block("s", BlockShape::Vector(1))?;
    p.add_psd("Z psd", s_dim, |i, j| z.sym(i, j));
    p.add_psd("stability lmi", 2 * s_dim, |i, j| {
        match (i < s_dim, j < s_dim) {
            (true, true) => {
                let mut e = z.sym(i, j);
                if i == j {
                    e.add_term(s.offset, 1.0);
                }
                e
            }
            (true, false) => LinExpr::constant(w[(i, j - s_dim)]),
            (false, false) => {
                let (a, b) = (i - s_dim, j - s_dim);
                let mut e = l_m(a, b);
                e.constant += NULL_SHIFT * u1[a] * u1[b];
                e
            }
            (false, true) => unreachable!("upper triangle only"),
        }
    });
    let mut term = LinExpr::default();
    for i in 0..s_dim {
        term.add_term(z.offset + super::triu_index(i, i), 1.0);
    }
    term.add_term(s.offset, k as f64);
    Ok((Lemma1Vars { z, s }, term.scaled(1.0 / (2.0 * gamma))))
}

/// Stand-alone program whose optimum is `(1/2γ) Σ_{i=2}^{K+1} 1/λ_i(L_M)`.
pub fn lemma1_program(
    l_m: &DMatrix<f64>,
    inertia: &DVector<f64>,
    k: usize,
    gamma: f64,
) -> Result<ConeProgram> {
    let n = l_m.nrows();
    if l_m.ncols() != n || inertia.len() != n {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    let mut p = ConeProgram::new();
    let (_, term) = build_lemma1_block(
        &mut p,
        |i, j| LinExpr::constant(0.5 * (l_m[(i, j)] + l_m[(j, i)])),
        inertia,
        k,
        gamma,
    )?;
    p.objective = term;
    Ok(p)
}
