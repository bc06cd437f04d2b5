//! Dynamics sidecar: one record per line.
//!
//! ```text
//! # comment
//! gamma 0.1467
//! inertia <bus> <M>
//! damping <bus> <D>
//! xint <bus> <x>
//! cost <bus> <c_p> <c_q>
//! ```
//!
//! `cost` records are read by [`apply_cost_records`] and skipped by
//! [`load_dynamics`].

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{LinearCost, RawCase};
use crate::{Error, Result};

/// Share of the mean generator inertia given to other synchronous buses.
pub const LOAD_INERTIA_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicParams {
    pub inertia: BTreeMap<u32, f64>,
    pub damping: BTreeMap<u32, f64>,
    pub internal_reactance: BTreeMap<u32, f64>,
    /// Damping-to-inertia ratio in 1/s.
    pub gamma: f64,
}

enum Record {
    Gamma(f64),
    Inertia(u32, f64),
    Damping(u32, f64),
    Xint(u32, f64),
    Cost(u32, f64, f64),
}

fn records(text: &str) -> Result<Vec<(usize, Record)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        let err = |m: String| Error::Parse { line, message: m };
        let value = |t: &str| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("invalid number '{t}'")))
        };
        let bus = |t: &str| {
            t.parse::<u32>()
                .map_err(|_| err(format!("invalid bus id '{t}'")))
        };
        let expect = |n: usize| {
            if toks.len() == n {
                Ok(())
            } else {
                Err(err(format!(
                    "'{}' takes {} fields, found {}",
                    toks[0],
                    n - 1,
                    toks.len() - 1
                )))
            }
        };
        let rec = match toks[0] {
            "gamma" => {
                expect(2)?;
                Record::Gamma(value(toks[1])?)
            }
            "inertia" => {
                expect(3)?;
                Record::Inertia(bus(toks[1])?, value(toks[2])?)
            }
            "damping" => {
                expect(3)?;
                Record::Damping(bus(toks[1])?, value(toks[2])?)
            }
            "xint" => {
                expect(3)?;
                Record::Xint(bus(toks[1])?, value(toks[2])?)
            }
            "cost" => {
                expect(4)?;
                Record::Cost(bus(toks[1])?, value(toks[2])?, value(toks[3])?)
            }
            other => return Err(err(format!("unknown record '{other}'"))),
        };
        out.push((line, rec));
    }
    Ok(out)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Reads the sidecar and completes it for every synchronous bus of `case`.
///
/// Missing inertias default to 10% of the mean generator inertia, missing
/// internal reactances to the mean generator reactance. Without a `gamma`
/// record the ratio is mean(D)/mean(M) over the buses with explicit damping;
/// missing damping is then filled as `gamma * M`.
pub fn load_dynamics(text: &str, case: &RawCase) -> Result<DynamicParams> {
    let sync: BTreeSet<u32> = case.synchronous_buses().into_iter().collect();
    let gens = case.generator_buses();

    let mut gamma = None;
    let mut inertia = BTreeMap::new();
    let mut damping = BTreeMap::new();
    let mut xint = BTreeMap::new();

    for (line, rec) in records(text)? {
        let err = |m: String| Error::Parse { line, message: m };
        let (table, bus, v, what) = match rec {
            Record::Gamma(g) => {
                if !(g > 0.0) {
                    return Err(err(format!("gamma must be positive, got {g}")));
                }
                if gamma.replace(g).is_some() {
                    return Err(err("duplicate gamma record".into()));
                }
                continue;
            }
            Record::Cost(..) => continue,
            Record::Inertia(b, v) => (&mut inertia, b, v, "inertia"),
            Record::Damping(b, v) => (&mut damping, b, v, "damping"),
            Record::Xint(b, v) => (&mut xint, b, v, "internal reactance"),
        };
        if case.bus(bus).is_none() {
            return Err(err(format!("{what} for unknown bus {bus}")));
        }
        if !sync.contains(&bus) {
            return Err(err(format!(
                "{what} given for zero-injection bus {bus}"
            )));
        }
        if !(v > 0.0) {
            return Err(err(format!("{what} at bus {bus} must be positive, got {v}")));
        }
        if table.insert(bus, v).is_some() {
            return Err(err(format!("duplicate {what} for bus {bus}")));
        }
    }

    let gen_mean_m = mean(gens.iter().filter_map(|b| inertia.get(b).copied())).ok_or_else(
        || Error::InvalidDynamics("no generator inertia given".into()),
    )?;
    let gen_mean_x = mean(gens.iter().filter_map(|b| xint.get(b).copied())).ok_or_else(
        || Error::InvalidDynamics("no generator internal reactance given".into()),
    )?;

    let gamma = match gamma {
        Some(g) => g,
        None => {
            if damping.is_empty() {
                return Err(Error::InvalidDynamics(
                    "neither gamma nor per-bus damping given".into(),
                ));
            }
            let explicit_m: Vec<f64> = damping
                .keys()
                .map(|b| {
                    inertia.get(b).copied().ok_or_else(|| {
                        Error::InvalidDynamics(format!(
                            "damping at bus {b} needs an explicit inertia to infer gamma"
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            let md = mean(damping.values().copied()).unwrap_or(0.0);
            let mm = mean(explicit_m.into_iter()).unwrap_or(1.0);
            md / mm
        }
    };

    for &b in &sync {
        inertia
            .entry(b)
            .or_insert(LOAD_INERTIA_SHARE * gen_mean_m);
        xint.entry(b).or_insert(gen_mean_x);
    }
    for &b in &sync {
        let m = inertia[&b];
        damping.entry(b).or_insert(gamma * m);
    }

    Ok(DynamicParams {
        inertia,
        damping,
        internal_reactance: xint,
        gamma,
    })
}

/// Overrides linear cost coefficients with the sidecar's `cost` records.
pub fn apply_cost_records(text: &str, case: &mut RawCase) -> Result<()> {
    for (line, rec) in records(text)? {
        if let Record::Cost(bus, c_p, c_q) = rec {
            if case.bus(bus).is_none() {
                return Err(Error::Parse {
                    line,
                    message: format!("cost for unknown bus {bus}"),
                });
            }
            match case.costs.iter_mut().find(|c| c.bus == bus) {
                Some(c) => {
                    c.c_p = c_p;
                    c.c_q = c_q;
                }
                None => case.costs.push(LinearCost { bus, c_p, c_q }),
            }
        }
    }
    Ok(())
}

impl DynamicParams {
    fn gather(map: &BTreeMap<u32, f64>, buses: &[u32], what: &str) -> Result<DVector<f64>> {
        buses
            .iter()
            .map(|b| {
                map.get(b).copied().ok_or_else(|| {
                    Error::InvalidDynamics(format!("no {what} for synchronous bus {b}"))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(DVector::from_vec)
    }

    pub fn inertia_vector(&self, buses: &[u32]) -> Result<DVector<f64>> {
        Self::gather(&self.inertia, buses, "inertia")
    }

    pub fn damping_vector(&self, buses: &[u32]) -> Result<DVector<f64>> {
        Self::gather(&self.damping, buses, "damping")
    }

    pub fn reactance_vector(&self, buses: &[u32]) -> Result<DVector<f64>> {
        Self::gather(&self.internal_reactance, buses, "internal reactance")
    }

    /// Largest relative deviation of `D_n` from `gamma * M_n`.
    pub fn proportionality_error(&self) -> f64 {
        self.inertia
            .iter()
            .filter_map(|(b, m)| self.damping.get(b).map(|d| (d - self.gamma * m).abs() / (self.gamma * m)))
            .fold(0.0, f64::max)
    }

    /// Enforces `D = gamma * M` to relative tolerance `tol`.
    pub fn ensure_proportional(&self, tol: f64) -> Result<()> {
        let err = self.proportionality_error();
        if err > tol {
            return Err(Error::InvalidDynamics(format!(
                "damping is not proportional to inertia (max relative deviation {err:.3e})"
            )));
        }
        Ok(())
    }
}
