//! Static grid description and the dynamics sidecar.
//!
//! Power quantities are stored in the units of the MATPOWER file (MW, MVAr,
//! MVA); the `*_pu` accessors convert with the case base.

mod matpower;
mod sidecar;

pub use matpower::{parse_matpower, write_matpower};
pub use sidecar::{apply_cost_records, load_dynamics, DynamicParams};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::{Error, Result};

/// Uniform linear cost per pu of active generation.
pub const DEFAULT_COST_P: f64 = 1.0;
/// Uniform linear cost per pu of reactive generation.
pub const DEFAULT_COST_Q: f64 = 0.1;

/// JSON schema tag of [`RawCase::to_json`].
pub const CASE_SCHEMA: &str = "oscillopf.rawcase/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    PQ,
    PV,
    Ref,
    Isolated,
}

impl BusType {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(BusType::PQ),
            2 => Some(BusType::PV),
            3 => Some(BusType::Ref),
            4 => Some(BusType::Isolated),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        match self {
            BusType::PQ => 1,
            BusType::PV => 2,
            BusType::Ref => 3,
            BusType::Isolated => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    #[serde(rename = "type")]
    pub kind: BusType,
    /// Active demand in MW.
    pub p_load: f64,
    /// Reactive demand in MVAr.
    pub q_load: f64,
    /// Shunt conductance in MW drawn at 1 pu voltage.
    pub shunt_g: f64,
    /// Shunt susceptance in MVAr injected at 1 pu voltage.
    pub shunt_b: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance in pu.
    pub b_charging: f64,
    /// Long-term rating in MVA, 0 for unlimited.
    pub rate: f64,
    /// Off-nominal tap ratio at the from end, 0 for a plain line.
    pub tap: f64,
    pub status: bool,
}

impl Branch {
    pub fn tap_ratio(&self) -> f64 {
        if self.tap == 0.0 {
            1.0
        } else {
            self.tap
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: u32,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub status: bool,
}

/// Linear generation cost at a bus, per pu of generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCost {
    pub bus: u32,
    pub c_p: f64,
    pub c_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub gens: Vec<Generator>,
    pub costs: Vec<LinearCost>,
}

/// Aggregated generation limits at one bus, in pu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenLimits {
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Serialize)]
struct CaseDump<'a> {
    schema: &'a str,
    #[serde(flatten)]
    case: &'a RawCase,
}

impl RawCase {
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn reference_bus(&self) -> Option<u32> {
        self.buses
            .iter()
            .find(|b| b.kind == BusType::Ref)
            .map(|b| b.id)
    }

    pub fn generator_buses(&self) -> BTreeSet<u32> {
        self.gens.iter().filter(|g| g.status).map(|g| g.bus).collect()
    }

    /// Buses hosting an in-service generator or a nonzero load, in case order.
    pub fn synchronous_buses(&self) -> Vec<u32> {
        let gens = self.generator_buses();
        self.buses
            .iter()
            .filter(|b| gens.contains(&b.id) || b.p_load != 0.0 || b.q_load != 0.0)
            .map(|b| b.id)
            .collect()
    }

    pub fn zero_injection_buses(&self) -> Vec<u32> {
        let sync: BTreeSet<u32> = self.synchronous_buses().into_iter().collect();
        self.buses
            .iter()
            .filter(|b| !sync.contains(&b.id))
            .map(|b| b.id)
            .collect()
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = &Branch> {
        self.branches.iter().filter(|br| br.status)
    }

    /// Total (active MW, reactive MVAr) demand.
    pub fn total_load(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.p_load, q + b.q_load))
    }

    pub fn p_load_pu(&self, bus: &Bus) -> f64 {
        bus.p_load / self.base_mva
    }

    pub fn q_load_pu(&self, bus: &Bus) -> f64 {
        bus.q_load / self.base_mva
    }

    /// Summed in-service generator limits at `bus`, in pu; `None` if the bus
    /// hosts no generator.
    pub fn gen_limits_pu(&self, bus: u32) -> Option<GenLimits> {
        let mut found = None;
        for g in self.gens.iter().filter(|g| g.status && g.bus == bus) {
            let acc = found.get_or_insert(GenLimits {
                p_min: 0.0,
                p_max: 0.0,
                q_min: 0.0,
                q_max: 0.0,
            });
            acc.p_min += g.p_min / self.base_mva;
            acc.p_max += g.p_max / self.base_mva;
            acc.q_min += g.q_min / self.base_mva;
            acc.q_max += g.q_max / self.base_mva;
        }
        found
    }

    /// Linear cost coefficients at `bus`, defaulting to zero.
    pub fn cost_at(&self, bus: u32) -> (f64, f64) {
        self.costs
            .iter()
            .find(|c| c.bus == bus)
            .map(|c| (c.c_p, c.c_q))
            .unwrap_or((0.0, 0.0))
    }

    /// Checks that every generator box is nonempty.
    pub fn check_generation_limits(&self) -> Result<()> {
        for g in &self.gens {
            if g.p_min > g.p_max {
                return Err(Error::InvalidCase(format!(
                    "generator at bus {}: p_min {} exceeds p_max {}",
                    g.bus, g.p_min, g.p_max
                )));
            }
            if g.q_min > g.q_max {
                return Err(Error::InvalidCase(format!(
                    "generator at bus {}: q_min {} exceeds q_max {}",
                    g.bus, g.q_min, g.q_max
                )));
            }
        }
        Ok(())
    }

    /// Structural checks: unique ids, valid endpoints, a single reference bus
    /// and a connected in-service network.
    pub fn validate_topology(&self) -> Result<()> {
        if self.buses.is_empty() {
            return Err(Error::InvalidCase("case has no buses".into()));
        }
        if !(self.base_mva > 0.0) {
            return Err(Error::InvalidCase(format!(
                "base MVA must be positive, got {}",
                self.base_mva
            )));
        }
        let mut index = BTreeMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if index.insert(b.id, i).is_some() {
                return Err(Error::InvalidCase(format!("duplicate bus id {}", b.id)));
            }
        }
        let refs = self
            .buses
            .iter()
            .filter(|b| b.kind == BusType::Ref)
            .count();
        match refs {
            0 => return Err(Error::InvalidCase("missing reference bus".into())),
            1 => {}
            n => {
                return Err(Error::InvalidCase(format!(
                    "expected exactly one reference bus, found {n}"
                )))
            }
        }
        for br in &self.branches {
            for end in [br.from, br.to] {
                if !index.contains_key(&end) {
                    return Err(Error::InvalidCase(format!(
                        "branch {}-{} references unknown bus {end}",
                        br.from, br.to
                    )));
                }
            }
        }
        for g in &self.gens {
            if !index.contains_key(&g.bus) {
                return Err(Error::InvalidCase(format!(
                    "generator references unknown bus {}",
                    g.bus
                )));
            }
        }

        // Union-find over in-service branches.
        let mut parent: Vec<usize> = (0..self.buses.len()).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for br in self.in_service_branches() {
            let a = find(&mut parent, index[&br.from]);
            let b = find(&mut parent, index[&br.to]);
            if a != b {
                parent[a] = b;
            }
        }
        let root = find(&mut parent, 0);
        for (i, b) in self.buses.iter().enumerate() {
            if find(&mut parent, i) != root {
                return Err(Error::InvalidCase(format!(
                    "network is disconnected: bus {} is not reachable from bus {}",
                    b.id, self.buses[0].id
                )));
            }
        }
        Ok(())
    }

    /// Canonical JSON dump with a schema tag.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&CaseDump {
            schema: CASE_SCHEMA,
            case: self,
        })?)
    }
}

/// Multiplies every active and reactive demand by `factor`.
pub fn scale_loads(case: &RawCase, factor: f64) -> Result<RawCase> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "load scale factor must be positive, got {factor}"
        )));
    }
    let mut out = case.clone();
    for b in &mut out.buses {
        b.p_load *= factor;
        b.q_load *= factor;
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod fixtures {
    /// One reference, one PV and one PQ bus on a triangle.
    pub const THREE_BUS: &str = "\
function mpc = case3
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;
\t2\t2\t0\t0\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;
\t3\t1\t100\t30\t0\t5\t1\t1\t0\t230\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t0\t0\t100\t-100\t1\t100\t1\t200\t0;
\t2\t0\t0\t100\t-100\t1\t100\t1\t150\t10;
];
mpc.branch = [
\t1\t2\t0.01\t0.1\t0.02\t250\t250\t250\t0\t0\t1\t-360\t360;
\t1\t3\t0.02\t0.15\t0.03\t150\t150\t150\t0\t0\t1\t-360\t360;
\t2\t3\t0.015\t0.12\t0.025\t150\t150\t150\t1.02\t0\t1\t-360\t360;
];
mpc.gencost = [
\t2\t0\t0\t3\t0.01\t10\t0;
\t2\t0\t0\t3\t0.01\t10\t0;
];
";
}

#[cfg(test)]
mod tests {
    use super::fixtures::THREE_BUS;
    use super::*;

    #[test]
    fn classification_partitions_buses() {
        let case = parse_matpower(THREE_BUS).unwrap();
        let sync = case.synchronous_buses();
        let zero = case.zero_injection_buses();
        assert_eq!(sync, vec![1, 2, 3]);
        assert!(zero.is_empty());
        assert_eq!(sync.len() + zero.len(), case.buses.len());
    }

    #[test]
    fn scale_identity_and_half() {
        let case = parse_matpower(THREE_BUS).unwrap();
        assert_eq!(scale_loads(&case, 1.0).unwrap(), case);
        let half = scale_loads(&case, 0.5).unwrap();
        let b = half.bus(3).unwrap();
        assert_eq!((b.p_load, b.q_load), (50.0, 15.0));
        assert_eq!(half.branches, case.branches);
        assert_eq!(half.gens, case.gens);
    }

    #[test]
    fn scale_rejects_nonpositive() {
        let case = parse_matpower(THREE_BUS).unwrap();
        assert!(scale_loads(&case, 0.0).is_err());
        assert!(scale_loads(&case, -1.0).is_err());
        assert!(scale_loads(&case, f64::NAN).is_err());
    }

    #[test]
    fn json_dump_has_schema_and_fields() {
        let case = parse_matpower(THREE_BUS).unwrap();
        let json: serde_json::Value = serde_json::from_str(&case.to_json().unwrap()).unwrap();
        assert_eq!(json["schema"], CASE_SCHEMA);
        assert_eq!(json["base_mva"], 100.0);
        assert_eq!(json["buses"][2]["p_load"], 100.0);
        assert_eq!(json["buses"][0]["type"], "ref");
        assert_eq!(json["branches"][2]["tap"], 1.02);
    }

    #[test]
    fn limits_are_aggregated_in_pu() {
        let case = parse_matpower(THREE_BUS).unwrap();
        let lim = case.gen_limits_pu(2).unwrap();
        assert!((lim.p_max - 1.5).abs() < 1e-15);
        assert!((lim.p_min - 0.1).abs() < 1e-15);
        assert!(case.gen_limits_pu(3).is_none());
    }

    #[test]
    fn inverted_box_is_reported() {
        let mut case = parse_matpower(THREE_BUS).unwrap();
        assert!(case.check_generation_limits().is_ok());
        case.gens[0].p_min = 300.0;
        assert!(case.check_generation_limits().is_err());
    }
}
