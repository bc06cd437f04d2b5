//! The shipped New England case and its dynamics sidecar.

use std::path::PathBuf;

use oscillopf_core::casefile::{load_dynamics, parse_matpower, scale_loads};
use oscillopf_core::pipeline::Study;
use oscillopf_core::sdp::{ConeKind, Formulation};

fn data(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn case_counts() {
    let case = parse_matpower(&data("case39.m")).unwrap();
    assert_eq!(case.buses.len(), 39);
    assert_eq!(case.gens.len(), 10);
    assert_eq!(case.zero_injection_buses().len(), 10);
    assert_eq!(case.synchronous_buses().len(), 29);
    assert_eq!(case.reference_bus(), Some(31));
}

#[test]
fn sidecar_damping_ratio() {
    let case = parse_matpower(&data("case39.m")).unwrap();
    let dynamics = load_dynamics(&data("case39.dyn"), &case).unwrap();
    assert_eq!(dynamics.gamma, 0.1467);
    assert!(dynamics.proportionality_error() < 1e-12);
}

#[test]
fn scaled_total_load() {
    let case = parse_matpower(&data("case39.m")).unwrap();
    let (p, q) = case.total_load();
    let (p11, q11) = scale_loads(&case, 1.1).unwrap().total_load();
    assert!((p11 - 1.1 * p).abs() < 1e-9 * p);
    assert!((q11 - 1.1 * q).abs() < 1e-9 * q.abs());
}

fn psd_sizes(study: &Study, formulation: Formulation) -> Vec<(String, usize)> {
    let opf = study.build(study.tradeoff(0.5, 3).with_formulation(formulation)).unwrap();
    opf.program
        .constraints
        .iter()
        .filter_map(|c| match c.kind {
            ConeKind::Psd(n) => Some((c.name.clone(), n)),
            _ => None,
        })
        .collect()
}

#[test]
fn program_dimensions() {
    let study = Study::from_texts(&data("case39.m"), &data("case39.dyn"), 0.5).unwrap();
    let full = psd_sizes(&study, Formulation::Full);
    assert!(full.contains(&("V psd".to_string(), 78)), "{full:?}");
    assert!(full.iter().any(|(name, n)| name.contains("lmi") && *n == 58), "{full:?}");
    let reduced = psd_sizes(&study, Formulation::Reduced);
    assert!(reduced.contains(&("E psd".to_string(), 58)), "{reduced:?}");
}
