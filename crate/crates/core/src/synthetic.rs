//! Random networks and graphs for property checks.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::casefile::{Branch, Bus, BusType, DynamicParams, Generator, LinearCost, RawCase};
use crate::{CVector, C64};

/// Connected case on `n ≥ 3` buses: a random spanning tree plus a few extra
/// lines, bus 1 the reference generator, roughly a third of the buses with
/// generators, a third with load and at least one zero-injection bus.
pub fn random_case<R: Rng>(rng: &mut R, n: usize) -> RawCase {
    assert!(n >= 3, "random cases need at least three buses");
    let n_gen = (n / 3).max(1);
    let n_zero = (n / 4).max(1);
    let mut buses = Vec::with_capacity(n);
    for i in 0..n {
        let id = i as u32 + 1;
        let (kind, load) = if i == 0 {
            (BusType::Ref, false)
        } else if i < n_gen {
            (BusType::PV, rng.random_bool(0.5))
        } else if i < n - n_zero {
            (BusType::PQ, true)
        } else {
            (BusType::PQ, false)
        };
        buses.push(Bus {
            id,
            kind,
            p_load: if load { rng.random_range(10.0..120.0) } else { 0.0 },
            q_load: if load { rng.random_range(-10.0..40.0) } else { 0.0 },
            shunt_g: 0.0,
            shunt_b: if rng.random_bool(0.2) { rng.random_range(0.0..20.0) } else { 0.0 },
            v_min: 0.94,
            v_max: 1.06,
        });
    }
    let line = |rng: &mut R, from: u32, to: u32| Branch {
        from,
        to,
        r: rng.random_range(0.001..0.03),
        x: rng.random_range(0.02..0.25),
        b_charging: rng.random_range(0.0..0.3),
        rate: 0.0,
        tap: if rng.random_bool(0.15) { rng.random_range(0.95..1.05) } else { 0.0 },
        status: true,
    };
    let mut branches = Vec::new();
    for i in 1..n {
        let parent = rng.random_range(0..i) as u32 + 1;
        branches.push(line(rng, parent, i as u32 + 1));
    }
    for _ in 0..n / 3 {
        let a = rng.random_range(0..n) as u32 + 1;
        let b = rng.random_range(0..n) as u32 + 1;
        if a != b {
            branches.push(line(rng, a, b));
        }
    }
    let gens = (0..n_gen)
        .map(|i| Generator {
            bus: i as u32 + 1,
            p_min: 0.0,
            p_max: rng.random_range(200.0..600.0),
            q_min: -200.0,
            q_max: 300.0,
            status: true,
        })
        .collect();
    let costs = (0..n_gen)
        .map(|i| LinearCost {
            bus: i as u32 + 1,
            c_p: 1.0,
            c_q: 0.1,
        })
        .collect();
    RawCase {
        base_mva: 100.0,
        buses,
        branches,
        gens,
        costs,
    }
}

/// Proportional dynamics for every synchronous bus of `case`.
pub fn random_dynamics<R: Rng>(rng: &mut R, case: &RawCase, gamma: f64) -> DynamicParams {
    let mut inertia = BTreeMap::new();
    let mut damping = BTreeMap::new();
    let mut xint = BTreeMap::new();
    for bus in case.synchronous_buses() {
        let m = rng.random_range(0.05..0.5);
        inertia.insert(bus, m);
        damping.insert(bus, gamma * m);
        xint.insert(bus, rng.random_range(0.02..0.2));
    }
    DynamicParams {
        inertia,
        damping,
        internal_reactance: xint,
        gamma,
    }
}

/// Voltages with magnitudes in `[0.9, 1.1]` and angles in `[−0.5, 0.5]` rad.
pub fn random_voltages<R: Rng>(rng: &mut R, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| {
        C64::from_polar(rng.random_range(0.9..1.1), rng.random_range(-0.5..0.5))
    })
}

/// Laplacian of a random connected graph on `n` nodes with positive weights,
/// and random positive inertias.
pub fn random_weighted_graph<R: Rng>(rng: &mut R, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut l = DMatrix::zeros(n, n);
    let add = |l: &mut DMatrix<f64>, a: usize, b: usize, w: f64| {
        l[(a, b)] -= w;
        l[(b, a)] -= w;
        l[(a, a)] += w;
        l[(b, b)] += w;
    };
    for i in 1..n {
        let parent = rng.random_range(0..i);
        let w = rng.random_range(0.2..5.0);
        add(&mut l, parent, i, w);
    }
    for _ in 0..n {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            let w = rng.random_range(0.2..5.0);
            add(&mut l, a, b, w);
        }
    }
    let inertia = DVector::from_fn(n, |_, _| rng.random_range(0.1..3.0));
    (l, inertia)
}
