//! Ready-made and randomized test systems.
//!
//! `testgrid6` is the canonical six-terminal benchmark grid used throughout
//! the test suites; the randomized builders generate whole families of
//! stable systems for the certification and optimality property sweeps.

use rand::Rng;

use crate::graph::Topology;
use crate::model::{AcArea, DcTerminal, GainSet, PiLineParams, SystemDescription};

/// Line parameters of the six-terminal benchmark DC grid:
/// `(i, j, R, L, C)` per line, zero-based node indices.
pub const TESTGRID6_LINES: [(usize, usize, f64, f64, f64); 10] = [
    (0, 1, 0.0586, 0.2560e-3, 0.0085),
    (0, 2, 0.0586, 0.2560e-3, 0.0085),
    (1, 2, 0.0878, 0.3840e-3, 0.0127),
    (1, 3, 0.0586, 0.2560e-3, 0.0085),
    (1, 4, 0.0732, 0.3200e-3, 0.0106),
    (1, 5, 0.1464, 0.6400e-3, 0.0212),
    (2, 3, 0.0586, 0.2560e-3, 0.0085),
    (2, 4, 0.1464, 0.6400e-3, 0.0212),
    (3, 4, 0.0732, 0.3200e-3, 0.0106),
    (4, 5, 0.1464, 0.6400e-3, 0.0212),
];

/// `(i, j, R)` triples of the benchmark grid.
pub fn table1_dc_lines() -> impl Iterator<Item = (usize, usize, f64)> {
    TESTGRID6_LINES.iter().map(|&(i, j, r, _, _)| (i, j, r))
}

/// The six-terminal benchmark system: DC line resistances per
/// [`TESTGRID6_LINES`], terminal capacitance `0.375e-3` p.u., communication
/// weights `5/R_ij` (eta) and `15/R_ij` (phi) on the line graph, gains
/// `K_omega = 1000`, `K_v = 100`, `K_droop = 9`, `K_droop_i = 3.35`,
/// `gamma = 0`. Aggregate inertia is `10` p.u. s^2 per area.
pub fn testgrid6() -> SystemDescription {
    let n = 6;
    let dc = Topology::new(n, table1_dc_lines().map(|(i, j, r)| (i, j, 1.0 / r))).unwrap();
    let eta = Topology::new(n, table1_dc_lines().map(|(i, j, r)| (i, j, 5.0 / r))).unwrap();
    let phi = Topology::new(n, table1_dc_lines().map(|(i, j, r)| (i, j, 15.0 / r))).unwrap();
    let lines = TESTGRID6_LINES
        .iter()
        .map(|&(_, _, _, l, c)| PiLineParams {
            inductance: l,
            capacitance: c,
        })
        .collect();
    SystemDescription::new(
        vec![
            AcArea {
                inertia: 10.0,
                p_load: 0.0
            };
            n
        ],
        vec![
            DcTerminal {
                capacitance: 0.375e-3,
                v_ref: 1.0
            };
            n
        ],
        vec![
            GainSet {
                k_omega: 1000.0,
                k_v: 100.0,
                k_droop: 9.0,
                k_droop_i: 3.35,
                gamma: 0.0,
            };
            n
        ],
        dc,
        eta,
        phi,
        1.0,
        1.0,
        Some(lines),
    )
    .unwrap()
}

/// A single isolated node (empty line set) with the given inertia,
/// capacitance and gains.
pub fn single_node_system(inertia: f64, capacitance: f64, gains: GainSet) -> SystemDescription {
    let topo = Topology::new(1, []).unwrap();
    SystemDescription::new(
        vec![AcArea {
            inertia,
            p_load: 0.0,
        }],
        vec![DcTerminal {
            capacitance,
            v_ref: 1.0,
        }],
        vec![gains],
        topo.clone(),
        topo.clone(),
        topo,
        1.0,
        1.0,
        None,
    )
    .unwrap()
}

/// A homogeneous system on the given DC edge list, with eta and phi graphs
/// equal to the DC graph. Convenience for small hand-checked cases.
pub fn uniform_system(
    n: usize,
    dc_edges: &[(usize, usize, f64)],
    gains: GainSet,
) -> SystemDescription {
    let dc = Topology::new(n, dc_edges.iter().copied()).unwrap();
    SystemDescription::new(
        vec![
            AcArea {
                inertia: 10.0,
                p_load: 0.0
            };
            n
        ],
        vec![
            DcTerminal {
                capacitance: 0.375e-3,
                v_ref: 1.0
            };
            n
        ],
        vec![gains; n],
        dc.clone(),
        dc.clone(),
        dc,
        1.0,
        1.0,
        None,
    )
    .unwrap()
}

/// Random connected topology: a random spanning tree plus extra random
/// edges, with weights drawn uniformly from `[w_min, w_max]`.
pub fn random_connected_topology(
    rng: &mut impl Rng,
    n: usize,
    w_min: f64,
    w_max: f64,
) -> Topology {
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.push((u, v, rng.random_range(w_min..=w_max)));
    }
    if n >= 3 {
        let extra = rng.random_range(0..n);
        for _ in 0..extra {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j && !edges.iter().any(|&(a, b, _)| (a, b) == (i.min(j), i.max(j))) {
                edges.push((i.min(j), i.max(j), rng.random_range(w_min..=w_max)));
            }
        }
    }
    Topology::new(n, edges).unwrap()
}

/// Knobs for [`random_system`].
#[derive(Debug, Clone, Copy)]
pub struct RandomSystemParams {
    /// phi graph is `k_phi` times the DC graph; drawn from this range.
    pub k_phi: (f64, f64),
    /// gamma = bound * (1 + margin) with margin drawn from this range;
    /// the Laplacian proportionality bound is `k_phi / (4 v_nom)`.
    pub gamma_margin: (f64, f64),
    /// When true, `k_droop_i = c * k_droop` with one shared random factor
    /// `c`, so that the secondary-control power sharing matches the
    /// quadratic-cost optimum in the high-gain limit.
    pub tie_integral_gain: bool,
}

impl Default for RandomSystemParams {
    fn default() -> Self {
        Self {
            k_phi: (0.5, 20.0),
            gamma_margin: (0.05, 2.0),
            tie_integral_gain: false,
        }
    }
}

/// Draws a random heterogeneous system that satisfies both Laplacian
/// proportionality and the gamma lower bound, so that the certification
/// theorem applies and the closed loop is provably stable.
pub fn random_system(rng: &mut impl Rng, n: usize, params: RandomSystemParams) -> SystemDescription {
    let dc = random_connected_topology(rng, n, 1.0, 30.0);
    let k_phi = rng.random_range(params.k_phi.0..=params.k_phi.1);
    let phi = dc.scaled(k_phi).unwrap();
    let eta = random_connected_topology(rng, n, 1.0, 50.0);
    let v_nom = 1.0;
    let bound = k_phi / (4.0 * v_nom);
    let gamma = bound * (1.0 + rng.random_range(params.gamma_margin.0..=params.gamma_margin.1));
    let shared_c = rng.random_range(0.1..=2.0);
    let mut areas = Vec::with_capacity(n);
    let mut terminals = Vec::with_capacity(n);
    let mut gains = Vec::with_capacity(n);
    for _ in 0..n {
        areas.push(AcArea {
            inertia: rng.random_range(1.0..=30.0),
            p_load: 0.0,
        });
        terminals.push(DcTerminal {
            capacitance: rng.random_range(1e-4..=1e-1),
            v_ref: 1.0,
        });
        let k_droop = rng.random_range(1.0..=20.0);
        let k_droop_i = if params.tie_integral_gain {
            shared_c * k_droop
        } else {
            rng.random_range(0.1..=10.0)
        };
        gains.push(GainSet {
            k_omega: rng.random_range(10.0..=1000.0),
            k_v: rng.random_range(1.0..=100.0),
            k_droop,
            k_droop_i,
            gamma,
        });
    }
    SystemDescription::new(areas, terminals, gains, dc, eta, phi, v_nom, 1.0, None).unwrap()
}
