//! Physical and controller model: per-node dynamics, the distributed
//! generation and converter control laws, and assembly of the closed-loop
//! linear system in full (4n) and reduced (4n-1) coordinates.
//!
//! All state-space quantities are per-unit deviations from the nominal
//! operating point. The state ordering is fixed as
//! `(omega-block, V-block, eta-block, phi-block)`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{ones_complement_unchecked, GraphError, Topology};

/// Guard for the exact power-current relation `I = P / V`: below this
/// voltage the linearized design assumptions are meaningless and a
/// simulation should fail loudly instead of producing garbage.
pub const V_MIN: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("node {node}: {what} must be positive, got {value}")]
    NonPositiveParameter {
        node: usize,
        what: &'static str,
        value: f64,
    },
    #[error("node {node}: k_droop_i must be non-negative, got {value}")]
    NegativeIntegralGain { node: usize, value: f64 },
    #[error("node {node}: gamma must be non-negative, got {value}")]
    NegativeGamma { node: usize, value: f64 },
    #[error("gamma must be shared by all nodes: node {node} has {value}, node 0 has {first}")]
    MixedGamma { node: usize, value: f64, first: f64 },
    #[error("{what} must be positive, got {value}")]
    NonPositiveGlobal { what: &'static str, value: f64 },
    #[error("inconsistent node counts: {0} areas, {1} terminals, {2} gain sets")]
    MismatchedNodeCounts(usize, usize, usize),
    #[error("{name} topology has {found} nodes, expected {expected}")]
    TopologyNodeCount {
        name: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("{0} line-dynamics entries for {1} DC lines")]
    MismatchedLineDynamics(usize, usize),
    #[error("DC line {line} ({i}, {j}): {what} must be positive, got {value}")]
    NonPositiveLineParameter {
        line: usize,
        i: usize,
        j: usize,
        what: &'static str,
        value: f64,
    },
    #[error(
        "voltage collapse: terminal voltage {v} p.u. is below the {v_min} p.u. guard \
         for the exact power-current relation"
    )]
    VoltageCollapse { v: f64, v_min: f64 },
}

/// An aggregate AC area: a single equivalent machine behind the converter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcArea {
    /// Inertia of the aggregate machine (p.u. * s^2).
    pub inertia: f64,
    /// Constant component of the load/disturbance power deviation (p.u.).
    /// Scenario events add step changes on top of this.
    pub p_load: f64,
}

/// A DC converter terminal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcTerminal {
    /// Terminal capacitance (p.u.).
    pub capacitance: f64,
    /// Nominal voltage reference of this converter (p.u.).
    pub v_ref: f64,
}

/// Controller gains of one node. `gamma` is a single damping coefficient
/// shared by every node; it is kept here so that the converter control law
/// is self-contained, and [`SystemDescription::new`] rejects mixed values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSet {
    /// Frequency gain of the converter controller (p.u. power per p.u. frequency).
    pub k_omega: f64,
    /// Voltage gain of the converter controller.
    pub k_v: f64,
    /// Proportional droop gain of the generation controller.
    pub k_droop: f64,
    /// Integral droop gain. Zero is allowed (it disables secondary control
    /// and leaves the eta consensus direction undriven, which the
    /// certification path reports as a failed Hurwitz test).
    pub k_droop_i: f64,
    /// Damping of the converter phase-emulation state, shared by all nodes.
    pub gamma: f64,
}

impl GainSet {
    fn validate(&self, node: usize) -> Result<(), ModelError> {
        for (what, value) in [
            ("k_omega", self.k_omega),
            ("k_v", self.k_v),
            ("k_droop", self.k_droop),
        ] {
            if !(value > 0.0) {
                return Err(ModelError::NonPositiveParameter { node, what, value });
            }
        }
        if !(self.k_droop_i >= 0.0) {
            return Err(ModelError::NegativeIntegralGain {
                node,
                value: self.k_droop_i,
            });
        }
        if !(self.gamma >= 0.0) {
            return Err(ModelError::NegativeGamma {
                node,
                value: self.gamma,
            });
        }
        Ok(())
    }
}

/// Series inductance and shunt capacitance of one DC line, for the
/// simulation-only pi-line extension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiLineParams {
    pub inductance: f64,
    pub capacitance: f64,
}

/// The single source of truth for a system: per-node physical parameters,
/// per-node controller gains, and the three network topologies.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDescription {
    areas: Vec<AcArea>,
    terminals: Vec<DcTerminal>,
    gains: Vec<GainSet>,
    dc_topology: Topology,
    eta_topology: Topology,
    phi_topology: Topology,
    v_nom: f64,
    omega_ref: f64,
    /// Per-DC-line series L and shunt C, aligned with `dc_topology.edges()`.
    line_dynamics: Option<Vec<PiLineParams>>,
}

impl SystemDescription {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        areas: Vec<AcArea>,
        terminals: Vec<DcTerminal>,
        gains: Vec<GainSet>,
        dc_topology: Topology,
        eta_topology: Topology,
        phi_topology: Topology,
        v_nom: f64,
        omega_ref: f64,
        line_dynamics: Option<Vec<PiLineParams>>,
    ) -> Result<Self, ModelError> {
        let n = areas.len();
        if terminals.len() != n || gains.len() != n {
            return Err(ModelError::MismatchedNodeCounts(
                n,
                terminals.len(),
                gains.len(),
            ));
        }
        for (name, topo) in [
            ("dc", &dc_topology),
            ("eta", &eta_topology),
            ("phi", &phi_topology),
        ] {
            if topo.node_count() != n {
                return Err(ModelError::TopologyNodeCount {
                    name,
                    found: topo.node_count(),
                    expected: n,
                });
            }
        }
        for (node, area) in areas.iter().enumerate() {
            if !(area.inertia > 0.0) {
                return Err(ModelError::NonPositiveParameter {
                    node,
                    what: "inertia",
                    value: area.inertia,
                });
            }
        }
        for (node, term) in terminals.iter().enumerate() {
            for (what, value) in [("capacitance", term.capacitance), ("v_ref", term.v_ref)] {
                if !(value > 0.0) {
                    return Err(ModelError::NonPositiveParameter { node, what, value });
                }
            }
        }
        for (node, g) in gains.iter().enumerate() {
            g.validate(node)?;
            if g.gamma != gains[0].gamma {
                return Err(ModelError::MixedGamma {
                    node,
                    value: g.gamma,
                    first: gains[0].gamma,
                });
            }
        }
        if !(v_nom > 0.0) {
            return Err(ModelError::NonPositiveGlobal {
                what: "v_nom",
                value: v_nom,
            });
        }
        if let Some(lines) = &line_dynamics {
            if lines.len() != dc_topology.edge_count() {
                return Err(ModelError::MismatchedLineDynamics(
                    lines.len(),
                    dc_topology.edge_count(),
                ));
            }
            for (k, (p, e)) in lines.iter().zip(dc_topology.edges()).enumerate() {
                for (what, value) in [("inductance", p.inductance), ("capacitance", p.capacitance)]
                {
                    if !(value > 0.0) {
                        return Err(ModelError::NonPositiveLineParameter {
                            line: k,
                            i: e.i,
                            j: e.j,
                            what,
                            value,
                        });
                    }
                }
            }
        }
        Ok(Self {
            areas,
            terminals,
            gains,
            dc_topology,
            eta_topology,
            phi_topology,
            v_nom,
            omega_ref,
            line_dynamics,
        })
    }

    pub fn node_count(&self) -> usize {
        self.areas.len()
    }

    pub fn areas(&self) -> &[AcArea] {
        &self.areas
    }

    pub fn terminals(&self) -> &[DcTerminal] {
        &self.terminals
    }

    pub fn gains(&self) -> &[GainSet] {
        &self.gains
    }

    pub fn dc_topology(&self) -> &Topology {
        &self.dc_topology
    }

    pub fn eta_topology(&self) -> &Topology {
        &self.eta_topology
    }

    pub fn phi_topology(&self) -> &Topology {
        &self.phi_topology
    }

    pub fn v_nom(&self) -> f64 {
        self.v_nom
    }

    pub fn omega_ref(&self) -> f64 {
        self.omega_ref
    }

    pub fn gamma(&self) -> f64 {
        self.gains[0].gamma
    }

    pub fn line_dynamics(&self) -> Option<&[PiLineParams]> {
        self.line_dynamics.as_deref()
    }

    /// Constant part of the disturbance vector (before scenario events).
    pub fn base_p_m(&self) -> DVector<f64> {
        DVector::from_iterator(self.areas.len(), self.areas.iter().map(|a| a.p_load))
    }

    /// Returns a copy with every `k_omega` multiplied by `scale`. Used for
    /// the limit studies of the frequency-restoration residual.
    pub fn with_scaled_k_omega(&self, scale: f64) -> Self {
        let mut out = self.clone();
        for g in &mut out.gains {
            g.k_omega *= scale;
        }
        out
    }

    /// Returns a copy with a different shared `gamma`.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self, ModelError> {
        let mut out = self.clone();
        for g in &mut out.gains {
            g.gamma = gamma;
        }
        if !(gamma >= 0.0) {
            return Err(ModelError::NegativeGamma {
                node: 0,
                value: gamma,
            });
        }
        Ok(out)
    }

    pub(crate) fn diag_inv_inertia(&self) -> DVector<f64> {
        DVector::from_iterator(self.areas.len(), self.areas.iter().map(|a| 1.0 / a.inertia))
    }

    pub(crate) fn diag_elastance(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.terminals.len(),
            self.terminals.iter().map(|t| 1.0 / t.capacitance),
        )
    }
}

/// Distributed PI generation controller with a consensus filter on the
/// integral state. Neighbor entries are `(weight, eta_j)` pairs.
///
/// Returns `(p_gen, eta_dot)` with
/// `p_gen = -k_droop (omega - omega_ref) - (k_v / k_omega) k_droop_i eta` and
/// `eta_dot = k_droop_i (omega - omega_ref) - sum w (eta - eta_j)`.
pub fn generation_control(
    omega: f64,
    eta_self: f64,
    eta_neighbors: &[(f64, f64)],
    gains: &GainSet,
    omega_ref: f64,
) -> (f64, f64) {
    let omega_dev = omega - omega_ref;
    let p_gen = -gains.k_droop * omega_dev - gains.k_v / gains.k_omega * gains.k_droop_i * eta_self;
    let consensus: f64 = eta_neighbors
        .iter()
        .map(|&(w, eta_j)| w * (eta_self - eta_j))
        .sum();
    let eta_dot = gains.k_droop_i * omega_dev - consensus;
    (p_gen, eta_dot)
}

/// Converter controller emulating an AC network between the isolated areas.
/// Neighbor entries are `(weight, phi_j)` pairs.
///
/// Returns `(p_inj, phi_dot)` with
/// `p_inj = k_omega (omega - omega_ref) + k_v (v_ref - v) + sum w (phi - phi_j)`
/// and `phi_dot = (k_omega / k_v) omega - gamma * phi`. The phase-emulation
/// drive uses `omega` as passed; the closed-loop assembly works in deviation
/// coordinates and therefore feeds the frequency deviation here.
pub fn converter_control(
    omega: f64,
    v: f64,
    phi_self: f64,
    phi_neighbors: &[(f64, f64)],
    gains: &GainSet,
    v_ref: f64,
    omega_ref: f64,
) -> (f64, f64) {
    let consensus: f64 = phi_neighbors
        .iter()
        .map(|&(w, phi_j)| w * (phi_self - phi_j))
        .sum();
    let p_inj = gains.k_omega * (omega - omega_ref) + gains.k_v * (v_ref - v) + consensus;
    let phi_dot = gains.k_omega / gains.k_v * omega - gains.gamma * phi_self;
    (p_inj, phi_dot)
}

/// How injected AC power maps to injected DC current.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurrentMode {
    /// `I = P / V` with the actual terminal voltage. Errors below [`V_MIN`].
    Exact,
    /// `I = P / V_nom`, the linearization used by the analysis model.
    Linearized,
}

/// Converts injected power to injected current. `v` is the absolute
/// terminal voltage (only used in [`CurrentMode::Exact`]).
pub fn injected_current(
    p_inj: f64,
    v: f64,
    mode: CurrentMode,
    v_nom: f64,
) -> Result<f64, ModelError> {
    match mode {
        CurrentMode::Exact => {
            if v < V_MIN {
                Err(ModelError::VoltageCollapse { v, v_min: V_MIN })
            } else {
                Ok(p_inj / v)
            }
        }
        CurrentMode::Linearized => Ok(p_inj / v_nom),
    }
}

/// Index map of the stacked state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    /// Node count.
    pub n: usize,
    /// Length of the phi block: `n` in full form, `n - 1` in reduced form.
    pub phi_len: usize,
    /// Per-line inductor current states appended by the pi-line model.
    pub line_count: usize,
}

impl StateLayout {
    pub fn full(n: usize) -> Self {
        Self {
            n,
            phi_len: n,
            line_count: 0,
        }
    }

    pub fn reduced(n: usize) -> Self {
        Self {
            n,
            phi_len: n - 1,
            line_count: 0,
        }
    }

    pub fn full_with_lines(n: usize, line_count: usize) -> Self {
        Self {
            n,
            phi_len: n,
            line_count,
        }
    }

    pub fn is_reduced(&self) -> bool {
        self.phi_len + 1 == self.n
    }

    pub fn dim(&self) -> usize {
        3 * self.n + self.phi_len + self.line_count
    }

    pub fn omega(&self) -> std::ops::Range<usize> {
        0..self.n
    }

    pub fn v(&self) -> std::ops::Range<usize> {
        self.n..2 * self.n
    }

    pub fn eta(&self) -> std::ops::Range<usize> {
        2 * self.n..3 * self.n
    }

    pub fn phi(&self) -> std::ops::Range<usize> {
        3 * self.n..3 * self.n + self.phi_len
    }

    pub fn lines(&self) -> std::ops::Range<usize> {
        let start = 3 * self.n + self.phi_len;
        start..start + self.line_count
    }
}

/// The assembled closed-loop linear system `x_dot = A x + B p_m` together
/// with the layout of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub layout: StateLayout,
}

impl ClosedLoopSystem {
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn is_reduced(&self) -> bool {
        self.layout.is_reduced()
    }
}

/// Assembles the full 4n-state closed-loop system in deviation coordinates
/// `(omega_hat, V_hat, eta, phi)`. The input matrix `B` maps the disturbance
/// `P^m` into the omega block through the inverse inertias.
pub fn assemble_full(sd: &SystemDescription) -> ClosedLoopSystem {
    let n = sd.node_count();
    let layout = StateLayout::full(n);
    let dim = layout.dim();
    let m_inv = sd.diag_inv_inertia();
    let e_inv = sd.diag_elastance();
    let l_r = sd.dc_topology().weighted_laplacian();
    let l_eta = sd.eta_topology().weighted_laplacian();
    let l_phi = sd.phi_topology().weighted_laplacian();
    let v_nom = sd.v_nom();

    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DMatrix::zeros(dim, n);
    for i in 0..n {
        let g = &sd.gains()[i];
        // omega row: M(-(K_droop + K_omega) w + K_v V - K_v/K_omega K_droop_i eta - L_phi phi + P^m)
        a[(i, i)] = -m_inv[i] * (g.k_droop + g.k_omega);
        a[(i, n + i)] = m_inv[i] * g.k_v;
        a[(i, 2 * n + i)] = -m_inv[i] * g.k_v / g.k_omega * g.k_droop_i;
        for j in 0..n {
            a[(i, 3 * n + j)] -= m_inv[i] * l_phi[(i, j)];
        }
        b[(i, i)] = m_inv[i];
        // V row: E(K_omega/V_nom w - (L_R + K_v/V_nom) V + L_phi/V_nom phi)
        a[(n + i, i)] = e_inv[i] * g.k_omega / v_nom;
        a[(n + i, n + i)] = -e_inv[i] * g.k_v / v_nom;
        for j in 0..n {
            a[(n + i, n + j)] -= e_inv[i] * l_r[(i, j)];
            a[(n + i, 3 * n + j)] += e_inv[i] * l_phi[(i, j)] / v_nom;
        }
        // eta row: K_droop_i w - L_eta eta
        a[(2 * n + i, i)] = g.k_droop_i;
        for j in 0..n {
            a[(2 * n + i, 2 * n + j)] -= l_eta[(i, j)];
        }
        // phi row: K_omega/K_v w - gamma phi
        a[(3 * n + i, i)] = g.k_omega / g.k_v;
        a[(3 * n + i, 3 * n + i)] = -sd.gamma();
    }
    ClosedLoopSystem { a, b, layout }
}

/// Assembles the reduced (4n-1)-state system with `phi'' = S^T phi`, which
/// drops the unobservable, marginally stable all-ones phi mode.
pub fn assemble_reduced(sd: &SystemDescription) -> ClosedLoopSystem {
    let n = sd.node_count();
    let full = assemble_full(sd);
    let s = ones_complement_unchecked(n);
    let layout = StateLayout::reduced(n);
    let dim = layout.dim();

    // x_red = T x_full with T = blkdiag(I_3n, S^T); the discarded mode does
    // not feed back into the retained states, so A_red = T A T^+ exactly.
    let mut t = DMatrix::zeros(dim, 4 * n);
    let mut t_inv = DMatrix::zeros(4 * n, dim);
    for i in 0..3 * n {
        t[(i, i)] = 1.0;
        t_inv[(i, i)] = 1.0;
    }
    for r in 0..n.saturating_sub(1) {
        for c in 0..n {
            t[(3 * n + r, 3 * n + c)] = s[(c, r)];
            t_inv[(3 * n + c, 3 * n + r)] = s[(c, r)];
        }
    }
    let a = &t * &full.a * &t_inv;
    let b = &t * &full.b;
    ClosedLoopSystem { a, b, layout }
}

/// Evaluates both control laws on a full-layout deviation state and returns
/// the stacked `(P^gen, P^inj)` vectors. For reduced-layout states the phi
/// consensus term is computed through `L_phi S phi''`.
pub fn controller_outputs(
    sd: &SystemDescription,
    layout: &StateLayout,
    state: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = sd.node_count();
    let omega = state.rows(0, n);
    let v = state.rows(n, n);
    let eta = state.rows(2 * n, n);
    let l_phi = sd.phi_topology().weighted_laplacian();
    let phi_consensus: DVector<f64> = if layout.is_reduced() {
        let s = ones_complement_unchecked(n);
        let phi_red = state.rows(3 * n, n - 1);
        l_phi.as_matrix() * (s * phi_red)
    } else {
        let phi = state.rows(3 * n, n);
        l_phi.as_matrix() * phi
    };
    let mut p_gen = DVector::zeros(n);
    let mut p_inj = DVector::zeros(n);
    for i in 0..n {
        let g = &sd.gains()[i];
        p_gen[i] = -g.k_droop * omega[i] - g.k_v / g.k_omega * g.k_droop_i * eta[i];
        p_inj[i] = g.k_omega * omega[i] - g.k_v * v[i] + phi_consensus[i];
    }
    (p_gen, p_inj)
}
