//! Time-domain simulation of the closed-loop system, disturbance
//! scenarios and trajectory diagnostics.
//!
//! Three models are available:
//!
//! * `linear`: the analysis model, propagated exactly by matrix
//!   exponentials between events (the DC side has sub-millisecond time
//!   constants under a 40 s horizon, so fixed explicit stepping is
//!   hopeless and anything inexact would cloud the structural tests);
//! * `nonlinear`: the same network with the exact power-current relation
//!   `I = P / V`, integrated by the L-stable SDIRK scheme;
//! * `pi-lines`: additionally one series R-L branch per DC line, with half
//!   of each line's shunt capacitance lumped onto its terminals.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::analysis::{check_assumptions, AnalysisError, EquilibriumReport};
use crate::graph::ones_complement_unchecked;
use crate::model::{
    assemble_full, assemble_reduced, controller_outputs, ModelError, StateLayout,
    SystemDescription, V_MIN,
};
use crate::sdirk::{OutOfDomain, Sdirk, SdirkFailure, SdirkOptions, SdirkStats};

/// Hard floor for nonlinear right-hand-side evaluation: below this voltage
/// the `P/V` division is meaningless and the integrator must back off.
const V_EVAL_FLOOR: f64 = 0.05;
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario: {0}")]
    InvalidScenario(String),
    #[error("event at t = {time} references node {node}, system has {n} nodes")]
    EventNodeOutOfRange { time: f64, node: usize, n: usize },
    #[error("initial state has dimension {found}, expected {expected}")]
    BadInitialState { found: usize, expected: usize },
    #[error(
        "voltage collapse at t = {t:.4} s: terminal {node} reached {v:.4} p.u., \
         below the {v_min} p.u. guard of the exact power-current relation"
    )]
    VoltageCollapse { t: f64, node: usize, v: f64, v_min: f64 },
    #[error(
        "stiffness failure: step size underflow at t = {t:.6e} s \
         (fastest local mode ~ {rate:.3e} 1/s)"
    )]
    StepSizeUnderflow { t: f64, rate: f64 },
    #[error("pi-line model needs inductance and capacitance for every DC line")]
    MissingLineDynamics,
    #[error("trajectory has {0} samples, too short for tail statistics")]
    TrajectoryTooShort(usize),
    #[error("trajectory was produced for {found} nodes, system has {expected}")]
    NodeCountMismatch { found: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// Which dynamics to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimModel {
    #[default]
    Linear,
    Nonlinear,
    /// Nonlinear power-current relation plus R-L line branches.
    PiLines,
}

/// A step change of the disturbance power at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioEvent {
    pub time: f64,
    pub node: usize,
    pub delta_p_m: f64,
}

/// A disturbance scenario: step events on `P^m`, the horizon, the output
/// sampling interval and the model variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    events: Vec<ScenarioEvent>,
    pub t_end: f64,
    pub dt_output: f64,
    pub model: SimModel,
    /// Initial deviation state in the full layout (zero when absent).
    pub initial_state: Option<DVector<f64>>,
}

impl Scenario {
    pub fn new(
        events: Vec<ScenarioEvent>,
        t_end: f64,
        dt_output: f64,
        model: SimModel,
    ) -> Result<Self, SimError> {
        if !(t_end > 0.0) {
            return Err(SimError::InvalidScenario(format!(
                "t_end must be positive, got {t_end}"
            )));
        }
        if !(dt_output > 0.0) {
            return Err(SimError::InvalidScenario(format!(
                "dt_output must be positive, got {dt_output}"
            )));
        }
        let mut events = events;
        if events.iter().any(|e| !e.time.is_finite() || e.time < 0.0) {
            return Err(SimError::InvalidScenario(
                "event times must be finite and non-negative".into(),
            ));
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self {
            events,
            t_end,
            dt_output,
            model,
            initial_state: None,
        })
    }

    pub fn with_initial_state(mut self, x0: DVector<f64>) -> Self {
        self.initial_state = Some(x0);
        self
    }

    pub fn with_model(mut self, model: SimModel) -> Self {
        self.model = model;
        self
    }

    pub fn events(&self) -> &[ScenarioEvent] {
        &self.events
    }

    /// Number of output samples: `floor(t_end / dt_output) + 1`.
    pub fn sample_count(&self) -> usize {
        self.output_steps() + 1
    }

    fn output_steps(&self) -> usize {
        ((self.t_end / self.dt_output) * (1.0 + 1e-12) + 1e-9).floor() as usize
    }

    /// The disturbance vector after all events have fired.
    pub fn final_p_m(&self, sd: &SystemDescription) -> Result<DVector<f64>, SimError> {
        let mut p_m = sd.base_p_m();
        for e in &self.events {
            if e.node >= sd.node_count() {
                return Err(SimError::EventNodeOutOfRange {
                    time: e.time,
                    node: e.node,
                    n: sd.node_count(),
                });
            }
            p_m[e.node] += e.delta_p_m;
        }
        Ok(p_m)
    }
}

/// Full (4n) or reduced (4n-1) linear dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemForm {
    Full,
    Reduced,
}

/// Sampled trajectory: states in deviation coordinates plus the derived
/// controller outputs per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub layout: StateLayout,
    pub p_gen: Vec<DVector<f64>>,
    pub p_inj: Vec<DVector<f64>>,
    /// Integrator statistics for the implicit models; `None` for the
    /// exactly propagated linear model.
    pub stats: Option<SdirkStats>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Per-sample value of one state block at one node.
    pub fn state_series(&self, offset: usize) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(move |x| x[offset])
    }
}

/// Default relative tolerance of the implicit integrator.
pub const DEFAULT_RTOL: f64 = 1e-8;
/// Default absolute tolerance of the implicit integrator.
pub const DEFAULT_ATOL: f64 = 1e-10;

/// Simulates a scenario with the model it selects. The trajectory is
/// produced in the full state layout (plus line currents for the pi model).
pub fn simulate(sd: &SystemDescription, sc: &Scenario) -> Result<Trajectory, SimError> {
    simulate_with_tolerances(sd, sc, DEFAULT_RTOL, DEFAULT_ATOL)
}

/// Like [`simulate`] with explicit integrator tolerances for the implicit
/// models. The linear model is propagated exactly and ignores them.
pub fn simulate_with_tolerances(
    sd: &SystemDescription,
    sc: &Scenario,
    rtol: f64,
    atol: f64,
) -> Result<Trajectory, SimError> {
    match sc.model {
        SimModel::Linear => simulate_linear(sd, sc, SystemForm::Full),
        SimModel::Nonlinear => simulate_nonlinear(sd, sc, false, rtol, atol),
        SimModel::PiLines => simulate_nonlinear(sd, sc, true, rtol, atol),
    }
}

/// Walks the merged sample/event timeline. Events strictly between samples
/// split the propagation interval; events on a sample time take effect for
/// the following interval. The state is continuous across events.
fn run_timeline(
    x: &mut DVector<f64>,
    sc: &Scenario,
    n: usize,
    mut apply: impl FnMut(usize, f64),
    mut advance: impl FnMut(&mut DVector<f64>, f64, f64) -> Result<(), SimError>,
    mut record: impl FnMut(&DVector<f64>, f64),
) -> Result<(), SimError> {
    for e in sc.events() {
        if e.node >= n {
            return Err(SimError::EventNodeOutOfRange {
                time: e.time,
                node: e.node,
                n,
            });
        }
    }
    let events = sc.events();
    let mut ev = 0;
    while ev < events.len() && events[ev].time <= TIME_EPS {
        apply(events[ev].node, events[ev].delta_p_m);
        ev += 1;
    }
    record(x, 0.0);
    let mut t_now = 0.0;
    for k in 1..=sc.output_steps() {
        let t_target = k as f64 * sc.dt_output;
        while ev < events.len() && events[ev].time < t_target - TIME_EPS {
            let te = events[ev].time;
            advance(x, t_now, te)?;
            t_now = te;
            while ev < events.len() && (events[ev].time - te).abs() <= TIME_EPS {
                apply(events[ev].node, events[ev].delta_p_m);
                ev += 1;
            }
        }
        advance(x, t_now, t_target)?;
        t_now = t_target;
        while ev < events.len() && events[ev].time <= t_target + TIME_EPS {
            apply(events[ev].node, events[ev].delta_p_m);
            ev += 1;
        }
        record(x, t_target);
    }
    Ok(())
}

/// Exact discretization of `x' = A x + B u` over a step `h`: both the state
/// propagator and the input integral come out of one augmented exponential,
/// which also handles singular `A` (the full model at `gamma = 0`).
fn discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, m)).copy_from(b);
    let e = (aug * h).exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

struct LinearPropagator {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    // keyed by exact step-size bits; scenarios use very few distinct steps
    cache: Vec<(u64, DMatrix<f64>, DMatrix<f64>)>,
}

impl LinearPropagator {
    fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        Self {
            a,
            b,
            cache: Vec::new(),
        }
    }

    fn advance(&mut self, x: &mut DVector<f64>, h: f64, u: &DVector<f64>) {
        if h <= TIME_EPS {
            return;
        }
        let key = h.to_bits();
        let idx = match self.cache.iter().position(|c| c.0 == key) {
            Some(i) => i,
            None => {
                let (phi, gamma) = discretize(&self.a, &self.b, h);
                self.cache.push((key, phi, gamma));
                self.cache.len() - 1
            }
        };
        let (_, phi, gamma) = &self.cache[idx];
        let mut next = phi * &*x;
        next.gemv(1.0, gamma, u, 1.0);
        *x = next;
    }
}

/// Linear simulation in the chosen form. A full-layout initial state is
/// projected onto the reduced coordinates with `phi'' = S^T phi` when the
/// reduced form is requested.
pub fn simulate_linear(
    sd: &SystemDescription,
    sc: &Scenario,
    form: SystemForm,
) -> Result<Trajectory, SimError> {
    let n = sd.node_count();
    let cls = match form {
        SystemForm::Full => assemble_full(sd),
        SystemForm::Reduced => assemble_reduced(sd),
    };
    let mut x = match &sc.initial_state {
        None => DVector::zeros(cls.dim()),
        Some(x0) => {
            if x0.len() != 4 * n {
                return Err(SimError::BadInitialState {
                    found: x0.len(),
                    expected: 4 * n,
                });
            }
            match form {
                SystemForm::Full => x0.clone(),
                SystemForm::Reduced => {
                    let s = ones_complement_unchecked(n);
                    let mut xr = DVector::zeros(4 * n - 1);
                    xr.rows_mut(0, 3 * n).copy_from(&x0.rows(0, 3 * n));
                    xr.rows_mut(3 * n, n - 1)
                        .copy_from(&(s.transpose() * x0.rows(3 * n, n)));
                    xr
                }
            }
        }
    };

    let layout = cls.layout;
    let mut propagator = LinearPropagator::new(cls.a, cls.b);
    let u = RefCell::new(sd.base_p_m());
    let mut traj = TrajectoryBuilder::new(sd, layout, sc.sample_count());
    run_timeline(
        &mut x,
        sc,
        n,
        |node, delta| u.borrow_mut()[node] += delta,
        |x, t0, t1| {
            propagator.advance(x, t1 - t0, &u.borrow());
            Ok(())
        },
        |x, t| traj.push(x, t),
    )?;
    Ok(traj.finish(None))
}

struct TrajectoryBuilder<'a> {
    sd: &'a SystemDescription,
    layout: StateLayout,
    t: Vec<f64>,
    states: Vec<DVector<f64>>,
    p_gen: Vec<DVector<f64>>,
    p_inj: Vec<DVector<f64>>,
}

impl<'a> TrajectoryBuilder<'a> {
    fn new(sd: &'a SystemDescription, layout: StateLayout, capacity: usize) -> Self {
        Self {
            sd,
            layout,
            t: Vec::with_capacity(capacity),
            states: Vec::with_capacity(capacity),
            p_gen: Vec::with_capacity(capacity),
            p_inj: Vec::with_capacity(capacity),
        }
    }

    fn push(&mut self, x: &DVector<f64>, t: f64) {
        let (p_gen, p_inj) = controller_outputs(self.sd, &self.layout, x);
        self.t.push(t);
        self.states.push(x.clone());
        self.p_gen.push(p_gen);
        self.p_inj.push(p_inj);
    }

    fn finish(self, stats: Option<SdirkStats>) -> Trajectory {
        Trajectory {
            t: self.t,
            states: self.states,
            layout: self.layout,
            p_gen: self.p_gen,
            p_inj: self.p_inj,
            stats,
        }
    }
}

/// Precomputed pieces of the nonlinear right-hand side.
struct NonlinearDynamics<'a> {
    sd: &'a SystemDescription,
    layout: StateLayout,
    l_r: DMatrix<f64>,
    l_eta: DMatrix<f64>,
    l_phi: DMatrix<f64>,
    /// Linear rows of the Jacobian (everything except the V rows).
    template: DMatrix<f64>,
    /// Effective terminal capacitance: `C_i` plus half the shunt C of the
    /// incident lines in the pi model.
    c_eff: DVector<f64>,
    /// `(i, j, r, l)` per line branch in the pi model.
    branches: Vec<(usize, usize, f64, f64)>,
    u: RefCell<DVector<f64>>,
}

impl<'a> NonlinearDynamics<'a> {
    fn new(sd: &'a SystemDescription, pi: bool) -> Result<Self, SimError> {
        let n = sd.node_count();
        let mut branches = Vec::new();
        let mut c_eff =
            DVector::from_iterator(n, sd.terminals().iter().map(|t| t.capacitance));
        if pi {
            let params = sd.line_dynamics().ok_or(SimError::MissingLineDynamics)?;
            for (e, p) in sd.dc_topology().edges().iter().zip(params) {
                branches.push((e.i, e.j, 1.0 / e.weight, p.inductance));
                c_eff[e.i] += p.capacitance / 2.0;
                c_eff[e.j] += p.capacitance / 2.0;
            }
        }
        let layout = if pi {
            StateLayout::full_with_lines(n, branches.len())
        } else {
            StateLayout::full(n)
        };
        let full = assemble_full(sd);
        let dim = layout.dim();
        let mut template = DMatrix::zeros(dim, dim);
        // omega, eta and phi rows are exactly the linear model
        template
            .view_mut((0, 0), (n, 4 * n))
            .copy_from(&full.a.view((0, 0), (n, 4 * n)));
        template
            .view_mut((2 * n, 0), (2 * n, 4 * n))
            .copy_from(&full.a.view((2 * n, 0), (2 * n, 4 * n)));
        // line branch rows are linear too
        for (k, &(i, j, r, l)) in branches.iter().enumerate() {
            let row = 4 * n + k;
            template[(row, n + i)] = 1.0 / l;
            template[(row, n + j)] = -1.0 / l;
            template[(row, row)] = -r / l;
        }
        Ok(Self {
            sd,
            layout,
            l_r: sd.dc_topology().weighted_laplacian().into_matrix(),
            l_eta: sd.eta_topology().weighted_laplacian().into_matrix(),
            l_phi: sd.phi_topology().weighted_laplacian().into_matrix(),
            template,
            c_eff,
            branches,
            u: RefCell::new(sd.base_p_m()),
        })
    }

    fn pi(&self) -> bool {
        !self.branches.is_empty() || self.layout.line_count > 0
    }

    /// Injected power per node from the converter law, in deviations.
    fn p_inj(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.sd.node_count();
        let mut p = &self.l_phi * x.rows(3 * n, n);
        for (i, g) in self.sd.gains().iter().enumerate() {
            p[i] += g.k_omega * x[i] - g.k_v * x[n + i];
        }
        p
    }

    fn rhs(&self, _t: f64, x: &DVector<f64>, out: &mut DVector<f64>) -> Result<(), OutOfDomain> {
        let n = self.sd.node_count();
        let u = self.u.borrow();
        let p_inj = self.p_inj(x);
        for (i, (g, area)) in self
            .sd
            .gains()
            .iter()
            .zip(self.sd.areas())
            .enumerate()
        {
            let p_gen = -g.k_droop * x[i] - g.k_v / g.k_omega * g.k_droop_i * x[2 * n + i];
            out[i] = (p_gen + u[i] - p_inj[i]) / area.inertia;
            out[3 * n + i] = g.k_omega / g.k_v * x[i] - g.gamma * x[3 * n + i];
        }
        let eta_cons = &self.l_eta * x.rows(2 * n, n);
        for i in 0..n {
            out[2 * n + i] = self.sd.gains()[i].k_droop_i * x[i] - eta_cons[i];
        }
        // V rows: exact power-current relation
        let mut i_inj = DVector::zeros(n);
        for i in 0..n {
            let v_abs = self.sd.terminals()[i].v_ref + x[n + i];
            if v_abs < V_EVAL_FLOOR {
                return Err(OutOfDomain);
            }
            i_inj[i] = p_inj[i] / v_abs;
        }
        if self.pi() {
            let lines = x.rows(4 * n, self.branches.len());
            let mut net = i_inj;
            for (k, &(i, j, _, _)) in self.branches.iter().enumerate() {
                net[i] -= lines[k];
                net[j] += lines[k];
            }
            for i in 0..n {
                out[n + i] = net[i] / self.c_eff[i];
            }
            for (k, &(i, j, r, l)) in self.branches.iter().enumerate() {
                out[4 * n + k] = (x[n + i] - x[n + j] - r * lines[k]) / l;
            }
        } else {
            let flow = &self.l_r * x.rows(n, n);
            for i in 0..n {
                out[n + i] = (i_inj[i] - flow[i]) / self.c_eff[i];
            }
        }
        Ok(())
    }

    fn jacobian(
        &self,
        _t: f64,
        x: &DVector<f64>,
        out: &mut DMatrix<f64>,
    ) -> Result<(), OutOfDomain> {
        let n = self.sd.node_count();
        out.copy_from(&self.template);
        let p_inj = self.p_inj(x);
        for i in 0..n {
            let g = &self.sd.gains()[i];
            let v_abs = self.sd.terminals()[i].v_ref + x[n + i];
            if v_abs < V_EVAL_FLOOR {
                return Err(OutOfDomain);
            }
            let ci = self.c_eff[i];
            // d i_inj_i / d x through p_inj and through the dividing voltage
            out[(n + i, i)] = g.k_omega / (v_abs * ci);
            out[(n + i, n + i)] = (-g.k_v / v_abs - p_inj[i] / (v_abs * v_abs)) / ci;
            for j in 0..n {
                out[(n + i, 3 * n + j)] = self.l_phi[(i, j)] / (v_abs * ci);
            }
            if self.pi() {
                for (k, &(bi, bj, _, _)) in self.branches.iter().enumerate() {
                    if bi == i {
                        out[(n + i, 4 * n + k)] = -1.0 / ci;
                    } else if bj == i {
                        out[(n + i, 4 * n + k)] = 1.0 / ci;
                    }
                }
            } else {
                for j in 0..n {
                    out[(n + i, n + j)] -= self.l_r[(i, j)] / ci;
                }
            }
        }
        Ok(())
    }

    /// First terminal below the collapse guard, if any.
    fn collapsed_node(&self, x: &DVector<f64>) -> Option<(usize, f64)> {
        let n = self.sd.node_count();
        (0..n)
            .map(|i| (i, self.sd.terminals()[i].v_ref + x[n + i]))
            .find(|(_, v)| *v < V_MIN)
    }
}

fn simulate_nonlinear(
    sd: &SystemDescription,
    sc: &Scenario,
    pi: bool,
    rtol: f64,
    atol: f64,
) -> Result<Trajectory, SimError> {
    let n = sd.node_count();
    let model = NonlinearDynamics::new(sd, pi)?;
    let layout = model.layout;
    let dim = layout.dim();
    let mut x = match &sc.initial_state {
        None => DVector::zeros(dim),
        Some(x0) => {
            if x0.len() != 4 * n {
                return Err(SimError::BadInitialState {
                    found: x0.len(),
                    expected: 4 * n,
                });
            }
            let mut x = DVector::zeros(dim);
            x.rows_mut(0, 4 * n).copy_from(x0);
            x
        }
    };

    let rhs = |t: f64, x: &DVector<f64>, out: &mut DVector<f64>| model.rhs(t, x, out);
    let jac = |t: f64, x: &DVector<f64>, out: &mut DMatrix<f64>| model.jacobian(t, x, out);
    let opts = SdirkOptions {
        rtol,
        atol,
        h_initial: (sc.dt_output / 4.0).min(1e-3),
        h_min: 1e-13,
    };
    let mut solver = Sdirk::new(dim, &rhs, &jac, opts);
    let stats = RefCell::new(SdirkStats::default());

    let mut traj = TrajectoryBuilder::new(sd, layout, sc.sample_count());
    run_timeline(
        &mut x,
        sc,
        n,
        |node, delta| model.u.borrow_mut()[node] += delta,
        |x, t0, t1| {
            solver
                .integrate_to(t0, t1, x, &mut stats.borrow_mut())
                .map_err(|e| match e {
                    SdirkFailure::StepSizeUnderflow { t, fastest_rate } => {
                        // a hard collapse usually manifests as an underflow
                        // while the voltage hugs the evaluation floor
                        if let Some((node, v)) = model.collapsed_node(x) {
                            SimError::VoltageCollapse {
                                t,
                                node,
                                v,
                                v_min: V_MIN,
                            }
                        } else {
                            SimError::StepSizeUnderflow {
                                t,
                                rate: fastest_rate.unwrap_or(f64::NAN),
                            }
                        }
                    }
                })?;
            if let Some((node, v)) = model.collapsed_node(x) {
                return Err(SimError::VoltageCollapse {
                    t: t1,
                    node,
                    v,
                    v_min: V_MIN,
                });
            }
            Ok(())
        },
        |x, t| traj.push(x, t),
    )?;
    let stats = stats.into_inner();
    Ok(traj.finish(Some(stats)))
}

/// Per-sample value of the stability energy function along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovTrace {
    pub values: Vec<f64>,
    /// Whether the sampled values never increased by more than
    /// `1e-9 * W(0)`. Guaranteed by the certificate when both assumptions
    /// hold; merely reported otherwise.
    pub monotone: bool,
}

/// Evaluates the certification energy function in equilibrium-shifted
/// coordinates along a trajectory:
/// `W = 1/2 (w' Kw Kv^-1 M^-1 w + V_nom V' C V + eta' eta + phi'' S' L_phi S phi'')`.
///
/// Requires Laplacian proportionality (the phi block is built on `L_phi`)
/// and an equilibrium in reduced coordinates to shift by.
pub fn lyapunov_along(
    traj: &Trajectory,
    sd: &SystemDescription,
    eq: &EquilibriumReport,
) -> Result<LyapunovTrace, SimError> {
    let n = sd.node_count();
    if traj.layout.n != n {
        return Err(SimError::NodeCountMismatch {
            found: traj.layout.n,
            expected: n,
        });
    }
    let (a1, _) = check_assumptions(sd)?;
    if !a1.holds {
        return Err(SimError::Analysis(AnalysisError::AssumptionOneViolated));
    }
    let s = ones_complement_unchecked(n);
    let phi_weight = s.transpose() * sd.phi_topology().weighted_laplacian().as_matrix() * &s;
    let w_omega: Vec<f64> = sd
        .gains()
        .iter()
        .zip(sd.areas())
        .map(|(g, a)| g.k_omega / g.k_v * a.inertia)
        .collect();
    let w_v: Vec<f64> = sd
        .terminals()
        .iter()
        .map(|t| sd.v_nom() * t.capacitance)
        .collect();

    let values: Vec<f64> = traj
        .states
        .iter()
        .map(|x| {
            let mut w = 0.0;
            for i in 0..n {
                let dw = x[i] - eq.x0[i];
                let dv = x[n + i] - eq.x0[n + i];
                let de = x[2 * n + i] - eq.x0[2 * n + i];
                w += w_omega[i] * dw * dw + w_v[i] * dv * dv + de * de;
            }
            let phi_red: DVector<f64> = if traj.layout.is_reduced() {
                x.rows(3 * n, n - 1).into_owned()
            } else {
                s.transpose() * x.rows(3 * n, n)
            };
            let dphi = phi_red - eq.x0.rows(3 * n, n - 1);
            w += (&phi_weight * &dphi).dot(&dphi);
            0.5 * w
        })
        .collect();

    let tol = 1e-9 * values.first().copied().unwrap_or(0.0);
    let monotone = values.windows(2).all(|w| w[1] <= w[0] + tol);
    Ok(LyapunovTrace { values, monotone })
}

/// When a signal settled into a band around its tail mean, if it did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SettlingTime {
    /// Last time the signal was outside the band (0 when it never left).
    At(f64),
    /// The signal still leaves the band inside the tail window itself.
    NotReached,
}

/// Tail statistics of one run. Tail means are taken over the last 10% of
/// samples; settling bands are 1e-4 p.u. for frequency, 1e-3 p.u. for
/// voltage and generated power.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateMetrics {
    pub tail_start_time: f64,
    pub tail_omega_dev: DVector<f64>,
    pub tail_v_dev: DVector<f64>,
    /// Absolute tail voltages, `v_ref + tail_v_dev`.
    pub tail_v_abs: DVector<f64>,
    pub tail_p_gen: DVector<f64>,
    pub tail_p_gen_total: f64,
    /// Largest pairwise difference of the tail generation values.
    pub p_gen_spread: f64,
    pub settling_omega: Vec<SettlingTime>,
    pub settling_v: Vec<SettlingTime>,
    pub settling_p_gen: Vec<SettlingTime>,
}

pub const OMEGA_BAND: f64 = 1e-4;
pub const VOLTAGE_BAND: f64 = 1e-3;
pub const P_GEN_BAND: f64 = 1e-3;

pub fn steady_state_metrics(
    traj: &Trajectory,
    sd: &SystemDescription,
) -> Result<SteadyStateMetrics, SimError> {
    let len = traj.len();
    if len < 10 {
        return Err(SimError::TrajectoryTooShort(len));
    }
    if traj.layout.n != sd.node_count() {
        return Err(SimError::NodeCountMismatch {
            found: traj.layout.n,
            expected: sd.node_count(),
        });
    }
    let n = sd.node_count();
    let tail_from = len - len / 10;
    let tail_count = (len - tail_from) as f64;
    let tail_start_time = traj.t[tail_from];

    let mut tail_omega = DVector::zeros(n);
    let mut tail_v = DVector::zeros(n);
    let mut tail_p_gen = DVector::zeros(n);
    for k in tail_from..len {
        tail_omega += traj.states[k].rows(0, n);
        tail_v += traj.states[k].rows(n, n);
        tail_p_gen += &traj.p_gen[k];
    }
    tail_omega /= tail_count;
    tail_v /= tail_count;
    tail_p_gen /= tail_count;

    let settle = |series: &dyn Fn(usize, usize) -> f64, mean: &DVector<f64>, band: f64| {
        (0..n)
            .map(|i| {
                let mut last_out: Option<f64> = None;
                for k in 0..len {
                    if (series(k, i) - mean[i]).abs() > band {
                        last_out = Some(traj.t[k]);
                    }
                }
                match last_out {
                    None => SettlingTime::At(0.0),
                    Some(t) if t < tail_start_time => SettlingTime::At(t),
                    Some(_) => SettlingTime::NotReached,
                }
            })
            .collect::<Vec<_>>()
    };

    let omega_series = |k: usize, i: usize| traj.states[k][i];
    let v_series = |k: usize, i: usize| traj.states[k][n + i];
    let p_gen_series = |k: usize, i: usize| traj.p_gen[k][i];

    let p_gen_spread = tail_p_gen.max() - tail_p_gen.min();
    let v_ref = DVector::from_iterator(n, sd.terminals().iter().map(|t| t.v_ref));
    Ok(SteadyStateMetrics {
        tail_start_time,
        settling_omega: settle(&omega_series, &tail_omega, OMEGA_BAND),
        settling_v: settle(&v_series, &tail_v, VOLTAGE_BAND),
        settling_p_gen: settle(&p_gen_series, &tail_p_gen, P_GEN_BAND),
        tail_p_gen_total: tail_p_gen.sum(),
        p_gen_spread,
        tail_v_abs: &v_ref + &tail_v,
        tail_omega_dev: tail_omega,
        tail_v_dev: tail_v,
        tail_p_gen,
    })
}
