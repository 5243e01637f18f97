//! The three command implementations behind the binary, exposed as library
//! functions so tests can drive them without spawning processes.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use mtdc_core::{
    assemble_reduced, certify, equilibrium, lyapunov_along, objective_gap, simulate,
    steady_state_metrics, CertificateReport, CertificationMethod, EquilibriumReport, ObjectiveGap,
    Scenario, SettlingTime, SimModel, SteadyStateMetrics, SystemDescription, Trajectory,
};

use crate::config::parse_config;
use crate::{csvio, CliError};

/// Exit code when a command ran but the analysis verdict is negative
/// (not stable, no unique equilibrium, infeasible).
pub const EXIT_NEGATIVE: i32 = 2;

fn read_config(path: &Path) -> Result<(SystemDescription, Option<Scenario>), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Semantic(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn fmt_num(x: f64) -> String {
    format!("{x:.6e}")
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub struct CertifyOutcome {
    pub report: CertificateReport,
    pub text: String,
}

impl CertifyOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.certified() {
            0
        } else {
            EXIT_NEGATIVE
        }
    }
}

pub fn cmd_certify(config: &Path) -> Result<CertifyOutcome, CliError> {
    let (sd, _) = read_config(config)?;
    let report = certify(&sd)?;
    let mut text = String::new();
    writeln!(text, "stability certificate").unwrap();
    match report.assumption1.k_phi {
        Some(k) => writeln!(
            text,
            "  laplacian proportionality L_phi = k_phi L_R: holds, k_phi = {}",
            fmt_num(k)
        )
        .unwrap(),
        None => writeln!(text, "  laplacian proportionality L_phi = k_phi L_R: fails").unwrap(),
    }
    match report.assumption2 {
        Some(a2) => writeln!(
            text,
            "  damping bound gamma > k_phi / (4 v_nom): {} (gamma = {}, bound = {})",
            if a2.holds { "holds" } else { "fails" },
            fmt_num(sd.gamma()),
            fmt_num(a2.bound)
        )
        .unwrap(),
        None => writeln!(
            text,
            "  damping bound gamma > k_phi / (4 v_nom): not evaluated (k_phi undefined)"
        )
        .unwrap(),
    }
    for (name, verdict) in [("Q1", report.q1_pd), ("Q2", report.q2_pd)] {
        match verdict {
            Some(v) => writeln!(text, "  {name} positive definite: {}", yes_no(v)).unwrap(),
            None => writeln!(text, "  {name} positive definite: not evaluated").unwrap(),
        }
    }
    writeln!(
        text,
        "  lyapunov path: {}",
        if report.lyapunov_path_holds() {
            "certified"
        } else {
            "not certified"
        }
    )
    .unwrap();
    writeln!(
        text,
        "  reduced system Hurwitz: {} (spectral abscissa {})",
        yes_no(report.hurwitz.holds),
        fmt_num(report.hurwitz.spectral_abscissa)
    )
    .unwrap();
    let verdict = match report.method {
        Some(CertificationMethod::Lyapunov) => "stable (lyapunov)",
        Some(CertificationMethod::DirectHurwitz) => "stable (direct-hurwitz)",
        None => "not certified",
    };
    writeln!(text, "  verdict: {verdict}").unwrap();
    Ok(CertifyOutcome { report, text })
}

pub struct EquilibriumOutcome {
    pub report: EquilibriumReport,
    pub gaps: ObjectiveGap,
    /// The displayed closed-form candidate `-(sum p_m) * sum k_w/(k_v k_d)`.
    pub k2_product_form: f64,
    /// The premultiplication candidate `-(sum p_m) / sum (k_v k_d / k_w)`.
    pub k2_quotient_form: f64,
    pub text: String,
}

pub fn cmd_equilibrium(config: &Path) -> Result<EquilibriumOutcome, CliError> {
    let (sd, scenario) = read_config(config)?;
    let p_m = match &scenario {
        Some(sc) => sc.final_p_m(&sd)?,
        None => sd.base_p_m(),
    };
    let cls = assemble_reduced(&sd);
    let report = equilibrium(&sd, &cls, &p_m)?;
    let gaps = objective_gap(&report, &sd);

    let total: f64 = p_m.sum();
    let k2_product_form = -total
        * sd.gains()
            .iter()
            .map(|g| g.k_omega / (g.k_v * g.k_droop))
            .sum::<f64>();
    let k2_quotient_form = -total
        / sd.gains()
            .iter()
            .map(|g| g.k_v * g.k_droop / g.k_omega)
            .sum::<f64>();

    let mut text = String::new();
    writeln!(text, "equilibrium report").unwrap();
    writeln!(
        text,
        "  disturbance p_m: total {} (per node {:?})",
        fmt_num(total),
        p_m.iter().map(|v| *v as f32).collect::<Vec<_>>()
    )
    .unwrap();
    writeln!(
        text,
        "  {:<6}{:>15}{:>15}{:>15}{:>15}",
        "node", "omega_dev", "v_dev", "p_gen", "p_inj"
    )
    .unwrap();
    for i in 0..sd.node_count() {
        writeln!(
            text,
            "  {:<6}{:>15}{:>15}{:>15}{:>15}",
            i + 1,
            fmt_num(report.omega_dev[i]),
            fmt_num(report.v_dev[i]),
            fmt_num(report.p_gen_star[i]),
            fmt_num(report.p_inj_star[i]),
        )
        .unwrap();
    }
    writeln!(
        text,
        "  k2 measured: {} (integral-state spread {})",
        fmt_num(report.k2),
        fmt_num(report.eta_spread)
    )
    .unwrap();
    writeln!(
        text,
        "  k2 closed-form candidates: product form {}, quotient form {}",
        fmt_num(k2_product_form),
        fmt_num(k2_quotient_form)
    )
    .unwrap();
    writeln!(
        text,
        "  kkt gaps: generation {}, voltage {}",
        fmt_num(report.kkt_gen_gap),
        fmt_num(report.kkt_volt_gap)
    )
    .unwrap();
    writeln!(
        text,
        "  frequency restoration gap: {}",
        fmt_num(gaps.freq_gap)
    )
    .unwrap();
    Ok(EquilibriumOutcome {
        report,
        gaps,
        k2_product_form,
        k2_quotient_form,
        text,
    })
}

/// Command-line overrides of the configured scenario.
#[derive(Debug, Default, Clone, Copy)]
pub struct SimOverrides {
    pub model: Option<SimModel>,
    pub t_end: Option<f64>,
    pub dt_output: Option<f64>,
}

pub struct SimulateOutcome {
    pub trajectory: Trajectory,
    pub metrics: Option<SteadyStateMetrics>,
    pub gaps: Option<ObjectiveGap>,
    pub text: String,
}

pub fn cmd_simulate(
    config: &Path,
    output: &Path,
    overrides: SimOverrides,
) -> Result<SimulateOutcome, CliError> {
    let (sd, scenario) = read_config(config)?;
    let mut sc = scenario.ok_or(CliError::MissingScenario)?;
    if let Some(model) = overrides.model {
        sc = sc.with_model(model);
    }
    if overrides.t_end.is_some() || overrides.dt_output.is_some() {
        sc = Scenario::new(
            sc.events().to_vec(),
            overrides.t_end.unwrap_or(sc.t_end),
            overrides.dt_output.unwrap_or(sc.dt_output),
            sc.model,
        )
        .map_err(|e| CliError::Semantic(format!("overrides: {e}")))?;
    }

    let traj = simulate(&sd, &sc)?;

    // the energy column needs Laplacian proportionality and a unique
    // post-event equilibrium; without them it is reported as NaN
    let p_m = sc.final_p_m(&sd)?;
    let eq = equilibrium(&sd, &assemble_reduced(&sd), &p_m).ok();
    let trace = eq
        .as_ref()
        .and_then(|eq| lyapunov_along(&traj, &sd, eq).ok());

    let file = File::create(output)?;
    csvio::write_trajectory(
        BufWriter::new(file),
        &traj,
        trace.as_ref().map(|t| t.values.as_slice()),
    )?;

    let mut text = String::new();
    writeln!(
        text,
        "wrote {}: {} samples over {} s ({:?} model)",
        output.display(),
        traj.len(),
        sc.t_end,
        sc.model
    )
    .unwrap();
    match &trace {
        Some(trace) => writeln!(
            text,
            "  energy function: W(0) = {}, W(end) = {}, nonincreasing: {}",
            fmt_num(trace.values[0]),
            fmt_num(*trace.values.last().unwrap()),
            yes_no(trace.monotone)
        )
        .unwrap(),
        None => writeln!(text, "  energy function: not constructible, column is NaN").unwrap(),
    }

    let metrics = match steady_state_metrics(&traj, &sd) {
        Ok(m) => Some(m),
        Err(e) => {
            writeln!(text, "  steady-state metrics skipped: {e}").unwrap();
            None
        }
    };
    if let Some(m) = &metrics {
        writeln!(
            text,
            "steady-state metrics (tail window from t = {} s)",
            m.tail_start_time
        )
        .unwrap();
        writeln!(
            text,
            "  {:<6}{:>15}{:>13}{:>13}{:>12}{:>12}{:>12}",
            "node", "omega_dev", "V", "p_gen", "settle(w)", "settle(V)", "settle(pg)"
        )
        .unwrap();
        let settle = |s: &SettlingTime| match s {
            SettlingTime::At(t) => format!("{t:.2}"),
            SettlingTime::NotReached => "n/r".into(),
        };
        for i in 0..sd.node_count() {
            writeln!(
                text,
                "  {:<6}{:>15}{:>13.6}{:>13}{:>12}{:>12}{:>12}",
                i + 1,
                fmt_num(m.tail_omega_dev[i]),
                m.tail_v_abs[i],
                fmt_num(m.tail_p_gen[i]),
                settle(&m.settling_omega[i]),
                settle(&m.settling_v[i]),
                settle(&m.settling_p_gen[i]),
            )
            .unwrap();
        }
        writeln!(
            text,
            "  p_gen: total {} spread {}",
            fmt_num(m.tail_p_gen_total),
            fmt_num(m.p_gen_spread)
        )
        .unwrap();
    }

    let gaps = eq.as_ref().map(|eq| objective_gap(eq, &sd));
    match &gaps {
        Some(g) => writeln!(
            text,
            "objective gaps at the post-event equilibrium: freq {}, gen {}, volt {}",
            fmt_num(g.freq_gap),
            fmt_num(g.gen_gap),
            fmt_num(g.volt_gap)
        )
        .unwrap(),
        None => writeln!(text, "objective gaps: no unique equilibrium to compare against").unwrap(),
    }

    Ok(SimulateOutcome {
        trajectory: traj,
        metrics,
        gaps,
        text,
    })
}
