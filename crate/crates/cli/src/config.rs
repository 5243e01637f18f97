//! The human-editable system description document.
//!
//! One TOML file carries the whole study: per-node physics and gains, the
//! DC line list, the two communication graphs (explicit edge lists or the
//! `proportional_to_dc` shorthand), global constants and an optional
//! disturbance scenario. Node indices are 1-based in the file, matching
//! the usual grid single-line-diagram labeling.

use serde::{Deserialize, Serialize};

use mtdc_core::{
    AcArea, DcTerminal, GainSet, PiLineParams, Scenario, ScenarioEvent, SimModel,
    SystemDescription, Topology,
};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub globals: GlobalsSection,
    pub nodes: Vec<NodeSection>,
    #[serde(default)]
    pub dc_lines: Vec<DcLineSection>,
    pub eta_edges: CommGraphSection,
    pub phi_edges: CommGraphSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalsSection {
    pub v_nom: f64,
    pub omega_ref: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    /// Aggregate inertia (p.u. s^2).
    pub m: f64,
    /// Terminal capacitance (p.u.).
    pub c: f64,
    pub v_ref: f64,
    pub k_omega: f64,
    pub k_v: f64,
    pub k_droop: f64,
    pub k_droop_i: f64,
    /// Constant load deviation on top of which scenario events step.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub p_m: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcLineSection {
    pub i: usize,
    pub j: usize,
    /// Series resistance (p.u.).
    pub r: f64,
    /// Series inductance (p.u.), for the pi-line simulation model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    /// Shunt capacitance (p.u.), for the pi-line simulation model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

/// A communication graph: either explicit weighted edges or the whole DC
/// graph scaled by one factor.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommGraphSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proportional_to_dc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<CommEdgeSection>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommEdgeSection {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub t_end: f64,
    pub dt_output: f64,
    pub model: ModelName,
    #[serde(default)]
    pub events: Vec<EventSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Linear,
    Nonlinear,
    PiLines,
}

impl From<ModelName> for SimModel {
    fn from(m: ModelName) -> Self {
        match m {
            ModelName::Linear => SimModel::Linear,
            ModelName::Nonlinear => SimModel::Nonlinear,
            ModelName::PiLines => SimModel::PiLines,
        }
    }
}

impl From<SimModel> for ModelName {
    fn from(m: SimModel) -> Self {
        match m {
            SimModel::Linear => ModelName::Linear,
            SimModel::Nonlinear => ModelName::Nonlinear,
            SimModel::PiLines => ModelName::PiLines,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSection {
    pub time: f64,
    /// 1-based node index.
    pub node: usize,
    pub delta_p_m: f64,
}

fn semantic(msg: impl Into<String>) -> CliError {
    CliError::Semantic(msg.into())
}

/// 1-based endpoint pair to 0-based, with range checks naming the entry.
fn edge_indices(section: &str, k: usize, i: usize, j: usize, n: usize) -> Result<(usize, usize), CliError> {
    for (name, v) in [("i", i), ("j", j)] {
        if v == 0 || v > n {
            return Err(semantic(format!(
                "{section}[{k}]: {name} = {v} out of range (nodes are 1..={n})"
            )));
        }
    }
    Ok((i - 1, j - 1))
}

fn comm_topology(
    section: &str,
    spec: &CommGraphSection,
    dc: &Topology,
    n: usize,
) -> Result<Topology, CliError> {
    match (spec.proportional_to_dc, &spec.edges) {
        (Some(k), None) => {
            if !(k > 0.0) {
                return Err(semantic(format!(
                    "{section}: proportional_to_dc must be positive, got {k}"
                )));
            }
            dc.scaled(k)
                .map_err(|e| semantic(format!("{section}: {e}")))
        }
        (None, Some(edges)) => {
            let mut list = Vec::with_capacity(edges.len());
            for (k, e) in edges.iter().enumerate() {
                let (i, j) = edge_indices(section, k, e.i, e.j, n)?;
                list.push((i, j, e.weight));
            }
            Topology::new(n, list).map_err(|e| semantic(format!("{section}: {e}")))
        }
        (Some(_), Some(_)) => Err(semantic(format!(
            "{section}: give either proportional_to_dc or edges, not both"
        ))),
        (None, None) => Err(semantic(format!(
            "{section}: needs proportional_to_dc or an edges list"
        ))),
    }
}

/// Parses a config document into the core description and the optional
/// scenario. Syntax errors keep the TOML line/column diagnostics; semantic
/// errors name the offending section and entry.
pub fn parse_config(text: &str) -> Result<(SystemDescription, Option<Scenario>), CliError> {
    let doc: ConfigDocument = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    build(&doc)
}

/// Builds the core types out of an already-deserialized document.
pub fn build(doc: &ConfigDocument) -> Result<(SystemDescription, Option<Scenario>), CliError> {
    let n = doc.nodes.len();
    if n == 0 {
        return Err(semantic("nodes: at least one node is required"));
    }

    let mut dc_edges = Vec::with_capacity(doc.dc_lines.len());
    let mut any_l = false;
    let mut all_lc = true;
    for (k, line) in doc.dc_lines.iter().enumerate() {
        let (i, j) = edge_indices("dc_lines", k, line.i, line.j, n)?;
        if !(line.r > 0.0) {
            return Err(semantic(format!(
                "dc_lines[{k}] ({} - {}): r must be positive, got {}",
                line.i, line.j, line.r
            )));
        }
        dc_edges.push((i, j, 1.0 / line.r));
        any_l |= line.l.is_some() || line.c.is_some();
        all_lc &= line.l.is_some() && line.c.is_some();
    }
    let dc = Topology::new(n, dc_edges).map_err(|e| semantic(format!("dc_lines: {e}")))?;

    let line_dynamics = if any_l {
        if !all_lc {
            return Err(semantic(
                "dc_lines: l and c must be given on every line or on none",
            ));
        }
        Some(
            doc.dc_lines
                .iter()
                .map(|line| PiLineParams {
                    inductance: line.l.unwrap(),
                    capacitance: line.c.unwrap(),
                })
                .collect(),
        )
    } else {
        None
    };

    let eta = comm_topology("eta_edges", &doc.eta_edges, &dc, n)?;
    let phi = comm_topology("phi_edges", &doc.phi_edges, &dc, n)?;

    let areas = doc
        .nodes
        .iter()
        .map(|nd| AcArea {
            inertia: nd.m,
            p_load: nd.p_m,
        })
        .collect();
    let terminals = doc
        .nodes
        .iter()
        .map(|nd| DcTerminal {
            capacitance: nd.c,
            v_ref: nd.v_ref,
        })
        .collect();
    let gains = doc
        .nodes
        .iter()
        .map(|nd| GainSet {
            k_omega: nd.k_omega,
            k_v: nd.k_v,
            k_droop: nd.k_droop,
            k_droop_i: nd.k_droop_i,
            gamma: doc.globals.gamma,
        })
        .collect();
    let sd = SystemDescription::new(
        areas,
        terminals,
        gains,
        dc,
        eta,
        phi,
        doc.globals.v_nom,
        doc.globals.omega_ref,
        line_dynamics,
    )
    .map_err(|e| semantic(format!("nodes/globals: {e}")))?;

    let scenario = match &doc.scenario {
        None => None,
        Some(sc) => {
            let mut events = Vec::with_capacity(sc.events.len());
            for (k, e) in sc.events.iter().enumerate() {
                if e.node == 0 || e.node > n {
                    return Err(semantic(format!(
                        "scenario.events[{k}]: node = {} out of range (nodes are 1..={n})",
                        e.node
                    )));
                }
                events.push(ScenarioEvent {
                    time: e.time,
                    node: e.node - 1,
                    delta_p_m: e.delta_p_m,
                });
            }
            Some(
                Scenario::new(events, sc.t_end, sc.dt_output, sc.model.into())
                    .map_err(|e| semantic(format!("scenario: {e}")))?,
            )
        }
    };
    Ok((sd, scenario))
}

/// Reconstructs a document from the core types. Communication graphs come
/// back as explicit edge lists (the shorthand does not survive), but
/// reparsing the serialized text yields an identical description.
pub fn to_document(sd: &SystemDescription, scenario: Option<&Scenario>) -> ConfigDocument {
    let nodes = sd
        .areas()
        .iter()
        .zip(sd.terminals())
        .zip(sd.gains())
        .map(|((a, t), g)| NodeSection {
            m: a.inertia,
            c: t.capacitance,
            v_ref: t.v_ref,
            k_omega: g.k_omega,
            k_v: g.k_v,
            k_droop: g.k_droop,
            k_droop_i: g.k_droop_i,
            p_m: a.p_load,
        })
        .collect();
    let dc_lines = sd
        .dc_topology()
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| DcLineSection {
            i: e.i + 1,
            j: e.j + 1,
            r: 1.0 / e.weight,
            l: sd.line_dynamics().map(|ld| ld[k].inductance),
            c: sd.line_dynamics().map(|ld| ld[k].capacitance),
        })
        .collect();
    let comm = |t: &Topology| CommGraphSection {
        proportional_to_dc: None,
        edges: Some(
            t.edges()
                .iter()
                .map(|e| CommEdgeSection {
                    i: e.i + 1,
                    j: e.j + 1,
                    weight: e.weight,
                })
                .collect(),
        ),
    };
    ConfigDocument {
        globals: GlobalsSection {
            v_nom: sd.v_nom(),
            omega_ref: sd.omega_ref(),
            gamma: sd.gamma(),
        },
        nodes,
        dc_lines,
        eta_edges: comm(sd.eta_topology()),
        phi_edges: comm(sd.phi_topology()),
        scenario: scenario.map(|sc| ScenarioSection {
            t_end: sc.t_end,
            dt_output: sc.dt_output,
            model: sc.model.into(),
            events: sc
                .events()
                .iter()
                .map(|e| EventSection {
                    time: e.time,
                    node: e.node + 1,
                    delta_p_m: e.delta_p_m,
                })
                .collect(),
        }),
    }
}

pub fn serialize(doc: &ConfigDocument) -> Result<String, CliError> {
    toml::to_string_pretty(doc).map_err(|e| CliError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use mtdc_core::proportionality_factor;

    fn testgrid6_text() -> String {
        std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../configs/testgrid6.toml"
        ))
        .unwrap()
    }

    #[test]
    fn parses_the_shipped_benchmark() {
        let (sd, sc) = parse_config(&testgrid6_text()).unwrap();
        assert_eq!(sd.node_count(), 6);
        assert_eq!(sd.dc_topology().edge_count(), 10);
        assert_relative_eq!(sd.gamma(), 0.0);
        assert_relative_eq!(sd.terminals()[0].capacitance, 0.375e-3);
        let k = proportionality_factor(
            &sd.phi_topology().weighted_laplacian(),
            &sd.dc_topology().weighted_laplacian(),
        )
        .unwrap();
        assert_relative_eq!(k.unwrap(), 15.0, max_relative = 1e-12);
        let sc = sc.unwrap();
        assert_eq!(sc.sample_count(), 4001);
        assert_eq!(sc.events().len(), 1);
        assert_eq!(sc.events()[0].node, 0);
    }

    #[test]
    fn rejects_zero_resistance_naming_the_line() {
        let text = testgrid6_text().replace("r = 0.0878", "r = 0.0");
        let err = parse_config(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dc_lines[2]"), "got: {msg}");
        assert!(msg.contains("r must be positive"), "got: {msg}");
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = testgrid6_text().replace("[globals]", "[globals]\nfrobnicate = 1.0");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, CliError::Parse(_)));
        assert!(err.to_string().contains("frobnicate"));
    }

    #[test]
    fn shorthand_matches_explicit_weights() {
        let base = testgrid6_text();
        let (sd_short, _) = parse_config(&base).unwrap();
        // spell out the phi edges explicitly as 15/R per line
        let explicit_edges: Vec<String> = sd_short
            .phi_topology()
            .edges()
            .iter()
            .map(|e| {
                format!(
                    "{{ i = {}, j = {}, weight = {:.17e} }}",
                    e.i + 1,
                    e.j + 1,
                    e.weight
                )
            })
            .collect();
        let text = base.replace(
            "[phi_edges]\nproportional_to_dc = 15.0",
            &format!("[phi_edges]\nedges = [{}]", explicit_edges.join(", ")),
        );
        let (sd_explicit, _) = parse_config(&text).unwrap();
        let l_short = sd_short.phi_topology().weighted_laplacian();
        let l_explicit = sd_explicit.phi_topology().weighted_laplacian();
        assert!((l_short.as_matrix() - l_explicit.as_matrix()).amax() <= 1e-12);
    }

    #[test]
    fn comm_section_needs_exactly_one_form() {
        let text = testgrid6_text().replace(
            "[eta_edges]\nproportional_to_dc = 5.0",
            "[eta_edges]\nproportional_to_dc = 5.0\nedges = [{ i = 1, j = 2, weight = 1.0 }]",
        );
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("not both"));
    }

    #[test]
    fn round_trips_through_serialization() {
        let (sd, sc) = parse_config(&testgrid6_text()).unwrap();
        let doc = to_document(&sd, sc.as_ref());
        let text = serialize(&doc).unwrap();
        let (sd2, sc2) = parse_config(&text).unwrap();
        assert_eq!(sd, sd2);
        assert_eq!(sc, sc2);
    }
}
