//! Trajectory CSV export and import.
//!
//! One row per output sample, header
//! `t,omega_1..omega_n,V_1..V_n,eta_1..eta_n,phi_1..phi_n,pgen_1..pgen_n,pinj_1..pinj_n,W`.
//! All values are per-unit deviations; the energy column is `NaN` when the
//! Lyapunov function is not constructible for the system. Numbers carry 17
//! significant digits so that files round-trip losslessly.

use std::io::Write;

use mtdc_core::Trajectory;

use crate::CliError;

fn push_number(out: &mut String, x: f64) {
    use std::fmt::Write as _;
    write!(out, "{x:.16e}").expect("string write");
}

pub fn header(n: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for block in ["omega", "V", "eta", "phi", "pgen", "pinj"] {
        for i in 1..=n {
            cols.push(format!("{block}_{i}"));
        }
    }
    cols.push("W".to_string());
    cols.join(",")
}

/// Serializes a full-layout trajectory. Internal states beyond the four
/// blocks (pi-model line currents) are not part of the exchange format.
pub fn write_trajectory(
    mut sink: impl Write,
    traj: &Trajectory,
    w_values: Option<&[f64]>,
) -> Result<(), CliError> {
    let n = traj.layout.n;
    assert!(
        !traj.layout.is_reduced(),
        "CSV export expects the full state layout"
    );
    let mut line = String::with_capacity(32 * (6 * n + 2));
    writeln!(sink, "{}", header(n))?;
    for k in 0..traj.len() {
        line.clear();
        push_number(&mut line, traj.t[k]);
        let x = &traj.states[k];
        for offset in 0..4 * n {
            line.push(',');
            push_number(&mut line, x[offset]);
        }
        for i in 0..n {
            line.push(',');
            push_number(&mut line, traj.p_gen[k][i]);
        }
        for i in 0..n {
            line.push(',');
            push_number(&mut line, traj.p_inj[k][i]);
        }
        line.push(',');
        match w_values {
            Some(w) => push_number(&mut line, w[k]),
            None => line.push_str("NaN"),
        }
        writeln!(sink, "{line}")?;
    }
    Ok(())
}

/// A parsed trajectory file: the header labels and the numeric rows.
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_trajectory(text: &str) -> Result<CsvTable, CliError> {
    let mut lines = text.lines();
    let head = lines
        .next()
        .ok_or_else(|| CliError::Csv("empty file".into()))?;
    let columns: Vec<String> = head.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let row = row.map_err(|e| CliError::Csv(format!("row {}: {e}", idx + 2)))?;
        if row.len() != columns.len() {
            return Err(CliError::Csv(format!(
                "row {}: {} fields, header has {}",
                idx + 2,
                row.len(),
                columns.len()
            )));
        }
        rows.push(row);
    }
    Ok(CsvTable { columns, rows })
}
