//! CSV serialization of trajectories.
//!
//! Column contract: first column `t`, then chart coordinates in declaration
//! order, then quasi-velocities `v_<framelabel>`, then diagnostics. A header
//! row is mandatory; `#` comment lines carry run metadata. Floats are
//! written in a fixed scientific format so identical runs produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::hamel::Trajectory;
use crate::reduction::ReducedTrajectory;
use crate::routh::RouthTrajectory;

/// Fixed float rendering used throughout CSV output.
pub fn format_float(x: f64) -> String {
    format!("{x:.17e}")
}

/// Run metadata written as `#` comment lines.
#[derive(Clone, Debug)]
pub struct CsvMeta<'a> {
    pub system: &'a str,
    pub params: &'a BTreeMap<String, f64>,
    pub reduced: bool,
    pub h: f64,
    pub t_final: f64,
    pub method: &'a str,
    /// Extra metadata lines, e.g. the momentum level of a Routh run.
    pub extra: Vec<(String, String)>,
}

fn write_meta<W: Write>(w: &mut W, meta: &CsvMeta) -> io::Result<()> {
    writeln!(w, "# system: {}", meta.system)?;
    if meta.params.is_empty() {
        writeln!(w, "# parameters: none")?;
    } else {
        let rendered: Vec<String> = meta
            .params
            .iter()
            .map(|(k, v)| format!("{k}={}", format_float(*v)))
            .collect();
        writeln!(w, "# parameters: {}", rendered.join(" "))?;
    }
    writeln!(w, "# reduced: {}", meta.reduced)?;
    writeln!(
        w,
        "# h: {} T: {} method: {}",
        format_float(meta.h),
        format_float(meta.t_final),
        meta.method
    )?;
    for (key, value) in &meta.extra {
        writeln!(w, "# {key}: {value}")?;
    }
    writeln!(w, "# version: {}", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

fn write_row<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> io::Result<()> {
    let rendered: Vec<String> = values.map(format_float).collect();
    writeln!(w, "{}", rendered.join(","))
}

/// Full constrained trajectory: `t,<coords>,v_<labels>,E,<momenta>,res_constraint`.
pub fn write_trajectory<W: Write>(
    w: &mut W,
    meta: &CsvMeta,
    coord_names: &[&str],
    vel_labels: &[&str],
    traj: &Trajectory,
) -> io::Result<()> {
    write_meta(w, meta)?;
    let mut header = vec!["t".to_string()];
    header.extend(coord_names.iter().map(|c| c.to_string()));
    header.extend(vel_labels.iter().map(|l| format!("v_{l}")));
    header.push("E".to_string());
    header.extend(traj.momentum_labels.iter().cloned());
    header.push("res_constraint".to_string());
    writeln!(w, "{}", header.join(","))?;
    for (i, state) in traj.states.iter().enumerate() {
        let momenta = traj.momenta.get(i).cloned().unwrap_or_default();
        write_row(
            w,
            std::iter::once(traj.times[i])
                .chain(state.x.coords().iter().copied())
                .chain(state.v.iter().copied())
                .chain(std::iter::once(traj.energy[i]))
                .chain(momenta)
                .chain(std::iter::once(traj.constraint_residual[i])),
        )?;
    }
    Ok(())
}

/// Reduced trajectory on C/G: `t,<base coords>,v_<rho>,v_<kappa>,E`.
pub fn write_reduced_trajectory<W: Write>(
    w: &mut W,
    meta: &CsvMeta,
    base_names: &[&str],
    rho_labels: &[&str],
    kappa_labels: &[&str],
    traj: &ReducedTrajectory,
) -> io::Result<()> {
    write_meta(w, meta)?;
    let mut header = vec!["t".to_string()];
    header.extend(base_names.iter().map(|c| c.to_string()));
    header.extend(rho_labels.iter().map(|l| format!("v_{l}")));
    header.extend(kappa_labels.iter().map(|l| format!("v_{l}")));
    header.push("E".to_string());
    writeln!(w, "{}", header.join(","))?;
    for (i, state) in traj.states.iter().enumerate() {
        write_row(
            w,
            std::iter::once(traj.times[i])
                .chain(state.base.iter().copied())
                .chain(state.v_rho.iter().copied())
                .chain(state.v_kappa.iter().copied())
                .chain(std::iter::once(traj.energy[i])),
        )?;
    }
    Ok(())
}

/// Level-set trajectory in eliminated coordinates: `t,<coords>,v_<kappa>,E`.
pub fn write_routh_trajectory<W: Write>(
    w: &mut W,
    meta: &CsvMeta,
    coord_names: &[&str],
    kappa_labels: &[&str],
    traj: &RouthTrajectory,
) -> io::Result<()> {
    write_meta(w, meta)?;
    let mut header = vec!["t".to_string()];
    header.extend(coord_names.iter().map(|c| c.to_string()));
    header.extend(kappa_labels.iter().map(|l| format!("v_{l}")));
    header.push("E".to_string());
    writeln!(w, "{}", header.join(","))?;
    for (i, state) in traj.states.iter().enumerate() {
        write_row(
            w,
            std::iter::once(traj.times[i])
                .chain(state.x.coords().iter().copied())
                .chain(state.v_kappa.iter().copied())
                .chain(std::iter::once(traj.energy[i])),
        )?;
    }
    Ok(())
}

/// A parsed CSV file: comment lines, header fields, and numeric rows.
#[derive(Clone, Debug)]
pub struct ParsedCsv {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ParsedCsv {
    /// Index of a named column.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Parse CSV text written by this module.
pub fn parse_csv(text: &str) -> Result<ParsedCsv> {
    let mut comments = Vec::new();
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            comments.push(comment.trim().to_string());
            continue;
        }
        match &header {
            None => header = Some(line.split(',').map(|s| s.to_string()).collect()),
            Some(h) => {
                let row: std::result::Result<Vec<f64>, _> =
                    line.split(',').map(str::parse::<f64>).collect();
                let row = row.map_err(|_| Error::InvalidConfig(format!("bad CSV row: {line}")))?;
                if row.len() != h.len() {
                    return Err(Error::InvalidConfig(format!(
                        "CSV row has {} fields, header has {}",
                        row.len(),
                        h.len()
                    )));
                }
                rows.push(row);
            }
        }
    }
    let header = header.ok_or_else(|| Error::InvalidConfig("CSV has no header row".into()))?;
    Ok(ParsedCsv {
        comments,
        header,
        rows,
    })
}
