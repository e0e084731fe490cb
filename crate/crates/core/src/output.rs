//! CSV and JSON writers. Every file carries the scenario digest and seed:
//! CSV files as a leading `#` comment line, JSON objects as two fields.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::boundary::{ActiveRegionField, ConeEnvelope, FreeBoundarySample};
use crate::pipeline::RunRecord;
use crate::solver::TransportPlan;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Identifies the run an output belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Stamp {
    pub scenario_digest: String,
    pub seed: u64,
}

impl Stamp {
    pub fn of(record: &RunRecord) -> Self {
        Stamp { scenario_digest: record.scenario_digest.clone(), seed: record.seed }
    }

    fn comment(&self) -> String {
        format!("# scenario_digest={} seed={}\n", self.scenario_digest, self.seed)
    }
}

/// Pretty JSON with the stamp fields merged in. Objects get the two fields
/// added (keys are emitted in sorted order); other values are wrapped under
/// `data`.
pub fn write_json<W: Write, T: Serialize>(mut w: W, stamp: &Stamp, value: &T) -> Result<(), OutputError> {
    let mut doc = match serde_json::to_value(value)? {
        serde_json::Value::Object(map) => map,
        other => {
            let mut map = serde_json::Map::new();
            map.insert("data".into(), other);
            map
        }
    };
    doc.insert("scenario_digest".into(), stamp.scenario_digest.clone().into());
    doc.insert("seed".into(), stamp.seed.into());
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn csv_writer<W: Write>(mut w: W, stamp: &Stamp) -> Result<csv::Writer<W>, OutputError> {
    w.write_all(stamp.comment().as_bytes())?;
    Ok(csv::Writer::from_writer(w))
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |k| format!("{prefix}{k}"))
}

/// Plan rows `(i, j, mass)`.
pub fn write_plan_csv<W: Write>(w: W, stamp: &Stamp, plan: &TransportPlan) -> Result<(), OutputError> {
    let mut out = csv_writer(w, stamp)?;
    out.write_record(["i", "j", "mass"])?;
    for e in &plan.entries {
        out.write_record([e.source.to_string(), e.target.to_string(), e.mass.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Active indicator. Two-dimensional grids are written densely, one CSV row
/// per index along axis 1; other dimensions as `(index..., active)` rows.
pub fn write_active_csv<W: Write>(w: W, stamp: &Stamp, field: &ActiveRegionField) -> Result<(), OutputError> {
    let grid = field.grid();
    let shape = grid.shape().to_vec();
    let mut out = csv_writer(w, stamp)?;
    if shape.len() == 2 {
        for j in 0..shape[1] {
            let row: Vec<&str> = (0..shape[0])
                .map(|i| if field.is_active(grid.ravel(&[i, j])) { "1" } else { "0" })
                .collect();
            out.write_record(&row)?;
        }
    } else {
        let mut header: Vec<String> = numbered("i", shape.len()).collect();
        header.push("active".into());
        out.write_record(&header)?;
        for cell in 0..grid.len() {
            let mut row: Vec<String> = grid.unravel(cell).iter().map(usize::to_string).collect();
            row.push(if field.is_active(cell) { "1" } else { "0" }.into());
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Boundary samples: point, normal and target coordinates, then threshold.
pub fn write_samples_csv<W: Write>(
    w: W,
    stamp: &Stamp,
    samples: &[FreeBoundarySample],
    dim: usize,
) -> Result<(), OutputError> {
    let mut out = csv_writer(w, stamp)?;
    let header: Vec<String> = numbered("x", dim)
        .chain(numbered("nu", dim))
        .chain(numbered("y", dim))
        .chain(std::iter::once("threshold".to_string()))
        .collect();
    out.write_record(&header)?;
    for s in samples {
        let row: Vec<String> = s
            .point
            .coords()
            .iter()
            .chain(&s.normal)
            .chain(s.target.coords())
            .chain(std::iter::once(&s.threshold))
            .map(f64::to_string)
            .collect();
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Envelope nodes `(window, z'..., phi)` in each envelope's local frame.
pub fn write_envelopes_csv<W: Write>(
    w: W,
    stamp: &Stamp,
    envelopes: &[ConeEnvelope],
) -> Result<(), OutputError> {
    let mut out = csv_writer(w, stamp)?;
    let m = envelopes.first().map_or(1, ConeEnvelope::lateral_dim);
    let header: Vec<String> = std::iter::once("window".to_string())
        .chain(numbered("z", m))
        .chain(std::iter::once("phi".to_string()))
        .collect();
    out.write_record(&header)?;
    for (k, env) in envelopes.iter().enumerate() {
        for node in 0..env.node_count() {
            let row: Vec<String> = std::iter::once(k.to_string())
                .chain(env.node(node).iter().map(f64::to_string))
                .chain(std::iter::once(env.values[node].to_string()))
                .collect();
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per predicate, including skipped ones.
pub fn write_summary_csv<W: Write>(w: W, record: &RunRecord) -> Result<(), OutputError> {
    let mut out = csv_writer(w, &Stamp::of(record))?;
    out.write_record(["predicate", "status", "worst_margin", "samples_checked", "note"])?;
    for r in &record.reports {
        out.write_record([
            r.name.clone(),
            if r.pass { "pass" } else { "fail" }.into(),
            r.worst_margin.to_string(),
            r.samples_checked.to_string(),
            r.note.clone(),
        ])?;
    }
    for s in &record.skipped {
        out.write_record([s.name.clone(), "skipped".into(), String::new(), "0".into(), s.reason.clone()])?;
    }
    out.flush()?;
    Ok(())
}

/// `(polar, azimuth)` rows for points on the 2-sphere.
pub fn write_spherical_csv<W: Write>(
    w: W,
    stamp: &Stamp,
    points: &[(f64, f64)],
) -> Result<(), OutputError> {
    let mut out = csv_writer(w, stamp)?;
    out.write_record(["polar", "azimuth"])?;
    for (p, a) in points {
        out.write_record([p.to_string(), a.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
