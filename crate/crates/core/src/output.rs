//! CSV export of I-V sweeps.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gummel::SweepResult;

/// Header row: `bias`, one `I_<contact>` column per contact, `iterations`, `step`.
pub fn iv_header(contacts: &[String]) -> Vec<String> {
    let mut h = vec!["bias".to_string()];
    h.extend(contacts.iter().map(|c| format!("I_{c}")));
    h.push("iterations".into());
    h.push("step".into());
    h
}

/// Writes one row per converged sweep point. Floats use the shortest
/// representation that round-trips.
pub fn export_iv_csv(sweep: &SweepResult, path: &Path) -> Result<()> {
    if sweep.points.is_empty() {
        return Err(Error::param("sweep", "no converged points to write"));
    }
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format { path: path.to_path_buf(), line: 0, reason: format!("{other:?}") },
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(iv_header(&sweep.contact_names)).map_err(csv_err)?;
    for p in sweep.points.iter().filter(|p| p.converged) {
        let mut row = vec![format!("{:e}", p.bias)];
        row.extend(p.currents.iter().map(|i| format!("{i:e}")));
        row.push(p.iterations.to_string());
        row.push(format!("{:e}", p.step));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
