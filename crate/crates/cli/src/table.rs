//! Plain CSV reading/writing. Numbers are written with Rust's shortest
//! round-trip formatting, so re-reading a file reproduces the values exactly.

use std::io::Write;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// Observation series: `(times, counts)` from a `t,y` file.
pub fn read_observations(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "t,y" => {}
        _ => {
            return Err(CliError::config(format!(
                "{}: expected header 't,y'",
                path.display()
            )))
        }
    }
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse = |s: Option<&str>| -> CliResult<f64> {
            s.and_then(|v| v.trim().parse::<f64>().ok()).ok_or_else(|| {
                CliError::config(format!("{}:{}: malformed row '{line}'", path.display(), lineno + 1))
            })
        };
        ts.push(parse(fields.next())?);
        ys.push(parse(fields.next())?);
    }
    if ts.is_empty() {
        return Err(CliError::config(format!("{}: no observations", path.display())));
    }
    Ok((ts, ys))
}

/// Check uniform spacing with the first interval starting at time zero;
/// returns the interval length.
pub fn observation_interval(ts: &[f64]) -> CliResult<f64> {
    let delta = ts[0];
    if !(delta > 0.0) {
        return Err(CliError::config("first observation time must be positive"));
    }
    for (k, t) in ts.iter().enumerate() {
        let expect = delta * (k + 1) as f64;
        if (t - expect).abs() > 1e-9 * delta.max(1.0) {
            return Err(CliError::config(format!(
                "observation times must be k * delta (delta = {delta}); row {} has t = {t}",
                k + 1
            )));
        }
    }
    Ok(delta)
}

/// Write rows of (already formatted) fields under a header line.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

/// Shortest round-trip decimal representation.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}
