//! Render a summary CSV as the familiar metrics-by-cells table.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Read `summary.csv` and print metric rows against cell columns, each cell
/// as `mean (sd)`.
pub fn print_summary(path: &Path) -> Result<String> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        bail!("{} has no rows", path.display());
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(eps_col), Some(fair_col)) = (col("epsilon"), col("fairness")) else {
        bail!("{} is not a summary file", path.display());
    };

    // metric base names from the *_mean columns
    let metrics: BTreeSet<String> = headers
        .iter()
        .filter_map(|h| h.strip_suffix("_mean").map(str::to_string))
        .collect();

    let cell_label = |r: &csv::StringRecord| -> String {
        let eps = r.get(eps_col).unwrap_or("");
        let fair = r.get(fair_col).unwrap_or("");
        let eps = if eps.is_empty() { "none".into() } else { format!("eps={eps}") };
        format!("{eps}/{fair}")
    };

    let mut out = String::new();
    let mut columns: Vec<String> = vec!["metric".into()];
    columns.extend(records.iter().map(|r| cell_label(r)));
    out.push_str(&columns.join("\t"));
    out.push('\n');
    for label in ["n_ok", "n_infeasible"] {
        if let Some(c) = col(label) {
            let mut row = vec![label.to_string()];
            row.extend(records.iter().map(|r| r.get(c).unwrap_or("").to_string()));
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
    }
    for m in &metrics {
        let (Some(mc), Some(sc)) = (col(&format!("{m}_mean")), col(&format!("{m}_sd"))) else {
            continue;
        };
        let mut row = vec![m.clone()];
        for r in &records {
            let mean = r.get(mc).unwrap_or("");
            let sd = r.get(sc).unwrap_or("");
            if mean.is_empty() {
                row.push(String::new());
            } else {
                let mean: f64 = mean.parse().unwrap_or(f64::NAN);
                let sd: f64 = sd.parse().unwrap_or(f64::NAN);
                row.push(format!("{mean:.3} ({sd:.3})"));
            }
        }
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    Ok(out)
}
