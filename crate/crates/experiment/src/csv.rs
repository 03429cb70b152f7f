use crate::{ExperimentError, Result};
use eval_bench::MetricsRow;

/// The fixed metrics schema. Unknown metrics become new rows, never new
/// columns.
pub const METRICS_HEADER: &str = "run_id,profile,mode,alpha,norm,seed,metric,value";

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Long-form metrics CSV.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.run_id,
            r.profile,
            r.mode,
            fmt(r.alpha as f64),
            r.norm,
            r.seed,
            r.metric,
            fmt(r.value)
        ));
    }
    out
}

/// Per-run loss curve: (step, loss) pairs.
pub fn loss_curve_csv(curve: &[(u64, f64)]) -> String {
    let mut out = String::from("step,loss\n");
    for (step, loss) in curve {
        out.push_str(&format!("{step},{}\n", fmt(*loss)));
    }
    out
}

/// Multi-series curve CSV (used for comparison plots).
pub fn multi_series_csv(header: (&str, &str), series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut out = format!("series,{},{}\n", header.0, header.1);
    for (name, points) in series {
        for (x, y) in points {
            out.push_str(&format!("{name},{},{}\n", fmt(*x), fmt(*y)));
        }
    }
    out
}

/// Sweep CSV: one row per (alpha, metric).
pub fn sweep_csv(rows: &[(f32, String, f64)]) -> String {
    let mut out = String::from("alpha,metric,value\n");
    for (alpha, metric, value) in rows {
        out.push_str(&format!("{},{metric},{}\n", fmt(*alpha as f64), fmt(*value)));
    }
    out
}

/// Minimal CSV reader for the plain numeric tables this workspace writes:
/// comma separation, no quoting, first line is the header.
#[derive(Clone, Debug)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let Some(header_line) = lines.next() else {
        return Err(ExperimentError::Input("empty CSV".to_string()));
    };
    let header: Vec<String> = header_line.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if row.len() != header.len() {
            return Err(ExperimentError::Input(format!(
                "row {} has {} fields, header has {}",
                i + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ExperimentError::Input("CSV has no data rows".to_string()));
    }
    Ok(CsvTable { header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_csv_schema() {
        let rows = vec![MetricsRow {
            run_id: "abc".to_string(),
            profile: "siglip2".to_string(),
            mode: "causal".to_string(),
            alpha: 0.1,
            norm: true,
            seed: 3,
            metric: "gfid".to_string(),
            value: 12.345678,
        }];
        let text = metrics_csv(&rows);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "abc,siglip2,causal,0.100000,true,3,gfid,12.345678"
        );
    }

    #[test]
    fn parse_round_trip() {
        let text = "step,loss\n0,4.2\n50,3.1\n";
        let table = parse_csv(text).unwrap();
        assert_eq!(table.header, vec!["step", "loss"]);
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.column("loss"), Some(1));
    }

    #[test]
    fn empty_csv_is_input_error() {
        assert!(parse_csv("").is_err());
        assert!(parse_csv("step,loss\n").is_err());
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(parse_csv("a,b\n1,2,3\n").is_err());
    }
}
