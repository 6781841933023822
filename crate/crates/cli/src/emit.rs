//! Deterministic artifact encoding: JSON with 17-significant-digit floats
//! and alphabetically ordered keys, CSV in vech column order.

use nalgebra::DMatrix;
use psou::calibration::{DriftConditionReport, MoMEstimate};
use psou::oup::{MomentProvenance, MomentReport, MomentStdErrors, OuPath};
use psou::subordinators::JumpRecord;
use psou::symcore::{HalfVec, SymMat};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::CliError;

/// Decimal scientific with 17 significant digits; enough to reproduce any
/// f64 bit pattern on re-parse.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders a value as indented JSON. Object keys come out sorted (the
/// serde_json map is ordered), so the same report always produces the
/// same bytes.
pub fn to_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, 0, &mut out);
    out.push('\n');
    out
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&fmt_f64(n.as_f64().expect("JSON number")));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string encode")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push('\n');
                push_indent(indent + 1, out);
                write_value(item, indent + 1, out);
            }
            out.push('\n');
            push_indent(indent, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (k, (key, item)) in map.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push('\n');
                push_indent(indent + 1, out);
                out.push_str(&serde_json::to_string(key).expect("key encode"));
                out.push_str(": ");
                write_value(item, indent + 1, out);
            }
            out.push('\n');
            push_indent(indent, out);
            out.push('}');
        }
    }
}

fn push_indent(indent: usize, out: &mut String) {
    for _ in 0..indent {
        out.push_str("  ");
    }
}

/// Single-line error payload for stderr.
pub fn error_json(e: &CliError) -> String {
    serde_json::to_string(&json!({
        "error": { "kind": e.kind(), "message": e.message() }
    }))
    .expect("error encode")
}

pub fn mat_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn sym_rows(s: &SymMat) -> Vec<Vec<f64>> {
    mat_rows(s.as_matrix())
}

pub fn rows_to_dmatrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!(
            "{what}: expected nonempty rectangular rows"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn rows_to_sym(rows: &[Vec<f64>], what: &str) -> Result<SymMat, CliError> {
    SymMat::from_rows(rows).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

// ---------------------------------------------------------------------
// moment report JSON schema

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagEntry {
    pub lag: f64,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProvenanceJson {
    ClosedForm,
    MonteCarlo { n: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StdErrorsJson {
    pub mean: Vec<Vec<f64>>,
    pub var_vec: Vec<Vec<f64>>,
    pub autocov: Vec<LagEntry>,
}

/// File form of a moment report; `fit --moments` reads this back.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentReportJson {
    pub mean: Vec<Vec<f64>>,
    pub var_vec: Vec<Vec<f64>>,
    pub autocov: Vec<LagEntry>,
    pub gamma: Vec<Vec<f64>>,
    pub provenance: ProvenanceJson,
    pub std_errors: Option<StdErrorsJson>,
}

fn lag_entries(pairs: &[(f64, DMatrix<f64>)]) -> Vec<LagEntry> {
    pairs
        .iter()
        .map(|(lag, m)| LagEntry {
            lag: *lag,
            matrix: mat_rows(m),
        })
        .collect()
}

fn lag_pairs(entries: &[LagEntry], what: &str) -> Result<Vec<(f64, DMatrix<f64>)>, CliError> {
    entries
        .iter()
        .map(|e| Ok((e.lag, rows_to_dmatrix(&e.matrix, what)?)))
        .collect()
}

impl MomentReportJson {
    pub fn from_report(report: &MomentReport) -> Self {
        MomentReportJson {
            mean: sym_rows(&report.mean),
            var_vec: mat_rows(&report.var_vec),
            autocov: lag_entries(&report.autocov),
            gamma: sym_rows(&report.gamma),
            provenance: match report.provenance {
                MomentProvenance::ClosedForm => ProvenanceJson::ClosedForm,
                MomentProvenance::MonteCarlo { n } => ProvenanceJson::MonteCarlo { n },
            },
            std_errors: report.std_errors.as_ref().map(|se| StdErrorsJson {
                mean: mat_rows(&se.mean),
                var_vec: mat_rows(&se.var_vec),
                autocov: lag_entries(&se.autocov),
            }),
        }
    }

    pub fn into_report(self) -> Result<MomentReport, CliError> {
        Ok(MomentReport {
            mean: rows_to_sym(&self.mean, "mean")?,
            var_vec: rows_to_dmatrix(&self.var_vec, "var_vec")?,
            autocov: lag_pairs(&self.autocov, "autocov")?,
            gamma: rows_to_sym(&self.gamma, "gamma")?,
            provenance: match self.provenance {
                ProvenanceJson::ClosedForm => MomentProvenance::ClosedForm,
                ProvenanceJson::MonteCarlo { n } => MomentProvenance::MonteCarlo { n },
            },
            std_errors: match self.std_errors {
                None => None,
                Some(se) => Some(MomentStdErrors {
                    mean: rows_to_dmatrix(&se.mean, "std_errors.mean")?,
                    var_vec: rows_to_dmatrix(&se.var_vec, "std_errors.var_vec")?,
                    autocov: lag_pairs(&se.autocov, "std_errors.autocov")?,
                }),
            },
        })
    }
}

pub fn condition_value(report: &DriftConditionReport) -> Value {
    json!({
        "candidate": sym_rows(&report.candidate),
        "spectrum": report.spectrum,
        "is_psd": report.is_psd,
    })
}

pub fn estimate_value(est: &MoMEstimate) -> Value {
    json!({
        "a_hat": mat_rows(est.a_hat.a()),
        "mean_l": sym_rows(&est.mean_l),
        "var_vec_l": mat_rows(&est.var_vec_l),
        "residuals": {
            "projection": est.residuals.projection,
            "mean_reconstruction": est.residuals.mean_reconstruction,
            "var_reconstruction": est.residuals.var_reconstruction,
            "autocov_reconstruction": est
                .residuals
                .autocov_reconstruction
                .iter()
                .map(|(lag, r)| json!({"lag": lag, "value": r}))
                .collect::<Vec<_>>(),
            "var_clip": est.residuals.var_clip,
        },
        "stable": est.stable,
        "used_lag": est.used_lag,
        "skipped_lags": est
            .skipped_lags
            .iter()
            .map(|(lag, reason)| json!({"lag": lag, "reason": reason}))
            .collect::<Vec<_>>(),
        "condition": condition_value(&est.condition),
    })
}

// ---------------------------------------------------------------------
// CSV

fn push_state_row(first: &str, vech: &HalfVec, out: &mut String) {
    out.push_str(first);
    for v in vech.as_slice() {
        out.push(',');
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
}

fn state_header(first: &str, d: usize) -> String {
    let mut line = String::from(first);
    for label in HalfVec::labels(d) {
        line.push(',');
        line.push_str(&label);
    }
    line.push('\n');
    line
}

/// One row per recorded state: the regular grid and, for exact drivers,
/// one row per jump.
pub fn path_csv(path: &OuPath) -> String {
    let d = path.states.first().map_or(0, |s| s.dim());
    let mut out = state_header("time", d);
    for (t, s) in path.times.iter().zip(&path.states) {
        push_state_row(&fmt_f64(*t), &s.vech(), &mut out);
    }
    out
}

pub fn jumps_csv(jumps: &[JumpRecord], d: usize) -> String {
    let mut out = state_header("time", d);
    for j in jumps {
        push_state_row(&fmt_f64(j.time), &j.jump.vech(), &mut out);
    }
    out
}

pub fn draws_csv(draws: &[SymMat]) -> String {
    let d = draws.first().map_or(0, |s| s.dim());
    let mut out = state_header("index", d);
    for (i, s) in draws.iter().enumerate() {
        push_state_row(&i.to_string(), &s.vech(), &mut out);
    }
    out
}

/// Parsed state CSV: the leading column ("time" or "index") and the
/// symmetric state per row.
pub struct StateCsv {
    pub leading: String,
    pub first_column: Vec<f64>,
    pub states: Vec<SymMat>,
}

pub fn read_state_csv(text: &str, what: &str) -> Result<StateCsv, CliError> {
    let bad = |msg: String| CliError::Config(format!("{what}: {msg}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let mut cols = header.split(',');
    let leading = cols
        .next()
        .ok_or_else(|| bad("empty header".into()))?
        .to_string();
    if leading != "time" && leading != "index" {
        return Err(bad(format!(
            "leading column must be time or index, got {leading:?}"
        )));
    }
    let labels: Vec<&str> = cols.collect();
    let m = labels.len();
    // m = d(d+1)/2 for some d, and the labels must be the vech order
    let d = (1..=64)
        .find(|d| d * (d + 1) / 2 == m)
        .ok_or_else(|| bad(format!("{m} state columns do not form a vech")))?;
    let expected = HalfVec::labels(d);
    if labels != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(bad(format!(
            "state columns must be {}, got {}",
            expected.join(","),
            labels.join(",")
        )));
    }
    let mut first_column = Vec::new();
    let mut states = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != m + 1 {
            return Err(bad(format!(
                "row {} has {} fields, expected {}",
                k + 2,
                fields.len(),
                m + 1
            )));
        }
        let mut parsed = fields.iter().map(|f| {
            f.parse::<f64>()
                .map_err(|e| bad(format!("row {}: {e}", k + 2)))
        });
        first_column.push(parsed.next().expect("leading field")?);
        let data = parsed.collect::<Result<Vec<f64>, CliError>>()?;
        let half = HalfVec::new(data).map_err(|e| bad(format!("row {}: {e}", k + 2)))?;
        states.push(half.to_sym());
    }
    Ok(StateCsv {
        leading,
        first_column,
        states,
    })
}

/// Restricts rows of a `time` CSV to the uniform grid `k * spacing`,
/// taking the last row at each grid time (a jump row landing exactly on a
/// grid time precedes the grid row that supersedes it).
pub fn grid_rows(times: &[f64], states: &[SymMat], spacing: f64) -> Result<Vec<SymMat>, CliError> {
    let mut grid: Vec<SymMat> = Vec::new();
    let mut k = 0usize;
    for (t, s) in times.iter().zip(states) {
        loop {
            let target = k as f64 * spacing;
            let tol = 1e-9 * (1.0 + target.abs());
            if *t < target - tol {
                // a jump row strictly inside the current window
                break;
            }
            if (*t - target).abs() <= tol {
                if grid.len() == k {
                    grid.push(s.clone());
                } else {
                    grid[k] = s.clone();
                }
                break;
            }
            // t has passed the target; the grid row for it must exist
            if grid.len() <= k {
                return Err(CliError::Config(format!(
                    "rows skip the grid time {target}; wrong --spacing?"
                )));
            }
            k += 1;
        }
    }
    if grid.is_empty() {
        return Err(CliError::Config(
            "no rows align with the requested spacing".into(),
        ));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_bit_exactly() {
        let samples = [
            0.0,
            -0.0,
            1.0,
            -1.0 / 3.0,
            0.1,
            1e-300,
            -2.5e300,
            f64::MIN_POSITIVE,
            f64::MIN_POSITIVE / 8.0, // subnormal
            std::f64::consts::PI,
            169.0 / 45.0 + f64::sqrt(130.0) / 3.0,
        ];
        for x in samples {
            let parsed: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(parsed.to_bits(), x.to_bits(), "for {x:e}");
        }
    }

    #[test]
    fn json_rendering_is_order_independent() {
        let a: Value = serde_json::from_str(r#"{"b": 1.5, "a": [1, 2.0], "c": null}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"c": null, "a": [1, 2.0], "b": 1.5}"#).unwrap();
        assert_eq!(to_json(&a), to_json(&b));
        assert!(to_json(&a).contains("1.5000000000000000e0"));
        // integers stay integers
        assert!(to_json(&a).contains("\n    1,"));
    }

    #[test]
    fn state_csv_round_trips() {
        let s1 = SymMat::from_rows(&[vec![1.0, 0.25], vec![0.25, 2.0]]).unwrap();
        let s2 = SymMat::from_rows(&[vec![0.5, -0.1], vec![-0.1, 0.75]]).unwrap();
        let text = draws_csv(&[s1.clone(), s2.clone()]);
        assert!(text.starts_with("index,s_11,s_21,s_22\n"));
        let parsed = read_state_csv(&text, "draws").unwrap();
        assert_eq!(parsed.leading, "index");
        assert_eq!(parsed.first_column, vec![0.0, 1.0]);
        assert_eq!(parsed.states[0].as_matrix(), s1.as_matrix());
        assert_eq!(parsed.states[1].as_matrix(), s2.as_matrix());
    }

    #[test]
    fn grid_extraction_keeps_the_last_row_per_grid_time() {
        let mk = |v: f64| SymMat::from_rows(&[vec![v]]).unwrap();
        // grid spacing 0.5 with jump rows at 0.2 and exactly at 0.5
        let times = [0.0, 0.2, 0.5, 0.5, 0.7, 1.0];
        let states: Vec<SymMat> = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0].map(mk).to_vec();
        let grid = grid_rows(&times, &states, 0.5).unwrap();
        let values: Vec<f64> = grid.iter().map(|s| s.entry(0, 0)).collect();
        assert_eq!(values, vec![0.0, 3.0, 5.0]);

        assert!(grid_rows(&[0.0, 1.0], &states[..2].to_vec(), 0.3).is_err());
    }
}
