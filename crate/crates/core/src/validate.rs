//! TF-IDF association between app-usage categories and city states.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Usage counts, rows = app categories, columns = states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageMatrix {
    pub apps: Vec<String>,
    pub states: Vec<String>,
    pub counts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdf {
    pub apps: Vec<String>,
    pub states: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    /// Rows with no usage at all; their scores are all zero and undefined.
    pub zero_rows: Vec<usize>,
    pub zero_cols: Vec<usize>,
}

impl UsageMatrix {
    pub fn new(apps: Vec<String>, states: Vec<String>, counts: Vec<Vec<f64>>) -> Result<Self> {
        if counts.len() != apps.len() {
            return Err(Error::DimensionMismatch {
                expected: apps.len(),
                actual: counts.len(),
            });
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != states.len() {
                return Err(Error::DimensionMismatch {
                    expected: states.len(),
                    actual: row.len(),
                });
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::NonFiniteInput { row: i, col: j });
            }
        }
        Ok(UsageMatrix { apps, states, counts })
    }

    /// Aggregate `app_category,state,count` rows. Rows and columns come out
    /// sorted by label; repeated pairs are summed.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["app_category", "state", "count"] {
            return Err(Error::Malformed {
                what: "usage header".into(),
                detail: format!("expected app_category,state,count, got {}", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let count: f64 = rec[2].trim().parse().map_err(|_| Error::Malformed {
                what: "usage count".into(),
                detail: format!("line {}: {:?}", line + 2, &rec[2]),
            })?;
            *cells.entry((rec[0].to_string(), rec[1].to_string())).or_default() += count;
        }
        let apps: Vec<String> = cells.keys().map(|k| k.0.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let mut states: Vec<String> = cells.keys().map(|k| k.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        // Numeric state labels sort numerically.
        states.sort_by(|a, b| match (a.parse::<i64>(), b.parse::<i64>()) {
            (Ok(x), Ok(y)) => x.cmp(&y),
            _ => a.cmp(b),
        });
        let mut counts = vec![vec![0.0; states.len()]; apps.len()];
        for ((app, state), v) in cells {
            let i = apps.binary_search(&app).expect("collected above");
            let j = states.iter().position(|s| *s == state).expect("collected above");
            counts[i][j] = v;
        }
        UsageMatrix::new(apps, states, counts)
    }
}

/// `U′[i][j] = U[i][j] / Σ_j U[i][j] · ln(Σ_i U[i][j] / U[i][j])`, with
/// zero cells scored 0.
pub fn tfidf(u: &UsageMatrix) -> TfIdf {
    let rows = u.apps.len();
    let cols = u.states.len();
    let row_sum: Vec<f64> = u.counts.iter().map(|r| r.iter().sum()).collect();
    let col_sum: Vec<f64> = (0..cols).map(|j| u.counts.iter().map(|r| r[j]).sum()).collect();
    let scores = (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| {
                    let x = u.counts[i][j];
                    if x == 0.0 {
                        0.0
                    } else {
                        x / row_sum[i] * (col_sum[j] / x).ln()
                    }
                })
                .collect()
        })
        .collect();
    TfIdf {
        apps: u.apps.clone(),
        states: u.states.clone(),
        scores,
        zero_rows: (0..rows).filter(|&i| row_sum[i] == 0.0).collect(),
        zero_cols: (0..cols).filter(|&j| col_sum[j] == 0.0).collect(),
    }
}

impl TfIdf {
    /// Indices of the top three apps per state, best first. Ties go to the
    /// earlier row; zero scores are never ranked.
    pub fn top3(&self, col: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.apps.len()).filter(|&i| self.scores[i][col] > 0.0).collect();
        idx.sort_by(|&a, &b| self.scores[b][col].total_cmp(&self.scores[a][col]).then(a.cmp(&b)));
        idx.truncate(3);
        idx
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["app_category".to_string()];
        header.extend(self.states.iter().cloned());
        w.write_record(&header)?;
        for (app, row) in self.apps.iter().zip(&self.scores) {
            let mut rec = vec![app.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Markdown table; the top three apps per state get `*`, `**`, `***`.
    pub fn to_markdown(&self) -> String {
        let cols = self.states.len();
        let mut marks = vec![vec![""; cols]; self.apps.len()];
        for j in 0..cols {
            for (i, mark) in self.top3(j).into_iter().zip(["*", "**", "***"]) {
                marks[i][j] = mark;
            }
        }
        let mut s = String::from("| App |");
        for st in &self.states {
            let _ = write!(s, " {st} |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(cols));
        s.push('\n');
        for (i, app) in self.apps.iter().enumerate() {
            let _ = write!(s, "| {app} |");
            for (v, m) in self.scores[i].iter().zip(&marks[i]) {
                let _ = write!(s, " {v:.3}{m} |");
            }
            s.push('\n');
        }
        s
    }
}
