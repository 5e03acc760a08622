//! Per-hidden-unit linear regressions of externally supplied activation
//! matrices on value-difference predictors.
//!
//! Activation extraction happens elsewhere; this module consumes a dense
//! binary matrix (trials x hidden units) plus a trial-metadata sidecar
//! naming the two options offered on each trial. Each unit's activations
//! are regressed on the absolute and relative value differences between
//! the first and second option (both normalized to [0, 1]) plus an
//! intercept, slopes are t-tested two-sided, and units are classified by
//! which predictors survive a Bonferroni-style critical p-value of
//! `.001 / (2 * n_units)`.
//!
//! ## Activation file format
//!
//! One ASCII header line, then raw data:
//!
//! ```text
//! RELVAL-ACTS v1 rows=<R> cols=<C> dtype=f32le\n
//! <R * C little-endian IEEE-754 f32 values, row-major>
//! ```
//!
//! ## Trial sidecar format
//!
//! JSONL: first line `{"schema_version":1,"rows":R}`, then R lines of
//! `{"first":"<option id>","second":"<option id>"}` in row order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};
use crate::taskdef::{relative_value_labels, TaskSpec};

/// Dense trials-by-units activation matrix.
#[derive(Debug, Clone)]
pub struct ActivationMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f32>,
}

impl ActivationMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Probe(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(ActivationMatrix { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col] as f64
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            file,
            "RELVAL-ACTS v1 rows={} cols={} dtype=f32le",
            self.rows, self.cols
        )?;
        for v in &self.data {
            file.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Probe(format!("cannot open {}: {e}", path.display())))?;
        let mut reader = BufReader::new(file);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let header = header.trim_end();
        let mut rows = None;
        let mut cols = None;
        let mut dtype_ok = false;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("RELVAL-ACTS") || parts.next() != Some("v1") {
            return Err(Error::Probe(format!("unrecognized header: {header:?}")));
        }
        for part in parts {
            if let Some(v) = part.strip_prefix("rows=") {
                rows = v.parse::<usize>().ok();
            } else if let Some(v) = part.strip_prefix("cols=") {
                cols = v.parse::<usize>().ok();
            } else if part == "dtype=f32le" {
                dtype_ok = true;
            }
        }
        let (rows, cols) = match (rows, cols, dtype_ok) {
            (Some(r), Some(c), true) => (r, c),
            _ => return Err(Error::Probe(format!("malformed header: {header:?}"))),
        };
        let mut bytes = Vec::with_capacity(rows * cols * 4);
        reader.read_to_end(&mut bytes)?;
        if bytes.len() != rows * cols * 4 {
            return Err(Error::Probe(format!(
                "expected {} bytes of f32 data, found {}",
                rows * cols * 4,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        ActivationMatrix::new(rows, cols, data)
    }
}

/// The two options offered on one probe trial, first-listed first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPair {
    pub first: String,
    pub second: String,
}

#[derive(Serialize, Deserialize)]
struct TrialMetaLine {
    schema_version: u32,
    rows: usize,
}

pub fn write_trial_pairs(path: &Path, pairs: &[TrialPair]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(
        &mut file,
        &TrialMetaLine {
            schema_version: 1,
            rows: pairs.len(),
        },
    )?;
    file.write_all(b"\n")?;
    for p in pairs {
        serde_json::to_writer(&mut file, p)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trial_pairs(path: &Path) -> Result<Vec<TrialPair>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Probe(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let meta: TrialMetaLine = match lines.next() {
        Some(line) => serde_json::from_str(&line?)
            .map_err(|e| Error::Probe(format!("trial sidecar meta line: {e}")))?,
        None => return Err(Error::Probe("trial sidecar is empty".into())),
    };
    if meta.schema_version != 1 {
        return Err(Error::Probe(format!(
            "trial sidecar schema_version {} unsupported (expected 1)",
            meta.schema_version
        )));
    }
    let mut pairs = Vec::with_capacity(meta.rows);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Probe(format!("trial sidecar: {e}")))?,
        );
    }
    if pairs.len() != meta.rows {
        return Err(Error::Probe(format!(
            "trial sidecar declares {} rows but contains {}",
            meta.rows,
            pairs.len()
        )));
    }
    Ok(pairs)
}

/// Per-trial (delta_abs, delta_rel): the difference (first minus second) in
/// expected values normalized by the task's EV span, and in relative values
/// min-max normalized to [0, 1] over the task's options.
pub fn value_difference_predictors(
    pairs: &[TrialPair],
    task: &TaskSpec,
) -> Result<Vec<(f64, f64)>> {
    let (ev_min, ev_max) = task.ev_range();
    if ev_max - ev_min <= 0.0 {
        return Err(Error::Probe(
            "absolute-value predictor is degenerate: all option EVs are equal".into(),
        ));
    }
    let labels = relative_value_labels(task);
    let (l_min, l_max) = labels.values().fold(
        (f64::INFINITY, f64::NEG_INFINITY),
        |(lo, hi), &v| (lo.min(v), hi.max(v)),
    );
    if l_max - l_min <= 0.0 {
        return Err(Error::Probe(
            "relative-value predictor is degenerate: all relative values are equal".into(),
        ));
    }
    pairs
        .iter()
        .map(|p| {
            let ev = |id: &str| {
                task.expected_value(id)
                    .ok_or_else(|| Error::Probe(format!("unknown option id {id}")))
            };
            let rel = |id: &str| {
                labels
                    .get(id)
                    .map(|l| (l - l_min) / (l_max - l_min))
                    .ok_or_else(|| Error::Probe(format!("unknown option id {id}")))
            };
            let d_abs = (ev(&p.first)? - ev(&p.second)?) / (ev_max - ev_min);
            let d_rel = rel(&p.first)? - rel(&p.second)?;
            Ok((d_abs, d_rel))
        })
        .collect()
}

/// Which predictors pass the critical p-value for one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitClass {
    Neither,
    AbsOnly,
    RelOnly,
    Both,
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitRegressionResult {
    pub unit: usize,
    pub intercept: f64,
    pub slope_abs: f64,
    pub slope_rel: f64,
    pub p_abs: f64,
    pub p_rel: f64,
    pub class: UnitClass,
}

/// The critical p-value `.001 / (2 * n_units)`: `.001 / 6144` when probing
/// 3072 units.
pub fn critical_p(n_units: usize) -> f64 {
    0.001 / (2.0 * n_units as f64)
}

fn invert_symmetric_3x3(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut inv = [[0.0; 3]; 3];
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    inv[1][0] = inv[0][1];
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    inv[2][0] = inv[0][2];
    inv[2][1] = inv[1][2];
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    Some(inv)
}

/// Ordinary least squares of every unit's activations on
/// `[1, delta_abs, delta_rel]`, with two-sided t-tests per slope and
/// classification against the critical p-value.
pub fn unit_regressions(
    acts: &ActivationMatrix,
    predictors: &[(f64, f64)],
) -> Result<Vec<UnitRegressionResult>> {
    let n = acts.rows;
    if predictors.len() != n {
        return Err(Error::Probe(format!(
            "activation matrix has {n} rows but {} predictor rows were supplied",
            predictors.len()
        )));
    }
    if n < 4 {
        return Err(Error::Probe(format!(
            "need at least 4 trials for a 3-parameter regression, got {n}"
        )));
    }

    let nf = n as f64;
    let mean_abs = predictors.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_rel = predictors.iter().map(|p| p.1).sum::<f64>() / nf;
    let var_abs = predictors.iter().map(|p| (p.0 - mean_abs).powi(2)).sum::<f64>() / nf;
    let var_rel = predictors.iter().map(|p| (p.1 - mean_rel).powi(2)).sum::<f64>() / nf;
    if var_abs < 1e-14 {
        return Err(Error::Probe(
            "rank-deficient design: the absolute value-difference predictor is constant".into(),
        ));
    }
    if var_rel < 1e-14 {
        return Err(Error::Probe(
            "rank-deficient design: the relative value-difference predictor is constant".into(),
        ));
    }

    // X'X for X = [1, d_abs, d_rel]
    let mut xtx = [[0.0f64; 3]; 3];
    for &(a, r) in predictors {
        let row = [1.0, a, r];
        for i in 0..3 {
            for j in 0..3 {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    let inv = invert_symmetric_3x3(xtx).ok_or_else(|| {
        Error::Probe(
            "rank-deficient design: the absolute and relative predictors are collinear".into(),
        )
    })?;

    let df = (n - 3) as f64;
    let t_dist = statrs::distribution::StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Probe(e.to_string()))?;
    let p_crit = critical_p(acts.cols);

    let results: Vec<UnitRegressionResult> = (0..acts.cols)
        .into_par_iter()
        .map(|unit| {
            // X'y and y'y in one pass down the column
            let mut xty = [0.0f64; 3];
            let mut yty = 0.0f64;
            for (row, &(a, r)) in predictors.iter().enumerate() {
                let y = acts.get(row, unit);
                xty[0] += y;
                xty[1] += a * y;
                xty[2] += r * y;
                yty += y * y;
            }
            let mut beta = [0.0f64; 3];
            for i in 0..3 {
                for j in 0..3 {
                    beta[i] += inv[i][j] * xty[j];
                }
            }
            let explained: f64 = (0..3).map(|i| beta[i] * xty[i]).sum();
            let rss = (yty - explained).max(0.0);
            let sigma2 = rss / df;
            let p_value = |slope: f64, var_scale: f64| -> f64 {
                let se = (sigma2 * var_scale).sqrt();
                if se == 0.0 {
                    // a perfectly fit slope: significant iff nonzero
                    return if slope == 0.0 { 1.0 } else { 0.0 };
                }
                let t = slope / se;
                2.0 * (1.0 - t_dist.cdf(t.abs()))
            };
            let p_abs = p_value(beta[1], inv[1][1]);
            let p_rel = p_value(beta[2], inv[2][2]);
            let class = match (p_abs < p_crit, p_rel < p_crit) {
                (false, false) => UnitClass::Neither,
                (true, false) => UnitClass::AbsOnly,
                (false, true) => UnitClass::RelOnly,
                (true, true) => UnitClass::Both,
            };
            UnitRegressionResult {
                unit,
                intercept: beta[0],
                slope_abs: beta[1],
                slope_rel: beta[2],
                p_abs,
                p_rel,
                class,
            }
        })
        .collect();
    Ok(results)
}

/// Counts per class in the order neither / abs-only / rel-only / both.
pub fn classification_counts(results: &[UnitRegressionResult]) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for r in results {
        let idx = match r.class {
            UnitClass::Neither => 0,
            UnitClass::AbsOnly => 1,
            UnitClass::RelOnly => 2,
            UnitClass::Both => 3,
        };
        counts[idx] += 1;
    }
    counts
}

/// Mean unsigned slopes per predictor (an effect-size measure, since both
/// predictors are normalized to [0, 1]) and their paired contrast.
#[derive(Debug, Clone, Serialize)]
pub struct EffectSizeSummary {
    pub n_units: usize,
    pub mean_abs_slope_abs: f64,
    pub se_abs: Option<f64>,
    pub mean_abs_slope_rel: f64,
    pub se_rel: Option<f64>,
    /// Mean of |slope_rel| - |slope_abs| over units.
    pub paired_diff: f64,
    pub paired_se: Option<f64>,
}

pub fn effect_size_summary(results: &[UnitRegressionResult]) -> Result<EffectSizeSummary> {
    if results.is_empty() {
        return Err(Error::Probe("no regression results to summarize".into()));
    }
    let abs: Vec<f64> = results.iter().map(|r| r.slope_abs.abs()).collect();
    let rel: Vec<f64> = results.iter().map(|r| r.slope_rel.abs()).collect();
    let diffs: Vec<f64> = rel.iter().zip(&abs).map(|(r, a)| r - a).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let se = |v: &[f64]| {
        (v.len() > 1).then(|| {
            let m = mean(v);
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
            (var / v.len() as f64).sqrt()
        })
    };
    Ok(EffectSizeSummary {
        n_units: results.len(),
        mean_abs_slope_abs: mean(&abs),
        se_abs: se(&abs),
        mean_abs_slope_rel: mean(&rel),
        se_rel: se(&rel),
        paired_diff: mean(&diffs),
        paired_se: se(&diffs),
    })
}

/// Classification counts in the published table layout.
pub fn counts_csv(results: &[UnitRegressionResult]) -> String {
    let counts = classification_counts(results);
    let total = results.len().max(1);
    let mut out = String::from("category,count,percent\n");
    for (name, c) in [
        ("both_non_significant", counts[0]),
        ("only_absolute_significant", counts[1]),
        ("only_relative_significant", counts[2]),
        ("both_significant", counts[3]),
    ] {
        out.push_str(&format!(
            "{name},{c},{:.1}\n",
            100.0 * c as f64 / total as f64
        ));
    }
    out
}

/// Per-unit results table.
pub fn units_csv(results: &[UnitRegressionResult]) -> String {
    let mut out = String::from("unit,intercept,slope_abs,slope_rel,p_abs,p_rel,class\n");
    for r in results {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.3e},{:.3e},{:?}\n",
            r.unit, r.intercept, r.slope_abs, r.slope_rel, r.p_abs, r.p_rel, r.class
        ));
    }
    out
}
