//! Offline analysis: PCA inspection of state trajectories and aggregation
//! of per-trial detection results into a report.

use serde::Serialize;
use thiserror::Error;

use crate::detector::TrialClassification;
use crate::ingest::PerturbationKind;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{got} samples are too few for {dims} dimensions (need at least dims + 1)")]
    TooFewSamples { got: usize, dims: usize },
    #[error("requested {0} components from {1} usable dimensions")]
    TooManyComponents(usize, usize),
    #[error("every column is constant")]
    DegenerateAllConstant,
    #[error("rows have inconsistent widths")]
    RaggedMatrix,
    #[error("no rows to evaluate")]
    EmptyRows,
}

/// Principal components of a samples x dims matrix.
///
/// Components live in the original dimensionality with zero loadings on
/// dropped (constant) columns, pairwise orthonormal, ordered by
/// explained variance; each component's largest-magnitude loading is
/// positive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaResult {
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub scores: Vec<Vec<f64>>,
    /// Per-column centering applied before projection.
    pub mean: Vec<f64>,
    /// Per-column divisor (1.0 when standardization is off).
    pub scale: Vec<f64>,
    /// Columns dropped for zero variance.
    pub dropped: Vec<usize>,
    pub standardized: bool,
    /// Total variance of the analysed (kept, scaled) data.
    pub total_variance: f64,
}

impl PcaResult {
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns), unsorted.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let off_norm = |a: &Vec<Vec<f64>>| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i][j] * a[i][j];
                }
            }
        }
        s.sqrt()
    };
    let frob: f64 = a
        .iter()
        .flat_map(|r| r.iter().map(|x| x * x))
        .sum::<f64>()
        .sqrt();
    let tol = 1e-12 * frob.max(1.0);

    for _sweep in 0..100 {
        if off_norm(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                // Stable rotation angle.
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for i in 0..n {
                    let aip = a[i][p];
                    let aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[p][j];
                    let aqj = a[q][j];
                    a[p][j] = c * apj - s * aqj;
                    a[q][j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[i][p];
                    let viq = v[i][q];
                    v[i][p] = c * vip - s * viq;
                    v[i][q] = s * vip + c * viq;
                }
            }
        }
    }

    let eigvals: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    (eigvals, v)
}

/// PCA via covariance eigendecomposition. Columns are centered, optionally
/// standardized to unit variance (constant columns dropped), and the top
/// `k` components by eigenvalue are returned.
pub fn pca(rows: &[Vec<f64>], k: usize, standardize: bool) -> Result<PcaResult, AnalysisError> {
    let n = rows.len();
    let dims = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != dims) {
        return Err(AnalysisError::RaggedMatrix);
    }
    if n < dims + 1 || dims == 0 {
        return Err(AnalysisError::TooFewSamples { got: n, dims });
    }

    let mut mean = vec![0.0; dims];
    for row in rows {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; dims];
    for row in rows {
        for (c, (&v, &m)) in row.iter().zip(&mean).enumerate() {
            var[c] += (v - m) * (v - m);
        }
    }
    for v in var.iter_mut() {
        *v /= n as f64;
    }

    let kept: Vec<usize> = (0..dims).filter(|&c| var[c] > 0.0).collect();
    let dropped: Vec<usize> = (0..dims).filter(|&c| var[c] <= 0.0).collect();
    if kept.is_empty() {
        return Err(AnalysisError::DegenerateAllConstant);
    }
    if k > kept.len() {
        return Err(AnalysisError::TooManyComponents(k, kept.len()));
    }

    let scale: Vec<f64> = (0..dims)
        .map(|c| {
            if standardize && var[c] > 0.0 {
                var[c].sqrt()
            } else {
                1.0
            }
        })
        .collect();

    // Centered/scaled data over kept columns.
    let d = kept.len();
    let data: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| {
            kept.iter()
                .map(|&c| (row[c] - mean[c]) / scale[c])
                .collect()
        })
        .collect();

    // Population covariance.
    let mut cov = vec![vec![0.0; d]; d];
    for row in &data {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= n as f64;
            cov[j][i] = cov[i][j];
        }
    }
    let total_variance: f64 = (0..d).map(|i| cov[i][i]).sum();

    let (eigvals, eigvecs) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigvals[b].partial_cmp(&eigvals[a]).unwrap());

    let take = k.min(d);
    let mut components = Vec::with_capacity(take);
    let mut explained = Vec::with_capacity(take);
    let mut signs = Vec::with_capacity(take);
    for &col in order.iter().take(take) {
        let mut comp_kept: Vec<f64> = (0..d).map(|i| eigvecs[i][col]).collect();
        // Sign convention: largest-magnitude loading positive.
        let lead = comp_kept
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let sign = if comp_kept[lead] < 0.0 { -1.0 } else { 1.0 };
        for c in comp_kept.iter_mut() {
            *c *= sign;
        }
        signs.push(sign);
        let mut full = vec![0.0; dims];
        for (slot, &c) in kept.iter().enumerate() {
            full[c] = comp_kept[slot];
        }
        components.push(full);
        explained.push(eigvals[col].max(0.0));
    }

    let scores: Vec<Vec<f64>> = data
        .iter()
        .map(|row| {
            order
                .iter()
                .take(take)
                .enumerate()
                .map(|(ci, &col)| {
                    signs[ci]
                        * (0..d).map(|i| row[i] * eigvecs[i][col]).sum::<f64>()
                })
                .collect()
        })
        .collect();

    Ok(PcaResult {
        components,
        explained_variance: explained,
        scores,
        mean,
        scale,
        dropped,
        standardized: standardize,
        total_variance,
    })
}

/// Scores as CSV (`sample,pc1,pc2,...`).
pub fn scores_csv(result: &PcaResult) -> String {
    let k = result.components.len();
    let mut out = String::from("sample");
    for i in 1..=k {
        out.push_str(&format!(",pc{i}"));
    }
    out.push('\n');
    for (i, row) in result.scores.iter().enumerate() {
        out.push_str(&format!("{i}"));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorIdentity {
    Kinematic,
    Wbam,
}

/// One trial's contribution to a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial_id: String,
    pub truth_kind: Option<PerturbationKind>,
    pub classification: TrialClassification,
}

/// Aggregated confusion matrix, accuracy, and delay statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub detector: DetectorIdentity,
    pub true_pos: u32,
    pub false_pos: u32,
    pub true_neg: u32,
    pub false_neg: u32,
    pub accuracy: f64,
    /// Mean/population-sigma of delay over true positives, percent of the
    /// onset gait cycle.
    pub delay_mean_pct: Option<f64>,
    pub delay_sd_pct: Option<f64>,
    pub trials: Vec<TrialRow>,
}

/// Fold per-trial rows into a report. Deterministic and
/// permutation-invariant in the aggregate fields; rows are echoed sorted
/// by trial id.
pub fn evaluate(
    rows: &[TrialRow],
    detector: DetectorIdentity,
) -> Result<EvaluationReport, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::EmptyRows);
    }
    let mut tp = 0u32;
    let mut fp = 0u32;
    let mut tn = 0u32;
    let mut fn_ = 0u32;
    let mut delays = Vec::new();
    for row in rows {
        tp += row.classification.true_pos;
        fp += row.classification.false_pos;
        tn += row.classification.true_neg;
        fn_ += row.classification.false_neg;
        if let Some(d) = row.classification.delay_pct {
            delays.push(d);
        }
    }
    let total = tp + fp + tn + fn_;
    let accuracy = if total > 0 {
        (tp + tn) as f64 / total as f64
    } else {
        0.0
    };
    let (delay_mean_pct, delay_sd_pct) = if delays.is_empty() {
        (None, None)
    } else {
        let m = delays.iter().sum::<f64>() / delays.len() as f64;
        let var = delays.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / delays.len() as f64;
        (Some(m), Some(var.sqrt()))
    };
    let mut trials = rows.to_vec();
    trials.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    Ok(EvaluationReport {
        detector,
        true_pos: tp,
        false_pos: fp,
        true_neg: tn,
        false_neg: fn_,
        accuracy,
        delay_mean_pct,
        delay_sd_pct,
        trials,
    })
}

/// Report as pretty JSON.
pub fn report_json(report: &EvaluationReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}
