//! Weighted binary logistic regression, the downstream classifier for the
//! ML-utility and classifier-fairness measurements.
//!
//! Features are one-hot encodings of every non-outcome attribute (protected
//! attributes included as predictors) with the first level dropped, plus an
//! intercept. The fit maximizes the weighted log-likelihood minus
//! `(l2/2)·‖β‖²` by damped iteratively reweighted least squares from a zero
//! start, so fitting is deterministic.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tabular::{Dataset, Schema};

/// Maps records to one-hot feature vectors: intercept at column 0, then
/// `levels − 1` indicator columns per non-outcome attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder {
    schema: Arc<Schema>,
    /// (attribute index, first feature column) per encoded attribute.
    blocks: Vec<(usize, usize)>,
    n_features: usize,
}

impl FeatureEncoder {
    pub fn new(schema: Arc<Schema>) -> Self {
        let outcome = schema.outcome_index();
        let mut blocks = Vec::new();
        let mut col = 1usize;
        for a in 0..schema.len() {
            if a == outcome {
                continue;
            }
            blocks.push((a, col));
            col += schema.cardinality(a) - 1;
        }
        FeatureEncoder { schema, blocks, n_features: col }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Nonzero feature columns of one record (all features are 0/1).
    fn active_columns(&self, row: &[u16], out: &mut Vec<usize>) {
        out.clear();
        out.push(0);
        for &(attr, base) in &self.blocks {
            let level = row[attr] as usize;
            if level > 0 {
                out.push(base + level - 1);
            }
        }
    }
}

/// Outcome of a logistic fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    /// Hit the iteration cap; coefficients are the best iterate. Expected
    /// under complete separation with no ridge.
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub status: FitStatus,
    encoder: FeatureEncoder,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z), overflow-safe
fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Weighted penalized log-likelihood and its gradient at `beta`:
/// `Σ_i w_i (y_i z_i − log(1+e^{z_i})) − (l2/2)‖β‖²`.
pub fn log_likelihood_and_gradient(train: &Dataset, beta: &[f64], l2: f64) -> Result<(f64, Vec<f64>)> {
    let encoder = FeatureEncoder::new(train.schema().clone());
    if beta.len() != encoder.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for {} features",
            beta.len(),
            encoder.n_features()
        )));
    }
    let outcome = train.schema().outcome_index();
    let mut ll = 0.0;
    let mut grad = vec![0.0f64; beta.len()];
    let mut cols = Vec::new();
    for (i, row) in train.rows().enumerate() {
        let w = train.weight(i);
        encoder.active_columns(row, &mut cols);
        let z: f64 = cols.iter().map(|&c| beta[c]).sum();
        let y = row[outcome] as f64;
        ll += w * (y * z - log1p_exp(z));
        let r = w * (y - sigmoid(z));
        for &c in &cols {
            grad[c] += r;
        }
    }
    for (g, b) in grad.iter_mut().zip(beta) {
        *g -= l2 * b;
    }
    let pen: f64 = beta.iter().map(|b| b * b).sum();
    Ok((ll - 0.5 * l2 * pen, grad))
}

/// Fit by damped IRLS. Convergence is declared when the ∞-norm of the
/// penalized log-likelihood gradient drops below `tol`.
pub fn fit_logistic(train: &Dataset, l2: f64, max_iter: usize, tol: f64) -> Result<LogisticModel> {
    if train.n_rows() == 0 {
        return Err(Error::InvalidArgument("cannot fit a classifier on an empty dataset".into()));
    }
    if !(l2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("l2 must be nonnegative, got {l2}")));
    }
    let encoder = FeatureEncoder::new(train.schema().clone());
    let p = encoder.n_features();
    let outcome = train.schema().outcome_index();

    let mut beta = DVector::<f64>::zeros(p);
    let mut cols = Vec::with_capacity(train.schema().len());
    let mut active: Vec<Vec<usize>> = Vec::with_capacity(train.n_rows());
    let mut labels: Vec<f64> = Vec::with_capacity(train.n_rows());
    for row in train.rows() {
        encoder.active_columns(row, &mut cols);
        active.push(cols.clone());
        labels.push(row[outcome] as f64);
    }

    let penalized_ll = |beta: &DVector<f64>| -> f64 {
        let mut ll = 0.0;
        for (i, cols) in active.iter().enumerate() {
            let z: f64 = cols.iter().map(|&c| beta[c]).sum();
            ll += train.weight(i) * (labels[i] * z - log1p_exp(z));
        }
        ll - 0.5 * l2 * beta.dot(beta)
    };

    let mut status = FitStatus::IterationLimit;
    let mut ll = penalized_ll(&beta);
    for _ in 0..max_iter {
        // gradient and Hessian of the penalized log-likelihood
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for (i, cols) in active.iter().enumerate() {
            let w = train.weight(i);
            if w == 0.0 {
                continue;
            }
            let z: f64 = cols.iter().map(|&c| beta[c]).sum();
            let mu = sigmoid(z);
            let r = w * (labels[i] - mu);
            let wv = w * (mu * (1.0 - mu)).max(1e-12);
            for &c1 in cols {
                grad[c1] += r;
                for &c2 in cols {
                    hess[(c1, c2)] += wv;
                }
            }
        }
        for j in 0..p {
            grad[j] -= l2 * beta[j];
            hess[(j, j)] += l2.max(1e-12);
        }
        if grad.amax() < tol {
            // A vanishing gradient with astronomically large log-odds is the
            // separation asymptote (β diverging, likelihood flattening), not
            // a finite optimum; report it as a limit with the best iterate.
            let max_z = active
                .iter()
                .map(|cols| cols.iter().map(|&c| beta[c]).sum::<f64>().abs())
                .fold(0.0f64, f64::max);
            status = if max_z < 25.0 { FitStatus::Converged } else { FitStatus::IterationLimit };
            break;
        }
        let chol = match Cholesky::new(hess) {
            Some(c) => c,
            None => break,
        };
        let delta = chol.solve(&grad);
        // damping: halve the Newton step until the penalized likelihood
        // stops decreasing (guards the separation/overshoot cases)
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = &beta + &delta * scale;
            let cand_ll = penalized_ll(&cand);
            if cand_ll >= ll - 1e-12 * ll.abs() {
                beta = cand;
                ll = cand_ll;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(LogisticModel { coefficients: beta.iter().cloned().collect(), status, encoder })
}

impl LogisticModel {
    /// Class-1 probabilities for every row.
    pub fn scores(&self, d: &Dataset) -> Result<Vec<f64>> {
        if d.schema() != &self.encoder.schema {
            return Err(Error::SchemaMismatch("dataset schema differs from the model's".into()));
        }
        let mut cols = Vec::new();
        let mut out = Vec::with_capacity(d.n_rows());
        for row in d.rows() {
            self.encoder.active_columns(row, &mut cols);
            let z: f64 = cols.iter().map(|&c| self.coefficients[c]).sum();
            out.push(sigmoid(z));
        }
        Ok(out)
    }

    /// Labels and scores at a decision threshold; a score equal to the
    /// threshold is labelled positive.
    pub fn predict(&self, d: &Dataset, threshold: f64) -> Result<(Vec<bool>, Vec<f64>)> {
        let scores = self.scores(d)?;
        let labels = scores.iter().map(|&s| s >= threshold).collect();
        Ok((labels, scores))
    }
}
