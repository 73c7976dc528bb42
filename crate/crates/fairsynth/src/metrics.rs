//! Fairness, general-utility, and ML-utility measurements.
//!
//! Sign conventions: the privileged group and the favorable outcome are both
//! encoded as level 1, every difference metric is
//! `unprivileged − privileged`, values closer to 0 are fairer, and negative
//! values favor the privileged group.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tabular::{compute_marginal, k_subsets, Dataset, MarginalSpec};

/// One or more protected attributes measured jointly. For a composite spec
/// the privileged group is "privileged on every component" and the
/// unprivileged group "unprivileged on every component"; mixed rows belong
/// to neither and are excluded from the metric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtectedSpec {
    attrs: Vec<usize>,
    label: String,
}

impl ProtectedSpec {
    pub fn new(d: &Dataset, attr_names: &[&str]) -> Result<Self> {
        if attr_names.is_empty() {
            return Err(Error::InvalidArgument("protected spec needs at least one attribute".into()));
        }
        let schema = d.schema();
        let mut attrs = Vec::with_capacity(attr_names.len());
        for name in attr_names {
            let idx = schema.attr_index(name)?;
            if schema.attr(idx).role != crate::tabular::Role::Protected {
                return Err(Error::InvalidArgument(format!("attribute {name:?} is not protected")));
            }
            attrs.push(idx);
        }
        attrs.sort_unstable();
        attrs.dedup();
        Ok(ProtectedSpec { attrs, label: attr_names.join("+") })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `Some(true)` privileged on every component, `Some(false)`
    /// unprivileged on every component, `None` mixed.
    pub fn group_of(&self, row: &[u16]) -> Option<bool> {
        let first = row[self.attrs[0]] == 1;
        for &a in &self.attrs[1..] {
            if (row[a] == 1) != first {
                return None;
            }
        }
        Some(first)
    }
}

/// Weighted conditional favorable rate `P(event | group)` for both groups:
/// returns (unprivileged, privileged).
fn group_rates(
    d: &Dataset,
    spec: &ProtectedSpec,
    mut event: impl FnMut(usize, &[u16]) -> bool,
    mut condition: impl FnMut(usize, &[u16]) -> bool,
) -> Result<(f64, f64)> {
    let mut num = [0.0f64; 2];
    let mut den = [0.0f64; 2];
    for (i, row) in d.rows().enumerate() {
        let Some(priv_group) = spec.group_of(row) else { continue };
        if !condition(i, row) {
            continue;
        }
        let g = usize::from(priv_group);
        let w = d.weight(i);
        den[g] += w;
        if event(i, row) {
            num[g] += w;
        }
    }
    if den[0] <= 0.0 || den[1] <= 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "empty conditioning cell for protected spec {:?}",
            spec.label
        )));
    }
    Ok((num[0] / den[0], num[1] / den[1]))
}

/// Conditional outcome difference `P(Y=1|g=0) − P(Y=1|g=1)`: structural bias
/// of the dataset itself, no classifier involved.
pub fn cod(d: &Dataset, spec: &ProtectedSpec) -> Result<f64> {
    let outcome = d.schema().outcome_index();
    let (u, p) = group_rates(d, spec, |_, row| row[outcome] == 1, |_, _| true)?;
    Ok(u - p)
}

/// Statistical parity difference `P(Ŷ=1|g=0) − P(Ŷ=1|g=1)`.
pub fn spd(test: &Dataset, predictions: &[bool], spec: &ProtectedSpec) -> Result<f64> {
    check_len(test, predictions.len())?;
    let (u, p) = group_rates(test, spec, |i, _| predictions[i], |_, _| true)?;
    Ok(u - p)
}

/// Average odds difference: the mean of the group gaps in false-positive
/// rate and true-positive rate.
pub fn aod(test: &Dataset, predictions: &[bool], spec: &ProtectedSpec) -> Result<f64> {
    check_len(test, predictions.len())?;
    let outcome = test.schema().outcome_index();
    let (fpr_u, fpr_p) =
        group_rates(test, spec, |i, _| predictions[i], |_, row| row[outcome] == 0)?;
    let (tpr_u, tpr_p) =
        group_rates(test, spec, |i, _| predictions[i], |_, row| row[outcome] == 1)?;
    Ok(0.5 * ((fpr_u - fpr_p) + (tpr_u - tpr_p)))
}

/// Conditional utility difference `u(g=0) − u(g=1)` for an arbitrary
/// conditional utility given as (event, condition) row predicates.
pub fn cud(
    test: &Dataset,
    spec: &ProtectedSpec,
    event: impl FnMut(usize, &[u16]) -> bool,
    condition: impl FnMut(usize, &[u16]) -> bool,
) -> Result<f64> {
    let (u, p) = group_rates(test, spec, event, condition)?;
    Ok(u - p)
}

/// False-negative rate balance: CUD with `u = P(Ŷ=0 | Y=1, g)`.
pub fn fn_rate_balance(test: &Dataset, predictions: &[bool], spec: &ProtectedSpec) -> Result<f64> {
    check_len(test, predictions.len())?;
    let outcome = test.schema().outcome_index();
    cud(test, spec, |i, _| !predictions[i], |_, row| row[outcome] == 1)
}

/// False-positive rate balance: CUD with `u = P(Ŷ=1 | Y=0, g)`.
pub fn fp_rate_balance(test: &Dataset, predictions: &[bool], spec: &ProtectedSpec) -> Result<f64> {
    check_len(test, predictions.len())?;
    let outcome = test.schema().outcome_index();
    cud(test, spec, |i, _| predictions[i], |_, row| row[outcome] == 0)
}

fn check_len(d: &Dataset, n: usize) -> Result<()> {
    if d.n_rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} rows",
            n,
            d.n_rows()
        )));
    }
    Ok(())
}

/// Sum over all size-`k` attribute subsets of the total variation distance
/// between the two datasets' normalized marginals.
pub fn cumulative_tvd(a: &Dataset, b: &Dataset, k: usize) -> Result<f64> {
    if a.schema() != b.schema() {
        return Err(Error::SchemaMismatch("cumulative TVD needs a common schema".into()));
    }
    let d = a.schema().len();
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("{k}-way TVD on {d} attributes")));
    }
    let (wa, wb) = (a.total_weight(), b.total_weight());
    if wa <= 0.0 || wb <= 0.0 {
        return Err(Error::InvalidArgument("cumulative TVD of zero-weight dataset".into()));
    }
    let mut total = 0.0;
    for attrs in k_subsets(d, k) {
        let spec = MarginalSpec::new(attrs)?;
        let ma = compute_marginal(a, &spec)?;
        let mb = compute_marginal(b, &spec)?;
        let tvd: f64 =
            ma.counts.iter().zip(&mb.counts).map(|(x, y)| (x / wa - y / wb).abs()).sum::<f64>() / 2.0;
        total += tvd;
    }
    Ok(total)
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // cdf series: sqrt(2π)/λ · Σ exp(−(2k−1)²π²/(8λ²))
        let mut cdf = 0.0;
        for k in 1..=20u32 {
            let m = (2 * k - 1) as f64;
            cdf += (-m * m * std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sf = 0.0;
        for k in 1..=100u32 {
            let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
            if term < 1e-18 {
                break;
            }
            sf += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        }
        sf.clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov-Smirnov test on the records' lexicographic cell
/// indices (row-major over the schema). Returns the statistic — the largest
/// gap between the two weighted empirated CDFs over the pooled support — and
/// an asymptotic p-value at effective size `n_a·n_b/(n_a+n_b)`.
///
/// Reducing multivariate categorical records to cell indices makes the
/// statistic depend on attribute and level order; it is a pinned convention,
/// useful for trend comparisons rather than exact hypothesis testing.
pub fn ks_two_sample(a: &Dataset, b: &Dataset) -> Result<(f64, f64)> {
    if a.schema() != b.schema() {
        return Err(Error::SchemaMismatch("KS test needs a common schema".into()));
    }
    if a.n_rows() == 0 || b.n_rows() == 0 {
        return Err(Error::InvalidArgument("KS test on an empty dataset".into()));
    }
    let cells = |d: &Dataset| -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> =
            d.rows().enumerate().map(|(i, r)| (d.schema().cell_index(r), d.weight(i))).collect();
        v.sort_unstable_by_key(|&(c, _)| c);
        v
    };
    let (sa, sb) = (cells(a), cells(b));
    let (wa, wb) = (a.total_weight(), b.total_weight());
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut stat = 0.0f64;
    while ia < sa.len() || ib < sb.len() {
        let next = match (sa.get(ia), sb.get(ib)) {
            (Some(&(ca, _)), Some(&(cb, _))) => ca.min(cb),
            (Some(&(ca, _)), None) => ca,
            (None, Some(&(cb, _))) => cb,
            (None, None) => break,
        };
        while ia < sa.len() && sa[ia].0 == next {
            fa += sa[ia].1;
            ia += 1;
        }
        while ib < sb.len() && sb[ib].0 == next {
            fb += sb[ib].1;
            ib += 1;
        }
        stat = stat.max((fa / wa - fb / wb).abs());
    }
    let n_eff = (a.n_rows() as f64 * b.n_rows() as f64) / (a.n_rows() + b.n_rows()) as f64;
    let p = kolmogorov_sf(n_eff.sqrt() * stat);
    Ok((stat, p))
}

/// Classifier quality measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub tp_rate: f64,
    pub tn_rate: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    /// `None` when the test outcome is single-class (AUC undefined).
    pub auc: Option<f64>,
}

/// Standard weighted classification metrics plus rank-statistic AUC with
/// midrank tie handling.
pub fn ml_metrics(test: &Dataset, predictions: &[bool], scores: &[f64]) -> Result<MlMetrics> {
    check_len(test, predictions.len())?;
    check_len(test, scores.len())?;
    if test.n_rows() == 0 {
        return Err(Error::InvalidArgument("metrics on an empty test set".into()));
    }
    let outcome = test.schema().outcome_index();
    let (mut tp, mut tn, mut fp, mut fne) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (i, row) in test.rows().enumerate() {
        let w = test.weight(i);
        match (row[outcome] == 1, predictions[i]) {
            (true, true) => tp += w,
            (true, false) => fne += w,
            (false, true) => fp += w,
            (false, false) => tn += w,
        }
    }
    let pos = tp + fne;
    let neg = fp + tn;
    let total = pos + neg;
    let accuracy = (tp + tn) / total;
    let f1 = if 2.0 * tp + fp + fne > 0.0 { 2.0 * tp / (2.0 * tp + fp + fne) } else { 0.0 };
    let (tp_rate, fn_rate) = if pos > 0.0 { (tp / pos, fne / pos) } else { (0.0, 0.0) };
    let (tn_rate, fp_rate) = if neg > 0.0 { (tn / neg, fp / neg) } else { (0.0, 0.0) };

    let auc = if pos > 0.0 && neg > 0.0 {
        // group by score ascending; each positive scores the negative weight
        // strictly below it plus half the tied negative weight
        let mut order: Vec<usize> = (0..test.n_rows()).collect();
        order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).expect("finite scores"));
        let mut auc_sum = 0.0f64;
        let mut neg_below = 0.0f64;
        let mut idx = 0usize;
        while idx < order.len() {
            let s = scores[order[idx]];
            let mut pos_here = 0.0f64;
            let mut neg_here = 0.0f64;
            while idx < order.len() && scores[order[idx]] == s {
                let i = order[idx];
                let w = test.weight(i);
                if test.row(i)[outcome] == 1 {
                    pos_here += w;
                } else {
                    neg_here += w;
                }
                idx += 1;
            }
            auc_sum += pos_here * (neg_below + 0.5 * neg_here);
            neg_below += neg_here;
        }
        Some(auc_sum / (pos * neg))
    } else {
        None
    };
    Ok(MlMetrics { accuracy, f1, tp_rate, tn_rate, fp_rate, fn_rate, auc })
}

/// Everything measured for one pipeline run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    /// metric-name × protected-spec label → value, e.g. `"cod(sex)"`.
    pub fairness: BTreeMap<String, f64>,
    /// general-utility metrics, e.g. `"tvd1"`, `"ks_stat"`.
    pub general: BTreeMap<String, f64>,
    /// ML-utility metrics, e.g. `"accuracy"`, `"auc"`.
    pub ml: BTreeMap<String, f64>,
}

impl MetricReport {
    /// Flat (name, value) view in deterministic order.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (k, v) in &self.general {
            out.push((k.clone(), *v));
        }
        for (k, v) in &self.fairness {
            out.push((k.clone(), *v));
        }
        for (k, v) in &self.ml {
            out.push((k.clone(), *v));
        }
        out
    }
}
