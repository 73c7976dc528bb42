//! Schema-aware categorical datasets, marginals, and full joint distributions.
//!
//! All domains in scope are tiny (at most ~1000 cells), so joints and
//! marginals are stored as dense vectors in row-major order of ascending
//! attribute index. Types are immutable after construction and safe to share
//! across threads; randomized operations are pure functions of their seed.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use rand::Rng;

/// Role of an attribute in fairness analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Feature,
    Protected,
    Outcome,
}

/// One categorical attribute: a name plus an ordered, duplicate-free list of
/// level names. Level order is meaningful: ordinal distortion rules measure
/// distance in level steps, and protected/outcome attributes must carry the
/// privileged/favorable level at index 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    pub name: String,
    pub levels: Vec<String>,
    pub role: Role,
}

impl Attribute {
    pub fn new(name: impl Into<String>, levels: Vec<String>, role: Role) -> Self {
        Attribute { name: name.into(), levels, role }
    }

    pub fn cardinality(&self) -> usize {
        self.levels.len()
    }
}

/// Ordered attribute list with role assignments.
///
/// Invariants enforced at construction:
/// - exactly one outcome attribute, binary, favorable level at index 1;
/// - every protected attribute is binary with the privileged level at index 1;
/// - level lists are non-empty and duplicate-free.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    attrs: Vec<Attribute>,
}

impl Schema {
    pub fn new(attrs: Vec<Attribute>) -> Result<Self> {
        if attrs.is_empty() {
            return Err(Error::InvalidArgument("schema has no attributes".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        let mut outcomes = 0usize;
        for a in &attrs {
            if !names.insert(a.name.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate attribute name {:?}", a.name)));
            }
            if a.levels.is_empty() {
                return Err(Error::InvalidArgument(format!("attribute {:?} has no levels", a.name)));
            }
            let mut lv = std::collections::BTreeSet::new();
            for l in &a.levels {
                if !lv.insert(l) {
                    return Err(Error::InvalidArgument(format!(
                        "attribute {:?} has duplicate level {:?}",
                        a.name, l
                    )));
                }
            }
            match a.role {
                Role::Outcome => {
                    outcomes += 1;
                    if a.levels.len() != 2 {
                        return Err(Error::InvalidArgument(format!(
                            "outcome attribute {:?} must be binary, has {} levels",
                            a.name,
                            a.levels.len()
                        )));
                    }
                }
                Role::Protected => {
                    if a.levels.len() != 2 {
                        return Err(Error::InvalidArgument(format!(
                            "protected attribute {:?} must be binary, has {} levels",
                            a.name,
                            a.levels.len()
                        )));
                    }
                }
                Role::Feature => {}
            }
        }
        if outcomes != 1 {
            return Err(Error::InvalidArgument(format!(
                "schema must have exactly one outcome attribute, found {outcomes}"
            )));
        }
        Ok(Schema { attrs })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attrs
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn attr(&self, i: usize) -> &Attribute {
        &self.attrs[i]
    }

    pub fn attr_index(&self, name: &str) -> Result<usize> {
        self.attrs
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("no attribute named {name:?}")))
    }

    pub fn outcome_index(&self) -> usize {
        self.attrs.iter().position(|a| a.role == Role::Outcome).expect("validated")
    }

    pub fn protected_indices(&self) -> Vec<usize> {
        (0..self.attrs.len()).filter(|&i| self.attrs[i].role == Role::Protected).collect()
    }

    pub fn cardinality(&self, i: usize) -> usize {
        self.attrs[i].cardinality()
    }

    /// Total number of cells in the full joint domain.
    pub fn domain_size(&self) -> usize {
        self.attrs.iter().map(|a| a.cardinality()).product()
    }

    /// Row-major strides over ascending attribute index (attribute 0 is the
    /// most significant digit).
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.attrs.len()];
        for i in (0..self.attrs.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.attrs[i + 1].cardinality();
        }
        strides
    }

    /// Lexicographic cell index of a full record.
    pub fn cell_index(&self, levels: &[u16]) -> usize {
        debug_assert_eq!(levels.len(), self.attrs.len());
        let mut idx = 0usize;
        for (i, &l) in levels.iter().enumerate() {
            idx = idx * self.attrs[i].cardinality() + l as usize;
        }
        idx
    }

    /// Inverse of [`Schema::cell_index`].
    pub fn decode_cell(&self, mut cell: usize) -> Vec<u16> {
        let mut out = vec![0u16; self.attrs.len()];
        for i in (0..self.attrs.len()).rev() {
            let k = self.attrs[i].cardinality();
            out[i] = (cell % k) as u16;
            cell /= k;
        }
        out
    }

    /// Restrict the schema to a subset of attributes (by index, any order;
    /// result keeps schema order). The outcome attribute must be retained.
    pub fn project(&self, keep: &[usize]) -> Result<Schema> {
        let mut sorted: Vec<usize> = keep.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.iter().any(|&i| i >= self.attrs.len()) {
            return Err(Error::SchemaMismatch("projection index out of range".into()));
        }
        let attrs: Vec<Attribute> = sorted.iter().map(|&i| self.attrs[i].clone()).collect();
        Schema::new(attrs)
    }
}

/// A weighted categorical dataset. Rows are level-index vectors; weights
/// default to 1 and are how reweighting schemes attach to the data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Arc<Schema>,
    /// Flattened rows, `len = n * schema.len()`.
    rows: Vec<u16>,
    weights: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(schema: Arc<Schema>, rows: Vec<Vec<u16>>) -> Result<Self> {
        let width = schema.len();
        let mut flat = Vec::with_capacity(rows.len() * width);
        for r in &rows {
            if r.len() != width {
                return Err(Error::SchemaMismatch(format!(
                    "row has {} entries, schema has {} attributes",
                    r.len(),
                    width
                )));
            }
            flat.extend_from_slice(r);
        }
        Dataset::from_flat(schema, flat)
    }

    pub fn from_flat(schema: Arc<Schema>, rows: Vec<u16>) -> Result<Self> {
        let width = schema.len();
        if rows.len() % width != 0 {
            return Err(Error::SchemaMismatch("flat row buffer is not a multiple of schema width".into()));
        }
        for (i, chunk) in rows.chunks_exact(width).enumerate() {
            for (j, &l) in chunk.iter().enumerate() {
                if l as usize >= schema.cardinality(j) {
                    return Err(Error::SchemaMismatch(format!(
                        "row {i}: level index {l} out of range for attribute {:?}",
                        schema.attr(j).name
                    )));
                }
            }
        }
        Ok(Dataset { schema, rows, weights: None })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} rows",
                weights.len(),
                self.n_rows()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        if self.schema.len() == 0 { 0 } else { self.rows.len() / self.schema.len() }
    }

    pub fn row(&self, i: usize) -> &[u16] {
        let w = self.schema.len();
        &self.rows[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u16]> {
        self.rows.chunks_exact(self.schema.len())
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn total_weight(&self) -> f64 {
        match &self.weights {
            Some(w) => w.iter().sum(),
            None => self.n_rows() as f64,
        }
    }

    /// Keep the listed rows (in the given order), carrying weights along.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let w = self.schema.len();
        let mut flat = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            flat.extend_from_slice(self.row(i));
        }
        let weights = self.weights.as_ref().map(|ws| idx.iter().map(|&i| ws[i]).collect());
        Dataset { schema: self.schema.clone(), rows: flat, weights }
    }

    /// Project rows onto a sub-schema produced by [`Schema::project`].
    pub fn project(&self, keep: &[usize]) -> Result<Dataset> {
        let sub = Arc::new(self.schema.project(keep)?);
        let mut sorted: Vec<usize> = keep.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut flat = Vec::with_capacity(self.n_rows() * sorted.len());
        for r in self.rows() {
            for &a in &sorted {
                flat.push(r[a]);
            }
        }
        Ok(Dataset { schema: sub, rows: flat, weights: self.weights.clone() })
    }

    /// Normalized empirical joint distribution of the dataset.
    pub fn empirical_joint(&self) -> Result<JointDistribution> {
        let total = self.total_weight();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("empirical joint of zero-weight dataset".into()));
        }
        let mut probs = vec![0.0; self.schema.domain_size()];
        for (i, r) in self.rows().enumerate() {
            probs[self.schema.cell_index(r)] += self.weight(i) / total;
        }
        JointDistribution::new(self.schema.clone(), probs)
    }
}

/// Identity of one marginal: a sorted, distinct, non-empty set of attribute
/// indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MarginalSpec {
    attrs: Vec<usize>,
}

impl MarginalSpec {
    pub fn new(mut attrs: Vec<usize>) -> Result<Self> {
        attrs.sort_unstable();
        attrs.dedup();
        if attrs.is_empty() {
            return Err(Error::InvalidArgument("marginal spec is empty".into()));
        }
        Ok(MarginalSpec { attrs })
    }

    pub fn attrs(&self) -> &[usize] {
        &self.attrs
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.attrs.iter().any(|&a| a >= schema.len()) {
            return Err(Error::SchemaMismatch(format!(
                "marginal spec {:?} out of range for {}-attribute schema",
                self.attrs,
                schema.len()
            )));
        }
        Ok(())
    }

    /// Number of cells of this marginal under `schema`.
    pub fn n_cells(&self, schema: &Schema) -> usize {
        self.attrs.iter().map(|&a| schema.cardinality(a)).product()
    }

    /// Cell index within the marginal for a full record.
    pub fn cell_of_row(&self, schema: &Schema, row: &[u16]) -> usize {
        let mut idx = 0usize;
        for &a in &self.attrs {
            idx = idx * schema.cardinality(a) + row[a] as usize;
        }
        idx
    }

    /// Is `self` a subset of `other`?
    pub fn is_subset_of(&self, other: &MarginalSpec) -> bool {
        self.attrs.iter().all(|a| other.attrs.contains(a))
    }

    /// Size of the attribute-set intersection with `other`.
    pub fn intersection_size(&self, other: &MarginalSpec) -> usize {
        self.attrs.iter().filter(|a| other.attrs.contains(a)).count()
    }
}

/// Dense real-valued marginal table. Counts of a noisy measured marginal may
/// be negative, so no nonnegativity is enforced here.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub spec: MarginalSpec,
    pub counts: Vec<f64>,
}

impl Marginal {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Project this marginal onto a subset spec (exact summation).
    pub fn project(&self, schema: &Schema, sub: &MarginalSpec) -> Result<Marginal> {
        if !sub.is_subset_of(&self.spec) {
            return Err(Error::InvalidArgument(format!(
                "{:?} is not a subset of {:?}",
                sub.attrs(),
                self.spec.attrs()
            )));
        }
        let mut counts = vec![0.0; sub.n_cells(schema)];
        // Walk all cells of the larger marginal, re-index into the smaller.
        let attrs = self.spec.attrs();
        let mut levels = vec![0u16; attrs.len()];
        for (flat, &v) in self.counts.iter().enumerate() {
            let mut rem = flat;
            for k in (0..attrs.len()).rev() {
                let card = schema.cardinality(attrs[k]);
                levels[k] = (rem % card) as u16;
                rem /= card;
            }
            let mut idx = 0usize;
            for &a in sub.attrs() {
                let pos = attrs.iter().position(|&b| b == a).expect("subset");
                idx = idx * schema.cardinality(a) + levels[pos] as usize;
            }
            counts[idx] += v;
        }
        Ok(Marginal { spec: sub.clone(), counts })
    }
}

/// A full discrete joint distribution over the schema domain.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    schema: Arc<Schema>,
    probs: Vec<f64>,
}

impl JointDistribution {
    pub fn new(schema: Arc<Schema>, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != schema.domain_size() {
            return Err(Error::DimensionMismatch(format!(
                "{} probabilities for a domain of {} cells",
                probs.len(),
                schema.domain_size()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}, expected 1")));
        }
        Ok(JointDistribution { schema, probs })
    }

    /// Normalize a nonnegative mass vector into a distribution.
    pub fn from_masses(schema: Arc<Schema>, masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::InvalidArgument(format!("total mass {total} is not positive")));
        }
        let probs = masses.into_iter().map(|m| m / total).collect();
        JointDistribution::new(schema, probs)
    }

    pub fn uniform(schema: Arc<Schema>) -> Self {
        let n = schema.domain_size();
        JointDistribution { schema, probs: vec![1.0 / n as f64; n] }
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// All size-`k` subsets of `0..d`, in lexicographic order.
pub fn k_subsets(d: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > d {
        return out;
    }
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        out.push(combo.clone());
        let mut i = k;
        let mut done = true;
        while i > 0 {
            i -= 1;
            if combo[i] + (k - i) <= d - 1 {
                combo[i] += 1;
                for j in (i + 1)..k {
                    combo[j] = combo[j - 1] + 1;
                }
                done = false;
                break;
            }
        }
        if done {
            return out;
        }
    }
}

/// Weighted contingency counts of `d` over the cells of `spec`.
///
/// `counts[cell]` is the sum of weights of rows falling in that cell, so the
/// counts always sum to the dataset's total weight.
pub fn compute_marginal(d: &Dataset, spec: &MarginalSpec) -> Result<Marginal> {
    spec.validate(d.schema())?;
    let mut counts = vec![0.0; spec.n_cells(d.schema())];
    for (i, r) in d.rows().enumerate() {
        counts[spec.cell_of_row(d.schema(), r)] += d.weight(i);
    }
    Ok(Marginal { spec: spec.clone(), counts })
}

/// Exact marginal of a joint distribution (sums probabilities over the
/// attributes outside `spec`). The result sums to 1.
pub fn marginal_of_joint(p: &JointDistribution, spec: &MarginalSpec) -> Result<Marginal> {
    spec.validate(p.schema())?;
    let map = marginal_cell_map(p.schema(), spec);
    let mut counts = vec![0.0; spec.n_cells(p.schema())];
    for (cell, &prob) in p.probs().iter().enumerate() {
        counts[map[cell] as usize] += prob;
    }
    Ok(Marginal { spec: spec.clone(), counts })
}

/// For each full-domain cell, the marginal cell it lands in. Precomputed by
/// the fitting loop so repeated marginal evaluations are a single gather.
pub fn marginal_cell_map(schema: &Schema, spec: &MarginalSpec) -> Vec<u32> {
    let n = schema.domain_size();
    let mut map = vec![0u32; n];
    let mut row = vec![0u16; schema.len()];
    for cell in 0..n {
        let mut rem = cell;
        for i in (0..schema.len()).rev() {
            let k = schema.cardinality(i);
            row[i] = (rem % k) as u16;
            rem /= k;
        }
        map[cell] = spec.cell_of_row(schema, &row) as u32;
    }
    map
}

/// Draw `n` unit-weight i.i.d. rows from `p`. Deterministic given `seed`.
pub fn sample_dataset(p: &JointDistribution, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot sample an empty dataset".into()));
    }
    let mut rng = rng::derive_rng(seed, &[stream::SAMPLE]);
    let mut cdf = Vec::with_capacity(p.probs().len());
    let mut acc = 0.0;
    for &q in p.probs() {
        acc += q;
        cdf.push(acc);
    }
    let schema = p.schema().clone();
    let width = schema.len();
    let mut flat = Vec::with_capacity(n * width);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let cell = match cdf.binary_search_by(|c| c.partial_cmp(&u).expect("finite")) {
            Ok(i) => i,
            Err(i) => i.min(cdf.len() - 1),
        };
        flat.extend_from_slice(&schema.decode_cell(cell));
    }
    Dataset::from_flat(schema, flat)
}

/// Materialize `n` rows whose cell counts are the largest-remainder
/// rounding of `n·p`: every marginal of the result matches the joint to
/// within rounding, with none of the multinomial noise of i.i.d. sampling.
/// Row order is a seeded shuffle. Deterministic given `seed`.
pub fn allocate_dataset(p: &JointDistribution, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot allocate an empty dataset".into()));
    }
    let probs = p.probs();
    let mut counts: Vec<usize> = probs.iter().map(|&q| (q * n as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = probs
        .iter()
        .enumerate()
        .map(|(c, &q)| (c, q * n as f64 - (q * n as f64).floor()))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(cell, _) in remainders.iter().take(n - assigned) {
        counts[cell] += 1;
    }
    let schema = p.schema().clone();
    let width = schema.len();
    let mut flat = Vec::with_capacity(n * width);
    for (cell, &k) in counts.iter().enumerate() {
        let row = schema.decode_cell(cell);
        for _ in 0..k {
            flat.extend_from_slice(&row);
        }
    }
    let mut rng = rng::derive_rng(seed, &[stream::SAMPLE]);
    let rows = n;
    // Fisher-Yates over rows of the flat buffer
    for i in (1..rows).rev() {
        let j = rng.random_range(0..=i);
        if i != j {
            for k in 0..width {
                flat.swap(i * width + k, j * width + k);
            }
        }
    }
    Dataset::from_flat(schema, flat)
}

/// Split into disjoint (train, test) parts of sizes `⌊n·f⌋` and `n − ⌊n·f⌋`.
///
/// The choice of rows is a seeded uniform draw; within each part the
/// original row order is preserved so downstream seeded procedures see a
/// stable ordering.
pub fn train_test_split(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = d.n_rows();
    let k = ((n as f64) * train_fraction).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng::derive_rng(seed, &[stream::SPLIT]);
    // Fisher-Yates, then sort each part back into original order.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let mut train_idx: Vec<usize> = idx[..k].to_vec();
    let mut test_idx: Vec<usize> = idx[k..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((d.select_rows(&train_idx), d.select_rows(&test_idx)))
}
