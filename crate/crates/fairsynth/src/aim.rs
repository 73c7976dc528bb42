//! Adaptive, iterative, marginal-based private data synthesis.
//!
//! One run: convert the (ε, δ) budget to a zCDP budget ρ₀, measure every
//! 1-way marginal under Gaussian noise, then loop — pick the workload
//! marginal whose measurement is expected to help most (exponential
//! mechanism), measure it (Gaussian mechanism), refit the joint estimate,
//! and anneal the per-round noise scales — until ρ₀ is exhausted. Finally
//! sample the synthetic dataset from the fitted joint.
//!
//! Every in-scope domain has at most ~1000 cells, so the joint estimate is a
//! dense vector and the fit is entropic mirror descent on the full domain;
//! no graphical-model factorization is needed at this scale.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::privacy::{
    eps_delta_to_rho, exponential_mechanism, gaussian_mechanism, Accountant, EpsDelta, Sensitivity,
};
use crate::rng::{self, stream};
use crate::tabular::{
    allocate_dataset, compute_marginal, marginal_cell_map, marginal_of_joint, sample_dataset,
    Dataset, JointDistribution, Marginal, MarginalSpec, Schema,
};

/// A set of target marginals with selection weights.
///
/// The weight of entry `j` is `w_j = Σ_i |spec_j ∩ spec_i|` over the whole
/// workload (attribute-set intersection cardinality), so marginals that
/// overlap many others — and higher-order marginals — weigh more in
/// selection scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    entries: Vec<(MarginalSpec, f64)>,
}

impl Workload {
    pub fn from_specs(schema: &Schema, specs: Vec<MarginalSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument("workload must be non-empty".into()));
        }
        for s in &specs {
            s.validate(schema)?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &specs {
            if !seen.insert(s.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate workload entry {:?}", s.attrs())));
            }
        }
        let entries = specs
            .iter()
            .map(|s| {
                let w: usize = specs.iter().map(|o| s.intersection_size(o)).sum();
                (s.clone(), w as f64)
            })
            .collect();
        Ok(Workload { entries })
    }

    /// All size-`k` attribute subsets.
    pub fn all_k_way(schema: &Schema, k: usize) -> Result<Self> {
        let d = schema.len();
        if k == 0 || k > d {
            return Err(Error::InvalidArgument(format!("{k}-way workload on {d} attributes")));
        }
        let specs = crate::tabular::k_subsets(d, k)
            .into_iter()
            .map(MarginalSpec::new)
            .collect::<Result<Vec<_>>>()?;
        Workload::from_specs(schema, specs)
    }

    pub fn entries(&self) -> &[(MarginalSpec, f64)] {
        &self.entries
    }

    pub fn max_weight(&self) -> f64 {
        self.entries.iter().map(|(_, w)| *w).fold(0.0, f64::max)
    }
}

/// One noisy marginal measurement, at data scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub spec: MarginalSpec,
    pub noisy: Marginal,
    pub sigma: f64,
    pub round: usize,
}

/// How the final joint estimate is materialized into rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SynthSample {
    /// Largest-remainder rounding of expected cell counts: marginals of the
    /// output match the fitted joint to within rounding. This mirrors how
    /// marginal-based synthesizers are deployed, and result-table utility
    /// numbers assume it.
    #[default]
    LargestRemainder,
    /// Independent draws from the joint; adds multinomial noise of order
    /// `sqrt(cells/n)` to every measured marginal.
    Iid,
}

/// Tunables. The defaults implement a conservative start: the 1-way round
/// consumes 10% of ρ₀, and ξ₀ is sized as if the remaining 90% were split
/// over `2 · t_max` planned half-rounds, leaving annealing to grow the
/// per-round spend when rounds stop being informative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AimParams {
    /// Planned round count used only to size the initial ξ₀.
    pub t_max: usize,
    /// Hard cap on rounds (safety net; the budget normally ends the loop).
    pub max_rounds: usize,
    /// Mirror-descent iteration cap per fit.
    pub fit_iters: usize,
    /// Initial mirror-descent step scale.
    pub fit_step: f64,
    /// Relative objective-change stopping tolerance for the fit.
    pub fit_tol: f64,
    /// Final sampling scheme.
    pub sample: SynthSample,
}

impl Default for AimParams {
    fn default() -> Self {
        AimParams {
            t_max: 16,
            max_rounds: 1000,
            fit_iters: 1000,
            fit_step: 1.0,
            fit_tol: 1e-9,
            sample: SynthSample::default(),
        }
    }
}

/// Synthesizer state after initialization or any completed round.
#[derive(Debug, Clone)]
pub struct AimState {
    pub sigma_t: f64,
    pub xi_t: f64,
    pub measurements: Vec<Measurement>,
    pub joint: JointDistribution,
    pub accountant: Accountant,
    pub rounds_completed: usize,
    total_weight: f64,
}

impl AimState {
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }
}

/// zCDP price of one adaptive round: selection at ξ plus one Gaussian
/// measurement at σ.
pub fn round_cost(xi: f64, sigma: f64) -> f64 {
    xi * xi / 8.0 + 1.0 / (2.0 * sigma * sigma)
}

/// Budget conversion, noisy 1-way measurements, and the initial joint fit.
pub fn init_aim(
    d: &Dataset,
    workload: &Workload,
    budget: EpsDelta,
    params: &AimParams,
    seed: u64,
) -> Result<AimState> {
    if workload.entries().is_empty() {
        return Err(Error::InvalidArgument("workload must be non-empty".into()));
    }
    for (spec, _) in workload.entries() {
        spec.validate(d.schema())?;
    }
    let rho0 = eps_delta_to_rho(budget)?;
    if rho0.0 <= 0.0 {
        return Err(Error::BudgetExhausted { requested: 0.0, remaining: 0.0 });
    }
    let n_attrs = d.schema().len() as f64;
    let sigma0 = (n_attrs / (0.2 * rho0.0)).sqrt();
    let xi0 = (8.0 * (0.9 * rho0.0) / (2.0 * params.t_max as f64)).sqrt();

    let mut accountant = Accountant::new(rho0);
    accountant.spend(n_attrs / (2.0 * sigma0 * sigma0))?;

    let total_weight = d.total_weight();
    let mut measurements = Vec::with_capacity(d.schema().len());
    for a in 0..d.schema().len() {
        let spec = MarginalSpec::new(vec![a])?;
        let exact = compute_marginal(d, &spec)?;
        let mut mech_rng = rng::derive_rng(seed, &[stream::AIM_INIT, a as u64]);
        let noisy = gaussian_mechanism(&exact.counts, sigma0, &mut mech_rng)?;
        measurements.push(Measurement { spec: spec.clone(), noisy: Marginal { spec, counts: noisy }, sigma: sigma0, round: 0 });
    }
    let joint = fit_joint(d.schema(), &measurements, total_weight, params.fit_iters, params.fit_step, params.fit_tol)?;
    Ok(AimState {
        sigma_t: sigma0,
        xi_t: xi0,
        measurements,
        joint,
        accountant,
        rounds_completed: 0,
        total_weight,
    })
}

/// Selection utility of every workload entry:
/// `u_j = w_j · (‖μ_j − μ_{j,p̂}‖₁ − sqrt(2/π)·σ_t·n_j)`
/// with the model marginal scaled up to the data's total weight and `n_j`
/// the marginal's cell count. One individual moves any `‖·‖₁` residual by at
/// most 1, so the score sensitivity is `max_j w_j`.
pub fn selection_scores(state: &AimState, d: &Dataset, workload: &Workload) -> Result<Vec<f64>> {
    if d.schema() != state.joint.schema() {
        return Err(Error::SchemaMismatch("dataset and fitted joint disagree".into()));
    }
    let w_total = d.total_weight();
    let expected_noise = (2.0 / std::f64::consts::PI).sqrt() * state.sigma_t;
    workload
        .entries()
        .iter()
        .map(|(spec, w)| {
            let data_m = compute_marginal(d, spec)?;
            let model_m = marginal_of_joint(&state.joint, spec)?;
            let l1: f64 = data_m
                .counts
                .iter()
                .zip(&model_m.counts)
                .map(|(a, b)| (a - b * w_total).abs())
                .sum();
            Ok(w * (l1 - expected_noise * spec.n_cells(d.schema()) as f64))
        })
        .collect()
}

/// Pick the next marginal to measure via the exponential mechanism at
/// privacy loss ξ_t. The full-joint representation keeps every workload
/// entry admissible; no tractability filtering is needed.
pub fn select_marginal(
    state: &AimState,
    d: &Dataset,
    workload: &Workload,
    mech_rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<MarginalSpec> {
    let scores = selection_scores(state, d, workload)?;
    if scores.is_empty() {
        return Err(Error::Internal("empty candidate set".into()));
    }
    let sens = Sensitivity::l1(workload.max_weight())?;
    let idx = exponential_mechanism(&scores, sens, state.xi_t, mech_rng)?;
    Ok(workload.entries()[idx].0.clone())
}

/// Fit the joint estimate to all measurements by entropic mirror descent on
/// the dense domain, minimizing `Σ_i ‖μ_i(p) − μ̂_i‖² / σ_i` with `p` held at
/// the data's total weight. The step is halved whenever a trial increases
/// the objective, so the objective is non-increasing across iterations;
/// iteration stops after `iters` rounds or when the relative objective
/// change drops below `tol`.
pub fn fit_joint(
    schema: &Arc<Schema>,
    measurements: &[Measurement],
    total_weight: f64,
    iters: usize,
    step_scale: f64,
    tol: f64,
) -> Result<JointDistribution> {
    fit_joint_traced(schema, measurements, total_weight, iters, step_scale, tol, |_| {})
}

/// [`fit_joint`] with a callback invoked with the objective value after
/// every accepted iteration (diagnostics and tests).
pub fn fit_joint_traced(
    schema: &Arc<Schema>,
    measurements: &[Measurement],
    total_weight: f64,
    iters: usize,
    step_scale: f64,
    tol: f64,
    mut on_iteration: impl FnMut(f64),
) -> Result<JointDistribution> {
    if measurements.is_empty() {
        return Err(Error::InvalidArgument("fit requires at least one measurement".into()));
    }
    if !(total_weight > 0.0) {
        return Err(Error::InvalidArgument("total weight must be positive".into()));
    }
    for m in measurements {
        m.spec.validate(schema)?;
        if m.noisy.counts.len() != m.spec.n_cells(schema) {
            return Err(Error::DimensionMismatch("measurement length disagrees with spec".into()));
        }
        if !(m.sigma > 0.0) {
            return Err(Error::InvalidArgument("measurement sigma must be positive".into()));
        }
    }
    let n = schema.domain_size();
    let maps: Vec<Vec<u32>> = measurements.iter().map(|m| marginal_cell_map(schema, &m.spec)).collect();

    let eval = |p: &[f64], resids: &mut Vec<Vec<f64>>| -> f64 {
        let mut obj = 0.0;
        for (k, m) in measurements.iter().enumerate() {
            let r = &mut resids[k];
            r.clear();
            r.resize(m.noisy.counts.len(), 0.0);
            for (cell, &mc) in maps[k].iter().enumerate() {
                r[mc as usize] += p[cell];
            }
            for (ri, &target) in r.iter_mut().zip(&m.noisy.counts) {
                *ri -= target;
                obj += *ri * *ri / m.sigma;
            }
        }
        obj
    };

    // Two flavors of backtracked multiplicative update, run in sequence.
    //
    // Phase 1 is the plain simplex step `p ← p·exp(−η(g − ⟨g⟩_p))`
    // (renormalized): its iterates stay inside the exponential family
    // spanned by the measurement indicators, so among degenerate minimizers
    // it homes in on the maximum-entropy one — that is what makes two
    // consistent 1-way measurements fit to their product distribution.
    //
    // Phase 2 is the same update with the exponent preconditioned by 1/p,
    // `p ← p·exp(−η·g/p)`. The objective's Hessian is the constant diagonal
    // 2·Σ_k 1/σ_k (each measurement map touches every cell exactly once), so
    // at the Newton scale this moves interior cells like a Newton step and
    // drains boundary cells by a constant factor per iteration — the plain
    // step slows to a crawl on both once cell masses span decades. Every
    // minimizer is a fixed point of phase 2, so it polishes the phase-1
    // iterate without drifting along a degenerate minimizer manifold.
    let hessian_diag: f64 = measurements.iter().map(|m| 2.0 / m.sigma).sum();
    const EXP_CAP: f64 = 30.0;

    let mut p = vec![total_weight / n as f64; n];
    let mut resids: Vec<Vec<f64>> = measurements.iter().map(|_| Vec::new()).collect();
    let mut trial_resids = resids.clone();
    let mut obj = eval(&p, &mut resids);
    let mut best_p = p.clone();
    let mut best_obj = obj;
    let mut grad = vec![0.0f64; n];
    let mut trial = vec![0.0f64; n];
    let mass_floor = total_weight * 1e-100;

    for phase in 0..2 {
        let phase_iters = if phase == 0 { iters / 2 } else { iters - iters / 2 };
        let mut last_accepted = if phase == 0 {
            step_scale / (hessian_diag * (total_weight / n as f64))
        } else {
            step_scale / hessian_diag
        };
        let mut done = false;
        for _ in 0..phase_iters {
            if obj <= 1e-300 {
                done = true;
                break;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (k, m) in measurements.iter().enumerate() {
                let scale = 2.0 / m.sigma;
                for (cell, &mc) in maps[k].iter().enumerate() {
                    grad[cell] += scale * resids[k][mc as usize];
                }
            }
            let gbar: f64 = grad.iter().zip(&p).map(|(g, p)| g * p).sum::<f64>() / total_weight;

            let mut step = 8.0 * last_accepted;
            let mut accepted = false;
            for _ in 0..120 {
                let mut mass = 0.0;
                for j in 0..n {
                    let raw = if phase == 0 {
                        -step * (grad[j] - gbar)
                    } else {
                        -step * grad[j] / p[j].max(mass_floor)
                    };
                    trial[j] = (p[j] * raw.clamp(-EXP_CAP, EXP_CAP).exp()).max(mass_floor);
                    mass += trial[j];
                }
                if mass > 0.0 && mass.is_finite() {
                    let rescale = total_weight / mass;
                    trial.iter_mut().for_each(|v| *v *= rescale);
                    let new_obj = eval(&trial, &mut trial_resids);
                    if new_obj <= obj {
                        std::mem::swap(&mut p, &mut trial);
                        std::mem::swap(&mut resids, &mut trial_resids);
                        let rel = (obj - new_obj) / obj.max(1e-300);
                        obj = new_obj;
                        if obj < best_obj {
                            best_obj = obj;
                            best_p.copy_from_slice(&p);
                        }
                        accepted = true;
                        last_accepted = step;
                        on_iteration(obj);
                        if rel < tol {
                            done = true;
                        }
                        break;
                    }
                }
                step *= 0.5;
                if step <= f64::MIN_POSITIVE {
                    done = true;
                    break;
                }
            }
            if done || !accepted {
                break;
            }
        }
        if done && phase == 1 {
            break;
        }
    }
    JointDistribution::from_masses(schema.clone(), best_p)
}

/// Noise/selection annealing after one round. If the newly fitted joint
/// moved the measured marginal by no more than the expected noise magnitude
/// `sqrt(2/π)·σ_t·n_cells` — the round gained little — the next round doubles
/// ξ and halves σ; otherwise the scales stay put.
pub fn anneal(
    state: &AimState,
    prev_joint: &JointDistribution,
    new_measurement: &Measurement,
) -> Result<(f64, f64)> {
    let spec = &new_measurement.spec;
    let before = marginal_of_joint(prev_joint, spec)?;
    let after = marginal_of_joint(&state.joint, spec)?;
    let gain: f64 = before
        .counts
        .iter()
        .zip(&after.counts)
        .map(|(a, b)| ((a - b) * state.total_weight).abs())
        .sum();
    let threshold =
        (2.0 / std::f64::consts::PI).sqrt() * new_measurement.sigma * spec.n_cells(prev_joint.schema()) as f64;
    if gain <= threshold {
        Ok((state.sigma_t / 2.0, state.xi_t * 2.0))
    } else {
        Ok((state.sigma_t, state.xi_t))
    }
}

/// Run the full synthesizer and sample `n_out` rows from the final joint.
pub fn run_aim(
    d: &Dataset,
    workload: &Workload,
    budget: EpsDelta,
    n_out: usize,
    params: &AimParams,
    seed: u64,
) -> Result<Dataset> {
    run_aim_with_state(d, workload, budget, n_out, params, seed).map(|(ds, _)| ds)
}

/// As [`run_aim`], also returning the final state for diagnostics.
pub fn run_aim_with_state(
    d: &Dataset,
    workload: &Workload,
    budget: EpsDelta,
    n_out: usize,
    params: &AimParams,
    seed: u64,
) -> Result<(Dataset, AimState)> {
    if n_out == 0 {
        return Err(Error::InvalidArgument("n_out must be positive".into()));
    }
    let mut state = init_aim(d, workload, budget, params, seed)?;
    let rho0 = state.accountant.budget().0;

    for round in 1..=params.max_rounds {
        let remaining = rho0 - state.accountant.spent();
        if remaining <= 1e-15 * rho0 {
            break;
        }
        let mut sigma = state.sigma_t;
        let mut xi = state.xi_t;
        let mut last_round = false;
        let cost = round_cost(xi, sigma);
        if cost > remaining {
            // Rescale both mechanisms by a common factor so this final round
            // exactly exhausts the remaining budget.
            let scale = (remaining / cost).sqrt();
            xi *= scale;
            sigma /= scale;
            last_round = true;
        }
        state.accountant.spend(round_cost(xi, sigma).min(remaining))?;
        state.sigma_t = sigma;
        state.xi_t = xi;

        let mut select_rng = rng::derive_rng(seed, &[stream::AIM_SELECT, round as u64]);
        let spec = select_marginal(&state, d, workload, &mut select_rng)?;
        let exact = compute_marginal(d, &spec)?;
        let mut measure_rng = rng::derive_rng(seed, &[stream::AIM_MEASURE, round as u64]);
        let noisy_counts = gaussian_mechanism(&exact.counts, sigma, &mut measure_rng)?;
        let measurement = Measurement {
            spec: spec.clone(),
            noisy: Marginal { spec, counts: noisy_counts },
            sigma,
            round,
        };
        state.measurements.push(measurement.clone());

        let prev_joint = state.joint.clone();
        state.joint = fit_joint(
            d.schema(),
            &state.measurements,
            state.total_weight,
            params.fit_iters,
            params.fit_step,
            params.fit_tol,
        )?;
        state.rounds_completed = round;

        if last_round {
            break;
        }
        let (sigma_next, xi_next) = anneal(&state, &prev_joint, &measurement)?;
        state.sigma_t = sigma_next;
        state.xi_t = xi_next;
    }

    let sample_seed = rng::derive_u64(seed, &[stream::AIM_SAMPLE]);
    let synthetic = match params.sample {
        SynthSample::LargestRemainder => allocate_dataset(&state.joint, n_out, sample_seed)?,
        SynthSample::Iid => sample_dataset(&state.joint, n_out, sample_seed)?,
    };
    Ok((synthetic, state))
}
