//! Dense primal-dual interior-point linear programming.
//!
//! The fairness transform reduces to a linear program with a few thousand
//! rows, structured sparse constraints, and box-bounded variables. This
//! module solves exactly that class:
//!
//! ```text
//!   minimize    cᵀx
//!   subject to  A_eq x  = b_eq
//!               A_in x ≤ b_in
//!               lo ≤ x ≤ hi        (entries may be ±∞)
//! ```
//!
//! Method: infeasible-start Mehrotra predictor-corrector on the slack form
//! `A z = b, l ≤ z ≤ u`, with Ruiz row/column equilibration, sparse
//! normal-equations assembly, and dense Cholesky factorization. If the main
//! solve fails to converge, a phase-1 feasibility program (minimize total
//! constraint violation) classifies the instance as infeasible or merely
//! hard; an instance is declared infeasible only when the phase-1 optimum is
//! bounded away from zero.
//!
//! Tolerances: `solve_lp` targets `tol` (callers default to 1e-8) on scaled
//! primal/dual residuals and duality gap. On iteration limit the best
//! iterate is accepted as optimal if it meets the relaxed 1e-6 ladder,
//! otherwise the caller sees `IterationLimit`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Row-oriented sparse matrix; rows hold sorted `(column, value)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseMat {
    n_cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMat {
    pub fn new(n_cols: usize) -> Self {
        SparseMat { n_cols, rows: Vec::new() }
    }

    pub fn push_row(&mut self, mut entries: Vec<(usize, f64)>) {
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_unstable_by_key(|&(j, _)| j);
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0), "duplicate column in row");
        debug_assert!(entries.iter().all(|&(j, _)| j < self.n_cols));
        self.rows.push(entries);
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(j, v)| v * x[j]).sum()
    }

    fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            out[i] = row.iter().map(|&(j, v)| v * x[j]).sum();
        }
    }

    /// `out += Aᵀ y`
    fn tr_mul_vec_add(&self, y: &[f64], out: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            let yi = y[i];
            if yi != 0.0 {
                for &(j, v) in row {
                    out[j] += v * yi;
                }
            }
        }
    }

    fn to_cols(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.n_cols];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                cols[j].push((i, v));
            }
        }
        cols
    }
}

/// A general-form linear program (see module docs).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub a_eq: SparseMat,
    pub b_eq: Vec<f64>,
    pub a_in: SparseMat,
    pub b_in: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LinearProgram {
    /// A program over `n` variables with no constraints and free bounds.
    pub fn new(n: usize) -> Self {
        LinearProgram {
            c: vec![0.0; n],
            a_eq: SparseMat::new(n),
            b_eq: Vec::new(),
            a_in: SparseMat::new(n),
            b_in: Vec::new(),
            lo: vec![f64::NEG_INFINITY; n],
            hi: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.a_eq.n_cols() != n || self.a_in.n_cols() != n || self.lo.len() != n || self.hi.len() != n {
            return Err(Error::DimensionMismatch("LP variable counts disagree".into()));
        }
        if self.a_eq.n_rows() != self.b_eq.len() || self.a_in.n_rows() != self.b_in.len() {
            return Err(Error::DimensionMismatch("LP row counts disagree with right-hand sides".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.c) || !finite(&self.b_eq) || !finite(&self.b_in) {
            return Err(Error::InvalidArgument("LP coefficients must be finite".into()));
        }
        for rows in [self.a_eq.rows(), self.a_in.rows()] {
            for row in rows {
                if row.iter().any(|&(_, v)| !v.is_finite()) {
                    return Err(Error::InvalidArgument("LP coefficients must be finite".into()));
                }
            }
        }
        for j in 0..n {
            if self.lo[j].is_nan() || self.hi[j].is_nan() {
                return Err(Error::InvalidArgument("LP bounds must not be NaN".into()));
            }
        }
        Ok(())
    }

    /// Plain-text dump for cross-checking against external solvers:
    /// one `min` line, then one constraint or bound per line.
    pub fn dump_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let term = |j: usize, v: f64| format!("{v:+.12e} x{j}");
        let mut obj = String::from("min:");
        for (j, &v) in self.c.iter().enumerate() {
            if v != 0.0 {
                let _ = write!(obj, " {}", term(j, v));
            }
        }
        s.push_str(&obj);
        s.push('\n');
        for (row, b) in self.a_eq.rows().iter().zip(&self.b_eq) {
            let body: Vec<String> = row.iter().map(|&(j, v)| term(j, v)).collect();
            let _ = writeln!(s, "eq: {} = {b:+.12e}", body.join(" "));
        }
        for (row, b) in self.a_in.rows().iter().zip(&self.b_in) {
            let body: Vec<String> = row.iter().map(|&(j, v)| term(j, v)).collect();
            let _ = writeln!(s, "le: {} <= {b:+.12e}", body.join(" "));
        }
        for j in 0..self.n_vars() {
            if self.lo[j].is_finite() || self.hi[j].is_finite() {
                let _ = writeln!(s, "bound: {:+.12e} <= x{j} <= {:+.12e}", self.lo[j], self.hi[j]);
            }
        }
        s
    }
}

/// Solver verdict for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: LpStatus,
    pub iterations: usize,
}

/// Worst violation of each constraint class at a candidate point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    pub max_eq_violation: f64,
    pub max_ineq_violation: f64,
    pub max_bound_violation: f64,
}

impl FeasibilityReport {
    pub fn max_violation(&self) -> f64 {
        self.max_eq_violation.max(self.max_ineq_violation).max(self.max_bound_violation)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}

/// Measure constraint violations of `x` against `lp` (unscaled data).
pub fn check_feasibility(lp: &LinearProgram, x: &[f64]) -> Result<FeasibilityReport> {
    lp.validate()?;
    if x.len() != lp.n_vars() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} entries, LP has {} variables",
            x.len(),
            lp.n_vars()
        )));
    }
    let mut eq = 0.0f64;
    for (i, b) in lp.b_eq.iter().enumerate() {
        eq = eq.max((lp.a_eq.row_dot(i, x) - b).abs());
    }
    let mut ineq = 0.0f64;
    for (i, b) in lp.b_in.iter().enumerate() {
        ineq = ineq.max((lp.a_in.row_dot(i, x) - b).max(0.0));
    }
    let mut bounds = 0.0f64;
    for j in 0..lp.n_vars() {
        bounds = bounds.max(lp.lo[j] - x[j]).max(x[j] - lp.hi[j]);
    }
    Ok(FeasibilityReport {
        max_eq_violation: eq,
        max_ineq_violation: ineq,
        max_bound_violation: bounds.max(0.0),
    })
}

// ---------------------------------------------------------------------------
// internal solver
// ---------------------------------------------------------------------------

/// Slack standard form `min cᵀz : Az = b, lo ≤ z ≤ hi`.
struct StdLp {
    a: SparseMat,
    b: Vec<f64>,
    c: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

struct IpmState {
    z: Vec<f64>,
    rel_p: f64,
    rel_d: f64,
    rel_gap: f64,
    pobj: f64,
    iterations: usize,
}

enum IpmOutcome {
    Converged(IpmState),
    Limit(IpmState),
}

fn max_step(v: &[f64], dv: &[f64], active: &[bool]) -> f64 {
    let mut alpha = 1.0f64;
    for j in 0..v.len() {
        if active[j] && dv[j] < 0.0 {
            alpha = alpha.min(-v[j] / dv[j]);
        }
    }
    alpha
}

/// Core Mehrotra predictor-corrector iteration on a standard-form LP.
///
/// `stop_below_obj` is the phase-1 early exit: once the objective (total
/// constraint violation) falls below it with a primal-feasible iterate, the
/// system is known feasible and polishing the duals is pointless.
fn ipm_solve(lp: &StdLp, tol: f64, max_iter: usize, stop_below_obj: Option<f64>) -> Result<IpmOutcome> {
    let m = lp.a.n_rows();
    let n = lp.c.len();
    let cols = lp.a.to_cols();
    let has_lo: Vec<bool> = lp.lo.iter().map(|l| l.is_finite()).collect();
    let has_hi: Vec<bool> = lp.hi.iter().map(|h| h.is_finite()).collect();
    let kappa: usize = has_lo.iter().filter(|&&b| b).count() + has_hi.iter().filter(|&&b| b).count();
    if kappa == 0 {
        return Err(Error::Unsupported("LP with no finite bounds".into()));
    }

    // interior starting point
    let mut z = vec![0.0f64; n];
    for j in 0..n {
        z[j] = match (has_lo[j], has_hi[j]) {
            (true, true) => 0.5 * (lp.lo[j] + lp.hi[j]),
            (true, false) => lp.lo[j] + 1.0,
            (false, true) => lp.hi[j] - 1.0,
            (false, false) => 0.0,
        };
    }
    let cinf = lp.c.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let mut zl: Vec<f64> = (0..n).map(|j| if has_lo[j] { 1.0 + cinf } else { 0.0 }).collect();
    let mut zu: Vec<f64> = (0..n).map(|j| if has_hi[j] { 1.0 + cinf } else { 0.0 }).collect();
    let mut y = vec![0.0f64; m];

    let binf = lp.b.iter().fold(0.0f64, |a, &v| a.max(v.abs()));

    let mut best: Option<IpmState> = None;
    let mut best_score = f64::INFINITY;
    let mut stall_count = 0usize;

    let mut m_mat = DMatrix::<f64>::zeros(m, m);
    for iter in 0..max_iter {
        // bound distances
        let mut g = vec![0.0f64; n];
        let mut t = vec![0.0f64; n];
        for j in 0..n {
            if has_lo[j] {
                g[j] = (z[j] - lp.lo[j]).max(1e-300);
            }
            if has_hi[j] {
                t[j] = (lp.hi[j] - z[j]).max(1e-300);
            }
        }
        let mut mu = 0.0f64;
        for j in 0..n {
            if has_lo[j] {
                mu += g[j] * zl[j];
            }
            if has_hi[j] {
                mu += t[j] * zu[j];
            }
        }
        mu /= kappa as f64;

        // residuals
        let mut az = vec![0.0f64; m];
        lp.a.mul_vec(&z, &mut az);
        let r_p: Vec<f64> = (0..m).map(|i| lp.b[i] - az[i]).collect();
        let mut aty = vec![0.0f64; n];
        lp.a.tr_mul_vec_add(&y, &mut aty);
        let r_d: Vec<f64> = (0..n).map(|j| lp.c[j] - aty[j] - zl[j] + zu[j]).collect();

        let pobj: f64 = lp.c.iter().zip(&z).map(|(c, z)| c * z).sum();
        let mut dobj: f64 = lp.b.iter().zip(&y).map(|(b, y)| b * y).sum();
        for j in 0..n {
            if has_lo[j] {
                dobj += lp.lo[j] * zl[j];
            }
            if has_hi[j] {
                dobj -= lp.hi[j] * zu[j];
            }
        }
        let rel_p = r_p.iter().fold(0.0f64, |a, &v| a.max(v.abs())) / (1.0 + binf);
        let rel_d = r_d.iter().fold(0.0f64, |a, &v| a.max(v.abs())) / (1.0 + cinf);
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs());

        let score = rel_p.max(rel_d).max(rel_gap);
        if score < 0.9 * best_score {
            stall_count = 0;
        } else {
            stall_count += 1;
        }
        if score < best_score {
            best_score = score;
            best = Some(IpmState { z: z.clone(), rel_p, rel_d, rel_gap, pobj, iterations: iter });
        }

        if rel_p <= tol && rel_d <= tol && rel_gap <= tol {
            return Ok(IpmOutcome::Converged(IpmState { z, rel_p, rel_d, rel_gap, pobj, iterations: iter }));
        }
        if let Some(thresh) = stop_below_obj {
            if pobj <= thresh && rel_p <= tol {
                return Ok(IpmOutcome::Converged(IpmState { z, rel_p, rel_d, rel_gap, pobj, iterations: iter }));
            }
        }
        // divergence or stall: hand the best iterate back for classification
        let blown = zl.iter().chain(zu.iter()).any(|&v| v > 1e14) || mu > 1e16;
        if blown || stall_count > 40 {
            return Ok(IpmOutcome::Limit(best.expect("at least one iterate")));
        }

        // scaling matrix D = 1 / (zl/g + zu/t + reg)
        let reg_d = 1e-10 + 1e-8 * mu.min(1.0);
        let mut d = vec![0.0f64; n];
        for j in 0..n {
            let mut di = reg_d;
            if has_lo[j] {
                di += zl[j] / g[j];
            }
            if has_hi[j] {
                di += zu[j] / t[j];
            }
            d[j] = 1.0 / di;
        }

        // normal equations matrix M = A D Aᵀ + reg_p I (lower triangle, then mirror)
        let reg_p = 1e-12 + 1e-10 * mu.min(1.0);
        m_mat.fill(0.0);
        for (j, col) in cols.iter().enumerate() {
            let dj = d[j];
            if dj == 0.0 || col.is_empty() {
                continue;
            }
            for (p, &(i1, v1)) in col.iter().enumerate() {
                let w = dj * v1;
                for &(i2, v2) in &col[p..] {
                    m_mat[(i2, i1)] += w * v2;
                }
            }
        }
        for i in 0..m {
            for k in (i + 1)..m {
                m_mat[(i, k)] = m_mat[(k, i)];
            }
            m_mat[(i, i)] += reg_p;
        }

        let mut chol: Option<Cholesky<f64, Dyn>> = None;
        let mut bump = reg_p.max(1e-12);
        for _ in 0..6 {
            chol = Cholesky::new(m_mat.clone());
            if chol.is_some() {
                break;
            }
            bump *= 100.0;
            for i in 0..m {
                m_mat[(i, i)] += bump;
            }
        }
        let chol = chol.ok_or_else(|| Error::Internal("normal equations not positive definite".into()))?;

        // One Newton solve for a given complementarity target.
        let solve_with = |rc_l: &[f64], rc_u: &[f64], chol: &Cholesky<f64, Dyn>| {
            let mut rhs_z = vec![0.0f64; n];
            for j in 0..n {
                let mut v = -r_d[j];
                if has_lo[j] {
                    v += rc_l[j] / g[j];
                }
                if has_hi[j] {
                    v -= rc_u[j] / t[j];
                }
                rhs_z[j] = v;
            }
            let dz_tmp: Vec<f64> = (0..n).map(|j| d[j] * rhs_z[j]).collect();
            let mut adz = vec![0.0f64; m];
            lp.a.mul_vec(&dz_tmp, &mut adz);
            let mut rhs_y = DVector::<f64>::zeros(m);
            for i in 0..m {
                rhs_y[i] = r_p[i] - adz[i];
            }
            let dy = chol.solve(&rhs_y);
            let mut atdy = vec![0.0f64; n];
            lp.a.tr_mul_vec_add(dy.as_slice(), &mut atdy);
            let dz: Vec<f64> = (0..n).map(|j| d[j] * (atdy[j] + rhs_z[j])).collect();
            let mut dzl = vec![0.0f64; n];
            let mut dzu = vec![0.0f64; n];
            for j in 0..n {
                if has_lo[j] {
                    dzl[j] = (rc_l[j] - zl[j] * dz[j]) / g[j];
                }
                if has_hi[j] {
                    dzu[j] = (rc_u[j] + zu[j] * dz[j]) / t[j];
                }
            }
            let dy_vec: Vec<f64> = dy.iter().cloned().collect();
            (dz, dy_vec, dzl, dzu)
        };

        // predictor (affine scaling) step
        let rc_l_aff: Vec<f64> = (0..n).map(|j| if has_lo[j] { -g[j] * zl[j] } else { 0.0 }).collect();
        let rc_u_aff: Vec<f64> = (0..n).map(|j| if has_hi[j] { -t[j] * zu[j] } else { 0.0 }).collect();
        let (dz_a, _dy_a, dzl_a, dzu_a) = solve_with(&rc_l_aff, &rc_u_aff, &chol);

        let neg_dz_a: Vec<f64> = dz_a.iter().map(|v| -v).collect();
        let ap_aff = max_step(&g, &dz_a, &has_lo).min(max_step(&t, &neg_dz_a, &has_hi));
        let ad_aff = max_step(&zl, &dzl_a, &has_lo).min(max_step(&zu, &dzu_a, &has_hi));

        let mut mu_aff = 0.0f64;
        for j in 0..n {
            if has_lo[j] {
                mu_aff += (g[j] + ap_aff * dz_a[j]) * (zl[j] + ad_aff * dzl_a[j]);
            }
            if has_hi[j] {
                mu_aff += (t[j] - ap_aff * dz_a[j]) * (zu[j] + ad_aff * dzu_a[j]);
            }
        }
        mu_aff /= kappa as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3).max(1e-8);

        // corrector step
        let rc_l: Vec<f64> = (0..n)
            .map(|j| if has_lo[j] { sigma * mu - g[j] * zl[j] - dz_a[j] * dzl_a[j] } else { 0.0 })
            .collect();
        let rc_u: Vec<f64> = (0..n)
            .map(|j| if has_hi[j] { sigma * mu - t[j] * zu[j] + dz_a[j] * dzu_a[j] } else { 0.0 })
            .collect();
        let (dz, dy, dzl, dzu) = solve_with(&rc_l, &rc_u, &chol);

        let tau = 0.995f64;
        let neg_dz: Vec<f64> = dz.iter().map(|v| -v).collect();
        let ap = (tau * max_step(&g, &dz, &has_lo).min(max_step(&t, &neg_dz, &has_hi))).min(1.0);
        let ad = (tau * max_step(&zl, &dzl, &has_lo).min(max_step(&zu, &dzu, &has_hi))).min(1.0);

        for j in 0..n {
            z[j] += ap * dz[j];
        }
        for i in 0..m {
            y[i] += ad * dy[i];
        }
        for j in 0..n {
            if has_lo[j] {
                zl[j] = (zl[j] + ad * dzl[j]).max(1e-300);
            }
            if has_hi[j] {
                zu[j] = (zu[j] + ad * dzu[j]).max(1e-300);
            }
        }
    }
    Ok(IpmOutcome::Limit(best.expect("max_iter > 0")))
}

/// Equilibrated standard-form problem plus the maps back to user variables.
struct Scaled {
    std: StdLp,
    col_scale: Vec<f64>,
    n_user: usize,
}

fn build_scaled(lp: &LinearProgram, keep: &[usize], fixed_rhs_eq: &[f64], fixed_rhs_in: &[f64]) -> Scaled {
    let n_user = keep.len();
    let m_in = lp.a_in.n_rows();
    let n = n_user + m_in;

    // renumber kept variables
    let mut col_of = vec![usize::MAX; lp.n_vars()];
    for (new, &old) in keep.iter().enumerate() {
        col_of[old] = new;
    }

    let mut a = SparseMat::new(n);
    let mut b = Vec::with_capacity(lp.a_eq.n_rows() + m_in);
    for (i, row) in lp.a_eq.rows().iter().enumerate() {
        let entries: Vec<(usize, f64)> =
            row.iter().filter(|&&(j, _)| col_of[j] != usize::MAX).map(|&(j, v)| (col_of[j], v)).collect();
        a.push_row(entries);
        b.push(lp.b_eq[i] - fixed_rhs_eq[i]);
    }
    for (i, row) in lp.a_in.rows().iter().enumerate() {
        let mut entries: Vec<(usize, f64)> =
            row.iter().filter(|&&(j, _)| col_of[j] != usize::MAX).map(|&(j, v)| (col_of[j], v)).collect();
        entries.push((n_user + i, 1.0));
        a.push_row(entries);
        b.push(lp.b_in[i] - fixed_rhs_in[i]);
    }

    let mut c = vec![0.0f64; n];
    let mut lo = vec![0.0f64; n];
    let mut hi = vec![f64::INFINITY; n];
    for (new, &old) in keep.iter().enumerate() {
        c[new] = lp.c[old];
        lo[new] = lp.lo[old];
        hi[new] = lp.hi[old];
    }

    // Ruiz equilibration (3 passes of row and column sqrt-max scaling)
    let m = a.n_rows();
    let mut row_scale = vec![1.0f64; m];
    let mut col_scale = vec![1.0f64; n];
    for _ in 0..3 {
        for (i, row) in a.rows().iter().enumerate() {
            let mx =
                row.iter().map(|&(j, v)| (v / (row_scale[i] * col_scale[j])).abs()).fold(0.0f64, f64::max);
            if mx > 0.0 {
                row_scale[i] *= mx.sqrt();
            }
        }
        let mut col_max = vec![0.0f64; n];
        for (i, row) in a.rows().iter().enumerate() {
            for &(j, v) in row {
                col_max[j] = col_max[j].max((v / (row_scale[i] * col_scale[j])).abs());
            }
        }
        for j in 0..n {
            if col_max[j] > 0.0 {
                col_scale[j] *= col_max[j].sqrt();
            }
        }
    }
    let mut scaled_a = SparseMat::new(n);
    for (i, row) in a.rows().iter().enumerate() {
        scaled_a.push_row(row.iter().map(|&(j, v)| (j, v / (row_scale[i] * col_scale[j]))).collect());
    }
    let b: Vec<f64> = b.iter().zip(&row_scale).map(|(v, r)| v / r).collect();
    let c: Vec<f64> = c.iter().zip(&col_scale).map(|(v, s)| v / s).collect();
    let lo: Vec<f64> = lo.iter().zip(&col_scale).map(|(v, s)| v * s).collect();
    let hi: Vec<f64> = hi.iter().zip(&col_scale).map(|(v, s)| v * s).collect();

    Scaled { std: StdLp { a: scaled_a, b, c, lo, hi }, col_scale, n_user }
}

/// Phase-1 feasibility program: minimize total violation `Σ (u⁺ + u⁻)` of
/// `A z + u⁺ − u⁻ = b` over the same bounds. Always feasible; its optimum is
/// zero iff the original constraints are satisfiable.
fn phase1_of(std: &StdLp) -> StdLp {
    let m = std.a.n_rows();
    let n = std.c.len();
    let mut a = SparseMat::new(n + 2 * m);
    for (i, row) in std.a.rows().iter().enumerate() {
        let mut entries = row.clone();
        entries.push((n + i, 1.0));
        entries.push((n + m + i, -1.0));
        a.push_row(entries);
    }
    let mut c = vec![0.0f64; n + 2 * m];
    for v in c.iter_mut().skip(n) {
        *v = 1.0;
    }
    let mut lo = std.lo.clone();
    let mut hi = std.hi.clone();
    lo.resize(n + 2 * m, 0.0);
    hi.resize(n + 2 * m, f64::INFINITY);
    StdLp { a, b: std.b.clone(), c, lo, hi }
}

/// Solve a linear program. See the module docs for the method and the
/// 1e-8 → 1e-6 relaxation ladder applied on iteration limit.
pub fn solve_lp(lp: &LinearProgram, tol: f64, max_iter: usize) -> Result<LpSolution> {
    lp.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let n = lp.n_vars();
    let infeasible = |iterations: usize| LpSolution {
        x: vec![f64::NAN; n],
        objective: f64::NAN,
        status: LpStatus::Infeasible,
        iterations,
    };

    // presolve: impossible bounds, fixed variables, constant rows
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for j in 0..n {
        if lp.lo[j] > lp.hi[j] + 1e-12 {
            return Ok(infeasible(0));
        }
        if lp.lo[j].is_finite() && lp.hi[j] - lp.lo[j] <= 1e-12 {
            fixed[j] = Some(0.5 * (lp.lo[j] + lp.hi[j]));
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&j| fixed[j].is_none()).collect();
    let fixed_dot =
        |row: &[(usize, f64)]| -> f64 { row.iter().filter_map(|&(j, v)| fixed[j].map(|f| v * f)).sum() };
    let fixed_rhs_eq: Vec<f64> = lp.a_eq.rows().iter().map(|r| fixed_dot(r)).collect();
    let fixed_rhs_in: Vec<f64> = lp.a_in.rows().iter().map(|r| fixed_dot(r)).collect();
    let bscale = 1.0 + lp.b_eq.iter().chain(lp.b_in.iter()).fold(0.0f64, |a, &v| a.max(v.abs()));
    for (i, row) in lp.a_eq.rows().iter().enumerate() {
        let all_fixed = row.iter().all(|&(j, _)| fixed[j].is_some());
        if all_fixed && (lp.b_eq[i] - fixed_rhs_eq[i]).abs() > 1e-9 * bscale {
            return Ok(infeasible(0));
        }
    }
    for (i, row) in lp.a_in.rows().iter().enumerate() {
        let all_fixed = row.iter().all(|&(j, _)| fixed[j].is_some());
        if all_fixed && fixed_rhs_in[i] - lp.b_in[i] > 1e-9 * bscale {
            return Ok(infeasible(0));
        }
    }

    let scaled = build_scaled(lp, &keep, &fixed_rhs_eq, &fixed_rhs_in);
    let extract = |state: &IpmState| -> (Vec<f64>, f64) {
        let mut x = vec![0.0f64; n];
        for j in 0..n {
            if let Some(v) = fixed[j] {
                x[j] = v;
            }
        }
        for (new, &old) in keep.iter().enumerate() {
            x[old] = (state.z[new] / scaled.col_scale[new]).clamp(lp.lo[old], lp.hi[old]);
        }
        let obj = lp.c.iter().zip(&x).map(|(c, x)| c * x).sum();
        (x, obj)
    };
    debug_assert_eq!(scaled.n_user, keep.len());

    match ipm_solve(&scaled.std, tol, max_iter, None)? {
        IpmOutcome::Converged(state) => {
            let (x, objective) = extract(&state);
            Ok(LpSolution { x, objective, status: LpStatus::Optimal, iterations: state.iterations })
        }
        IpmOutcome::Limit(state) => {
            // classify via the feasibility phase on the same scaled system
            let feas_tol = 1e-7 * (1.0 + scaled.std.b.iter().fold(0.0f64, |a, &v| a.max(v.abs())));
            let p1 = phase1_of(&scaled.std);
            let p1_out = ipm_solve(&p1, 1e-8, max_iter.max(100), Some(0.25 * feas_tol))?;
            let (p1_obj, p1_converged) = match &p1_out {
                IpmOutcome::Converged(s) => (s.pobj, true),
                IpmOutcome::Limit(s) => (s.pobj, false),
            };
            if p1_converged && p1_obj > feas_tol {
                return Ok(infeasible(state.iterations));
            }
            // relaxation ladder: accept the best iterate at 1e-6
            let ladder = 1e-6f64.max(tol);
            let (x, objective) = extract(&state);
            if state.rel_p <= ladder && state.rel_d <= ladder && state.rel_gap <= ladder {
                Ok(LpSolution { x, objective, status: LpStatus::Optimal, iterations: state.iterations })
            } else {
                Ok(LpSolution { x, objective, status: LpStatus::IterationLimit, iterations: state.iterations })
            }
        }
    }
}

pub mod oracle {
    //! Exhaustive vertex enumeration: an independent reference optimum for
    //! tiny instances, used by the test suites to cross-check the
    //! interior-point solver. Cost grows combinatorially; keep instances
    //! under ~10 variables.
    use super::*;

    /// Minimize over all vertices: every choice of active constraints
    /// (equalities always active; inequalities and finite bounds optional)
    /// is solved as a square linear system and checked for feasibility.
    pub fn brute_force_lp(lp: &LinearProgram) -> Option<(f64, Vec<f64>)> {
        let n = lp.n_vars();
        let mut cands: Vec<(Vec<f64>, f64)> = Vec::new();
        let densify = |row: &[(usize, f64)]| {
            let mut v = vec![0.0; n];
            for &(j, val) in row {
                v[j] = val;
            }
            v
        };
        for (i, row) in lp.a_in.rows().iter().enumerate() {
            cands.push((densify(row), lp.b_in[i]));
        }
        for j in 0..n {
            if lp.lo[j].is_finite() {
                let mut v = vec![0.0; n];
                v[j] = 1.0;
                cands.push((v, lp.lo[j]));
            }
            if lp.hi[j].is_finite() {
                let mut v = vec![0.0; n];
                v[j] = 1.0;
                cands.push((v, lp.hi[j]));
            }
        }
        let m_eq = lp.a_eq.n_rows();
        let need = n.saturating_sub(m_eq);
        if need > cands.len() {
            return None;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut consider = |x: &[f64]| {
            if x.iter().all(|v| v.is_finite())
                && check_feasibility(lp, x).unwrap().within(1e-7)
            {
                let obj: f64 = lp.c.iter().zip(x).map(|(c, x)| c * x).sum();
                if best.as_ref().map_or(true, |(bo, _)| obj < *bo - 0.0) {
                    best = Some((obj, x.to_vec()));
                }
            }
        };
        let mut combo: Vec<usize> = (0..need).collect();
        loop {
            let mut a = DMatrix::<f64>::zeros(n, n);
            let mut b = DVector::<f64>::zeros(n);
            for (r, row) in lp.a_eq.rows().iter().enumerate() {
                for &(j, v) in row {
                    a[(r, j)] = v;
                }
                b[r] = lp.b_eq[r];
            }
            for (k, &ci) in combo.iter().enumerate() {
                let (ref coef, rhs) = cands[ci];
                for j in 0..n {
                    a[(m_eq + k, j)] = coef[j];
                }
                b[m_eq + k] = rhs;
            }
            if let Some(sol) = a.lu().solve(&b) {
                let x: Vec<f64> = sol.iter().cloned().collect();
                consider(&x);
            }
            if need == 0 {
                break;
            }
            // next lexicographic combination
            let mut i = need;
            let mut done = true;
            while i > 0 {
                i -= 1;
                if combo[i] + (need - i) <= cands.len() - 1 {
                    combo[i] += 1;
                    for k in (i + 1)..need {
                        combo[k] = combo[k - 1] + 1;
                    }
                    done = false;
                    break;
                }
            }
            if done {
                break;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::brute_force_lp;
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    fn solve(lp: &LinearProgram) -> LpSolution {
        solve_lp(lp, 1e-8, 200).unwrap()
    }

    #[test]
    fn one_variable_bound() {
        // minimize x s.t. x >= 3
        let mut lp = LinearProgram::new(1);
        lp.c[0] = 1.0;
        lp.lo[0] = 3.0;
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 3.0).abs() < 1e-6, "x = {}", sol.x[0]);
        assert!((sol.objective - 3.0).abs() < 1e-6);
    }

    #[test]
    fn constant_objective_returns_feasible_point() {
        // minimize 0 over x + y <= 4, x, y in [0, 3]
        let mut lp = LinearProgram::new(2);
        lp.a_in.push_row(vec![(0, 1.0), (1, 1.0)]);
        lp.b_in.push(4.0);
        lp.lo = vec![0.0, 0.0];
        lp.hi = vec![3.0, 3.0];
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        let rep = check_feasibility(&lp, &sol.x).unwrap();
        assert!(rep.within(1e-7), "violation {}", rep.max_violation());
    }

    #[test]
    fn equality_and_inequality_mix() {
        // min -x - 2y  s.t.  x + y = 4, 2x + y <= 6, 0 <= x,y <= 4
        let mut lp = LinearProgram::new(2);
        lp.c = vec![-1.0, -2.0];
        lp.a_eq.push_row(vec![(0, 1.0), (1, 1.0)]);
        lp.b_eq.push(4.0);
        lp.a_in.push_row(vec![(0, 2.0), (1, 1.0)]);
        lp.b_in.push(6.0);
        lp.lo = vec![0.0, 0.0];
        lp.hi = vec![4.0, 4.0];
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 8.0).abs() < 1e-6, "obj {}", sol.objective);
        assert!(sol.x[0].abs() < 1e-6 && (sol.x[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn detects_infeasible_inequalities() {
        // x >= 3 and x <= 1 via rows (bounds stay wide so presolve can't see it)
        let mut lp = LinearProgram::new(1);
        lp.c[0] = 1.0;
        lp.a_in.push_row(vec![(0, -1.0)]);
        lp.b_in.push(-3.0);
        lp.a_in.push_row(vec![(0, 1.0)]);
        lp.b_in.push(1.0);
        lp.lo[0] = -10.0;
        lp.hi[0] = 10.0;
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_infeasible_equalities() {
        // x + y = 1, x + y = 2
        let mut lp = LinearProgram::new(2);
        lp.a_eq.push_row(vec![(0, 1.0), (1, 1.0)]);
        lp.b_eq.push(1.0);
        lp.a_eq.push_row(vec![(0, 1.0), (1, 1.0)]);
        lp.b_eq.push(2.0);
        lp.lo = vec![-5.0, -5.0];
        lp.hi = vec![5.0, 5.0];
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn fixed_variables_are_presolved() {
        // x fixed at 2 by bounds; min y s.t. y >= x
        let mut lp = LinearProgram::new(2);
        lp.c = vec![0.0, 1.0];
        lp.lo = vec![2.0, -10.0];
        lp.hi = vec![2.0, 10.0];
        lp.a_in.push_row(vec![(0, 1.0), (1, -1.0)]);
        lp.b_in.push(0.0);
        let sol = solve(&lp);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 2.0).abs() < 1e-9);
        assert!((sol.x[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn feasibility_report_shows_violation() {
        let mut lp = LinearProgram::new(2);
        lp.a_in.push_row(vec![(0, 1.0), (1, 1.0)]);
        lp.b_in.push(1.0);
        lp.lo = vec![0.0, 0.0];
        lp.hi = vec![1.0, 1.0];
        let rep = check_feasibility(&lp, &[0.9, 0.6]).unwrap();
        assert!((rep.max_ineq_violation - 0.5).abs() < 1e-12);
        assert_eq!(rep.max_eq_violation, 0.0);
        assert_eq!(rep.max_bound_violation, 0.0);
        let rep2 = check_feasibility(&lp, &[0.2, 0.3]).unwrap();
        assert!(rep2.within(1e-9));
    }

    #[test]
    fn dump_text_layout() {
        let mut lp = LinearProgram::new(2);
        lp.c = vec![1.0, 0.0];
        lp.a_eq.push_row(vec![(0, 1.0), (1, -2.0)]);
        lp.b_eq.push(0.5);
        lp.lo = vec![0.0, f64::NEG_INFINITY];
        lp.hi = vec![1.0, f64::INFINITY];
        let dump = lp.dump_text();
        assert!(dump.starts_with("min:"));
        assert!(dump.contains("eq:"));
        assert!(dump.contains("bound:"));
        assert_eq!(dump.lines().count(), 3);
    }

    /// Random bounded-feasible dense LP: a strictly interior point exists by
    /// construction, and the box keeps the optimum finite.
    pub(crate) fn random_lp(seed: u64, n: usize, m_in: usize) -> LinearProgram {
        let mut rng = derive_rng(seed, &[0xD]);
        let mut lp = LinearProgram::new(n);
        for c in lp.c.iter_mut() {
            *c = rng.random::<f64>() * 2.0 - 1.0;
        }
        let x0: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        for _ in 0..m_in {
            let coef: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let slack = 0.1 + rng.random::<f64>();
            let rhs: f64 = coef.iter().zip(&x0).map(|(a, x)| a * x).sum::<f64>() + slack;
            lp.a_in.push_row(coef.iter().cloned().enumerate().collect());
            lp.b_in.push(rhs);
        }
        for j in 0..n {
            lp.lo[j] = -3.0;
            lp.hi[j] = 3.0;
        }
        lp
    }

    #[test]
    fn random_lps_match_vertex_oracle() {
        let mut checked = 0;
        for seed in 0..20u64 {
            let n = 3 + (seed as usize % 5); // 3..=7 variables
            let m = n + 2;
            let lp = random_lp(1000 + seed, n, m);
            let sol = solve(&lp);
            assert_eq!(sol.status, LpStatus::Optimal, "seed {seed}");
            let (oracle_obj, _) = brute_force_lp(&lp).expect("bounded feasible LP has a vertex optimum");
            let denom = 1.0 + oracle_obj.abs();
            assert!(
                (sol.objective - oracle_obj).abs() / denom < 1e-6,
                "seed {seed}: ipm {} vs oracle {}",
                sol.objective,
                oracle_obj
            );
            let rep = check_feasibility(&lp, &sol.x).unwrap();
            assert!(rep.within(1e-7), "seed {seed}: violation {}", rep.max_violation());
            checked += 1;
        }
        assert_eq!(checked, 20);
    }

    #[test]
    fn solver_is_deterministic() {
        let lp = random_lp(77, 6, 8);
        let a = solve(&lp);
        let b = solve(&lp);
        assert_eq!(a.status, b.status);
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut lp = LinearProgram::new(2);
        lp.b_eq.push(1.0); // row count mismatch
        assert!(matches!(solve_lp(&lp, 1e-8, 50), Err(Error::DimensionMismatch(_))));
        let lp2 = LinearProgram::new(2);
        assert!(check_feasibility(&lp2, &[0.0]).is_err());
    }
}
