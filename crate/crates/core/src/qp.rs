//! Convex quadratic programs with diagonal Hessian, solved by a
//! predictor-corrector primal-dual interior-point method.
//!
//! The problem form is
//!
//! ```text
//!     minimize    ½ xᵀ diag(q) x + cᵀ x + offset
//!     subject to  A x = b
//!                 G x ≤ h
//!                 l ≤ x ≤ u      (infinite entries allowed)
//! ```
//!
//! Dual values follow the sensitivity convention: `duals_eq[i] = ∂f*/∂b[i]`.
//! Inequality and bound multipliers are returned as nonnegative magnitudes, so
//! `∂f*/∂h[i] = -duals_ineq[i]`, `∂f*/∂l[j] = duals_lower[j]` and
//! `∂f*/∂u[j] = -duals_upper[j]`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::linalg::{Inertia, Ldl, SquareMatrix};
use crate::scalar::{dot, norm_inf, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem<T> {
    pub quadratic_diag: Vec<T>,
    pub linear_cost: Vec<T>,
    /// Constant added to the objective value; does not affect the solution.
    pub objective_offset: T,
    pub eq_matrix: Array2<T>,
    pub eq_rhs: Vec<T>,
    pub bounds_lower: Vec<T>,
    pub bounds_upper: Vec<T>,
    pub ineq_matrix: Array2<T>,
    pub ineq_rhs: Vec<T>,
    pub variable_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution<T> {
    pub primal: Vec<T>,
    pub duals_eq: Vec<T>,
    pub duals_ineq: Vec<T>,
    pub duals_lower: Vec<T>,
    pub duals_upper: Vec<T>,
    pub objective: T,
    pub iterations: usize,
    /// Complementarity `sᵀz` at the returned iterate.
    pub duality_gap: T,
    pub primal_residual: T,
    pub dual_residual: T,
    pub status: QpStatus,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings<T> {
    pub tol_gap: T,
    pub tol_feas: T,
    pub max_iter: usize,
    pub step_damping: T,
    pub regularization: T,
    pub refinement_steps: usize,
    /// Re-solve on the detected active set after convergence.
    pub polish: bool,
}

impl<T: Scalar> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            tol_gap: T::lit(1e-8),
            tol_feas: T::lit(1e-8),
            max_iter: 200,
            step_damping: T::lit(0.995),
            regularization: T::epsilon().sqrt() * T::lit(0.1),
            refinement_steps: 3,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("objective is not convex: quadratic_diag[{index}] is negative")]
    NotConvex { index: usize },
    #[error("non-finite problem data in {0}")]
    NonFinite(&'static str),
    #[error("empty feasible box: lower bound exceeds upper bound for variable {index}")]
    EmptyBox { index: usize },
}

impl<T: Scalar> QpProblem<T> {
    /// Problem with `n` free variables and no constraints.
    pub fn unconstrained(quadratic_diag: Vec<T>, linear_cost: Vec<T>) -> Self {
        let n = linear_cost.len();
        Self {
            quadratic_diag,
            linear_cost,
            objective_offset: T::zero(),
            eq_matrix: Array2::zeros((0, n)),
            eq_rhs: Vec::new(),
            bounds_lower: vec![T::neg_infinity(); n],
            bounds_upper: vec![T::infinity(); n],
            ineq_matrix: Array2::zeros((0, n)),
            ineq_rhs: Vec::new(),
            variable_names: (0..n).map(|i| format!("x{i}")).collect(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.linear_cost.len()
    }

    pub fn objective_at(&self, x: &[T]) -> T {
        let half = T::lit(0.5);
        x.iter()
            .zip(&self.quadratic_diag)
            .zip(&self.linear_cost)
            .fold(self.objective_offset, |acc, ((xi, qi), ci)| {
                acc + half * *qi * *xi * *xi + *ci * *xi
            })
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        let dim = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(QpError::Dimension(format!("{what} has {got} entries, expected {want}")))
            }
        };
        dim("quadratic_diag", self.quadratic_diag.len(), n)?;
        dim("bounds_lower", self.bounds_lower.len(), n)?;
        dim("bounds_upper", self.bounds_upper.len(), n)?;
        dim("variable_names", self.variable_names.len(), n)?;
        dim("eq_matrix columns", self.eq_matrix.ncols(), n)?;
        dim("eq_rhs", self.eq_rhs.len(), self.eq_matrix.nrows())?;
        dim("ineq_matrix columns", self.ineq_matrix.ncols(), n)?;
        dim("ineq_rhs", self.ineq_rhs.len(), self.ineq_matrix.nrows())?;
        if let Some(index) = self.quadratic_diag.iter().position(|q| *q < T::zero()) {
            return Err(QpError::NotConvex { index });
        }
        let finite = |v: &[T]| v.iter().all(|x| x.is_finite());
        if !finite(&self.quadratic_diag) {
            return Err(QpError::NonFinite("quadratic_diag"));
        }
        if !finite(&self.linear_cost) || !self.objective_offset.is_finite() {
            return Err(QpError::NonFinite("linear_cost"));
        }
        if !self.eq_matrix.iter().all(|x| x.is_finite()) || !finite(&self.eq_rhs) {
            return Err(QpError::NonFinite("equality system"));
        }
        if !self.ineq_matrix.iter().all(|x| x.is_finite()) || !finite(&self.ineq_rhs) {
            return Err(QpError::NonFinite("inequality system"));
        }
        for j in 0..n {
            let (l, u) = (self.bounds_lower[j], self.bounds_upper[j]);
            if l.is_nan() || u.is_nan() || l == T::infinity() || u == T::neg_infinity() {
                return Err(QpError::NonFinite("bounds"));
            }
            if l > u {
                return Err(QpError::EmptyBox { index: j });
            }
        }
        Ok(())
    }
}

/// One row of the stacked inequality system `C x ≤ d` in sparse form.
#[derive(Debug, Clone)]
struct SparseRow<T> {
    entries: Vec<(usize, T)>,
}

impl<T: Scalar> SparseRow<T> {
    fn from_dense(row: ndarray::ArrayView1<T>) -> Self {
        Self {
            entries: row
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != T::zero())
                .map(|(j, v)| (j, *v))
                .collect(),
        }
    }

    fn single(j: usize, v: T) -> Self {
        Self {
            entries: vec![(j, v)],
        }
    }

    fn dot(&self, x: &[T]) -> T {
        self.entries
            .iter()
            .fold(T::zero(), |acc, (j, v)| acc + *v * x[*j])
    }

    fn axpy_t(&self, alpha: T, out: &mut [T]) {
        for (j, v) in &self.entries {
            out[*j] += alpha * *v;
        }
    }
}

/// Where each stacked inequality row came from.
#[derive(Debug, Clone, Copy)]
enum RowOrigin {
    General(usize),
    Lower(usize),
    Upper(usize),
}

/// Internal standard form: equalities (including fixed variables) and the
/// stacked inequalities `C x ≤ d`.
struct StandardForm<T> {
    n: usize,
    q: Vec<T>,
    c: Vec<T>,
    eq_rows: Vec<SparseRow<T>>,
    b: Vec<T>,
    /// Variable index for each appended fixed-variable equality.
    fixed: Vec<usize>,
    ineq_rows: Vec<SparseRow<T>>,
    d: Vec<T>,
    origin: Vec<RowOrigin>,
}

impl<T: Scalar> StandardForm<T> {
    fn new(p: &QpProblem<T>) -> Self {
        let n = p.num_vars();
        let mut eq_rows: Vec<SparseRow<T>> =
            p.eq_matrix.rows().into_iter().map(SparseRow::from_dense).collect();
        let mut b = p.eq_rhs.clone();
        let mut fixed = Vec::new();
        let mut ineq_rows: Vec<SparseRow<T>> =
            p.ineq_matrix.rows().into_iter().map(SparseRow::from_dense).collect();
        let mut d = p.ineq_rhs.clone();
        let mut origin: Vec<RowOrigin> = (0..ineq_rows.len()).map(RowOrigin::General).collect();
        for j in 0..n {
            let (l, u) = (p.bounds_lower[j], p.bounds_upper[j]);
            if l.is_finite() && u.is_finite() && l == u {
                eq_rows.push(SparseRow::single(j, T::one()));
                b.push(l);
                fixed.push(j);
                continue;
            }
            if l.is_finite() {
                ineq_rows.push(SparseRow::single(j, -T::one()));
                d.push(-l);
                origin.push(RowOrigin::Lower(j));
            }
            if u.is_finite() {
                ineq_rows.push(SparseRow::single(j, T::one()));
                d.push(u);
                origin.push(RowOrigin::Upper(j));
            }
        }
        Self {
            n,
            q: p.quadratic_diag.clone(),
            c: p.linear_cost.clone(),
            eq_rows,
            b,
            fixed,
            ineq_rows,
            d,
            origin,
        }
    }

    fn m(&self) -> usize {
        self.eq_rows.len()
    }

    fn p(&self) -> usize {
        self.ineq_rows.len()
    }

    /// Writes the unregularized KKT matrix `[H Aᵀ; A 0]` with `H = Q + Cᵀ W C`.
    fn fill_kkt(&self, w: &[T], k: &mut SquareMatrix<T>) {
        k.fill_zero();
        let n = self.n;
        for j in 0..n {
            k.set(j, j, self.q[j]);
        }
        for (row, wi) in self.ineq_rows.iter().zip(w) {
            for (a, va) in &row.entries {
                for (bj, vb) in &row.entries {
                    k.add(*a, *bj, *wi * *va * *vb);
                }
            }
        }
        for (i, row) in self.eq_rows.iter().enumerate() {
            for (j, v) in &row.entries {
                k.set(n + i, *j, *v);
                k.set(*j, n + i, *v);
            }
        }
    }
}

/// Regularized factorization plus iterative refinement against the exact KKT matrix.
struct KktSolver<T> {
    exact: SquareMatrix<T>,
    factor: Ldl<T>,
    refinement_steps: usize,
}

impl<T: Scalar> KktSolver<T> {
    fn new(
        exact: SquareMatrix<T>,
        n: usize,
        reg: T,
        refinement_steps: usize,
    ) -> Result<Self, crate::linalg::FactorError> {
        let mut regularized = exact.clone();
        let dim = exact.dim();
        for j in 0..dim {
            let v = if j < n { reg } else { -reg };
            regularized.add(j, j, v);
        }
        let factor = Ldl::factor(
            &regularized,
            Inertia::Regularized {
                positive: n,
                threshold: T::epsilon() * T::lit(1e3),
                delta: T::epsilon().sqrt() * T::lit(10.0),
            },
        )?;
        Ok(Self {
            exact,
            factor,
            refinement_steps,
        })
    }

    fn solve(&self, rhs: &[T]) -> Vec<T> {
        let mut x = rhs.to_vec();
        self.factor.solve_in_place(&mut x);
        let mut r = vec![T::zero(); rhs.len()];
        for _ in 0..self.refinement_steps {
            self.exact.mul_vec(&x, &mut r);
            for (ri, bi) in r.iter_mut().zip(rhs) {
                *ri = *bi - *ri;
            }
            self.factor.solve_in_place(&mut r);
            for (xi, ri) in x.iter_mut().zip(&r) {
                *xi += *ri;
            }
        }
        x
    }
}

struct Residuals<T> {
    dual: Vec<T>,
    primal_eq: Vec<T>,
    primal_ineq: Vec<T>,
}

/// Largest `α ∈ (0, 1]` keeping `v + α·dv ≥ 0`.
fn max_step<T: Scalar>(v: &[T], dv: &[T]) -> T {
    v.iter().zip(dv).fold(T::one(), |a, (vi, di)| {
        if *di < T::zero() {
            a.min(-*vi / *di)
        } else {
            a
        }
    })
}

pub fn solve_qp<T: Scalar>(problem: &QpProblem<T>) -> Result<QpSolution<T>, QpError> {
    solve_qp_with(problem, &QpSettings::default())
}

pub fn solve_qp_with<T: Scalar>(
    problem: &QpProblem<T>,
    settings: &QpSettings<T>,
) -> Result<QpSolution<T>, QpError> {
    problem.validate()?;
    let sf = StandardForm::new(problem);
    let (n, m, p) = (sf.n, sf.m(), sf.p());
    let one = T::one();

    let residuals = |x: &[T], y: &[T], z: &[T], s: &[T]| -> Residuals<T> {
        let mut dual: Vec<T> = (0..n).map(|j| sf.q[j] * x[j] + sf.c[j]).collect();
        for (row, yi) in sf.eq_rows.iter().zip(y) {
            row.axpy_t(-*yi, &mut dual);
        }
        for (row, zi) in sf.ineq_rows.iter().zip(z) {
            row.axpy_t(*zi, &mut dual);
        }
        let primal_eq = sf.eq_rows.iter().zip(&sf.b).map(|(r, bi)| r.dot(x) - *bi).collect();
        let primal_ineq = sf
            .ineq_rows
            .iter()
            .zip(&sf.d)
            .zip(s)
            .map(|((r, di), si)| r.dot(x) + *si - *di)
            .collect();
        Residuals {
            dual,
            primal_eq,
            primal_ineq,
        }
    };

    // Reduced Newton system: given rhs for the x-block and the equality block,
    // returns (Δx, Δy).
    let newton = |kkt: &KktSolver<T>, rx: &[T], ry: &[T]| -> (Vec<T>, Vec<T>) {
        let mut rhs = Vec::with_capacity(n + m);
        rhs.extend_from_slice(rx);
        rhs.extend_from_slice(ry);
        let sol = kkt.solve(&rhs);
        let dx = sol[..n].to_vec();
        let dy = sol[n..].iter().map(|v| -*v).collect();
        (dx, dy)
    };

    let b_norm = norm_inf(&sf.b);
    let d_norm = sf.d.iter().filter(|v| v.is_finite()).fold(T::zero(), |a, v| a.max(v.abs()));
    let c_norm = norm_inf(&sf.c);

    let mut kkt_matrix = SquareMatrix::zeros(n + m);

    // Starting point: minimize ½xᵀQx + cᵀx + ½‖Cx − d‖² subject to Ax = b,
    // then shift slacks and multipliers into the interior.
    sf.fill_kkt(&vec![one; p], &mut kkt_matrix);
    let kkt = match KktSolver::new(kkt_matrix.clone(), n, settings.regularization, settings.refinement_steps) {
        Ok(k) => k,
        Err(_) => return Ok(failure(problem, &sf, 0, QpStatus::NumericalFailure)),
    };
    let mut rx: Vec<T> = sf.c.iter().map(|v| -*v).collect();
    for (row, di) in sf.ineq_rows.iter().zip(&sf.d) {
        row.axpy_t(*di, &mut rx);
    }
    let (mut x, mut y) = newton(&kkt, &rx, &sf.b);
    let mut s: Vec<T> = sf
        .ineq_rows
        .iter()
        .zip(&sf.d)
        .map(|(r, di)| *di - r.dot(&x))
        .collect();
    let mut z: Vec<T> = s.iter().map(|v| -*v).collect();
    if p > 0 {
        let shift = |v: &mut Vec<T>| {
            let lo = v.iter().fold(T::infinity(), |a, b| a.min(*b));
            if lo <= T::zero() {
                let delta = one - lo;
                v.iter_mut().for_each(|e| *e += delta);
            }
        };
        shift(&mut s);
        shift(&mut z);
    }

    let mut stall = 0usize;
    let mut best_primal = T::infinity();
    let mut best_primal_iter = 0usize;
    for iter in 0..=settings.max_iter {
        let r = residuals(&x, &y, &z, &s);
        let gap = dot(&s, &z);
        let objective = problem.objective_at(&x);
        let pres = (norm_inf(&r.primal_eq) / (one + b_norm))
            .max(norm_inf(&r.primal_ineq) / (one + d_norm));
        let dres = norm_inf(&r.dual) / (one + c_norm);
        let rel_gap = gap / (one + objective.abs());

        if pres <= settings.tol_feas && dres <= settings.tol_feas && rel_gap <= settings.tol_gap {
            let norms = Norms {
                b: b_norm,
                c: c_norm,
                d: d_norm,
            };
            if let Some(p) = settings.polish.then(|| polish(&sf, &y, &z, &s, settings, norms)).flatten() {
                let r = residuals(&p.x, &p.y, &p.z, &p.s);
                let pres = (norm_inf(&r.primal_eq) / (one + b_norm)).max(norm_inf(&r.primal_ineq) / (one + d_norm));
                let dres = norm_inf(&r.dual) / (one + c_norm);
                return Ok(finish(problem, &sf, p.x, p.y, p.z, p.s, iter, QpStatus::Optimal, pres, dres));
            }
            return Ok(finish(problem, &sf, x, y, z, s, iter, QpStatus::Optimal, pres, dres));
        }
        if !(pres.is_finite() && dres.is_finite() && gap.is_finite()) {
            return Ok(finish(problem, &sf, x, y, z, s, iter, QpStatus::NumericalFailure, pres, dres));
        }
        if pres < best_primal * T::lit(0.9) {
            best_primal = pres;
            best_primal_iter = iter;
        }
        let z_max = norm_inf(&z);
        let diverging = z_max > T::lit(1e10) * (one + c_norm);
        let stalled = iter > best_primal_iter + 30;
        if iter >= 10 && pres > T::lit(1e-6) && (diverging || stalled || stall >= 5) {
            return Ok(finish(problem, &sf, x, y, z, s, iter, QpStatus::Infeasible, pres, dres));
        }
        if iter == settings.max_iter {
            return Ok(finish(problem, &sf, x, y, z, s, iter, QpStatus::IterationLimit, pres, dres));
        }

        let w: Vec<T> = z.iter().zip(&s).map(|(zi, si)| *zi / *si).collect();
        sf.fill_kkt(&w, &mut kkt_matrix);
        let kkt = match KktSolver::new(
            kkt_matrix.clone(),
            n,
            settings.regularization,
            settings.refinement_steps,
        ) {
            Ok(k) => k,
            Err(_) => {
                return Ok(finish(problem, &sf, x, y, z, s, iter, QpStatus::NumericalFailure, pres, dres))
            }
        };

        // Solves for the full step given the complementarity residual rc.
        let direction = |rc: &[T]| -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
            let mut rx: Vec<T> = r.dual.iter().map(|v| -*v).collect();
            for i in 0..p {
                let coef = -(w[i] * r.primal_ineq[i]) + rc[i] / s[i];
                sf.ineq_rows[i].axpy_t(coef, &mut rx);
            }
            let ry: Vec<T> = r.primal_eq.iter().map(|v| -*v).collect();
            let (dx, dy) = newton(&kkt, &rx, &ry);
            let mut dz = Vec::with_capacity(p);
            let mut ds = Vec::with_capacity(p);
            for i in 0..p {
                let cdx = sf.ineq_rows[i].dot(&dx);
                dz.push(w[i] * (cdx + r.primal_ineq[i]) - rc[i] / s[i]);
                ds.push(-r.primal_ineq[i] - cdx);
            }
            (dx, dy, dz, ds)
        };

        let (dx, dy, dz, ds) = if p == 0 {
            direction(&[])
        } else {
            let mu = gap / T::from_usize(p).unwrap();
            let rc_aff: Vec<T> = s.iter().zip(&z).map(|(a, b)| *a * *b).collect();
            let (_, _, dz_a, ds_a) = direction(&rc_aff);
            let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
            let mu_aff = s
                .iter()
                .zip(&ds_a)
                .zip(z.iter().zip(&dz_a))
                .fold(T::zero(), |acc, ((si, dsi), (zi, dzi))| {
                    acc + (*si + alpha_aff * *dsi) * (*zi + alpha_aff * *dzi)
                })
                / T::from_usize(p).unwrap();
            let sigma = (mu_aff / mu).powi(3).min(one);
            let rc: Vec<T> = (0..p)
                .map(|i| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu)
                .collect();
            direction(&rc)
        };

        let alpha_max = max_step(&s, &ds).min(max_step(&z, &dz));
        let alpha = if p == 0 {
            one
        } else {
            (settings.step_damping * alpha_max).min(one)
        };
        stall = if alpha < T::lit(1e-8) { stall + 1 } else { 0 };
        for j in 0..n {
            x[j] += alpha * dx[j];
        }
        for i in 0..m {
            y[i] += alpha * dy[i];
        }
        for i in 0..p {
            s[i] += alpha * ds[i];
            z[i] += alpha * dz[i];
        }
    }
    unreachable!("loop returns at max_iter")
}

/// Proximal term for the polishing factorization. Angle variables carry no
/// curvature once the barrier terms are gone, so the interior-point
/// regularization is too small to pivot on; refinement against the exact
/// matrix removes the bias.
const POLISH_REG: f64 = 1e-6;
const POLISH_REFINEMENT: usize = 30;

#[derive(Clone, Copy)]
struct Norms<T> {
    b: T,
    c: T,
    d: T,
}

struct Iterate<T> {
    x: Vec<T>,
    y: Vec<T>,
    z: Vec<T>,
    s: Vec<T>,
}

/// Solves the KKT system with the constraints the interior iterate marks as
/// active (multiplier above slack) held as equalities. Interior-point
/// multipliers on inactive rows shrink only with the gap; this removes them.
/// The result is rejected unless it is primal and dual feasible and close to
/// the interior iterate, which keeps the interior-point answer wherever the
/// multipliers are not unique.
fn polish<T: Scalar>(
    sf: &StandardForm<T>,
    y: &[T],
    z: &[T],
    s: &[T],
    settings: &QpSettings<T>,
    norms: Norms<T>,
) -> Option<Iterate<T>> {
    let (n, m, p) = (sf.n, sf.m(), sf.p());
    let one = T::one();
    let active: Vec<usize> = (0..p).filter(|&i| z[i] > s[i]).collect();
    let dim = n + m + active.len();
    let mut kkt = SquareMatrix::zeros(dim);
    for j in 0..n {
        kkt.set(j, j, sf.q[j]);
    }
    let rows = sf.eq_rows.iter().chain(active.iter().map(|&i| &sf.ineq_rows[i]));
    for (r, row) in rows.enumerate() {
        for (j, v) in &row.entries {
            kkt.set(n + r, *j, *v);
            kkt.set(*j, n + r, *v);
        }
    }
    let mut rhs: Vec<T> = sf.c.iter().map(|v| -*v).collect();
    rhs.extend_from_slice(&sf.b);
    rhs.extend(active.iter().map(|&i| sf.d[i]));
    let solver = KktSolver::new(kkt, n, T::lit(POLISH_REG), POLISH_REFINEMENT).ok()?;
    let sol = solver.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let tol = settings.tol_feas;
    let px = sol[..n].to_vec();
    let py: Vec<T> = sol[n..n + m].iter().map(|v| -*v).collect();
    let mut pz = vec![T::zero(); p];
    for (r, &i) in active.iter().enumerate() {
        let v = sol[n + m + r];
        if v < -tol * (one + norms.c) {
            return None;
        }
        pz[i] = v.max(T::zero());
    }
    let mut ps = Vec::with_capacity(p);
    for (i, (row, di)) in sf.ineq_rows.iter().zip(&sf.d).enumerate() {
        let slack = *di - row.dot(&px);
        if slack < -tol * (one + norms.d) {
            return None;
        }
        ps.push(if pz[i] > T::zero() { T::zero() } else { slack.max(T::zero()) });
    }
    let eq_ok = sf
        .eq_rows
        .iter()
        .zip(&sf.b)
        .all(|(r, bi)| (r.dot(&px) - *bi).abs() <= tol * (one + norms.b));
    let mut dual: Vec<T> = (0..n).map(|j| sf.q[j] * px[j] + sf.c[j]).collect();
    for (row, yi) in sf.eq_rows.iter().zip(&py) {
        row.axpy_t(-*yi, &mut dual);
    }
    for (row, zi) in sf.ineq_rows.iter().zip(&pz) {
        row.axpy_t(*zi, &mut dual);
    }
    if !eq_ok || norm_inf(&dual) > tol * (one + norms.c) {
        return None;
    }
    let drift = |a: &[T], b: &[T]| {
        let scale = one + norm_inf(b);
        a.iter().zip(b).all(|(u, v)| (*u - *v).abs() <= T::lit(1e-3) * scale)
    };
    if !(drift(&py, y) && drift(&pz, z)) {
        return None;
    }
    Some(Iterate {
        x: px,
        y: py,
        z: pz,
        s: ps,
    })
}

fn failure<T: Scalar>(
    problem: &QpProblem<T>,
    sf: &StandardForm<T>,
    iter: usize,
    status: QpStatus,
) -> QpSolution<T> {
    let x = vec![T::zero(); sf.n];
    let y = vec![T::zero(); sf.m()];
    let z = vec![T::zero(); sf.p()];
    let s = vec![T::zero(); sf.p()];
    finish(problem, sf, x, y, z, s, iter, status, T::infinity(), T::infinity())
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Scalar>(
    problem: &QpProblem<T>,
    sf: &StandardForm<T>,
    x: Vec<T>,
    y: Vec<T>,
    z: Vec<T>,
    s: Vec<T>,
    iterations: usize,
    status: QpStatus,
    primal_residual: T,
    dual_residual: T,
) -> QpSolution<T> {
    let n = sf.n;
    let n_eq = problem.eq_rhs.len();
    let n_ineq = problem.ineq_rhs.len();
    let mut duals_ineq = vec![T::zero(); n_ineq];
    let mut duals_lower = vec![T::zero(); n];
    let mut duals_upper = vec![T::zero(); n];
    for (zi, origin) in z.iter().zip(&sf.origin) {
        match *origin {
            RowOrigin::General(i) => duals_ineq[i] = *zi,
            RowOrigin::Lower(j) => duals_lower[j] = *zi,
            RowOrigin::Upper(j) => duals_upper[j] = *zi,
        }
    }
    for (k, j) in sf.fixed.iter().enumerate() {
        let yj = y[n_eq + k];
        duals_lower[*j] = yj.max(T::zero());
        duals_upper[*j] = (-yj).max(T::zero());
    }
    let objective = problem.objective_at(&x);
    QpSolution {
        duality_gap: dot(&s, &z),
        primal: x,
        duals_eq: y[..n_eq].to_vec(),
        duals_ineq,
        duals_lower,
        duals_upper,
        objective,
        iterations,
        primal_residual,
        dual_residual,
        status,
    }
}
