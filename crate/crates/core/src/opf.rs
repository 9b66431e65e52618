//! DC optimal power flow as a convex QP, with LMPs read off the nodal balance duals.
//!
//! Variables are `[θ (one per bus), Pg (one per in-service generator)]`. Bus
//! balance rows are written in MW,
//!
//! ```text
//!     Σ_{g at i} Pg_g − base_mva · Σ_{k at i} ±(θ_from − θ_to)/x_k = demand_i
//! ```
//!
//! so the dual of row `i` is the marginal cost of one more MW of demand at
//! bus `i`, in $/MWh.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::grid::{GridCase, ValidationReport};
use crate::qp::{solve_qp_with, QpError, QpProblem, QpSettings, QpStatus};

/// Per-bus active demand in MW, indexed like `GridCase::buses`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandVector(pub Vec<f64>);

impl DemandVector {
    pub fn base(grid: &GridCase) -> Self {
        Self(grid.base_demand())
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl std::ops::Deref for DemandVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub duality_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    /// One entry per generator in the grid; out-of-service units are 0.
    pub dispatch_mw: Vec<f64>,
    pub angle_rad: Vec<f64>,
    /// One entry per branch; out-of-service branches are 0.
    pub flow_mw: Vec<f64>,
    pub lmp: Vec<f64>,
    pub objective: f64,
    pub stats: SolveStats,
    pub status: QpStatus,
}

impl OpfSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OpfError {
    #[error("grid is not valid: {}", .0.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidGrid(ValidationReport),
    #[error("demand vector has {got} entries for {buses} buses")]
    DemandLength { got: usize, buses: usize },
    #[error("demand entries must be finite")]
    NonFiniteDemand,
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("finite-difference step must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("bus index {0} out of range")]
    BadBus(usize),
    #[error("base problem is not optimal ({0:?})")]
    BaseNotOptimal(QpStatus),
    #[error("perturbed problem is not optimal ({0:?}); finite-difference oracle does not apply")]
    OracleInapplicable(QpStatus),
}

/// Assembled problem plus the index maps needed to read the solution back.
#[derive(Debug, Clone)]
pub struct DcOpfProblem {
    pub qp: QpProblem<f64>,
    /// Grid generator index for each dispatch variable.
    pub generator_of_var: Vec<usize>,
    /// Grid branch index of each pair of flow-limit rows.
    pub limited_branches: Vec<usize>,
}

pub fn assemble_dcopf(grid: &GridCase, demand: &DemandVector) -> Result<DcOpfProblem, OpfError> {
    let report = grid.validate();
    if !report.is_valid() {
        return Err(OpfError::InvalidGrid(report));
    }
    let nb = grid.num_buses();
    if demand.len() != nb {
        return Err(OpfError::DemandLength {
            got: demand.len(),
            buses: nb,
        });
    }
    if demand.iter().any(|d| !d.is_finite()) {
        return Err(OpfError::NonFiniteDemand);
    }
    let index = grid.bus_index();
    let reference = grid.reference_bus().expect("validated grid has a reference bus");
    let gens: Vec<usize> = grid.in_service_generators().map(|(k, _)| k).collect();
    let ng = gens.len();
    let n = nb + ng;

    let mut quadratic = vec![0.0; n];
    let mut linear = vec![0.0; n];
    let mut offset = 0.0;
    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    let mut names: Vec<String> = grid.buses.iter().map(|b| format!("theta_{}", b.id)).collect();
    let mut eq = Array2::zeros((nb + 1, n));
    for (v, &k) in gens.iter().enumerate() {
        let g = &grid.generators[k];
        let col = nb + v;
        quadratic[col] = 2.0 * g.cost_c2;
        linear[col] = g.cost_c1;
        offset += g.cost_c0;
        lower[col] = g.p_min_mw;
        upper[col] = g.p_max_mw;
        names.push(format!("pg_{k}"));
        eq[[index[&g.at_bus], col]] = 1.0;
    }

    let limited: Vec<usize> = grid
        .in_service_branches()
        .filter(|(_, b)| b.is_limited())
        .map(|(k, _)| k)
        .collect();
    let mut ineq = Array2::zeros((2 * limited.len(), n));
    let mut ineq_rhs = Vec::with_capacity(2 * limited.len());
    for (_, br) in grid.in_service_branches() {
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        let b = grid.base_mva / br.reactance_pu;
        // Outflow from f and inflow to t.
        eq[[f, f]] -= b;
        eq[[f, t]] += b;
        eq[[t, f]] += b;
        eq[[t, t]] -= b;
    }
    for (r, &k) in limited.iter().enumerate() {
        let br = &grid.branches[k];
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        let b = grid.base_mva / br.reactance_pu;
        ineq[[2 * r, f]] = b;
        ineq[[2 * r, t]] = -b;
        ineq[[2 * r + 1, f]] = -b;
        ineq[[2 * r + 1, t]] = b;
        ineq_rhs.push(br.rate_a_mw);
        ineq_rhs.push(br.rate_a_mw);
    }
    eq[[nb, reference]] = 1.0;
    let mut eq_rhs = demand.to_vec();
    eq_rhs.push(0.0);

    Ok(DcOpfProblem {
        qp: QpProblem {
            quadratic_diag: quadratic,
            linear_cost: linear,
            objective_offset: offset,
            eq_matrix: eq,
            eq_rhs,
            bounds_lower: lower,
            bounds_upper: upper,
            ineq_matrix: ineq,
            ineq_rhs,
            variable_names: names,
        },
        generator_of_var: gens,
        limited_branches: limited,
    })
}

pub fn solve_dcopf(grid: &GridCase, demand: &DemandVector) -> Result<OpfSolution, OpfError> {
    solve_dcopf_with(grid, demand, &QpSettings::default())
}

pub fn solve_dcopf_with(
    grid: &GridCase,
    demand: &DemandVector,
    settings: &QpSettings<f64>,
) -> Result<OpfSolution, OpfError> {
    let problem = assemble_dcopf(grid, demand)?;
    let sol = solve_qp_with(&problem.qp, settings)?;
    let nb = grid.num_buses();
    let index = grid.bus_index();
    let angle_rad = sol.primal[..nb].to_vec();
    let mut dispatch_mw = vec![0.0; grid.generators.len()];
    for (v, &k) in problem.generator_of_var.iter().enumerate() {
        dispatch_mw[k] = sol.primal[nb + v];
    }
    let mut flow_mw = vec![0.0; grid.branches.len()];
    for (k, br) in grid.in_service_branches() {
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        flow_mw[k] = grid.base_mva * (angle_rad[f] - angle_rad[t]) / br.reactance_pu;
    }
    Ok(OpfSolution {
        dispatch_mw,
        angle_rad,
        flow_mw,
        lmp: sol.duals_eq[..nb].to_vec(),
        objective: sol.objective,
        stats: SolveStats {
            iterations: sol.iterations,
            duality_gap: sol.duality_gap,
        },
        status: sol.status,
    })
}

/// LMP at a bus next to one-sided finite differences of the optimal cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCheck {
    pub lmp: f64,
    /// `(f(d + ε·e) − f(d)) / ε`
    pub finite_difference: f64,
    /// `(f(d) − f(d − ε·e)) / ε`, or `None` when the backward problem is not optimal.
    pub backward_difference: Option<f64>,
}

impl SensitivityCheck {
    /// Within `max(abs_tol, rel_tol·|lmp|)` of the forward estimate.
    pub fn agrees(&self, abs_tol: f64, rel_tol: f64) -> bool {
        (self.lmp - self.finite_difference).abs() <= abs_tol.max(rel_tol * self.lmp.abs())
    }

    /// Forward and backward slopes differ, i.e. the cost function has a kink
    /// at this demand and the dual is not unique.
    pub fn is_degenerate(&self, abs_tol: f64, rel_tol: f64) -> bool {
        match self.backward_difference {
            Some(b) => (b - self.finite_difference).abs() > abs_tol.max(rel_tol * self.lmp.abs()),
            None => true,
        }
    }
}

/// Tolerances used by the sensitivity oracle; tighter than the defaults so the
/// objective difference is not swamped by the stopping tolerance.
pub fn oracle_settings() -> QpSettings<f64> {
    QpSettings {
        tol_gap: 1e-12,
        tol_feas: 1e-11,
        ..QpSettings::default()
    }
}

pub fn lmp_sensitivity_check(
    grid: &GridCase,
    demand: &DemandVector,
    bus_index: usize,
    epsilon_mw: f64,
) -> Result<SensitivityCheck, OpfError> {
    if !(epsilon_mw > 0.0 && epsilon_mw.is_finite()) {
        return Err(OpfError::BadEpsilon(epsilon_mw));
    }
    if bus_index >= grid.num_buses() {
        return Err(OpfError::BadBus(bus_index));
    }
    let settings = oracle_settings();
    let base = solve_dcopf_with(grid, demand, &settings)?;
    if !base.is_optimal() {
        return Err(OpfError::BaseNotOptimal(base.status));
    }
    let shifted = |delta: f64| {
        let mut d = demand.clone();
        d.0[bus_index] += delta;
        solve_dcopf_with(grid, &d, &settings)
    };
    let up = shifted(epsilon_mw)?;
    if !up.is_optimal() {
        return Err(OpfError::OracleInapplicable(up.status));
    }
    // A slightly negative demand is still a valid injection for the solver.
    let down = shifted(-epsilon_mw)?;
    let backward_difference = down.is_optimal().then(|| (base.objective - down.objective) / epsilon_mw);
    Ok(SensitivityCheck {
        lmp: base.lmp[bus_index],
        finite_difference: (up.objective - base.objective) / epsilon_mw,
        backward_difference,
    })
}
