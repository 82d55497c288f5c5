//! The identification core: ordinary least squares on the stacked regressor,
//! conditioning, the positive-definiteness routing decision, the feasible
//! projection (see [`sdp`]) and closed-loop input-error refinement (see
//! [`clie`]).

pub mod clie;
pub mod sdp;

pub use clie::{clie_refine, ClieOutcome, ClieProblem, ClieSettings};
pub use sdp::{pd_rescue, sdp_project, SdpOutcome};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::AuditContext;
use crate::error::{Error, Result};
use crate::preprocess::RegressionProblem;

/// Relative singular-value floor below which the stacked regressor counts as
/// rank deficient.
const OLS_RANK_TOL: f64 = 1e-10;

/// Least-squares solution with the singular spectrum it was computed from.
#[derive(Debug, Clone)]
pub struct OlsSolution {
    pub phi: DVector<f64>,
    pub sigma_max: f64,
    pub sigma_min: f64,
}

impl OlsSolution {
    pub fn kappa(&self) -> f64 {
        self.sigma_max / self.sigma_min
    }
}

/// Minimize `|tau - W phi|²` by singular value decomposition (an orthogonal
/// factorization; the normal equations are never formed).
pub fn ols_solve(problem: &RegressionProblem) -> Result<OlsSolution> {
    ols_solve_matrix(&problem.w_all, &problem.tau_all, Some(problem))
}

fn ols_solve_matrix(
    w: &DMatrix<f64>,
    tau: &DVector<f64>,
    problem: Option<&RegressionProblem>,
) -> Result<OlsSolution> {
    if w.nrows() == 0 || w.ncols() == 0 {
        return Err(Error::Invalid("empty regression problem".into()));
    }
    let svd = w.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    if sigma_min <= OLS_RANK_TOL * sigma_max {
        // name the near-null-space directions for the error report
        let v_t = svd.v_t.as_ref().expect("v requested");
        let mut directions = Vec::new();
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s <= OLS_RANK_TOL * sigma_max {
                let row = v_t.row(i);
                let mut comps: Vec<(usize, f64)> =
                    row.iter().cloned().enumerate().map(|(k, v)| (k, v.abs())).collect();
                comps.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
                let desc: Vec<String> = comps
                    .iter()
                    .take(3)
                    .map(|(k, v)| format!("col{}({v:.2})", k))
                    .collect();
                directions.push(desc.join("+"));
            }
        }
        return Err(Error::RankDeficient {
            rank: svd.singular_values.iter().filter(|s| **s > OLS_RANK_TOL * sigma_max).count(),
            expected: w.ncols(),
            directions: directions.join("; "),
        });
    }
    let phi = svd
        .solve(tau, 0.0)
        .map_err(|e| Error::Invalid(format!("svd solve: {e}")))?;
    let _ = problem;
    Ok(OlsSolution { phi, sigma_max, sigma_min })
}

/// 2-norm condition number of the stacked regressor.
pub fn condition_number(problem: &RegressionProblem) -> Result<f64> {
    if problem.w_all.nrows() == 0 {
        return Err(Error::Invalid("empty regression problem".into()));
    }
    let sv = problem.w_all.clone().svd(false, false).singular_values;
    Ok(sv.max() / sv.min())
}

/// Routing decision after the OLS audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    /// The OLS estimate is feasible; refine it directly.
    Direct,
    /// The OLS estimate fails the audit; project before refining.
    ViaProjection,
}

impl std::fmt::Display for Route {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Route::Direct => write!(f, "O-C"),
            Route::ViaProjection => write!(f, "O-S-C"),
        }
    }
}

/// Audit an estimate over the full grid and decide its route.
pub fn pd_route(phi: &DVector<f64>, audit: &AuditContext) -> (Route, crate::dynamics::AuditScan) {
    let scan = audit.scan(phi);
    let route = if scan.min_eig > 0.0 { Route::Direct } else { Route::ViaProjection };
    (route, scan)
}

/// Full per-case record: route, conditioning, stage vectors and refinement
/// diagnostics. One row per (trajectory, interval) case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteRecord {
    pub label: String,
    pub ts_ms: u32,
    pub kappa: f64,
    pub ols_pd: bool,
    pub route: Route,
    pub eps_pd: Option<f64>,
    pub phi_ols: Vec<f64>,
    pub phi_sdp: Option<Vec<f64>>,
    pub phi_clie: Vec<f64>,
    pub clie_residual_rms: f64,
    pub clie_iterations: usize,
    pub clie_converged: bool,
    /// Deterministic refinement cost: total simulated closed-loop seconds.
    pub clie_sim_seconds: f64,
    /// Wall-clock refinement time; excluded from reproducibility contracts.
    pub clie_wall_seconds: Option<f64>,
    pub status: String,
}
