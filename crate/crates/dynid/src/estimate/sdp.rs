//! Least-distance feasible projection under inertia-matrix positive-
//! definiteness constraints.
//!
//! The constraint `M(theta; phi) ⪰ eps I` at a pose is linear in `phi`, so
//! feasibility over a pose set is a convex program. It is solved here by
//! eigenvector cutting planes: every violated pose contributes linear cuts
//! `v' M(theta; phi) v >= eps` for its offending eigenvectors, the working
//! polyhedron is projected onto by dual coordinate ascent, and poses are
//! exchanged against the full audit grid until the whole grid verifies at
//! margin `eps - 1e-9`. Margins are taken from an ascending ladder; the first
//! margin whose projection verifies wins.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{crba, AuditContext, ModelRealization};
use crate::error::{Error, Result};

/// Verification tolerance on the audited margin.
pub const VERIFY_TOL: f64 = 1e-9;

/// Outcome of a feasible projection.
#[derive(Debug, Clone)]
pub struct SdpOutcome {
    pub phi: DVector<f64>,
    /// Margin that produced the verified solution.
    pub eps: f64,
    /// Minimum eigenvalue over the full audit grid at the solution.
    pub achieved_min_eig: f64,
    /// Constraint poses active when the solve finished.
    pub n_poses: usize,
    /// Whether the anchor was already feasible (returned unchanged).
    pub unchanged: bool,
}

/// One linear cut `a . phi >= b`.
struct Cut {
    a: DVector<f64>,
    b: f64,
    norm_sq: f64,
}

/// Projection of `anchor` onto the intersection of half-spaces by Hildreth
/// dual coordinate ascent.
fn project_onto_cuts(anchor: &DVector<f64>, cuts: &[Cut], lambda: &mut Vec<f64>) -> DVector<f64> {
    lambda.resize(cuts.len(), 0.0);
    let mut phi = anchor.clone();
    for (i, cut) in cuts.iter().enumerate() {
        if lambda[i] != 0.0 {
            phi.axpy(lambda[i], &cut.a, 1.0);
        }
    }
    for _sweep in 0..20_000 {
        let mut max_change = 0.0f64;
        for (i, cut) in cuts.iter().enumerate() {
            let violation = cut.b - cut.a.dot(&phi);
            let delta = (lambda[i] + violation / cut.norm_sq).max(0.0) - lambda[i];
            if delta != 0.0 {
                lambda[i] += delta;
                phi.axpy(delta, &cut.a, 1.0);
                max_change = max_change.max(delta.abs() * cut.norm_sq.sqrt());
            }
        }
        if max_change < 1e-13 {
            break;
        }
    }
    phi
}

/// Generic feasibility projection over a finite family of matrix pencils.
///
/// `eval(i, phi)` returns the i-th constraint matrix at `phi`; `basis(i, k)`
/// its derivative with respect to parameter k. Returns the projected vector
/// once every pencil satisfies the margin within `VERIFY_TOL`, or `None` if
/// the cut loop fails to close (it converges for any feasible margin; the
/// iteration caps guard against stalls).
pub(crate) fn project_feasible(
    anchor: &DVector<f64>,
    eps: f64,
    n_mats: usize,
    eval: &dyn Fn(usize, &DVector<f64>) -> DMatrix<f64>,
    basis: &dyn Fn(usize, usize) -> DVector<f64>,
) -> Option<DVector<f64>> {
    let n_params = anchor.len();
    let mut cuts: Vec<Cut> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let mut phi = anchor.clone();
    for _iter in 0..400 {
        let mut worst_violation = 0.0f64;
        for i in 0..n_mats {
            let m = eval(i, &phi);
            let eig = m.clone().symmetric_eigen();
            for (e, ev) in eig.eigenvalues.iter().enumerate() {
                if *ev < eps - VERIFY_TOL {
                    worst_violation = worst_violation.max(eps - ev);
                    let v = eig.eigenvectors.column(e);
                    // a_k = v' dM/dphi_k v via the per-parameter basis rows
                    let mut a = DVector::zeros(n_params);
                    for k in 0..n_params {
                        let row = basis(i, k);
                        // row stores the quadratic form coefficients flattened
                        let dim = m.nrows();
                        let mut acc = 0.0;
                        for r in 0..dim {
                            for c in 0..dim {
                                acc += v[r] * row[r * dim + c] * v[c];
                            }
                        }
                        a[k] = acc;
                    }
                    // affine remainder of the pencil along this eigenvector:
                    // v'M(phi)v = offset + a.phi, so the cut is a.phi >= eps - offset
                    let offset = ev - a.dot(&phi);
                    let norm_sq = a.norm_squared();
                    if norm_sq > 1e-18 {
                        cuts.push(Cut { a, b: eps - offset, norm_sq });
                    }
                }
            }
        }
        if worst_violation == 0.0 {
            return Some(phi);
        }
        phi = project_onto_cuts(anchor, &cuts, &mut lambda);
    }
    None
}

/// Cache of per-pose constraint matrices and their parameter derivatives.
struct PoseFamily<'a> {
    audit: &'a AuditContext<'a>,
    poses: Vec<Vec<f64>>,
    unit_reals: Vec<ModelRealization>,
    basis_cache: std::cell::RefCell<Vec<Option<Vec<DVector<f64>>>>>,
}

impl<'a> PoseFamily<'a> {
    fn new(audit: &'a AuditContext<'a>, poses: Vec<Vec<f64>>) -> Self {
        let n = audit.map.n_base();
        let unit_reals = (0..n)
            .map(|k| {
                let mut e = DVector::zeros(n);
                e[k] = 1.0;
                ModelRealization::from_base(audit.map, &e)
            })
            .collect();
        let basis_cache = std::cell::RefCell::new(vec![None; poses.len()]);
        PoseFamily { audit, poses, unit_reals, basis_cache }
    }

    fn push_pose(&mut self, pose: Vec<f64>) {
        self.poses.push(pose);
        self.basis_cache.borrow_mut().push(None);
    }

    fn eval(&self, i: usize, phi: &DVector<f64>) -> DMatrix<f64> {
        let real = ModelRealization::from_base(self.audit.map, phi);
        crba(self.audit.chain, &real, &self.poses[i])
    }

    fn basis(&self, i: usize, k: usize) -> DVector<f64> {
        let mut cache = self.basis_cache.borrow_mut();
        if cache[i].is_none() {
            let mats: Vec<DVector<f64>> = self
                .unit_reals
                .iter()
                .map(|real| {
                    let m = crba(self.audit.chain, real, &self.poses[i]);
                    DVector::from_column_slice(m.transpose().as_slice())
                })
                .collect();
            cache[i] = Some(mats);
        }
        cache[i].as_ref().unwrap()[k].clone()
    }
}

/// Project `anchor` at one margin with constraint exchange against the full
/// audit grid. Returns the verified solution and its full-grid minimum.
fn project_at_margin(
    audit: &AuditContext,
    anchor: &DVector<f64>,
    eps: f64,
    max_rounds: usize,
) -> Option<(DVector<f64>, f64, usize, bool)> {
    let scan = audit.scan(anchor);
    if scan.min_eig >= eps - VERIFY_TOL {
        return Some((anchor.clone(), scan.min_eig, 0, true));
    }
    let seed_poses: Vec<Vec<f64>> = scan.worst.iter().map(|(p, _)| p.clone()).collect();
    let mut family = PoseFamily::new(audit, seed_poses);
    let mut phi = anchor.clone();
    for _round in 0..max_rounds {
        let n = family.poses.len();
        let eval = |i: usize, p: &DVector<f64>| family.eval(i, p);
        let basis = |i: usize, k: usize| family.basis(i, k);
        phi = project_feasible(anchor, eps, n, &eval, &basis)?;
        let full = audit.scan(&phi);
        if full.min_eig >= eps - VERIFY_TOL {
            return Some((phi, full.min_eig, family.poses.len(), false));
        }
        // exchange: bring in the newly violated poses
        let mut added = 0;
        for (pose, lam) in &full.worst {
            if *lam < eps - VERIFY_TOL && !family.poses.contains(pose) {
                family.push_pose(pose.clone());
                added += 1;
                if added >= 16 {
                    break;
                }
            }
        }
        if added == 0 {
            // violations exist but match known poses: tighten by another pass
            continue;
        }
    }
    None
}

/// Feasible projection with an ascending margin ladder.
///
/// For each margin, constraint poses start from the audit's worst set and are
/// exchanged until the full grid verifies at `eps - 1e-9`; the first margin
/// that verifies is returned. Exhausting the ladder is an error carrying the
/// attempted margins.
pub fn sdp_project(
    audit: &AuditContext,
    anchor: &DVector<f64>,
    ladder: &[f64],
    exchange_rounds: usize,
) -> Result<SdpOutcome> {
    if anchor.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("projection anchor must be finite".into()));
    }
    let mut detail = String::new();
    for &eps in ladder {
        match project_at_margin(audit, anchor, eps, exchange_rounds) {
            Some((phi, achieved, n_poses, unchanged)) => {
                return Ok(SdpOutcome { phi, eps, achieved_min_eig: achieved, n_poses, unchanged });
            }
            None => {
                detail.push_str(&format!("eps={eps}: exchange rounds exhausted; "));
            }
        }
    }
    Err(Error::LadderExhausted {
        ladder: ladder.to_vec(),
        detail,
    })
}

/// Post-refinement rescue: the same projection at margin zero, anchored at
/// the refined solution; feasible inputs are returned unchanged.
pub fn pd_rescue(audit: &AuditContext, phi: &DVector<f64>, exchange_rounds: usize) -> Result<SdpOutcome> {
    sdp_project(audit, phi, &[0.0], exchange_rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_default_chain, ChainConfig};
    use crate::reduction::numerical_base_reduction;
    use approx::assert_relative_eq;

    #[test]
    fn feasible_anchor_is_returned_bitwise_unchanged() {
        let chain = build_default_chain().unwrap();
        let map = numerical_base_reduction(&chain, 300, 2).unwrap();
        let audit = AuditContext::new(&chain, &map).with_grid(3);
        let truth = map.reduce(&chain.truth).unwrap().values;
        let out = sdp_project(&audit, &truth, &[0.001], 10).unwrap();
        assert!(out.unchanged);
        assert_eq!(out.phi, truth);
    }

    #[test]
    fn scalar_inertia_projects_to_the_margin() {
        // single-link chain: the inertia matrix is the scalar ZZR1, so the
        // projection of an infeasible anchor lands exactly on the margin
        let toml = r#"
            name = "pendulum"
            gravity = 9.80665
            extra_axes = 0
            nominal_posture_deg = [0.0]
            audit_domain_deg = [[-180.0, 180.0]]
            torque_constants = [2.3179]

            [[links]]
            alpha_deg = 90.0
            a = 0.0
            d = 0.0
            mass = 1.0
            first_moment = [1.0, 0.0, 0.0]
            inertia = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]

            [actuation]
            rotor_inertia = [0.1]
            viscous_friction = [0.2]
        "#;
        let chain = ChainConfig::parse(toml).unwrap().build().unwrap();
        let map = numerical_base_reduction(&chain, 200, 3).unwrap();
        let audit = AuditContext::new(&chain, &map).with_grid(5);
        // base order: ZZR1, MX1, MY1, FV1
        let anchor = DVector::from_vec(vec![-0.5, 0.3, 0.1, 0.2]);
        let out = sdp_project(&audit, &anchor, &[0.001], 10).unwrap();
        assert_relative_eq!(out.phi[0], 0.001, epsilon = 1e-9);
        assert_relative_eq!(out.phi[1], 0.3, epsilon = 1e-12);
        assert_relative_eq!(out.phi[2], 0.1, epsilon = 1e-12);
        assert_relative_eq!(out.phi[3], 0.2, epsilon = 1e-12);
        assert_eq!(out.eps, 0.001);
    }

    #[test]
    fn two_parameter_family_matches_brute_force() {
        // synthetic two-parameter pencil family: M_i(x) = A0_i + x0*A1_i + x1*A2_i
        let mk = |d: &[f64]| DMatrix::from_diagonal(&DVector::from_row_slice(d));
        let families: Vec<[DMatrix<f64>; 3]> = vec![
            [
                DMatrix::from_row_slice(2, 2, &[0.02, 0.015, 0.015, 0.01]),
                mk(&[1.0, 0.0]),
                mk(&[0.0, 1.0]),
            ],
            [
                DMatrix::from_row_slice(2, 2, &[0.01, -0.02, -0.02, 0.03]),
                DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.0]),
                mk(&[0.0, 1.0]),
            ],
        ];
        let anchor = DVector::from_vec(vec![-0.04, -0.01]);
        let eps = 0.001;
        let eval = |i: usize, x: &DVector<f64>| -> DMatrix<f64> {
            &families[i][0] + &families[i][1] * x[0] + &families[i][2] * x[1]
        };
        let basis = |i: usize, k: usize| -> DVector<f64> {
            DVector::from_column_slice(families[i][k + 1].transpose().as_slice())
        };
        let projected = project_feasible(&anchor, eps, families.len(), &eval, &basis).unwrap();
        // verify feasibility of the projection
        for i in 0..families.len() {
            let min = eval(i, &projected).symmetric_eigenvalues().min();
            assert!(min >= eps - VERIFY_TOL, "family {i}: {min}");
        }
        // dense brute force over the two parameters
        let mut best = f64::INFINITY;
        let mut best_x = anchor.clone();
        let steps = 400;
        for a in 0..=steps {
            for b in 0..=steps {
                let x = DVector::from_vec(vec![
                    anchor[0] + 0.2 * a as f64 / steps as f64,
                    anchor[1] + 0.2 * b as f64 / steps as f64,
                ]);
                let feasible = (0..families.len())
                    .all(|i| eval(i, &x).symmetric_eigenvalues().min() >= eps - 1e-12);
                if feasible {
                    let d = (&x - &anchor).norm();
                    if d < best {
                        best = d;
                        best_x = x.clone();
                    }
                }
            }
        }
        let dist = (&projected - &anchor).norm();
        assert!(
            (dist - best).abs() <= 1e-4,
            "projection distance {dist:.6} vs brute force {best:.6} at {best_x:?}"
        );
    }

    #[test]
    fn projection_verifies_on_the_full_grid() {
        let chain = build_default_chain().unwrap();
        let map = numerical_base_reduction(&chain, 300, 2).unwrap();
        let audit = AuditContext::new(&chain, &map).with_grid(4);
        let mut anchor = map.reduce(&chain.truth).unwrap().values;
        let zzr6 = map.names.iter().position(|n| n == "ZZR6").unwrap();
        let xxr7 = map.names.iter().position(|n| n == "XXR7").unwrap();
        anchor[zzr6] = -0.02;
        anchor[xxr7] = -0.005;
        let out = sdp_project(&audit, &anchor, &[0.001, 0.002, 0.005, 0.01], 25).unwrap();
        assert!(!out.unchanged);
        let scan = audit.scan(&out.phi);
        assert!(scan.min_eig >= out.eps - VERIFY_TOL, "{} < {}", scan.min_eig, out.eps);
        assert_eq!(out.eps, 0.001, "smallest margin should verify");
    }

    #[test]
    fn rescue_leaves_feasible_estimates_alone_and_fixes_boundary_cases() {
        let chain = build_default_chain().unwrap();
        let map = numerical_base_reduction(&chain, 300, 2).unwrap();
        let audit = AuditContext::new(&chain, &map).with_grid(3);
        let truth = map.reduce(&chain.truth).unwrap().values;
        let ok = pd_rescue(&audit, &truth, 10).unwrap();
        assert!(ok.unchanged);
        assert_eq!(ok.phi, truth);

        // push one entry just past feasibility and rescue
        let zzr6 = map.names.iter().position(|n| n == "ZZR6").unwrap();
        let mut lo = truth.clone();
        // bisection for the feasibility boundary in this coordinate
        let (mut a, mut b) = (truth[zzr6], truth[zzr6] - 0.05);
        for _ in 0..40 {
            let mid = 0.5 * (a + b);
            lo[zzr6] = mid;
            if audit.scan(&lo).min_eig > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        let depth = 1e-4;
        lo[zzr6] = b - depth;
        let scan = audit.scan(&lo);
        assert!(scan.min_eig < 0.0);
        let out = pd_rescue(&audit, &lo, 25).unwrap();
        assert!(!out.unchanged);
        assert!(audit.scan(&out.phi).min_eig >= -VERIFY_TOL);
        let moved = (&out.phi - &lo).amax();
        assert!(
            moved <= 5.0 * (depth + (b - a).abs()),
            "rescue moved {moved:.3e} for depth {depth:.3e}"
        );
    }
}

