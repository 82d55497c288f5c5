//! Rigid-body dynamics for serial chains: recursive Newton-Euler inverse
//! dynamics, the base-parameter regressor, inertia-matrix assembly, forward
//! dynamics, and the minimum-eigenvalue positive-definiteness audit.
//!
//! All torque quantities are linear in the standard inertial parameters,
//! which is what makes the identification regressor exact rather than
//! approximate: a regressor column is literally the inverse dynamics of a
//! unit parameter.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::chain::{ChainDescription, StandardInertialParams};
use crate::error::{Error, Result};
use crate::par;
use crate::reduction::{BaseParamMapping, FullParamLayout, ParamKind};

/// Standard gravity (m/s²), along the base -z axis.
pub const GRAVITY: f64 = 9.80665;

/// Joint positions, velocities and accelerations for the whole chain.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>, qdd: DVector<f64>) -> Result<Self> {
        if q.len() != qd.len() || q.len() != qdd.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: qd.len().max(qdd.len()),
                context: "joint state vectors".into(),
            });
        }
        Ok(JointState { q, qd, qdd })
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }
}

/// Per-link dynamic parameters in the form the recursions consume.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LinkDyn {
    pub m: f64,
    pub h: Vector3<f64>,
    pub i: Matrix3<f64>,
}

impl LinkDyn {
    fn zero() -> Self {
        LinkDyn {
            m: 0.0,
            h: Vector3::zeros(),
            i: Matrix3::zeros(),
        }
    }

    fn unit(kind: ParamKind) -> Self {
        let mut l = LinkDyn::zero();
        match kind {
            ParamKind::XX => l.i[(0, 0)] = 1.0,
            ParamKind::YY => l.i[(1, 1)] = 1.0,
            ParamKind::ZZ => l.i[(2, 2)] = 1.0,
            ParamKind::XY => {
                l.i[(0, 1)] = 1.0;
                l.i[(1, 0)] = 1.0;
            }
            ParamKind::XZ => {
                l.i[(0, 2)] = 1.0;
                l.i[(2, 0)] = 1.0;
            }
            ParamKind::YZ => {
                l.i[(1, 2)] = 1.0;
                l.i[(2, 1)] = 1.0;
            }
            ParamKind::MX => l.h.x = 1.0,
            ParamKind::MY => l.h.y = 1.0,
            ParamKind::MZ => l.h.z = 1.0,
            ParamKind::Mass => l.m = 1.0,
            ParamKind::Ia | ParamKind::Fv => unreachable!("axis params are not link wrenches"),
        }
        l
    }
}

/// A full dynamic model in recursion-ready form.
#[derive(Debug, Clone)]
pub(crate) struct ModelRealization {
    pub links: Vec<LinkDyn>,
    pub ia: Vec<f64>,
    pub fv: Vec<f64>,
}

impl ModelRealization {
    pub fn from_standard(params: &StandardInertialParams) -> Self {
        ModelRealization {
            links: params
                .links
                .iter()
                .map(|l| LinkDyn {
                    m: l.mass,
                    h: l.first_moment_vec(),
                    i: l.inertia_matrix(),
                })
                .collect(),
            ia: params.rotor_inertia.clone(),
            fv: params.viscous_friction.clone(),
        }
    }

    pub fn from_base(map: &BaseParamMapping, base: &DVector<f64>) -> Self {
        ModelRealization::from_standard(&map.expand(base))
    }
}

/// Kinematic state of one link, expressed in its own frame.
#[derive(Debug, Clone, Copy)]
struct LinkKin {
    /// Rotation link -> parent.
    rot: Matrix3<f64>,
    /// Link origin in the parent frame.
    p: Vector3<f64>,
    w: Vector3<f64>,
    dw: Vector3<f64>,
    dv: Vector3<f64>,
}

fn kinematic_pass(
    chain: &ChainDescription,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
    gravity_on: bool,
) -> Vec<LinkKin> {
    let n = chain.n_links();
    let mut kin = Vec::with_capacity(n);
    let mut w_p = Vector3::zeros();
    let mut dw_p = Vector3::zeros();
    let mut dv_p = if gravity_on {
        Vector3::new(0.0, 0.0, chain.gravity)
    } else {
        Vector3::zeros()
    };
    for (i, link) in chain.links.iter().enumerate() {
        let rot = link.rotation(q[i]);
        let p = link.origin_in_parent();
        let rt = rot.transpose();
        let s = link.axis_sign;
        let wz = s * qd[i];
        let az = s * qdd[i];
        let w_rot = rt * w_p;
        let mut w = w_rot;
        w.z += wz;
        // dw = R^T dw_p + (R^T w_p) x (wz ez) + az ez
        let mut dw = rt * dw_p;
        dw.x += w_rot.y * wz;
        dw.y += -w_rot.x * wz;
        dw.z += az;
        let dv = rt * (dv_p + dw_p.cross(&p) + w_p.cross(&w_p.cross(&p)));
        kin.push(LinkKin { rot, p, w, dw, dv });
        w_p = w;
        dw_p = dw;
        dv_p = dv;
    }
    kin
}

/// Net force and moment of one link about its frame origin.
#[inline]
fn link_wrench(l: &LinkDyn, k: &LinkKin) -> (Vector3<f64>, Vector3<f64>) {
    let f = l.m * k.dv + k.dw.cross(&l.h) + k.w.cross(&k.w.cross(&l.h));
    let n = l.i * k.dw + k.w.cross(&(l.i * k.w)) + l.h.cross(&k.dv);
    (f, n)
}

/// Inward recursion over all links, producing joint torques for the inertial
/// links (axis terms added by the caller).
fn backward_pass(chain: &ChainDescription, kin: &[LinkKin], wrenches: &[(Vector3<f64>, Vector3<f64>)]) -> Vec<f64> {
    let n = chain.n_links();
    let mut tau = vec![0.0; n];
    let mut f_child = Vector3::zeros();
    let mut n_child = Vector3::zeros();
    let mut have_child = false;
    for i in (0..n).rev() {
        let (mut f, mut nn) = wrenches[i];
        if have_child {
            let k_c = &kin[i + 1];
            let f_in_parent = k_c.rot * f_child;
            f += f_in_parent;
            nn += k_c.rot * n_child + k_c.p.cross(&f_in_parent);
        }
        tau[i] = chain.links[i].axis_sign * nn.z;
        f_child = f;
        n_child = nn;
        have_child = true;
    }
    tau
}

/// Torque contributions of a single wrench applied at link `j`, accumulated
/// into `tau[0..=j]`.
fn propagate_single(
    chain: &ChainDescription,
    kin: &[LinkKin],
    j: usize,
    mut f: Vector3<f64>,
    mut n: Vector3<f64>,
    tau: &mut [f64],
) {
    tau[j] += chain.links[j].axis_sign * n.z;
    for i in (1..=j).rev() {
        let k = &kin[i];
        let f_p = k.rot * f;
        n = k.rot * n + k.p.cross(&f_p);
        f = f_p;
        tau[i - 1] += chain.links[i - 1].axis_sign * n.z;
    }
}

pub(crate) fn rnea_with_realization(
    chain: &ChainDescription,
    real: &ModelRealization,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
    gravity_on: bool,
) -> DVector<f64> {
    let n = chain.n_links();
    let dof = chain.dof();
    let kin = kinematic_pass(chain, q, qd, qdd, gravity_on);
    let wrenches: Vec<_> = (0..n).map(|i| link_wrench(&real.links[i], &kin[i])).collect();
    let link_tau = backward_pass(chain, &kin, &wrenches);
    let mut tau = DVector::zeros(dof);
    for i in 0..n {
        tau[i] = link_tau[i];
    }
    for a in 0..dof {
        tau[a] += real.ia[a] * qdd[a] + real.fv[a] * qd[a];
    }
    tau
}

/// Reusable buffers for the simulation hot path; one per worker. Constant
/// per-link quantities (twist trig, frame offsets) are cached at setup.
pub(crate) struct SimWorkspace {
    kin: Vec<LinkKin>,
    m: DMatrix<f64>,
    comp: Vec<LinkDyn>,
    rots: Vec<Matrix3<f64>>,
    ps: Vec<Vector3<f64>>,
    alpha_trig: Vec<(f64, f64)>,
    rhs: Vec<f64>,
    pub qdd: Vec<f64>,
}

impl SimWorkspace {
    pub fn new(chain: &ChainDescription) -> Self {
        let n = chain.n_links();
        let dof = chain.dof();
        SimWorkspace {
            kin: Vec::with_capacity(n),
            m: DMatrix::zeros(dof, dof),
            comp: vec![LinkDyn::zero(); n],
            rots: vec![Matrix3::zeros(); n],
            ps: chain.links.iter().map(|l| l.origin_in_parent()).collect(),
            alpha_trig: chain.links.iter().map(|l| l.alpha.sin_cos()).collect(),
            rhs: vec![0.0; dof],
            qdd: vec![0.0; dof],
        }
    }

    /// Refresh the joint-dependent rotations; offsets and twists are cached.
    fn update_rotations(&mut self, chain: &ChainDescription, q: &[f64]) {
        for (i, link) in chain.links.iter().enumerate() {
            let theta = link.theta_offset + link.axis_sign * q[i];
            let (st, ct) = theta.sin_cos();
            let (sa, ca) = self.alpha_trig[i];
            self.rots[i] = Matrix3::new(
                ct, -st, 0.0, //
                ca * st, ca * ct, -sa, //
                sa * st, sa * ct, ca,
            );
        }
    }
}

/// Zero-acceleration kinematics with precomputed rotations (bias-torque path).
fn bias_kinematics_into(
    chain: &ChainDescription,
    qd: &[f64],
    kin: &mut Vec<LinkKin>,
    rots: &[Matrix3<f64>],
    ps: &[Vector3<f64>],
) {
    kin.clear();
    let mut w_p = Vector3::zeros();
    let mut dw_p = Vector3::zeros();
    let mut dv_p = Vector3::new(0.0, 0.0, chain.gravity);
    for (i, link) in chain.links.iter().enumerate() {
        let rot = rots[i];
        let p = ps[i];
        let rt = rot.transpose();
        let wz = link.axis_sign * qd[i];
        let w_rot = rt * w_p;
        let mut w = w_rot;
        w.z += wz;
        let mut dw = rt * dw_p;
        dw.x += w_rot.y * wz;
        dw.y += -w_rot.x * wz;
        let dv = rt * (dv_p + dw_p.cross(&p) + w_p.cross(&w_p.cross(&p)));
        kin.push(LinkKin { rot, p, w, dw, dv });
        w_p = w;
        dw_p = dw;
        dv_p = dv;
    }
}

fn crba_into(chain: &ChainDescription, real: &ModelRealization, ws: &mut SimWorkspace) {
    let n = chain.n_links();
    let dof = chain.dof();
    ws.m.fill(0.0);
    for i in (0..n).rev() {
        let mut c = real.links[i];
        if i + 1 < n {
            let child = ws.comp[i + 1];
            let r = ws.rots[i + 1];
            let p = ws.ps[i + 1];
            let h_r = r * child.h;
            let i_r = r * child.i * r.transpose();
            let shift = child.m * (p.norm_squared() * Matrix3::identity() - p * p.transpose())
                + 2.0 * p.dot(&h_r) * Matrix3::identity()
                - p * h_r.transpose()
                - h_r * p.transpose();
            c.m += child.m;
            c.h += h_r + child.m * p;
            c.i += i_r + shift;
        }
        ws.comp[i] = c;
    }
    for i in 0..n {
        let s_i = chain.links[i].axis_sign;
        let ez = Vector3::new(0.0, 0.0, s_i);
        let mut nvec = ws.comp[i].i * ez;
        let mut fvec = ez.cross(&ws.comp[i].h);
        ws.m[(i, i)] = s_i * nvec.z + real.ia[i];
        for k in (1..=i).rev() {
            let f_p = ws.rots[k] * fvec;
            nvec = ws.rots[k] * nvec + ws.ps[k].cross(&f_p);
            fvec = f_p;
            let t = chain.links[k - 1].axis_sign * nvec.z;
            ws.m[(k - 1, i)] = t;
            ws.m[(i, k - 1)] = t;
        }
    }
    for a in n..dof {
        ws.m[(a, a)] = real.ia[a];
    }
}

/// In-place Cholesky solve of `M x = rhs` on the workspace; `false` when the
/// matrix is not positive definite.
fn chol_solve_in_place(m: &mut DMatrix<f64>, rhs: &mut [f64]) -> bool {
    let n = rhs.len();
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= m[(j, k)] * m[(j, k)];
        }
        if d <= 0.0 {
            return false;
        }
        let d = d.sqrt();
        m[(j, j)] = d;
        for i in (j + 1)..n {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= m[(i, k)] * m[(j, k)];
            }
            m[(i, j)] = v / d;
        }
    }
    for i in 0..n {
        let mut v = rhs[i];
        for k in 0..i {
            v -= m[(i, k)] * rhs[k];
        }
        rhs[i] = v / m[(i, i)];
    }
    for i in (0..n).rev() {
        let mut v = rhs[i];
        for k in (i + 1)..n {
            v -= m[(k, i)] * rhs[k];
        }
        rhs[i] = v / m[(i, i)];
    }
    true
}

/// Allocation-free forward dynamics for the integrator hot path. Writes the
/// accelerations into `ws.qdd`.
pub(crate) fn forward_accel_ws(
    chain: &ChainDescription,
    real: &ModelRealization,
    q: &[f64],
    qd: &[f64],
    tau: &DVector<f64>,
    ws: &mut SimWorkspace,
) -> Result<()> {
    let n = chain.n_links();
    let dof = chain.dof();
    ws.update_rotations(chain, q);
    crba_into(chain, real, ws);
    // bias torque: rnea at qdd = 0 (gravity, velocity products, friction)
    debug_assert!(dof <= ZERO_QDD.len());
    bias_kinematics_into(chain, qd, &mut ws.kin, &ws.rots, &ws.ps);
    let mut f_child = Vector3::zeros();
    let mut n_child = Vector3::zeros();
    let mut have_child = false;
    for i in (0..n).rev() {
        let (mut f, mut nn) = link_wrench(&real.links[i], &ws.kin[i]);
        if have_child {
            let k_c = &ws.kin[i + 1];
            let f_in_parent = k_c.rot * f_child;
            f += f_in_parent;
            nn += k_c.rot * n_child + k_c.p.cross(&f_in_parent);
        }
        ws.rhs[i] = tau[i] - chain.links[i].axis_sign * nn.z - real.fv[i] * qd[i];
        f_child = f;
        n_child = nn;
        have_child = true;
    }
    for a in n..dof {
        ws.rhs[a] = tau[a] - real.fv[a] * qd[a];
    }
    if !chol_solve_in_place(&mut ws.m, &mut ws.rhs) {
        crba_into(chain, real, ws);
        let min_eig = ws.m.symmetric_eigenvalues().min();
        return Err(Error::NonPositiveDefinite { pose: q.to_vec(), min_eig });
    }
    ws.qdd.copy_from_slice(&ws.rhs);
    Ok(())
}

const ZERO_QDD: [f64; 32] = [0.0; 32];

/// Inverse dynamics: the torque required to realize `state`, including rotor
/// inertia and viscous friction, with gravity along the base -z axis.
pub fn rnea_torque(
    chain: &ChainDescription,
    params: &StandardInertialParams,
    state: &JointState,
) -> Result<DVector<f64>> {
    if state.dof() != chain.dof() {
        return Err(Error::DimensionMismatch {
            expected: chain.dof(),
            got: state.dof(),
            context: "rnea_torque state".into(),
        });
    }
    let real = ModelRealization::from_standard(params);
    Ok(rnea_with_realization(
        chain,
        &real,
        state.q.as_slice(),
        state.qd.as_slice(),
        state.qdd.as_slice(),
        true,
    ))
}

/// One dof × n_full regressor block over the full standard layout.
pub(crate) fn full_regressor_block(
    chain: &ChainDescription,
    layout: &FullParamLayout,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
) -> DMatrix<f64> {
    regressor_cols(chain, layout, &(0..layout.len()).collect::<Vec<_>>(), q, qd, qdd, true)
}

fn regressor_cols(
    chain: &ChainDescription,
    layout: &FullParamLayout,
    cols: &[usize],
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
    gravity_on: bool,
) -> DMatrix<f64> {
    let dof = chain.dof();
    let kin = kinematic_pass(chain, q, qd, qdd, gravity_on);
    let mut w = DMatrix::zeros(dof, cols.len());
    let mut tau = vec![0.0; chain.n_links()];
    for (c, &col) in cols.iter().enumerate() {
        let (kind, idx) = layout.col(col);
        match kind {
            ParamKind::Ia => w[(idx, c)] = qdd[idx],
            ParamKind::Fv => w[(idx, c)] = qd[idx],
            _ => {
                let unit = LinkDyn::unit(kind);
                let (f, n) = link_wrench(&unit, &kin[idx]);
                tau.iter_mut().for_each(|t| *t = 0.0);
                propagate_single(chain, &kin, idx, f, n, &mut tau);
                for (r, &t) in tau.iter().enumerate() {
                    w[(r, c)] = t;
                }
            }
        }
    }
    w
}

/// The dof × n_base identification regressor at one state: `W(state) * phi`
/// equals the inverse-dynamics torque of the expanded model for every phi.
pub fn regressor(
    chain: &ChainDescription,
    map: &BaseParamMapping,
    state: &JointState,
) -> Result<DMatrix<f64>> {
    regressor_opts(chain, map, state, true)
}

pub(crate) fn regressor_opts(
    chain: &ChainDescription,
    map: &BaseParamMapping,
    state: &JointState,
    gravity_on: bool,
) -> Result<DMatrix<f64>> {
    if state.dof() != chain.dof() {
        return Err(Error::DimensionMismatch {
            expected: chain.dof(),
            got: state.dof(),
            context: "regressor state".into(),
        });
    }
    Ok(regressor_cols(
        chain,
        &map.layout,
        map.survivor_cols(),
        state.q.as_slice(),
        state.qd.as_slice(),
        state.qdd.as_slice(),
        gravity_on,
    ))
}

/// Joint-space inertia matrix assembled column-wise from the regressor with
/// unit accelerations (zero velocity, gravity off). Symmetrized after an
/// asymmetry check of 1e-10.
pub fn inertia_matrix(
    chain: &ChainDescription,
    map: &BaseParamMapping,
    phi: &DVector<f64>,
    q: &[f64],
) -> DMatrix<f64> {
    let real = ModelRealization::from_base(map, phi);
    inertia_from_columns(chain, &real, q)
}

fn inertia_from_columns(chain: &ChainDescription, real: &ModelRealization, q: &[f64]) -> DMatrix<f64> {
    let dof = chain.dof();
    let qd = vec![0.0; dof];
    let mut m = DMatrix::zeros(dof, dof);
    let mut qdd = vec![0.0; dof];
    for j in 0..dof {
        qdd[j] = 1.0;
        let col = rnea_with_realization(chain, real, q, &qd, &qdd, false);
        qdd[j] = 0.0;
        m.set_column(j, &col);
    }
    let asym = (&m - m.transpose()).amax();
    assert!(
        asym <= 1e-10,
        "inertia matrix asymmetry {asym:.3e} exceeds tolerance"
    );
    0.5 * (&m + m.transpose())
}

/// Composite-rigid-body assembly of the same inertia matrix; used on hot
/// paths. Agrees with [`inertia_matrix`] to machine precision.
pub(crate) fn crba(chain: &ChainDescription, real: &ModelRealization, q: &[f64]) -> DMatrix<f64> {
    let n = chain.n_links();
    let dof = chain.dof();
    let mut m = DMatrix::zeros(dof, dof);

    let rots: Vec<Matrix3<f64>> = (0..n).map(|i| chain.links[i].rotation(q[i])).collect();
    let ps: Vec<Vector3<f64>> = (0..n).map(|i| chain.links[i].origin_in_parent()).collect();

    // Composite inertia of the subtree rooted at each link, in link coords.
    let mut comp = vec![LinkDyn::zero(); n];
    for i in (0..n).rev() {
        let mut c = real.links[i];
        if i + 1 < n {
            let child = comp[i + 1];
            let r = rots[i + 1];
            let p = ps[i + 1];
            let h_r = r * child.h;
            let i_r = r * child.i * r.transpose();
            let shift = child.m * (p.norm_squared() * Matrix3::identity() - p * p.transpose())
                + 2.0 * p.dot(&h_r) * Matrix3::identity()
                - p * h_r.transpose()
                - h_r * p.transpose();
            c.m += child.m;
            c.h += h_r + child.m * p;
            c.i += i_r + shift;
        }
        comp[i] = c;
    }

    // Column i: wrench of the composite subtree under a unit acceleration of
    // joint i, propagated toward the base.
    for i in 0..n {
        let s_i = chain.links[i].axis_sign;
        let ez = Vector3::new(0.0, 0.0, s_i);
        let mut nvec = comp[i].i * ez;
        let mut fvec = ez.cross(&comp[i].h);
        m[(i, i)] = s_i * nvec.z + real.ia[i];
        for k in (1..=i).rev() {
            let f_p = rots[k] * fvec;
            nvec = rots[k] * nvec + ps[k].cross(&f_p);
            fvec = f_p;
            let t = chain.links[k - 1].axis_sign * nvec.z;
            m[(k - 1, i)] = t;
            m[(i, k - 1)] = t;
        }
    }
    for a in n..dof {
        m[(a, a)] = real.ia[a];
    }
    m
}

/// Forward dynamics: accelerations produced by `tau` at `(q, qd)`.
///
/// Fails with the offending pose and minimum eigenvalue when the inertia
/// matrix is not positive definite there.
pub fn forward_accel(
    chain: &ChainDescription,
    map: &BaseParamMapping,
    phi: &DVector<f64>,
    q: &[f64],
    qd: &[f64],
    tau: &DVector<f64>,
) -> Result<DVector<f64>> {
    let real = ModelRealization::from_base(map, phi);
    forward_accel_real(chain, &real, q, qd, tau)
}

pub(crate) fn forward_accel_real(
    chain: &ChainDescription,
    real: &ModelRealization,
    q: &[f64],
    qd: &[f64],
    tau: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = crba(chain, real, q);
    let chol = match m.clone().cholesky() {
        Some(c) => c,
        None => {
            let min_eig = m.symmetric_eigenvalues().min();
            return Err(Error::NonPositiveDefinite {
                pose: q.to_vec(),
                min_eig,
            });
        }
    };
    let qdd0 = vec![0.0; chain.dof()];
    let bias = rnea_with_realization(chain, real, q, qd, &qdd0, true);
    Ok(chol.solve(&(tau - bias)))
}

/// Result of a grid audit of the inertia matrix.
#[derive(Debug, Clone)]
pub struct AuditScan {
    pub min_eig: f64,
    pub argmin: Vec<f64>,
    /// Worst poses in ascending eigenvalue order, at most `worst_k`.
    pub worst: Vec<(Vec<f64>, f64)>,
}

/// Positive-definiteness audit context: a deterministic Cartesian grid over
/// the joint-space domain (endpoints included, so domain corners are always
/// scanned). Decoupled axes enter only through their constant rotor inertia,
/// which the assembled matrix includes.
#[derive(Clone)]
pub struct AuditContext<'a> {
    pub chain: &'a ChainDescription,
    pub map: &'a BaseParamMapping,
    pub domain: Vec<(f64, f64)>,
    pub grid_points: usize,
    pub worst_k: usize,
}

impl<'a> AuditContext<'a> {
    pub fn new(chain: &'a ChainDescription, map: &'a BaseParamMapping) -> Self {
        AuditContext {
            chain,
            map,
            domain: chain.audit_domain.clone(),
            grid_points: 5,
            worst_k: 64,
        }
    }

    pub fn with_grid(mut self, grid_points: usize) -> Self {
        self.grid_points = grid_points;
        self
    }

    pub fn n_poses(&self) -> usize {
        self.grid_points.pow(self.domain.len() as u32)
    }

    fn pose(&self, index: usize) -> Vec<f64> {
        let g = self.grid_points;
        let mut rest = index;
        let mut pose = vec![0.0; self.chain.dof()];
        for (j, (lo, hi)) in self.domain.iter().enumerate() {
            let step = rest % g;
            rest /= g;
            pose[j] = lo + (hi - lo) * (step as f64) / ((g - 1) as f64);
        }
        pose
    }

    /// Scan the full grid: global minimum eigenvalue, its pose, and the
    /// worst-k list.
    pub fn scan(&self, phi: &DVector<f64>) -> AuditScan {
        assert!(self.grid_points >= 2, "audit needs at least 2 points per joint");
        let real = ModelRealization::from_base(self.map, phi);
        let total = self.n_poses();
        let chunk = 2048usize;
        let n_chunks = total.div_ceil(chunk);
        let k = self.worst_k;

        let locals = par::map_range(n_chunks, |c| {
            let start = c * chunk;
            let end = (start + chunk).min(total);
            let mut worst: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
            for idx in start..end {
                let pose = self.pose(idx);
                let m = crba(self.chain, &real, &pose);
                let lam = m.symmetric_eigenvalues().min();
                if worst.len() < k || lam < worst.last().unwrap().1 {
                    let at = worst.partition_point(|&(_, l)| l < lam);
                    worst.insert(at, (idx, lam));
                    worst.truncate(k);
                }
            }
            worst
        });

        let mut all: Vec<(usize, f64)> = locals.into_iter().flatten().collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        let (min_idx, min_eig) = all[0];
        AuditScan {
            min_eig,
            argmin: self.pose(min_idx),
            worst: all.into_iter().map(|(i, l)| (self.pose(i), l)).collect(),
        }
    }

    /// Minimum eigenvalue over an explicit pose list.
    pub fn min_over_poses(&self, phi: &DVector<f64>, poses: &[Vec<f64>]) -> f64 {
        let real = ModelRealization::from_base(self.map, phi);
        poses
            .iter()
            .map(|p| crba(self.chain, &real, p).symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Deterministic grid scan of the inertia-matrix minimum eigenvalue over the
/// audit domain.
pub fn min_eig_audit(
    chain: &ChainDescription,
    map: &BaseParamMapping,
    phi: &DVector<f64>,
    domain: &[(f64, f64)],
    grid_points: usize,
) -> AuditScan {
    let mut ctx = AuditContext::new(chain, map);
    ctx.domain = domain.to_vec();
    ctx.grid_points = grid_points;
    ctx.scan(phi)
}
