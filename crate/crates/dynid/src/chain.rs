//! Serial-chain description: modified-DH geometry, standard inertial
//! parameters, and the bundled default arm.
//!
//! A chain is a list of inertial links (each a revolute joint with a rigid
//! body attached) plus optional trailing rotor-only axes that contribute
//! rotor inertia and viscous friction but no link dynamics. The bundled
//! default describes an 8-axis arm: 7 inertial links and one hand axis.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One modified-DH row. The transform from the parent frame to this link's
/// frame is `Rx(alpha) * Tx(a) * Rz(theta_offset + axis_sign*q) * Tz(d)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DhLink {
    /// Twist about the parent x-axis (rad).
    pub alpha: f64,
    /// Offset along the parent x-axis (m).
    pub a: f64,
    /// Offset along this link's z-axis (m).
    pub d: f64,
    /// Constant joint-angle offset (rad).
    pub theta_offset: f64,
    /// Joint axis direction along +z (+1) or -z (-1).
    pub axis_sign: f64,
}

impl DhLink {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.alpha, self.a, self.d, self.theta_offset, self.axis_sign];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("DH row contains non-finite entries".into()));
        }
        if self.axis_sign != 1.0 && self.axis_sign != -1.0 {
            return Err(Error::Config(format!(
                "axis_sign must be +1 or -1, got {}",
                self.axis_sign
            )));
        }
        Ok(())
    }

    /// Rotation from this link's frame to the parent frame at joint angle `q`.
    pub fn rotation(&self, q: f64) -> Matrix3<f64> {
        let theta = self.theta_offset + self.axis_sign * q;
        let (st, ct) = theta.sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        Matrix3::new(
            ct, -st, 0.0, //
            ca * st, ca * ct, -sa, //
            sa * st, sa * ct, ca,
        )
    }

    /// Origin of this link's frame expressed in the parent frame.
    pub fn origin_in_parent(&self) -> Vector3<f64> {
        let (sa, ca) = self.alpha.sin_cos();
        Vector3::new(self.a, -sa * self.d, ca * self.d)
    }
}

/// Standard inertial parameters of one link, about the link-frame origin.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinkInertia {
    /// Mass (kg).
    pub mass: f64,
    /// First moments [MX, MY, MZ] (kg·m).
    pub first_moment: [f64; 3],
    /// Inertia tensor entries [XX, XY, XZ, YY, YZ, ZZ] (kg·m²).
    pub inertia: [f64; 6],
}

impl LinkInertia {
    pub fn zero() -> Self {
        LinkInertia {
            mass: 0.0,
            first_moment: [0.0; 3],
            inertia: [0.0; 6],
        }
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        let [xx, xy, xz, yy, yz, zz] = self.inertia;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    pub fn first_moment_vec(&self) -> Vector3<f64> {
        Vector3::from_row_slice(&self.first_moment)
    }
}

/// Full standard parameter set: per-link inertial blocks plus per-axis rotor
/// inertia and viscous friction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardInertialParams {
    pub links: Vec<LinkInertia>,
    /// Rotor inertia per axis (kg·m²), length = dof.
    pub rotor_inertia: Vec<f64>,
    /// Viscous friction per axis (N·m·s/rad), length = dof.
    pub viscous_friction: Vec<f64>,
}

impl StandardInertialParams {
    pub fn zeros(n_links: usize, dof: usize) -> Self {
        StandardInertialParams {
            links: vec![LinkInertia::zero(); n_links],
            rotor_inertia: vec![0.0; dof],
            viscous_friction: vec![0.0; dof],
        }
    }

    /// Zero the products of inertia (XY, XZ, YZ) of every link.
    pub fn with_products_of_inertia_zeroed(&self) -> Self {
        let mut out = self.clone();
        for link in &mut out.links {
            link.inertia[1] = 0.0;
            link.inertia[2] = 0.0;
            link.inertia[4] = 0.0;
        }
        out
    }
}

/// Kinematic and inertial description of a serial chain; immutable after
/// construction and safe to share across threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDescription {
    pub name: String,
    pub links: Vec<DhLink>,
    /// Trailing decoupled axes (rotor inertia + friction only).
    pub extra_axes: usize,
    /// Gravitational acceleration magnitude (m/s²), along the base -z axis.
    pub gravity: f64,
    /// Plant ground-truth parameters.
    pub truth: StandardInertialParams,
    /// Current-to-torque constants per axis (N·m/A).
    pub torque_constants: Vec<f64>,
    /// Nominal posture (rad), length = dof.
    pub nominal_posture: Vec<f64>,
    /// Audit domain per inertial link (rad).
    pub audit_domain: Vec<(f64, f64)>,
    /// Renames applied to discovered base-parameter groups (platform
    /// labeling conventions), e.g. `MY7 -> MZ7`.
    pub base_name_overrides: Vec<(String, String)>,
}

impl ChainDescription {
    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn dof(&self) -> usize {
        self.links.len() + self.extra_axes
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::Config("chain has no links".into()));
        }
        for link in &self.links {
            link.validate()?;
        }
        let dof = self.dof();
        if self.truth.links.len() != self.n_links() {
            return Err(Error::Config(format!(
                "truth has {} link blocks for {} links",
                self.truth.links.len(),
                self.n_links()
            )));
        }
        if self.truth.rotor_inertia.len() != dof || self.truth.viscous_friction.len() != dof {
            return Err(Error::Config("rotor/friction lists must have one entry per axis".into()));
        }
        if self.torque_constants.len() != dof {
            return Err(Error::Config("torque_constants must have one entry per axis".into()));
        }
        if self.nominal_posture.len() != dof {
            return Err(Error::Config("nominal_posture must have one entry per axis".into()));
        }
        if self.audit_domain.len() != self.n_links() {
            return Err(Error::Config("audit_domain must have one interval per inertial link".into()));
        }
        for (lo, hi) in &self.audit_domain {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config("audit_domain intervals must be finite with lo < hi".into()));
            }
        }
        if self.truth.links.iter().any(|l| l.mass <= 0.0) {
            return Err(Error::Config("plant ground-truth masses must be positive".into()));
        }
        Ok(())
    }

    /// Base-frame pose (rotation, origin) of every link frame at posture `q`.
    pub fn link_poses(&self, q: &[f64]) -> Vec<(Matrix3<f64>, Vector3<f64>)> {
        let mut out = Vec::with_capacity(self.n_links());
        let mut rot = Matrix3::identity();
        let mut pos = Vector3::zeros();
        for (i, link) in self.links.iter().enumerate() {
            pos += rot * link.origin_in_parent();
            rot *= link.rotation(q[i]);
            out.push((rot, pos));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Config file schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    pub name: String,
    pub gravity: f64,
    #[serde(default)]
    pub extra_axes: usize,
    pub nominal_posture_deg: Vec<f64>,
    pub audit_domain_deg: Vec<[f64; 2]>,
    pub torque_constants: Vec<f64>,
    pub links: Vec<LinkConfig>,
    pub actuation: ActuationConfig,
    #[serde(default)]
    pub base_names: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkConfig {
    pub alpha_deg: f64,
    pub a: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset_deg: f64,
    #[serde(default = "one")]
    pub axis_sign: f64,
    pub mass: f64,
    pub first_moment: [f64; 3],
    pub inertia: [f64; 6],
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActuationConfig {
    pub rotor_inertia: Vec<f64>,
    pub viscous_friction: Vec<f64>,
}

impl ChainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("chain config: {e}")))
    }

    pub fn build(&self) -> Result<ChainDescription> {
        let links: Vec<DhLink> = self
            .links
            .iter()
            .map(|l| DhLink {
                alpha: l.alpha_deg.to_radians(),
                a: l.a,
                d: l.d,
                theta_offset: l.theta_offset_deg.to_radians(),
                axis_sign: l.axis_sign,
            })
            .collect();
        let truth = StandardInertialParams {
            links: self
                .links
                .iter()
                .map(|l| LinkInertia {
                    mass: l.mass,
                    first_moment: l.first_moment,
                    inertia: l.inertia,
                })
                .collect(),
            rotor_inertia: self.actuation.rotor_inertia.clone(),
            viscous_friction: self.actuation.viscous_friction.clone(),
        };
        let chain = ChainDescription {
            name: self.name.clone(),
            links,
            extra_axes: self.extra_axes,
            gravity: self.gravity,
            truth,
            torque_constants: self.torque_constants.clone(),
            nominal_posture: self.nominal_posture_deg.iter().map(|d| d.to_radians()).collect(),
            audit_domain: self
                .audit_domain_deg
                .iter()
                .map(|[lo, hi]| (lo.to_radians(), hi.to_radians()))
                .collect(),
            base_name_overrides: self
                .base_names
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        };
        chain.validate()?;
        Ok(chain)
    }
}

/// Build the bundled default chain (7 inertial links + 1 hand axis).
pub fn build_default_chain() -> Result<ChainDescription> {
    crate::config::RunConfig::bundled()?.chain.build()
}
