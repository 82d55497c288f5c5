//! Closed-loop plant simulation.
//!
//! The realization layer drives the rigid-body plant with a fixed
//! feedforward-plus-PD controller using pseudo-differentiated velocity
//! feedback at the control rate, while the continuous dynamics are integrated
//! with fixed trapezoidal (Heun) substeps. Imperfections — link-side encoder
//! quantization, command dead time and torque (current-sensing) noise — can
//! be switched off wholesale, which is the ideal mode the refinement stage
//! simulates in.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::chain::ChainDescription;
use crate::config::{GainsConfig, PlantConfig};
use crate::dynamics::{self, ModelRealization};
use crate::error::{Error, Result};
use crate::excitation::{Channels, SampledTrajectory};
use crate::reduction::BaseParamMapping;

/// Diagonal FF+PD realization gains.
#[derive(Debug, Clone)]
pub struct ControllerGains {
    pub kp: DVector<f64>,
    pub kv: DVector<f64>,
    /// Realization inertia (diagonal).
    pub mhat: DVector<f64>,
    /// Realization damping (diagonal).
    pub dhat: DVector<f64>,
    /// Pseudo-differentiation time constant (s).
    pub tf: f64,
}

impl ControllerGains {
    /// Resolve gains for a chain: scalar gains broadcast per axis; the
    /// realization inertia defaults to the plant's diagonal inertia at the
    /// nominal posture and the damping to its viscous friction.
    pub fn resolve(
        cfg: &GainsConfig,
        chain: &ChainDescription,
        map: &BaseParamMapping,
        phi: &DVector<f64>,
    ) -> Result<Self> {
        let dof = chain.dof();
        if cfg.kp <= 0.0 || cfg.kv <= 0.0 || cfg.tf <= 0.0 {
            return Err(Error::Config("gains kp, kv, tf must be positive".into()));
        }
        let mhat = if cfg.mhat.is_empty() {
            let m = dynamics::inertia_matrix(chain, map, phi, &chain.nominal_posture);
            DVector::from_iterator(dof, (0..dof).map(|j| m[(j, j)]))
        } else {
            if cfg.mhat.len() != dof {
                return Err(Error::Config("mhat override must have one entry per axis".into()));
            }
            DVector::from_row_slice(&cfg.mhat)
        };
        let dhat = if cfg.dhat.is_empty() {
            DVector::from_row_slice(&chain.truth.viscous_friction)
        } else {
            if cfg.dhat.len() != dof {
                return Err(Error::Config("dhat override must have one entry per axis".into()));
            }
            DVector::from_row_slice(&cfg.dhat)
        };
        Ok(ControllerGains {
            kp: DVector::from_element(dof, cfg.kp),
            kv: DVector::from_element(dof, cfg.kv),
            mhat,
            dhat,
            tf: cfg.tf,
        })
    }
}

/// Discrete pseudo-differentiation s/(1 + tf s), trapezoidal realization,
/// zero initial state.
pub fn pseudo_diff(samples: &[f64], tf: f64, dt: f64) -> Result<Vec<f64>> {
    if dt <= 0.0 {
        return Err(Error::Invalid("pseudo_diff needs dt > 0".into()));
    }
    let mut out = Vec::with_capacity(samples.len());
    let mut filt = PseudoDiff::new(1, tf, dt);
    let mut y = [0.0];
    for (k, &x) in samples.iter().enumerate() {
        filt.step(&[x], &mut y, k == 0);
        out.push(y[0]);
    }
    Ok(out)
}

/// Vectorized incremental form of [`pseudo_diff`].
struct PseudoDiff {
    a: f64, // (2 tf - dt) / (2 tf + dt)
    b: f64, // 2 / (2 tf + dt)
    prev_x: Vec<f64>,
    prev_y: Vec<f64>,
}

impl PseudoDiff {
    fn new(dof: usize, tf: f64, dt: f64) -> Self {
        PseudoDiff {
            a: (2.0 * tf - dt) / (2.0 * tf + dt),
            b: 2.0 / (2.0 * tf + dt),
            prev_x: vec![0.0; dof],
            prev_y: vec![0.0; dof],
        }
    }

    fn step(&mut self, x: &[f64], y: &mut [f64], first: bool) {
        for j in 0..x.len() {
            let y_new = if first {
                0.0 // zero initial state
            } else {
                self.a * self.prev_y[j] + self.b * (x[j] - self.prev_x[j])
            };
            y[j] = y_new;
            self.prev_x[j] = x[j];
            self.prev_y[j] = y_new;
        }
    }
}

/// FF+PD command: `u = mhat*(kp*(q_ref - q) + kv*(qd_ref - qd_hat) + qdd_ref)
/// + dhat*qd_ref`, evaluated per axis.
pub fn ffpd_command(
    gains: &ControllerGains,
    q_ref: &[f64],
    qd_ref: &[f64],
    qdd_ref: &[f64],
    q_meas: &[f64],
    qd_hat: &[f64],
) -> DVector<f64> {
    let dof = q_ref.len();
    DVector::from_iterator(
        dof,
        (0..dof).map(|j| {
            gains.mhat[j]
                * (gains.kp[j] * (q_ref[j] - q_meas[j]) + gains.kv[j] * (qd_ref[j] - qd_hat[j])
                    + qdd_ref[j])
                + gains.dhat[j] * qd_ref[j]
        }),
    )
}

/// Current-to-torque conversion for one axis.
pub fn torque_from_current(chain: &ChainDescription, current: f64, axis: usize) -> Result<f64> {
    chain
        .torque_constants
        .get(axis)
        .map(|k| k * current)
        .ok_or(Error::DimensionMismatch {
            expected: chain.dof(),
            got: axis,
            context: "torque_from_current axis".into(),
        })
}

/// Closed-loop measurement log on the control grid.
#[derive(Debug, Clone)]
pub struct SimLog {
    pub label: String,
    pub dt: f64,
    /// Sampled (quantized) joint positions.
    pub theta_meas: Channels,
    /// Controller output before the realization layer.
    pub u_cmd: Channels,
    /// Torque applied to the plant at each sample instant; this is the
    /// measured-torque channel identification consumes.
    pub tau_applied: Channels,
}

impl SimLog {
    pub fn len(&self) -> usize {
        self.theta_meas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_meas.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.theta_meas.dof()
    }

    /// CSV export: `t, th1..thn, u1..un` (the u columns carry the
    /// measured-torque channel).
    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let dof = self.dof();
        let mut header = String::from("t");
        for j in 1..=dof {
            header.push_str(&format!(",th{j}"));
        }
        for j in 1..=dof {
            header.push_str(&format!(",u{j}"));
        }
        writeln!(w, "{header}")?;
        for k in 0..self.len() {
            let mut line = format!("{}", k as f64 * self.dt);
            for v in self.theta_meas.row(k) {
                line.push_str(&format!(",{v}"));
            }
            for v in self.tau_applied.row(k) {
                line.push_str(&format!(",{v}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn from_csv(label: &str, text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| Error::Invalid(format!("log csv: {e}")))?
            .clone();
        let dof = (headers.len() - 1) / 2;
        if headers.len() != 1 + 2 * dof {
            return Err(Error::Invalid("log csv must have t, th*, u* columns".into()));
        }
        let mut theta = Channels::new(dof);
        let mut u = Channels::new(dof);
        let mut dt = 0.0;
        let mut row_idx = 0usize;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Invalid(format!("log csv: {e}")))?;
            let t: f64 = rec[0].parse().map_err(|_| Error::Invalid("bad t".into()))?;
            if row_idx == 1 {
                dt = t;
            }
            let mut th = Vec::with_capacity(dof);
            let mut uu = Vec::with_capacity(dof);
            for j in 0..dof {
                th.push(rec[1 + j].parse::<f64>().map_err(|_| Error::Invalid("bad sample".into()))?);
                uu.push(rec[1 + dof + j].parse::<f64>().map_err(|_| Error::Invalid("bad sample".into()))?);
            }
            theta.push_row(&th);
            u.push_row(&uu);
            row_idx += 1;
        }
        Ok(SimLog {
            label: label.to_string(),
            dt,
            theta_meas: theta.clone(),
            u_cmd: u.clone(),
            tau_applied: u,
        })
    }
}

/// Command index active at a global integration substep under a dead time of
/// `delay_substeps`; `None` before the first command arrives.
pub(crate) fn delayed_tick_index(
    global_substep: usize,
    delay_substeps: usize,
    substeps_per_tick: usize,
) -> Option<usize> {
    let shifted = global_substep as isize - delay_substeps as isize;
    if shifted < 0 {
        None
    } else {
        Some(shifted as usize / substeps_per_tick)
    }
}

fn quantize(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

/// Stationary band-limited noise: white innovations through a single pole,
/// scaled so the output standard deviation equals `std`.
struct ColoredNoise {
    state: Vec<f64>,
    alpha: f64,
    innovation: Normal<f64>,
}

impl ColoredNoise {
    fn new(dof: usize, std: f64, bandwidth_hz: f64, dt: f64) -> Self {
        let alpha = (-2.0 * std::f64::consts::PI * bandwidth_hz * dt).exp();
        let innovation_std = std * (1.0 - alpha * alpha).sqrt();
        ColoredNoise {
            state: vec![0.0; dof],
            alpha,
            innovation: Normal::new(0.0, innovation_std).expect("valid std"),
        }
    }

    fn add_to(&mut self, torque: &mut DVector<f64>, rng: &mut ChaCha12Rng) {
        for j in 0..self.state.len() {
            self.state[j] = self.alpha * self.state[j] + self.innovation.sample(rng);
            torque[j] += self.state[j];
        }
    }
}

/// Simulate the closed loop along a reference trajectory.
///
/// With `imperfections_on`, encoder quantization, command dead time and
/// per-tick torque noise (seeded) are active; without, the loop is ideal and
/// fully deterministic, which is the configuration the refinement stage uses.
pub fn simulate_closed_loop(
    chain: &ChainDescription,
    map: &BaseParamMapping,
    phi: &DVector<f64>,
    trajectory: &SampledTrajectory,
    gains: &ControllerGains,
    plant: &PlantConfig,
    imperfections_on: bool,
    noise_seed: u64,
) -> Result<SimLog> {
    plant.validate()?;
    let dof = chain.dof();
    if trajectory.dof() != dof {
        return Err(Error::DimensionMismatch {
            expected: dof,
            got: trajectory.dof(),
            context: "trajectory dof".into(),
        });
    }
    let real = ModelRealization::from_base(map, phi);
    let n = trajectory.len();
    let substeps = plant.substeps();
    let h = plant.integration_step;
    let delay = if imperfections_on { plant.dead_time_substeps() } else { 0 };
    let enc_step = plant.encoder_step();

    let mut rng = ChaCha12Rng::seed_from_u64(noise_seed);
    let mut noise = if imperfections_on && plant.torque_noise_std > 0.0 {
        Some(ColoredNoise::new(
            dof,
            plant.torque_noise_std,
            plant.torque_noise_bandwidth_hz,
            trajectory.dt,
        ))
    } else {
        None
    };

    let mut q = trajectory.q.row(0).to_vec();
    let mut qd = vec![0.0; dof];
    let mut filt = PseudoDiff::new(dof, gains.tf, trajectory.dt);
    let mut qd_hat = vec![0.0; dof];

    let mut log_theta = Channels::with_capacity(dof, n);
    let mut log_u = Channels::with_capacity(dof, n);
    let mut log_tau = Channels::with_capacity(dof, n);
    let mut commands: Vec<DVector<f64>> = Vec::with_capacity(n);
    let zeros = DVector::zeros(dof);

    let mut theta_meas = vec![0.0; dof];
    let mut scratch = HeunScratch::new(chain);
    // settle onto the start posture before the record begins, so the log
    // opens with the loop already holding the posture rather than catching
    // the arm mid-sag
    let settle_ticks = (plant.settle_time / trajectory.dt).round() as usize;
    let hold_q = trajectory.q.row(0).to_vec();
    let hold_zero = vec![0.0; dof];
    for s in 0..settle_ticks {
        for j in 0..dof {
            theta_meas[j] = if imperfections_on { quantize(q[j], enc_step) } else { q[j] };
        }
        filt.step(&theta_meas, &mut qd_hat, s == 0);
        let mut u = ffpd_command(gains, &hold_q, &hold_zero, &hold_zero, &theta_meas, &qd_hat);
        for j in 0..dof {
            u[j] = u[j].clamp(-plant.torque_clamp, plant.torque_clamp);
        }
        let mut applied = u;
        if let Some(cn) = &mut noise {
            cn.add_to(&mut applied, &mut rng);
        }
        commands.push(applied);
        for sub in 0..substeps {
            let tau = match delayed_tick_index(s * substeps + sub, delay, substeps) {
                Some(idx) => &commands[idx],
                None => &zeros,
            };
            heun_step(chain, &real, &mut q, &mut qd, tau, h, &mut scratch)?;
        }
    }
    let settle_offset = settle_ticks * substeps;
    for k in 0..n {
        for j in 0..dof {
            theta_meas[j] = if imperfections_on { quantize(q[j], enc_step) } else { q[j] };
        }
        filt.step(&theta_meas, &mut qd_hat, settle_ticks == 0 && k == 0);
        let mut u = ffpd_command(
            gains,
            trajectory.q.row(k),
            trajectory.qd.row(k),
            trajectory.qdd.row(k),
            &theta_meas,
            &qd_hat,
        );
        for j in 0..dof {
            u[j] = u[j].clamp(-plant.torque_clamp, plant.torque_clamp);
        }
        log_theta.push_row(&theta_meas);
        log_u.push_row(u.as_slice());
        let mut applied = u.clone();
        if let Some(cn) = &mut noise {
            cn.add_to(&mut applied, &mut rng);
        }
        commands.push(applied);

        // measured-torque channel: what drives the plant at this sample instant
        let tau_now = match delayed_tick_index(settle_offset + k * substeps, delay, substeps) {
            Some(idx) => &commands[idx],
            None => &zeros,
        };
        log_tau.push_row(tau_now.as_slice());

        if k + 1 == n {
            break; // final sample logged; no further integration needed
        }
        for s in 0..substeps {
            let tau = match delayed_tick_index(settle_offset + k * substeps + s, delay, substeps) {
                Some(idx) => &commands[idx],
                None => &zeros,
            };
            heun_step(chain, &real, &mut q, &mut qd, tau, h, &mut scratch)?;
            for j in 0..dof {
                if qd[j].abs() > plant.velocity_limit {
                    return Err(Error::Divergence {
                        t: (k * substeps + s) as f64 * h,
                        axis: j,
                        value: qd[j],
                    });
                }
            }
        }
    }

    Ok(SimLog {
        label: trajectory.label.clone(),
        dt: trajectory.dt,
        theta_meas: log_theta,
        u_cmd: log_u,
        tau_applied: log_tau,
    })
}

struct HeunScratch {
    ws: dynamics::SimWorkspace,
    a1: Vec<f64>,
    q1: Vec<f64>,
    qd1: Vec<f64>,
}

impl HeunScratch {
    fn new(chain: &ChainDescription) -> Self {
        let dof = chain.dof();
        HeunScratch {
            ws: dynamics::SimWorkspace::new(chain),
            a1: vec![0.0; dof],
            q1: vec![0.0; dof],
            qd1: vec![0.0; dof],
        }
    }
}

fn heun_step(
    chain: &ChainDescription,
    real: &ModelRealization,
    q: &mut [f64],
    qd: &mut [f64],
    tau: &DVector<f64>,
    h: f64,
    s: &mut HeunScratch,
) -> Result<()> {
    let dof = q.len();
    dynamics::forward_accel_ws(chain, real, q, qd, tau, &mut s.ws)?;
    s.a1.copy_from_slice(&s.ws.qdd);
    for j in 0..dof {
        s.q1[j] = q[j] + h * qd[j];
        s.qd1[j] = qd[j] + h * s.a1[j];
    }
    dynamics::forward_accel_ws(chain, real, &s.q1, &s.qd1, tau, &mut s.ws)?;
    for j in 0..dof {
        q[j] += 0.5 * h * (qd[j] + s.qd1[j]);
        qd[j] += 0.5 * h * (s.a1[j] + s.ws.qdd[j]);
    }
    Ok(())
}


#[cfg(test)]
mod perf_probe {
    use super::*;
    use crate::config::RunConfig;
    use crate::reduction::numerical_base_reduction;

    #[test]
    #[ignore]
    fn sim_throughput() {
        let cfg = RunConfig::bundled().unwrap();
        let chain = cfg.chain.build().unwrap();
        let map = numerical_base_reduction(&chain, 300, 7).unwrap();
        let phi = map.reduce(&chain.truth).unwrap().values;
        let gains = ControllerGains::resolve(&cfg.gains, &chain, &map, &phi).unwrap();
        let cat = crate::excitation::build_catalog(&cfg.catalog).unwrap();
        let traj = cat.get("PA04").unwrap();
        let t0 = std::time::Instant::now();
        let log = simulate_closed_loop(&chain, &map, &phi, traj, &gains, &cfg.plant, true, 1).unwrap();
        let wall = t0.elapsed().as_secs_f64();
        println!(
            "PA04: {} ticks ({:.1} s sim) in {:.3} s wall -> {:.1} ms per sim-second",
            log.len(),
            traj.duration(),
            wall,
            1000.0 * wall / traj.duration()
        );
    }
}
