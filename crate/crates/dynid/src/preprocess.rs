//! Log preprocessing: anti-alias filtering, decimation to the working
//! sampling grids, numerical differentiation and regressor stacking.
//!
//! Filtering is zero-phase (one forward and one backward pass of a
//! second-order Butterworth section initialized at steady state), so constant
//! signals pass through bit-exactly and no phase lag leaks into the
//! regressor. Only target-grid samples are kept after filtering; off-grid
//! samples are discarded rather than reused as shifted records.

use nalgebra::{DMatrix, DVector};

use crate::chain::ChainDescription;
use crate::dynamics::{self, JointState};
use crate::error::{Error, Result};
use crate::excitation::Channels;
use crate::plant::SimLog;
use crate::reduction::BaseParamMapping;

/// Minimum number of target-grid samples a usable record must retain.
pub const MIN_SAMPLES: usize = 10;

/// A decimated log on one sampling grid.
#[derive(Debug, Clone)]
pub struct DecimatedLog {
    pub label: String,
    /// Sampling interval (s).
    pub ts: f64,
    pub ts_ms: u32,
    pub theta: Channels,
    pub tau: Channels,
}

/// A decimated log with derivative channels attached.
#[derive(Debug, Clone)]
pub struct DifferentiatedLog {
    pub label: String,
    pub ts: f64,
    pub ts_ms: u32,
    pub theta: Channels,
    pub theta_d: Channels,
    pub theta_dd: Channels,
    pub tau: Channels,
}

/// Stacked regression problem for one (trajectory, interval) case.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub label: String,
    pub ts_ms: u32,
    pub w_all: DMatrix<f64>,
    pub tau_all: DVector<f64>,
}

impl RegressionProblem {
    pub fn n_samples(&self) -> usize {
        self.tau_all.len() / self.dof()
    }

    pub fn dof(&self) -> usize {
        // row count is divisible by dof by construction
        self.w_all.nrows() / (self.tau_all.len() / self.w_all.nrows()).max(1)
    }

    /// Write the stacked matrices as a CSV pair for inspection.
    pub fn export_csv(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = String::new();
        for r in 0..self.w_all.nrows() {
            let row: Vec<String> = (0..self.w_all.ncols())
                .map(|c| format!("{}", self.w_all[(r, c)]))
                .collect();
            w.push_str(&row.join(","));
            w.push('\n');
        }
        std::fs::write(dir.join(format!("{}_T{}_W.csv", self.label, self.ts_ms)), w)?;
        let tau: Vec<String> = self.tau_all.iter().map(|v| format!("{v}")).collect();
        std::fs::write(
            dir.join(format!("{}_T{}_tau.csv", self.label, self.ts_ms)),
            tau.join("\n") + "\n",
        )?;
        Ok(())
    }
}

/// Second-order Butterworth low-pass (bilinear transform) coefficients.
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(cutoff_hz: f64, dt: f64) -> Self {
        let k = 2.0 / dt;
        let wa = k * (std::f64::consts::PI * cutoff_hz * dt).tan();
        let d = k * k + std::f64::consts::SQRT_2 * wa * k + wa * wa;
        Biquad {
            b: [wa * wa / d, 2.0 * wa * wa / d, wa * wa / d],
            a: [
                (2.0 * wa * wa - 2.0 * k * k) / d,
                (k * k - std::f64::consts::SQRT_2 * wa * k + wa * wa) / d,
            ],
        }
    }

    /// Magnitude response at `f` Hz for sampling period `dt`.
    fn gain(&self, f: f64, dt: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f * dt;
        let z = nalgebra::Complex::new(w.cos(), -w.sin());
        let num = nalgebra::Complex::new(self.b[0], 0.0) + z * self.b[1] + z * z * self.b[2];
        let den = nalgebra::Complex::new(1.0, 0.0) + z * self.a[0] + z * z * self.a[1];
        (num / den).norm()
    }

    /// One pass with steady-state initial conditions (constant in = out).
    fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(x.len());
        if x.is_empty() {
            return y;
        }
        let (mut x1, mut x2) = (x[0], x[0]);
        let (mut y1, mut y2) = (x[0], x[0]);
        for &xi in x {
            let yi = self.b[0] * xi + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            x2 = x1;
            x1 = xi;
            y2 = y1;
            y1 = yi;
            y.push(yi);
        }
        y
    }

    /// Forward-backward (zero-phase) pass.
    fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let mut fwd = self.filter(x);
        fwd.reverse();
        let mut back = self.filter(&fwd);
        back.reverse();
        back
    }
}

/// Anti-alias cutoff rule: 0.4 times the target Nyquist rate.
pub fn cutoff_hz(ts_ms: u32) -> f64 {
    0.4 / (2.0 * ts_ms as f64 * 1e-3)
}

/// Zero-phase low-pass both channels, then keep every target-grid sample
/// starting at t = 0.
pub fn lowpass_and_resample(log: &SimLog, ts_ms: u32) -> Result<DecimatedLog> {
    if ts_ms == 0 {
        return Err(Error::Invalid("sampling interval must be positive".into()));
    }
    let stride_f = ts_ms as f64 * 1e-3 / log.dt;
    if (stride_f - stride_f.round()).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "interval {ts_ms} ms is not a multiple of the log period {} s",
            log.dt
        )));
    }
    let stride = stride_f.round() as usize;
    let n_out = (log.len() + stride - 1) / stride;
    if n_out < MIN_SAMPLES {
        return Err(Error::LogTooShort { got: n_out, need: MIN_SAMPLES });
    }
    let dof = log.dof();
    let biquad = Biquad::lowpass(cutoff_hz(ts_ms), log.dt);

    let filtered: Vec<(Vec<f64>, Vec<f64>)> = crate::par::map_range(dof, |j| {
        let th: Vec<f64> = (0..log.len()).map(|k| log.theta_meas.row(k)[j]).collect();
        let tau: Vec<f64> = (0..log.len()).map(|k| log.tau_applied.row(k)[j]).collect();
        (biquad.filtfilt(&th), biquad.filtfilt(&tau))
    });

    let mut theta = Channels::with_capacity(dof, n_out);
    let mut tau = Channels::with_capacity(dof, n_out);
    let mut row_th = vec![0.0; dof];
    let mut row_tau = vec![0.0; dof];
    let mut k = 0;
    while k < log.len() {
        for j in 0..dof {
            row_th[j] = filtered[j].0[k];
            row_tau[j] = filtered[j].1[k];
        }
        theta.push_row(&row_th);
        tau.push_row(&row_tau);
        k += stride;
    }
    Ok(DecimatedLog {
        label: log.label.clone(),
        ts: ts_ms as f64 * 1e-3,
        ts_ms,
        theta,
        tau,
    })
}

/// Finite-difference kernel: central differences inside, second-order
/// one-sided stencils at the ends.
fn diff_kernel(theta: &Channels, h: f64) -> Result<(Channels, Channels)> {
    let n = theta.len();
    if n < 5 {
        return Err(Error::LogTooShort { got: n, need: 5 });
    }
    let dof = theta.dof();
    let mut qd = Channels::with_capacity(dof, n);
    let mut qdd = Channels::with_capacity(dof, n);
    let th = |k: usize, j: usize| theta.row(k)[j];
    let mut rowd = vec![0.0; dof];
    let mut rowdd = vec![0.0; dof];
    for k in 0..n {
        for j in 0..dof {
            if k == 0 {
                rowd[j] = (-3.0 * th(0, j) + 4.0 * th(1, j) - th(2, j)) / (2.0 * h);
                rowdd[j] = (2.0 * th(0, j) - 5.0 * th(1, j) + 4.0 * th(2, j) - th(3, j)) / (h * h);
            } else if k == n - 1 {
                rowd[j] = (3.0 * th(n - 1, j) - 4.0 * th(n - 2, j) + th(n - 3, j)) / (2.0 * h);
                rowdd[j] =
                    (2.0 * th(n - 1, j) - 5.0 * th(n - 2, j) + 4.0 * th(n - 3, j) - th(n - 4, j))
                        / (h * h);
            } else {
                rowd[j] = (th(k + 1, j) - th(k - 1, j)) / (2.0 * h);
                rowdd[j] = (th(k + 1, j) - 2.0 * th(k, j) + th(k - 1, j)) / (h * h);
            }
        }
        qd.push_row(&rowd);
        qdd.push_row(&rowdd);
    }
    Ok((qd, qdd))
}

/// Central differences on the decimated grid; second-order one-sided stencils
/// at the ends. Needs at least five samples.
pub fn differentiate(log: &DecimatedLog) -> Result<DifferentiatedLog> {
    let (qd, qdd) = diff_kernel(&log.theta, log.ts)?;
    Ok(DifferentiatedLog {
        label: log.label.clone(),
        ts: log.ts,
        ts_ms: log.ts_ms,
        theta: log.theta.clone(),
        theta_d: qd,
        theta_dd: qdd,
        tau: log.tau.clone(),
    })
}

/// Pipeline preparation of one case: zero-phase low-pass at the interval's
/// cutoff, differentiation on the fine control grid (where truncation across
/// the profile's jerk steps is negligible), then decimation of all channels
/// to the target grid.
pub fn prepare_regression(log: &SimLog, ts_ms: u32) -> Result<DifferentiatedLog> {
    if ts_ms == 0 {
        return Err(Error::Invalid("sampling interval must be positive".into()));
    }
    let stride_f = ts_ms as f64 * 1e-3 / log.dt;
    if (stride_f - stride_f.round()).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "interval {ts_ms} ms is not a multiple of the log period {} s",
            log.dt
        )));
    }
    let stride = stride_f.round() as usize;
    let n_out = (log.len() + stride - 1) / stride;
    if n_out < MIN_SAMPLES {
        return Err(Error::LogTooShort { got: n_out, need: MIN_SAMPLES });
    }
    let dof = log.dof();
    let biquad = Biquad::lowpass(cutoff_hz(ts_ms), log.dt);
    let filtered: Vec<(Vec<f64>, Vec<f64>)> = crate::par::map_range(dof, |j| {
        let th: Vec<f64> = (0..log.len()).map(|k| log.theta_meas.row(k)[j]).collect();
        let tau: Vec<f64> = (0..log.len()).map(|k| log.tau_applied.row(k)[j]).collect();
        (biquad.filtfilt(&th), biquad.filtfilt(&tau))
    });
    let mut theta_f = Channels::with_capacity(dof, log.len());
    let mut row = vec![0.0; dof];
    for k in 0..log.len() {
        for j in 0..dof {
            row[j] = filtered[j].0[k];
        }
        theta_f.push_row(&row);
    }
    let (qd_f, qdd_f) = diff_kernel(&theta_f, log.dt)?;

    let pick = |src: &Channels| -> Channels {
        let mut out = Channels::with_capacity(dof, n_out);
        let mut k = 0;
        while k < src.len() {
            out.push_row(src.row(k));
            k += stride;
        }
        out
    };
    let mut tau_f = Channels::with_capacity(dof, n_out);
    let mut k = 0;
    while k < log.len() {
        for j in 0..dof {
            row[j] = filtered[j].1[k];
        }
        tau_f.push_row(&row);
        k += stride;
    }
    Ok(DifferentiatedLog {
        label: log.label.clone(),
        ts: ts_ms as f64 * 1e-3,
        ts_ms,
        theta: pick(&theta_f),
        theta_d: pick(&qd_f),
        theta_dd: pick(&qdd_f),
        tau: tau_f,
    })
}

/// Stack per-sample regressor blocks and torque rows into one problem.
pub fn stack(
    chain: &ChainDescription,
    map: &BaseParamMapping,
    log: &DifferentiatedLog,
) -> Result<RegressionProblem> {
    let dof = chain.dof();
    if log.theta.dof() != dof {
        return Err(Error::DimensionMismatch {
            expected: dof,
            got: log.theta.dof(),
            context: "stack dof".into(),
        });
    }
    let n = log.theta.len();
    let n_base = map.n_base();
    let blocks = crate::par::map_range(n, |k| {
        let state = JointState::new(
            DVector::from_row_slice(log.theta.row(k)),
            DVector::from_row_slice(log.theta_d.row(k)),
            DVector::from_row_slice(log.theta_dd.row(k)),
        )
        .expect("consistent rows");
        dynamics::regressor(chain, map, &state).expect("consistent dof")
    });
    let mut w_all = DMatrix::zeros(n * dof, n_base);
    let mut tau_all = DVector::zeros(n * dof);
    for (k, block) in blocks.iter().enumerate() {
        w_all.rows_mut(k * dof, dof).copy_from(block);
        for j in 0..dof {
            tau_all[k * dof + j] = log.tau.row(k)[j];
        }
    }
    Ok(RegressionProblem {
        label: log.label.clone(),
        ts_ms: log.ts_ms,
        w_all,
        tau_all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_default_chain;
    use crate::reduction::numerical_base_reduction;
    use approx::assert_relative_eq;

    fn synthetic_log(n: usize, dof: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> SimLog {
        let mut theta = Channels::new(dof);
        let mut u = Channels::new(dof);
        for k in 0..n {
            let mut th = vec![0.0; dof];
            let mut uu = vec![0.0; dof];
            for j in 0..dof {
                let (a, b) = f(k, j);
                th[j] = a;
                uu[j] = b;
            }
            theta.push_row(&th);
            u.push_row(&uu);
        }
        SimLog {
            label: "syn".into(),
            dt: 0.001,
            theta_meas: theta.clone(),
            u_cmd: u.clone(),
            tau_applied: u,
        }
    }

    #[test]
    fn decimation_counts_and_grid_alignment() {
        let log = synthetic_log(4001, 2, |k, _| (k as f64, 0.0));
        let dec = lowpass_and_resample(&log, 40).unwrap();
        assert_eq!(dec.theta.len(), 101);
        // retained samples sit on exact multiples of ts
        for (i, k) in (0..log.len()).step_by(40).enumerate() {
            let t = k as f64 * log.dt;
            assert_relative_eq!(t, i as f64 * dec.ts, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_signal_is_unchanged() {
        let log = synthetic_log(2000, 3, |_, j| (0.3 * (j as f64 + 1.0), -0.7));
        let dec = lowpass_and_resample(&log, 20).unwrap();
        for k in 0..dec.theta.len() {
            for j in 0..3 {
                assert_relative_eq!(dec.theta.row(k)[j], 0.3 * (j as f64 + 1.0), epsilon = 1e-12);
                assert_relative_eq!(dec.tau.row(k)[j], -0.7, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn one_hertz_amplitude_survives_the_forty_ms_cutoff() {
        let f = 1.0;
        let log = synthetic_log(8000, 1, |k, _| {
            let t = k as f64 * 0.001;
            ((2.0 * std::f64::consts::PI * f * t).sin(), 0.0)
        });
        let dec = lowpass_and_resample(&log, 40).unwrap();
        // fit amplitude on the middle section (edges carry filter transients)
        let mid = dec.theta.len() / 4..3 * dec.theta.len() / 4;
        let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in mid {
            let t = k as f64 * dec.ts;
            let (s, c) = (2.0 * std::f64::consts::PI * f * t).sin_cos();
            let y = dec.theta.row(k)[0];
            ss += s * s;
            cc += c * c;
            sc += s * c;
            ys += y * s;
            yc += y * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        let amp = (a * a + b * b).sqrt();
        assert!(amp >= 0.98, "amplitude {amp}");
        // matches the analytic two-pass magnitude response
        let expected = Biquad::lowpass(cutoff_hz(40), 0.001).gain(f, 0.001).powi(2);
        assert!((amp - expected).abs() < 1e-3, "amp {amp} vs |H|^2 {expected}");
    }

    #[test]
    fn too_short_log_is_rejected() {
        let log = synthetic_log(300, 1, |k, _| (k as f64, 0.0));
        match lowpass_and_resample(&log, 40) {
            Err(Error::LogTooShort { got, need }) => {
                assert!(got < need);
            }
            other => panic!("expected short-log error, got {other:?}"),
        }
    }

    #[test]
    fn differentiation_is_exact_on_low_order_polynomials() {
        let v = 0.8;
        let c = 1.7;
        let n = 50;
        let ts = 0.04;
        let mut theta = Channels::new(2);
        for k in 0..n {
            let t = k as f64 * ts;
            theta.push_row(&[v * t, 0.5 * c * t * t]);
        }
        let dec = DecimatedLog {
            label: "poly".into(),
            ts,
            ts_ms: 40,
            theta: theta.clone(),
            tau: theta.clone(),
        };
        let d = differentiate(&dec).unwrap();
        for k in 0..n {
            assert_relative_eq!(d.theta_d.row(k)[0], v, epsilon = 1e-10);
            assert_relative_eq!(d.theta_dd.row(k)[0], 0.0, epsilon = 1e-9);
            assert_relative_eq!(d.theta_dd.row(k)[1], c, epsilon = 1e-9);
        }
    }

    #[test]
    fn differentiation_error_obeys_the_taylor_bound() {
        let f = 0.8;
        let w = 2.0 * std::f64::consts::PI * f;
        let ts = 0.02;
        let n = 200;
        let mut theta = Channels::new(1);
        for k in 0..n {
            theta.push_row(&[(w * k as f64 * ts).sin()]);
        }
        let dec = DecimatedLog {
            label: "sin".into(),
            ts,
            ts_ms: 20,
            theta: theta.clone(),
            tau: theta.clone(),
        };
        let d = differentiate(&dec).unwrap();
        let bound = (w * ts) * (w * ts) * w * w; // (2 pi f ts)^2 * max|qdd|
        for k in 0..n {
            let t = k as f64 * ts;
            let exact = -w * w * (w * t).sin();
            assert!(
                (d.theta_dd.row(k)[0] - exact).abs() <= bound,
                "k={k}: err {} bound {bound}",
                (d.theta_dd.row(k)[0] - exact).abs()
            );
        }
    }

    #[test]
    fn stacked_rows_count_and_lossless_blocks() {
        let chain = build_default_chain().unwrap();
        let map = numerical_base_reduction(&chain, 300, 2).unwrap();
        let dof = chain.dof();
        let mut theta = Channels::new(dof);
        let mut tau = Channels::new(dof);
        for k in 0..6 {
            theta.push_row(&vec![0.1 * k as f64; dof]);
            tau.push_row(&vec![k as f64; dof]);
        }
        let d = differentiate(&DecimatedLog {
            label: "two".into(),
            ts: 0.04,
            ts_ms: 40,
            theta,
            tau,
        })
        .unwrap();
        let p = stack(&chain, &map, &d).unwrap();
        assert_eq!(p.w_all.nrows(), 6 * dof);
        assert_eq!(p.w_all.ncols(), 39);
        // unstacking recovers per-sample torque rows bit-exactly
        for k in 0..6 {
            for j in 0..dof {
                assert_eq!(p.tau_all[k * dof + j], k as f64);
            }
        }
    }

    #[test]
    fn quadratic_reference_data_has_negligible_residual() {
        // build the decimated log directly from a quadratic joint path with
        // oracle torques, so differentiation is exact and the residual of the
        // true parameters reflects only stacking
        let chain = build_default_chain().unwrap();
        let map = numerical_base_reduction(&chain, 300, 2).unwrap();
        let phi = map.reduce(&chain.truth).unwrap();
        let dof = chain.dof();
        let ts = 0.04;
        let n = 40;
        let a0: Vec<f64> = (0..dof).map(|j| 0.05 + 0.01 * j as f64).collect();
        let v0: Vec<f64> = (0..dof).map(|j| 0.1 - 0.01 * j as f64).collect();
        let mut theta = Channels::new(dof);
        let mut tau = Channels::new(dof);
        for k in 0..n {
            let t = k as f64 * ts;
            let q: Vec<f64> = (0..dof)
                .map(|j| -0.3 + v0[j] * t + 0.5 * a0[j] * t * t + if j == 3 { -1.0 } else { 0.0 })
                .collect();
            let qd: Vec<f64> = (0..dof).map(|j| v0[j] + a0[j] * t).collect();
            let qdd: Vec<f64> = a0.clone();
            let state = JointState::new(
                DVector::from_vec(q.clone()),
                DVector::from_vec(qd),
                DVector::from_vec(qdd),
            )
            .unwrap();
            let torque = dynamics::rnea_torque(&chain, &chain.truth, &state).unwrap();
            theta.push_row(&q);
            tau.push_row(torque.as_slice());
        }
        let d = differentiate(&DecimatedLog {
            label: "quad".into(),
            ts,
            ts_ms: 40,
            theta,
            tau,
        })
        .unwrap();
        let p = stack(&chain, &map, &d).unwrap();
        let residual = &p.tau_all - &p.w_all * &phi.values;
        let rms = (residual.norm_squared() / residual.len() as f64).sqrt();
        assert!(rms <= 1e-6, "true-parameter residual rms {rms:.3e}");
    }
}

/// Decimate without filtering (diagnostic path).
#[doc(hidden)]
pub fn resample_unfiltered(log: &SimLog, ts_ms: u32) -> Result<DecimatedLog> {
    let stride = (ts_ms as f64 * 1e-3 / log.dt).round() as usize;
    let dof = log.dof();
    let mut theta = Channels::new(dof);
    let mut tau = Channels::new(dof);
    let mut k = 0;
    while k < log.len() {
        theta.push_row(log.theta_meas.row(k));
        tau.push_row(log.tau_applied.row(k));
        k += stride;
    }
    Ok(DecimatedLog { label: log.label.clone(), ts: ts_ms as f64 * 1e-3, ts_ms, theta, tau })
}
