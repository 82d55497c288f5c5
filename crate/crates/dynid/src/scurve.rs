//! Seven-phase double-S (bounded-jerk) point-to-point profiles.
//!
//! A profile covers a nonnegative distance from rest to rest under velocity,
//! acceleration and jerk caps, with a constant-velocity phase whenever the
//! distance allows one. Position, velocity and acceleration are evaluated in
//! closed form from the constant-jerk segment boundaries, so acceleration is
//! continuous everywhere and the endpoints are matched exactly.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Boundary {
    t: f64,
    x: f64,
    v: f64,
    a: f64,
    jerk: f64,
}

/// Time-optimal rest-to-rest profile over a scalar distance.
#[derive(Debug, Clone)]
pub struct SCurve {
    boundaries: Vec<Boundary>,
    pub duration: f64,
    pub distance: f64,
}

impl SCurve {
    /// Build the time-optimal profile for `distance >= 0` under the caps.
    pub fn time_optimal(distance: f64, v_cap: f64, a_cap: f64, j_cap: f64) -> Result<Self> {
        if !(distance.is_finite() && distance >= 0.0) {
            return Err(Error::Invalid(format!("invalid distance {distance}")));
        }
        if v_cap <= 0.0 || a_cap <= 0.0 || j_cap <= 0.0 {
            return Err(Error::Invalid("speed caps must be positive".into()));
        }
        if distance == 0.0 {
            return Ok(SCurve {
                boundaries: vec![Boundary { t: 0.0, x: 0.0, v: 0.0, a: 0.0, jerk: 0.0 }],
                duration: 0.0,
                distance: 0.0,
            });
        }

        // Ramp 0 -> v: jerk time tj and total ramp time ta; ramp distance is
        // v*ta/2 by symmetry.
        let ramp = |v: f64| -> (f64, f64) {
            if v * j_cap < a_cap * a_cap {
                let tj = (v / j_cap).sqrt();
                (tj, 2.0 * tj)
            } else {
                let tj = a_cap / j_cap;
                (tj, tj + v / a_cap)
            }
        };

        let (tj_full, ta_full) = ramp(v_cap);
        let (tj, ta, tv) = if distance >= v_cap * ta_full {
            (tj_full, ta_full, distance / v_cap - ta_full)
        } else {
            // no cruise phase: find the reachable peak velocity
            let r = a_cap * a_cap / j_cap;
            let vp_acc = 0.5 * (-r + (r * r + 4.0 * a_cap * distance).sqrt());
            if vp_acc >= r {
                let tj = a_cap / j_cap;
                (tj, tj + vp_acc / a_cap, 0.0)
            } else {
                let tj = (distance / (2.0 * j_cap)).cbrt();
                (tj, 2.0 * tj, 0.0)
            }
        };

        let t_const_acc = ta - 2.0 * tj; // may be zero
        let durations = [tj, t_const_acc, tj, tv, tj, t_const_acc, tj];
        let jerks = [j_cap, 0.0, -j_cap, 0.0, -j_cap, 0.0, j_cap];

        let mut boundaries = Vec::with_capacity(8);
        let (mut t, mut x, mut v, mut a) = (0.0, 0.0, 0.0, 0.0);
        boundaries.push(Boundary { t, x, v, a, jerk: jerks[0] });
        for k in 0..7 {
            let h = durations[k];
            let j = jerks[k];
            x += v * h + 0.5 * a * h * h + j * h * h * h / 6.0;
            v += a * h + 0.5 * j * h * h;
            a += j * h;
            t += h;
            let next_jerk = if k + 1 < 7 { jerks[k + 1] } else { 0.0 };
            boundaries.push(Boundary { t, x, v, a, jerk: next_jerk });
        }
        // close residual numerical drift on the terminal state
        let last = boundaries.last_mut().unwrap();
        last.x = distance;
        last.v = 0.0;
        last.a = 0.0;
        let duration = t;
        Ok(SCurve { boundaries, duration, distance })
    }

    /// Position, velocity and acceleration at `t` (clamped to the profile).
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        if t <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        if t >= self.duration {
            return (self.distance, 0.0, 0.0);
        }
        let idx = match self
            .boundaries
            .binary_search_by(|b| b.t.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let b = &self.boundaries[idx];
        let h = t - b.t;
        let x = b.x + b.v * h + 0.5 * b.a * h * h + b.jerk * h * h * h / 6.0;
        let v = b.v + b.a * h + 0.5 * b.jerk * h * h;
        let a = b.a + b.jerk * h;
        (x, v, a)
    }

    /// True when the profile contains a nonzero cruise phase.
    pub fn has_cruise(&self) -> bool {
        self.boundaries.len() == 8 && (self.boundaries[4].t - self.boundaries[3].t) > 1e-12
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_distance_is_a_null_profile() {
        let p = SCurve::time_optimal(0.0, 1.0, 2.0, 10.0).unwrap();
        assert_eq!(p.duration, 0.0);
        assert_eq!(p.eval(0.3), (0.0, 0.0, 0.0));
    }

    #[test]
    fn endpoints_are_exact_and_at_rest() {
        for &d in &[0.01, 0.3, 1.2, 5.0] {
            let p = SCurve::time_optimal(d, 1.5, 4.0, 30.0).unwrap();
            let (x0, v0, a0) = p.eval(0.0);
            let (x1, v1, a1) = p.eval(p.duration);
            assert_eq!((x0, v0, a0), (0.0, 0.0, 0.0));
            assert_relative_eq!(x1, d, epsilon = 1e-12);
            assert_eq!((v1, a1), (0.0, 0.0));
        }
    }

    #[test]
    fn caps_are_respected_and_acceleration_is_continuous() {
        let (v, a, j) = (1.2, 3.0, 25.0);
        for &d in &[0.05, 0.4, 2.0] {
            let p = SCurve::time_optimal(d, v, a, j).unwrap();
            let n = 4000;
            let dt = p.duration / n as f64;
            let mut prev_acc = 0.0;
            for k in 0..=n {
                let (_, vel, acc) = p.eval(k as f64 * dt);
                assert!(vel.abs() <= v * (1.0 + 1e-9));
                assert!(acc.abs() <= a * (1.0 + 1e-9));
                if k > 0 {
                    assert!((acc - prev_acc).abs() <= j * dt * (1.0 + 1e-6));
                }
                prev_acc = acc;
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = SCurve::time_optimal(0.8, 1.0, 3.0, 20.0).unwrap();
        let h = 1e-6;
        for &t in &[0.01, 0.1, 0.3, p.duration * 0.5, p.duration - 0.05] {
            let (xm, _, _) = p.eval(t - h);
            let (x, v, a) = p.eval(t);
            let (xp, _, _) = p.eval(t + h);
            assert_relative_eq!((xp - xm) / (2.0 * h), v, epsilon = 1e-6);
            assert_relative_eq!((xp - 2.0 * x + xm) / (h * h), a, epsilon = 1e-3);
        }
    }

    #[test]
    fn short_moves_have_no_cruise_phase() {
        let with = SCurve::time_optimal(5.0, 1.0, 3.0, 20.0).unwrap();
        let without = SCurve::time_optimal(0.05, 1.0, 3.0, 20.0).unwrap();
        assert!(with.has_cruise());
        assert!(!without.has_cruise());
    }

    #[test]
    fn cap_scaling_dilates_time_exactly() {
        // caps (f*v, f^2*a, f^3*j) turn the profile into a pure time
        // dilation, so doubling the factor halves the duration
        let d = 0.3;
        let (v, a, j) = (1.0, 3.0, 20.0);
        let f = 2.0;
        let slow = SCurve::time_optimal(d, v, a, j).unwrap();
        let fast = SCurve::time_optimal(d, f * v, f * f * a, f * f * f * j).unwrap();
        assert!(!slow.has_cruise());
        assert_relative_eq!(fast.duration, slow.duration / f, epsilon = 1e-12);
        for &t in &[0.1, 0.2, 0.3] {
            let (xs, vs, acc_s) = slow.eval(t * f);
            let (xf, vf, acc_f) = fast.eval(t);
            assert_relative_eq!(xf, xs, epsilon = 1e-10);
            assert_relative_eq!(vf, vs * f, epsilon = 1e-9);
            assert_relative_eq!(acc_f, acc_s * f * f, epsilon = 1e-8);
        }
    }
}
