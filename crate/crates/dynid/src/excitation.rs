//! Structured excitation trajectories.
//!
//! Trajectories are joint-space waypoint sequences built from single-joint
//! and adjacent-pair primitives around a handful of nominal postures, then
//! interpolated segment-by-segment with rest-to-rest double-S profiles. The
//! catalog assembles the identification families (PA/PB/PC grids plus their
//! concatenated variants, the adjacent-pair-only AP set and the aggregated
//! AG pair) and the held-out validation set V01-V03.

use crate::config::CatalogConfig;
use crate::error::{Error, Result};
use crate::scurve::SCurve;

/// Multi-channel sample storage (one row per control tick).
#[derive(Debug, Clone, PartialEq)]
pub struct Channels {
    data: Vec<f64>,
    dof: usize,
}

impl Channels {
    pub fn new(dof: usize) -> Self {
        Channels { data: Vec::new(), dof }
    }

    pub fn with_capacity(dof: usize, rows: usize) -> Self {
        Channels { data: Vec::with_capacity(dof * rows), dof }
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dof
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dof..(k + 1) * self.dof]
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dof);
        self.data.extend_from_slice(row);
    }
}

/// A time-sampled reference trajectory on the control grid.
#[derive(Debug, Clone)]
pub struct SampledTrajectory {
    pub label: String,
    /// Control period (s).
    pub dt: f64,
    pub q: Channels,
    pub qd: Channels,
    pub qdd: Channels,
}

impl SampledTrajectory {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.q.dof()
    }

    pub fn duration(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 * self.dt
    }

    /// Export as CSV: `t, q_ref[1..n], qd_ref[1..n], qdd_ref[1..n]`.
    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let dof = self.dof();
        let mut header = String::from("t");
        for tag in ["q_ref", "qd_ref", "qdd_ref"] {
            for j in 1..=dof {
                header.push_str(&format!(",{tag}{j}"));
            }
        }
        writeln!(w, "{header}")?;
        for k in 0..self.len() {
            let mut line = format!("{}", k as f64 * self.dt);
            for ch in [&self.q, &self.qd, &self.qdd] {
                for v in ch.row(k) {
                    line.push_str(&format!(",{v}"));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// One excitation primitive: which joints move around a nominal posture.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimitiveKind {
    /// Sweep of one joint: offsets 0 -> -a -> +a -> 0.
    Single { joint: usize, amplitude: f64 },
    /// Synchronous sweep of an adjacent pair with signed amplitudes.
    Pair {
        joint: usize,
        amplitudes: (f64, f64),
        signs: (f64, f64),
    },
    /// Synchronous sweep of an arbitrary joint set (validation motions).
    Multi { deltas: Vec<(usize, f64, f64)> },
}

#[derive(Debug, Clone)]
pub struct PrimitiveSpec {
    pub kind: PrimitiveKind,
    /// Nominal posture (rad), full dof.
    pub posture: Vec<f64>,
    pub speed_factor: f64,
}

impl PrimitiveSpec {
    fn delta(&self) -> Result<Vec<f64>> {
        let dof = self.posture.len();
        let mut delta = vec![0.0; dof];
        let mut add = |joint: usize, amp: f64, sign: f64| -> Result<()> {
            if joint >= dof {
                return Err(Error::Invalid(format!("joint {} outside dof {}", joint + 1, dof)));
            }
            if amp < 0.0 || !(sign == 1.0 || sign == -1.0) {
                return Err(Error::Invalid("amplitudes must be >= 0 and signs +/-1".into()));
            }
            delta[joint] = sign * amp;
            Ok(())
        };
        match &self.kind {
            PrimitiveKind::Single { joint, amplitude } => add(*joint, *amplitude, 1.0)?,
            PrimitiveKind::Pair { joint, amplitudes, signs } => {
                add(*joint, amplitudes.0, signs.0)?;
                add(*joint + 1, amplitudes.1, signs.1)?;
            }
            PrimitiveKind::Multi { deltas } => {
                for &(joint, amp, sign) in deltas {
                    add(joint, amp, sign)?;
                }
            }
        }
        Ok(delta)
    }

    /// Waypoints: posture -> posture-delta -> posture+delta -> posture.
    pub fn waypoints(&self) -> Result<Vec<Vec<f64>>> {
        if !(self.speed_factor > 0.0 && self.speed_factor <= 1.0) {
            return Err(Error::Invalid(format!(
                "speed factor {} outside (0, 1]",
                self.speed_factor
            )));
        }
        let delta = self.delta()?;
        let q = &self.posture;
        let minus: Vec<f64> = q.iter().zip(&delta).map(|(a, d)| a - d).collect();
        let plus: Vec<f64> = q.iter().zip(&delta).map(|(a, d)| a + d).collect();
        Ok(vec![q.clone(), minus, plus, q.clone()])
    }
}

/// Waypoints of a single-joint sweep primitive.
pub fn single_joint_primitive(spec: &PrimitiveSpec) -> Result<Vec<Vec<f64>>> {
    match spec.kind {
        PrimitiveKind::Single { .. } => spec.waypoints(),
        _ => Err(Error::Invalid("expected a single-joint primitive".into())),
    }
}

/// Waypoints of an adjacent-pair sweep primitive.
pub fn adjacent_pair_primitive(spec: &PrimitiveSpec) -> Result<Vec<Vec<f64>>> {
    match spec.kind {
        PrimitiveKind::Pair { .. } => spec.waypoints(),
        _ => Err(Error::Invalid("expected an adjacent-pair primitive".into())),
    }
}

/// Incremental trajectory assembler: rest-to-rest segments on the control
/// grid, acceleration-continuous across segment boundaries.
pub struct TrajectoryBuilder {
    label: String,
    dt: f64,
    caps: (f64, f64, f64),
    factor: f64,
    current: Vec<f64>,
    q: Channels,
    qd: Channels,
    qdd: Channels,
    segment_index: usize,
}

impl TrajectoryBuilder {
    pub fn new(label: &str, start: &[f64], dt: f64, caps: (f64, f64, f64), factor: f64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::Invalid("control period must be positive".into()));
        }
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::Invalid(format!("speed factor {factor} outside (0, 1]")));
        }
        let dof = start.len();
        let mut b = TrajectoryBuilder {
            label: label.to_string(),
            dt,
            caps,
            factor,
            current: start.to_vec(),
            q: Channels::new(dof),
            qd: Channels::new(dof),
            qdd: Channels::new(dof),
            segment_index: 0,
        };
        let zeros = vec![0.0; dof];
        b.q.push_row(start);
        b.qd.push_row(&zeros);
        b.qdd.push_row(&zeros);
        Ok(b)
    }

    pub fn hold(&mut self, seconds: f64) {
        let n = (seconds / self.dt).round() as usize;
        let zeros = vec![0.0; self.current.len()];
        for _ in 0..n {
            self.q.push_row(&self.current);
            self.qd.push_row(&zeros);
            self.qdd.push_row(&zeros);
        }
        self.segment_index += 1;
    }

    /// Rest-to-rest move to `target`; all joints share one time scaling.
    pub fn move_to(&mut self, target: &[f64]) -> Result<()> {
        let dof = self.current.len();
        if target.len() != dof {
            return Err(Error::DimensionMismatch {
                expected: dof,
                got: target.len(),
                context: "waypoint".into(),
            });
        }
        let delta: Vec<f64> = target.iter().zip(&self.current).map(|(t, c)| t - c).collect();
        let dist = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        self.segment_index += 1;
        if dist < 1e-12 {
            return Ok(()); // zero-length hold segment
        }
        let f = self.factor;
        let (v, a, j) = (self.caps.0 * f, self.caps.1 * f * f, self.caps.2 * f * f * f);
        let profile = SCurve::time_optimal(dist, v, a, j).map_err(|e| Error::InfeasibleSegment {
            label: self.label.clone(),
            index: self.segment_index,
            reason: e.to_string(),
        })?;
        // stretch onto the control grid (never faster than time-optimal)
        let n = (profile.duration / self.dt).ceil().max(1.0) as usize;
        let scale = profile.duration / (n as f64 * self.dt);
        let dir: Vec<f64> = delta.iter().map(|d| d / dist).collect();
        let mut qrow = vec![0.0; dof];
        let mut qdrow = vec![0.0; dof];
        let mut qddrow = vec![0.0; dof];
        for k in 1..=n {
            let (x, vel, acc) = profile.eval(scale * k as f64 * self.dt);
            for jix in 0..dof {
                qrow[jix] = self.current[jix] + dir[jix] * x;
                qdrow[jix] = dir[jix] * vel * scale;
                qddrow[jix] = dir[jix] * acc * scale * scale;
            }
            self.q.push_row(&qrow);
            self.qd.push_row(&qdrow);
            self.qdd.push_row(&qddrow);
        }
        self.current = target.to_vec();
        Ok(())
    }

    pub fn finish(self) -> SampledTrajectory {
        SampledTrajectory {
            label: self.label,
            dt: self.dt,
            q: self.q,
            qd: self.qd,
            qdd: self.qdd,
        }
    }
}

/// Interpolate a waypoint sequence with one shared speed factor.
pub fn interpolate(
    label: &str,
    waypoints: &[Vec<f64>],
    speed_factor: f64,
    caps: (f64, f64, f64),
    dt: f64,
) -> Result<SampledTrajectory> {
    if waypoints.len() < 2 {
        return Err(Error::Invalid("need at least two waypoints".into()));
    }
    let mut b = TrajectoryBuilder::new(label, &waypoints[0], dt, caps, speed_factor)?;
    for w in &waypoints[1..] {
        b.move_to(w)?;
    }
    Ok(b.finish())
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

/// The full trajectory set: 40 identification + 3 validation entries.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub identification: Vec<SampledTrajectory>,
    pub validation: Vec<SampledTrajectory>,
}

impl Catalog {
    pub fn get(&self, label: &str) -> Option<&SampledTrajectory> {
        self.identification
            .iter()
            .chain(self.validation.iter())
            .find(|t| t.label == label)
    }
}

/// Nominal posture (rad, 8 axes). `primed` raises joint 6 by +90°.
pub fn posture(name: char, primed: bool) -> Vec<f64> {
    let mut deg: Vec<f64> = match name {
        'A' => vec![0.0, 0.0, 0.0, -90.0, 0.0, 0.0, 0.0, 0.0],
        'B' => vec![0.0, 0.0, 0.0, -150.0, 0.0, 0.0, 0.0, 0.0],
        'C' => vec![0.0, 60.0, 0.0, -150.0, 0.0, 0.0, 0.0, 0.0],
        _ => panic!("unknown posture {name}"),
    };
    if primed {
        deg[5] += 90.0;
    }
    deg.into_iter().map(|d| d.to_radians()).collect()
}

const DOF: usize = 8;
const HAND: usize = 7;

struct Part {
    posture: Vec<f64>,
    kind: PrimitiveKind,
}

fn amp(cfg: &CatalogConfig, joint: usize) -> f64 {
    cfg.amplitudes_deg[joint].to_radians()
}

fn single(cfg: &CatalogConfig, name: char, primed: bool, joint: usize) -> Part {
    Part {
        posture: posture(name, primed),
        kind: PrimitiveKind::Single { joint, amplitude: amp(cfg, joint) },
    }
}

fn pair(cfg: &CatalogConfig, name: char, joint: usize, signs: (f64, f64)) -> Part {
    Part {
        posture: posture(name, false),
        kind: PrimitiveKind::Pair {
            joint,
            amplitudes: (amp(cfg, joint), amp(cfg, joint + 1)),
            signs,
        },
    }
}

/// Realize a labeled trajectory: lead-in hold, the primitives (with posture
/// transitions as needed), one hand-axis sweep, tail hold.
fn realize(
    label: &str,
    parts: &[Part],
    factor: f64,
    cfg: &CatalogConfig,
    hand_sweep: bool,
) -> Result<SampledTrajectory> {
    let caps = (cfg.vel_cap, cfg.acc_cap, cfg.jerk_cap);
    let mut b = TrajectoryBuilder::new(label, &parts[0].posture, cfg.control_period, caps, factor)?;
    b.hold(cfg.lead_in);
    let mut current_posture = parts[0].posture.clone();
    for part in parts {
        if part.posture != current_posture {
            b.move_to(&part.posture)?;
            current_posture = part.posture.clone();
        }
        let spec = PrimitiveSpec {
            kind: part.kind.clone(),
            posture: part.posture.clone(),
            speed_factor: factor,
        };
        for w in &spec.waypoints()?[1..] {
            b.move_to(w)?;
        }
    }
    if hand_sweep {
        let spec = PrimitiveSpec {
            kind: PrimitiveKind::Single { joint: HAND, amplitude: amp(cfg, HAND) },
            posture: current_posture.clone(),
            speed_factor: factor,
        };
        for w in &spec.waypoints()?[1..] {
            b.move_to(w)?;
        }
    }
    b.hold(cfg.tail_hold);
    Ok(b.finish())
}

/// Build the identification and validation catalog for the 8-axis layout.
pub fn build_catalog(cfg: &CatalogConfig) -> Result<Catalog> {
    if cfg.amplitudes_deg.len() < DOF {
        return Err(Error::Config(format!(
            "catalog needs {DOF} amplitude entries, got {}",
            cfg.amplitudes_deg.len()
        )));
    }
    let arm_pairs = [0usize, 2, 4]; // (1,2) (3,4) (5,6)

    let jobs: Vec<(String, Vec<Part>, f64)> = {
        let mut jobs = Vec::new();
        for &family in &['A', 'B', 'C'] {
            let fam = format!("P{family}");
            // pattern 1: single-joint sweeps of all arm joints
            for (k, &f) in cfg.single_speeds.iter().enumerate() {
                let parts: Vec<Part> = (0..7).map(|j| single(cfg, family, false, j)).collect();
                jobs.push((format!("{fam}{:02}", k + 1), parts, f));
            }
            // pattern 2: in-phase adjacent pairs, closed by a sweep of the
            // remaining joint so every axis is excited
            for (k, &f) in cfg.pair_speeds.iter().enumerate() {
                let mut parts: Vec<Part> = arm_pairs
                    .iter()
                    .map(|&j| pair(cfg, family, j, (1.0, 1.0)))
                    .collect();
                parts.push(single(cfg, family, false, 6));
                jobs.push((format!("{fam}{:02}", k + 4), parts, f));
            }
            // pattern 3: opposite-phase adjacent pairs plus the same closer
            for (k, &f) in cfg.opposite_speeds.iter().enumerate() {
                let mut parts: Vec<Part> = arm_pairs
                    .iter()
                    .map(|&j| pair(cfg, family, j, (1.0, -1.0)))
                    .collect();
                parts.push(single(cfg, family, false, 6));
                jobs.push((format!("{fam}{:02}", k + 7), parts, f));
            }
            // concatenated 10: wrist variant with joint 6 raised
            let parts10 = vec![
                single(cfg, family, true, 4),
                single(cfg, family, true, 6),
                single(cfg, family, false, 3),
            ];
            jobs.push((format!("{fam}10"), parts10, cfg.concat_speed));
            // concatenated 11: singles plus the complementary pair set
            let mut parts11 = vec![
                single(cfg, family, false, 1),
                single(cfg, family, false, 3),
                single(cfg, family, false, 5),
            ];
            for &j in &[1usize, 3, 5] {
                parts11.push(pair(cfg, family, j, (1.0, 1.0)));
            }
            jobs.push((format!("{fam}11"), parts11, cfg.concat_speed));
        }

        // adjacent-pair-only family: all six pairs in sequence
        let all_pairs = |family: char| -> Vec<Part> {
            (0..6).map(|j| pair(cfg, family, j, (1.0, 1.0))).collect()
        };
        jobs.push(("AP01".into(), all_pairs('A'), cfg.ap_speeds[0]));
        jobs.push(("AP02".into(), all_pairs('B'), cfg.ap_speeds[0]));
        jobs.push(("AP03".into(), all_pairs('C'), cfg.ap_speeds[0]));
        jobs.push(("AP04".into(), all_pairs('C'), cfg.ap_speeds[1]));
        jobs.push(("AP05".into(), all_pairs('C'), cfg.ap_speeds[2]));

        // aggregated trajectories across postures
        let ag01 = vec![
            pair(cfg, 'A', 1, (1.0, 1.0)),
            pair(cfg, 'B', 3, (1.0, 1.0)),
            pair(cfg, 'C', 5, (1.0, 1.0)),
        ];
        jobs.push(("AG01".into(), ag01, cfg.ag_speed));
        let ag02 = vec![
            single(cfg, 'A', false, 6),
            pair(cfg, 'A', 0, (1.0, 1.0)),
            single(cfg, 'B', false, 1),
            pair(cfg, 'B', 2, (1.0, 1.0)),
            single(cfg, 'C', false, 3),
            pair(cfg, 'C', 4, (1.0, 1.0)),
        ];
        jobs.push(("AG02".into(), ag02, cfg.ag_speed));
        jobs
    };

    let built = crate::par::map_slice(&jobs, |(label, parts, f)| realize(label, parts, *f, cfg, true));
    let mut identification = Vec::with_capacity(jobs.len());
    for t in built {
        identification.push(t?);
    }

    // validation: simultaneous multi-axis motions including the hand axis
    let multi = |name: char, joints: &[usize], signs: &[f64]| -> Part {
        Part {
            posture: posture(name, false),
            kind: PrimitiveKind::Multi {
                deltas: joints
                    .iter()
                    .zip(signs)
                    .map(|(&j, &s)| (j, amp(cfg, j), s))
                    .collect(),
            },
        }
    };
    let v01 = vec![
        multi('A', &[0, 1, 2, 3, 4, 5, 6, 7], &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, 1.0]),
        multi('A', &[0, 1, 2, 3, 4, 5, 6, 7], &[-1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0]),
    ];
    let v02 = vec![multi('B', &[0, 2, 4, 6, 7], &[1.0, 1.0, -1.0, -1.0, 1.0])];
    let v03 = vec![
        multi('C', &[1, 3, 5, 7], &[1.0, -1.0, 1.0, -1.0]),
        multi('C', &[1, 3, 5, 7], &[1.0, 1.0, -1.0, 1.0]),
    ];
    let validation = vec![
        realize("V01", &v01, cfg.validation_speed, cfg, false)?,
        realize("V02", &v02, cfg.validation_speed, cfg, false)?,
        realize("V03", &v03, cfg.validation_speed, cfg, false)?,
    ];

    Ok(Catalog { identification, validation })
}


#[cfg(test)]
mod duration_probe {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    #[ignore]
    fn print_catalog_durations() {
        let cat = build_catalog(&RunConfig::bundled().unwrap().catalog).unwrap();
        let mut total = 0.0;
        for t in cat.identification.iter().chain(cat.validation.iter()) {
            println!("{}: {:.1} s", t.label, t.duration());
            total += t.duration();
        }
        println!("total: {total:.1} s");
    }
}
