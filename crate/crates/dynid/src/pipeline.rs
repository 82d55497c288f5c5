//! End-to-end identification pipeline.
//!
//! For every catalog trajectory and sampling interval: preprocess, least
//! squares, feasibility routing, conditional projection and closed-loop
//! refinement; then cloud analysis on the preferred interval, representative
//! selection, the final feasibility screen (with rescue when needed) and
//! held-out validation. Per-case failures are recorded, not fatal — one bad
//! case must not abort the rest of the run.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::ChainDescription;
use crate::cloud::{self, ParameterCloud, Stage, Standardization};
use crate::config::RunConfig;
use crate::dynamics::AuditContext;
use crate::error::{Error, Result};
use crate::estimate::{
    clie_refine, condition_number, ols_solve, pd_rescue, pd_route, sdp_project, ClieProblem,
    ClieSettings, Route, RouteRecord,
};
use crate::excitation::{build_catalog, Catalog, SampledTrajectory};
use crate::plant::{simulate_closed_loop, ControllerGains, SimLog};
use crate::preprocess::stack;
use crate::reduction::{numerical_base_reduction, BaseParamMapping};

/// Sampling settings for the numeric base reduction inside the pipeline.
const REDUCTION_SAMPLES: usize = 400;
const REDUCTION_SEED: u64 = 7;

/// Derive a per-trajectory noise seed from the run seed and the label.
pub fn derive_seed(run_seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(run_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispersionRow {
    pub ts_ms: u32,
    pub stage: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationRow {
    pub label: String,
    pub clie_rmse: f64,
    pub clie_mne: f64,
    pub rescue_rmse: f64,
    pub rescue_mne: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRow {
    pub stage: String,
    pub label: String,
    pub ts_ms: u32,
    pub scores: Vec<f64>,
}

/// Everything a run produces; serializable so reports can be re-rendered.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineRun {
    pub seed: u64,
    pub config_digest: String,
    pub stage: String,
    pub records: Vec<RouteRecord>,
    pub dispersions: Vec<DispersionRow>,
    pub chosen_ts: Option<u32>,
    pub representative: Option<String>,
    pub rescue_applied: bool,
    pub rescue_eps: Option<f64>,
    pub param_names: Vec<String>,
    pub param_units: Vec<String>,
    pub phi_repr: Option<Vec<f64>>,
    pub phi_final: Option<Vec<f64>>,
    pub validation: Vec<ValidationRow>,
    pub scores: Vec<ScoreRow>,
    /// Loadings of the leading components (rows = components).
    pub loadings: Vec<Vec<f64>>,
    /// Reduced ground truth of the simulated plant, for recovery checks.
    pub truth: Vec<f64>,
}

/// Shared context for one run.
pub struct PipelineContext {
    pub config: RunConfig,
    pub chain: ChainDescription,
    pub map: BaseParamMapping,
    pub truth: DVector<f64>,
    pub gains: ControllerGains,
    pub catalog: Catalog,
}

impl PipelineContext {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let chain = config.chain.build()?;
        if chain.dof() != 8 {
            return Err(Error::Config(
                "the bundled catalog drives an 8-axis chain; supply matching trajectories for other layouts".into(),
            ));
        }
        let map = numerical_base_reduction(&chain, REDUCTION_SAMPLES, REDUCTION_SEED)?;
        let truth = map.reduce(&chain.truth)?.values;
        let gains = ControllerGains::resolve(&config.gains, &chain, &map, &truth)?;
        let catalog = build_catalog(&config.catalog)?;
        Ok(PipelineContext {
            config,
            chain,
            map,
            truth,
            gains,
            catalog,
        })
    }

    pub fn audit(&self) -> AuditContext<'_> {
        let mut audit = AuditContext::new(&self.chain, &self.map);
        audit.grid_points = self.config.pipeline.audit_grid_points;
        audit.worst_k = self.config.pipeline.audit_worst_k;
        audit
    }

    fn clie_settings(&self) -> ClieSettings {
        let p = &self.config.pipeline;
        ClieSettings {
            max_iter: p.clie_max_iter,
            lambda0: p.clie_lambda0,
            jac_step_rel: p.clie_jac_step_rel,
            bound_factor: p.clie_bound_factor,
            positive_floor: p.clie_positive_floor,
            step_limit_rel: p.clie_step_limit_rel,
        }
    }

    /// Labels selected for identification (config filter applied).
    pub fn selected_labels(&self) -> Vec<String> {
        let filter = &self.config.pipeline.labels;
        self.catalog
            .identification
            .iter()
            .map(|t| t.label.clone())
            .filter(|l| filter.is_empty() || filter.contains(l))
            .collect()
    }

    /// Simulate the measured log of one trajectory under the run seed.
    pub fn simulate_label(&self, label: &str, seed: u64) -> Result<SimLog> {
        let traj = self
            .catalog
            .get(label)
            .ok_or_else(|| Error::Invalid(format!("unknown trajectory {label}")))?;
        simulate_closed_loop(
            &self.chain,
            &self.map,
            &self.truth,
            traj,
            &self.gains,
            &self.config.plant,
            self.config.pipeline.imperfections,
            derive_seed(seed, label),
        )
    }
}

fn run_case(
    ctx: &PipelineContext,
    audit: &AuditContext,
    traj: &SampledTrajectory,
    log: &SimLog,
    ts_ms: u32,
    full_stage: bool,
) -> RouteRecord {
    let n_base = ctx.map.n_base();
    let mut record = RouteRecord {
        label: traj.label.clone(),
        ts_ms,
        kappa: f64::NAN,
        ols_pd: false,
        route: Route::ViaProjection,
        eps_pd: None,
        phi_ols: vec![],
        phi_sdp: None,
        phi_clie: vec![],
        clie_residual_rms: f64::NAN,
        clie_iterations: 0,
        clie_converged: false,
        clie_sim_seconds: 0.0,
        clie_wall_seconds: None,
        status: "ok".into(),
    };
    let _ = n_base;

    let stage_result = (|| -> Result<()> {
        let diff = crate::preprocess::prepare_regression(log, ts_ms)?;
        let problem = stack(&ctx.chain, &ctx.map, &diff)?;
        let ols = ols_solve(&problem)?;
        record.kappa = condition_number(&problem)?;
        record.phi_ols = ols.phi.as_slice().to_vec();
        let (route, _scan) = pd_route(&ols.phi, audit);
        record.ols_pd = route == Route::Direct;
        record.route = route;

        if !full_stage {
            return Ok(()); // routing stage stops at the audit verdict
        }
        let phi_init = match route {
            Route::Direct => ols.phi.clone(),
            Route::ViaProjection => {
                let out = sdp_project(
                    audit,
                    &ols.phi,
                    &ctx.config.pipeline.eps_ladder,
                    ctx.config.pipeline.sdp_exchange_rounds,
                )?;
                record.eps_pd = Some(out.eps);
                record.phi_sdp = Some(out.phi.as_slice().to_vec());
                out.phi
            }
        };

        {
            let clie = ClieProblem::from_log(
                &ctx.chain,
                &ctx.map,
                &ctx.gains,
                &ctx.config.plant,
                traj,
                log,
                ts_ms,
            )?;
            let out = clie_refine(&clie, &phi_init, audit, &ctx.clie_settings())?;
            record.phi_clie = out.phi.as_slice().to_vec();
            record.clie_residual_rms = out.residual_rms;
            record.clie_iterations = out.iterations;
            record.clie_converged = out.converged;
            record.clie_sim_seconds = out.sim_seconds;
            if ctx.config.pipeline.record_wall_time {
                record.clie_wall_seconds = Some(out.wall_seconds);
            }
        }
        Ok(())
    })();

    if let Err(e) = stage_result {
        record.status = e.to_string();
    }
    record
}

/// Torque prediction metrics on one held-out record.
///
/// The prediction is the ideal-mode closed-loop command torque, compared with
/// the measured channel on the interval grid. `mne` averages, per joint, the
/// mean absolute error normalized by that joint's peak measured torque.
pub fn validation_metrics(
    ctx: &PipelineContext,
    phi: &DVector<f64>,
    label: &str,
    log: &SimLog,
    ts_ms: u32,
) -> Result<(f64, f64)> {
    let traj = ctx
        .catalog
        .validation
        .iter()
        .find(|t| t.label == label)
        .ok_or_else(|| Error::Invalid(format!("unknown validation trajectory {label}")))?;
    let sim = simulate_closed_loop(
        &ctx.chain,
        &ctx.map,
        phi,
        traj,
        &ctx.gains,
        &ctx.config.plant,
        false,
        0,
    )?;
    let stride = (ts_ms as f64 * 1e-3 / log.dt).round() as usize;
    let dof = log.dof();
    let mut sq = 0.0;
    let mut n = 0usize;
    let mut abs_err = vec![0.0; dof];
    let mut peak = vec![0.0f64; dof];
    let mut rows = 0usize;
    let mut k = 0;
    while k < log.len().min(sim.len()) {
        let meas = log.tau_applied.row(k);
        let pred = sim.u_cmd.row(k);
        for j in 0..dof {
            let e = meas[j] - pred[j];
            sq += e * e;
            abs_err[j] += e.abs();
            peak[j] = peak[j].max(meas[j].abs());
            n += 1;
        }
        rows += 1;
        k += stride;
    }
    if n == 0 {
        return Err(Error::EmptyValidation);
    }
    let rmse = (sq / n as f64).sqrt();
    let mne = (0..dof)
        .map(|j| abs_err[j] / rows as f64 / peak[j].max(1e-9))
        .sum::<f64>()
        / dof as f64;
    Ok((rmse, mne))
}

/// Run the full pipeline for one seed.
pub fn run_pipeline(config: RunConfig, seed: u64) -> Result<PipelineRun> {
    let ctx = PipelineContext::new(config)?;
    let audit = ctx.audit();
    let full_stage = ctx.config.pipeline.stage == "full";
    let labels = ctx.selected_labels();
    if labels.is_empty() {
        return Err(Error::Config("no identification trajectories selected".into()));
    }
    // validation labels are disjoint from identification by construction;
    // keep the check explicit since it guards the held-out contract
    for v in &ctx.catalog.validation {
        if labels.contains(&v.label) {
            return Err(Error::Invalid(format!(
                "validation trajectory {} appears in the identification set",
                v.label
            )));
        }
    }

    // one measured log per trajectory; all intervals reuse it
    let logs: Vec<Result<SimLog>> =
        crate::par::map_slice(&labels, |label| ctx.simulate_label(label, seed));
    let mut log_by_label = std::collections::BTreeMap::new();
    for (label, log) in labels.iter().zip(logs) {
        log_by_label.insert(label.clone(), log);
    }

    // the 160-case grid: every selected trajectory at every interval
    let mut cases: Vec<(String, u32)> = Vec::new();
    for label in &labels {
        for &ts in &ctx.config.pipeline.ts_ms {
            cases.push((label.clone(), ts));
        }
    }
    let records: Vec<RouteRecord> = crate::par::map_slice(&cases, |(label, ts)| {
        let traj = ctx.catalog.get(label).expect("selected label exists");
        match &log_by_label[label] {
            Ok(log) => run_case(&ctx, &audit, traj, log, *ts, full_stage),
            Err(e) => RouteRecord {
                label: label.clone(),
                ts_ms: *ts,
                kappa: f64::NAN,
                ols_pd: false,
                route: Route::ViaProjection,
                eps_pd: None,
                phi_ols: vec![],
                phi_sdp: None,
                phi_clie: vec![],
                clie_residual_rms: f64::NAN,
                clie_iterations: 0,
                clie_converged: false,
                clie_sim_seconds: 0.0,
                clie_wall_seconds: None,
                status: format!("simulation failed: {e}"),
            },
        }
    });

    let mut run = PipelineRun {
        seed,
        config_digest: ctx.config.digest(),
        stage: ctx.config.pipeline.stage.clone(),
        records,
        dispersions: vec![],
        chosen_ts: None,
        representative: None,
        rescue_applied: false,
        rescue_eps: None,
        param_names: ctx.map.names.clone(),
        param_units: ctx.map.units.clone(),
        phi_repr: None,
        phi_final: None,
        validation: vec![],
        scores: vec![],
        loadings: vec![],
        truth: ctx.truth.as_slice().to_vec(),
    };

    if !full_stage {
        return Ok(run);
    }

    // stage clouds per interval, standardized on that interval's CLIE cloud
    let n_base = ctx.map.n_base();
    let stage_rows = |ts: u32, stage: Stage| -> Vec<(String, DVector<f64>)> {
        run.records
            .iter()
            .filter(|r| r.ts_ms == ts && r.status == "ok" && r.phi_clie.len() == n_base)
            .map(|r| {
                let values = match stage {
                    Stage::Ols => r.phi_ols.clone(),
                    Stage::Sdp => r.phi_sdp.clone().unwrap_or_else(|| r.phi_ols.clone()),
                    Stage::Clie => r.phi_clie.clone(),
                };
                (r.label.clone(), DVector::from_vec(values))
            })
            .collect()
    };

    let mut clouds: std::collections::BTreeMap<u32, Vec<ParameterCloud>> = Default::default();
    for &ts in &ctx.config.pipeline.ts_ms {
        let clie_rows = stage_rows(ts, Stage::Clie);
        if clie_rows.len() < 2 {
            continue;
        }
        let std = Standardization::fit(&clie_rows.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>())?;
        let mut per_stage = Vec::new();
        for stage in [Stage::Ols, Stage::Sdp, Stage::Clie] {
            let cloud = ParameterCloud::new(stage, &stage_rows(ts, stage), &std);
            let value = cloud::dispersion(&cloud)?;
            run.dispersions.push(DispersionRow {
                ts_ms: ts,
                stage: stage.to_string(),
                value,
            });
            per_stage.push(cloud);
        }
        clouds.insert(ts, per_stage);
    }
    if clouds.is_empty() {
        return Err(Error::Invalid(
            "every case failed; representative selection is impossible".into(),
        ));
    }

    // preferred interval: smallest whose refined cloud is within the slack of
    // the tightest, and whose representative passes or is rescuable
    let clie_dispersion = |ts: u32| -> f64 {
        run.dispersions
            .iter()
            .find(|d| d.ts_ms == ts && d.stage == "CLIE")
            .map(|d| d.value)
            .unwrap_or(f64::INFINITY)
    };
    let min_disp = clouds.keys().map(|&ts| clie_dispersion(ts)).fold(f64::INFINITY, f64::min);
    let slack = 1.0 + ctx.config.pipeline.preferred_ts_slack;

    let mut chosen: Option<(u32, String, DVector<f64>, DVector<f64>, bool, Option<f64>)> = None;
    for (&ts, per_stage) in &clouds {
        if clie_dispersion(ts) > slack * min_disp {
            continue;
        }
        let clie_cloud = &per_stage[2];
        if clie_cloud.len() < 3 {
            continue;
        }
        let label = cloud::select_representative(clie_cloud, ctx.config.pipeline.pca_variance)?;
        let record = run
            .records
            .iter()
            .find(|r| r.ts_ms == ts && r.label == label)
            .expect("representative record exists");
        let phi_clie = DVector::from_vec(record.phi_clie.clone());
        let scan = audit.scan(&phi_clie);
        if scan.min_eig > 0.0 {
            chosen = Some((ts, label, phi_clie.clone(), phi_clie, false, None));
            break;
        }
        match pd_rescue(&audit, &phi_clie, ctx.config.pipeline.sdp_exchange_rounds) {
            Ok(out) => {
                chosen = Some((ts, label, phi_clie, out.phi, true, Some(out.eps)));
                break;
            }
            Err(_) => continue,
        }
    }
    let (ts, label, phi_repr, phi_final, rescued, rescue_eps) = match chosen {
        Some(c) => c,
        None => {
            // fall back to the tightest cloud even if its representative
            // could not be rescued; record the failure
            let ts = *clouds
                .keys()
                .min_by(|a, b| clie_dispersion(**a).partial_cmp(&clie_dispersion(**b)).unwrap())
                .unwrap();
            let clie_cloud = &clouds[&ts][2];
            let label = cloud::select_representative(clie_cloud, ctx.config.pipeline.pca_variance)?;
            let record = run
                .records
                .iter()
                .find(|r| r.ts_ms == ts && r.label == label)
                .unwrap();
            let phi = DVector::from_vec(record.phi_clie.clone());
            (ts, label, phi.clone(), phi, false, None)
        }
    };
    run.chosen_ts = Some(ts);
    run.representative = Some(label);
    run.rescue_applied = rescued;
    run.rescue_eps = rescue_eps;
    run.phi_repr = Some(phi_repr.as_slice().to_vec());
    run.phi_final = Some(phi_final.as_slice().to_vec());

    // principal-component scores of the chosen interval's clouds
    let per_stage = &clouds[&ts];
    if per_stage[2].len() >= 3 {
        let pca = cloud::pca_fit(&per_stage[2])?;
        let k = cloud::components_covering(&pca, ctx.config.pipeline.pca_variance).min(4);
        for comp in 0..k {
            run.loadings
                .push(pca.components.column(comp).iter().cloned().collect());
        }
        for cloud_ref in per_stage {
            // project each stage cloud onto the refined cloud's basis
            for (i, row) in cloud_ref.rows.iter().enumerate() {
                let score = pca.components.transpose() * row;
                run.scores.push(ScoreRow {
                    stage: cloud_ref.stage.to_string(),
                    label: cloud_ref.labels[i].clone(),
                    ts_ms: ts,
                    scores: (0..k).map(|c| score[c]).collect(),
                });
            }
        }
    }

    // held-out validation of the representative and the final model
    let v_labels: Vec<String> = ctx.catalog.validation.iter().map(|t| t.label.clone()).collect();
    let v_logs: Vec<Result<SimLog>> =
        crate::par::map_slice(&v_labels, |label| ctx.simulate_label(label, seed));
    for (label, log) in v_labels.iter().zip(v_logs) {
        let log = log?;
        let (clie_rmse, clie_mne) = validation_metrics(&ctx, &phi_repr, label, &log, ts)?;
        let (rescue_rmse, rescue_mne) = validation_metrics(&ctx, &phi_final, label, &log, ts)?;
        run.validation.push(ValidationRow {
            label: label.clone(),
            clie_rmse,
            clie_mne,
            rescue_rmse,
            rescue_mne,
        });
    }

    Ok(run)
}


#[cfg(test)]
mod smoke {
    use super::*;

    #[test]
    #[ignore]
    fn routing_only_subset() {
        let mut cfg = RunConfig::bundled().unwrap();
        cfg.pipeline.stage = "routing".into();
        cfg.pipeline.labels = vec!["PC04".into(), "PA06".into(), "AP05".into()];
        cfg.pipeline.audit_grid_points = 3;
        let t0 = std::time::Instant::now();
        let run = run_pipeline(cfg, 1).unwrap();
        println!("routing-only subset in {:.1} s", t0.elapsed().as_secs_f64());
        for r in &run.records {
            println!(
                "{} T{}: kappa {:.1} pd={} route={} status={}",
                r.label, r.ts_ms, r.kappa, r.ols_pd, r.route, r.status
            );
        }
    }

    #[test]
    #[ignore]
    fn full_subset() {
        let mut cfg = RunConfig::bundled().unwrap();
        cfg.pipeline.labels = vec!["PC04".into(), "PA06".into(), "PC08".into(), "PB08".into()];
        cfg.pipeline.ts_ms = vec![40];
        cfg.pipeline.audit_grid_points = 3;
        cfg.pipeline.clie_max_iter = 3;
        let t0 = std::time::Instant::now();
        let run = run_pipeline(cfg, 1).unwrap();
        println!("full subset in {:.1} s", t0.elapsed().as_secs_f64());
        for r in &run.records {
            println!(
                "{} T{}: kappa {:.1} route={} eps={:?} clie_iters={} rms={:.4} status={}",
                r.label, r.ts_ms, r.kappa, r.route, r.eps_pd, r.clie_iterations, r.clie_residual_rms, r.status
            );
        }
        println!(
            "chosen ts {:?}, representative {:?}, rescue {:?}",
            run.chosen_ts, run.representative, run.rescue_applied
        );
        for d in &run.dispersions {
            println!("dispersion T{} {}: {:.4}", d.ts_ms, d.stage, d.value);
        }
        for v in &run.validation {
            println!(
                "{}: clie rmse {:.4} mne {:.4} | rescue rmse {:.4} mne {:.4}",
                v.label, v.clie_rmse, v.clie_mne, v.rescue_rmse, v.rescue_mne
            );
        }
    }
}


#[cfg(test)]
mod perf_breakdown {
    use super::*;

    #[test]
    #[ignore]
    fn case_cost_breakdown() {
        let cfg = RunConfig::bundled().unwrap();
        let ctx = PipelineContext::new(cfg).unwrap();
        let audit = ctx.audit();
        let label = "PA01".to_string();
        let t0 = std::time::Instant::now();
        let log = ctx.simulate_label(&label, 1).unwrap();
        println!("simulate {:.2} s ({} ticks)", t0.elapsed().as_secs_f64(), log.len());
        for ts in [10u32, 80] {
            let t1 = std::time::Instant::now();
            let diff = crate::preprocess::prepare_regression(&log, ts).unwrap();
            let t_filter = t1.elapsed().as_secs_f64();
            let t2 = std::time::Instant::now();
            let problem = stack(&ctx.chain, &ctx.map, &diff).unwrap();
            let t_stack = t2.elapsed().as_secs_f64();
            let t3 = std::time::Instant::now();
            let ols = ols_solve(&problem).unwrap();
            let t_ols = t3.elapsed().as_secs_f64();
            let t4 = std::time::Instant::now();
            let kappa = condition_number(&problem).unwrap();
            let t_kappa = t4.elapsed().as_secs_f64();
            let t5 = std::time::Instant::now();
            let (_route, scan) = pd_route(&ols.phi, &audit);
            let t_audit = t5.elapsed().as_secs_f64();
            println!(
                "T{ts}: rows {} | filter {t_filter:.2} stack {t_stack:.2} ols {t_ols:.2} kappa {t_kappa:.2} audit {t_audit:.2} (min_eig {:.2e})",
                problem.w_all.nrows(),
                scan.min_eig
            );
        }
    }
}

#[cfg(test)]
mod bias_probe {
    use super::*;

    #[test]
    #[ignore]
    fn ideal_mode_ols_bias_by_interval() {
        let mut cfg = RunConfig::bundled().unwrap();
        cfg.pipeline.imperfections = false;
        let ctx = PipelineContext::new(cfg).unwrap();
        let audit = ctx.audit();
        for label in ["PA06", "PC04", "PA02"] {
            let log = ctx.simulate_label(&label.to_string(), 1).unwrap();
            for ts in [10u32, 20, 40, 80] {
                let diff = crate::preprocess::prepare_regression(&log, ts).unwrap();
                let problem = stack(&ctx.chain, &ctx.map, &diff).unwrap();
                let ols = ols_solve(&problem).unwrap();
                let err = (&ols.phi - &ctx.truth).abs();
                let mut worst = (0usize, 0.0f64);
                for k in 0..err.len() {
                    let rel = err[k] / ctx.truth[k].abs().max(1e-4);
                    if rel > worst.1 {
                        worst = (k, rel);
                    }
                }
                let scan = audit.scan(&ols.phi);
                println!(
                    "{label} T{ts}: |err|_inf {:.2e} worst {} rel {:.3} min_eig {:+.2e}",
                    err.max(),
                    ctx.map.names[worst.0],
                    worst.1,
                    scan.min_eig
                );
            }
        }
    }
}

#[cfg(test)]
mod residual_probe {
    use super::*;

    #[test]
    #[ignore]
    fn residual_structure_ideal_pa02_t40() {
        let mut cfg = RunConfig::bundled().unwrap();
        cfg.pipeline.imperfections = false;
        let ctx = PipelineContext::new(cfg).unwrap();
        let log = ctx.simulate_label(&"PA02".to_string(), 1).unwrap();
        let diff = crate::preprocess::prepare_regression(&log, 40).unwrap();
        let problem = stack(&ctx.chain, &ctx.map, &diff).unwrap();
        let resid = &problem.tau_all - &problem.w_all * &ctx.truth;
        let dof = ctx.chain.dof();
        let n = resid.len() / dof;
        // print the worst 15 samples by residual norm with their times
        let mut rows: Vec<(usize, f64)> = (0..n)
            .map(|k| {
                let mut s = 0.0;
                for j in 0..dof {
                    s += resid[k * dof + j] * resid[k * dof + j];
                }
                (k, s.sqrt())
            })
            .collect();
        rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let rms = (resid.norm_squared() / resid.len() as f64).sqrt();
        println!("total rms {rms:.4}");
        for (k, v) in rows.iter().take(15) {
            let t = *k as f64 * 0.04;
            // which joint dominates
            let mut jbest = 0;
            for j in 0..dof {
                if resid[k * dof + j].abs() > resid[k * dof + jbest].abs() {
                    jbest = j;
                }
            }
            println!("t={t:7.2}s |r|={v:.4} worst joint {} r={:+.4} qd={:+.3} qdd={:+.3}",
                jbest + 1, resid[k * dof + jbest], diff.theta_d.row(*k)[jbest], diff.theta_dd.row(*k)[jbest]);
        }
        // residual rms during holds vs motion
        let mut hold_sq = 0.0;
        let mut hold_n = 0;
        let mut move_sq = 0.0;
        let mut move_n = 0;
        for k in 0..n {
            let speed: f64 = (0..dof).map(|j| diff.theta_d.row(k)[j].abs()).fold(0.0, f64::max);
            for j in 0..dof {
                let r2 = resid[k * dof + j] * resid[k * dof + j];
                if speed < 1e-3 {
                    hold_sq += r2;
                    hold_n += 1;
                } else {
                    move_sq += r2;
                    move_n += 1;
                }
            }
        }
        println!(
            "hold rms {:.5} ({} rows), motion rms {:.5} ({} rows)",
            (hold_sq / hold_n.max(1) as f64).sqrt(),
            hold_n,
            (move_sq / move_n.max(1) as f64).sqrt(),
            move_n
        );
    }
}

#[cfg(test)]
mod contraction_probe {
    use super::*;

    #[test]
    #[ignore]
    fn forty_case_contraction() {
        let mut cfg = RunConfig::bundled().unwrap();
        cfg.pipeline.ts_ms = vec![40];
        cfg.pipeline.clie_max_iter = 2;
        let t0 = std::time::Instant::now();
        let run = run_pipeline(cfg, 1).unwrap();
        println!("40-case full run in {:.0} s", t0.elapsed().as_secs_f64());
        for d in &run.dispersions {
            println!("T{} {}: {:.4}", d.ts_ms, d.stage, d.value);
        }
        let ok = run.records.iter().filter(|r| r.status == "ok").count();
        println!("ok cases: {ok}/40, chosen {:?}, repr {:?}, rescue {}",
            run.chosen_ts, run.representative, run.rescue_applied);
        for v in &run.validation {
            println!("{}: clie rmse {:.4} | rescue rmse {:.4}", v.label, v.clie_rmse, v.rescue_rmse);
        }
    }
}
