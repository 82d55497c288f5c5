//! Report emission: routing table, final parameter file, principal-component
//! scores, validation metrics, dispersion table and the run manifest.
//!
//! Every emitted CSV is a pure function of the run's deterministic fields, so
//! identical configs and seeds reproduce the files byte for byte. Wall-clock
//! timings live only in `records.json`, which sits outside that contract; the
//! routing table's `t_CLIE_s` column reports the deterministic refinement
//! cost in simulated closed-loop seconds.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::pipeline::PipelineRun;

/// Files produced by [`emit_report`].
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub routing: PathBuf,
    pub params_final: Option<PathBuf>,
    pub pca_scores: Option<PathBuf>,
    pub pca_loadings: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub dispersion: PathBuf,
    pub manifest: PathBuf,
    pub records: PathBuf,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "-".into(),
    }
}

/// Write all report files into `out_dir` (created if missing).
pub fn emit_report(run: &PipelineRun, out_dir: &Path) -> Result<ReportPaths> {
    std::fs::create_dir_all(out_dir)?;

    // routing table, one row per case
    let routing = out_dir.join("routing.csv");
    {
        let mut text = String::from("Tr,Ts_ms,kappa,PD,Route,eps_PD,t_CLIE_s\n");
        for r in &run.records {
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.label,
                r.ts_ms,
                if r.kappa.is_nan() { "-".into() } else { format!("{:.1}", r.kappa) },
                if r.status != "ok" {
                    "!"
                } else if r.ols_pd {
                    "Y"
                } else {
                    "N"
                },
                r.route,
                fmt_opt(r.eps_pd),
                format!("{:.1}", r.clie_sim_seconds),
            ));
        }
        std::fs::write(&routing, text)?;
    }

    // final accepted parameters
    let params_final = match &run.phi_final {
        Some(values) => {
            let path = out_dir.join("params_final.csv");
            let mut text = String::from("name,unit,value\n");
            for (i, v) in values.iter().enumerate() {
                text.push_str(&format!("{},{},{v}\n", run.param_names[i], run.param_units[i]));
            }
            std::fs::write(&path, text)?;
            Some(path)
        }
        None => None,
    };

    // principal-component scores and loadings
    let pca_scores = if run.scores.is_empty() {
        None
    } else {
        let path = out_dir.join("pca_scores.csv");
        let k = run.scores[0].scores.len();
        let mut text = String::from("stage,Tr,Ts_ms");
        for c in 1..=k {
            text.push_str(&format!(",pc{c}"));
        }
        text.push('\n');
        for s in &run.scores {
            text.push_str(&format!("{},{},{}", s.stage, s.label, s.ts_ms));
            for v in &s.scores {
                text.push_str(&format!(",{v}"));
            }
            text.push('\n');
        }
        std::fs::write(&path, text)?;
        Some(path)
    };
    let pca_loadings = if run.loadings.is_empty() {
        None
    } else {
        let path = out_dir.join("pca_loadings.csv");
        let mut text = String::from("component,name,loading\n");
        for (c, comp) in run.loadings.iter().enumerate() {
            for (i, v) in comp.iter().enumerate() {
                text.push_str(&format!("pc{},{},{v}\n", c + 1, run.param_names[i]));
            }
        }
        std::fs::write(&path, text)?;
        Some(path)
    };

    // held-out validation metrics
    let validation = if run.validation.is_empty() {
        None
    } else {
        let path = out_dir.join("validation.csv");
        let mut text = String::from("Tr,clie_rmse,rescue_rmse,clie_mne,rescue_mne\n");
        for v in &run.validation {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                v.label, v.clie_rmse, v.rescue_rmse, v.clie_mne, v.rescue_mne
            ));
        }
        std::fs::write(&path, text)?;
        Some(path)
    };

    // cloud dispersion per interval and stage
    let dispersion = out_dir.join("dispersion.csv");
    {
        let mut text = String::from("Ts_ms,stage,dispersion\n");
        for d in &run.dispersions {
            text.push_str(&format!("{},{},{}\n", d.ts_ms, d.stage, d.value));
        }
        std::fs::write(&dispersion, text)?;
    }

    // manifest: everything needed to reproduce the run bit for bit
    let manifest = out_dir.join("manifest.toml");
    {
        let mut text = String::new();
        text.push_str(&format!("config_sha256 = \"{}\"\n", run.config_digest));
        text.push_str(&format!("seed = {}\n", run.seed));
        text.push_str(&format!("stage = \"{}\"\n", run.stage));
        text.push_str(&format!("cases = {}\n", run.records.len()));
        if let Some(ts) = run.chosen_ts {
            text.push_str(&format!("chosen_ts_ms = {ts}\n"));
        }
        if let Some(repr) = &run.representative {
            text.push_str(&format!("representative = \"{repr}\"\n"));
        }
        text.push_str(&format!("rescue_applied = {}\n", run.rescue_applied));
        if let Some(eps) = run.rescue_eps {
            text.push_str(&format!("rescue_eps = {eps}\n"));
        }
        text.push_str(
            "notes = \"catalog primitive patterns, amplitudes and validation motions are configuration defaults; t_CLIE_s in routing.csv is the deterministic simulated-time refinement cost\"\n",
        );
        std::fs::write(&manifest, text)?;
    }

    // full records, including wall-clock timings (non-reproducible field)
    let records = out_dir.join("records.json");
    std::fs::write(&records, serde_json::to_string_pretty(run).expect("run serializes"))?;

    Ok(ReportPaths {
        routing,
        params_final,
        pca_scores,
        pca_loadings,
        validation,
        dispersion,
        manifest,
        records,
    })
}

/// Load a saved run for re-rendering.
pub fn load_run(path: &Path) -> Result<PipelineRun> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| crate::error::Error::Invalid(format!("records.json: {e}")))
}

/// The subset of report files under the byte-reproducibility contract.
pub fn deterministic_files(paths: &ReportPaths) -> Vec<PathBuf> {
    let mut v = vec![paths.routing.clone(), paths.dispersion.clone(), paths.manifest.clone()];
    for p in [&paths.params_final, &paths.pca_scores, &paths.pca_loadings, &paths.validation] {
        if let Some(p) = p {
            v.push(p.clone());
        }
    }
    v
}
