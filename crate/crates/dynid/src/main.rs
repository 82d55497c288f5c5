//! Command-line interface for the identification pipeline.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use dynid::config::RunConfig;
use dynid::dynamics::AuditContext;
use dynid::pipeline::{run_pipeline, PipelineContext};
use dynid::reduction::{numerical_base_reduction, ReducedParamVector};
use dynid::report::{emit_report, load_run};

#[derive(Parser)]
#[command(name = "dynid", about = "Dynamic-parameter identification for serial chains", version)]
struct Cli {
    /// Configuration file; missing sections fall back to bundled defaults.
    /// The DYNID_CONFIG environment variable is used when the flag is absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random element of a run.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the trajectory catalog and write one CSV per entry.
    Catalog {
        #[arg(long, default_value = "out/catalog")]
        out: PathBuf,
    },
    /// Simulate measured logs for catalog trajectories.
    Simulate {
        #[arg(long, default_value = "out/logs")]
        out: PathBuf,
        /// Labels to simulate (default: whole catalog incl. validation).
        #[arg(long)]
        label: Vec<String>,
        /// Disable quantization, dead time and torque noise.
        #[arg(long)]
        ideal: bool,
    },
    /// Run the identification pipeline end to end and emit the report.
    Identify {
        #[arg(long, default_value = "out/run")]
        out: PathBuf,
    },
    /// Positive-definiteness scan of a parameter file over the audit domain.
    Audit {
        /// Parameter CSV (name,unit,value).
        params: PathBuf,
        #[arg(long, default_value_t = 5)]
        grid: usize,
        /// Write the worst poses to this CSV.
        #[arg(long)]
        worst_csv: Option<PathBuf>,
    },
    /// Validation metrics of a parameter file on the held-out trajectories.
    Validate {
        /// Parameter CSV (name,unit,value).
        params: PathBuf,
    },
    /// Re-render report files from a saved records.json.
    Report {
        /// Path to records.json from a previous run.
        records: PathBuf,
        #[arg(long, default_value = "out/report")]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var("DYNID_CONFIG").ok().map(PathBuf::from));
    let cfg = match path {
        Some(p) => RunConfig::load(&p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::bundled()?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_params(ctx: &PipelineContext, path: &PathBuf) -> anyhow::Result<nalgebra::DVector<f64>> {
    let text = std::fs::read_to_string(path)?;
    let parsed = ReducedParamVector::from_csv_str(&text)?;
    if parsed.names != ctx.map.names {
        bail!(
            "parameter file names do not match the chain's base set ({} vs {} entries)",
            parsed.names.len(),
            ctx.map.names.len()
        );
    }
    Ok(parsed.values)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;

    match &cli.command {
        Command::Catalog { out } => {
            let catalog = dynid::excitation::build_catalog(&cfg.catalog)?;
            std::fs::create_dir_all(out)?;
            let mut summary = String::from("label,samples,duration_s\n");
            for t in catalog.identification.iter().chain(catalog.validation.iter()) {
                let file = std::fs::File::create(out.join(format!("{}.csv", t.label)))?;
                t.to_csv(std::io::BufWriter::new(file))?;
                summary.push_str(&format!("{},{},{}\n", t.label, t.len(), t.duration()));
            }
            std::fs::write(out.join("catalog.csv"), summary)?;
            println!(
                "wrote {} identification + {} validation trajectories to {}",
                catalog.identification.len(),
                catalog.validation.len(),
                out.display()
            );
        }
        Command::Simulate { out, label, ideal } => {
            let mut cfg = cfg;
            if *ideal {
                cfg.pipeline.imperfections = false;
            }
            let ctx = PipelineContext::new(cfg)?;
            std::fs::create_dir_all(out)?;
            let labels: Vec<String> = if label.is_empty() {
                ctx.catalog
                    .identification
                    .iter()
                    .chain(ctx.catalog.validation.iter())
                    .map(|t| t.label.clone())
                    .collect()
            } else {
                label.clone()
            };
            for l in &labels {
                let log = ctx.simulate_label(l, cli.seed)?;
                let file = std::fs::File::create(out.join(format!("{l}.csv")))?;
                log.to_csv(std::io::BufWriter::new(file))?;
                println!("{l}: {} ticks", log.len());
            }
        }
        Command::Identify { out } => {
            let run = run_pipeline(cfg, cli.seed)?;
            let paths = emit_report(&run, out)?;
            println!("routing table: {}", paths.routing.display());
            if let Some(p) = &paths.params_final {
                println!("final parameters: {}", p.display());
            }
            if let (Some(ts), Some(repr)) = (run.chosen_ts, &run.representative) {
                println!(
                    "preferred interval {ts} ms, representative {repr}, rescue applied: {}",
                    run.rescue_applied
                );
            }
            for v in &run.validation {
                println!(
                    "{}: rmse {:.5} -> {:.5}, mne {:.5} -> {:.5}",
                    v.label, v.clie_rmse, v.rescue_rmse, v.clie_mne, v.rescue_mne
                );
            }
        }
        Command::Audit { params, grid, worst_csv } => {
            let chain = cfg.chain.build()?;
            let map = numerical_base_reduction(&chain, 400, 7)?;
            let ctx = AuditContext::new(&chain, &map).with_grid(*grid);
            let text = std::fs::read_to_string(params)?;
            let parsed = ReducedParamVector::from_csv_str(&text)?;
            if parsed.names != map.names {
                bail!("parameter file does not match the chain's base set");
            }
            let scan = ctx.scan(&parsed.values);
            let verdict = if scan.min_eig > 0.0 { "PD" } else { "not PD" };
            println!(
                "min eigenvalue {:.6e} over {} poses ({verdict})",
                scan.min_eig,
                ctx.n_poses()
            );
            println!(
                "worst pose (deg): {:?}",
                scan.argmin.iter().map(|r| (r.to_degrees() * 10.0).round() / 10.0).collect::<Vec<_>>()
            );
            if let Some(path) = worst_csv {
                let mut text = String::from("min_eig");
                for j in 1..=scan.argmin.len() {
                    text.push_str(&format!(",q{j}_deg"));
                }
                text.push('\n');
                for (pose, eig) in &scan.worst {
                    text.push_str(&format!("{eig}"));
                    for v in pose {
                        text.push_str(&format!(",{}", v.to_degrees()));
                    }
                    text.push('\n');
                }
                std::fs::write(path, text)?;
            }
        }
        Command::Validate { params } => {
            let ctx = PipelineContext::new(cfg)?;
            let phi = load_params(&ctx, params)?;
            let ts = *ctx.config.pipeline.ts_ms.iter().min().unwrap();
            for t in &["V01", "V02", "V03"] {
                let log = ctx.simulate_label(t, cli.seed)?;
                let (rmse, mne) =
                    dynid::pipeline::validation_metrics(&ctx, &phi, t, &log, ts)?;
                println!("{t}: rmse {rmse:.5} N*m, mne {mne:.5}");
            }
        }
        Command::Report { records, out } => {
            let run = load_run(records)?;
            let paths = emit_report(&run, out)?;
            println!("re-rendered report into {}", paths.routing.parent().unwrap().display());
        }
    }
    Ok(())
}
