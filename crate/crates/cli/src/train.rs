use std::path::PathBuf;

use beamlearn::checkpoint::{load_checkpoint, save_checkpoint};
use beamlearn::manifest::read_manifest;
use beamlearn::stft::StftConfig;
use beamlearn::trainer::{train, ManifestSource, TrainConfig, TrainReport};
use beamlearn::{Error, Result};
use clap::Args;
use serde_json::json;

use crate::table::Table;
use crate::{load_config, write_json, Report};

pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "loss_trace.json";

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON-lines manifest of training mixtures.
    #[arg(long, short)]
    pub manifest: PathBuf,

    /// `key = value` training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set steps=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Continue from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,

    /// Checkpoint directory; also receives `report.json` and `loss_trace.json`.
    #[arg(long, short)]
    pub out: PathBuf,
}

fn write_reports(a: &TrainArgs, report: &TrainReport) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join(REPORT_FILE), report)?;
    write_json(&a.out.join(TRACE_FILE), &report.steps)
}

pub fn run(a: &TrainArgs) -> Result<Report> {
    let cfg = TrainConfig::default().apply(load_config(a.config.as_deref(), &a.overrides)?)?;
    let records = read_manifest(&a.manifest)?;
    if records.is_empty() {
        return Err(Error::Config(format!("manifest {} has no records", a.manifest.display())));
    }
    let init = match &a.init {
        Some(dir) => Some(load_checkpoint(dir)?.0),
        None => None,
    };
    let source = ManifestSource {
        records,
        stft: StftConfig::default(),
    };
    let mut trained = match train(&source, &cfg, init) {
        Ok(t) => t,
        Err(Error::Aborted { reason, report }) => {
            write_reports(a, &report)?;
            return Err(Error::Aborted { reason, report });
        }
        Err(e) => return Err(e),
    };
    let id = save_checkpoint(&a.out, &trained.net, Some(cfg.to_kv()), trained.report.steps.len())?;
    trained.report.checkpoint = Some(id.clone());
    let r = &trained.report;
    write_reports(a, r)?;

    let initial = r.initial_smoothed().unwrap_or(f64::NAN);
    let last = r.final_smoothed().unwrap_or(f64::NAN);
    let mut t = Table::new(["quantity", "value"]);
    t.push(["loss_variant".to_string(), r.loss_variant.to_string()]);
    t.push(["accepted_steps".to_string(), r.steps.len().to_string()]);
    t.push(["rejected_steps".to_string(), r.rejected.len().to_string()]);
    t.push(["permutation_fixes".to_string(), r.permutation_fixes.len().to_string()]);
    t.push(["initial_smoothed_loss".to_string(), format!("{initial:.6}")]);
    t.push(["final_smoothed_loss".to_string(), format!("{last:.6}")]);
    t.push(["wall_clock_s".to_string(), format!("{:.1}", r.wall_clock_secs)]);
    t.push(["checkpoint".to_string(), id.clone()]);
    Ok(Report {
        text: t.render(),
        json: json!({
            "loss_variant": r.loss_variant,
            "accepted_steps": r.steps.len(),
            "rejected_steps": r.rejected.len(),
            "permutation_fixes": r.permutation_fixes.len(),
            "initial_smoothed_loss": initial,
            "final_smoothed_loss": last,
            "wall_clock_s": r.wall_clock_secs,
            "checkpoint": id,
            "out": a.out,
        }),
    })
}
