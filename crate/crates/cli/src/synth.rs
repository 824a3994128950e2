use std::path::PathBuf;

use beamlearn::scene::{scene_id, write_scene_set, SceneSetConfig, SceneSpec};
use beamlearn::Result;
use clap::Args;
use serde::Serialize;
use serde_json::json;

use crate::table::{fmt_db, Table};
use crate::{load_config, Report};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `key = value` scene-set configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set scenes=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Output directory; receives one directory per scene and `manifest.jsonl`.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SceneRow<'a> {
    id: String,
    #[serde(flatten)]
    spec: &'a SceneSpec,
}

pub fn run(a: &SynthArgs) -> Result<Report> {
    let mut kv = load_config(a.config.as_deref(), &a.overrides)?;
    let mut cfg = SceneSetConfig::default();
    cfg.apply(&mut kv)?;
    kv.finish()?;
    let manifest = write_scene_set(&cfg, &a.out)?;

    let specs: Vec<SceneSpec> = (0..cfg.scenes).map(|i| cfg.scene(i)).collect();
    let mut t = Table::new(["id", "snr_db", "azimuth_deg", "t60_s"]);
    let mut rows = Vec::with_capacity(specs.len());
    for (i, s) in specs.iter().enumerate() {
        let t60 = match s.propagation {
            beamlearn::scene::Propagation::Rir { t60, .. } => t60,
            _ => 0.0,
        };
        t.push([scene_id(i), fmt_db(s.snr_db), format!("{:.1}", s.propagation.azimuth_deg()), format!("{t60:.2}")]);
        rows.push(SceneRow { id: scene_id(i), spec: s });
    }
    let text = format!("{}manifest: {}\n", t.render(), manifest.display());
    Ok(Report {
        text,
        json: json!({ "manifest": manifest, "config": cfg, "scenes": rows }),
    })
}
