use std::path::PathBuf;

use beamlearn::checkpoint::load_checkpoint;
use beamlearn::kvconfig::KeyValues;
use beamlearn::masknet::Pooling;
use beamlearn::stft::StftConfig;
use beamlearn::trainer::{infer_masks_pooled, TrainConfig};
use beamlearn::Result;
use clap::Args;
use serde_json::json;

use crate::audio::{enhance_clip, export, load_input, mean, Enhanced};
use crate::table::Table;
use crate::Report;

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long, short)]
    pub checkpoint: PathBuf,

    /// Multichannel WAV, or one mono WAV per microphone (repeat the flag).
    #[arg(long, short, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,

    /// Enhanced mono WAV.
    #[arg(long, short)]
    pub output: PathBuf,

    /// Refine network masks with one M-step and one E-step. Without a value
    /// it means `true`; when absent the checkpoint's training setting is used.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub extra_em_step: Option<bool>,

    /// Channel pooling of the network masks.
    #[arg(long, default_value = "median")]
    pub pool: Pooling,

    /// Directory for `mask_<k>.pgm` images and `masks.btf`.
    #[arg(long)]
    pub export_masks: Option<PathBuf>,

    /// BTF1 file for the (F, D) beamformer weights.
    #[arg(long)]
    pub export_weights: Option<PathBuf>,
}

pub(crate) fn summary(e: &Enhanced) -> (Table, serde_json::Value) {
    let lambda_db: Vec<f64> = e.weights.lambda.iter().map(|l| 10.0 * l.log10()).collect();
    let mut t = Table::new(["quantity", "value"]);
    t.push(["frames".to_string(), e.masks.frames().to_string()]);
    t.push(["bins".to_string(), e.masks.bins().to_string()]);
    t.push(["empty_mask_bins".to_string(), e.diagnostics.empty.len().to_string()]);
    t.push(["mean_eigenvalue_db".to_string(), format!("{:.2}", mean(&lambda_db))]);
    t.push(["speech_class".to_string(), e.speech_class.to_string()]);
    let j = json!({
        "frames": e.masks.frames(),
        "bins": e.masks.bins(),
        "empty_mask_bins": e.diagnostics.empty,
        "mean_eigenvalue_db": mean(&lambda_db),
        "speech_class": e.speech_class,
    });
    (t, j)
}

pub fn run(a: &EnhanceArgs) -> Result<Report> {
    let (net, index) = load_checkpoint(&a.checkpoint)?;
    let extra = match a.extra_em_step {
        Some(v) => v,
        None => match &index.train_config {
            Some(text) => TrainConfig::default().apply(KeyValues::parse(text)?)?.extra_em_step,
            None => TrainConfig::default().extra_em_step,
        },
    };
    let clip = load_input(&a.input)?;
    let e = enhance_clip(&clip, &StftConfig::default(), |spec| infer_masks_pooled(&net, spec, a.pool, extra))?;
    let ex = export(&e, Some(&a.output), a.export_masks.as_deref(), a.export_weights.as_deref())?;
    let (mut t, mut j) = summary(&e);
    t.push(["checkpoint".to_string(), index.id.clone()]);
    t.push(["extra_em_step".to_string(), extra.to_string()]);
    t.push(["output".to_string(), a.output.display().to_string()]);
    j["checkpoint"] = json!(index.id);
    j["extra_em_step"] = json!(extra);
    j["exported"] = json!(ex);
    Ok(Report { text: t.render(), json: j })
}
