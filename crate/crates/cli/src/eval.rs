use std::path::PathBuf;

use beamlearn::beamformer::{enhance, BeamformerWeights};
use beamlearn::checkpoint::load_checkpoint;
use beamlearn::manifest::{read_manifest, ManifestRecord};
use beamlearn::masknet::{MaskNet, Pooling};
use beamlearn::scene::{oracle_masks, snr_metrics};
use beamlearn::stft::{stft, StftConfig};
use beamlearn::tensorfile::{read_tensor, weights_from_tensor};
use beamlearn::trainer::infer_masks_pooled;
use beamlearn::{Error, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::audio::mean;
use crate::em::{em_masks, EmSettings};
use crate::table::{fmt_db, Table};
use crate::{write_json, Report, Toggle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Channel 0 passed through unchanged.
    Identity,
    /// Masks from plain EM.
    Em,
    /// Binary masks from the true speech and noise images.
    Oracle,
    /// Masks from a trained network (needs --checkpoint).
    Network,
    /// Stored weights `<id>.btf` from `enhance`/`em --export-weights`
    /// (needs --weights-dir).
    Weights,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON-lines manifest whose records carry `speech` and `noise`.
    #[arg(long, short)]
    pub manifest: PathBuf,

    #[arg(long, value_enum, default_value_t = Method::Network)]
    pub method: Method,

    #[arg(long, short)]
    pub checkpoint: Option<PathBuf>,

    #[arg(long)]
    pub weights_dir: Option<PathBuf>,

    /// Network method: refine masks with one M-step and one E-step.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value = "true")]
    pub extra_em_step: bool,

    #[arg(long, default_value = "median")]
    pub pool: Pooling,

    /// EM method: iterations.
    #[arg(long, default_value_t = 50)]
    pub iterations: usize,

    /// EM method: permutation alignment.
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub pa: Toggle,

    /// EM method: base seed; scene `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// How weights are obtained for a scene.
pub enum Beamformer {
    Identity,
    Em(EmSettings),
    Oracle,
    Network { net: MaskNet, pooling: Pooling, extra_em_step: bool },
    Weights(PathBuf),
}

impl Beamformer {
    pub fn name(&self) -> &'static str {
        match self {
            Beamformer::Identity => "identity",
            Beamformer::Em(_) => "em",
            Beamformer::Oracle => "oracle",
            Beamformer::Network { .. } => "network",
            Beamformer::Weights(_) => "weights",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneScore {
    pub id: String,
    pub input_snr_db: Vec<f64>,
    pub best_input_snr_db: f64,
    pub output_snr_db: f64,
    /// Output minus best input channel.
    pub gain_db: f64,
    /// Output minus channel 0.
    pub gain_ref0_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub method: String,
    pub scenes: Vec<SceneScore>,
    pub mean_best_input_snr_db: f64,
    pub mean_output_snr_db: f64,
    pub mean_gain_db: f64,
    pub mean_gain_ref0_db: f64,
}

pub fn score_record(rec: &ManifestRecord, index: usize, bf: &Beamformer, cfg: &StftConfig) -> Result<SceneScore> {
    let (speech, noise) = rec.load_components()?;
    let x = stft(&speech, cfg)?;
    let n = stft(&noise, cfg)?;
    let d = x.channels();
    let from_masks = |g| -> Result<BeamformerWeights<f64>> {
        let y = stft(&rec.load_mixture()?, cfg)?;
        Ok(enhance(&y, &g)?.1)
    };
    let w = match bf {
        Beamformer::Identity => {
            let mut e = vec![num_complex::Complex64::new(0.0, 0.0); d];
            e[0].re = 1.0;
            BeamformerWeights::constant(x.bins(), &e)
        }
        Beamformer::Em(s) => {
            let y = stft(&rec.load_mixture()?, cfg)?;
            let s = EmSettings {
                seed: s.seed.wrapping_add(index as u64),
                ..*s
            };
            enhance(&y, &em_masks(&y, s)?.masks)?.1
        }
        Beamformer::Oracle => from_masks(oracle_masks(&x, &n)?)?,
        Beamformer::Network {
            net,
            pooling,
            extra_em_step,
        } => {
            let y = stft(&rec.load_mixture()?, cfg)?;
            enhance(&y, &infer_masks_pooled(net, &y, *pooling, *extra_em_step)?)?.1
        }
        Beamformer::Weights(dir) => weights_from_tensor(&read_tensor(dir.join(format!("{}.btf", rec.id)))?)?,
    };
    let r = snr_metrics(&x, &n, &w)?;
    Ok(SceneScore {
        id: rec.id.clone(),
        gain_ref0_db: r.output_snr_db - r.input_snr_db[0],
        input_snr_db: r.input_snr_db,
        best_input_snr_db: r.best_input_snr_db,
        output_snr_db: r.output_snr_db,
        gain_db: r.gain_db,
    })
}

/// Scores every record, in parallel over scenes; results keep manifest order.
pub fn evaluate(records: &[ManifestRecord], bf: &Beamformer, cfg: &StftConfig) -> Result<EvalSummary> {
    if records.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let scenes = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| score_record(r, i, bf, cfg))
        .collect::<Result<Vec<_>>>()?;
    let avg = |f: fn(&SceneScore) -> f64| mean(&scenes.iter().map(f).collect::<Vec<_>>());
    Ok(EvalSummary {
        method: bf.name().into(),
        mean_best_input_snr_db: avg(|s| s.best_input_snr_db),
        mean_output_snr_db: avg(|s| s.output_snr_db),
        mean_gain_db: avg(|s| s.gain_db),
        mean_gain_ref0_db: avg(|s| s.gain_ref0_db),
        scenes,
    })
}

pub fn render(s: &EvalSummary) -> String {
    let mut t = Table::new(["id", "ch0_snr_db", "best_in_db", "out_db", "gain_db", "gain_ch0_db"]);
    for r in &s.scenes {
        t.push([
            r.id.clone(),
            fmt_db(r.input_snr_db[0]),
            fmt_db(r.best_input_snr_db),
            fmt_db(r.output_snr_db),
            fmt_db(r.gain_db),
            fmt_db(r.gain_ref0_db),
        ]);
    }
    t.push([
        "mean".to_string(),
        fmt_db(mean(&s.scenes.iter().map(|r| r.input_snr_db[0]).collect::<Vec<_>>())),
        fmt_db(s.mean_best_input_snr_db),
        fmt_db(s.mean_output_snr_db),
        fmt_db(s.mean_gain_db),
        fmt_db(s.mean_gain_ref0_db),
    ]);
    format!("method: {}\n{}", s.method, t.render())
}

pub fn run(a: &EvalArgs) -> Result<Report> {
    let bf = match a.method {
        Method::Identity => Beamformer::Identity,
        Method::Oracle => Beamformer::Oracle,
        Method::Em => Beamformer::Em(EmSettings {
            iterations: a.iterations,
            pa: a.pa.on(),
            seed: a.seed,
            ..Default::default()
        }),
        Method::Network => {
            let Some(dir) = &a.checkpoint else {
                return Err(Error::Config("--method network needs --checkpoint".into()));
            };
            Beamformer::Network {
                net: load_checkpoint(dir)?.0,
                pooling: a.pool,
                extra_em_step: a.extra_em_step,
            }
        }
        Method::Weights => match &a.weights_dir {
            Some(d) => Beamformer::Weights(d.clone()),
            None => return Err(Error::Config("--method weights needs --weights-dir".into())),
        },
    };
    let records = read_manifest(&a.manifest)?;
    let summary = evaluate(&records, &bf, &StftConfig::default())?;
    if let Some(p) = &a.out {
        write_json(p, &summary)?;
    }
    Ok(Report {
        text: render(&summary),
        json: serde_json::to_value(&summary)?,
    })
}
