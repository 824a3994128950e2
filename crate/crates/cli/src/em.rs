use std::path::PathBuf;

use beamlearn::mixture::{em_fit, normalize, permutation_align, EmInit};
use beamlearn::stft::StftConfig;
use beamlearn::tensorfile::{mixture_tensors, write_tensor};
use beamlearn::types::{ClassAffiliations, ComplexSpectrogram};
use beamlearn::Result;
use clap::Args;
use serde_json::json;

use crate::audio::{enhance_clip, export, load_input};
use crate::table::Table;
use crate::{Report, Toggle};

#[derive(Debug, Args)]
pub struct EmArgs {
    /// Multichannel WAV, or one mono WAV per microphone (repeat the flag).
    #[arg(long, short, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,

    /// Enhanced mono WAV.
    #[arg(long, short)]
    pub output: Option<PathBuf>,

    #[arg(long, default_value_t = 50)]
    pub iterations: usize,

    /// Align class permutations across frequencies after EM.
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub pa: Toggle,

    #[arg(long, default_value_t = 2)]
    pub classes: usize,

    /// Seed of the random initial affiliations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Fixed-point applications of the shape update per M-step.
    #[arg(long, default_value_t = 1)]
    pub fixed_point_iters: usize,

    /// Directory for masks (`mask_<k>.pgm`, `masks.btf`) and mixture
    /// parameters (`mixture_weights.btf`, `mixture_shapes.btf`).
    #[arg(long)]
    pub export_masks: Option<PathBuf>,

    /// BTF1 file for the (F, D) beamformer weights.
    #[arg(long)]
    pub export_weights: Option<PathBuf>,
}

/// Settings of a plain EM run.
#[derive(Clone, Copy, Debug)]
pub struct EmSettings {
    pub classes: usize,
    pub iterations: usize,
    pub pa: bool,
    pub seed: u64,
    pub fixed_point_iters: usize,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            classes: 2,
            iterations: 50,
            pa: true,
            seed: 0,
            fixed_point_iters: 1,
        }
    }
}

pub struct EmMasks {
    pub masks: ClassAffiliations<f64>,
    pub trace: Vec<f64>,
    pub params: beamlearn::mixture::MixtureParams<f64>,
    pub bins_permuted: usize,
}

/// EM from random affiliations, then optional permutation alignment.
pub fn em_masks(spec: &ComplexSpectrogram<f64>, s: EmSettings) -> Result<EmMasks> {
    let fit = em_fit(&normalize(spec), s.classes, s.iterations, EmInit::Random(s.seed), s.fixed_point_iters)?;
    let (masks, bins_permuted) = if s.pa {
        let (g, map) = permutation_align(&fit.gamma)?;
        let moved = map.iter().filter(|p| p.iter().enumerate().any(|(i, &k)| i != k)).count();
        (g, moved)
    } else {
        (fit.gamma, 0)
    };
    Ok(EmMasks {
        masks,
        trace: fit.trace,
        params: fit.params,
        bins_permuted,
    })
}

pub fn run(a: &EmArgs) -> Result<Report> {
    let settings = EmSettings {
        classes: a.classes,
        iterations: a.iterations,
        pa: a.pa.on(),
        seed: a.seed,
        fixed_point_iters: a.fixed_point_iters,
    };
    let clip = load_input(&a.input)?;
    let mut fit = None;
    let e = enhance_clip(&clip, &StftConfig::default(), |spec| {
        let m = em_masks(spec, settings)?;
        let g = m.masks.clone();
        fit = Some(m);
        Ok(g)
    })?;
    let fit = fit.expect("mask callback ran");
    let ex = export(&e, a.output.as_deref(), a.export_masks.as_deref(), a.export_weights.as_deref())?;
    if let Some(dir) = &a.export_masks {
        let (w, b) = mixture_tensors(&fit.params);
        write_tensor(dir.join("mixture_weights.btf"), &w)?;
        write_tensor(dir.join("mixture_shapes.btf"), &b)?;
    }

    let mut trace = Table::new(["iteration", "log_likelihood", "change"]);
    for (i, ll) in fit.trace.iter().enumerate() {
        let change = if i == 0 { String::new() } else { format!("{:.6e}", ll - fit.trace[i - 1]) };
        trace.push([(i + 1).to_string(), format!("{ll:.6}"), change]);
    }
    let (mut t, mut j) = crate::enhance::summary(&e);
    t.push(["bins_permuted".to_string(), fit.bins_permuted.to_string()]);
    j["bins_permuted"] = json!(fit.bins_permuted);
    j["classes"] = json!(a.classes);
    j["pa"] = json!(settings.pa);
    j["log_likelihood"] = json!(fit.trace);
    j["exported"] = json!(ex);
    Ok(Report {
        text: format!("{}\n{}", trace.render(), t.render()),
        json: j,
    })
}
