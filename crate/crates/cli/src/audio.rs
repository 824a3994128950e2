//! Input loading and the mask-to-waveform path shared by the commands.

use std::path::{Path, PathBuf};

use beamlearn::beamformer::{enhance, select_speech_class, BeamformerWeights, CovarianceDiagnostics};
use beamlearn::stft::{istft, stft, StftConfig};
use beamlearn::tensorfile::{affiliations_tensor, weights_tensor, write_tensor};
use beamlearn::types::{AudioClip, ClassAffiliations, ComplexSpectrogram};
use beamlearn::wav::{read_wav, read_wav_set, write_wav, WavEncoding};
use beamlearn::{Error, Result};
use serde::Serialize;

/// One multichannel WAV, or one mono WAV per microphone.
pub fn load_input(paths: &[PathBuf]) -> Result<AudioClip<f64>> {
    let clip = match paths {
        [] => return Err(Error::Config("no input given".into())),
        [one] => read_wav(one)?,
        many => read_wav_set(many)?,
    };
    if clip.num_channels() < 2 {
        return Err(Error::InvalidArgument(format!(
            "beamforming needs at least two channels, input has {}",
            clip.num_channels()
        )));
    }
    Ok(clip)
}

pub struct Enhanced {
    pub audio: AudioClip<f64>,
    pub masks: ClassAffiliations<f64>,
    pub weights: BeamformerWeights<f64>,
    pub speech_class: usize,
    pub diagnostics: CovarianceDiagnostics,
}

/// Transforms `clip`, asks `masks` for class affiliations, beamforms and
/// resynthesizes. The output is zero-padded to the input length.
pub fn enhance_clip(
    clip: &AudioClip<f64>,
    cfg: &StftConfig,
    masks: impl FnOnce(&ComplexSpectrogram<f64>) -> Result<ClassAffiliations<f64>>,
) -> Result<Enhanced> {
    let spec = stft(clip, cfg)?;
    let masks = masks(&spec)?;
    let (speech_class, _) = select_speech_class(&spec, &masks)?;
    let (out, weights, diagnostics) = enhance(&spec, &masks)?;
    let mut audio = istft(&out, cfg, clip.sample_rate)?;
    let mut samples = audio.channel(0).to_vec();
    samples.resize(clip.len(), 0.0);
    audio = AudioClip::new(clip.sample_rate, vec![samples])?;
    Ok(Enhanced {
        audio,
        masks,
        weights,
        speech_class,
        diagnostics,
    })
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Exported {
    pub output: Option<PathBuf>,
    pub images: Vec<PathBuf>,
    pub tensors: Vec<PathBuf>,
}

/// Writes the enhanced WAV and, on request, masks (PGM plus `masks.btf`)
/// and beamformer weights.
pub fn export(
    e: &Enhanced,
    output: Option<&Path>,
    mask_dir: Option<&Path>,
    weights_file: Option<&Path>,
) -> Result<Exported> {
    let mut ex = Exported::default();
    if let Some(p) = output {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        write_wav(p, &e.audio, WavEncoding::Float32)?;
        ex.output = Some(p.to_path_buf());
    }
    if let Some(dir) = mask_dir {
        ex.images = crate::pgm::write_mask_images(dir, &e.masks)?;
        let p = dir.join("masks.btf");
        write_tensor(&p, &affiliations_tensor(&e.masks))?;
        ex.tensors.push(p);
    }
    if let Some(p) = weights_file {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        write_tensor(p, &weights_tensor(&e.weights))?;
        ex.tensors.push(p.to_path_buf());
    }
    Ok(ex)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}
