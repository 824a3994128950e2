//! JSON-lines utterance manifests.
//!
//! One record per line. Audio is either a single multichannel WAV
//! (`mixture`) or one mono WAV per microphone (`channels`). `speech` and
//! `noise` point at the clean components and are only read for evaluation.
//! Relative paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::types::AudioClip;
use crate::wav::{read_wav, read_wav_set};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<PathBuf>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<PathBuf>,
}

impl ManifestRecord {
    pub fn load_mixture(&self) -> Result<AudioClip<f64>> {
        match (&self.mixture, &self.channels) {
            (Some(p), None) => read_wav(p),
            (None, Some(ps)) => read_wav_set(ps),
            _ => bail!(Format, "record {} needs exactly one of `mixture` or `channels`", self.id),
        }
    }

    /// Clean speech and noise images, if the record carries them.
    pub fn load_components(&self) -> Result<(AudioClip<f64>, AudioClip<f64>)> {
        match (&self.speech, &self.noise) {
            (Some(s), Some(n)) => Ok((read_wav(s)?, read_wav(n)?)),
            _ => bail!(InvalidArgument, "record {} has no oracle speech/noise components", self.id),
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.mixture.iter_mut().for_each(fix);
        self.channels.iter_mut().flatten().for_each(fix);
        self.speech.iter_mut().for_each(fix);
        self.noise.iter_mut().for_each(fix);
    }
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut r: ManifestRecord =
            serde_json::from_str(line).map_err(|e| crate::Error::Format(format!("manifest line {}: {e}", i + 1)))?;
        r.resolve(base);
        out.push(r);
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| crate::Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Serializes records one per line (paths written as given).
pub fn format_manifest(records: &[ManifestRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_resolved() {
        let r = parse_manifest("{\"id\":\"a\",\"mixture\":\"x/m.wav\"}\n\n", Path::new("/data")).unwrap();
        assert_eq!(r[0].mixture.as_deref(), Some(Path::new("/data/x/m.wav")));
        assert!(parse_manifest("{\"id\":1}", Path::new(".")).is_err());
    }
}
