//! RIFF WAV input/output (16-bit PCM and 32-bit float).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{bail, Result};
use crate::types::AudioClip;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WavEncoding {
    #[default]
    Pcm16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip<f64>> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => crate::Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => crate::Error::Wav(other),
    })?;
    let spec = reader.spec();
    let d = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Int, 24) => reader
            .samples::<i32>()
            .map(|s| s.map(|v| f64::from(v) / 8_388_608.0))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Int, 32) => reader
            .samples::<i32>()
            .map(|s| s.map(|v| f64::from(v) / 2_147_483_648.0))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => bail!(Format, "unsupported wav sample format {fmt:?} with {bits} bits"),
    };
    let n = interleaved.len() / d;
    let channels = (0..d).map(|c| (0..n).map(|i| interleaved[i * d + c]).collect()).collect();
    AudioClip::new(spec.sample_rate, channels)
}

/// Reads a set of single-channel files as one multichannel clip.
pub fn read_wav_set<P: AsRef<Path>>(paths: &[P]) -> Result<AudioClip<f64>> {
    if paths.is_empty() {
        bail!(InvalidArgument, "empty wav file set");
    }
    let mut chans = Vec::new();
    let mut rate = None;
    for p in paths {
        let clip = read_wav(p)?;
        if *rate.get_or_insert(clip.sample_rate) != clip.sample_rate {
            bail!(Format, "sample rates differ across {}", p.as_ref().display());
        }
        for c in 0..clip.num_channels() {
            chans.push(clip.channel(c).to_vec());
        }
    }
    AudioClip::new(rate.unwrap_or(16000), chans)
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip<f64>, encoding: WavEncoding) -> Result<()> {
    let d = clip.num_channels();
    let spec = WavSpec {
        channels: d as u16,
        sample_rate: clip.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut w = WavWriter::create(path.as_ref(), spec)?;
    for i in 0..clip.len() {
        for c in 0..d {
            let v = clip.channel(c)[i];
            match encoding {
                WavEncoding::Pcm16 => w.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
                WavEncoding::Float32 => w.write_sample(v as f32)?,
            }
        }
    }
    w.finalize()?;
    Ok(())
}
