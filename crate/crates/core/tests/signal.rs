use beamlearn::stft::{istft, stft, StftConfig};
use beamlearn::types::AudioClip;
use beamlearn::wav::{read_wav, read_wav_set, write_wav, WavEncoding};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn white(channels: usize, len: usize, seed: u64) -> AudioClip<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioClip::new(16000, (0..channels).map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()).unwrap()
}

/// Reconstruction error of the interior samples relative to their energy, in dB.
fn interior_error_db<T: beamlearn::Scalar>(x: &AudioClip<T>, y: &AudioClip<T>, margin: usize) -> f64 {
    let (mut e, mut s) = (0.0, 0.0);
    for c in 0..x.num_channels() {
        let n = y.len();
        for i in margin..n - margin {
            let a = x.channel(c)[i].as_f64();
            let b = y.channel(c)[i].as_f64();
            e += (a - b).powi(2);
            s += a * a;
        }
    }
    10.0 * (e / s).log10()
}

#[test]
fn white_noise_round_trip_below_minus_60_db() {
    let cfg = StftConfig::default();
    let x = white(2, 16000, 1);
    let spec = stft(&x, &cfg).unwrap();
    assert_eq!(spec.bins(), 257);
    assert_eq!(spec.frames(), cfg.frames_for(16000));
    let y = istft(&spec, &cfg, 16000).unwrap();
    assert!(y.len() <= x.len() && x.len() - y.len() < cfg.shift);
    let err = interior_error_db(&x, &y, cfg.window_size);
    assert!(err < -60.0, "{err} dB");

    let x32 = x.map(|v| v as f32);
    let y32 = istft(&stft(&x32, &cfg).unwrap(), &cfg, 16000).unwrap();
    let err32 = interior_error_db(&x32, &y32, cfg.window_size);
    assert!(err32 < -60.0, "{err32} dB");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn round_trip_holds_for_other_frame_settings(seed in 0u64..1000, shift in prop::sample::select(vec![64usize, 100, 128, 160])) {
        let cfg = StftConfig { fft_size: 512, window_size: 400, shift, ..Default::default() };
        let x = white(1, 4000, seed);
        let y = istft(&stft(&x, &cfg).unwrap(), &cfg, 16000).unwrap();
        prop_assert!(interior_error_db(&x, &y, cfg.window_size) < -60.0);
    }
}

#[test]
fn invalid_frame_settings_rejected() {
    let x = white(1, 2000, 2);
    for (n, w, s) in [(256, 400, 160), (512, 400, 0), (512, 100, 160)] {
        let cfg = StftConfig { fft_size: n, window_size: w, shift: s, ..Default::default() };
        assert!(stft(&x, &cfg).is_err(), "{n}/{w}/{s}");
    }
}

#[test]
fn wav_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let x = white(3, 1000, 3).map(|v| v * 0.5);
    let f = dir.path().join("f.wav");
    write_wav(&f, &x, WavEncoding::Float32).unwrap();
    let y = read_wav(&f).unwrap();
    assert_eq!(y.sample_rate, 16000);
    assert!(x.samples().iter().zip(y.samples()).all(|(a, b)| *b == f64::from(*a as f32)));

    let p = dir.path().join("p.wav");
    write_wav(&p, &x, WavEncoding::Pcm16).unwrap();
    let y = read_wav(&p).unwrap();
    assert!(x.samples().iter().zip(y.samples()).all(|(a, b)| (a - b).abs() <= 1.0 / 32768.0));

    let mono: Vec<_> = (0..3)
        .map(|c| {
            let path = dir.path().join(format!("ch{c}.wav"));
            write_wav(&path, &x.select(&[c]), WavEncoding::Float32).unwrap();
            path
        })
        .collect();
    let set = read_wav_set(&mono).unwrap();
    assert_eq!(set.num_channels(), 3);
    assert_eq!(set.channel(2), read_wav(&f).unwrap().channel(2));

    let other = AudioClip::new(8000, vec![vec![0.0; 10]]).unwrap();
    let q = dir.path().join("q.wav");
    write_wav(&q, &other, WavEncoding::Float32).unwrap();
    assert!(read_wav_set(&[mono[0].clone(), q]).is_err());
}
