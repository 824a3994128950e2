use beamlearn::autodiff::{Tensor, C64};
use beamlearn::checkpoint::{load_checkpoint, save_checkpoint};
use beamlearn::kvconfig::KeyValues;
use beamlearn::manifest::{format_manifest, read_manifest, ManifestRecord};
use beamlearn::masknet::{Activation, MaskNet, MaskNetConfig};
use beamlearn::tensorfile::{decode, encode, read_tensor, write_tensor};
use beamlearn::trainer::TrainConfig;
use proptest::prelude::*;

proptest! {
    #[test]
    fn tensor_files_round_trip(shape in prop::collection::vec(0usize..4, 0..4), complex: bool, seed: u64) {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|i| (seed.wrapping_add(i as u64) as f64).sin()).collect();
        let t = if complex {
            Tensor::complex(&shape, v.iter().map(|&x| C64::new(x, -x * 0.5)).collect()).unwrap()
        } else {
            Tensor::real(&shape, v).unwrap()
        };
        let bytes = encode(&t);
        prop_assert_eq!(bytes.len(), 16 + 8 * shape.len() + 8 * n * if complex { 2 } else { 1 });
        prop_assert_eq!(decode(&bytes).unwrap(), t);
    }
}

#[test]
fn tensor_file_rejects_bad_headers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.btf");
    let t = Tensor::real(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
    write_tensor(&p, &t).unwrap();
    assert_eq!(read_tensor(&p).unwrap(), t);
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
    assert_eq!(&bytes[12..20], &2u64.to_le_bytes());

    // valid CRC over a wrong magic or dtype code
    let reseal = |mut body: Vec<u8>| {
        body.truncate(body.len() - 4);
        let crc = crc32fast::hash(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        body
    };
    let mut m = bytes.clone();
    m[0] = b'X';
    assert!(decode(&reseal(m)).is_err());
    let mut c = bytes.clone();
    c[4] = 7;
    assert!(decode(&reseal(c)).is_err());
    let mut short = bytes.clone();
    short.truncate(bytes.len() - 12);
    assert!(decode(&reseal(short)).is_err());
}

#[test]
fn manifest_round_trip_and_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let recs = vec![
        ManifestRecord {
            id: "a".into(),
            mixture: Some("a/mix.wav".into()),
            channels: None,
            speech: Some("a/speech.wav".into()),
            noise: Some("a/noise.wav".into()),
        },
        ManifestRecord {
            id: "b".into(),
            mixture: None,
            channels: Some(vec!["b/0.wav".into(), "/abs/1.wav".into()]),
            speech: None,
            noise: None,
        },
    ];
    let path = dir.path().join("m.jsonl");
    std::fs::write(&path, format_manifest(&recs).unwrap()).unwrap();
    let back = read_manifest(&path).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0].mixture.as_deref(), Some(dir.path().join("a/mix.wav").as_path()));
    assert_eq!(back[1].channels.as_ref().unwrap()[1], std::path::PathBuf::from("/abs/1.wav"));
    assert!(back[1].load_components().is_err());
    assert!(read_manifest(dir.path().join("missing.jsonl")).is_err());
}

#[test]
fn checkpoint_round_trip_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let net = MaskNet::new(MaskNetConfig::new(9, Activation::Softmax), 1);
    let cfg = TrainConfig::default();
    let id = save_checkpoint(dir.path(), &net, Some(cfg.to_kv()), 3).unwrap();
    let (back, index) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back, net);
    assert_eq!(index.id, id);
    let kv = KeyValues::parse(index.train_config.as_deref().unwrap()).unwrap();
    assert_eq!(TrainConfig::default().apply(kv).unwrap(), cfg);

    let other = MaskNet::new(MaskNetConfig::new(9, Activation::Softmax), 2);
    write_tensor(dir.path().join("out_b.btf"), &other.params[13]).unwrap();
    let r = load_checkpoint(dir.path());
    assert!(r.is_err(), "{:?}", r.map(|(n, i)| (n.params[13].clone(), i)));
}
