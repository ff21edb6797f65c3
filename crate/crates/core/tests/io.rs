//! File formats: PFM, checkpoints, images and dataset layouts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stereonet::checkpoint::Checkpoint;
use stereonet::data::pfm::{decode_pfm, encode_pfm};
use stereonet::data::{
    load_dataset, read_image, read_pfm_gray, synth_pair, write_fixture, write_image, write_pfm, DisparityField, Layout,
    SynthSpec,
};
use stereonet::refinement::RefineMode;
use stereonet::{ModelConfig, StereoNet, Tensor};

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn pfm_file_round_trip_keeps_every_bit() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..50 {
        let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
        let t = Tensor::from_fn(&[h, w], |_| f32::from_bits(rng.random::<u32>() & 0xFF7F_FFFF));
        let p = dir.path().join(format!("{i}.pfm"));
        write_pfm(&p, &t).unwrap();
        let back = read_pfm_gray(&p).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(bits(&back), bits(&t));
    }
}

#[test]
fn big_endian_pfm_is_read() {
    let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
    for v in [1.5f32, -2.0] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    let pfm = decode_pfm(&bytes).unwrap();
    assert!(!pfm.little_endian);
    assert_eq!(pfm.data.data(), &[1.5, -2.0]);
    let again = decode_pfm(&encode_pfm(&pfm.data).unwrap()).unwrap();
    assert!(again.little_endian);
    assert_eq!(again.data, pfm.data);
}

#[test]
fn model_checkpoint_round_trip() {
    let cfg = ModelConfig {
        max_disparity: 31,
        mode: RefineMode::Single,
        channels: 8,
        refiner_channels: 8,
        ..Default::default()
    };
    let model = StereoNet::<f32>::new(cfg, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.to_checkpoint().save(&path).unwrap();
    let back = StereoNet::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.config, model.config);
    for (a, b) in model.params.iter().zip(back.params.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    let pair = synth_pair(&SynthSpec::new(64, 32, DisparityField::Constant(4.0), 1)).unwrap();
    let x = model.predict(&pair.left, &pair.right).unwrap();
    let y = back.predict(&pair.left, &pair.right).unwrap();
    assert_eq!(x, y);
}

#[test]
fn checkpoint_rejects_mismatched_architecture() {
    let small = StereoNet::<f32>::new(ModelConfig { max_disparity: 31, channels: 8, ..Default::default() }, 0).unwrap();
    let mut ck = small.to_checkpoint();
    ck.metadata.insert("channels".into(), "16".into());
    assert!(StereoNet::from_checkpoint(&ck).is_err());
}

#[test]
fn images_round_trip_through_png_and_ppm() {
    let dir = tempfile::tempdir().unwrap();
    let img = Tensor::from_fn(&[5, 7, 3], |i| ((i * 37) % 256) as f32);
    for ext in ["png", "ppm"] {
        let p = dir.path().join(format!("x.{ext}"));
        write_image(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }
}

#[test]
fn fixture_layout_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let samples: Vec<_> = (0..3)
        .map(|i| synth_pair(&SynthSpec::new(32, 16, DisparityField::Constant(1.5 + i as f64), i)).unwrap())
        .collect();
    write_fixture(dir.path(), &samples).unwrap();
    let back = load_dataset(dir.path(), Layout::Fixture).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.valid_mask, b.valid_mask);
        let round = a.left.map(|v| v.round().clamp(0.0, 255.0));
        assert_eq!(round, b.left);
        for ((x, y), &m) in a.gt_left.values.data().iter().zip(b.gt_left.values.data()).zip(&a.valid_mask) {
            if m {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert!(b.gt_right.is_some());
    }
}

#[test]
fn empty_or_missing_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("left")).unwrap();
    assert!(load_dataset(dir.path(), Layout::Fixture).is_err());
    assert!(load_dataset(&dir.path().join("nope"), Layout::Kitti).is_err());
}
