use rand::Rng;

use super::*;
use crate::model::SegNetConfig;
use crate::slim::seeded_rng;
use crate::tensor::{Mode, Tape};

fn tiny_config() -> SegNetConfig {
    SegNetConfig {
        num_classes: 3,
        stage_channels: vec![4, 6],
        ppm_bins: vec![1, 2],
        ppm_channels: 4,
        decoder_channels: 4,
        boundary_channels: 4,
        widths: WidthList::new(vec![0.5, 1.0]).unwrap(),
        input_channels: 3,
        with_boundary: true,
    }
}

fn random_image(seed: u64, b: usize, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = seeded_rng(seed, 99);
    let data: Vec<f32> = (0..b * 3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::from_vec(data, &[b, 3, h, w]).unwrap()
}

#[test]
fn bundle_round_trips_bitwise() {
    let entries = vec![
        (
            "alpha".to_string(),
            RawTensor::from_tensor(&Tensor::<f32>::from_vec(vec![1.5, -2.25, 3.0e-8, f32::MIN_POSITIVE], &[2, 2]).unwrap()),
        ),
        ("beta".to_string(), RawTensor::from_f64s(&[0.1, 0.2, 0.3])),
        (
            "scalar".to_string(),
            RawTensor::from_tensor(&Tensor::<f64>::scalar(42.0)),
        ),
        ("empty".to_string(), RawTensor::from_f64s(&[])),
    ];
    let bytes = encode_bundle(&entries).unwrap();
    let back = decode_bundle("test", &bytes).unwrap();
    assert_eq!(entries, back);
}

#[test]
fn encoded_layout_matches_the_documented_bytes() {
    let t = RawTensor::from_tensor(&Tensor::<f32>::from_vec(vec![1.0, 2.0], &[2]).unwrap());
    let bytes = encode_bundle(&[("a".to_string(), t)]).unwrap();
    let mut want = Vec::new();
    want.extend_from_slice(b"SLSCKPT1");
    want.extend_from_slice(&1u32.to_le_bytes()); // version
    want.extend_from_slice(&1u32.to_le_bytes()); // tensor count
    want.extend_from_slice(&1u32.to_le_bytes()); // name length
    want.push(b'a');
    want.push(0); // dtype f32
    want.push(1); // rank
    want.extend_from_slice(&2u64.to_le_bytes());
    want.extend_from_slice(&1.0f32.to_le_bytes());
    want.extend_from_slice(&2.0f32.to_le_bytes());
    assert_eq!(bytes, want);
}

#[test]
fn decode_rejects_structural_corruption() {
    let t = RawTensor::from_f64s(&[1.0]);
    let good = encode_bundle(&[("x".to_string(), t)]).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    let err = decode_bundle("f", &bad_magic).err().unwrap();
    assert!(err.to_string().contains("magic"), "got: {err}");

    let mut bad_version = good.clone();
    bad_version[8] = 9;
    let err = decode_bundle("f", &bad_version).err().unwrap();
    assert!(err.to_string().contains("version"), "got: {err}");

    let truncated = &good[..good.len() - 3];
    let err = decode_bundle("f", truncated).err().unwrap();
    assert!(err.to_string().contains("truncated"), "got: {err}");

    let mut trailing = good.clone();
    trailing.push(0);
    let err = decode_bundle("f", &trailing).err().unwrap();
    assert!(err.to_string().contains("trailing"), "got: {err}");

    let mut bad_dtype = good.clone();
    // magic(8) + version(4) + count(4) + name_len(4) + name(1) = offset 21.
    bad_dtype[21] = 7;
    let err = decode_bundle("f", &bad_dtype).err().unwrap();
    assert!(err.to_string().contains("dtype"), "got: {err}");
}

#[test]
fn model_round_trip_is_bitwise_and_restores_bn_state() {
    let model: SlimSegModel<f32> = SlimSegModel::build(tiny_config(), 5).unwrap();
    let x = random_image(1, 2, 8, 8);

    // Touch both widths in train mode so running stats and flags are
    // nontrivial.
    let tape = Tape::new();
    model.forward(&tape, &x, 0, Mode::Train, true).unwrap();
    model.forward(&tape, &x, 1, Mode::Train, true).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_model(&model, &path).unwrap();
    let loaded: SlimSegModel<f32> = load_model(&path).unwrap();

    assert_eq!(loaded.config(), model.config());
    let dump = |m: &SlimSegModel<f32>| {
        let mut out = Vec::new();
        m.visit(&mut |name, _, t| out.push((name.to_string(), t.to_vec())));
        m.visit_bn_flags(&mut |name, f| out.push((name.to_string(), vec![f.get() as u8 as f32])));
        out
    };
    assert_eq!(dump(&model), dump(&loaded));

    // Eval-mode forwards agree bitwise (running stats round-tripped).
    let tape = Tape::new();
    let a = model.forward(&tape, &x, 0, Mode::Eval, true).unwrap();
    let b = loaded.forward(&tape, &x, 0, Mode::Eval, true).unwrap();
    assert_eq!(a.seg_logits.to_vec(), b.seg_logits.to_vec());
    assert_eq!(
        a.boundary_prob.unwrap().to_vec(),
        b.boundary_prob.unwrap().to_vec()
    );
}

#[test]
fn saving_again_after_reload_is_byte_identical() {
    let model: SlimSegModel<f32> = SlimSegModel::build(tiny_config(), 8).unwrap();
    let bytes = encode_bundle(&model_entries(&model)).unwrap();
    let entries = decode_bundle("mem", &bytes).unwrap();
    let loaded: SlimSegModel<f32> = model_from_entries("mem", &entries).unwrap();
    let bytes2 = encode_bundle(&model_entries(&loaded)).unwrap();
    assert_eq!(bytes, bytes2);
}

#[test]
fn stripping_shrinks_the_checkpoint_and_loads_headless() {
    let mut model: SlimSegModel<f32> = SlimSegModel::build(tiny_config(), 5).unwrap();
    let full = encode_bundle(&model_entries(&model)).unwrap();
    model.strip_boundary_head();
    let stripped = encode_bundle(&model_entries(&model)).unwrap();
    assert!(
        stripped.len() < full.len(),
        "stripped {} should be smaller than full {}",
        stripped.len(),
        full.len()
    );

    let entries = decode_bundle("mem", &stripped).unwrap();
    let loaded: SlimSegModel<f32> = model_from_entries("mem", &entries).unwrap();
    assert!(!loaded.has_boundary_head());
    let x = random_image(2, 2, 8, 8);
    let tape = Tape::new();
    assert!(loaded.forward(&tape, &x, 0, Mode::Train, true).is_err());
    assert!(loaded.forward(&tape, &x, 0, Mode::Train, false).is_ok());
}

#[test]
fn loading_rejects_missing_unknown_and_mistyped_tensors() {
    let model: SlimSegModel<f32> = SlimSegModel::build(tiny_config(), 5).unwrap();
    let entries = model_entries(&model);

    let missing: Vec<_> =
        entries.iter().filter(|(n, _)| n != "dec.classifier.bias").cloned().collect();
    let err = model_from_entries::<f32>("mem", &missing).err().unwrap();
    assert!(err.to_string().contains("missing tensor dec.classifier.bias"), "got: {err}");

    let mut extra = entries.clone();
    extra.push(("enc.bogus".to_string(), RawTensor::from_f64s(&[1.0])));
    let err = model_from_entries::<f32>("mem", &extra).err().unwrap();
    assert!(err.to_string().contains("unexpected tensor enc.bogus"), "got: {err}");

    let err = model_from_entries::<f64>("mem", &entries).err().unwrap();
    assert!(err.to_string().contains("F32"), "got: {err}");

    let mut reshaped = entries.clone();
    let idx = reshaped.iter().position(|(n, _)| n == "dec.classifier.bias").unwrap();
    reshaped[idx].1.shape = vec![1, 3];
    let err = model_from_entries::<f32>("mem", &reshaped).err().unwrap();
    assert!(err.to_string().contains("shape"), "got: {err}");
}

#[test]
fn checkpoint_architecture_metadata_is_validated() {
    let model: SlimSegModel<f32> = SlimSegModel::build(tiny_config(), 5).unwrap();
    let mut entries = model_entries(&model);
    let idx = entries.iter().position(|(n, _)| n == "meta.num_classes").unwrap();
    entries[idx].1 = RawTensor::from_f64s(&[2.5]);
    let err = model_from_entries::<f32>("mem", &entries).err().unwrap();
    assert!(err.to_string().contains("non-integral"), "got: {err}");

    entries.remove(idx);
    let err = model_from_entries::<f32>("mem", &entries).err().unwrap();
    assert!(err.to_string().contains("missing meta.num_classes"), "got: {err}");
}
