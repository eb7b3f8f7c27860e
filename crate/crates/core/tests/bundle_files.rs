use std::fs;

use compmap_core::bundle::{load_bundle, save_bundle, InputSource, MANIFEST_FILE};
use compmap_core::matrix::HEADER_LEN;
use compmap_core::synth::{generate, SynthConfig};

fn config() -> SynthConfig {
    SynthConfig {
        n_primitives: 12,
        n_composites: 6,
        n_samples: 150,
        flip_noise: 0.1,
        blur_noise: 0.2,
        seed: 4,
        ..SynthConfig::default()
    }
}

#[test]
fn save_load_save_is_byte_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = generate(&config()).unwrap();
    save_bundle(&bundle, &tmp.path().join("a")).unwrap();
    let loaded = load_bundle(&tmp.path().join("a")).unwrap();
    save_bundle(&loaded, &tmp.path().join("b")).unwrap();
    for name in [MANIFEST_FILE, "activations.f32", "ground_truth.u8", "embeddings.f32"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(name)).unwrap(),
            fs::read(tmp.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }
    assert_eq!(loaded.labels(), bundle.labels());
    for i in [0, 77, 149] {
        assert_eq!(loaded.input_row(i, InputSource::Predicted), bundle.input_row(i, InputSource::Predicted));
        assert_eq!(loaded.gt_row(i), bundle.gt_row(i));
    }
}

#[test]
fn file_sizes_follow_header_plus_payload() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = generate(&config()).unwrap();
    save_bundle(&bundle, tmp.path()).unwrap();
    let len = |name: &str| fs::metadata(tmp.path().join(name)).unwrap().len() as usize;
    assert_eq!(len("activations.f32"), HEADER_LEN + 12 * 150 * 4);
    assert_eq!(len("ground_truth.u8"), HEADER_LEN + 12 * 150);
    assert_eq!(len("embeddings.f32"), HEADER_LEN + 12 * 6 * 4);
}

#[test]
fn truncated_matrix_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    save_bundle(&generate(&config()).unwrap(), tmp.path()).unwrap();
    let path = tmp.path().join("activations.f32");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    let err = load_bundle(tmp.path()).unwrap_err();
    assert_eq!(err.kind(), compmap_core::ErrorKind::Data);
}
