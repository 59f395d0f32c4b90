use std::path::Path;

use clan_core::data::io::{load_bundle, save_bundle, Manifest, MANIFEST_FILE};
use clan_core::data::{generate_bundle, LabelRole, SceneSpec, SynthConfig};
use clan_core::Error;

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        scene: SceneSpec {
            height: 16,
            width: 16,
            ..SceneSpec::default()
        },
        n_source: 5,
        n_target: 4,
        n_eval: 3,
        seed,
        ..SynthConfig::default()
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn round_trip_is_lossless() {
    let bundle = generate_bundle(&small(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&bundle, dir.path()).unwrap();
    assert_eq!(load_bundle(dir.path()).unwrap(), bundle);
}

#[test]
fn same_seed_writes_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_bundle(&generate_bundle(&small(7)).unwrap(), a.path()).unwrap();
    save_bundle(&generate_bundle(&small(7)).unwrap(), b.path()).unwrap();
    assert_eq!(files(a.path()), files(b.path()));

    let c = tempfile::tempdir().unwrap();
    save_bundle(&generate_bundle(&small(8)).unwrap(), c.path()).unwrap();
    assert_ne!(files(a.path()), files(c.path()));
}

#[test]
fn target_labels_are_evaluation_only() {
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&generate_bundle(&small(1)).unwrap(), dir.path()).unwrap();
    let m = Manifest::from_json(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    for s in &m.splits {
        let expected = if s.name.starts_with("target") {
            LabelRole::EvaluationOnly
        } else {
            LabelRole::Training
        };
        assert_eq!(s.labels_role, expected, "{}", s.name);
    }
}

#[test]
fn tampered_array_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&generate_bundle(&small(2)).unwrap(), dir.path()).unwrap();
    let path = dir.path().join("target_eval.labels.u8");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_bundle(dir.path()), Err(Error::Format { .. })));
}

#[test]
fn missing_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_bundle(dir.path()), Err(Error::MissingDataset(_))));
}

#[test]
fn manifest_with_path_in_file_name_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&generate_bundle(&small(2)).unwrap(), dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let bad = text.replacen("\"source_train.images.f64le\"", "\"../source_train.images.f64le\"", 1);
    assert!(Manifest::from_json(&bad).is_err());
}
