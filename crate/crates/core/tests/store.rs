mod common;

use proptest::prelude::*;
use simclust_core::store::{decode_fvec, encode_fvec, Manifest};
use simclust_core::*;

#[test]
fn count_mismatch_names_the_class() {
    let mut rng = common::rng(13);
    let store = common::random_store(&mut rng, 3, 4, 5);
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = save_store(&store, dir.path()).unwrap();
    let mut manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    manifest.classes[1].count += 1;
    std::fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
    let err = load_store(&manifest_path).unwrap_err().to_string();
    assert!(err.contains("class1"), "{err}");
}

#[test]
fn malformed_fvec_reports_offsets() {
    let rows = vec![vec![1.0f32, 2.0], vec![3.0, 4.0]];
    let bytes = encode_fvec(&rows).unwrap();
    assert_eq!(&bytes[..5], b"FVEC1");
    assert_eq!(decode_fvec(&bytes).unwrap(), (2, rows));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_fvec(&bad), Err(FvecError::BadMagic { .. })));
    assert!(matches!(
        decode_fvec(&bytes[..bytes.len() - 1]),
        Err(FvecError::Truncated { .. })
    ));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(
        decode_fvec(&long),
        Err(FvecError::TrailingBytes {
            offset: 29,
            extra: 1
        })
    ));
    let mut nan = bytes.clone();
    nan[17..21].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(
        decode_fvec(&nan),
        Err(FvecError::NonFinite { offset: 17, .. })
    ));
}

#[test]
fn store_with_flower_split_names() {
    let fixture = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/oxford_flowers_two_split.json"
    );
    let split = load_split(fixture).unwrap();
    let classes: Vec<ClassEmbeddings> = split
        .assignments
        .keys()
        .enumerate()
        .map(|(i, name)| {
            ClassEmbeddings::new(name.clone(), 3, vec![1.0 + i as f32, 1.0, 2.0]).unwrap()
        })
        .collect();
    let store = DatasetStore::new(3, classes, "flowers").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let back = load_store(save_store(&store, dir.path()).unwrap()).unwrap();
    assert_eq!(back.num_classes(), 102);
    split.validate_covers(&back.class_names()).unwrap();
}

#[test]
fn split_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/oxford_flowers_three_split.json"
    );
    let split = load_split(fixture).unwrap();
    let path = dir.path().join("split.json");
    save_split(&split, &path).unwrap();
    assert_eq!(load_split(&path).unwrap(), split);
    assert_eq!(split.members(2).len(), 17);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stores_round_trip(
        classes in prop::collection::vec(
            ("[a-z][a-z _/.-]{0,12}", prop::collection::vec(prop::num::f32::NORMAL | prop::num::f32::ZERO, 1..24)),
            1..5,
        ),
    ) {
        let dim = 1;
        let mut seen = std::collections::HashSet::new();
        let classes: Vec<ClassEmbeddings> = classes
            .into_iter()
            .filter(|(n, _)| seen.insert(n.clone()))
            .map(|(n, v)| ClassEmbeddings::new(n, dim, v).unwrap())
            .collect();
        let store = DatasetStore::new(dim, classes, "prop").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let back = load_store(save_store(&store, dir.path()).unwrap()).unwrap();
        prop_assert_eq!(back, store);
    }
}
