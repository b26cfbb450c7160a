use std::io::Write;

use boostkit_core::{LabeledDataset, Sample};
use boostkit_harness::dataset::{
    decode_bkim, encode_bkim, load_image_dataset, load_sequence_dataset, write_image_dataset, write_sequence_dataset,
};
use boostkit_harness::HarnessError;
use boostkit_nn::Tensor;
use std::path::Path;

/// Three 1x2x2 images, classes 1..=3 stored 1-based.
fn hand_built() -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"BKIM");
    b.extend_from_slice(&[1, 0]); // version
    b.extend_from_slice(&[3, 0, 0, 0]); // n
    b.extend_from_slice(&[1, 0, 2, 0, 2, 0, 3, 0]); // C H W M
    for v in [0.5f32, -1.0, 2.25, 0.0, 1.0, 1.0, 1.0, 1.0, -0.125, 3.0, 4.0, 5.5] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&[2, 0, 1, 0, 3, 0]);
    b
}

#[test]
fn hand_built_file_decodes_exactly() {
    let d = decode_bkim(&hand_built(), Path::new("fixture")).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.classes(), 3);
    assert_eq!(d.labels(), &[1, 0, 2]);
    let img = |i: usize| d.samples()[i].as_image().unwrap().clone();
    assert_eq!(img(0), Tensor::new(vec![1, 2, 2], vec![0.5, -1.0, 2.25, 0.0]).unwrap());
    assert_eq!(img(1).data(), &[1.0; 4]);
    assert_eq!(img(2).data(), &[-0.125, 3.0, 4.0, 5.5]);
    assert_eq!(encode_bkim(&d).unwrap(), hand_built());
}

#[test]
fn image_round_trip_is_exact() {
    let samples = (0..5)
        .map(|i| Sample::Image(Tensor::new(vec![2, 3, 2], (0..12).map(|k| (i * 12 + k) as f64 * 0.25 - 3.0).collect()).unwrap()))
        .collect();
    let d = LabeledDataset::new(samples, vec![0, 1, 1, 0, 1], 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bkim");
    write_image_dataset(&path, &d).unwrap();
    assert_eq!(load_image_dataset(&path).unwrap(), d);
}

#[test]
fn corrupt_containers_report_offsets() {
    let good = hand_built();
    for cut in [0, 3, 10, 17, 30, good.len() - 1] {
        match decode_bkim(&good[..cut], Path::new("t")) {
            Err(HarnessError::Binary { offset, .. }) => assert_eq!(offset, cut),
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(decode_bkim(&magic, Path::new("t")), Err(HarnessError::Binary { offset: 0, .. })));
    let mut version = good.clone();
    version[4] = 9;
    assert!(matches!(decode_bkim(&version, Path::new("t")), Err(HarnessError::Binary { offset: 4, .. })));
    let mut trailing = good.clone();
    trailing.push(0);
    assert!(matches!(decode_bkim(&trailing, Path::new("t")), Err(HarnessError::Binary { .. })));
    let mut label = good.clone();
    let at = label.len() - 2;
    label[at] = 4;
    let e = decode_bkim(&label, Path::new("t")).unwrap_err();
    assert!(matches!(e, HarnessError::Invalid { .. }), "{e}");
    assert!(e.to_string().contains("label 4"));
}

fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    f
}

#[test]
fn sequences_gain_the_classification_token() {
    let f = write_lines(&[r#"{"tokens": [5, 7], "label": 1}"#, r#"{"tokens": [], "label": 2}"#, r#"{"tokens": [0, 3], "label": 2}"#]);
    let d = load_sequence_dataset(f.path()).unwrap();
    let seqs: Vec<&[u32]> = d.samples().iter().map(|s| s.as_tokens().unwrap()).collect();
    assert_eq!(seqs, vec![&[0, 5, 7][..], &[0][..], &[0, 3][..]]);
    assert_eq!(d.labels(), &[0, 1, 1]);
    assert_eq!(d.vocabulary().into_iter().collect::<Vec<_>>(), vec![0, 3, 5, 7]);
}

#[test]
fn thousand_line_fixture_parses_every_record() {
    let lines: Vec<String> = (0..1000).map(|i| format!(r#"{{"tokens": [{}, {}], "label": {}}}"#, i % 50 + 1, i % 7 + 1, i % 3 + 1)).collect();
    let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
    let d = load_sequence_dataset(write_lines(&refs).path()).unwrap();
    assert_eq!(d.len(), 1000);
    assert_eq!(d.classes(), 3);
}

#[test]
fn malformed_lines_are_located() {
    for (bad, line) in [
        (vec![r#"{"tokens": [1], "label": 1}"#, r#"{"tokens": [1, "x"], "label": 1}"#], 2),
        (vec![r#"{"tokens": [1], "label": 0}"#], 1),
        (vec![r#"{"tokens": [1], "label": 1}"#, "", r#"{"tokens": [1], "label": 1, "extra": 2}"#], 3),
        (vec![r#"{"tokens": [4, 0], "label": 1}"#], 1),
    ] {
        match load_sequence_dataset(write_lines(&bad).path()) {
            Err(HarnessError::Record { line: l, .. }) => assert_eq!(l, line),
            other => panic!("{bad:?}: {other:?}"),
        }
    }
}

#[test]
fn sequence_round_trip() {
    let samples = vec![Sample::Sequence(vec![0, 4, 4, 9]), Sample::Sequence(vec![0]), Sample::Sequence(vec![0, 2])];
    let d = LabeledDataset::new(samples, vec![1, 0, 1], 2).unwrap();
    let f = tempfile::NamedTempFile::new().unwrap();
    write_sequence_dataset(f.path(), &d).unwrap();
    assert_eq!(load_sequence_dataset(f.path()).unwrap(), d);
}
