/*
Copyright 2026 The admm-prune Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

use admm_prune::data::{
    batch_iter, encode_idx, load_csv, load_idx, synth_generate, write_csv, write_idx, DataError, IDX_IMAGES_MAGIC,
};
use admm_prune::{Error, Shape};

#[test]
fn idx_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_generate(1, 12, 5, 4, 3, 0.2).unwrap();
    let (img, lab) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    write_idx(&ds, &img, &lab).unwrap();
    let back = load_idx(&img, &lab).unwrap();
    assert_eq!(back.labels, ds.labels);
    assert_eq!(back.sample_shape(), Shape::new(1, 5, 4));
    // Bytes quantize pixels to 1/255.
    for (a, b) in back.images.data().iter().zip(ds.images.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
    }
}

#[test]
fn idx_header_layout() {
    let ds = synth_generate(1, 2, 3, 2, 2, 0.0).unwrap();
    let (img, lab) = encode_idx(&ds).unwrap();
    assert_eq!(&img[..4], &IDX_IMAGES_MAGIC.to_be_bytes());
    assert_eq!(&img[4..16], &[0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 2]);
    assert_eq!(img.len(), 16 + 2 * 6);
    assert_eq!(lab, vec![0, 0, 8, 1, 0, 0, 0, 2, 0, 1]);
}

#[test]
fn mismatched_idx_pair_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_generate(1, 4, 3, 3, 2, 0.0).unwrap();
    let b = synth_generate(1, 6, 3, 3, 2, 0.0).unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    let (a_img, _) = encode_idx(&a).unwrap();
    let (_, b_lab) = encode_idx(&b).unwrap();
    std::fs::write(&img, a_img).unwrap();
    std::fs::write(&lab, b_lab).unwrap();
    assert!(matches!(
        load_idx(&img, &lab),
        Err(Error::Data(DataError::CountMismatch { images: 4, labels: 6 }))
    ));
}

#[test]
fn csv_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let ds = synth_generate(2, 6, 3, 3, 2, 0.1).unwrap();
    write_csv(&ds, &path).unwrap();
    let back = load_csv(&path, Shape::new(1, 3, 3), 2).unwrap();
    assert_eq!(back.labels, ds.labels);
    assert_eq!(back.images, ds.images);
    assert!(load_csv(&path, Shape::new(1, 2, 2), 2).is_err());
}

#[test]
fn every_epoch_visits_each_sample_once() {
    let ds = synth_generate(3, 50, 4, 4, 2, 0.1).unwrap();
    for epoch in 0..3 {
        let mut seen = Vec::new();
        for (x, labels) in batch_iter(&ds, 16, 7, epoch).unwrap() {
            assert_eq!(x.shape()[0], labels.len());
            seen.extend(labels);
        }
        assert_eq!(seen.len(), 50);
        assert_eq!(seen.iter().filter(|&&y| y == 0).count(), 25);
    }
    let order = |e| batch_iter(&ds, 50, 7, e).unwrap().next().unwrap().0;
    assert_eq!(order(1), order(1));
    assert_ne!(order(1), order(2));
}
