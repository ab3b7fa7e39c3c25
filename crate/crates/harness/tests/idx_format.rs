//! idx ingestion through the dataset layer, plus an oracle check against
//! real MNIST files when they are present.

use std::io::Read;
use std::path::{Path, PathBuf};

use harness::{load_dataset, DatasetSpec};
use resnet_sim::Targets;

fn write_idx(dir: &Path, name: &str, magic: u32, dims: &[u32], data: &[u8]) -> PathBuf {
    let path = dir.join(name);
    let mut bytes = magic.to_be_bytes().to_vec();
    for d in dims {
        bytes.extend_from_slice(&d.to_be_bytes());
    }
    bytes.extend_from_slice(data);
    std::fs::write(&path, bytes).unwrap();
    path
}

#[test]
fn idx_dataset_applies_normalization() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_idx(dir.path(), "img", 0x0000_0803, &[2, 2, 2], &[0, 51, 102, 153, 204, 255, 0, 51]);
    let lbl = write_idx(dir.path(), "lbl", 0x0000_0801, &[2], &[1, 0]);
    let spec = DatasetSpec::Idx {
        images: img,
        labels: lbl,
        mean: 0.2,
        std: 0.5,
        projection_seed: 0,
    };
    let ds = load_dataset(&spec).unwrap();
    assert_eq!(ds.d_in(), 4);
    assert_eq!(ds.len(), 2);
    // Pixel 51 scales to 0.2, then normalizes to exactly 0.
    assert!((ds.inputs[[1, 0]] - 0.0).abs() < 1e-15);
    assert!((ds.inputs[[0, 0]] - (0.0 - 0.2) / 0.5).abs() < 1e-15);
    let Targets::Classes(labels) = &ds.targets else { panic!("classes expected") };
    assert_eq!(labels, &vec![1, 0]);
}

#[test]
fn image_magic_passed_as_labels_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_idx(dir.path(), "img", 0x0000_0803, &[1, 2, 2], &[9, 9, 9, 9]);
    // A second rank-3 file in the labels slot must fail the magic check.
    let not_labels = write_idx(dir.path(), "lbl", 0x0000_0803, &[1, 2, 2], &[9, 9, 9, 9]);
    let spec = DatasetSpec::Idx {
        images: img,
        labels: not_labels,
        mean: 0.0,
        std: 1.0,
        projection_seed: 0,
    };
    let err = load_dataset(&spec).unwrap_err();
    assert!(err.to_string().contains("labels magic"), "{err}");
}

/// Oracle check against the real MNIST training files. Set `MNIST_DIR` to a
/// directory holding `train-images-idx3-ubyte` and `train-labels-idx1-ubyte`
/// to enable; absent files skip the test so CI does not need the corpus.
#[test]
fn mnist_train_set_has_60000_samples_of_dimension_784() {
    let Some(dir) = std::env::var_os("MNIST_DIR") else { return };
    let dir = PathBuf::from(dir);
    let images = dir.join("train-images-idx3-ubyte");
    let labels = dir.join("train-labels-idx1-ubyte");
    if !images.is_file() || !labels.is_file() {
        return;
    }

    // Independent header read: first 16 bytes, big-endian fields.
    let mut head = [0u8; 16];
    std::fs::File::open(&images).unwrap().read_exact(&mut head).unwrap();
    let field = |i: usize| u32::from_be_bytes(head[4 * i..4 * i + 4].try_into().unwrap());
    assert_eq!(field(0), 0x0000_0803);
    assert_eq!(field(1), 60000);
    assert_eq!(field(2) * field(3), 784);

    let pair = harness::load_idx(&images, &labels).unwrap();
    assert_eq!(pair.images.dim(), (784, 60000));
    assert_eq!(pair.labels.len(), 60000);
    assert!(pair.images.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(pair.labels.iter().all(|&c| c < 10));
}
