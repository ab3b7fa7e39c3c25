//! Reader for idx-format tensor files (the MNIST container): a big-endian
//! magic word, big-endian u32 dimensions, then the raw payload. Errors carry
//! the byte offset of the damage.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::HarnessError;

/// Magic word of an unsigned-byte rank-3 tensor (image stacks).
pub const IMAGES_MAGIC: u32 = 0x0000_0803;
/// Magic word of an unsigned-byte rank-1 tensor (label vectors).
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// One decoded idx file: magic word, dimensions, raw unsigned-byte payload
/// in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn idx_err(path: &Path, offset: u64, msg: impl Into<String>) -> HarnessError {
    HarnessError::Idx { path: path.to_path_buf(), offset, msg: msg.into() }
}

/// Decodes one idx file of unsigned bytes. The magic word must have two zero
/// lead bytes, data type `0x08` (unsigned byte) and at least one dimension;
/// the payload must exactly fill the dimension product.
pub fn read_idx_file(path: &Path) -> Result<IdxFile, HarnessError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 {
        return Err(idx_err(path, bytes.len() as u64, "file ends inside the magic word"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(idx_err(path, 0, "magic word must start with two zero bytes"));
    }
    if bytes[2] != 0x08 {
        return Err(idx_err(
            path,
            2,
            format!("unsupported data type 0x{:02x}; only unsigned byte (0x08)", bytes[2]),
        ));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(idx_err(path, 3, "dimension count must be >= 1"));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(idx_err(
            path,
            bytes.len() as u64,
            format!("file ends inside the header; {ndims} dimensions need {header} bytes"),
        ));
    }
    let mut dims = Vec::with_capacity(ndims);
    let mut count = 1usize;
    for i in 0..ndims {
        let off = 4 + 4 * i;
        let dim = u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        count = count.checked_mul(dim).ok_or_else(|| {
            idx_err(path, off as u64, "dimension product overflows usize")
        })?;
        dims.push(dim);
    }
    let need = header + count;
    if bytes.len() < need {
        return Err(idx_err(
            path,
            bytes.len() as u64,
            format!("payload truncated; expected {need} bytes total"),
        ));
    }
    if bytes.len() > need {
        return Err(idx_err(path, need as u64, "trailing bytes after the payload"));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    Ok(IdxFile { magic, dims, data: bytes[header..].to_vec() })
}

/// A matched image/label pair: images flattened to `d x count` with pixels
/// scaled to `[0, 1]`, labels as class indices.
#[derive(Debug, Clone)]
pub struct IdxPair {
    pub images: Array2<f64>,
    pub labels: Vec<usize>,
}

/// Loads an image file and a label file and checks that they agree on the
/// sample count. Image files must be rank 3 (`count x rows x cols`), label
/// files rank 1.
pub fn load_idx(images: &Path, labels: &Path) -> Result<IdxPair, HarnessError> {
    let img = read_idx_file(images)?;
    if img.magic != IMAGES_MAGIC {
        return Err(idx_err(
            images,
            0,
            format!("expected images magic 0x{IMAGES_MAGIC:08x}, found 0x{:08x}", img.magic),
        ));
    }
    let lbl = read_idx_file(labels)?;
    if lbl.magic != LABELS_MAGIC {
        return Err(idx_err(
            labels,
            0,
            format!("expected labels magic 0x{LABELS_MAGIC:08x}, found 0x{:08x}", lbl.magic),
        ));
    }
    let (count, rows, cols) = (img.dims[0], img.dims[1], img.dims[2]);
    if lbl.dims[0] != count {
        return Err(idx_err(
            labels,
            4,
            format!("label count {} does not match image count {count}", lbl.dims[0]),
        ));
    }
    let d = rows * cols;
    if d == 0 {
        return Err(idx_err(images, 8, "images have zero pixels"));
    }
    let data = img.data;
    let inputs = Array2::from_shape_fn((d, count), |(r, c)| data[c * d + r] as f64 / 255.0);
    Ok(IdxPair { images: inputs, labels: lbl.data.iter().map(|&b| b as usize).collect() })
}

/// Projects `d x N` inputs to `1 x N` scalars with one seeded draw of
/// `w ~ N(0, I/d)`, so the outputs keep unit-order scale. The seed is part
/// of the run config and therefore echoed in the manifest.
pub fn scalar_projection(inputs: &Array2<f64>, seed: u64) -> Array2<f64> {
    let d = inputs.nrows();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let scale = 1.0 / (d as f64).sqrt();
    let w: Vec<f64> =
        (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
    let mut out = Array2::zeros((1, inputs.ncols()));
    for (j, col) in inputs.columns().into_iter().enumerate() {
        out[[0, j]] = col.iter().zip(&w).map(|(x, wi)| x * wi).sum();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx(dir: &Path, name: &str, magic: u32, dims: &[u32], data: &[u8]) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut bytes = magic.to_be_bytes().to_vec();
        for d in dims {
            bytes.extend_from_slice(&d.to_be_bytes());
        }
        bytes.extend_from_slice(data);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(&bytes).unwrap();
        path
    }

    #[test]
    fn two_image_pair_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..18).map(|i| (i * 14) as u8).collect();
        let img = write_idx(dir.path(), "img", IMAGES_MAGIC, &[2, 3, 3], &pixels);
        let lbl = write_idx(dir.path(), "lbl", LABELS_MAGIC, &[2], &[7, 2]);
        let pair = load_idx(&img, &lbl).unwrap();
        assert_eq!(pair.images.dim(), (9, 2));
        assert_eq!(pair.labels, vec![7, 2]);
        assert_eq!(pair.images[[0, 0]], 0.0);
        assert_eq!(pair.images[[0, 1]], pixels[9] as f64 / 255.0);
        assert_eq!(pair.images[[8, 1]], pixels[17] as f64 / 255.0);
    }

    #[test]
    fn damage_is_located_by_offset() {
        let dir = tempfile::tempdir().unwrap();
        // Wrong data type byte.
        let bad_type = write_idx(dir.path(), "t", 0x0000_0903, &[1, 1, 1], &[0]);
        match read_idx_file(&bad_type).unwrap_err() {
            HarnessError::Idx { offset, .. } => assert_eq!(offset, 2),
            other => panic!("unexpected error {other}"),
        }
        // Payload cut short: 9 pixels promised, 5 delivered.
        let short = write_idx(dir.path(), "s", IMAGES_MAGIC, &[1, 3, 3], &[1, 2, 3, 4, 5]);
        match read_idx_file(&short).unwrap_err() {
            HarnessError::Idx { offset, msg, .. } => {
                assert_eq!(offset, 16 + 5);
                assert!(msg.contains("truncated"), "{msg}");
            }
            other => panic!("unexpected error {other}"),
        }
        // Trailing junk after a complete payload.
        let long = write_idx(dir.path(), "l", LABELS_MAGIC, &[2], &[1, 2, 3]);
        match read_idx_file(&long).unwrap_err() {
            HarnessError::Idx { offset, .. } => assert_eq!(offset, 8 + 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn count_mismatch_points_at_label_header() {
        let dir = tempfile::tempdir().unwrap();
        let img = write_idx(dir.path(), "img", IMAGES_MAGIC, &[2, 2, 2], &[0; 8]);
        let lbl = write_idx(dir.path(), "lbl", LABELS_MAGIC, &[3], &[0, 1, 0]);
        match load_idx(&img, &lbl).unwrap_err() {
            HarnessError::Idx { path, offset, msg } => {
                assert!(path.ends_with("lbl"));
                assert_eq!(offset, 4);
                assert!(msg.contains("label count 3"), "{msg}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn projection_is_seeded_and_unit_scale() {
        let inputs = Array2::from_shape_fn((64, 32), |(i, j)| ((i * 31 + j * 7) % 13) as f64);
        let a = scalar_projection(&inputs, 5);
        let b = scalar_projection(&inputs, 5);
        let c = scalar_projection(&inputs, 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.dim(), (1, 32));
        assert!(a.iter().all(|v| v.is_finite()));
    }
}
