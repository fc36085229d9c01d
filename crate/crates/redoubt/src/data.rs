//! MNIST loading from IDX files, gzipped or raw, plus batch iteration.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// One split of the dataset. Images are [n,1,28,28] scaled to [0,1];
/// labels are the raw digit values.
#[derive(Debug, Clone)]
pub struct MnistSet {
    pub images: Tensor,
    pub labels: Vec<u8>,
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .read_to_end(&mut raw)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Data(format!("{}: bad gzip stream: {e}", path.display())))?;
        return Ok(out);
    }
    Ok(raw)
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Parses an IDX image or label file (transparently gunzipping), pairing is
/// up to the caller.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<MnistSet> {
    let img = read_all(images_path)?;
    if img.len() < 16 {
        return Err(Error::Data(format!("{}: truncated header", images_path.display())));
    }
    let magic = be_u32(&img, 0);
    if magic != IMAGE_MAGIC {
        return Err(Error::Data(format!(
            "{}: magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let n = be_u32(&img, 4) as usize;
    let h = be_u32(&img, 8) as usize;
    let w = be_u32(&img, 12) as usize;
    if img.len() != 16 + n * h * w {
        return Err(Error::Data(format!(
            "{}: {} pixel bytes, expected {}",
            images_path.display(),
            img.len() - 16,
            n * h * w
        )));
    }

    let lab = read_all(labels_path)?;
    if lab.len() < 8 {
        return Err(Error::Data(format!("{}: truncated header", labels_path.display())));
    }
    let magic = be_u32(&lab, 0);
    if magic != LABEL_MAGIC {
        return Err(Error::Data(format!(
            "{}: magic {magic:#010x}, expected {LABEL_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let ln = be_u32(&lab, 4) as usize;
    if ln != n {
        return Err(Error::Data(format!("{ln} labels for {n} images")));
    }
    if lab.len() != 8 + ln {
        return Err(Error::Data(format!("{}: wrong label payload size", labels_path.display())));
    }
    for (i, &d) in lab[8..].iter().enumerate() {
        if d > 9 {
            return Err(Error::Data(format!("label {d} at index {i} is not a digit")));
        }
    }

    let data: Vec<f64> = img[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(MnistSet { images: Tensor::from_vec(&[n, 1, h, w], data)?, labels: lab[8..].to_vec() })
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for suffix in [".gz", ""] {
        let p = dir.join(format!("{stem}{suffix}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Data(format!(
        "{stem}[.gz] not found under {}; run scripts/fetch_mnist.sh",
        dir.display()
    )))
}

/// Loads the train or test split from a directory holding the four
/// standard MNIST files (gzipped or not).
pub fn load_split(dir: &Path, train: bool) -> Result<MnistSet> {
    let (imgs, labs) = if train {
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
    } else {
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    };
    load_idx(&find_file(dir, imgs)?, &find_file(dir, labs)?)
}

/// Data directory: REDOUBT_DATA_DIR if set, else `data/mnist` relative to
/// the working directory.
pub fn default_data_dir() -> PathBuf {
    match std::env::var_os("REDOUBT_DATA_DIR") {
        Some(d) => PathBuf::from(d),
        None => PathBuf::from("data/mnist"),
    }
}

impl MnistSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The i-th image as a standalone [1,1,28,28] tensor.
    pub fn image(&self, i: usize) -> Tensor {
        self.gather(&[i])
    }

    /// Copies the given rows into a new [k,1,28,28] batch.
    pub fn gather(&self, idx: &[usize]) -> Tensor {
        assert!(!idx.is_empty(), "gather needs at least one row");
        let dims = self.images.dims();
        let px = dims[2] * dims[3];
        let src = self.images.data();
        let mut out = Vec::with_capacity(idx.len() * px);
        for &i in idx {
            out.extend_from_slice(&src[i * px..(i + 1) * px]);
        }
        Tensor::from_vec(&[idx.len(), 1, dims[2], dims[3]], out).expect("batch shape")
    }

    /// First k examples, in dataset order.
    pub fn first_k(&self, k: usize) -> MnistSet {
        let k = k.min(self.len());
        MnistSet {
            images: self.gather(&(0..k).collect::<Vec<_>>()),
            labels: self.labels[..k].to_vec(),
        }
    }

    /// Index batches over a freshly shuffled permutation. The tail batch
    /// keeps whatever is left (60000 at 128 gives 469 batches, the last
    /// of size 96).
    pub fn shuffled_batches(&self, rng: &mut ChaCha8Rng, batch: usize) -> Vec<Vec<usize>> {
        assert!(batch > 0, "batch size must be positive");
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order.chunks(batch).map(|c| c.to_vec()).collect()
    }
}
