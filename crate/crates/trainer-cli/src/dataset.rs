//! Dataset ingestion: the IDX container, a simple labeled-pixel CSV, and a
//! deterministic synthetic generator of oriented gratings.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use fm_core::Scalar;
use nn_engine::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:#010x} (expected {expected:#010x})")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: file truncated (need {expected} bytes, have {got})")]
    TruncatedFile {
        path: PathBuf,
        expected: usize,
        got: usize,
    },
    #[error("bad dataset dimensions: {msg}")]
    BadDims { msg: String },
    #[error("{path}:{line}: {msg}")]
    Csv {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("dataset is empty")]
    EmptyDataset,
}

/// Images scaled to `[0, 1]` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S: Scalar> {
    pub images: Tensor4<S>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<S: Scalar> Dataset<S> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validated(
        images: Tensor4<S>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if images.batch() != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.batch(),
                labels: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        debug_assert!(images.all_finite());
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn need(&self, n: usize) -> Result<(), DataError> {
        if self.pos + n > self.bytes.len() {
            return Err(DataError::TruncatedFile {
                path: self.path.to_path_buf(),
                expected: self.pos + n,
                got: self.bytes.len(),
            });
        }
        Ok(())
    }

    fn u32_be(&mut self) -> Result<u32, DataError> {
        self.need(4)?;
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        self.need(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an IDX image/label pair: big-endian headers, magic `0x00000803`
/// for images (count, rows, cols) and `0x00000801` for labels (count),
/// unsigned pixel bytes scaled by 1/255. Images come out single-channel.
pub fn load_idx<S: Scalar>(
    images_path: &Path,
    labels_path: &Path,
) -> Result<Dataset<S>, DataError> {
    let image_bytes = read_file(images_path)?;
    let mut cur = Cursor {
        path: images_path,
        bytes: &image_bytes,
        pos: 0,
    };
    let magic = cur.u32_be()?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: images_path.to_path_buf(),
            found: magic,
            expected: IDX_IMAGE_MAGIC,
        });
    }
    let count = cur.u32_be()? as usize;
    let rows = cur.u32_be()? as usize;
    let cols = cur.u32_be()? as usize;
    let pixels = cur.take(count * rows * cols)?;

    let label_bytes = read_file(labels_path)?;
    let mut cur = Cursor {
        path: labels_path,
        bytes: &label_bytes,
        pos: 0,
    };
    let magic = cur.u32_be()?;
    if magic != IDX_LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_path.to_path_buf(),
            found: magic,
            expected: IDX_LABEL_MAGIC,
        });
    }
    let label_count = cur.u32_be()? as usize;
    if label_count != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let labels: Vec<usize> = cur.take(label_count)?.iter().map(|&b| b as usize).collect();

    let data: Vec<S> = pixels
        .iter()
        .map(|&b| S::from_f64(b as f64 / 255.0))
        .collect();
    let images =
        Tensor4::from_vec([count, 1, rows, cols], data).expect("length follows from the header");
    let num_classes = labels.iter().copied().max().map(|m| m + 1).unwrap_or(0);
    Dataset::validated(images, labels, num_classes)
}

/// Loads a `label,pix0,pix1,...` CSV with a header line. Pixels are integers
/// in 0..=255, row-major over `(channels, height, width)`, scaled by 1/255.
pub fn load_csv<S: Scalar>(
    path: &Path,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<Dataset<S>, DataError> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| DataError::Csv {
        path: path.to_path_buf(),
        line: 1,
        msg: "file is not UTF-8".into(),
    })?;
    let pixels_per_sample = channels * height * width;
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(DataError::EmptyDataset);
    };
    if !header.starts_with("label") {
        return Err(DataError::Csv {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected a header starting with `label`, got `{header}`"),
        });
    }
    let mut data: Vec<S> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label: usize = fields
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| DataError::Csv {
                path: path.to_path_buf(),
                line: line_no,
                msg: "bad label".into(),
            })?;
        labels.push(label);
        let mut count = 0usize;
        for field in fields {
            let value: u32 = field.trim().parse().map_err(|_| DataError::Csv {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("bad pixel value `{}`", field.trim()),
            })?;
            if value > 255 {
                return Err(DataError::Csv {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!("pixel value {value} out of range 0..=255"),
                });
            }
            data.push(S::from_f64(value as f64 / 255.0));
            count += 1;
        }
        if count != pixels_per_sample {
            return Err(DataError::Csv {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected {pixels_per_sample} pixels, got {count}"),
            });
        }
    }
    let n = labels.len();
    let images =
        Tensor4::from_vec([n, channels, height, width], data).expect("row width checked per line");
    let num_classes = labels.iter().copied().max().map(|m| m + 1).unwrap_or(0);
    Dataset::validated(images, labels, num_classes)
}

/// Deterministic class-conditional dataset: each class is an oriented
/// sinusoidal grating with a random per-sample phase, plus uniform noise of
/// amplitude 0.25, clamped to `[0, 1]`. Labels cycle `0..num_classes`, so any
/// `n` divisible by the class count is exactly balanced. The same seed yields
/// bitwise-identical data.
pub fn synth_dataset<S: Scalar>(
    seed: u64,
    n: usize,
    num_classes: usize,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<Dataset<S>, DataError> {
    if num_classes == 0 || height == 0 || width == 0 || channels == 0 {
        return Err(DataError::BadDims {
            msg: format!("classes {num_classes}, dims {channels}x{height}x{width}"),
        });
    }
    if n < num_classes {
        return Err(DataError::BadDims {
            msg: format!("n = {n} smaller than the class count {num_classes}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = height.max(width) as f64;
    let cycles = 2.0;
    let mut data = Vec::with_capacity(n * channels * height * width);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        labels.push(class);
        let theta = PI * class as f64 / num_classes as f64;
        let (sin_t, cos_t) = theta.sin_cos();
        let phase: f64 = rng.random_range(0.0..(2.0 * PI));
        for ch in 0..channels {
            let channel_phase = ch as f64 * PI / 2.0;
            for y in 0..height {
                for x in 0..width {
                    let along = x as f64 * cos_t + y as f64 * sin_t;
                    let signal =
                        0.35 * (2.0 * PI * cycles * along / span + phase + channel_phase).sin();
                    let noise: f64 = rng.random_range(-0.25..0.25);
                    let v = (0.5 + signal + noise).clamp(0.0, 1.0);
                    data.push(S::from_f64(v));
                }
            }
        }
    }
    let images = Tensor4::from_vec([n, channels, height, width], data).expect("sized above");
    Dataset::validated(images, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_images(path: &Path, count: u32, rows: u32, cols: u32, pixels: &[u8]) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_all(&IDX_IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&count.to_be_bytes()).unwrap();
        f.write_all(&rows.to_be_bytes()).unwrap();
        f.write_all(&cols.to_be_bytes()).unwrap();
        f.write_all(pixels).unwrap();
    }

    fn write_idx_labels(path: &Path, labels: &[u8]) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_all(&IDX_LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn idx_pixels_scale_by_255() {
        let dir = std::env::temp_dir().join("fm3d-idx-scale");
        std::fs::create_dir_all(&dir).unwrap();
        let images = dir.join("img.idx");
        let labels = dir.join("lbl.idx");
        write_idx_images(&images, 1, 2, 2, &[0, 85, 170, 255]);
        write_idx_labels(&labels, &[1]);
        let ds: Dataset<f64> = load_idx(&images, &labels).unwrap();
        assert_eq!(ds.images.dims(), [1, 1, 2, 2]);
        assert_eq!(ds.images.data(), &[0.0, 85.0 / 255.0, 170.0 / 255.0, 1.0]);
        assert_eq!(ds.labels, vec![1]);
    }

    #[test]
    fn idx_wrong_magic_is_rejected() {
        let dir = std::env::temp_dir().join("fm3d-idx-magic");
        std::fs::create_dir_all(&dir).unwrap();
        let images = dir.join("img.idx");
        let labels = dir.join("lbl.idx");
        write_idx_images(&images, 1, 1, 1, &[7]);
        write_idx_labels(&labels, &[0]);
        // Image magic handed to the label slot.
        let err = load_idx::<f64>(&images, &images).unwrap_err();
        assert!(matches!(err, DataError::BadMagic { found, .. } if found == IDX_IMAGE_MAGIC));
    }

    #[test]
    fn idx_count_mismatch_is_rejected() {
        let dir = std::env::temp_dir().join("fm3d-idx-count");
        std::fs::create_dir_all(&dir).unwrap();
        let images = dir.join("img.idx");
        let labels = dir.join("lbl.idx");
        write_idx_images(&images, 10, 1, 1, &[0; 10]);
        write_idx_labels(&labels, &[0; 9]);
        assert!(matches!(
            load_idx::<f64>(&images, &labels),
            Err(DataError::CountMismatch {
                images: 10,
                labels: 9
            })
        ));
    }

    #[test]
    fn idx_truncation_is_reported() {
        let dir = std::env::temp_dir().join("fm3d-idx-trunc");
        std::fs::create_dir_all(&dir).unwrap();
        let images = dir.join("img.idx");
        let labels = dir.join("lbl.idx");
        write_idx_images(&images, 2, 2, 2, &[0; 5]); // needs 8 pixel bytes
        write_idx_labels(&labels, &[0, 1]);
        assert!(matches!(
            load_idx::<f64>(&images, &labels),
            Err(DataError::TruncatedFile { .. })
        ));
    }

    #[test]
    fn csv_roundtrip_and_shape_check() {
        let dir = std::env::temp_dir().join("fm3d-csv");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.csv");
        std::fs::write(&path, "label,pix0,pix1,pix2,pix3\n2,0,255,128,64\n").unwrap();
        let ds: Dataset<f64> = load_csv(&path, 1, 2, 2).unwrap();
        assert_eq!(ds.labels, vec![2]);
        assert_eq!(ds.num_classes, 3);
        assert_eq!(ds.images.get(0, 0, 0, 1), 1.0);
        std::fs::write(&path, "label,pix0\n0,1,2\n").unwrap();
        assert!(matches!(
            load_csv::<f64>(&path, 1, 1, 1),
            Err(DataError::Csv { line: 2, .. })
        ));
    }

    #[test]
    fn synth_is_deterministic() {
        let a: Dataset<f64> = synth_dataset(7, 30, 3, 8, 8, 2).unwrap();
        let b: Dataset<f64> = synth_dataset(7, 30, 3, 8, 8, 2).unwrap();
        assert_eq!(a, b);
        let c: Dataset<f64> = synth_dataset(8, 30, 3, 8, 8, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_one_sample_per_class_when_n_equals_classes() {
        let ds: Dataset<f64> = synth_dataset(1, 4, 4, 6, 6, 1).unwrap();
        assert_eq!(ds.labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn synth_values_stay_in_unit_range() {
        let ds: Dataset<f64> = synth_dataset(3, 60, 3, 10, 10, 2).unwrap();
        assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn synth_rejects_fewer_samples_than_classes() {
        assert!(matches!(
            synth_dataset::<f64>(1, 2, 3, 4, 4, 1),
            Err(DataError::BadDims { .. })
        ));
    }
}
