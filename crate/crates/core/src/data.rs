//! Dataset ingestion and task construction.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FitDnnError, Result};
use crate::model::FitDnnConfig;
use crate::training::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Planar image layout metadata (rows x cols per channel).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols * self.channels
    }
}

/// Classification labels or regression target vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Vectors(Vec<Vec<f64>>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An immutable set of examples.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    targets: Targets,
    split: Split,
    image_shape: Option<ImageShape>,
}

impl Dataset {
    pub fn from_vectors(
        inputs: Vec<Vec<f64>>,
        targets: Targets,
        split: Split,
        image_shape: Option<ImageShape>,
    ) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(FitDnnError::Dimension(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let dim = inputs.first().map_or(0, Vec::len);
        if inputs.iter().any(|u| u.len() != dim) {
            return Err(FitDnnError::Dimension("ragged input vectors".into()));
        }
        if let Some(shape) = &image_shape {
            if shape.pixel_count() != dim {
                return Err(FitDnnError::Dimension(format!(
                    "image shape covers {} pixels but inputs have length {dim}",
                    shape.pixel_count()
                )));
            }
        }
        Ok(Dataset {
            inputs,
            targets,
            split,
            image_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn target(&self, i: usize) -> Target {
        match &self.targets {
            Targets::Classes(v) => Target::Class(v[i]),
            Targets::Vectors(v) => Target::Vector(v[i].clone()),
        }
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image_shape(&self) -> Option<&ImageShape> {
        self.image_shape.as_ref()
    }

    /// Keep only the first `limit` examples.
    pub fn truncated(&self, limit: usize) -> Dataset {
        let n = limit.min(self.len());
        Dataset {
            inputs: self.inputs[..n].to_vec(),
            targets: match &self.targets {
                Targets::Classes(v) => Targets::Classes(v[..n].to_vec()),
                Targets::Vectors(v) => Targets::Vectors(v[..n].to_vec()),
            },
            split: self.split,
            image_shape: self.image_shape.clone(),
        }
    }

    pub fn check_compatible(&self, config: &FitDnnConfig) -> Result<()> {
        if self.input_dim() != config.input_dim {
            return Err(FitDnnError::Dimension(format!(
                "dataset inputs have dimension {}, config expects {}",
                self.input_dim(),
                config.input_dim
            )));
        }
        match &self.targets {
            Targets::Classes(labels) => {
                if let Some(&bad) = labels.iter().find(|&&c| c >= config.output_dim) {
                    return Err(FitDnnError::Dimension(format!(
                        "label {bad} out of range for {} outputs",
                        config.output_dim
                    )));
                }
            }
            Targets::Vectors(targets) => {
                if targets.iter().any(|y| y.len() != config.output_dim) {
                    return Err(FitDnnError::Dimension(format!(
                        "target vectors must have length {}",
                        config.output_dim
                    )));
                }
            }
        }
        Ok(())
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], pos: usize, what: &str) -> Result<u32> {
    let end = pos + 4;
    if end > bytes.len() {
        return Err(FitDnnError::Parse(format!("truncated {what}")));
    }
    Ok(u32::from_be_bytes([
        bytes[pos],
        bytes[pos + 1],
        bytes[pos + 2],
        bytes[pos + 3],
    ]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .map_err(|e| FitDnnError::Parse(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut buf)?;
    Ok(buf)
}

/// Load an image/label pair of IDX files (big-endian, magic `0x803`/`0x801`).
/// Pixels are scaled to `[0, 1]` by `/255` and flattened row-major.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let image_bytes = read_file(images_path)?;
    let magic = read_u32_be(&image_bytes, 0, "image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(FitDnnError::Parse(format!(
            "bad image magic {magic:#010x} in {}",
            images_path.display()
        )));
    }
    let count = read_u32_be(&image_bytes, 4, "image count")? as usize;
    let rows = read_u32_be(&image_bytes, 8, "image rows")? as usize;
    let cols = read_u32_be(&image_bytes, 12, "image cols")? as usize;
    let pixels = rows * cols;
    if image_bytes.len() != 16 + count * pixels {
        return Err(FitDnnError::Parse(format!(
            "image payload is {} bytes, expected {}",
            image_bytes.len() - 16.min(image_bytes.len()),
            count * pixels
        )));
    }

    let label_bytes = read_file(labels_path)?;
    let magic = read_u32_be(&label_bytes, 0, "label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(FitDnnError::Parse(format!(
            "bad label magic {magic:#010x} in {}",
            labels_path.display()
        )));
    }
    let label_count = read_u32_be(&label_bytes, 4, "label count")? as usize;
    if label_bytes.len() != 8 + label_count {
        return Err(FitDnnError::Parse("truncated label payload".into()));
    }
    if label_count != count {
        return Err(FitDnnError::Parse(format!(
            "{count} images but {label_count} labels"
        )));
    }

    let mut inputs = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * pixels;
        inputs.push(
            image_bytes[start..start + pixels]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect(),
        );
    }
    let labels = label_bytes[8..].iter().map(|&b| b as usize).collect();
    Dataset::from_vectors(
        inputs,
        Targets::Classes(labels),
        split,
        Some(ImageShape {
            rows,
            cols,
            channels: 1,
        }),
    )
}

/// Turn a classification image set into a denoising task: inputs become
/// `clip01(clean + N(0, sigma^2))` per pixel and targets are the clean
/// images. The noise is drawn once per dataset, deterministically per seed.
pub fn build_denoising_task(base: &Dataset, sigma_task: f64, rng_seed: u64) -> Result<Dataset> {
    if base
        .inputs
        .iter()
        .any(|u| u.iter().any(|&v| !(0.0..=1.0).contains(&v)))
    {
        return Err(FitDnnError::InvalidConfig(
            "denoising base inputs must lie in [0, 1]".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let noisy: Vec<Vec<f64>> = if sigma_task > 0.0 {
        let normal = Normal::new(0.0, sigma_task).map_err(|e| {
            FitDnnError::InvalidConfig(format!("invalid noise intensity {sigma_task}: {e}"))
        })?;
        base.inputs
            .iter()
            .map(|u| {
                u.iter()
                    .map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
                    .collect()
            })
            .collect()
    } else {
        base.inputs.clone()
    };
    Dataset::from_vectors(
        noisy,
        Targets::Vectors(base.inputs.clone()),
        base.split,
        base.image_shape.clone(),
    )
}

/// Sine-composition parameters: `s_i(u) = sin(omega_i * u + phi_i)`.
const SINE_OMEGA: [f64; 5] = [
    0.65 * std::f64::consts::TAU,
    0.40 * std::f64::consts::TAU,
    0.30 * std::f64::consts::TAU,
    0.55 * std::f64::consts::TAU,
    0.45 * std::f64::consts::TAU,
];
const SINE_PHI: [f64; 5] = [1.0, -0.5, -0.3, 0.6, 0.2];

/// Target of the sine-fitting task: the `depth`-fold composition
/// `y_depth(u) = s_depth(...(s_1(u)))`.
pub fn sine_target(depth: usize, u: f64) -> Result<f64> {
    if !(1..=5).contains(&depth) {
        return Err(FitDnnError::InvalidConfig(format!(
            "sine depth must be 1..=5, got {depth}"
        )));
    }
    let mut v = u;
    for i in 0..depth {
        v = (SINE_OMEGA[i] * v + SINE_PHI[i]).sin();
    }
    Ok(v)
}

/// Scalar regression task on `[-1, 1]`: `n_train` uniformly sampled training
/// points (seeded) and `n_test` points on a uniform grid.
pub fn build_sine_task(
    depth: usize,
    n_train: usize,
    n_test: usize,
    rng_seed: u64,
) -> Result<(Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut train_inputs = Vec::with_capacity(n_train);
    let mut train_targets = Vec::with_capacity(n_train);
    for _ in 0..n_train {
        let u = rng.gen_range(-1.0..=1.0);
        train_inputs.push(vec![u]);
        train_targets.push(vec![sine_target(depth, u)?]);
    }
    let mut test_inputs = Vec::with_capacity(n_test);
    let mut test_targets = Vec::with_capacity(n_test);
    for i in 0..n_test {
        let u = if n_test > 1 {
            -1.0 + 2.0 * i as f64 / (n_test - 1) as f64
        } else {
            0.0
        };
        test_inputs.push(vec![u]);
        test_targets.push(vec![sine_target(depth, u)?]);
    }
    Ok((
        Dataset::from_vectors(
            train_inputs,
            Targets::Vectors(train_targets),
            Split::Train,
            None,
        )?,
        Dataset::from_vectors(
            test_inputs,
            Targets::Vectors(test_targets),
            Split::Test,
            None,
        )?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_fixture(dir: &Path, pixels: &[[u8; 4]], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let images_path = dir.join("images-idx3-ubyte");
        let labels_path = dir.join("labels-idx1-ubyte");
        let mut f = File::create(&images_path).unwrap();
        f.write_all(&0x0803u32.to_be_bytes()).unwrap();
        f.write_all(&(pixels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        for img in pixels {
            f.write_all(img).unwrap();
        }
        let mut f = File::create(&labels_path).unwrap();
        f.write_all(&0x0801u32.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        (images_path, labels_path)
    }

    #[test]
    fn idx_fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) =
            write_idx_fixture(dir.path(), &[[0, 51, 102, 255], [255, 204, 153, 0]], &[3, 7]);
        let ds = load_idx(&images, &labels, Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_dim(), 4);
        assert_eq!(
            ds.input(0),
            &[0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0]
        );
        assert_eq!(ds.input(1), &[1.0, 204.0 / 255.0, 153.0 / 255.0, 0.0]);
        match ds.targets() {
            Targets::Classes(l) => assert_eq!(l, &vec![3, 7]),
            _ => panic!("expected class labels"),
        }
        assert_eq!(
            ds.image_shape(),
            Some(&ImageShape {
                rows: 2,
                cols: 2,
                channels: 1
            })
        );
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("empty");
        File::create(&images).unwrap();
        let labels = dir.path().join("labels");
        File::create(&labels).unwrap();
        assert!(matches!(
            load_idx(&images, &labels, Split::Train),
            Err(FitDnnError::Parse(_))
        ));
    }

    #[test]
    fn bad_magic_and_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_idx_fixture(dir.path(), &[[1, 2, 3, 4]], &[1, 2]);
        // count mismatch: 1 image vs 2 labels
        assert!(load_idx(&images, &labels, Split::Train).is_err());

        // corrupt the image magic
        let mut bytes = std::fs::read(&images).unwrap();
        bytes[3] = 0x99;
        std::fs::write(&images, bytes).unwrap();
        let err = load_idx(&images, &labels, Split::Train).unwrap_err();
        assert!(matches!(err, FitDnnError::Parse(_)));
    }

    #[test]
    fn truncated_image_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_idx_fixture(dir.path(), &[[1, 2, 3, 4]], &[1]);
        let bytes = std::fs::read(&images).unwrap();
        std::fs::write(&images, &bytes[..bytes.len() - 2]).unwrap();
        assert!(load_idx(&images, &labels, Split::Train).is_err());
    }

    #[test]
    fn denoising_with_zero_noise_is_identity() {
        let base = Dataset::from_vectors(
            vec![vec![0.2, 0.8], vec![0.5, 0.1]],
            Targets::Classes(vec![0, 1]),
            Split::Train,
            None,
        )
        .unwrap();
        let task = build_denoising_task(&base, 0.0, 9).unwrap();
        for i in 0..2 {
            assert_eq!(task.input(i), base.input(i));
            match task.target(i) {
                Target::Vector(v) => assert_eq!(v.as_slice(), base.input(i)),
                _ => panic!("expected vector target"),
            }
        }
    }

    #[test]
    fn denoising_clips_and_darkens_half_of_black_pixels() {
        // a black image (all zeros) with sigma = 1: negative draws clip to 0
        let n = 10_000;
        let base = Dataset::from_vectors(
            vec![vec![0.0; n]],
            Targets::Classes(vec![0]),
            Split::Train,
            None,
        )
        .unwrap();
        let task = build_denoising_task(&base, 1.0, 11).unwrap();
        let noisy = task.input(0);
        assert!(noisy.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let clipped_to_zero = noisy.iter().filter(|&&v| v == 0.0).count();
        let frac = clipped_to_zero as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "clipped fraction {frac}");
    }

    #[test]
    fn denoising_is_deterministic_per_seed() {
        let base = Dataset::from_vectors(
            vec![vec![0.3; 32]],
            Targets::Classes(vec![0]),
            Split::Train,
            None,
        )
        .unwrap();
        let a = build_denoising_task(&base, 1.0, 5).unwrap();
        let b = build_denoising_task(&base, 1.0, 5).unwrap();
        let c = build_denoising_task(&base, 1.0, 6).unwrap();
        assert_eq!(a.input(0), b.input(0));
        assert_ne!(a.input(0), c.input(0));
    }

    #[test]
    fn sine_targets_closed_forms() {
        // depth 1 at u = 0: sin(phi_1) = sin(1)
        let y1 = sine_target(1, 0.0).unwrap();
        assert!((y1 - 1.0f64.sin()).abs() < 1e-15);

        // depth 2 at u = 0: sin(omega_2 * sin(1) - 0.5) with omega_2 = 0.8 pi
        let expected = (0.8 * std::f64::consts::PI * 1.0f64.sin() - 0.5).sin();
        let y2 = sine_target(2, 0.0).unwrap();
        assert!((y2 - expected).abs() < 1e-15);

        assert!(sine_target(0, 0.0).is_err());
        assert!(sine_target(6, 0.0).is_err());
    }

    #[test]
    fn sine_task_shapes_and_ranges() {
        let (train, test) = build_sine_task(3, 500, 101, 13).unwrap();
        assert_eq!(train.len(), 500);
        assert_eq!(test.len(), 101);
        assert_eq!(train.input_dim(), 1);
        for ds in [&train, &test] {
            for i in 0..ds.len() {
                assert!((-1.0..=1.0).contains(&ds.input(i)[0]));
                match ds.target(i) {
                    Target::Vector(v) => assert!((-1.0..=1.0).contains(&v[0])),
                    _ => panic!("expected vector target"),
                }
            }
        }
        // the test grid spans the interval ends exactly
        assert_eq!(test.input(0)[0], -1.0);
        assert_eq!(test.input(100)[0], 1.0);
    }

    #[test]
    fn truncation_keeps_prefix() {
        let ds = Dataset::from_vectors(
            vec![vec![0.1], vec![0.2], vec![0.3]],
            Targets::Classes(vec![0, 1, 0]),
            Split::Train,
            None,
        )
        .unwrap();
        let cut = ds.truncated(2);
        assert_eq!(cut.len(), 2);
        assert_eq!(cut.input(1), &[0.2]);
    }
}
