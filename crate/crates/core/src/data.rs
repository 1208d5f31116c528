//! Datasets, MNIST ingestion, measurement synthesis and experiment records.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::MeasurementModel;
use crate::seeded_rng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Noise level used for measurements throughout the experiments.
pub const DEFAULT_NOISE_STD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Synthetic { seed: u64 },
    /// Pixels are bytes divided by 255.
    Idx { path: PathBuf, pixel_scale: f64 },
}

/// Signals stored column-wise, optionally paired with their measurements.
#[derive(Debug, Clone)]
pub struct Dataset {
    signals: Matrix,
    measurements: Option<Matrix>,
    split: Split,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(signals: Matrix, split: Split, provenance: Provenance) -> Self {
        Self {
            signals,
            measurements: None,
            split,
            provenance,
        }
    }

    pub fn signals(&self) -> &Matrix {
        &self.signals
    }

    pub fn measurements(&self) -> Option<&Matrix> {
        self.measurements.as_ref()
    }

    /// Both halves of a measured dataset; errors when `measure` was never applied.
    pub fn pairs(&self) -> Result<(ArrayView2<'_, f64>, ArrayView2<'_, f64>)> {
        let y = self
            .measurements
            .as_ref()
            .ok_or_else(|| Error::BadShape("dataset has not been measured".into()))?;
        Ok((self.signals.view(), y.view()))
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.signals.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.signals.nrows()
    }

    /// First `count` samples (all of them if `count` exceeds the size).
    pub fn take(&self, count: usize) -> Self {
        let count = count.min(self.len());
        Self {
            signals: self.signals.slice(ndarray::s![.., ..count]).to_owned(),
            measurements: self
                .measurements
                .as_ref()
                .map(|y| y.slice(ndarray::s![.., ..count]).to_owned()),
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }

    /// Attaches `A X + E` with `E ~ N(0, noise_std^2)` drawn from `seed`.
    pub fn measured(mut self, mm: &MeasurementModel, noise_std: f64, seed: u64) -> Result<Self> {
        self.measurements = Some(measure(self.signals.view(), mm, noise_std, seed)?);
        Ok(self)
    }

    /// Largest column norm of the signals.
    pub fn max_signal_norm(&self) -> f64 {
        max_column_norm(self.signals.view())
    }

    /// Largest column norm of the measurements, or 0 when unmeasured.
    pub fn max_measurement_norm(&self) -> f64 {
        self.measurements
            .as_ref()
            .map_or(0.0, |y| max_column_norm(y.view()))
    }
}

fn max_column_norm(m: ArrayView2<f64>) -> f64 {
    m.axis_iter(Axis(1))
        .map(|c| linalg::vector_norm(c))
        .fold(0.0, f64::max)
}

/// i.i.d. standard normal signals of dimension `n`; one RNG stream, train
/// columns first.
pub fn generate_synthetic(n: usize, s_train: usize, s_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n == 0 || s_train == 0 || s_test == 0 {
        return Err(Error::InvalidParameter(
            "signal dimension and sample counts must be at least 1".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    let mut draw = |count: usize| {
        // column-major fill so each signal is a contiguous draw
        let data: Vec<f64> = (0..n * count).map(|_| StandardNormal.sample(&mut rng)).collect();
        Array2::from_shape_vec((count, n), data)
            .expect("shape matches length")
            .reversed_axes()
            .as_standard_layout()
            .into_owned()
    };
    let train = draw(s_train);
    let test = draw(s_test);
    let prov = Provenance::Synthetic { seed };
    Ok((
        Dataset::new(train, Split::Train, prov.clone()),
        Dataset::new(test, Split::Test, prov),
    ))
}

/// `A X + E` with i.i.d. Gaussian noise of the given std.
pub fn measure(signals: ArrayView2<f64>, mm: &MeasurementModel, noise_std: f64, seed: u64) -> Result<Matrix> {
    if signals.nrows() != mm.n() {
        return Err(Error::DimensionMismatch {
            context: "measure: signal dimension",
            expected: mm.n(),
            found: signals.nrows(),
        });
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise std must be finite and >= 0, got {noise_std}"
        )));
    }
    let mut y = mm.a().dot(&signals);
    if noise_std > 0.0 {
        let mut rng = seeded_rng(seed);
        y.mapv_inplace(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + noise_std * e
        });
    }
    Ok(y)
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(Error::TruncatedFile {
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX3 image file held in memory into an `(rows*cols) x count`
/// matrix scaled to `[0, 1]`, keeping at most `limit` images.
pub fn parse_idx_images(bytes: &[u8], limit: Option<usize>) -> Result<Matrix> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let pixels = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::ShapeMismatch(format!("image size {rows}x{cols} overflows")))?;
    let expected = count
        .checked_mul(pixels)
        .and_then(|p| p.checked_add(16))
        .ok_or_else(|| Error::ShapeMismatch(format!("{count} images of {pixels} pixels overflow")))?;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::ShapeMismatch(format!(
            "{} trailing bytes after {count} images",
            bytes.len() - expected
        )));
    }
    let keep = limit.map_or(count, |l| l.min(count));
    let body = &bytes[16..16 + keep * pixels];
    let mut out = Array2::zeros((pixels, keep));
    for (j, image) in body.chunks_exact(pixels.max(1)).enumerate().take(keep) {
        for (i, &p) in image.iter().enumerate() {
            out[[i, j]] = f64::from(p) / 255.0;
        }
    }
    Ok(out)
}

/// Number of labels in an IDX1 label file.
pub fn parse_idx_label_count(bytes: &[u8]) -> Result<usize> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    if bytes.len() != 8 + count {
        return Err(Error::TruncatedFile {
            expected: 8 + count,
            found: bytes.len(),
        });
    }
    Ok(count)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

/// Loads an MNIST-style IDX image file. Labels are only checked for a
/// matching count; the reconstruction task never uses them.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: Option<&Path>) -> Result<Dataset> {
    load_mnist_idx_limited(images_path, labels_path, None)
}

pub fn load_mnist_idx_limited(
    images_path: impl AsRef<Path>,
    labels_path: Option<&Path>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let path = images_path.as_ref();
    let bytes = read_file(path)?;
    let count = read_be_u32(&bytes, 4)? as usize;
    let signals = parse_idx_images(&bytes, limit)?;
    if let Some(lp) = labels_path {
        let labels = parse_idx_label_count(&read_file(lp)?)?;
        if labels != count {
            return Err(Error::ShapeMismatch(format!(
                "{count} images but {labels} labels"
            )));
        }
    }
    let split = if path
        .file_name()
        .and_then(|f| f.to_str())
        .is_some_and(|f| f.starts_with("t10k"))
    {
        Split::Test
    } else {
        Split::Train
    };
    Ok(Dataset::new(
        signals,
        split,
        Provenance::Idx {
            path: path.to_path_buf(),
            pixel_scale: 1.0 / 255.0,
        },
    ))
}

/// Writes raw byte images in IDX3 layout.
pub fn write_idx_images<W: Write>(mut w: W, rows: u32, cols: u32, images: &[Vec<u8>]) -> Result<()> {
    w.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    w.write_all(&(images.len() as u32).to_be_bytes())?;
    w.write_all(&rows.to_be_bytes())?;
    w.write_all(&cols.to_be_bytes())?;
    for img in images {
        if img.len() != (rows * cols) as usize {
            return Err(Error::ShapeMismatch(format!(
                "image has {} pixels, expected {}",
                img.len(),
                rows * cols
            )));
        }
        w.write_all(img)?;
    }
    Ok(())
}

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordConfig {
    pub dataset: String,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub m: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    pub s_train: usize,
    pub s_test: usize,
    pub lambda: f64,
    pub rho: f64,
    pub seed: u64,
    pub repeat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub train_mse: f64,
    pub test_mse: f64,
    pub ege: f64,
    pub epochs: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordDiagnostics {
    pub alpha: f64,
    pub beta: f64,
    pub sinv_s_residual: f64,
    pub assumption2_value: f64,
    pub a_norm: f64,
    pub b_in: f64,
    pub b_out: f64,
}

/// One trained grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub version: u32,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub config: RecordConfig,
    pub metrics: RecordMetrics,
    pub diagnostics: RecordDiagnostics,
    /// `None` when the bound constants are undefined for this operator.
    pub bounds: Option<BoundReport>,
    pub bounds_note: Option<String>,
}

fn check_version(found: u32) -> Result<()> {
    if found != RECORD_SCHEMA_VERSION {
        return Err(Error::SchemaVersionMismatch {
            expected: RECORD_SCHEMA_VERSION,
            found,
        });
    }
    Ok(())
}

/// Appends one JSON line under an exclusive file lock.
pub fn persist_record(record: &ExperimentRecord, path: impl AsRef<Path>) -> Result<()> {
    check_version(record.version)?;
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    file.lock()?;
    let result = (&file).write_all(line.as_bytes()).and_then(|_| (&file).flush());
    file.unlock()?;
    Ok(result?)
}

/// Reads every record of a results file, rejecting foreign schema versions.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>> {
    let file = File::open(path)?;
    file.lock_shared()?;
    let mut out = Vec::new();
    for line in BufReader::new(&file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)?;
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        check_version(u32::try_from(version).unwrap_or(u32::MAX))?;
        out.push(serde_json::from_value(value)?);
    }
    file.unlock()?;
    Ok(out)
}

/// The first record of a results file.
pub fn load_record(path: impl AsRef<Path>) -> Result<ExperimentRecord> {
    load_records(path)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Io(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "no records")))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::sample_measurement_matrix;

    pub(crate) fn sample_record(repeat: usize) -> ExperimentRecord {
        ExperimentRecord {
            version: RECORD_SCHEMA_VERSION,
            timestamp: 1_700_000_000,
            config: RecordConfig {
                dataset: "synthetic".into(),
                n: 50,
                big_n: 100,
                m: 12,
                depth: 5,
                s_train: 2000,
                s_test: 500,
                lambda: 1e-4,
                rho: 0.1,
                seed: 42,
                repeat,
            },
            metrics: RecordMetrics {
                train_mse: 0.25,
                test_mse: 0.3,
                ege: 0.05,
                epochs: 10,
                best_epoch: 7,
            },
            diagnostics: RecordDiagnostics {
                alpha: 1.5,
                beta: 9.0,
                sinv_s_residual: 1e-14,
                assumption2_value: 0.2,
                a_norm: 3.0,
                b_in: 4.0,
                b_out: 9.5,
            },
            bounds: None,
            bounds_note: Some("q undefined".into()),
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let (a, b) = generate_synthetic(5, 20, 7, 3).unwrap();
        let (c, d) = generate_synthetic(5, 20, 7, 3).unwrap();
        assert_eq!(a.signals(), c.signals());
        assert_eq!(b.signals(), d.signals());
        assert_eq!(a.len(), 20);
        assert_eq!(b.len(), 7);
        assert_eq!(a.split(), Split::Train);
        assert!(generate_synthetic(5, 0, 7, 3).is_err());
    }

    #[test]
    fn synthetic_mean_is_centered() {
        let (train, _) = generate_synthetic(20, 1000, 1, 11).unwrap();
        let n_total = train.signals().len() as f64;
        let mean = train.signals().sum() / n_total;
        assert!(mean.abs() < 5.0 / n_total.sqrt());
    }

    #[test]
    fn noiseless_measurement_is_exact() {
        let mm = sample_measurement_matrix(3, 8, 1).unwrap();
        let (train, _) = generate_synthetic(8, 10, 1, 2).unwrap();
        let y = measure(train.signals().view(), &mm, 0.0, 5).unwrap();
        assert_eq!(y, mm.a().dot(train.signals()));
        assert!(matches!(
            measure(Array2::zeros((7, 2)).view(), &mm, 0.0, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn noise_std_is_calibrated() {
        let mm = sample_measurement_matrix(50, 100, 1).unwrap();
        let x = Array2::zeros((100, 2000));
        let y = measure(x.view(), &mm, 1e-4, 9).unwrap();
        let var = y.mapv(|v| v * v).sum() / y.len() as f64;
        assert!((var.sqrt() / 1e-4 - 1.0).abs() < 0.1);
    }

    #[test]
    fn idx_round_trip() {
        let images = vec![(0..6).map(|v| v * 40).collect::<Vec<u8>>(), vec![255, 0, 1, 2, 3, 4]];
        let mut buf = Vec::new();
        write_idx_images(&mut buf, 2, 3, &images).unwrap();
        let m = parse_idx_images(&buf, None).unwrap();
        assert_eq!(m.dim(), (6, 2));
        for (j, img) in images.iter().enumerate() {
            for (i, &p) in img.iter().enumerate() {
                assert_eq!((m[[i, j]] * 255.0).round() as u8, p);
                assert_eq!(m[[i, j]], f64::from(p) / 255.0);
            }
        }
        assert_eq!(parse_idx_images(&buf, Some(1)).unwrap().ncols(), 1);
    }

    #[test]
    fn idx_errors_are_typed() {
        let mut buf = Vec::new();
        write_idx_images(&mut buf, 2, 2, &[vec![1, 2, 3, 4]]).unwrap();
        let mut bad = buf.clone();
        bad[3] = 0x01;
        assert!(matches!(
            parse_idx_images(&bad, None),
            Err(Error::BadMagic { found: 0x801, .. })
        ));
        assert!(matches!(
            parse_idx_images(&buf[..buf.len() - 1], None),
            Err(Error::TruncatedFile { .. })
        ));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(parse_idx_images(&long, None), Err(Error::ShapeMismatch(_))));
        assert!(parse_idx_images(&[], None).is_err());
    }

    #[test]
    fn record_round_trip_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.jsonl");
        let rec = sample_record(0);
        persist_record(&rec, &path).unwrap();
        assert_eq!(load_record(&path).unwrap(), rec);

        let mut wrong = rec.clone();
        wrong.version = 99;
        assert!(matches!(
            persist_record(&wrong, &path),
            Err(Error::SchemaVersionMismatch { .. })
        ));
        let text = std::fs::read_to_string(&path).unwrap();
        let patched = text.replace("\"version\":1", "\"version\":2");
        std::fs::write(&path, patched).unwrap();
        assert!(matches!(
            load_records(&path),
            Err(Error::SchemaVersionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn concurrent_appends_keep_every_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.jsonl");
        std::thread::scope(|scope| {
            for writer in 0..2 {
                let path = &path;
                scope.spawn(move || {
                    for i in 0..50 {
                        persist_record(&sample_record(writer * 100 + i), path).unwrap();
                    }
                });
            }
        });
        let mut repeats: Vec<usize> = load_records(&path)
            .unwrap()
            .into_iter()
            .map(|r| r.config.repeat)
            .collect();
        repeats.sort_unstable();
        let expected: Vec<usize> = (0..50).chain(100..150).collect();
        assert_eq!(repeats, expected);
    }
}
