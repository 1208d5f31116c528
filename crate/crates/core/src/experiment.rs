//! Experiment grids: per-cell training runs, checkpoints, diagnostics and CSV
//! summaries.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm_ref::AdmmParams;
use crate::bounds::{BoundInputs, BoundReport, YNormSource};
use crate::container;
use crate::data::{
    generate_synthetic, load_mnist_idx_limited, persist_record, Dataset, ExperimentRecord,
    RecordConfig, RecordDiagnostics, RecordMetrics, DEFAULT_NOISE_STD, RECORD_SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{
    assumption2_value, build_analysis_operator, sample_measurement_matrix, sinv_s, sinv_s_residual,
    MeasurementModel,
};
use crate::training::{fit, he_init, TrainConfig};
use crate::unfolded::UnfoldedDecoder;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSpec {
    Synthetic,
    /// Directory holding the four standard MNIST IDX files.
    Mnist { dir: PathBuf },
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Synthetic => "synthetic",
            DatasetSpec::Mnist { .. } => "mnist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub dataset: DatasetSpec,
    pub n_values: Vec<usize>,
    pub big_n_values: Vec<usize>,
    pub depth_values: Vec<usize>,
    pub cs_ratio: f64,
    pub s_train: usize,
    pub s_test: usize,
    pub repeats: usize,
    pub master_seed: u64,
    pub lambda: f64,
    pub rho: f64,
    pub noise_std: f64,
    pub train: TrainConfig,
    pub delta: f64,
    /// Sets both `B_in` and `B_out` to the larger of the two measured values
    /// so that the equal-radius bound applies.
    pub equal_b: bool,
    /// Worker threads for cells; 0 uses rayon's default.
    pub workers: usize,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Synthetic,
            n_values: vec![50],
            big_n_values: vec![100, 250, 500],
            depth_values: vec![5, 10, 15],
            cs_ratio: 0.25,
            s_train: 2000,
            s_test: 500,
            repeats: 3,
            master_seed: 0,
            lambda: 1e-4,
            rho: 0.1,
            noise_std: DEFAULT_NOISE_STD,
            train: TrainConfig::default(),
            delta: 0.05,
            equal_b: false,
            workers: 0,
        }
    }
}

/// One `(n, N, L, repeat)` cell of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub big_n: usize,
    pub depth: usize,
    pub repeat: usize,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.big_n_values.is_empty() || self.depth_values.is_empty() {
            return Err(Error::InvalidParameter("grid axes must be non-empty".into()));
        }
        for &n in &self.n_values {
            for &big_n in &self.big_n_values {
                if big_n <= n {
                    return Err(Error::InvalidParameter(format!(
                        "every N must exceed n, got N={big_n}, n={n}"
                    )));
                }
            }
            if self.measurements_for(n) == 0 {
                return Err(Error::InvalidParameter(format!(
                    "cs ratio {} leaves no measurements for n={n}",
                    self.cs_ratio
                )));
            }
        }
        if !(self.cs_ratio > 0.0 && self.cs_ratio < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "cs ratio must lie in (0, 1), got {}",
                self.cs_ratio
            )));
        }
        if self.depth_values.contains(&0) || self.repeats == 0 || self.s_train == 0 || self.s_test == 0 {
            return Err(Error::InvalidParameter(
                "depths, repeats and sample counts must be >= 1".into(),
            ));
        }
        if let DatasetSpec::Mnist { .. } = self.dataset {
            if self.n_values != [784] {
                return Err(Error::InvalidParameter("MNIST signals have n = 784".into()));
            }
        }
        AdmmParams::new(self.lambda, self.rho)?;
        self.train.validate()
    }

    /// `m = floor(cs_ratio * n)`.
    pub fn measurements_for(&self, n: usize) -> usize {
        (self.cs_ratio * n as f64 + 1e-9).floor() as usize
    }

    /// All cells in `(n, N, L, repeat)` order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            for &big_n in &self.big_n_values {
                for &depth in &self.depth_values {
                    for repeat in 0..self.repeats {
                        out.push(Cell {
                            n,
                            big_n,
                            depth,
                            repeat,
                        });
                    }
                }
            }
        }
        out
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of one cell: `h = splitmix64(master)`, then `h = splitmix64(h ^ v)`
/// for `v` in `(n, N, L, repeat)`.
pub fn cell_seed(master: u64, cell: &Cell) -> u64 {
    [cell.n, cell.big_n, cell.depth, cell.repeat]
        .iter()
        .fold(splitmix64(master), |h, &v| splitmix64(h ^ v as u64))
}

/// Independent stream `tag` derived from a cell seed.
fn sub_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

const SEED_MEASUREMENT: u64 = 1;
const SEED_DATA: u64 = 2;
const SEED_TRAIN_NOISE: u64 = 3;
const SEED_TEST_NOISE: u64 = 4;
const SEED_INIT: u64 = 5;
const SEED_SHUFFLE: u64 = 6;

/// Everything a finished cell produces.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub record: ExperimentRecord,
    pub decoder: UnfoldedDecoder,
    pub seed: u64,
}

fn load_signals(grid: &ExperimentGrid, n: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    match &grid.dataset {
        DatasetSpec::Synthetic => generate_synthetic(n, grid.s_train, grid.s_test, seed),
        DatasetSpec::Mnist { dir } => {
            let train = load_mnist_idx_limited(dir.join("train-images-idx3-ubyte"), None, Some(grid.s_train))?;
            let test = load_mnist_idx_limited(dir.join("t10k-images-idx3-ubyte"), None, Some(grid.s_test))?;
            Ok((train, test))
        }
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Trains and evaluates one cell.
pub fn run_cell(grid: &ExperimentGrid, cell: &Cell) -> Result<CellOutcome> {
    let seed = cell_seed(grid.master_seed, cell);
    let m = grid.measurements_for(cell.n);
    let mm = sample_measurement_matrix(m, cell.n, sub_seed(seed, SEED_MEASUREMENT))?.with_noise(grid.noise_std)?;
    let (train, test) = load_signals(grid, cell.n, sub_seed(seed, SEED_DATA))?;
    let train = train.measured(&mm, grid.noise_std, sub_seed(seed, SEED_TRAIN_NOISE))?;
    let test = test.measured(&mm, grid.noise_std, sub_seed(seed, SEED_TEST_NOISE))?;

    let mut b_in = train.max_measurement_norm();
    let mut b_out = train.max_signal_norm();
    if grid.equal_b {
        let b = b_in.max(b_out);
        b_in = b;
        b_out = b;
    }

    let op = build_analysis_operator(he_init(cell.n, cell.big_n, sub_seed(seed, SEED_INIT))?)?;
    let params = AdmmParams::new(grid.lambda, grid.rho)?;
    let dec = UnfoldedDecoder::new(op, mm.clone(), cell.depth, params, b_out)?;
    let cfg = TrainConfig {
        seed: sub_seed(seed, SEED_SHUFFLE),
        ..grid.train.clone()
    };
    let fitted = fit(dec, &train, &test, &cfg)?;
    let best = *fitted.best();
    let dec = fitted.decoder;
    let op = dec.operator();

    let (_, y_train) = train.pairs()?;
    let inputs = BoundInputs {
        alpha: op.alpha(),
        beta: op.beta(),
        rho: grid.rho,
        lambda: grid.lambda,
        a_norm: mm.a_norm(),
        ata_norm: mm.ata_norm(),
        y_frob: linalg::frobenius_norm(y_train),
        y_frob_source: YNormSource::Measured,
        b_in,
        b_out,
        n: cell.n,
        big_n: cell.big_n,
        s: grid.s_train,
        depth: cell.depth,
        delta: grid.delta,
    };
    let (bounds, bounds_note) = match BoundReport::compute(&inputs) {
        Ok(r) => (Some(r), None),
        Err(e @ Error::QUndefined { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };

    let record = ExperimentRecord {
        version: RECORD_SCHEMA_VERSION,
        timestamp: now_secs(),
        config: RecordConfig {
            dataset: grid.dataset.name().into(),
            n: cell.n,
            big_n: cell.big_n,
            m,
            depth: cell.depth,
            s_train: grid.s_train,
            s_test: grid.s_test,
            lambda: grid.lambda,
            rho: grid.rho,
            seed,
            repeat: cell.repeat,
        },
        metrics: RecordMetrics {
            train_mse: best.train_mse,
            test_mse: best.test_mse,
            ege: best.ege,
            epochs: fitted.history.len() - 1,
            best_epoch: fitted.best_epoch,
        },
        diagnostics: RecordDiagnostics {
            alpha: op.alpha(),
            beta: op.beta(),
            sinv_s_residual: sinv_s_residual(op)?,
            assumption2_value: assumption2_value(op, &mm, grid.rho),
            a_norm: mm.a_norm(),
            b_in,
            b_out,
        },
        bounds,
        bounds_note,
    };
    Ok(CellOutcome { record, decoder: dec, seed })
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub cell: Cell,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct GridOutcome {
    /// Sorted by `(n, N, L, repeat)`.
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<CellFailure>,
}

impl GridOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Where grid artifacts go; any field may be absent.
#[derive(Debug, Clone, Default)]
pub struct GridOutput {
    /// Results file, one JSON record per line.
    pub results: Option<PathBuf>,
    /// Directory for per-cell checkpoints and measurement matrices.
    pub checkpoints: Option<PathBuf>,
}

/// Runs every cell, in parallel up to `grid.workers`. A failing cell is
/// recorded and the rest of the grid continues.
pub fn run_grid(grid: &ExperimentGrid, output: &GridOutput) -> Result<GridOutcome> {
    grid.validate()?;
    if let Some(dir) = &output.checkpoints {
        fs::create_dir_all(dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    let cells = grid.cells();
    let results: Vec<(Cell, Result<ExperimentRecord>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let result = run_cell(grid, cell).and_then(|out| {
                    if let Some(dir) = &output.checkpoints {
                        let stem = format!("n{}_N{}_L{}_r{}", cell.n, cell.big_n, cell.depth, cell.repeat);
                        save_checkpoint(dir.join(format!("{stem}.ckpt")), &out.decoder, out.seed)?;
                        container::save_matrix(dir.join(format!("{stem}_A.bin")), out.decoder.measurement().a_view())?;
                    }
                    if let Some(path) = &output.results {
                        persist_record(&out.record, path)?;
                    }
                    info!(
                        "cell {cell:?}: test mse {:.6}, ege {:.6}",
                        out.record.metrics.test_mse, out.record.metrics.ege
                    );
                    Ok(out.record)
                });
                (*cell, result)
            })
            .collect()
    });

    let mut outcome = GridOutcome::default();
    for (cell, result) in results {
        match result {
            Ok(r) => outcome.records.push(r),
            Err(e) => {
                warn!("cell {cell:?} failed: {e}");
                outcome.failures.push(CellFailure {
                    cell,
                    error: e.to_string(),
                });
            }
        }
    }
    outcome.records.sort_by_key(record_key);
    Ok(outcome)
}

fn record_key(r: &ExperimentRecord) -> (usize, usize, usize, usize, usize) {
    (r.config.n, r.config.big_n, r.config.depth, r.config.s_train, r.config.repeat)
}

/// Structured header stored in front of the operator in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    #[serde(rename = "L")]
    pub depth: usize,
    pub lambda: f64,
    pub rho: f64,
    pub b_out: f64,
    pub seed: u64,
}

const CHECKPOINT_FORMAT: &str = "admm-dad-checkpoint-v1";

/// Writes a JSON header line followed by the binary container of `Phi`.
pub fn save_checkpoint(path: impl AsRef<Path>, dec: &UnfoldedDecoder, seed: u64) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        depth: dec.depth(),
        lambda: dec.lambda(),
        rho: dec.rho(),
        b_out: dec.b_out(),
        seed,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    container::write_matrix(&mut w, dec.operator().phi().view())?;
    w.flush()?;
    Ok(())
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Io(io::Error::new(io::ErrorKind::InvalidData, msg.into()))
}

/// Reads a checkpoint back. Any corruption surfaces as [`Error::Io`].
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, Matrix)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = Vec::new();
    r.by_ref().take(64 * 1024).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(invalid("checkpoint header is not terminated"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&line).map_err(|e| invalid(format!("checkpoint header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(invalid(format!("unknown checkpoint format {:?}", header.format)));
    }
    let phi = container::read_matrix(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(invalid("trailing bytes after checkpoint payload"));
    }
    Ok((header, phi))
}

/// Rebuilds a decoder from a checkpoint and its measurement model.
pub fn load_decoder(path: impl AsRef<Path>, mm: MeasurementModel) -> Result<UnfoldedDecoder> {
    let (header, phi) = load_checkpoint(path)?;
    let op = build_analysis_operator(phi)?;
    UnfoldedDecoder::new(op, mm, header.depth, AdmmParams::new(header.lambda, header.rho)?, header.b_out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub alpha: f64,
    pub beta: f64,
    pub sinv_s_residual: f64,
    pub assumption2_value: f64,
    pub rho: f64,
    pub a_norm: f64,
    /// Row-major `S^-1 S`.
    #[serde(skip)]
    pub sinv_s: Matrix,
}

/// Frame diagnostics of a saved operator.
pub fn run_diagnostics(checkpoint_path: impl AsRef<Path>, mm: &MeasurementModel) -> Result<DiagnosticsRecord> {
    let (header, phi) = load_checkpoint(checkpoint_path)?;
    if phi.ncols() != mm.n() {
        return Err(Error::DimensionMismatch {
            context: "checkpoint operator columns",
            expected: mm.n(),
            found: phi.ncols(),
        });
    }
    let op = build_analysis_operator(phi)?;
    Ok(DiagnosticsRecord {
        alpha: op.alpha(),
        beta: op.beta(),
        sinv_s_residual: sinv_s_residual(&op)?,
        assumption2_value: assumption2_value(&op, mm, header.rho),
        rho: header.rho,
        a_norm: mm.a_norm(),
        sinv_s: sinv_s(&op)?,
    })
}

/// Writes a matrix as headerless CSV, one row per line.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (0 for a single value); `None` for
/// an empty slice.
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(MeanStd { mean, std })
}

/// Aggregated statistics of one `(n, N, L, s)` configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    pub big_n: usize,
    pub depth: usize,
    pub s: usize,
    pub runs: usize,
    pub train_mse: MeanStd,
    pub test_mse: MeanStd,
    pub ege: MeanStd,
    /// Over the runs that have the equal-radius bound.
    pub theorem5_excess: Option<MeanStd>,
    pub assumption2_value: MeanStd,
}

pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, usize, usize, usize), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.config.n, r.config.big_n, r.config.depth, r.config.s_train))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((n, big_n, depth, s), mut rs)| {
            rs.sort_by_key(|r| r.config.repeat);
            let col = |f: &dyn Fn(&ExperimentRecord) -> f64| {
                mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("group is non-empty")
            };
            let t5: Vec<f64> = rs
                .iter()
                .filter_map(|r| r.bounds.as_ref().and_then(|b| b.theorem5_excess))
                .collect();
            SummaryRow {
                n,
                big_n,
                depth,
                s,
                runs: rs.len(),
                train_mse: col(&|r| r.metrics.train_mse),
                test_mse: col(&|r| r.metrics.test_mse),
                ege: col(&|r| r.metrics.ege),
                theorem5_excess: mean_std(&t5),
                assumption2_value: col(&|r| r.diagnostics.assumption2_value),
            }
        })
        .collect()
}

const REPORT_HEADER: [&str; 15] = [
    "n",
    "N",
    "L",
    "s",
    "runs",
    "train_mse_mean",
    "train_mse_std",
    "test_mse_mean",
    "test_mse_std",
    "ege_mean",
    "ege_std",
    "theorem5_excess_mean",
    "theorem5_excess_std",
    "assumption2_value_mean",
    "assumption2_value_std",
];

/// Writes the per-configuration summary as CSV, sorted by `(n, N, L, s)`.
/// Missing bound statistics are left empty.
pub fn write_report<W: Write>(records: &[ExperimentRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_HEADER)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for row in summarize(records) {
        out.write_record([
            row.n.to_string(),
            row.big_n.to_string(),
            row.depth.to_string(),
            row.s.to_string(),
            row.runs.to_string(),
            row.train_mse.mean.to_string(),
            row.train_mse.std.to_string(),
            row.test_mse.mean.to_string(),
            row.test_mse.std.to_string(),
            row.ege.mean.to_string(),
            row.ege.std.to_string(),
            opt(row.theorem5_excess.map(|m| m.mean)),
            opt(row.theorem5_excess.map(|m| m.std)),
            row.assumption2_value.mean.to_string(),
            row.assumption2_value.std.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn report(records: &[ExperimentRecord], out_path: impl AsRef<Path>) -> Result<()> {
    let file = BufWriter::new(File::create(out_path)?);
    write_report(records, file)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let ma = ra.iter().sum::<f64>() / ra.len() as f64;
    let mb = rb.iter().sum::<f64>() / rb.len() as f64;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::sample_record;
    use crate::model::tests::stacked_identity;

    #[test]
    fn seeds_are_stable_and_distinct() {
        let c = Cell {
            n: 50,
            big_n: 100,
            depth: 5,
            repeat: 0,
        };
        assert_eq!(cell_seed(7, &c), cell_seed(7, &c));
        let mut seen = std::collections::HashSet::new();
        for n in [10, 20] {
            for big_n in [30, 40] {
                for depth in [1, 2] {
                    for repeat in 0..3 {
                        let cell = Cell { n, big_n, depth, repeat };
                        assert!(seen.insert(cell_seed(7, &cell)));
                    }
                }
            }
        }
        assert_ne!(cell_seed(7, &c), cell_seed(8, &c));
    }

    fn tiny_grid() -> ExperimentGrid {
        ExperimentGrid {
            n_values: vec![8],
            big_n_values: vec![16],
            depth_values: vec![2],
            s_train: 64,
            s_test: 32,
            repeats: 1,
            train: TrainConfig {
                max_epochs: 3,
                early_stop_patience: 2,
                learning_rate: 1e-3,
                batch_size: 16,
                ..TrainConfig::default()
            },
            workers: 1,
            ..ExperimentGrid::default()
        }
    }

    #[test]
    fn one_cell_grid_gives_one_record() {
        let dir = tempfile::tempdir().unwrap();
        let output = GridOutput {
            results: Some(dir.path().join("results.jsonl")),
            checkpoints: Some(dir.path().join("ckpt")),
        };
        let outcome = run_grid(&tiny_grid(), &output).unwrap();
        assert!(outcome.all_succeeded());
        assert_eq!(outcome.records.len(), 1);
        let stored = crate::data::load_records(dir.path().join("results.jsonl")).unwrap();
        assert_eq!(stored, outcome.records);

        let ckpt = dir.path().join("ckpt/n8_N16_L2_r0.ckpt");
        let a = container::load_matrix(dir.path().join("ckpt/n8_N16_L2_r0_A.bin")).unwrap();
        let mm = MeasurementModel::new(a, 0.0).unwrap();
        let diag = run_diagnostics(&ckpt, &mm).unwrap();
        let rec = &outcome.records[0];
        assert_eq!(diag.alpha, rec.diagnostics.alpha);
        assert_eq!(diag.assumption2_value, rec.diagnostics.assumption2_value);
    }

    #[test]
    fn invalid_grid_is_rejected() {
        let mut g = tiny_grid();
        g.big_n_values = vec![8];
        assert!(run_grid(&g, &GridOutput::default()).is_err());
        let mut g = tiny_grid();
        g.cs_ratio = 1.0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let mut a = Matrix::zeros((2, 3));
        a[[0, 0]] = 2.0;
        a[[1, 1]] = 2.0;
        let mm = MeasurementModel::new(a, 0.0).unwrap();
        let op = build_analysis_operator(stacked_identity(3)).unwrap();
        let dec = UnfoldedDecoder::new(op, mm.clone(), 4, AdmmParams::new(1e-4, 0.1).unwrap(), 3.0).unwrap();
        save_checkpoint(&path, &dec, 11).unwrap();
        let (header, phi) = load_checkpoint(&path).unwrap();
        assert_eq!(header.depth, 4);
        assert_eq!(header.seed, 11);
        assert_eq!(&phi, dec.operator().phi());

        let diag = run_diagnostics(&path, &mm).unwrap();
        assert!(diag.sinv_s_residual < 1e-12);
        assert!((diag.assumption2_value - 0.1 * 2.0 / 2.0).abs() < 1e-12);
        assert_eq!(diag.sinv_s.dim(), (3, 3));

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Io(_))));
        fs::write(&path, b"not json\n").unwrap();
        assert!(matches!(run_diagnostics(&path, &mm), Err(Error::Io(_))));
        fs::write(&path, b"").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Io(_))));
    }

    #[test]
    fn report_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        report(&[], &empty).unwrap();
        assert_eq!(fs::read_to_string(&empty).unwrap().lines().count(), 1);

        let mut records: Vec<_> = (0..3).map(sample_record).collect();
        let mut other = sample_record(0);
        other.config.depth = 10;
        records.push(other);
        records.swap(0, 3);
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        report(&records, &p1).unwrap();
        records.reverse();
        report(&records, &p2).unwrap();
        let a = fs::read(&p1).unwrap();
        assert_eq!(a, fs::read(&p2).unwrap());
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("50,100,5,2000,3,"));
    }

    #[test]
    fn statistics_helpers() {
        let ms = mean_std(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(ms.mean, 2.0);
        assert!((ms.std - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]).unwrap().std, 0.0);
        assert!(mean_std(&[]).is_none());
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }
}
