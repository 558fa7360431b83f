use std::path::Path;

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ProblemError;

/// Samples as rows: `inputs` is D×d, `targets` D×t.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self, ProblemError> {
        if inputs.nrows() != targets.nrows() {
            return Err(ProblemError::InvalidData(format!(
                "{} input rows but {} target rows",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(ProblemError::InvalidData("non-finite value".into()));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// First target column.
    pub fn target(&self) -> Array1<f64> {
        self.targets.column(0).to_owned()
    }

    /// Reads a CSV with a header row; the first `input_dim` columns are
    /// features and the remaining ones targets.
    pub fn read_csv(path: &Path, input_dim: usize) -> Result<Self, ProblemError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| ProblemError::Io(format!("{}: {e}", path.display())))?;
        let width = reader
            .headers()
            .map_err(|e| ProblemError::Io(e.to_string()))?
            .len();
        if width <= input_dim {
            return Err(ProblemError::InvalidData(format!(
                "{} has {width} columns; need {input_dim} features and at least one target",
                path.display()
            )));
        }
        let mut values = Vec::new();
        let mut rows = 0;
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| ProblemError::Io(e.to_string()))?;
            if record.len() != width {
                return Err(ProblemError::InvalidData(format!(
                    "row {} has {} fields, header has {width}",
                    line + 2,
                    record.len()
                )));
            }
            for field in record.iter() {
                let v: f64 = field.parse().map_err(|_| {
                    ProblemError::InvalidData(format!("row {}: cannot parse {field:?}", line + 2))
                })?;
                values.push(v);
            }
            rows += 1;
        }
        let all = Array2::from_shape_vec((rows, width), values)
            .map_err(|e| ProblemError::InvalidData(e.to_string()))?;
        Self::new(
            all.slice(s![.., ..input_dim]).to_owned(),
            all.slice(s![.., input_dim..]).to_owned(),
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ProblemError> {
        let mut writer =
            csv::Writer::from_path(path).map_err(|e| ProblemError::Io(format!("{}: {e}", path.display())))?;
        let header: Vec<String> = (0..self.input_dim())
            .map(|i| format!("x{i}"))
            .chain((0..self.targets.ncols()).map(|i| format!("y{i}")))
            .collect();
        writer
            .write_record(&header)
            .map_err(|e| ProblemError::Io(e.to_string()))?;
        for (x, y) in self.inputs.rows().into_iter().zip(self.targets.rows()) {
            let fields: Vec<String> = x.iter().chain(y.iter()).map(|v| v.to_string()).collect();
            writer
                .write_record(&fields)
                .map_err(|e| ProblemError::Io(e.to_string()))?;
        }
        writer.flush().map_err(|e| ProblemError::Io(e.to_string()))
    }
}

pub(crate) fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Two isotropic Gaussian classes at `±separation/2` along a random unit
/// direction; labels are ±1 and balanced in expectation.
pub fn two_gaussians(n: usize, dim: usize, separation: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut direction: Array1<f64> = Array1::from_shape_simple_fn(dim, || StandardNormal.sample(&mut rng));
    direction /= direction.dot(&direction).sqrt();
    let mut inputs = normal_matrix(&mut rng, n, dim);
    let mut targets = Array2::zeros((n, 1));
    for (mut row, label) in inputs.rows_mut().into_iter().zip(targets.iter_mut()) {
        let y: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        row.scaled_add(0.5 * separation * y, &direction);
        *label = y;
    }
    Dataset { inputs, targets }
}

/// `classes` Gaussian clusters with unit-variance noise around centres of
/// norm `spread`; targets hold the class index.
pub fn gaussian_clusters(n: usize, dim: usize, classes: usize, spread: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = normal_matrix(&mut rng, classes, dim) * (spread / (dim as f64).sqrt());
    let mut inputs = normal_matrix(&mut rng, n, dim);
    let mut targets = Array2::zeros((n, 1));
    for (mut row, label) in inputs.rows_mut().into_iter().zip(targets.iter_mut()) {
        let c = rng.random_range(0..classes);
        row += &centres.row(c);
        *label = c as f64;
    }
    Dataset { inputs, targets }
}
