use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::ProblemError;

/// Ordering of the raw vector `[x, vec(xxᵀ)]` before scaling and truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MonomialOrder {
    /// `x` followed by `vec(xxᵀ)` row by row.
    Natural,
    /// `x`, then the distinct products `xᵢxⱼ` (i ≤ j), then the mirrored
    /// duplicates (i > j). Truncating this order keeps distinct monomials first.
    #[default]
    UniqueFirst,
}

/// Polynomial feature map `φ(x) = A·[x, vec(xxᵀ)]` where `A` selects the first
/// `scales.len()` raw entries in `order` and scales them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapSpec {
    pub input_dim: usize,
    pub scales: Vec<f64>,
    #[serde(default)]
    pub order: MonomialOrder,
}

impl FeatureMapSpec {
    /// `A = I` on the full `input_dim + input_dim²` raw vector.
    pub fn identity(input_dim: usize) -> Self {
        Self {
            input_dim,
            scales: vec![1.0; input_dim + input_dim * input_dim],
            order: MonomialOrder::Natural,
        }
    }

    /// Diagonal conditioning map with log-uniformly spaced scales over
    /// `[scale_min, scale_max]`, smallest first.
    pub fn log_uniform(
        input_dim: usize,
        output_dim: usize,
        scale_min: f64,
        scale_max: f64,
    ) -> Result<Self, ProblemError> {
        if !(scale_min > 0.0 && scale_max >= scale_min) {
            return Err(ProblemError::InvalidParameter(format!(
                "scale range [{scale_min}, {scale_max}] must be positive and ordered"
            )));
        }
        let (lo, hi) = (scale_min.ln(), scale_max.ln());
        let scales = (0..output_dim)
            .map(|k| {
                let t = if output_dim > 1 {
                    k as f64 / (output_dim - 1) as f64
                } else {
                    1.0
                };
                (lo + t * (hi - lo)).exp()
            })
            .collect();
        let spec = Self {
            input_dim,
            scales,
            order: MonomialOrder::UniqueFirst,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn raw_dim(&self) -> usize {
        self.input_dim + self.input_dim * self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.scales.len()
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.input_dim == 0 {
            return Err(ProblemError::InvalidParameter("input_dim must be positive".into()));
        }
        if self.scales.len() > self.raw_dim() {
            return Err(ProblemError::InvalidParameter(format!(
                "{} scales for a raw feature vector of length {}",
                self.scales.len(),
                self.raw_dim()
            )));
        }
        if self.scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(ProblemError::InvalidParameter("scales must be positive".into()));
        }
        Ok(())
    }

    /// Raw-vector position of every output feature.
    fn source_indices(&self) -> Vec<usize> {
        let d = self.input_dim;
        let raw: Vec<usize> = match self.order {
            MonomialOrder::Natural => (0..self.raw_dim()).collect(),
            MonomialOrder::UniqueFirst => {
                let mut v: Vec<usize> = (0..d).collect();
                for i in 0..d {
                    for j in i..d {
                        v.push(d + i * d + j);
                    }
                }
                for i in 0..d {
                    for j in 0..i {
                        v.push(d + i * d + j);
                    }
                }
                v
            }
        };
        raw.into_iter().take(self.output_dim()).collect()
    }
}

fn raw_entry(x: ArrayView1<f64>, idx: usize) -> f64 {
    let d = x.len();
    if idx < d {
        x[idx]
    } else {
        let k = idx - d;
        x[k / d] * x[k % d]
    }
}

/// `φ(x)` for one input.
pub fn polynomial_features(x: ArrayView1<f64>, spec: &FeatureMapSpec) -> Result<Array1<f64>, ProblemError> {
    if x.len() != spec.input_dim {
        return Err(ProblemError::DimensionMismatch {
            expected: spec.input_dim,
            got: x.len(),
        });
    }
    let sources = spec.source_indices();
    Ok(Array1::from_iter(
        sources
            .iter()
            .zip(&spec.scales)
            .map(|(&src, &scale)| scale * raw_entry(x, src)),
    ))
}

/// Row-wise `φ` of an input matrix (one sample per row).
pub fn feature_matrix(inputs: &Array2<f64>, spec: &FeatureMapSpec) -> Result<Array2<f64>, ProblemError> {
    if inputs.ncols() != spec.input_dim {
        return Err(ProblemError::DimensionMismatch {
            expected: spec.input_dim,
            got: inputs.ncols(),
        });
    }
    let sources = spec.source_indices();
    let mut out = Array2::<f64>::zeros((inputs.nrows(), spec.output_dim()));
    for (row, mut dst) in inputs.rows().into_iter().zip(out.rows_mut()) {
        for (k, (&src, &scale)) in sources.iter().zip(&spec.scales).enumerate() {
            dst[k] = scale * raw_entry(row, src);
        }
    }
    Ok(out)
}
