//! Fixed-dimension feature vectors from normalized image tensors.
//!
//! Backends sit behind [`FeatureExtractor`]. Two ship here:
//!
//! * [`StubExtractor`]: deterministic, dependency-free. It mean-pools the
//!   tensor onto an 8x8 grid and scatters the 192 cell means (and their
//!   complements) into `dim` buckets with fixed pseudo-random signs. Identical
//!   tensors give identical vectors; a one-pixel change moves the vector by at
//!   most the pooling weight of one cell.
//! * [`LinearSoftmaxExtractor`]: loads a dense linear layer over a pooled grid
//!   from a JSON file and emits softmax class scores. It stands in for a real
//!   network exported to the same input/output contract.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imaging::Tensor;

/// Output width of the large pre-trained reference network.
pub const REFERENCE_DIM: usize = 21_841;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
    backend_id: String,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, backend_id: impl Into<String>) -> Result<Self, FeatureError> {
        if values.is_empty() {
            return Err(FeatureError::EmptyVector);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(i));
        }
        Ok(FeatureVector {
            values,
            backend_id: backend_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }
}

/// Feature-major matrix: `dim` rows, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn empty(dim: usize) -> Self {
        FeatureMatrix {
            dim,
            cols: 0,
            data: Vec::new(),
        }
    }

    /// Builds the matrix from per-sample columns.
    ///
    /// # Panics
    ///
    /// If any column's length differs from `dim`.
    pub fn from_columns<C: AsRef<[f64]>>(dim: usize, columns: &[C]) -> Self {
        let cols = columns.len();
        let mut data = vec![0.0; dim * cols];
        for (j, col) in columns.iter().enumerate() {
            let col = col.as_ref();
            assert_eq!(col.len(), dim, "column {j} has length {}", col.len());
            for (f, v) in col.iter().enumerate() {
                data[f * cols + j] = *v;
            }
        }
        FeatureMatrix { dim, cols, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_samples(&self) -> usize {
        self.cols
    }

    pub fn get(&self, feature: usize, sample: usize) -> f64 {
        self.data[feature * self.cols + sample]
    }

    /// All samples' values of one feature.
    pub fn row(&self, feature: usize) -> &[f64] {
        &self.data[feature * self.cols..(feature + 1) * self.cols]
    }

    pub fn column(&self, sample: usize) -> Vec<f64> {
        (0..self.dim).map(|f| self.get(f, sample)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    DeterministicStub,
    ExternalModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Device {
    Cpu,
    Accelerator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub backend: Backend,
    pub dim: usize,
    pub model_path: Option<PathBuf>,
    pub input_side: usize,
    pub device: Device,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec {
            backend: Backend::DeterministicStub,
            dim: 256,
            model_path: None,
            input_side: 224,
            device: Device::Cpu,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("tensor side {got} does not match extractor input side {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("spec asks for dimension {spec} but the model produces {model}")]
    DimMismatch { spec: usize, model: usize },
    #[error("external model backend requires a model path")]
    MissingModelPath,
    #[error("failed to load model {}: {reason}", path.display())]
    ModelLoad { path: PathBuf, reason: String },
    #[error("feature dimension must be at least 1")]
    EmptyVector,
    #[error("non-finite feature value at index {0}")]
    NonFinite(usize),
}

/// A backend turning `side x side x 3` tensors into feature vectors.
///
/// Instances are immutable after construction; `extract` may be called from
/// any number of threads.
pub trait FeatureExtractor: Send + Sync {
    fn backend_id(&self) -> &str;

    fn dim(&self) -> usize;

    fn input_side(&self) -> usize;

    fn extract(&self, tensor: &Tensor) -> Result<FeatureVector, FeatureError>;

    /// Column `i` of the result equals `extract(&tensors[i])`.
    fn extract_batch(&self, tensors: &[Tensor]) -> Result<FeatureMatrix, FeatureError> {
        let cols = tensors
            .par_iter()
            .map(|t| self.extract(t).map(|v| v.values))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FeatureMatrix::from_columns(self.dim(), &cols))
    }
}

/// Constructs the backend named by `spec`.
pub fn build_extractor(spec: &ExtractorSpec) -> Result<Box<dyn FeatureExtractor>, FeatureError> {
    if spec.device == Device::Accelerator {
        log::warn!("no accelerator support in this build; running feature extraction on CPU");
    }
    match spec.backend {
        Backend::DeterministicStub => Ok(Box::new(StubExtractor::new(spec.dim, spec.input_side)?)),
        Backend::ExternalModel => {
            let path = spec.model_path.as_deref().ok_or(FeatureError::MissingModelPath)?;
            let model = LinearSoftmaxExtractor::load(path)?;
            if model.dim() != spec.dim {
                return Err(FeatureError::DimMismatch {
                    spec: spec.dim,
                    model: model.dim(),
                });
            }
            if model.input_side() != spec.input_side {
                return Err(FeatureError::ShapeMismatch {
                    expected: model.input_side(),
                    got: spec.input_side,
                });
            }
            Ok(Box::new(model))
        }
    }
}

fn check_side(expected: usize, tensor: &Tensor) -> Result<(), FeatureError> {
    if tensor.side() != expected {
        return Err(FeatureError::ShapeMismatch {
            expected,
            got: tensor.side(),
        });
    }
    Ok(())
}

/// Mean of each channel over a `grid x grid` partition of the tensor,
/// cell-major then channel. Cells narrower than a pixel sample the pixel
/// under their center.
pub fn pool_grid(tensor: &Tensor, grid: usize) -> Vec<f64> {
    let side = tensor.side();
    let span = |i: usize| {
        let lo = (i * side / grid).min(side - 1);
        let hi = ((i + 1) * side / grid).max(lo + 1);
        lo..hi
    };
    let mut out = Vec::with_capacity(grid * grid * 3);
    for gy in 0..grid {
        let ys = span(gy);
        for gx in 0..grid {
            let xs = span(gx);
            let n = (ys.len() * xs.len()) as f64;
            let mut sum = [0.0f64; 3];
            for y in ys.clone() {
                for x in xs.clone() {
                    for (c, s) in sum.iter_mut().enumerate() {
                        *s += tensor.get(y, x, c) as f64;
                    }
                }
            }
            out.extend(sum.iter().map(|s| s / n));
        }
    }
    out
}

pub const STUB_GRID: usize = 8;
pub const STUB_SEED: u64 = 0x5eed_0f_f1_9e5;

/// Deterministic pooled-grid projection backend.
#[derive(Debug, Clone)]
pub struct StubExtractor {
    dim: usize,
    input_side: usize,
    /// `(bucket, sign)` for each pooled input, cell means first and then
    /// their complements.
    projection: Vec<(usize, f64)>,
}

impl StubExtractor {
    pub fn new(dim: usize, input_side: usize) -> Result<Self, FeatureError> {
        if dim == 0 {
            return Err(FeatureError::EmptyVector);
        }
        let inputs = STUB_GRID * STUB_GRID * 3 * 2;
        let mut rng = ChaCha8Rng::seed_from_u64(STUB_SEED);
        let projection = (0..inputs)
            .map(|_| {
                let bucket = rng.gen_range(0..dim);
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                (bucket, sign)
            })
            .collect();
        Ok(StubExtractor {
            dim,
            input_side,
            projection,
        })
    }

    pub fn projection(&self) -> &[(usize, f64)] {
        &self.projection
    }
}

impl FeatureExtractor for StubExtractor {
    fn backend_id(&self) -> &str {
        "deterministic_stub"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn input_side(&self) -> usize {
        self.input_side
    }

    fn extract(&self, tensor: &Tensor) -> Result<FeatureVector, FeatureError> {
        check_side(self.input_side, tensor)?;
        let means = pool_grid(tensor, STUB_GRID);
        let mut values = vec![0.0; self.dim];
        let (direct, complement) = self.projection.split_at(means.len());
        for (m, ((b1, s1), (b2, s2))) in means.iter().zip(direct.iter().zip(complement)) {
            values[*b1] += s1 * m;
            values[*b2] += s2 * (1.0 - m);
        }
        FeatureVector::new(values, self.backend_id())
    }
}

pub const LINEAR_SOFTMAX_FORMAT: &str = "pageclass-linear-softmax";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LinearSoftmaxFile {
    format: String,
    input_side: usize,
    grid: usize,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

/// `softmax(W * pool(tensor) + b)` with weights read from a JSON file.
#[derive(Debug, Clone)]
pub struct LinearSoftmaxExtractor {
    input_side: usize,
    grid: usize,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl LinearSoftmaxExtractor {
    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let fail = |reason: String| FeatureError::ModelLoad {
            path: path.to_owned(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let file: LinearSoftmaxFile = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
        if file.format != LINEAR_SOFTMAX_FORMAT {
            return Err(fail(format!("unknown format tag {:?}", file.format)));
        }
        if file.grid == 0 || file.input_side == 0 {
            return Err(fail("grid and input_side must be positive".into()));
        }
        let width = file.grid * file.grid * 3;
        if file.weights.is_empty() || file.weights.len() != file.bias.len() {
            return Err(fail("weights and bias must be non-empty and the same length".into()));
        }
        if file.weights.iter().any(|row| row.len() != width) {
            return Err(fail(format!("every weight row must have {width} entries")));
        }
        if !file.weights.iter().flatten().chain(&file.bias).all(|v| v.is_finite()) {
            return Err(fail("non-finite parameter".into()));
        }
        Ok(LinearSoftmaxExtractor {
            input_side: file.input_side,
            grid: file.grid,
            weights: file.weights,
            bias: file.bias,
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let file = LinearSoftmaxFile {
            format: LINEAR_SOFTMAX_FORMAT.into(),
            input_side: self.input_side,
            grid: self.grid,
            weights: self.weights.clone(),
            bias: self.bias.clone(),
        };
        fs::write(path, serde_json::to_vec(&file)?)
    }

    pub fn from_parts(input_side: usize, grid: usize, weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Self {
        LinearSoftmaxExtractor {
            input_side,
            grid,
            weights,
            bias,
        }
    }
}

impl FeatureExtractor for LinearSoftmaxExtractor {
    fn backend_id(&self) -> &str {
        "external_model"
    }

    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn input_side(&self) -> usize {
        self.input_side
    }

    fn extract(&self, tensor: &Tensor) -> Result<FeatureVector, FeatureError> {
        check_side(self.input_side, tensor)?;
        let x = pool_grid(tensor, self.grid);
        let logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = exp.iter().sum();
        FeatureVector::new(exp.into_iter().map(|e| e / z).collect(), self.backend_id())
    }
}
