//! Fully connected Q-network with late fusion.
//!
//! The flattened grid passes through the hidden stack; the last hidden
//! activation is concatenated with the fusion features and fed to a
//! smaller fusion layer, followed by a linear head with one output per
//! action. Hidden and fusion layers use ReLU.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub grid_input_dim: usize,
    pub fusion_input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub fusion_layer_dim: usize,
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(grid_input_dim: usize, fusion_input_dim: usize, output_dim: usize) -> Self {
        NetworkSpec {
            grid_input_dim,
            fusion_input_dim,
            hidden_dims: vec![128, 128, 128],
            fusion_layer_dim: 32,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_input_dim == 0
            || self.fusion_layer_dim == 0
            || self.output_dim == 0
            || self.hidden_dims.is_empty()
            || self.hidden_dims.contains(&0)
        {
            return Err(CoreError::invalid("network dimensions must be positive"));
        }
        Ok(())
    }

    /// (inputs, outputs) of every layer in evaluation order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_dims.len() + 2);
        let mut prev = self.grid_input_dim;
        for &h in &self.hidden_dims {
            shapes.push((prev, h));
            prev = h;
        }
        shapes.push((prev + self.fusion_input_dim, self.fusion_layer_dim));
        shapes.push((self.fusion_layer_dim, self.output_dim));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// outputs × inputs
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            w: Array2::zeros((outputs, inputs)),
            b: Array1::zeros(outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub spec: NetworkSpec,
    pub layers: Vec<Dense>,
}

/// Layer inputs and post-activation outputs kept for backpropagation.
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// Hash of which rectified units are active; a change between two
    /// evaluations means a kink was crossed.
    pub fn activation_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for y in &self.outputs[..self.outputs.len() - 1] {
            for v in y.iter() {
                h ^= (*v > 0.0) as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

impl QNetwork {
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layer_shapes().iter().map(|&(i, o)| Dense::zeros(i, o)).collect();
        Ok(QNetwork { spec, layers })
    }

    /// He-uniform weights on rectified layers, 1/sqrt(fan_in) on the head,
    /// zero biases.
    pub fn init<R: Rng>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let n = net.layers.len();
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let fan_in = layer.w.ncols() as f64;
            let bound = if k + 1 == n { 1.0 / fan_in.sqrt() } else { (6.0 / fan_in).sqrt() };
            layer.w.mapv_inplace(|_| rng.gen_range(-bound..bound));
        }
        Ok(net)
    }

    fn hidden_count(&self) -> usize {
        self.spec.hidden_dims.len()
    }

    fn check_batch(&self, grid: &ArrayView2<f64>, fusion: &ArrayView2<f64>) -> Result<()> {
        if grid.ncols() != self.spec.grid_input_dim || fusion.ncols() != self.spec.fusion_input_dim {
            return Err(CoreError::invalid(format!(
                "observation has {}+{} features, network expects {}+{}",
                grid.ncols(),
                fusion.ncols(),
                self.spec.grid_input_dim,
                self.spec.fusion_input_dim
            )));
        }
        if grid.nrows() != fusion.nrows() {
            return Err(CoreError::invalid("grid and fusion batches differ in length"));
        }
        Ok(())
    }

    pub fn forward_cached(&self, grid: ArrayView2<f64>, fusion: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_batch(&grid, &fusion)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut outputs = Vec::with_capacity(n);
        let mut a = grid.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            if k == self.hidden_count() {
                a = concatenate(Axis(1), &[a.view(), fusion]).expect("batch sizes checked");
            }
            let mut z = a.dot(&layer.w.t());
            z += &layer.b;
            if k + 1 < n {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(a);
            a = z.clone();
            outputs.push(z);
        }
        Ok((a, ForwardCache { inputs, outputs }))
    }

    pub fn forward_batch(&self, grid: ArrayView2<f64>, fusion: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward_cached(grid, fusion).map(|(q, _)| q)
    }

    pub fn forward(&self, grid: &[f64], fusion: &[f64]) -> Result<Vec<f64>> {
        let g = ArrayView2::from_shape((1, grid.len()), grid).map_err(|e| CoreError::invalid(e.to_string()))?;
        let f = ArrayView2::from_shape((1, fusion.len()), fusion).map_err(|e| CoreError::invalid(e.to_string()))?;
        self.check_batch(&g, &f)?;
        // Matrix-vector products; the batched path's packing buffers
        // fragment the heap when interleaved with replay pushes.
        let n = self.layers.len();
        let mut a = Array1::from(grid.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            if k == self.hidden_count() {
                a = concatenate(Axis(0), &[a.view(), ArrayView1::from(fusion)]).expect("dimensions checked");
            }
            let mut z = layer.w.dot(&a);
            z += &layer.b;
            if k + 1 < n {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a.to_vec())
    }

    /// Parameter gradients given dLoss/dQ for the batch.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Vec<Dense> {
        let n = self.layers.len();
        let mut grads: Vec<Dense> = Vec::with_capacity(n);
        let mut d = d_out.clone();
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            if k + 1 < n {
                d.zip_mut_with(&cache.outputs[k], |g, &y| {
                    if y <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            grads.push(Dense {
                w: d.t().dot(&cache.inputs[k]),
                b: d.sum_axis(Axis(0)),
            });
            if k > 0 {
                let d_in = d.dot(&layer.w);
                d = if k == self.hidden_count() {
                    d_in.slice(s![.., ..self.spec.hidden_dims[k - 1]]).to_owned()
                } else {
                    d_in
                };
            }
        }
        grads.reverse();
        grads
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for l in &self.layers {
            for v in l.w.iter().chain(l.b.iter()) {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    rows: l.w.nrows(),
                    cols: l.w.ncols(),
                    weights: l.w.iter().copied().collect(),
                    bias: l.b.to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| CoreError::ModelIncompatible(format!("unreadable model: {e}")))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(CoreError::ModelIncompatible(format!(
                "format_version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                file.format_version
            )));
        }
        file.spec
            .validate()
            .map_err(|e| CoreError::ModelIncompatible(e.to_string()))?;
        let shapes = file.spec.layer_shapes();
        if shapes.len() != file.layers.len() {
            return Err(CoreError::ModelIncompatible(format!(
                "spec implies {} layers, file has {}",
                shapes.len(),
                file.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(shapes.len());
        for (k, ((inputs, outputs), lf)) in shapes.into_iter().zip(file.layers).enumerate() {
            if lf.rows != outputs || lf.cols != inputs || lf.weights.len() != inputs * outputs || lf.bias.len() != outputs
            {
                return Err(CoreError::ModelIncompatible(format!(
                    "layer {k} has shape {}x{} with {} weights and {} biases, expected {outputs}x{inputs}",
                    lf.rows,
                    lf.cols,
                    lf.weights.len(),
                    lf.bias.len()
                )));
            }
            let w = Array2::from_shape_vec((outputs, inputs), lf.weights)
                .map_err(|e| CoreError::ModelIncompatible(e.to_string()))?;
            layers.push(Dense {
                w,
                b: Array1::from(lf.bias),
            });
        }
        let net = QNetwork { spec: file.spec, layers };
        if !net.is_finite() {
            return Err(CoreError::ModelIncompatible("model contains non-finite weights".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    rows: usize,
    cols: usize,
    /// Row-major, `rows` outputs by `cols` inputs.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    spec: NetworkSpec,
    layers: Vec<LayerFile>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}
