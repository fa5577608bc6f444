//! The encoder Z (100×100 image → scalar) and residual predictor
//! T(z) = z + ΔT(z), with initialization and checkpointing.
//!
//! Encoder: three 3×3 conv layers (16, 32, 32 channels, stride 1, padding 1,
//! relu) with 2×2/2 max pooling after the second and third, flattened to
//! 20000 features, then dense layers 200-100-50-10 (tanh) and a linear head.
//! Predictor ΔT: dense 10-30-30-10 (relu, relu, relu, tanh) on the scalar z,
//! plus a linear head; eight weighted layers per network.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{load_tensors, save_tensors, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::raster::{Canvas, CANVAS_SIZE};
use crate::scalar::Scalar;

/// Kind of parameter tensor, deciding its initialization fans.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ParamKind {
    ConvWeight,
    DenseWeight,
    Bias,
}

/// Static description of one parameter tensor.
#[derive(Clone, Copy, Debug)]
pub struct ParamMeta {
    pub name: &'static str,
    pub shape: &'static [usize],
    kind: ParamKind,
}

/// All parameter tensors in storage order: encoder first, then predictor.
pub const PARAMS: [ParamMeta; 26] = [
    ParamMeta { name: "enc.conv1.w", shape: &[16, 1, 3, 3], kind: ParamKind::ConvWeight },
    ParamMeta { name: "enc.conv1.b", shape: &[16], kind: ParamKind::Bias },
    ParamMeta { name: "enc.conv2.w", shape: &[32, 16, 3, 3], kind: ParamKind::ConvWeight },
    ParamMeta { name: "enc.conv2.b", shape: &[32], kind: ParamKind::Bias },
    ParamMeta { name: "enc.conv3.w", shape: &[32, 32, 3, 3], kind: ParamKind::ConvWeight },
    ParamMeta { name: "enc.conv3.b", shape: &[32], kind: ParamKind::Bias },
    ParamMeta { name: "enc.dense1.w", shape: &[20000, 200], kind: ParamKind::DenseWeight },
    ParamMeta { name: "enc.dense1.b", shape: &[200], kind: ParamKind::Bias },
    ParamMeta { name: "enc.dense2.w", shape: &[200, 100], kind: ParamKind::DenseWeight },
    ParamMeta { name: "enc.dense2.b", shape: &[100], kind: ParamKind::Bias },
    ParamMeta { name: "enc.dense3.w", shape: &[100, 50], kind: ParamKind::DenseWeight },
    ParamMeta { name: "enc.dense3.b", shape: &[50], kind: ParamKind::Bias },
    ParamMeta { name: "enc.dense4.w", shape: &[50, 10], kind: ParamKind::DenseWeight },
    ParamMeta { name: "enc.dense4.b", shape: &[10], kind: ParamKind::Bias },
    ParamMeta { name: "enc.head.w", shape: &[10, 1], kind: ParamKind::DenseWeight },
    ParamMeta { name: "enc.head.b", shape: &[1], kind: ParamKind::Bias },
    ParamMeta { name: "pred.dense1.w", shape: &[1, 10], kind: ParamKind::DenseWeight },
    ParamMeta { name: "pred.dense1.b", shape: &[10], kind: ParamKind::Bias },
    ParamMeta { name: "pred.dense2.w", shape: &[10, 30], kind: ParamKind::DenseWeight },
    ParamMeta { name: "pred.dense2.b", shape: &[30], kind: ParamKind::Bias },
    ParamMeta { name: "pred.dense3.w", shape: &[30, 30], kind: ParamKind::DenseWeight },
    ParamMeta { name: "pred.dense3.b", shape: &[30], kind: ParamKind::Bias },
    ParamMeta { name: "pred.dense4.w", shape: &[30, 10], kind: ParamKind::DenseWeight },
    ParamMeta { name: "pred.dense4.b", shape: &[10], kind: ParamKind::Bias },
    ParamMeta { name: "pred.head.w", shape: &[10, 1], kind: ParamKind::DenseWeight },
    ParamMeta { name: "pred.head.b", shape: &[1], kind: ParamKind::Bias },
];

/// Index of the first predictor tensor in `PARAMS`.
pub const PREDICTOR_START: usize = 16;

/// Indices of the encoder's parameter tensors.
pub const ENCODER_RANGE: std::ops::Range<usize> = 0..PREDICTOR_START;
/// Indices of the predictor's parameter tensors.
pub const PREDICTOR_RANGE: std::ops::Range<usize> = PREDICTOR_START..PARAMS.len();
/// Indices of every parameter tensor.
pub const ALL_RANGE: std::ops::Range<usize> = 0..PARAMS.len();

/// Full parameter set of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    tensors: Vec<Tensor<S>>,
    pub init_seed: u64,
}

impl<S: Scalar> ModelParams<S> {
    /// Glorot-uniform initialization: weights uniform in
    /// ±sqrt(6/(fan_in+fan_out)), biases zero. Draws happen in f64 in a fixed
    /// tensor order, so f32 and f64 models share underlying values.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(PARAMS.len());
        for meta in PARAMS {
            let len: usize = meta.shape.iter().product();
            let values: Vec<S> = match meta.kind {
                ParamKind::Bias => vec![S::zero(); len],
                ParamKind::ConvWeight => {
                    // [out_c, in_c, k, k]: fans include the kernel area.
                    let (out_c, in_c, k) = (meta.shape[0], meta.shape[1], meta.shape[2]);
                    let bound = (6.0 / ((in_c + out_c) * k * k) as f64).sqrt();
                    (0..len).map(|_| S::from_f64(rng.gen_range(-bound..bound))).collect()
                }
                ParamKind::DenseWeight => {
                    let (fan_in, fan_out) = (meta.shape[0], meta.shape[1]);
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..len).map(|_| S::from_f64(rng.gen_range(-bound..bound))).collect()
                }
            };
            tensors.push(Tensor::from_values(meta.shape, values).expect("static shapes"));
        }
        ModelParams { tensors, init_seed: seed }
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    /// Total parameter count (4,041,520 for this architecture).
    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Parameter count of tensors in an index range.
    pub fn num_params_in(&self, range: std::ops::Range<usize>) -> usize {
        self.tensors[range].iter().map(|t| t.len()).sum()
    }

    /// Writes all parameters to a checkpoint file (f32 wire format).
    pub fn save(&self, path: &Path) -> Result<()> {
        save_tensors(path, &self.tensors)
    }

    /// Reads a checkpoint, validating the architecture. The init seed is not
    /// part of the format and loads as 0.
    pub fn load(path: &Path) -> Result<Self> {
        let loaded = load_tensors(path)?;
        if loaded.len() != PARAMS.len() {
            return Err(Error::corrupt(
                path,
                format!("{} tensors, architecture has {}", loaded.len(), PARAMS.len()),
            ));
        }
        let mut tensors = Vec::with_capacity(PARAMS.len());
        for (meta, t) in PARAMS.iter().zip(loaded) {
            if t.shape() != meta.shape {
                return Err(Error::corrupt(
                    path,
                    format!("{} has shape {:?}, want {:?}", meta.name, t.shape(), meta.shape),
                ));
            }
            let values: Vec<S> = t.values().iter().map(|&v| S::from_f64(v as f64)).collect();
            tensors.push(Tensor::from_values(meta.shape, values)?);
        }
        Ok(ModelParams { tensors, init_seed: 0 })
    }
}

/// A model bound to a tape: parameter values are captured onto leaf nodes, so
/// later updates to the `ModelParams` do not disturb this tape's forward
/// values or gradients.
pub struct TapedModel {
    param_ids: Vec<NodeId>,
}

impl TapedModel {
    /// Captures every parameter tensor onto the tape by value.
    pub fn bind<S: Scalar>(model: &ModelParams<S>, tape: &mut Tape<S>) -> TapedModel {
        let param_ids = model.tensors.iter().map(|t| tape.input(t.clone())).collect();
        TapedModel { param_ids }
    }

    /// Tape leaf holding parameter tensor `index` (in `PARAMS` order).
    pub fn param(&self, index: usize) -> NodeId {
        self.param_ids[index]
    }

    /// Encoder forward for a batch of canvases: returns a [batch] node of
    /// scalars z.
    pub fn encode_batch<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        canvases: &[&Canvas<S>],
    ) -> Result<NodeId> {
        if canvases.is_empty() {
            return Err(Error::Usage("encode_batch needs at least one canvas".into()));
        }
        let batch = canvases.len();
        let mut values = Vec::with_capacity(batch * CANVAS_SIZE * CANVAS_SIZE);
        for c in canvases {
            values.extend_from_slice(c.pixels());
        }
        let input =
            tape.input(Tensor::from_values(&[batch, 1, CANVAS_SIZE, CANVAS_SIZE], values)?);

        let p = &self.param_ids;
        let c1 = tape.conv2d(input, p[0], p[1], 1, 1)?;
        let r1 = tape.relu(c1);
        let c2 = tape.conv2d(r1, p[2], p[3], 1, 1)?;
        let r2 = tape.relu(c2);
        let p2 = tape.maxpool2d(r2, 2, 2)?;
        let c3 = tape.conv2d(p2, p[4], p[5], 1, 1)?;
        let r3 = tape.relu(c3);
        let p3 = tape.maxpool2d(r3, 2, 2)?;
        let flat = tape.reshape(p3, &[batch, 32 * 25 * 25])?;
        let mut h = flat;
        for i in 0..4 {
            let d = tape.dense(h, p[6 + 2 * i], p[7 + 2 * i])?;
            h = tape.tanh(d);
        }
        let z = tape.dense(h, p[14], p[15])?;
        tape.reshape(z, &[batch])
    }

    /// Predictor forward on a [batch] node of z values: T(z) = z + ΔT(z).
    pub fn predict_batch<S: Scalar>(&self, tape: &mut Tape<S>, z: NodeId) -> Result<NodeId> {
        let batch = tape.value(z).len();
        let p = &self.param_ids;
        let mut h = tape.reshape(z, &[batch, 1])?;
        for i in 0..3 {
            let d = tape.dense(h, p[16 + 2 * i], p[17 + 2 * i])?;
            h = tape.relu(d);
        }
        let d = tape.dense(h, p[22], p[23])?;
        h = tape.tanh(d);
        let dt = tape.dense(h, p[24], p[25])?;
        let dt_flat = tape.reshape(dt, &[batch])?;
        tape.add(z, dt_flat)
    }
}

/// Scalar encoding of one canvas (value only, no gradients kept).
pub fn encode<S: Scalar>(model: &ModelParams<S>, canvas: &Canvas<S>) -> Result<S> {
    let mut tape = Tape::new();
    let bound = TapedModel::bind(model, &mut tape);
    let z = bound.encode_batch(&mut tape, &[canvas])?;
    Ok(tape.value(z).item())
}

/// Scalar prediction T(z) for one z (value only).
pub fn predict<S: Scalar>(model: &ModelParams<S>, z: S) -> Result<S> {
    let mut tape = Tape::new();
    let bound = TapedModel::bind(model, &mut tape);
    let zid = tape.input(Tensor::from_values(&[1], vec![z])?);
    let t = bound.predict_batch(&mut tape, zid)?;
    Ok(tape.value(t).item())
}

/// Encodings of a batch of canvases (values only).
pub fn encode_all<S: Scalar>(model: &ModelParams<S>, canvases: &[&Canvas<S>]) -> Result<Vec<S>> {
    let mut tape = Tape::new();
    let bound = TapedModel::bind(model, &mut tape);
    let z = bound.encode_batch(&mut tape, canvases)?;
    Ok(tape.value(z).values().to_vec())
}
