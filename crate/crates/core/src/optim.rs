//! The three losses and their three independent RMSprop optimizers.
//!
//! One training step encodes all t tiles, evaluates the prediction,
//! dissimilarity and bound losses on the t−1 consecutive pairs, then for each
//! loss in the fixed order pred → dis → bound runs a backward pass, applies
//! that loss's own optimizer to the parameters it reaches (pred: encoder and
//! predictor; dis and bound: encoder only), and zeroes gradients. Parameter
//! values are captured onto the tape before the step, so all three backward
//! passes differentiate at the step's initial parameter point and the
//! returned losses are pre-update values.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::{ModelParams, TapedModel, ALL_RANGE, ENCODER_RANGE, PARAMS};
use crate::raster::Canvas;
use crate::scalar::Scalar;

/// Pre-update loss values of one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    /// Mean squared prediction error over consecutive pairs; ≥ 0.
    pub pred: f64,
    /// Mean pairwise similarity penalty; in (0,1].
    pub dis: f64,
    /// Out-of-bound penalty max(max_j z_j² − 1, 0); ≥ 0.
    pub bound: f64,
}

impl LossValues {
    pub fn all_finite(&self) -> bool {
        self.pred.is_finite() && self.dis.is_finite() && self.bound.is_finite()
    }
}

/// Optimizer and loss hyperparameters; defaults are the reference values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr_pred: f64,
    pub lr_dis: f64,
    pub lr_bound: f64,
    pub rho: f64,
    pub eps: f64,
    pub sigma: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let lr = 3e-4;
        OptimConfig { lr_pred: lr, lr_dis: 0.7 * lr, lr_bound: lr, rho: 0.9, eps: 1e-8, sigma: 0.2 }
    }
}

/// Mean over j of (tz[j] − z[j+1])².
pub fn loss_pred<S: Scalar>(z: &[S], tz: &[S]) -> Result<S> {
    if z.len() < 2 || tz.len() != z.len() - 1 {
        return Err(Error::Usage(format!(
            "loss_pred needs t−1 predictions for t encodings, got {} and {}",
            tz.len(),
            z.len()
        )));
    }
    let mut acc = S::zero();
    for j in 0..tz.len() {
        let r = tz[j] - z[j + 1];
        acc += r * r;
    }
    Ok(acc / S::from_f64(tz.len() as f64))
}

/// Mean over j of exp(−|z[j] − z[j+1]|/σ).
pub fn loss_dis<S: Scalar>(z: &[S], sigma: f64) -> Result<S> {
    if z.len() < 2 {
        return Err(Error::Usage("loss_dis needs at least two encodings".into()));
    }
    if sigma <= 0.0 {
        return Err(Error::Parameter(format!("sigma {sigma} must be positive")));
    }
    let s = S::from_f64(sigma);
    let mut acc = S::zero();
    for j in 0..z.len() - 1 {
        acc += (-(z[j] - z[j + 1]).abs() / s).exp();
    }
    Ok(acc / S::from_f64((z.len() - 1) as f64))
}

/// max(max_j z[j]² − 1, 0).
pub fn loss_bound<S: Scalar>(z: &[S]) -> S {
    let mut worst = S::zero();
    for &v in z {
        let over = v * v - S::one();
        if over > worst {
            worst = over;
        }
    }
    worst
}

/// One RMSprop optimizer over a fixed range of parameter tensors.
#[derive(Clone, Debug)]
pub struct RmspropState<S> {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    range: std::ops::Range<usize>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> RmspropState<S> {
    fn new(lr: f64, rho: f64, eps: f64, range: std::ops::Range<usize>) -> Self {
        let v = PARAMS[range.clone()]
            .iter()
            .map(|meta| vec![S::zero(); meta.shape.iter().product()])
            .collect();
        RmspropState { lr, rho, eps, range, v }
    }

    /// Applies one update using the gradients deposited on the bound tape's
    /// parameter leaves. Tensors without a gradient update with g = 0 (their
    /// running average still decays).
    pub fn apply(&mut self, model: &mut ModelParams<S>, tape: &Tape<S>, bound: &TapedModel) {
        let lr = S::from_f64(self.lr);
        let rho = S::from_f64(self.rho);
        let eps = S::from_f64(self.eps);
        for idx in self.range.clone() {
            let v = &mut self.v[idx - self.range.start];
            let params = model.tensors_mut()[idx].values_mut();
            match tape.grad(bound.param(idx)) {
                Some(g) => rmsprop_update(v, params, g, lr, rho, eps),
                None => {
                    for vj in v.iter_mut() {
                        *vj = rho * *vj;
                    }
                }
            }
        }
    }
}

/// In-place RMSprop: v ← ρv + (1−ρ)g²; p ← p − lr·g/(√v + ε).
pub fn rmsprop_update<S: Scalar>(v: &mut [S], params: &mut [S], grads: &[S], lr: S, rho: S, eps: S) {
    assert_eq!(v.len(), params.len());
    assert_eq!(grads.len(), params.len());
    let one_minus = S::one() - rho;
    for j in 0..params.len() {
        let g = grads[j];
        v[j] = rho * v[j] + one_minus * g * g;
        params[j] = params[j] - lr * g / (v[j].sqrt() + eps);
    }
}

/// The three optimizers plus the step counter and σ.
#[derive(Clone, Debug)]
pub struct TrainState<S> {
    pub pred: RmspropState<S>,
    pub dis: RmspropState<S>,
    pub bound: RmspropState<S>,
    pub sigma: f64,
    pub step: u64,
}

impl<S: Scalar> TrainState<S> {
    pub fn new(config: &OptimConfig) -> Self {
        TrainState {
            pred: RmspropState::new(config.lr_pred, config.rho, config.eps, ALL_RANGE),
            dis: RmspropState::new(config.lr_dis, config.rho, config.eps, ENCODER_RANGE),
            bound: RmspropState::new(config.lr_bound, config.rho, config.eps, ENCODER_RANGE),
            sigma: config.sigma,
            step: 0,
        }
    }
}

/// Tape nodes of the three losses over one tile sequence.
pub(crate) struct LossNodes {
    pub pred: NodeId,
    pub dis: NodeId,
    pub bound: NodeId,
}

/// Builds the full loss graph: batched encoder over all tiles, predictor over
/// the first t−1 encodings, and the three loss heads.
pub(crate) fn build_losses<S: Scalar>(
    tape: &mut Tape<S>,
    bound_model: &TapedModel,
    tiles: &[&Canvas<S>],
    sigma: f64,
) -> Result<LossNodes> {
    let t = tiles.len();
    if t < 2 {
        return Err(Error::Usage(format!("a training step needs ≥ 2 tiles, got {t}")));
    }
    if sigma <= 0.0 {
        return Err(Error::Parameter(format!("sigma {sigma} must be positive")));
    }
    let z = bound_model.encode_batch(tape, tiles)?;
    let z_head = tape.slice(z, 0, t - 1)?;
    let z_tail = tape.slice(z, 1, t - 1)?;

    let tz = bound_model.predict_batch(tape, z_head)?;
    let resid = tape.sub(tz, z_tail)?;
    let resid_sq = tape.square(resid);
    let pred = tape.mean(resid_sq);

    let diff = tape.sub(z_head, z_tail)?;
    let dist = tape.abs(diff);
    let scaled = tape.scale(dist, -1.0 / sigma);
    let sim = tape.exp(scaled);
    let dis = tape.mean(sim);

    let z_sq = tape.square(z);
    let z_peak = tape.reduce_max(z_sq);
    let over = tape.offset(z_peak, -1.0);
    let bound = tape.relu(over);

    Ok(LossNodes { pred, dis, bound })
}

/// One optimization step on a tile sequence; returns the pre-update losses.
pub fn train_step<S: Scalar>(
    model: &mut ModelParams<S>,
    state: &mut TrainState<S>,
    tiles: &[Canvas<S>],
) -> Result<LossValues> {
    let refs: Vec<&Canvas<S>> = tiles.iter().collect();
    let mut tape = Tape::new();
    let bound_model = TapedModel::bind(model, &mut tape);
    let nodes = build_losses(&mut tape, &bound_model, &refs, state.sigma)?;

    let losses = LossValues {
        pred: tape.value(nodes.pred).item().to_f64(),
        dis: tape.value(nodes.dis).item().to_f64(),
        bound: tape.value(nodes.bound).item().to_f64(),
    };
    if !losses.all_finite() {
        let which = if !losses.pred.is_finite() {
            "pred"
        } else if !losses.dis.is_finite() {
            "dis"
        } else {
            "bound"
        };
        return Err(Error::NonFinite { step: state.step, which });
    }

    for (loss, opt) in [
        (nodes.pred, &mut state.pred),
        (nodes.dis, &mut state.dis),
        (nodes.bound, &mut state.bound),
    ] {
        tape.backward(loss)?;
        opt.apply(model, &tape, &bound_model);
        tape.zero_grads();
    }
    state.step += 1;
    Ok(losses)
}
