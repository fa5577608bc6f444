//! Naïve-network solving: train a fresh model on the test's own sequence,
//! then pick the option whose encoding the predictor lands closest to.
//!
//! The decision rule scores option k by (T(Z(x^t)) − Z(o^k))² and takes the
//! argmin, ties to the lowest index. `steps = 0` skips training entirely and
//! decides straight from the random initialization (the chance-level
//! baseline), so the configured step count may be any value including zero.

use crate::error::{Error, Result};
use crate::model::{encode_all, predict, ModelParams};
use crate::optim::{train_step, LossValues, OptimConfig, TrainState};
use crate::raster::{render_tile, Canvas};
use crate::scalar::Scalar;
use crate::testgen::RpmTest;

/// Mixed into a test's seed to derive its solver-model seed, so the model
/// init stream never aliases the generator stream fed with the same seed.
pub const SOLVE_SEED_TAG: u64 = 0x736f6c7665;

/// How one naïve solve runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveConfig {
    /// Optimization steps on the test sequence; 0 decides untrained.
    pub steps: u32,
    /// Record per-step option errors and losses.
    pub record_traces: bool,
    /// Seed for the fresh model initialization.
    pub seed: u64,
    /// Optimizer and loss hyperparameters.
    pub optim: OptimConfig,
}

impl SolveConfig {
    pub fn new(seed: u64) -> Self {
        SolveConfig { steps: 200, record_traces: false, seed, optim: OptimConfig::default() }
    }
}

/// Outcome of one solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    /// Chosen option index.
    pub choice: usize,
    /// Whether the choice matches the test's answer; `None` if hidden.
    pub correct: Option<bool>,
    /// Diagnostic message if training blew up (result counts as incorrect).
    pub failure: Option<String>,
    /// Option prediction errors under the final parameters.
    pub final_errors: Vec<f64>,
    /// Option errors after 0, 1, …, steps optimization steps (traced runs).
    pub option_errors: Vec<Vec<f64>>,
    /// Pre-update losses of each step (traced runs).
    pub losses: Vec<LossValues>,
    /// Earliest step count after which the correct option's error stays
    /// strictly smallest through the end of the run (traced runs).
    pub first_separation_step: Option<usize>,
}

impl SolveResult {
    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Index of the strictly smallest error; ties go to the lowest index.
pub fn argmin_strict(errors: &[f64]) -> usize {
    assert!(!errors.is_empty(), "argmin of no options");
    let mut best = 0;
    for (k, &e) in errors.iter().enumerate().skip(1) {
        if e < errors[best] {
            best = k;
        }
    }
    best
}

/// Prediction error (T(Z(last_tile)) − Z(o^k))² for every option, from one
/// batched value-only forward pass.
pub fn option_errors<S: Scalar>(
    model: &ModelParams<S>,
    last_tile: &Canvas<S>,
    options: &[Canvas<S>],
) -> Result<Vec<f64>> {
    if options.is_empty() {
        return Err(Error::Usage("option_errors needs at least one option".into()));
    }
    let mut canvases: Vec<&Canvas<S>> = Vec::with_capacity(options.len() + 1);
    canvases.push(last_tile);
    canvases.extend(options.iter());
    let z = encode_all(model, &canvases)?;
    let t = predict(model, z[0])?.to_f64();
    Ok(z[1..].iter().map(|&zk| (t - zk.to_f64()).powi(2)).collect())
}

/// Decision rule: the option whose encoding is closest to the prediction.
pub fn decide<S: Scalar>(
    model: &ModelParams<S>,
    last_tile: &Canvas<S>,
    options: &[Canvas<S>],
) -> Result<usize> {
    Ok(argmin_strict(&option_errors(model, last_tile, options)?))
}

/// Earliest row index from which `correct` stays the strict argmin to the
/// last row; `None` if the last row is not separated.
pub(crate) fn first_separation(rows: &[Vec<f64>], correct: usize) -> Option<usize> {
    let separated = |row: &Vec<f64>| {
        row.iter().enumerate().all(|(k, &e)| k == correct || row[correct] < e)
    };
    let mut start = None;
    for (i, row) in rows.iter().enumerate() {
        if separated(row) {
            start.get_or_insert(i);
        } else {
            start = None;
        }
    }
    start
}

/// Runs the naïve-network experiment on one test with a given fresh model.
pub(crate) fn solve_with_model<S: Scalar>(
    model: &mut ModelParams<S>,
    test: &RpmTest,
    config: &SolveConfig,
) -> Result<SolveResult> {
    let tiles: Vec<Canvas<S>> =
        test.tiles.iter().map(render_tile).collect::<Result<_>>()?;
    let options: Vec<Canvas<S>> =
        test.options.iter().map(render_tile).collect::<Result<_>>()?;
    let last_tile = tiles.last().ok_or_else(|| Error::Usage("test has no tiles".into()))?;

    let mut state = TrainState::new(&config.optim);
    let mut traces: Vec<Vec<f64>> = Vec::new();
    let mut losses: Vec<LossValues> = Vec::new();
    let mut failure = None;

    if config.record_traces {
        traces.push(option_errors(model, last_tile, &options)?);
    }
    for _ in 0..config.steps {
        match train_step(model, &mut state, &tiles) {
            Ok(l) => {
                if config.record_traces {
                    losses.push(l);
                    traces.push(option_errors(model, last_tile, &options)?);
                }
            }
            Err(e @ Error::NonFinite { .. }) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let final_errors = match traces.last() {
        Some(row) if failure.is_none() => row.clone(),
        _ => option_errors(model, last_tile, &options)?,
    };
    let choice = argmin_strict(&final_errors);
    let correct = test.correct.map(|c| failure.is_none() && choice == c);
    let first_separation_step = match (failure.is_none(), test.correct) {
        (true, Some(c)) if config.record_traces => first_separation(&traces, c),
        _ => None,
    };

    Ok(SolveResult {
        choice,
        correct,
        failure,
        final_errors,
        option_errors: traces,
        losses,
        first_separation_step,
    })
}

/// Initializes a fresh model from `config.seed` and solves `test` with it.
pub fn solve_naive<S: Scalar>(test: &RpmTest, config: &SolveConfig) -> Result<SolveResult> {
    if test.tiles.len() < 2 || test.options.len() < 2 {
        return Err(Error::Usage(format!(
            "solving needs ≥ 2 tiles and ≥ 2 options, got {} and {}",
            test.tiles.len(),
            test.options.len()
        )));
    }
    let mut model: ModelParams<S> = ModelParams::init(config.seed);
    solve_with_model(&mut model, test, config)
}
