//! Batch harnesses: the naïve condition grid and extensive training with a
//! frozen difficult evaluation set.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::optim::{train_step, OptimConfig, TrainState};
use crate::raster::{render_tile, Canvas};
use crate::scalar::Scalar;
use crate::solver::{decide, solve_naive, SolveConfig, SOLVE_SEED_TAG};
use crate::testgen::{generate_test, FeatureName, FeatureRoles, SeqSpec};

/// Mixed into a run seed to derive the frozen evaluation set's seeds.
pub const EVAL_SEED_TAG: u64 = 0x6576616c;

/// One cell of the test-difficulty grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Condition {
    pub rule: FeatureName,
    /// Distractor features in canonical order; the rest stay constant.
    pub distractors: Vec<FeatureName>,
    pub t: usize,
    pub n: usize,
}

impl Condition {
    pub fn new(rule: FeatureName, distractors: &[FeatureName], t: usize, n: usize) -> Condition {
        Condition { rule, distractors: distractors.to_vec(), t, n }
    }

    pub fn roles(&self) -> FeatureRoles {
        FeatureRoles::new(self.rule, &self.distractors)
    }

    /// Spec of the i-th test of a run with the given base seed.
    pub fn spec_for(&self, base_seed: u64, index: usize) -> SeqSpec {
        SeqSpec::new(self.t, self.n, self.roles(), base_seed.wrapping_add(index as u64))
    }

    fn validate(&self) -> Result<()> {
        if self.distractors.contains(&self.rule) {
            return Err(Error::Parameter(format!(
                "rule feature {} cannot be its own distractor",
                self.rule.name()
            )));
        }
        SeqSpec::new(self.t, self.n, self.roles(), 0).validate()
    }
}

/// All 16 distractor subsets of the four non-rule features, ordered by
/// distractor count and, within a count, by canonical feature order.
pub fn condition_matrix(rule: FeatureName, t: usize, n: usize) -> Result<Vec<Condition>> {
    if rule != FeatureName::Color && rule != FeatureName::Size {
        return Err(Error::Parameter(format!(
            "condition grid is defined for Color and Size rules, not {}",
            rule.name()
        )));
    }
    let others: Vec<FeatureName> =
        FeatureName::ALL.iter().copied().filter(|&f| f != rule).collect();
    let mut conditions: Vec<Condition> = (0u32..16)
        .map(|mask| {
            let distractors: Vec<FeatureName> = others
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &f)| f)
                .collect();
            Condition::new(rule, &distractors, t, n)
        })
        .collect();
    conditions.sort_by_key(|c| {
        let rank: usize = c
            .distractors
            .iter()
            .map(|f| 1 << f.index())
            .sum();
        (c.distractors.len(), rank)
    });
    Ok(conditions)
}

/// One test's outcome inside a condition run.
#[derive(Clone, Debug, PartialEq)]
pub struct TestOutcome {
    pub index: usize,
    pub test_seed: u64,
    pub model_seed: u64,
    pub choice: usize,
    pub correct: bool,
    pub failed: bool,
}

/// Aggregate of one condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionResult {
    pub condition: Condition,
    pub num_tests: usize,
    pub successes: usize,
    /// Runs aborted by non-finite losses; counted as incorrect above.
    pub failures: usize,
    pub success_rate: f64,
    /// Binomial standard error sqrt(p(1−p)/num_tests).
    pub sem: f64,
    pub outcomes: Vec<TestOutcome>,
}

/// Folds per-test outcomes into the aggregate; pure in the outcome multiset,
/// so execution order cannot change the result.
pub(crate) fn aggregate(condition: Condition, outcomes: Vec<TestOutcome>) -> ConditionResult {
    let num_tests = outcomes.len();
    let successes = outcomes.iter().filter(|o| o.correct).count();
    let failures = outcomes.iter().filter(|o| o.failed).count();
    let p = successes as f64 / num_tests as f64;
    let sem = (p * (1.0 - p) / num_tests as f64).sqrt();
    ConditionResult { condition, num_tests, successes, failures, success_rate: p, sem, outcomes }
}

/// Generates and solves `num_tests` tests of one condition, each with a fresh
/// model, in parallel. Test i uses seed base_seed+i; its model seed is
/// derived from that, so reruns of any single test reproduce the batch entry.
pub fn run_naive_condition<S: Scalar>(
    condition: &Condition,
    num_tests: usize,
    base_seed: u64,
    solve_template: &SolveConfig,
) -> Result<ConditionResult> {
    if num_tests == 0 {
        return Err(Error::Usage("a condition run needs at least one test".into()));
    }
    condition.validate()?;
    let outcomes: Vec<TestOutcome> = (0..num_tests)
        .into_par_iter()
        .map(|index| {
            let spec = condition.spec_for(base_seed, index);
            let test = generate_test(&spec)?;
            let config = SolveConfig { seed: spec.seed ^ SOLVE_SEED_TAG, ..*solve_template };
            let result = solve_naive::<S>(&test, &config)?;
            Ok(TestOutcome {
                index,
                test_seed: spec.seed,
                model_seed: config.seed,
                choice: result.choice,
                correct: result.correct == Some(true),
                failed: result.is_failed(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(condition.clone(), outcomes))
}

/// Unweighted mean success rate per distractor count, sorted by count.
pub fn mean_rate_by_distractor_count(results: &[ConditionResult]) -> Vec<(usize, f64)> {
    let mut by_count: Vec<(usize, f64, usize)> = Vec::new();
    for r in results {
        let count = r.condition.distractors.len();
        match by_count.iter_mut().find(|(c, _, _)| *c == count) {
            Some((_, sum, n)) => {
                *sum += r.success_rate;
                *n += 1;
            }
            None => by_count.push((count, r.success_rate, 1)),
        }
    }
    by_count.sort_by_key(|&(c, _, _)| c);
    by_count.into_iter().map(|(c, sum, n)| (c, sum / n as f64)).collect()
}

/// A frozen set of rendered tests for read-only accuracy evaluation.
pub struct EvalSet<S> {
    tests: Vec<(Vec<Canvas<S>>, usize)>,
    num_options: usize,
}

impl<S: Scalar> EvalSet<S> {
    /// Renders `size` tests of `condition` with seeds base_seed, base_seed+1, …
    pub fn generate(condition: &Condition, size: usize, base_seed: u64) -> Result<EvalSet<S>> {
        if size == 0 {
            return Err(Error::Usage("an evaluation set needs at least one test".into()));
        }
        condition.validate()?;
        let tests = (0..size)
            .map(|index| {
                let spec = condition.spec_for(base_seed, index);
                let test = generate_test(&spec)?;
                let mut canvases: Vec<Canvas<S>> = vec![render_tile(test.tiles.last().unwrap())?];
                for o in &test.options {
                    canvases.push(render_tile(o)?);
                }
                Ok((canvases, test.correct.expect("generated tests carry their answer")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalSet { tests, num_options: condition.n })
    }

    pub fn len(&self) -> usize {
        self.tests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tests.is_empty()
    }
}

/// Fraction of the evaluation set the model decides correctly. Takes the
/// model immutably: evaluation can never move parameters.
pub fn evaluate_accuracy<S: Scalar>(model: &ModelParams<S>, eval: &EvalSet<S>) -> Result<f64> {
    let mut correct = 0usize;
    for (canvases, answer) in &eval.tests {
        let choice = decide(model, &canvases[0], &canvases[1..=eval.num_options])?;
        if choice == *answer {
            correct += 1;
        }
    }
    Ok(correct as f64 / eval.tests.len() as f64)
}

/// How one extensive-training run proceeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtensiveConfig {
    pub rule: FeatureName,
    pub num_sequences: usize,
    pub steps_per_sequence: usize,
    /// Evaluate after every this many sequences (and always at 0 and the end).
    pub eval_every: usize,
    pub test_set_size: usize,
    pub seed: u64,
    pub t: usize,
    pub n: usize,
    pub optim: OptimConfig,
}

impl ExtensiveConfig {
    pub fn new(rule: FeatureName, seed: u64) -> ExtensiveConfig {
        ExtensiveConfig {
            rule,
            num_sequences: 2000,
            steps_per_sequence: 2,
            eval_every: 100,
            test_set_size: 100,
            seed,
            t: 5,
            n: 4,
            optim: OptimConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps_per_sequence == 0 {
            return Err(Error::Parameter("steps_per_sequence must be ≥ 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Parameter("eval_every must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One point of a learning curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub sequences_trained: usize,
    pub accuracy: f64,
}

/// Difficult-test accuracy as training progresses.
#[derive(Clone, Debug, PartialEq)]
pub struct LearningCurve {
    pub rule: FeatureName,
    pub seed: u64,
    pub test_set_size: usize,
    /// Strictly increasing in sequences_trained, starting at 0.
    pub points: Vec<CurvePoint>,
}

/// Trains one persistent model on easy sequences (rule feature increasing,
/// all others constant) and tracks accuracy on a frozen set of difficult
/// tests (all four other features as distractors).
pub fn run_extensive<S: Scalar>(config: &ExtensiveConfig) -> Result<LearningCurve> {
    config.validate()?;
    let easy = Condition::new(config.rule, &[], config.t, config.n);
    easy.validate()?;
    let difficult_distractors: Vec<FeatureName> =
        FeatureName::ALL.iter().copied().filter(|&f| f != config.rule).collect();
    let difficult = Condition::new(config.rule, &difficult_distractors, config.t, config.n);
    let eval: EvalSet<S> =
        EvalSet::generate(&difficult, config.test_set_size, config.seed ^ EVAL_SEED_TAG)?;

    let mut model: ModelParams<S> = ModelParams::init(config.seed ^ SOLVE_SEED_TAG);
    let mut state = TrainState::new(&config.optim);
    let mut points =
        vec![CurvePoint { sequences_trained: 0, accuracy: evaluate_accuracy(&model, &eval)? }];

    for i in 0..config.num_sequences {
        let spec = easy.spec_for(config.seed, i);
        let sequence = generate_test(&spec)?;
        let tiles: Vec<Canvas<S>> =
            sequence.tiles.iter().map(render_tile).collect::<Result<_>>()?;
        for _ in 0..config.steps_per_sequence {
            train_step(&mut model, &mut state, &tiles)?;
        }
        let trained = i + 1;
        if trained % config.eval_every == 0 || trained == config.num_sequences {
            points.push(CurvePoint {
                sequences_trained: trained,
                accuracy: evaluate_accuracy(&model, &eval)?,
            });
        }
    }

    Ok(LearningCurve {
        rule: config.rule,
        seed: config.seed,
        test_set_size: config.test_set_size,
        points,
    })
}
