//! Built-in diagnostics: gradient checks, generator invariants, loss closed
//! forms, and a short deterministic solve trace.
//!
//! Everything here is seeded and reproducible: two runs with the same seed
//! produce identical report lines and byte-identical trace CSVs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::Result;
use crate::io;
use crate::model::{ModelParams, TapedModel, PARAMS};
use crate::optim::{loss_bound, loss_dis, loss_pred};
use crate::raster::{Canvas, CANVAS_SIZE};
use crate::solver::{solve_naive, SolveConfig, SOLVE_SEED_TAG};
use crate::experiments::condition_matrix;
use crate::testgen::{generate_test, verify_test, FeatureName};

/// Moves every bias off zero to a seeded value in ±[5e-3, 5e-2). A freshly
/// initialized model has all-zero biases, which parks the background conv
/// pre-activations exactly on the relu kink; finite differences are only
/// meaningful at a generic parameter point.
pub fn nudge_biases<S: crate::scalar::Scalar>(model: &mut ModelParams<S>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (meta, tensor) in PARAMS.iter().zip(model.tensors_mut()) {
        if meta.name.ends_with(".b") {
            for v in tensor.values_mut() {
                let mag = rng.gen_range(5e-3..5e-2);
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                *v = S::from_f64(sign * mag);
            }
        }
    }
}

/// A canvas of i.i.d. uniform [0,1) pixels. Random inputs keep the network's
/// pre-activations generic, unlike tile backgrounds whose constant zero piles
/// thousands of units onto a single value.
pub fn noise_canvas(seed: u64) -> Canvas<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canvas = Canvas::new();
    for row in 0..CANVAS_SIZE {
        for col in 0..CANVAS_SIZE {
            canvas.set(row, col, rng.gen_range(0.0..1.0));
        }
    }
    canvas
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: String,
}

/// Checks backward gradients of the composed objective T(Z(x)) against
/// central finite differences in f64, on a random input canvas.
///
/// Coordinates are drawn uniformly over the parameter tensors, so encoder and
/// predictor are both exercised. A probe whose endpoints land on different
/// smooth branches of the piecewise network (a relu flip or a pooling argmax
/// switch) measures nothing about the subgradient and is redrawn; the redraw
/// count is reported as `skipped`.
pub fn grad_check(seed: u64, coords: usize, h: f64) -> Result<GradCheckReport> {
    let model: ModelParams<f64> = ModelParams::init(seed);
    let canvas = noise_canvas(seed ^ 0x6e6f697365);
    let canvas_ref = [&canvas];

    let eval = |m: &ModelParams<f64>, want_grads: bool| -> Result<(f64, Vec<u32>, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let bound = TapedModel::bind(m, &mut tape);
        let z = bound.encode_batch(&mut tape, &canvas_ref)?;
        let t = bound.predict_batch(&mut tape, z)?;
        let value = tape.value(t).item();
        let sig = tape.kink_signature();
        if !want_grads {
            return Ok((value, sig, vec![]));
        }
        tape.backward(t)?;
        let grads = (0..PARAMS.len())
            .map(|i| {
                tape.grad(bound.param(i))
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; m.tensors()[i].len()])
            })
            .collect();
        Ok((value, sig, grads))
    };

    let (_, _, grads) = eval(&model, true)?;
    let scale = grads
        .iter()
        .flat_map(|g| g.iter())
        .fold(0.0f64, |acc, &g| acc.max(g.abs()));

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636f6f7264);
    let mut max_rel: f64 = 0.0;
    let mut worst = String::from("none");
    let mut checked = 0;
    let mut skipped = 0;
    while checked < coords {
        let ti = rng.gen_range(0..PARAMS.len());
        let j = rng.gen_range(0..model.tensors()[ti].len());

        let mut plus = model.clone();
        plus.tensors_mut()[ti].values_mut()[j] += h;
        let mut minus = model.clone();
        minus.tensors_mut()[ti].values_mut()[j] -= h;
        let (fp, sp, _) = eval(&plus, false)?;
        let (fm, sm, _) = eval(&minus, false)?;
        if sp != sm {
            skipped += 1;
            if skipped > coords * 20 {
                return Err(crate::error::Error::Usage(
                    "gradient check cannot find branch-stable coordinates".into(),
                ));
            }
            continue;
        }

        let fd = (fp - fm) / (2.0 * h);
        let ad = grads[ti][j];
        let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6 * scale);
        if rel > max_rel {
            max_rel = rel;
            worst = format!("{}[{}] (ad {:.6e}, fd {:.6e})", PARAMS[ti].name, j, ad, fd);
        }
        checked += 1;
    }

    Ok(GradCheckReport { checked, skipped, max_rel, worst })
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub passed: bool,
    pub lines: Vec<String>,
}

fn check(lines: &mut Vec<String>, passed: &mut bool, ok: bool, line: String) {
    let prefix = if ok { "ok" } else { "FAIL" };
    lines.push(format!("{prefix}: {line}"));
    *passed &= ok;
}

/// Runs the full diagnostic suite, writing `trace.csv` into `out_dir`.
/// Report lines and the trace file depend only on `seed`.
pub fn run_selftest(seed: u64, out_dir: &Path) -> Result<SelftestReport> {
    let mut lines = Vec::new();
    let mut passed = true;

    let grad = grad_check(seed, 12, 1e-3)?;
    check(
        &mut lines,
        &mut passed,
        grad.max_rel < 1e-6,
        format!(
            "composed gradient check: max rel {:.3e} over {} coordinates ({} redrawn at branch boundaries)",
            grad.max_rel, grad.checked, grad.skipped
        ),
    );

    let closed_forms_ok = {
        let dis = loss_dis(&[0.0f64, 0.2], 0.2)?;
        let bound = loss_bound(&[1.1f64]);
        let pred = loss_pred(&[0.3f64, 0.7], &[0.7])?;
        (dis - (-1.0f64).exp()).abs() < 1e-6 && (bound - 0.21).abs() < 1e-6 && pred == 0.0
    };
    check(&mut lines, &mut passed, closed_forms_ok, "loss closed forms (e^-1, 0.21, exact zero)".into());

    let mut generated = 0usize;
    let mut bad = Vec::new();
    for rule in [FeatureName::Color, FeatureName::Size] {
        for (ci, condition) in condition_matrix(rule, 5, 4)?.iter().enumerate() {
            for k in 0..6 {
                let spec = condition.spec_for(seed.wrapping_add(1000 * ci as u64), k);
                let test = generate_test(&spec)?;
                if let Err(msg) = verify_test(&test) {
                    bad.push(format!("{}/{ci}/{k}: {msg}", rule.name()));
                }
                generated += 1;
            }
        }
    }
    check(
        &mut lines,
        &mut passed,
        bad.is_empty(),
        format!("generator invariants: {}/{generated} tests verified{}", generated - bad.len(), {
            if bad.is_empty() { String::new() } else { format!(" ({})", bad.join("; ")) }
        }),
    );

    let spec = crate::testgen::SeqSpec::new(
        5,
        4,
        crate::testgen::FeatureRoles::new(FeatureName::Color, &[]),
        seed,
    );
    let test = generate_test(&spec)?;
    let mut config = SolveConfig::new(seed ^ SOLVE_SEED_TAG);
    config.steps = 20;
    config.record_traces = true;
    let result = solve_naive::<f32>(&test, &config)?;
    io::write_trace_csv(&out_dir.join("trace.csv"), &result)?;
    let verdict = match result.correct {
        Some(true) => "correct",
        Some(false) => "incorrect",
        None => "unknown",
    };
    check(
        &mut lines,
        &mut passed,
        !result.is_failed(),
        format!(
            "short solve trace: 20 steps, chose option {} ({verdict}), {} trace rows",
            result.choice,
            result.option_errors.len()
        ),
    );

    Ok(SelftestReport { passed, lines })
}
