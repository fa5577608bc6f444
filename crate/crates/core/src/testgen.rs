//! Sequential matrix-test generation: t tiles following one monotone feature
//! rule, plus n answer options of which exactly one continues the rule.

use crate::error::{Error, Result};
use crate::raster::ShapeKind;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The five tile features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureName {
    Color,
    Positions,
    Size,
    Shape,
    Number,
}

impl FeatureName {
    /// Canonical feature order; generation draws in this order.
    pub const ALL: [FeatureName; 5] =
        [FeatureName::Color, FeatureName::Positions, FeatureName::Size, FeatureName::Shape, FeatureName::Number];

    pub fn name(self) -> &'static str {
        match self {
            FeatureName::Color => "color",
            FeatureName::Positions => "positions",
            FeatureName::Size => "size",
            FeatureName::Shape => "shape",
            FeatureName::Number => "number",
        }
    }

    pub fn from_name(name: &str) -> Option<FeatureName> {
        Self::ALL.iter().copied().find(|f| f.name() == name)
    }

    /// Position in the canonical `ALL` order.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&f| f == self).unwrap()
    }
}

/// What a feature does over the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureRole {
    /// Held at its initial random draw across all tiles and options.
    Constant,
    /// Redrawn i.i.d. uniformly per tile and per option.
    Distractor,
    /// Traverses its ordered value set monotonically.
    Rule,
}

/// Direction of the rule traversal; Increasing matches the reference setup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RuleDirection {
    #[default]
    Increasing,
    Decreasing,
}

/// Role assignment for all five features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureRoles {
    roles: [FeatureRole; 5],
}

impl FeatureRoles {
    /// One rule feature, the given distractors, everything else constant.
    pub fn new(rule: FeatureName, distractors: &[FeatureName]) -> FeatureRoles {
        let mut roles = [FeatureRole::Constant; 5];
        for d in distractors {
            roles[d.index()] = FeatureRole::Distractor;
        }
        roles[rule.index()] = FeatureRole::Rule;
        FeatureRoles { roles }
    }

    pub fn get(&self, feature: FeatureName) -> FeatureRole {
        self.roles[feature.index()]
    }

    /// The unique rule feature, if exactly one is assigned.
    pub fn rule_feature(&self) -> Option<FeatureName> {
        let mut rule = None;
        for f in FeatureName::ALL {
            if self.get(f) == FeatureRole::Rule {
                if rule.is_some() {
                    return None;
                }
                rule = Some(f);
            }
        }
        rule
    }

    pub fn distractors(&self) -> Vec<FeatureName> {
        FeatureName::ALL.iter().copied().filter(|&f| self.get(f) == FeatureRole::Distractor).collect()
    }
}

/// Full specification of one generated test.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqSpec {
    /// Number of sequence tiles shown.
    pub t: usize,
    /// Number of answer options.
    pub n: usize,
    pub roles: FeatureRoles,
    pub seed: u64,
    pub direction: RuleDirection,
}

impl SeqSpec {
    pub fn new(t: usize, n: usize, roles: FeatureRoles, seed: u64) -> SeqSpec {
        SeqSpec { t, n, roles, seed, direction: RuleDirection::Increasing }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return Err(Error::Parameter(format!("t = {} but at least 2 tiles are required", self.t)));
        }
        if self.n < 2 {
            return Err(Error::Parameter(format!("n = {} but at least 2 options are required", self.n)));
        }
        let rule = self
            .roles
            .rule_feature()
            .ok_or_else(|| Error::Parameter("exactly one feature must have the Rule role".into()))?;
        match rule {
            FeatureName::Positions => {
                Err(Error::Parameter("positions cannot be the rule feature (permutations are unordered)".into()))
            }
            FeatureName::Shape => {
                Err(Error::Parameter("shape cannot be the rule feature (only 5 values)".into()))
            }
            FeatureName::Number if self.t + 1 > 9 => Err(Error::Parameter(format!(
                "number rule needs t+1 ≤ 9 values, got t = {}",
                self.t
            ))),
            _ => Ok(()),
        }
    }
}

/// Symbolic description of one tile.
#[derive(Clone, Debug, PartialEq)]
pub struct TileDescriptor {
    /// Fill intensity, from the color value set {i/(t+1)}.
    pub color: f64,
    /// Permutation of 0..8; the first `number` entries receive shapes.
    pub positions: [u8; 9],
    /// Circumscribed-circle diameter from the size value set.
    pub size: f64,
    pub shape: ShapeKind,
    /// Shape count, 1..9.
    pub number: u8,
}

/// A feature's value in one descriptor, for comparisons.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FeatureValue {
    Color(f64),
    Positions([u8; 9]),
    Size(f64),
    Shape(ShapeKind),
    Number(u8),
}

impl TileDescriptor {
    pub fn value_of(&self, feature: FeatureName) -> FeatureValue {
        match feature {
            FeatureName::Color => FeatureValue::Color(self.color),
            FeatureName::Positions => FeatureValue::Positions(self.positions),
            FeatureName::Size => FeatureValue::Size(self.size),
            FeatureName::Shape => FeatureValue::Shape(self.shape),
            FeatureName::Number => FeatureValue::Number(self.number),
        }
    }
}

/// A complete generated test.
#[derive(Clone, Debug, PartialEq)]
pub struct RpmTest {
    pub spec: SeqSpec,
    pub tiles: Vec<TileDescriptor>,
    pub options: Vec<TileDescriptor>,
    /// Index of the correct option; None after a hide-answer export.
    pub correct: Option<usize>,
}

/// The ordered value set of a feature, where one exists.
#[derive(Clone, Debug, PartialEq)]
pub enum ValueSet {
    Color(Vec<f64>),
    Size(Vec<f64>),
    Number(Vec<u8>),
    Shape(Vec<ShapeKind>),
    /// Permutations of 0..8 are sampled, never enumerated.
    Positions,
}

/// Colors {(i+1)/(t+1)} for i = 0..t.
pub fn color_values(t: usize) -> Vec<f64> {
    (0..=t).map(|i| color_value(i, t)).collect()
}

pub(crate) fn color_value(index: usize, t: usize) -> f64 {
    (index as f64 + 1.0) / (t as f64 + 1.0)
}

/// t+1 diameters linearly spaced over [15,30].
pub fn size_values(t: usize) -> Vec<f64> {
    (0..=t).map(|i| size_value(i, t)).collect()
}

pub(crate) fn size_value(index: usize, t: usize) -> f64 {
    15.0 + index as f64 * (15.0 / t as f64)
}

/// Shape counts 1..9.
pub fn number_values() -> Vec<u8> {
    (1..=9).collect()
}

/// Value set for a feature at sequence length t.
pub fn possible_values(feature: FeatureName, t: usize) -> Result<ValueSet> {
    if t < 2 {
        return Err(Error::Parameter(format!("t = {t} but at least 2 is required")));
    }
    Ok(match feature {
        FeatureName::Color => ValueSet::Color(color_values(t)),
        FeatureName::Size => ValueSet::Size(size_values(t)),
        FeatureName::Number => ValueSet::Number(number_values()),
        FeatureName::Shape => ValueSet::Shape(ShapeKind::ALL.to_vec()),
        FeatureName::Positions => ValueSet::Positions,
    })
}

/// Monotone-increase rule: index after `step` steps from `value_index`.
///
/// `set_len` is the cardinality of the ordered value set (t+1 for color and
/// size, 9 for number).
pub fn apply_rule(value_index: usize, step: usize, set_len: usize) -> Result<usize> {
    let idx = value_index + step;
    if idx >= set_len {
        return Err(Error::Generation(format!(
            "rule overflows its value set: index {value_index} + step {step} ≥ {set_len}"
        )));
    }
    Ok(idx)
}

/// Cardinality of a feature's ordered value set, where the rule is legal.
fn rule_set_len(feature: FeatureName, t: usize) -> usize {
    match feature {
        FeatureName::Color | FeatureName::Size => t + 1,
        FeatureName::Number => 9,
        _ => unreachable!("validated: only color/size/number can be the rule"),
    }
}

fn value_at(feature: FeatureName, index: usize, t: usize) -> FeatureValue {
    match feature {
        FeatureName::Color => FeatureValue::Color(color_value(index, t)),
        FeatureName::Size => FeatureValue::Size(size_value(index, t)),
        FeatureName::Number => FeatureValue::Number(index as u8 + 1),
        _ => unreachable!(),
    }
}

/// Index of a rule-feature value inside its ordered set, by exact equality.
fn index_of(feature: FeatureName, value: FeatureValue, t: usize) -> Option<usize> {
    (0..rule_set_len(feature, t)).find(|&i| value_at(feature, i, t) == value)
}

fn draw_permutation(rng: &mut ChaCha8Rng) -> [u8; 9] {
    let mut perm = [0u8, 1, 2, 3, 4, 5, 6, 7, 8];
    perm.shuffle(rng);
    perm
}

fn draw_value(feature: FeatureName, t: usize, rng: &mut ChaCha8Rng) -> FeatureValue {
    match feature {
        FeatureName::Color => FeatureValue::Color(color_value(rng.gen_range(0..=t), t)),
        FeatureName::Positions => FeatureValue::Positions(draw_permutation(rng)),
        FeatureName::Size => FeatureValue::Size(size_value(rng.gen_range(0..=t), t)),
        FeatureName::Shape => FeatureValue::Shape(ShapeKind::ALL[rng.gen_range(0..5)]),
        FeatureName::Number => FeatureValue::Number(rng.gen_range(1..=9)),
    }
}

fn set_value(desc: &mut TileDescriptor, value: FeatureValue) {
    match value {
        FeatureValue::Color(v) => desc.color = v,
        FeatureValue::Positions(v) => desc.positions = v,
        FeatureValue::Size(v) => desc.size = v,
        FeatureValue::Shape(v) => desc.shape = v,
        FeatureValue::Number(v) => desc.number = v,
    }
}

/// Rule start index and per-step index delta for the chosen direction.
fn rule_start(feature: FeatureName, t: usize, direction: RuleDirection, rng: &mut ChaCha8Rng) -> (usize, isize) {
    let len = rule_set_len(feature, t);
    match direction {
        // Color/size sets have exactly t+1 values, so only index 0 leaves
        // room for t increasing steps; number (9 values) starts anywhere
        // with enough headroom.
        RuleDirection::Increasing => {
            let start = if len == t + 1 { 0 } else { rng.gen_range(0..=len - 1 - t) };
            (start, 1)
        }
        RuleDirection::Decreasing => {
            let start = if len == t + 1 { t } else { rng.gen_range(t..len) };
            (start, -1)
        }
    }
}

/// Generates one test from its specification.
///
/// All randomness comes from a ChaCha8 stream seeded with `spec.seed`; the
/// draw order is fixed (initial values in canonical feature order, then tiles
/// in order, then the correct option, then wrong options, then the correct
/// option's position), so generation is reproducible bit-for-bit.
pub fn generate_test(spec: &SeqSpec) -> Result<RpmTest> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rule = spec.roles.rule_feature().expect("validated");
    let set_len = rule_set_len(rule, spec.t);

    let mut constants: Vec<(FeatureName, FeatureValue)> = Vec::new();
    let mut rule_start_idx = 0usize;
    let mut rule_dir = 1isize;
    for feature in FeatureName::ALL {
        match spec.roles.get(feature) {
            FeatureRole::Rule => {
                let (start, dir) = rule_start(feature, spec.t, spec.direction, &mut rng);
                rule_start_idx = start;
                rule_dir = dir;
            }
            FeatureRole::Constant => constants.push((feature, draw_value(feature, spec.t, &mut rng))),
            FeatureRole::Distractor => {}
        }
    }

    let rule_index_at = |step: usize| -> Result<usize> {
        if rule_dir > 0 {
            apply_rule(rule_start_idx, step, set_len)
        } else if step > rule_start_idx {
            Err(Error::Generation(format!(
                "rule underflows its value set: index {rule_start_idx} − step {step}"
            )))
        } else {
            Ok(rule_start_idx - step)
        }
    };

    let build = |step: usize, rng: &mut ChaCha8Rng| -> Result<TileDescriptor> {
        let mut desc = TileDescriptor {
            color: color_value(0, spec.t),
            positions: [0, 1, 2, 3, 4, 5, 6, 7, 8],
            size: size_value(0, spec.t),
            shape: ShapeKind::Triangle,
            number: 1,
        };
        for feature in FeatureName::ALL {
            match spec.roles.get(feature) {
                FeatureRole::Rule => set_value(&mut desc, value_at(feature, rule_index_at(step)?, spec.t)),
                FeatureRole::Constant => {
                    let value = constants.iter().find(|(f, _)| *f == feature).expect("drawn above").1;
                    set_value(&mut desc, value);
                }
                FeatureRole::Distractor => set_value(&mut desc, draw_value(feature, spec.t, rng)),
            }
        }
        Ok(desc)
    };

    let tiles: Vec<TileDescriptor> = (0..spec.t).map(|j| build(j, &mut rng)).collect::<Result<_>>()?;
    let correct_desc = build(spec.t, &mut rng)?;
    let correct_rule_idx = rule_index_at(spec.t)?;

    let mut wrongs: Vec<TileDescriptor> = Vec::with_capacity(spec.n - 1);
    for _ in 0..spec.n - 1 {
        let mut desc = build(spec.t, &mut rng)?;
        // Uniform over the value set minus the correct value.
        let mut idx = rng.gen_range(0..set_len - 1);
        if idx >= correct_rule_idx {
            idx += 1;
        }
        set_value(&mut desc, value_at(rule, idx, spec.t));
        wrongs.push(desc);
    }

    let correct_pos = rng.gen_range(0..spec.n);
    let mut options = wrongs;
    options.insert(correct_pos, correct_desc);

    Ok(RpmTest { spec: spec.clone(), tiles, options, correct: Some(correct_pos) })
}

/// Checks every structural invariant of a generated test; returns a
/// description of the first violation found.
pub fn verify_test(test: &RpmTest) -> std::result::Result<(), String> {
    let spec = &test.spec;
    spec.validate().map_err(|e| e.to_string())?;
    if test.tiles.len() != spec.t {
        return Err(format!("expected {} tiles, found {}", spec.t, test.tiles.len()));
    }
    if test.options.len() != spec.n {
        return Err(format!("expected {} options, found {}", spec.n, test.options.len()));
    }
    let correct = test.correct.ok_or("correct index is hidden")?;
    if correct >= spec.n {
        return Err(format!("correct index {correct} out of range"));
    }

    let rule = spec.roles.rule_feature().expect("validated");
    let set_len = rule_set_len(rule, spec.t);
    let t = spec.t;
    let dir: isize = match spec.direction {
        RuleDirection::Increasing => 1,
        RuleDirection::Decreasing => -1,
    };

    let start = index_of(rule, test.tiles[0].value_of(rule), t)
        .ok_or_else(|| format!("tile 0 {} value outside its value set", rule.name()))?;
    for (j, tile) in test.tiles.iter().enumerate() {
        let want = start as isize + dir * j as isize;
        if want < 0 || want >= set_len as isize {
            return Err(format!("rule index {want} out of range at tile {j}"));
        }
        if tile.value_of(rule) != value_at(rule, want as usize, t) {
            return Err(format!("tile {j} breaks the {} rule traversal", rule.name()));
        }
    }
    let correct_idx = start as isize + dir * t as isize;
    if correct_idx < 0 || correct_idx >= set_len as isize {
        return Err(format!("correct rule index {correct_idx} out of range"));
    }
    let correct_value = value_at(rule, correct_idx as usize, t);
    if test.options[correct].value_of(rule) != correct_value {
        return Err("correct option does not continue the rule".into());
    }
    for (k, option) in test.options.iter().enumerate() {
        if k != correct && option.value_of(rule) == correct_value {
            return Err(format!("wrong option {k} shares the correct rule value"));
        }
        if k != correct && index_of(rule, option.value_of(rule), t).is_none() {
            return Err(format!("wrong option {k} has a rule value outside the set"));
        }
    }

    for feature in FeatureName::ALL {
        if spec.roles.get(feature) != FeatureRole::Constant {
            continue;
        }
        let reference = test.tiles[0].value_of(feature);
        for (j, desc) in test.tiles.iter().chain(test.options.iter()).enumerate() {
            if desc.value_of(feature) != reference {
                return Err(format!("constant feature {} varies at descriptor {j}", feature.name()));
            }
        }
    }

    for (j, desc) in test.tiles.iter().chain(test.options.iter()).enumerate() {
        verify_descriptor(desc, t).map_err(|e| format!("descriptor {j}: {e}"))?;
    }
    Ok(())
}

fn verify_descriptor(desc: &TileDescriptor, t: usize) -> std::result::Result<(), String> {
    if !color_values(t).contains(&desc.color) {
        return Err(format!("color {} outside its value set", desc.color));
    }
    if !size_values(t).contains(&desc.size) {
        return Err(format!("size {} outside its value set", desc.size));
    }
    if desc.number < 1 || desc.number > 9 {
        return Err(format!("number {} outside 1..9", desc.number));
    }
    let mut seen = [false; 9];
    for &p in &desc.positions {
        if p > 8 || seen[p as usize] {
            return Err(format!("positions {:?} is not a permutation", desc.positions));
        }
        seen[p as usize] = true;
    }
    Ok(())
}
