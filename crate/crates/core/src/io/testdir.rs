//! On-disk test directories.
//!
//! Layout:
//!
//! ```text
//! <dir>/manifest.txt      key=value description of the test
//! <dir>/tiles/00.pgm ...  context tiles, one PGM per tile
//! <dir>/options/00.pgm... answer options
//! ```
//!
//! The manifest is authoritative: tile descriptors are stored in full, and
//! loading re-renders canvases from them, so a round trip reproduces the
//! original canvases bit for bit regardless of PGM quantization. The PGMs
//! exist for inspection and are integrity-checked against recorded sha256
//! sums; any edited byte fails the load with the offending file named.
//!
//! Exporting with `hide_answer` omits the correct option index and the
//! generation seed, so a loaded copy can be solved but not peeked at.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::{render_tile, Canvas, ShapeKind};
use crate::testgen::{FeatureName, FeatureRoles, RpmTest, RuleDirection, SeqSpec, TileDescriptor};

use super::manifest::sha256_hex;
use super::pgm::pgm_bytes;

const FORMAT: &str = "fluidrpm-test-1";

fn descriptor_line(d: &TileDescriptor) -> String {
    let positions: Vec<String> = d.positions.iter().map(u8::to_string).collect();
    format!(
        "color:{};positions:{};size:{};shape:{};number:{}",
        d.color,
        positions.join(","),
        d.size,
        d.shape.name(),
        d.number
    )
}

fn parse_descriptor(line: &str, path: &Path, key: &str) -> Result<TileDescriptor> {
    let bad = |what: &str| Error::corrupt(path, format!("{key}: {what}"));
    let mut fields = line.split(';');
    let mut field = |name: &str| -> Result<String> {
        let part = fields.next().ok_or_else(|| bad("missing field"))?;
        let (k, v) = part.split_once(':').ok_or_else(|| bad("field without ':'"))?;
        if k != name {
            return Err(bad(&format!("expected field {name}, found {k}")));
        }
        Ok(v.to_string())
    };

    let color: f64 = field("color")?.parse().map_err(|_| bad("bad color"))?;
    let positions_raw = field("positions")?;
    let mut positions = [0u8; 9];
    let parts: Vec<&str> = positions_raw.split(',').collect();
    if parts.len() != 9 {
        return Err(bad("positions needs 9 entries"));
    }
    for (slot, part) in positions.iter_mut().zip(parts) {
        *slot = part.parse().map_err(|_| bad("bad position entry"))?;
    }
    let mut seen = [false; 9];
    for &p in &positions {
        if p > 8 || seen[p as usize] {
            return Err(bad("positions must be a permutation of 0..8"));
        }
        seen[p as usize] = true;
    }
    let size: f64 = field("size")?.parse().map_err(|_| bad("bad size"))?;
    let shape_name = field("shape")?;
    let shape = ShapeKind::from_name(&shape_name).ok_or_else(|| bad("unknown shape"))?;
    let number: u8 = field("number")?.parse().map_err(|_| bad("bad number"))?;
    if fields.next().is_some() {
        return Err(bad("trailing fields"));
    }
    Ok(TileDescriptor { color, positions, size, shape, number })
}

fn tile_rel(i: usize) -> String {
    format!("tiles/{i:02}.pgm")
}

fn option_rel(k: usize) -> String {
    format!("options/{k:02}.pgm")
}

/// Writes `test` into `dir`, creating it. Deterministic: saving the same test
/// twice produces byte-identical files.
pub fn save_test(test: &RpmTest, dir: &Path, hide_answer: bool) -> Result<()> {
    fs::create_dir_all(dir.join("tiles")).map_err(|e| Error::io(dir, e))?;
    fs::create_dir_all(dir.join("options")).map_err(|e| Error::io(dir, e))?;

    let mut lines: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| lines.push((k.to_string(), v));

    put("format", FORMAT.into());
    put("t", test.spec.t.to_string());
    put("n", test.spec.n.to_string());
    if !hide_answer {
        put("seed", test.spec.seed.to_string());
    }
    let rule = test
        .spec
        .roles
        .rule_feature()
        .ok_or_else(|| Error::Generation("test has no rule feature".into()))?;
    put("rule", rule.name().into());
    let distractors: Vec<&str> =
        test.spec.roles.distractors().iter().map(|f| f.name()).collect();
    put("distractors", distractors.join(","));
    let direction = match test.spec.direction {
        RuleDirection::Increasing => "increasing",
        RuleDirection::Decreasing => "decreasing",
    };
    put("direction", direction.into());
    if !hide_answer {
        if let Some(correct) = test.correct {
            put("correct", correct.to_string());
        }
    }
    for (i, d) in test.tiles.iter().enumerate() {
        put(&format!("tile.{i}"), descriptor_line(d));
    }
    for (k, d) in test.options.iter().enumerate() {
        put(&format!("option.{k}"), descriptor_line(d));
    }

    let write_canvas = |rel: String, desc: &TileDescriptor| -> Result<(String, String)> {
        let canvas: Canvas<f64> = render_tile(desc)?;
        let bytes = pgm_bytes(&canvas);
        let path = dir.join(&rel);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        Ok((format!("file.{rel}"), sha256_hex(&bytes)))
    };
    let mut file_lines = Vec::new();
    for (i, d) in test.tiles.iter().enumerate() {
        file_lines.push(write_canvas(tile_rel(i), d)?);
    }
    for (k, d) in test.options.iter().enumerate() {
        file_lines.push(write_canvas(option_rel(k), d)?);
    }
    lines.extend(file_lines);

    let mut text = String::new();
    for (k, v) in &lines {
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    let manifest_path = dir.join("manifest.txt");
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

/// Reads a test directory back. Every recorded checksum is verified before
/// the manifest is trusted, and when the correct index is present the
/// descriptors are re-verified against the rule structure.
pub fn load_test(dir: &Path) -> Result<RpmTest> {
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;

    let mut pairs: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::corrupt(&manifest_path, format!("line {}: missing '='", lineno + 1))
        })?;
        if pairs.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::corrupt(&manifest_path, format!("duplicate key {k}")));
        }
    }

    fn take(
        pairs: &mut BTreeMap<String, String>,
        manifest_path: &Path,
        key: &str,
    ) -> Result<String> {
        pairs
            .remove(key)
            .ok_or_else(|| Error::corrupt(manifest_path, format!("missing key {key}")))
    }

    if take(&mut pairs, &manifest_path, "format")? != FORMAT {
        return Err(Error::corrupt(&manifest_path, "unsupported format"));
    }
    let parse_num = |key: &str, v: String| -> Result<u64> {
        v.parse().map_err(|_| Error::corrupt(&manifest_path, format!("bad value for {key}")))
    };
    let t = parse_num("t", take(&mut pairs, &manifest_path, "t")?)? as usize;
    let n = parse_num("n", take(&mut pairs, &manifest_path, "n")?)? as usize;
    let seed = match pairs.remove("seed") {
        Some(v) => parse_num("seed", v)?,
        None => 0,
    };
    let rule_name = take(&mut pairs, &manifest_path, "rule")?;
    let rule = FeatureName::from_name(&rule_name)
        .ok_or_else(|| Error::corrupt(&manifest_path, format!("unknown rule {rule_name}")))?;
    let distractors_raw = take(&mut pairs, &manifest_path, "distractors")?;
    let mut distractors = Vec::new();
    if !distractors_raw.is_empty() {
        for name in distractors_raw.split(',') {
            let f = FeatureName::from_name(name).ok_or_else(|| {
                Error::corrupt(&manifest_path, format!("unknown distractor {name}"))
            })?;
            if f == rule {
                return Err(Error::corrupt(&manifest_path, "rule feature listed as distractor"));
            }
            distractors.push(f);
        }
    }
    let direction = match take(&mut pairs, &manifest_path, "direction")?.as_str() {
        "increasing" => RuleDirection::Increasing,
        "decreasing" => RuleDirection::Decreasing,
        other => {
            return Err(Error::corrupt(&manifest_path, format!("unknown direction {other}")))
        }
    };
    let correct = match pairs.remove("correct") {
        Some(v) => Some(parse_num("correct", v)? as usize),
        None => None,
    };

    let mut spec = SeqSpec::new(t, n, FeatureRoles::new(rule, &distractors), seed);
    spec.direction = direction;
    spec.validate()?;

    let mut tiles = Vec::with_capacity(t);
    for i in 0..t {
        let key = format!("tile.{i}");
        let line = pairs
            .remove(&key)
            .ok_or_else(|| Error::corrupt(&manifest_path, format!("missing key {key}")))?;
        tiles.push(parse_descriptor(&line, &manifest_path, &key)?);
    }
    let mut options = Vec::with_capacity(n);
    for k in 0..n {
        let key = format!("option.{k}");
        let line = pairs
            .remove(&key)
            .ok_or_else(|| Error::corrupt(&manifest_path, format!("missing key {key}")))?;
        options.push(parse_descriptor(&line, &manifest_path, &key)?);
    }
    if let Some(c) = correct {
        if c >= n {
            return Err(Error::corrupt(&manifest_path, "correct index out of range"));
        }
    }

    let mut expected_files: Vec<String> = (0..t).map(tile_rel).collect();
    expected_files.extend((0..n).map(option_rel));
    for rel in &expected_files {
        let key = format!("file.{rel}");
        let recorded = pairs
            .remove(&key)
            .ok_or_else(|| Error::corrupt(&manifest_path, format!("missing key {key}")))?;
        let path = dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != recorded {
            return Err(Error::corrupt(&path, "checksum mismatch"));
        }
    }
    if let Some(key) = pairs.into_keys().next() {
        return Err(Error::corrupt(&manifest_path, format!("unknown key {key}")));
    }

    let test = RpmTest { spec, tiles, options, correct };
    if correct.is_some() {
        crate::testgen::verify_test(&test)
            .map_err(|msg| Error::corrupt(&manifest_path, format!("inconsistent test: {msg}")))?;
    }
    Ok(test)
}

/// Renders every tile and option of a loaded test to PGMs under `out`,
/// returning the relative paths written.
pub fn render_test_to(test: &RpmTest, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out.join("tiles")).map_err(|e| Error::io(out, e))?;
    fs::create_dir_all(out.join("options")).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for (i, d) in test.tiles.iter().enumerate() {
        let rel = PathBuf::from(tile_rel(i));
        let canvas: Canvas<f64> = render_tile(d)?;
        super::pgm::write_pgm(&out.join(&rel), &canvas)?;
        written.push(rel);
    }
    for (k, d) in test.options.iter().enumerate() {
        let rel = PathBuf::from(option_rel(k));
        let canvas: Canvas<f64> = render_tile(d)?;
        super::pgm::write_pgm(&out.join(&rel), &canvas)?;
        written.push(rel);
    }
    Ok(written)
}
