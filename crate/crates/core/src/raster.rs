//! Deterministic tile rendering: shapes on a 3×3 grid of a 100×100 canvas.
//!
//! Geometry is computed in f64 and only the final intensity is cast to the
//! working scalar, so f32 and f64 canvases share the same pixel mask.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::testgen::TileDescriptor;

/// Canvas edge length in pixels.
pub const CANVAS_SIZE: usize = 100;
/// Cell edge length; three cells of 33 leave the last row/column empty.
pub const CELL_SIZE: usize = 33;
/// Number of grid cells.
pub const GRID_CELLS: usize = 9;
/// Legal circumscribed-circle diameter range for shapes.
pub const DIAMETER_RANGE: (f64, f64) = (15.0, 30.0);

/// 100×100 grayscale intensity grid, row-major from the top-left.
#[derive(Clone, Debug, PartialEq)]
pub struct Canvas<S> {
    pixels: Vec<S>,
}

impl<S: Scalar> Canvas<S> {
    /// All-background (zero) canvas.
    pub fn new() -> Self {
        Canvas { pixels: vec![S::zero(); CANVAS_SIZE * CANVAS_SIZE] }
    }

    pub fn get(&self, row: usize, col: usize) -> S {
        self.pixels[row * CANVAS_SIZE + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: S) {
        self.pixels[row * CANVAS_SIZE + col] = value;
    }

    /// Row-major pixel slice.
    pub fn pixels(&self) -> &[S] {
        &self.pixels
    }

    /// Builds a canvas from a row-major pixel slice.
    pub fn from_pixels(pixels: Vec<S>) -> Result<Self> {
        if pixels.len() != CANVAS_SIZE * CANVAS_SIZE {
            return Err(Error::Shape(format!(
                "canvas needs {} pixels, got {}",
                CANVAS_SIZE * CANVAS_SIZE,
                pixels.len()
            )));
        }
        Ok(Canvas { pixels })
    }

    /// Writes a patch's nonzero pixels onto the canvas.
    pub fn stamp(&mut self, patch: &Patch) {
        for i in 0..patch.height {
            for j in 0..patch.width {
                let v = patch.pixels[i * patch.width + j];
                if v != 0.0 {
                    self.set(patch.row0 + i, patch.col0 + j, S::from_f64(v));
                }
            }
        }
    }
}

impl<S: Scalar> Default for Canvas<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// The five shape kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Triangle,
    Square,
    Pentagon,
    Star,
    Circle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] =
        [ShapeKind::Triangle, ShapeKind::Square, ShapeKind::Pentagon, ShapeKind::Star, ShapeKind::Circle];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Triangle => "triangle",
            ShapeKind::Square => "square",
            ShapeKind::Pentagon => "pentagon",
            ShapeKind::Star => "star",
            ShapeKind::Circle => "circle",
        }
    }

    pub fn from_name(name: &str) -> Option<ShapeKind> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// One shape assigned to one grid cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellPlacement {
    /// Grid index 0..8, row-major.
    pub cell: usize,
    pub shape: ShapeKind,
    /// Circumscribed-circle diameter in pixels, within [15,30].
    pub diameter: f64,
    /// Fill intensity in (0,1].
    pub intensity: f64,
}

/// Rendered shape footprint: a small f64 intensity grid plus its canvas anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major; 0.0 outside the shape, `intensity` inside.
    pub pixels: Vec<f64>,
}

/// Center of a grid cell in (x, y) pixel coordinates.
///
/// Pixel (row, col) samples at (col + 0.5, row + 0.5), which makes every
/// sample offset from a cell center an integer.
pub fn cell_center(cell: usize) -> Result<(f64, f64)> {
    if cell >= GRID_CELLS {
        return Err(Error::Parameter(format!("cell index {cell} out of 0..9")));
    }
    let row = cell / 3;
    let col = cell % 3;
    Ok((
        (col * CELL_SIZE) as f64 + CELL_SIZE as f64 / 2.0,
        (row * CELL_SIZE) as f64 + CELL_SIZE as f64 / 2.0,
    ))
}

/// Vertices of the shape's outline, or None for the circle.
fn outline(kind: ShapeKind, r: f64, cx: f64, cy: f64) -> Option<Vec<(f64, f64)>> {
    let regular = |sides: usize| -> Vec<(f64, f64)> {
        (0..sides)
            .map(|k| {
                let phi = std::f64::consts::TAU * k as f64 / sides as f64;
                (cx + r * phi.sin(), cy - r * phi.cos())
            })
            .collect()
    };
    match kind {
        ShapeKind::Triangle => Some(regular(3)),
        ShapeKind::Square => Some(regular(4)),
        ShapeKind::Pentagon => Some(regular(5)),
        ShapeKind::Star => Some(
            (0..10)
                .map(|k| {
                    let radius = if k % 2 == 0 { r } else { 0.4 * r };
                    let phi = std::f64::consts::TAU * k as f64 / 10.0;
                    (cx + radius * phi.sin(), cy - radius * phi.cos())
                })
                .collect(),
        ),
        ShapeKind::Circle => None,
    }
}

/// Even-odd ray-casting point-in-polygon test.
fn point_in_polygon(px: f64, py: f64, verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > py) != (yj > py) {
            let x_cross = xj + (py - yj) * (xi - xj) / (yi - yj);
            if px < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Rasterizes one shape about `center` (x, y in pixel coordinates).
///
/// Solid fill, pixel-center sampling, no anti-aliasing. Circles use an
/// inclusive distance test; polygons (one vertex pointing up; the star
/// alternates radii r and 0.4r) use the even-odd rule.
pub fn render_shape(kind: ShapeKind, diameter: f64, intensity: f64, center: (f64, f64)) -> Result<Patch> {
    if !(DIAMETER_RANGE.0..=DIAMETER_RANGE.1).contains(&diameter) {
        return Err(Error::Parameter(format!("diameter {diameter} outside [15,30]")));
    }
    if !(intensity > 0.0 && intensity <= 1.0) {
        return Err(Error::Parameter(format!("intensity {intensity} outside (0,1]")));
    }
    let (cx, cy) = center;
    let r = diameter / 2.0;

    let clamp = |v: f64| -> usize { v.max(0.0).min((CANVAS_SIZE - 1) as f64) as usize };
    let row0 = clamp((cy - r - 1.0).floor());
    let row1 = clamp((cy + r + 1.0).ceil());
    let col0 = clamp((cx - r - 1.0).floor());
    let col1 = clamp((cx + r + 1.0).ceil());
    let height = row1 - row0 + 1;
    let width = col1 - col0 + 1;

    let verts = outline(kind, r, cx, cy);
    let mut pixels = vec![0.0f64; height * width];
    for i in 0..height {
        let py = (row0 + i) as f64 + 0.5;
        for j in 0..width {
            let px = (col0 + j) as f64 + 0.5;
            let hit = match &verts {
                None => {
                    let dx = px - cx;
                    let dy = py - cy;
                    dx * dx + dy * dy <= r * r
                }
                Some(v) => point_in_polygon(px, py, v),
            };
            if hit {
                pixels[i * width + j] = intensity;
            }
        }
    }
    Ok(Patch { row0, col0, height, width, pixels })
}

/// Renders one placement into an existing canvas.
pub fn render_placement<S: Scalar>(canvas: &mut Canvas<S>, placement: &CellPlacement) -> Result<()> {
    let center = cell_center(placement.cell)?;
    let patch = render_shape(placement.shape, placement.diameter, placement.intensity, center)?;
    canvas.stamp(&patch);
    Ok(())
}

/// Renders a full tile: the first `number` cells of the positions permutation
/// each receive one shape; remaining cells stay background.
pub fn render_tile<S: Scalar>(desc: &TileDescriptor) -> Result<Canvas<S>> {
    if desc.number < 1 || desc.number as usize > GRID_CELLS {
        return Err(Error::Parameter(format!("number {} outside 1..9", desc.number)));
    }
    let mut seen = [false; GRID_CELLS];
    for &p in &desc.positions {
        if (p as usize) < GRID_CELLS {
            seen[p as usize] = true;
        }
    }
    if seen != [true; GRID_CELLS] {
        return Err(Error::Parameter(format!("positions {:?} is not a permutation of 0..8", desc.positions)));
    }

    let mut canvas = Canvas::new();
    for &cell in desc.positions.iter().take(desc.number as usize) {
        render_placement(
            &mut canvas,
            &CellPlacement {
                cell: cell as usize,
                shape: desc.shape,
                diameter: desc.size,
                intensity: desc.color,
            },
        )?;
    }
    Ok(canvas)
}
