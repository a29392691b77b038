//! Perturbed pentagon family used as plate outlines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub type Point = [f64; 2];

/// Allowed bounding-box extent (width and height) of a plate, in meters.
pub const PLATE_EXTENT: (f64, f64) = (0.30, 0.60);

/// Number of geometries in the full-scale family.
pub const FULL_GEOMETRY_COUNT: u32 = 1024;

/// Counter-clockwise pentagon; edge `Ei` joins vertex `i-1` and vertex `i mod 5`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: [Point; 5],
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationConfig {
    /// Unperturbed outline.
    pub base: [Point; 5],
    /// Half-width of the uniform jitter applied independently to each coordinate.
    pub jitter: f64,
    /// Rejection-resampling budget.
    pub max_attempts: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            base: [[0.0, 0.0], [0.45, 0.0], [0.45, 0.30], [0.225, 0.45], [0.0, 0.35]],
            jitter: 0.05,
            max_attempts: 64,
        }
    }
}

impl Polygon {
    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// `(min, max)` corners of the axis-aligned bounding box.
    pub fn bounding_box(&self) -> (Point, Point) {
        bounding_box(&self.vertices)
    }

    /// Segment `(start, end)` of edge `k` (0-based, so `k = 0` is E1).
    pub fn edge(&self, k: usize) -> (Point, Point) {
        (self.vertices[k], self.vertices[(k + 1) % 5])
    }

    pub fn validate(&self) -> Result<()> {
        if self.signed_area() <= 0.0 {
            return Err(Error::Geometry(format!(
                "polygon {} is not counter-clockwise",
                self.index
            )));
        }
        if !is_simple(&self.vertices) {
            return Err(Error::Geometry(format!("polygon {} self-intersects", self.index)));
        }
        let (lo, hi) = self.bounding_box();
        let (min_ext, max_ext) = PLATE_EXTENT;
        for (axis, ext) in [("width", hi[0] - lo[0]), ("height", hi[1] - lo[1])] {
            if !(min_ext..=max_ext).contains(&ext) {
                return Err(Error::Geometry(format!(
                    "polygon {} {axis} {ext:.4} m outside [{min_ext}, {max_ext}]",
                    self.index
                )));
            }
        }
        Ok(())
    }
}

/// Draw geometry `index` of the perturbed family.
///
/// The jitter stream is keyed by `(rng_seed, index)` so any member can be
/// generated without generating its predecessors.
pub fn sample_polygon(index: u32, rng_seed: u64, config: &PerturbationConfig) -> Result<Polygon> {
    if index == 0 {
        return Err(Error::config("geometry index starts at 1"));
    }
    if config.jitter < 0.0 || !config.jitter.is_finite() {
        return Err(Error::config("jitter must be a finite nonnegative length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(u64::from(index));
    let mut last_err = None;
    for _ in 0..config.max_attempts.max(1) {
        let mut vertices = config.base;
        if config.jitter > 0.0 {
            for v in &mut vertices {
                v[0] += rng.random_range(-config.jitter..=config.jitter);
                v[1] += rng.random_range(-config.jitter..=config.jitter);
            }
        }
        let poly = Polygon { vertices, index };
        match poly.validate() {
            Ok(()) => return Ok(poly),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::config(format!(
        "no valid pentagon for index {index} after {} attempts ({})",
        config.max_attempts,
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

pub(crate) fn signed_area(pts: &[Point]) -> f64 {
    let n = pts.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

pub(crate) fn bounding_box(pts: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in pts {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Point, b: Point, c: Point, d: f64| {
        d == 0.0
            && c[0] >= a[0].min(b[0])
            && c[0] <= a[0].max(b[0])
            && c[1] >= a[1].min(b[1])
            && c[1] <= a[1].max(b[1])
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// True when no two non-adjacent edges of the closed polyline touch.
pub(crate) fn is_simple(pts: &[Point]) -> bool {
    let n = pts.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]) {
                return false;
            }
        }
    }
    // Adjacent edges folding back onto each other.
    (0..n).all(|i| orient(pts[(i + n - 1) % n], pts[i], pts[(i + 1) % n]) != 0.0)
}
