//! Soft and solid staircase functions over a finite level set.

use crate::error::{Error, Result};
use crate::grad::Real;

/// Temperature at or below which the soft staircase is replaced by the solid one.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Strictly increasing set of quantizer output levels.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    levels: Vec<f64>,
}

impl LevelSet {
    /// The canonical set `s_i = i - L/2 + 1/2`, `i = 0..L`, for even `L`.
    pub fn canonical(count: usize) -> Result<Self> {
        if count < 2 || !count.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "level count must be a positive even integer, got {count}"
            )));
        }
        let half = count as f64 / 2.0;
        Ok(LevelSet {
            levels: (0..count).map(|i| i as f64 - half + 0.5).collect(),
        })
    }

    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("empty level set".into()));
        }
        if levels.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("level set must be finite".into()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "levels must be strictly increasing".into(),
            ));
        }
        Ok(LevelSet { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.levels[0]
    }

    pub fn max(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    pub fn max_abs(&self) -> f64 {
        self.min().abs().max(self.max().abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaircaseConfig {
    pub levels: LevelSet,
    pub temperature: f64,
    pub epsilon: f64,
}

impl StaircaseConfig {
    pub fn new(levels: LevelSet, temperature: f64) -> Self {
        StaircaseConfig {
            levels,
            temperature,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn is_solid(&self) -> bool {
        self.temperature <= self.epsilon
    }
}

/// Nearest level to `r`; an exact tie goes to the lower level.
pub fn solid_staircase(r: f64, levels: &LevelSet) -> f64 {
    if r.is_nan() {
        return r;
    }
    let mut best = levels.levels[0];
    let mut best_dist = (r - best).abs();
    for &s in &levels.levels[1..] {
        let d = (r - s).abs();
        if d < best_dist {
            best = s;
            best_dist = d;
        }
    }
    best
}

/// Gaussian-kernel weighted mean of the levels, or the solid staircase when
/// the temperature is at or below `epsilon`.
///
/// The largest exponent is subtracted before exponentiation, and the mean is
/// formed as an offset from the level carrying that exponent. Both shifts are
/// constants, which leaves the value and its derivative unchanged. The offset
/// keeps rounding from pushing the result past the anchor level, which would
/// break monotonicity and the level range by an ulp.
pub fn soft_staircase<S: Real>(r: S, cfg: &StaircaseConfig) -> S {
    if cfg.is_solid() {
        return r.lift(solid_staircase(r.value(), &cfg.levels));
    }
    let coef = -0.5 / cfg.temperature;
    let rv = r.value();
    let (shift, anchor) = cfg
        .levels
        .levels
        .iter()
        .map(|&s| (coef * (rv - s) * (rv - s), s))
        .fold((f64::NEG_INFINITY, f64::NAN), |best, e| if e.0 > best.0 { e } else { best });
    // NaN input: both stay NaN so the value and its partials propagate NaN
    let (shift, anchor) = if rv.is_nan() { (f64::NAN, f64::NAN) } else { (shift, anchor) };
    let mut terms = cfg.levels.levels.iter().map(|&s| {
        let w = r.offset(-s).square().scale(coef).offset(-shift).exp();
        (w.scale(s - anchor), w)
    });
    let (mut num, mut den) = terms.next().expect("non-empty level set");
    for (ws, w) in terms {
        num = num + ws;
        den = den + w;
    }
    (num / den).offset(anchor)
}
