//! Geometry of the responsive/signaling (RS) cell-cycle model.
//!
//! The cell cycle is the unit circle `[0, 1)`. Cells with phase in the
//! signaling region `S = [0, s)` exert feedback on cells in the responsive
//! region `R = [r, 1)`; a responsive cell moves at speed `1 + f(I)` where `I`
//! is the (weighted) fraction of the population currently in `S`, every other
//! cell moves at unit speed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Slack used when flooring `1 / (|R| + |S|)`, so that sweep values computed
/// as `1 / x` for integer `x` do not land one below the intended `M`.
const FLOOR_SLACK: f64 = 1e-9;

/// Number of interior sample points used to validate a response function.
const VALIDATION_GRID: usize = 1000;

/// Wraps a real number onto `[0, 1)`.
pub fn wrap_unit(x: f64) -> f64 {
    let y = x.rem_euclid(1.0);
    // rem_euclid of a tiny negative number rounds up to exactly 1.0
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// A position on the cell cycle, in cycle units.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Phase(f64);

impl Phase {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..1.0).contains(&value) {
            Ok(Phase(value))
        } else {
            Err(invalid(format!("phase {value} outside [0, 1)")))
        }
    }

    pub fn wrapped(value: f64) -> Self {
        Phase(wrap_unit(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn advance(self, dt: f64) -> Self {
        Phase::wrapped(self.0 + dt)
    }

    /// Circle distance `min(|x - y|, 1 - |x - y|)`.
    pub fn distance(self, other: Phase) -> f64 {
        circle_distance(self.0, other.0)
    }

    /// Arc length travelled going forward from `self` to `other`.
    pub fn forward_to(self, other: Phase) -> f64 {
        forward_gap(self.0, other.0)
    }
}

pub fn circle_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).abs().rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Forward arc from `from` to `to` on the circle, in `[0, 1)`.
pub fn forward_gap(from: f64, to: f64) -> f64 {
    wrap_unit(to - from)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// `[0, s)`
    Signaling,
    /// `[s, r)`
    Middle,
    /// `[r, 1)`
    Responsive,
}

/// Boundaries of the signaling region `[0, s)` and responsive region `[r, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionParams {
    s: f64,
    r: f64,
}

impl RegionParams {
    pub fn new(s: f64, r: f64) -> Result<Self> {
        if !(s.is_finite() && r.is_finite() && 0.0 < s && s < r && r < 1.0) {
            return Err(invalid(format!(
                "region boundaries must satisfy 0 < s < r < 1 (got s = {s}, r = {r})"
            )));
        }
        Ok(RegionParams { s, r })
    }

    /// Equal-sized regions with `|R| + |S| = 1 / inverse_width`.
    pub fn symmetric(inverse_width: f64) -> Result<Self> {
        let half = 0.5 / inverse_width;
        RegionParams::new(half, 1.0 - half)
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// `|S|`
    pub fn signaling_width(&self) -> f64 {
        self.s
    }

    /// `|R|`
    pub fn responsive_width(&self) -> f64 {
        1.0 - self.r
    }

    /// `|R| + |S|`, the range over which two cells can interact.
    pub fn interaction_width(&self) -> f64 {
        1.0 - self.r + self.s
    }

    /// `M = floor(1 / (|R| + |S|))`, the largest number of clusters that can
    /// coexist without any of them exerting feedback on another.
    pub fn max_isolated_clusters(&self) -> usize {
        let m = (1.0 / self.interaction_width() + FLOOR_SLACK).floor() as usize;
        m.max(1)
    }

    pub fn region_of(&self, x: f64) -> Region {
        if x < self.s {
            Region::Signaling
        } else if x < self.r {
            Region::Middle
        } else {
            Region::Responsive
        }
    }

    /// The next region boundary strictly ahead of `x` among `s`, `r` and `1`.
    pub fn next_boundary(&self, x: f64) -> f64 {
        match self.region_of(x) {
            Region::Signaling => self.s,
            Region::Middle => self.r,
            Region::Responsive => 1.0,
        }
    }
}

impl<'de> Deserialize<'de> for RegionParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            s: f64,
            r: f64,
        }
        let raw = Raw::deserialize(d)?;
        RegionParams::new(raw.s, raw.r).map_err(serde::de::Error::custom)
    }
}

/// Whether a response function speeds up or slows down responsive cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackSign {
    Positive,
    Negative,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseKind {
    /// `f(I) = gamma * I`
    Linear { gamma: f64 },
    /// `f(I) = gamma * I^h / (I^h + theta^h)`
    Hill { gamma: f64, theta: f64, h: f64 },
    /// Piecewise-linear interpolation through `(I, f(I))` points spanning
    /// `[0, 1]`, starting at `(0, 0)`.
    Tabulated { points: Vec<(f64, f64)> },
}

impl ResponseKind {
    fn value(&self, i: f64) -> f64 {
        match self {
            ResponseKind::Linear { gamma } => gamma * i,
            ResponseKind::Hill { gamma, theta, h } => {
                if i <= 0.0 {
                    0.0
                } else {
                    let ih = i.powf(*h);
                    gamma * ih / (ih + theta.powf(*h))
                }
            }
            ResponseKind::Tabulated { points } => {
                let k = points.partition_point(|&(x, _)| x <= i);
                if k == 0 {
                    return points[0].1;
                }
                if k == points.len() {
                    return points[k - 1].1;
                }
                let (x0, y0) = points[k - 1];
                let (x1, y1) = points[k];
                y0 + (y1 - y0) * (i - x0) / (x1 - x0)
            }
        }
    }
}

/// A validated response function together with the speed bounds it must
/// respect: `v_min <= 1 + f(I) <= v_max` for every `I` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFeedback", into = "RawFeedback")]
pub struct FeedbackSpec {
    kind: ResponseKind,
    rate_bounds: (f64, f64),
    sign: FeedbackSign,
}

#[derive(Serialize, Deserialize)]
struct RawFeedback {
    #[serde(flatten)]
    kind: ResponseKind,
    #[serde(default = "FeedbackSpec::default_rate_bounds")]
    rate_bounds: (f64, f64),
}

impl TryFrom<RawFeedback> for FeedbackSpec {
    type Error = Error;
    fn try_from(raw: RawFeedback) -> Result<Self> {
        FeedbackSpec::with_bounds(raw.kind, raw.rate_bounds)
    }
}

impl From<FeedbackSpec> for RawFeedback {
    fn from(f: FeedbackSpec) -> Self {
        RawFeedback {
            kind: f.kind,
            rate_bounds: f.rate_bounds,
        }
    }
}

impl FeedbackSpec {
    pub const DEFAULT_RATE_BOUNDS: (f64, f64) = (0.05, 20.0);

    fn default_rate_bounds() -> (f64, f64) {
        Self::DEFAULT_RATE_BOUNDS
    }

    pub fn new(kind: ResponseKind) -> Result<Self> {
        Self::with_bounds(kind, Self::DEFAULT_RATE_BOUNDS)
    }

    pub fn linear(gamma: f64) -> Result<Self> {
        Self::new(ResponseKind::Linear { gamma })
    }

    pub fn hill(gamma: f64, theta: f64, h: f64) -> Result<Self> {
        Self::new(ResponseKind::Hill { gamma, theta, h })
    }

    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(ResponseKind::Tabulated { points })
    }

    /// No feedback at all, `f = 0`.
    pub fn none() -> Self {
        Self::linear(0.0).expect("zero feedback is always valid")
    }

    /// Saturating response that rises linearly to `value` at `i` and stays
    /// there. Useful when only `f(1/k)` matters, as for `k` equal clusters.
    pub fn saturating_at(i: f64, value: f64) -> Result<Self> {
        if !(0.0 < i && i < 1.0) {
            return Err(invalid(format!("saturation point {i} must lie in (0, 1)")));
        }
        Self::tabulated(vec![(0.0, 0.0), (i, value), (1.0, value)])
    }

    pub fn with_bounds(kind: ResponseKind, rate_bounds: (f64, f64)) -> Result<Self> {
        let (v_min, v_max) = rate_bounds;
        if !(v_min > 0.0 && v_min <= 1.0 && v_max >= 1.0 && v_max.is_finite()) {
            return Err(invalid(format!(
                "rate bounds must satisfy 0 < v_min <= 1 <= v_max (got {v_min}, {v_max})"
            )));
        }
        check_kind(&kind)?;

        // Sample the closed interval and require exact monotonicity in one
        // direction plus the speed bounds at every sample.
        let samples: Vec<f64> = (0..=VALIDATION_GRID)
            .map(|j| kind.value(j as f64 / VALIDATION_GRID as f64))
            .collect();
        if samples[0] != 0.0 {
            return Err(invalid("response function must satisfy f(0) = 0"));
        }
        let last = samples[VALIDATION_GRID];
        let sign = if last > 0.0 {
            FeedbackSign::Positive
        } else if last < 0.0 {
            FeedbackSign::Negative
        } else {
            FeedbackSign::Zero
        };
        for w in samples.windows(2) {
            let ok = match sign {
                FeedbackSign::Positive => w[1] >= w[0],
                FeedbackSign::Negative => w[1] <= w[0],
                FeedbackSign::Zero => w[1] == 0.0,
            };
            if !ok {
                return Err(invalid("response function is not monotone on [0, 1]"));
            }
        }
        if let Some(bad) = samples
            .iter()
            .find(|&&f| !(1.0 + f >= v_min && 1.0 + f <= v_max))
        {
            return Err(invalid(format!(
                "speed 1 + f = {} violates rate bounds [{v_min}, {v_max}]",
                1.0 + bad
            )));
        }

        Ok(FeedbackSpec {
            kind,
            rate_bounds,
            sign,
        })
    }

    pub fn kind(&self) -> &ResponseKind {
        &self.kind
    }

    pub fn rate_bounds(&self) -> (f64, f64) {
        self.rate_bounds
    }

    pub fn sign(&self) -> FeedbackSign {
        self.sign
    }

    /// `f(I)` for a signaling fraction `I` in `[0, 1]`.
    pub fn eval(&self, i: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&i) {
            return Err(Error::SignalingOutOfRange(i));
        }
        Ok(self.kind.value(i))
    }

    /// `f(I)` without the range check; `I` is clamped to `[0, 1]`.
    pub fn response(&self, i: f64) -> f64 {
        self.kind.value(i.clamp(0.0, 1.0))
    }

    /// `f(1/2)`, the feedback one of two equal clusters exerts on the other.
    pub fn alpha(&self) -> f64 {
        self.response(0.5)
    }

    /// `f(1/k)`, the feedback one of `k` equal clusters exerts.
    pub fn beta(&self, k: usize) -> f64 {
        self.response(1.0 / k as f64)
    }
}

fn check_kind(kind: &ResponseKind) -> Result<()> {
    match kind {
        ResponseKind::Linear { gamma } => {
            if !gamma.is_finite() {
                return Err(invalid("linear gain must be finite"));
            }
        }
        ResponseKind::Hill { gamma, theta, h } => {
            if !(gamma.is_finite() && *theta > 0.0 && theta.is_finite() && *h > 0.0 && h.is_finite())
            {
                return Err(invalid(format!(
                    "Hill response needs finite gain, theta > 0, h > 0 (got {gamma}, {theta}, {h})"
                )));
            }
        }
        ResponseKind::Tabulated { points } => {
            if points.len() < 2 {
                return Err(invalid("tabulated response needs at least two points"));
            }
            if points[0] != (0.0, 0.0) {
                return Err(invalid("tabulated response must start at (0, 0)"));
            }
            if points[points.len() - 1].0 != 1.0 {
                return Err(invalid("tabulated response must end at I = 1"));
            }
            if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(invalid("tabulated response has non-finite entries"));
            }
            if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(invalid("tabulated abscissae must be strictly increasing"));
            }
        }
    }
    Ok(())
}

/// Phases of a population of cells, optionally weighted so that a single
/// entry can stand for a whole cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    phases: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl Population {
    pub fn new(phases: Vec<f64>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        if let Some(x) = phases.iter().find(|x| !(0.0..1.0).contains(*x)) {
            return Err(invalid(format!("phase {x} outside [0, 1)")));
        }
        Ok(Population {
            phases,
            weights: None,
        })
    }

    pub fn weighted(phases: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != phases.len() {
            return Err(invalid(format!(
                "{} weights for {} phases",
                weights.len(),
                phases.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(invalid("weights must be positive and finite"));
        }
        let mut pop = Population::new(phases)?;
        pop.weights = Some(weights);
        Ok(pop)
    }

    /// `k` clusters of equal weight at the given positions.
    pub fn equal_clusters(positions: Vec<f64>) -> Result<Self> {
        let k = positions.len();
        Population::weighted(positions, vec![1.0; k])
    }

    /// `n` cells at `i / n`.
    pub fn equally_spaced(n: usize) -> Result<Self> {
        Population::new((0..n).map(|i| i as f64 / n as f64).collect())
    }

    /// `n` cells drawn uniformly on the circle, sorted by phase.
    pub fn random_uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let mut phases: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        phases.sort_by(f64::total_cmp);
        Population::new(phases)
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn total_weight(&self) -> f64 {
        self.weights
            .as_ref()
            .map_or(self.phases.len() as f64, |w| w.iter().sum())
    }

    /// Same weights, new phases (which must be in `[0, 1)`).
    pub fn with_phases(&self, phases: Vec<f64>) -> Result<Self> {
        match &self.weights {
            Some(w) => Population::weighted(phases, w.clone()),
            None => Population::new(phases),
        }
    }

    /// Rigid rotation of every phase by `c`.
    pub fn rotated(&self, c: f64) -> Self {
        Population {
            phases: self.phases.iter().map(|x| wrap_unit(x + c)).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Weighted fraction `I` of the population with phase in `[0, s)`.
pub fn signaling_fraction(pop: &Population, rp: &RegionParams) -> f64 {
    signaling_fraction_of(pop.phases(), pop.weights(), pop.total_weight(), rp)
}

pub(crate) fn signaling_fraction_of(
    phases: &[f64],
    weights: Option<&[f64]>,
    total: f64,
    rp: &RegionParams,
) -> f64 {
    let s = rp.s();
    let inside: f64 = match weights {
        Some(w) => phases
            .iter()
            .zip(w)
            .filter(|(x, _)| **x < s)
            .map(|(_, w)| *w)
            .sum(),
        None => phases.iter().filter(|x| **x < s).count() as f64,
    };
    (inside / total).clamp(0.0, 1.0)
}
