//! The cluster return map.
//!
//! For `k` clusters with the first one at 0 and the others at
//! `0 <= x_1 <= ... <= x_{k-1} <= 1`, the map `F` advances the flow until the
//! leading cluster reaches 1 and relabels, so that the full return to the
//! section `x_0 = 0` is `F^k`. Endpoints 0 and 1 of the simplex are kept
//! distinct here.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{FeedbackSpec, Population, RegionParams};
use crate::simulator::{EventKind, ExactStepper};

/// Continuity tolerance at interior breakpoints of a composed map.
pub const CONTINUITY_TOLERANCE: f64 = 1e-12;
/// `|slope - 1|` below this counts as neutral.
pub const NEUTRAL_TOLERANCE: f64 = 1e-9;
pub const MAX_SEGMENTS: usize = 10_000;
/// Every reported fixed point satisfies `|m(x) - x|` below this.
pub const FIXED_POINT_RESIDUAL: f64 = 1e-10;

const MAX_MAP_BATCHES: usize = 1_000_000;

/// Coordinates `(x_1, ..., x_{k-1})` of `k` clusters, `x_0 = 0` implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(invalid("simplex point needs at least one coordinate (k >= 2)"));
        }
        if coords.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(invalid(format!("coordinates {coords:?} outside [0, 1]")));
        }
        if coords.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid(format!("coordinates {coords:?} are not ordered")));
        }
        Ok(SimplexPoint(coords))
    }

    /// `(d, 2d, ..., (k-1)d)`.
    pub fn equally_spaced(k: usize, d: f64) -> Result<Self> {
        SimplexPoint::new((1..k).map(|i| i as f64 * d).collect())
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    /// Number of clusters, `k`.
    pub fn clusters(&self) -> usize {
        self.0.len() + 1
    }

    pub fn max_abs_diff(&self, other: &SimplexPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapImage {
    pub point: SimplexPoint,
    /// Time `t_1` for the leading cluster to reach 1.
    pub time: f64,
}

/// One application of `F` by exact simulation of `k` weighted clusters.
/// `weights` defaults to equal cluster sizes.
pub fn numeric_f(
    p: &SimplexPoint,
    rp: &RegionParams,
    fs: &FeedbackSpec,
    weights: Option<&[f64]>,
) -> Result<MapImage> {
    let k = p.clusters();
    let x = p.coords();
    if let Some(w) = weights {
        if w.len() != k {
            return Err(invalid(format!("{} weights for {k} clusters", w.len())));
        }
    }
    if x[k - 2] >= 1.0 {
        let mut out = Vec::with_capacity(k - 1);
        out.push(0.0);
        out.extend_from_slice(&x[..k - 2]);
        return Ok(MapImage {
            point: SimplexPoint(out),
            time: 0.0,
        });
    }

    let mut phases = Vec::with_capacity(k);
    phases.push(0.0);
    phases.extend_from_slice(x);
    let pop = match weights {
        Some(w) => Population::weighted(phases, w.to_vec())?,
        None => Population::equal_clusters(phases)?,
    };
    let mut stepper = ExactStepper::new(&pop, rp, fs);
    let lead = k - 1;
    for _ in 0..MAX_MAP_BATCHES {
        let events = stepper.step()?;
        let arrived: Vec<usize> = events
            .iter()
            .filter(|e| e.kind == EventKind::CycleEnd)
            .map(|e| e.cell)
            .collect();
        if arrived.contains(&lead) {
            let now = stepper.phases();
            let out = (0..lead)
                .map(|i| if arrived.contains(&i) { 1.0 } else { now[i] })
                .collect();
            return Ok(MapImage {
                point: SimplexPoint(out),
                time: stepper.time(),
            });
        }
    }
    Err(Error::Certificate(format!(
        "leading cluster did not reach 1 within {MAX_MAP_BATCHES} events"
    )))
}

/// `F^times` applied numerically.
pub fn numeric_f_iter(
    p: &SimplexPoint,
    rp: &RegionParams,
    fs: &FeedbackSpec,
    times: usize,
) -> Result<SimplexPoint> {
    let mut q = p.clone();
    for _ in 0..times {
        q = numeric_f(&q, rp, fs, None)?.point;
    }
    Ok(q)
}

/// Central-difference Jacobian of `F` at `p`, rows indexed by output
/// coordinate.
pub fn numeric_jacobian(p: &SimplexPoint, rp: &RegionParams, fs: &FeedbackSpec, h: f64) -> Result<DMatrix<f64>> {
    let dim = p.coords().len();
    let mut jac = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut plus = p.coords().to_vec();
        let mut minus = p.coords().to_vec();
        plus[j] += h;
        minus[j] -= h;
        let fp = numeric_f(&SimplexPoint::new(plus)?, rp, fs, None)?.point;
        let fm = numeric_f(&SimplexPoint::new(minus)?, rp, fs, None)?.point;
        for i in 0..dim {
            jac[(i, j)] = (fp.coords()[i] - fm.coords()[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Interior fixed point of `F` for `k` equal clusters (a cyclic `k`-cluster
/// solution), by Newton iteration on `F(x) - x` with a difference Jacobian.
/// Starts from equal spacing, then from seeded random points.
pub fn find_fixed_point(rp: &RegionParams, fs: &FeedbackSpec, k: usize, seed: u64) -> Result<SimplexPoint> {
    if k < 2 {
        return Err(invalid("need k >= 2 clusters"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = SimplexPoint::equally_spaced(k, 1.0 / k as f64)?;
    for _ in 0..64 {
        if let Some(p) = newton_fixed_point(&start, rp, fs)? {
            return Ok(p);
        }
        let mut c: Vec<f64> = (1..k).map(|_| rng.random_range(0.02..0.98)).collect();
        c.sort_by(f64::total_cmp);
        start = SimplexPoint::new(c)?;
    }
    Err(Error::Certificate(format!("no interior fixed point of F found for k = {k}")))
}

fn newton_fixed_point(start: &SimplexPoint, rp: &RegionParams, fs: &FeedbackSpec) -> Result<Option<SimplexPoint>> {
    let dim = start.coords().len();
    let mut x = start.clone();
    for _ in 0..40 {
        let fx = numeric_f(&x, rp, fs, None)?.point;
        let g = DVector::from_iterator(dim, fx.coords().iter().zip(x.coords()).map(|(a, b)| a - b));
        if g.amax() < 1e-13 {
            let interior = x.coords()[0] > 0.0 && x.coords()[dim - 1] < 1.0;
            return Ok(interior.then_some(x));
        }
        let h = 1e-7 * (1.0 + g.amax().min(1.0));
        let Ok(jac) = guarded_jacobian(&x, rp, fs, h) else {
            return Ok(None);
        };
        let system = jac - DMatrix::identity(dim, dim);
        let Some(step) = system.lu().solve(&(-g)) else {
            return Ok(None);
        };
        let mut next: Vec<f64> = x.coords().iter().zip(step.iter()).map(|(a, s)| a + s).collect();
        for c in &mut next {
            *c = c.clamp(1e-9, 1.0 - 1e-9);
        }
        next.sort_by(f64::total_cmp);
        x = SimplexPoint(next);
    }
    Ok(None)
}

/// Difference Jacobian that stays inside the simplex near its faces.
fn guarded_jacobian(p: &SimplexPoint, rp: &RegionParams, fs: &FeedbackSpec, h: f64) -> Result<DMatrix<f64>> {
    let c = p.coords();
    let room = std::iter::once(c[0])
        .chain(c.windows(2).map(|w| w[1] - w[0]))
        .chain(std::iter::once(1.0 - c[c.len() - 1]))
        .fold(f64::INFINITY, f64::min);
    if room <= 2.0 * h {
        return Err(invalid("too close to the simplex boundary"));
    }
    numeric_jacobian(p, rp, fs, h)
}

/// The closed-form map `F` for two equal clusters, `alpha = f(1/2)`.
pub fn analytic_f_k2(x1: f64, rp: &RegionParams, alpha: f64) -> f64 {
    let (r, s) = (rp.r(), rp.s());
    let a1 = 1.0 + alpha;
    if x1 <= r - s {
        return 1.0 - x1;
    }
    if r + a1 * s < 1.0 {
        if x1 < r {
            1.0 - a1 * x1 + alpha * (r - s)
        } else if x1 < 1.0 - a1 * s {
            1.0 - x1 - alpha * s
        } else {
            (1.0 - x1) / a1
        }
    } else {
        let knee = (1.0 + alpha * r) / a1 - s;
        if x1 <= knee {
            1.0 - a1 * x1 + alpha * (r - s)
        } else if x1 <= r {
            r - x1 + (1.0 - r) / a1
        } else {
            (1.0 - x1) / a1
        }
    }
}

/// `x -> slope * x + intercept`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub slope: f64,
    pub intercept: f64,
}

impl Affine {
    pub fn new(slope: f64, intercept: f64) -> Self {
        Affine { slope, intercept }
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// `self ∘ inner`
    pub fn after(&self, inner: &Affine) -> Affine {
        Affine {
            slope: self.slope * inner.slope,
            intercept: self.slope * inner.intercept + self.intercept,
        }
    }

    fn same_as(&self, other: &Affine) -> bool {
        (self.slope - other.slope).abs() <= CONTINUITY_TOLERANCE
            && (self.intercept - other.intercept).abs() <= CONTINUITY_TOLERANCE
    }
}

/// A continuous piecewise-affine self-map of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseAffineMap {
    breakpoints: Vec<f64>,
    pieces: Vec<Affine>,
}

impl PiecewiseAffineMap {
    /// `breakpoints` runs from 0 to 1 with one more entry than `pieces`.
    /// Zero-length segments are dropped and identical neighbours merged.
    pub fn new(breakpoints: Vec<f64>, pieces: Vec<Affine>) -> Result<Self> {
        if pieces.is_empty() || breakpoints.len() != pieces.len() + 1 {
            return Err(invalid(format!(
                "{} breakpoints for {} pieces",
                breakpoints.len(),
                pieces.len()
            )));
        }
        if breakpoints[0] != 0.0 || breakpoints[breakpoints.len() - 1] != 1.0 {
            return Err(invalid("breakpoints must span [0, 1]"));
        }
        if breakpoints.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("breakpoints must be ascending"));
        }

        let mut bps = vec![0.0];
        let mut kept: Vec<Affine> = Vec::with_capacity(pieces.len());
        for (i, piece) in pieces.into_iter().enumerate() {
            let hi = breakpoints[i + 1];
            if hi <= *bps.last().unwrap() {
                continue;
            }
            match kept.last() {
                Some(prev) if prev.same_as(&piece) => {
                    *bps.last_mut().unwrap() = hi;
                }
                _ => {
                    kept.push(piece);
                    bps.push(hi);
                }
            }
        }
        // a trailing zero-length piece can leave the last breakpoint short
        *bps.last_mut().unwrap() = 1.0;

        for (i, w) in kept.windows(2).enumerate() {
            let at = bps[i + 1];
            let jump = (w[0].apply(at) - w[1].apply(at)).abs();
            if jump > CONTINUITY_TOLERANCE {
                return Err(Error::Discontinuity { at, jump });
            }
        }
        if kept.len() > MAX_SEGMENTS {
            return Err(Error::SegmentOverflow {
                count: kept.len(),
                limit: MAX_SEGMENTS,
            });
        }
        Ok(PiecewiseAffineMap {
            breakpoints: bps,
            pieces: kept,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[Affine] {
        &self.pieces
    }

    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, Affine)> + '_ {
        self.pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (self.breakpoints[i], self.breakpoints[i + 1], *p))
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    fn segment_index(&self, x: f64) -> usize {
        let interior = &self.breakpoints[1..self.breakpoints.len() - 1];
        interior.partition_point(|&b| b <= x)
    }

    /// Value at `x`; at an interior breakpoint the two one-sided values are
    /// averaged.
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let i = self.segment_index(x);
        if i > 0 && self.breakpoints[i] == x {
            0.5 * (self.pieces[i - 1].apply(x) + self.pieces[i].apply(x))
        } else {
            self.pieces[i].apply(x)
        }
    }

    /// `self ∘ inner`, with breakpoints refined by the preimages of this
    /// map's breakpoints.
    pub fn after(&self, inner: &PiecewiseAffineMap) -> Result<PiecewiseAffineMap> {
        let outer_bps = &self.breakpoints[1..self.breakpoints.len() - 1];
        let mut bps = vec![0.0];
        let mut pieces = Vec::new();
        for (lo, hi, p) in inner.segments() {
            let mut cuts = vec![lo];
            if p.slope != 0.0 {
                let (ya, yb) = (p.apply(lo), p.apply(hi));
                let (ymin, ymax) = (ya.min(yb), ya.max(yb));
                let mut inner_cuts: Vec<f64> = outer_bps
                    .iter()
                    .filter(|&&y| y > ymin && y < ymax)
                    .map(|&y| (y - p.intercept) / p.slope)
                    .filter(|&x| x > lo && x < hi)
                    .collect();
                inner_cuts.sort_by(f64::total_cmp);
                cuts.extend(inner_cuts);
            }
            cuts.push(hi);
            for w in cuts.windows(2) {
                let (a, b) = (w[0], w[1]);
                if b <= a {
                    continue;
                }
                let y = p.apply(0.5 * (a + b)).clamp(0.0, 1.0);
                let q = self.pieces[self.segment_index(y)];
                pieces.push(q.after(&p));
                bps.push(b);
            }
        }
        if pieces.len() > MAX_SEGMENTS {
            return Err(Error::SegmentOverflow {
                count: pieces.len(),
                limit: MAX_SEGMENTS,
            });
        }
        PiecewiseAffineMap::new(bps, pieces)
    }
}

/// The closed-form `F` for two equal clusters as a piecewise-affine map.
pub fn as_piecewise(rp: &RegionParams, alpha: f64) -> Result<PiecewiseAffineMap> {
    if !(alpha > -1.0 && alpha.is_finite()) {
        return Err(invalid(format!("alpha = {alpha} must exceed -1")));
    }
    let (r, s) = (rp.r(), rp.s());
    let a1 = 1.0 + alpha;
    let first = Affine::new(-1.0, 1.0);
    let second = Affine::new(-a1, 1.0 + alpha * (r - s));
    let last = Affine::new(-1.0 / a1, 1.0 / a1);
    let (bps, pieces) = if r + a1 * s < 1.0 {
        (
            vec![0.0, r - s, r, 1.0 - a1 * s, 1.0],
            vec![first, second, Affine::new(-1.0, 1.0 - alpha * s), last],
        )
    } else {
        (
            vec![0.0, r - s, (1.0 + alpha * r) / a1 - s, r, 1.0],
            vec![first, second, Affine::new(-1.0, r + (1.0 - r) / a1), last],
        )
    };
    PiecewiseAffineMap::new(bps, pieces)
}

/// `m` composed with itself `times` times.
pub fn compose(m: &PiecewiseAffineMap, times: usize) -> Result<PiecewiseAffineMap> {
    if times == 0 {
        return Err(invalid("composition count must be at least 1"));
    }
    let mut acc = m.clone();
    for _ in 1..times {
        acc = m.after(&acc)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    Unstable,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub location: f64,
    /// Slope of the map at the point; two entries (left, right) when the
    /// point sits on a breakpoint.
    pub multipliers: Vec<f64>,
    pub class: Stability,
    /// At 0 or 1, the edge of the simplex.
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub points: Vec<FixedPoint>,
    /// Maximal intervals on which the map is the identity.
    pub neutral_intervals: Vec<(f64, f64)>,
}

impl FixedPointReport {
    pub fn interior_points(&self) -> impl Iterator<Item = &FixedPoint> {
        self.points.iter().filter(|p| !p.boundary)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn classify(multipliers: &[f64]) -> Stability {
    if multipliers.iter().all(|m| m.abs() < 1.0 - NEUTRAL_TOLERANCE) {
        Stability::Stable
    } else if multipliers.iter().all(|m| m.abs() > 1.0 + NEUTRAL_TOLERANCE) {
        Stability::Unstable
    } else {
        Stability::Neutral
    }
}

pub fn fixed_points(m: &PiecewiseAffineMap) -> Result<FixedPointReport> {
    let mut neutral: Vec<(f64, f64)> = Vec::new();
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for (lo, hi, p) in m.segments() {
        let identity = (p.slope - 1.0).abs() <= CONTINUITY_TOLERANCE && p.intercept.abs() <= CONTINUITY_TOLERANCE;
        if identity {
            match neutral.last_mut() {
                Some(last) if (last.1 - lo).abs() <= CONTINUITY_TOLERANCE => last.1 = hi,
                _ => neutral.push((lo, hi)),
            }
            continue;
        }
        if p.slope == 1.0 {
            continue;
        }
        let x = p.intercept / (1.0 - p.slope);
        if x >= lo - CONTINUITY_TOLERANCE && x <= hi + CONTINUITY_TOLERANCE {
            candidates.push((x.clamp(lo, hi), p.slope));
        }
    }

    let near_neutral = |x: f64| {
        neutral
            .iter()
            .any(|&(a, b)| x >= a - NEUTRAL_TOLERANCE && x <= b + NEUTRAL_TOLERANCE)
    };
    let mut points: Vec<FixedPoint> = Vec::new();
    for (x, slope) in candidates {
        if near_neutral(x) {
            continue;
        }
        match points.last_mut() {
            Some(prev) if (prev.location - x).abs() <= NEUTRAL_TOLERANCE => {
                prev.multipliers.push(slope);
            }
            _ => points.push(FixedPoint {
                location: x,
                multipliers: vec![slope],
                class: Stability::Neutral,
                boundary: false,
            }),
        }
    }
    for p in &mut points {
        let residual = (m.eval(p.location) - p.location).abs();
        if residual >= FIXED_POINT_RESIDUAL {
            return Err(Error::Certificate(format!(
                "fixed point {} has residual {residual:e}",
                p.location
            )));
        }
        p.class = classify(&p.multipliers);
        p.boundary = p.location <= CONTINUITY_TOLERANCE || p.location >= 1.0 - CONTINUITY_TOLERANCE;
    }
    Ok(FixedPointReport {
        points,
        neutral_intervals: neutral,
    })
}

/// The four kinds of two-cluster dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum K2Dynamics {
    PositiveUnstablePoint,
    PositiveNeutralInterval,
    NegativeStablePoint,
    NegativeNeutralInterval,
}

/// Classifies two-cluster dynamics from the fixed points of `F^2`.
pub fn classify_k2(rp: &RegionParams, alpha: f64) -> Result<K2Dynamics> {
    if alpha == 0.0 {
        return Err(invalid("alpha = 0 means no feedback; nothing to classify"));
    }
    let f2 = compose(&as_piecewise(rp, alpha)?, 2)?;
    let report = fixed_points(&f2)?;
    let interior_interval = report
        .neutral_intervals
        .iter()
        .any(|&(a, b)| a > CONTINUITY_TOLERANCE && b < 1.0 - CONTINUITY_TOLERANCE);
    let positive = alpha > 0.0;
    if interior_interval {
        return Ok(if positive {
            K2Dynamics::PositiveNeutralInterval
        } else {
            K2Dynamics::NegativeNeutralInterval
        });
    }
    let interior: Vec<&FixedPoint> = report.interior_points().collect();
    match (interior.as_slice(), positive) {
        ([p], true) if p.class == Stability::Unstable => Ok(K2Dynamics::PositiveUnstablePoint),
        ([p], false) if p.class == Stability::Stable => Ok(K2Dynamics::NegativeStablePoint),
        _ => Err(Error::Certificate(format!(
            "unexpected fixed-point structure for s = {}, r = {}, alpha = {alpha}: {:?}",
            rp.s(),
            rp.r(),
            report
        ))),
    }
}
