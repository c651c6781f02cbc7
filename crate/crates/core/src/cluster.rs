//! Groups, gaps and isolation.
//!
//! A group is a maximal run of cells (in cyclic order) whose consecutive
//! gaps are all below a merge distance `delta`. A group is isolated when both
//! gaps that flank it are at least `|R| + |S|` wide, so that no feedback can
//! cross them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{forward_gap, Population, RegionParams};
use crate::simulator::Trajectory;

/// Slack on the isolation comparisons.
const ISOLATION_SLACK: f64 = 1e-12;

pub const DEFAULT_OCCUPANCY_THRESHOLD: f64 = 2.0;
pub const DEFAULT_BINS: usize = 120;
/// Share of the population that over-threshold bins must hold before a
/// histogram counts as clustered; isolated bins lifted by counting noise
/// do not.
pub const MIN_CAPTURED_FRACTION: f64 = 0.5;

/// `min((|R| + |S|) / 2, 0.02)`.
pub fn default_merge_distance(rp: &RegionParams) -> f64 {
    (0.5 * rp.interaction_width()).min(0.02)
}

/// Open arc between two cells, from `from` forward to `to`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub from: usize,
    pub to: usize,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GapReport {
    pub gaps: Vec<Gap>,
}

impl GapReport {
    pub fn total_width(&self) -> f64 {
        self.gaps.iter().map(|g| g.width).sum()
    }

    pub fn widest(&self) -> Option<&Gap> {
        self.gaps.iter().max_by(|a, b| a.width.total_cmp(&b.width))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    /// Cell indices from the trailing cell to the leading cell.
    pub members: Vec<usize>,
    /// Forward arc from the trailing to the leading cell.
    pub width: f64,
    pub weight: f64,
    pub isolated: bool,
    pub strictly_isolated: bool,
}

impl Group {
    pub fn trailing(&self) -> usize {
        self.members[0]
    }

    pub fn leading(&self) -> usize {
        self.members[self.members.len() - 1]
    }
}

/// Groups in cyclic order; `gaps.gaps[i]` runs from the leading cell of
/// `groups[i]` to the trailing cell of the next group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDecomposition {
    pub groups: Vec<Group>,
    pub gaps: GapReport,
}

impl ClusterDecomposition {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn all_isolated(&self) -> bool {
        self.groups.iter().all(|g| g.isolated)
    }
}

/// Cell indices sorted by phase (ties by index), i.e. the cyclic order
/// starting from the cell nearest 0.
pub fn cyclic_order(phases: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..phases.len()).collect();
    order.sort_by(|&a, &b| phases[a].total_cmp(&phases[b]).then(a.cmp(&b)));
    order
}

/// Gaps between every pair of consecutive cells. The gap closing the circle
/// absorbs the remainder, so widths always sum to one.
pub fn cell_gaps(phases: &[f64]) -> GapReport {
    let order = cyclic_order(phases);
    let n = order.len();
    let gaps = (0..n)
        .map(|j| {
            let from = order[j];
            let to = order[(j + 1) % n];
            let width = if j + 1 == n {
                1.0 - (phases[from] - phases[to])
            } else {
                phases[to] - phases[from]
            };
            Gap { from, to, width }
        })
        .collect();
    GapReport { gaps }
}

pub fn decompose(pop: &Population, rp: &RegionParams, delta: f64) -> Result<ClusterDecomposition> {
    let reach = rp.interaction_width();
    if !(delta > 0.0 && delta < reach) {
        return Err(invalid(format!(
            "merge distance {delta} must lie in (0, |R| + |S| = {reach})"
        )));
    }
    let cells = cell_gaps(pop.phases()).gaps;
    let n = cells.len();

    let mut splits: Vec<usize> = (0..n).filter(|&j| cells[j].width >= delta).collect();
    if splits.is_empty() {
        let widest = (0..n)
            .max_by(|&a, &b| cells[a].width.total_cmp(&cells[b].width))
            .expect("population is non-empty");
        splits.push(widest);
    }

    let mut groups = Vec::with_capacity(splits.len());
    let mut gaps = Vec::with_capacity(splits.len());
    for (g, &split) in splits.iter().enumerate() {
        let prev_split = splits[(g + splits.len() - 1) % splits.len()];
        // members run from the cell after the previous split up to `split`
        let mut members = Vec::new();
        let mut width = 0.0;
        let mut j = (prev_split + 1) % n;
        loop {
            members.push(cells[j].from);
            if j == split {
                break;
            }
            width += cells[j].width;
            j = (j + 1) % n;
        }
        let weight = members.iter().map(|&i| pop.weight(i)).sum();
        groups.push(Group {
            members,
            width,
            weight,
            isolated: false,
            strictly_isolated: false,
        });
        gaps.push(cells[split]);
    }

    let k = groups.len();
    for (g, group) in groups.iter_mut().enumerate() {
        let before = gaps[(g + k - 1) % k].width;
        let after = gaps[g].width;
        let narrowest = before.min(after);
        group.isolated = narrowest >= reach - ISOLATION_SLACK;
        group.strictly_isolated = narrowest > reach + ISOLATION_SLACK;
    }

    Ok(ClusterDecomposition {
        groups,
        gaps: GapReport { gaps },
    })
}

/// Weighted histogram of phases over `bins` equal bins.
pub fn histogram(pop: &Population, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    for (i, &x) in pop.phases().iter().enumerate() {
        let b = ((x * bins as f64) as usize).min(bins - 1);
        counts[b] += pop.weight(i);
    }
    counts
}

/// Number of clusters read off a histogram: bins holding more than
/// `occupancy_threshold` times the uniform expectation are marked, and each
/// maximal cyclic run of marked bins counts as one cluster. Returns 0 (no
/// clustering) when more than half the bins are marked, or when the marked
/// bins hold less than [`MIN_CAPTURED_FRACTION`] of the population.
pub fn count_clusters_histogram(pop: &Population, bins: usize, occupancy_threshold: f64) -> Result<usize> {
    if bins < 2 {
        return Err(invalid(format!("need at least 2 bins (got {bins})")));
    }
    if !(occupancy_threshold > 0.0) {
        return Err(invalid("occupancy threshold must be positive"));
    }
    let counts = histogram(pop, bins);
    let cutoff = occupancy_threshold * pop.total_weight() / bins as f64;
    let marked: Vec<bool> = counts.iter().map(|&c| c > cutoff).collect();
    let n_marked = marked.iter().filter(|&&m| m).count();
    let captured: f64 = counts.iter().zip(&marked).filter(|(_, &m)| m).map(|(c, _)| c).sum();
    if 2 * n_marked > bins || captured < MIN_CAPTURED_FRACTION * pop.total_weight() {
        return Ok(0);
    }
    // count run starts: marked bins whose cyclic predecessor is unmarked
    let runs = (0..bins)
        .filter(|&b| marked[b] && !marked[(b + bins - 1) % bins])
        .count();
    Ok(runs)
}

/// A group that developed an internal gap of at least `|R| + |S|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub time: f64,
    /// Trailing part (behind the large gap) and leading part.
    pub parts: (Vec<usize>, Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSeries {
    /// `(t, width)` until the group loses its identity.
    pub samples: Vec<(f64, f64)>,
    pub split: Option<GroupSplit>,
}

/// Width of the group `members` (trailing to leading) at every sample of
/// `traj`. Tracking stops at the first sample where an internal gap reaches
/// `|R| + |S|`; the two halves are reported so they can be followed
/// separately.
pub fn widths_series(traj: &Trajectory, members: &[usize], rp: &RegionParams) -> Result<WidthSeries> {
    if members.is_empty() {
        return Err(invalid("group has no members"));
    }
    let reach = rp.interaction_width();
    let mut samples = Vec::with_capacity(traj.samples.len());
    for snap in &traj.samples {
        let x = &snap.phases;
        if let Some(&bad) = members.iter().find(|&&i| i >= x.len()) {
            return Err(invalid(format!("cell {bad} not in trajectory")));
        }
        let split_at = members
            .windows(2)
            .position(|w| forward_gap(x[w[0]], x[w[1]]) >= reach);
        if let Some(p) = split_at {
            return Ok(WidthSeries {
                samples,
                split: Some(GroupSplit {
                    time: snap.time,
                    parts: (members[..=p].to_vec(), members[p + 1..].to_vec()),
                }),
            });
        }
        let width = forward_gap(x[members[0]], x[members[members.len() - 1]]);
        samples.push((snap.time, width));
    }
    Ok(WidthSeries { samples, split: None })
}
