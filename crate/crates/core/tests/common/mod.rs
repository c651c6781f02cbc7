//! Randomised checks of the qualitative results for positive and negative
//! feedback, shared by the property tests and the acceptance run. Each
//! check returns one message per violating instance.

#![allow(dead_code)]

use cellcycle::cluster::{decompose, widths_series};
use cellcycle::cyclic::{case_one_inequalities, Case};
use cellcycle::model::{forward_gap, FeedbackSpec, Population, RegionParams};
use cellcycle::simulator::{simulate_exact, ExactOptions, SampleSchedule, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Slack for comparisons between widths computed at different times.
const ROUNDING: f64 = 1e-12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Regions with `|R| + |S|` in `[lo, hi]`.
pub fn random_regions(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> RegionParams {
    let w = rng.random_range(lo..hi);
    let s = rng.random_range(0.1 * w..0.9 * w);
    RegionParams::new(s, 1.0 - w + s).unwrap()
}

fn every_event(pop: &Population, rp: &RegionParams, fs: &FeedbackSpec, cycles: f64) -> Trajectory {
    let opts = ExactOptions {
        schedule: SampleSchedule::EveryEvent,
        record_events: false,
        ..Default::default()
    };
    simulate_exact(pop, rp, fs, cycles, &opts).unwrap()
}

fn per_cycle(pop: &Population, rp: &RegionParams, fs: &FeedbackSpec, cycles: f64) -> Trajectory {
    let opts = ExactOptions {
        schedule: SampleSchedule::Interval(1.0),
        record_events: false,
        ..Default::default()
    };
    simulate_exact(pop, rp, fs, cycles, &opts).unwrap()
}

/// `n` cells inside an arc of length `1 - w - margin` starting at a random
/// offset, so the remaining gap is at least `w`.
fn population_with_large_gap(rng: &mut ChaCha8Rng, rp: &RegionParams, n: usize) -> Population {
    let arc = (1.0 - rp.interaction_width()) * rng.random_range(0.3..0.95);
    let start = rng.random::<f64>();
    let mut phases: Vec<f64> = (0..n)
        .map(|_| (start + arc * rng.random::<f64>()).rem_euclid(1.0))
        .collect();
    phases.sort_by(f64::total_cmp);
    Population::new(phases).unwrap()
}

/// Cells in initial cyclic order.
fn order(pop: &Population) -> Vec<usize> {
    cellcycle::cluster::cyclic_order(pop.phases())
}

/// Positive feedback: a gap of at least `|R| + |S|` never shrinks.
pub fn large_gaps_never_shrink(instances: usize, seed: u64) -> Vec<String> {
    let mut rng = rng(seed);
    let mut bad = Vec::new();
    for inst in 0..instances {
        let rp = random_regions(&mut rng, 0.1, 0.45);
        let gamma = rng.random_range(0.1..2.0);
        let fs = FeedbackSpec::linear(gamma).unwrap();
        let n = rng.random_range(3..30);
        let pop = population_with_large_gap(&mut rng, &rp, n);
        let traj = every_event(&pop, &rp, &fs, 20.0);
        let ord = order(&pop);
        let w = rp.interaction_width();
        for j in 0..n {
            let (a, b) = (ord[j], ord[(j + 1) % n]);
            let mut floor: Option<f64> = None;
            for snap in &traj.samples {
                let g = if n == 1 { 1.0 } else { forward_gap(snap.phases[a], snap.phases[b]) };
                if let Some(f) = floor {
                    if g < f - ROUNDING {
                        bad.push(format!("instance {inst}: gap {a}->{b} shrank from {f} to {g} at t = {}", snap.time));
                        break;
                    }
                }
                if g >= w - ROUNDING {
                    floor = Some(floor.map_or(g, |f: f64| f.max(g)));
                }
            }
        }
    }
    bad
}

/// Positive feedback: an isolated group narrower than `|R| + |S|` never
/// widens, narrows on every pass, and after 50 cycles is below 0.9 of its
/// initial width.
pub fn isolated_groups_contract(instances: usize, seed: u64) -> Vec<String> {
    let mut rng = rng(seed);
    let mut bad = Vec::new();
    for inst in 0..instances {
        let rp = random_regions(&mut rng, 0.1, 0.45);
        let w = rp.interaction_width();
        let gamma = rng.random_range(0.3..1.5);
        let fs = FeedbackSpec::linear(gamma).unwrap();
        let m = rng.random_range(2..8usize);
        let width = w * rng.random_range(0.2..0.9);
        let start = rng.random::<f64>();
        let mut offsets: Vec<f64> = (0..m - 2).map(|_| width * rng.random::<f64>()).collect();
        offsets.push(0.0);
        offsets.push(width);
        offsets.sort_by(f64::total_cmp);
        let phases: Vec<f64> = offsets.iter().map(|o| (start + o).rem_euclid(1.0)).collect();
        let pop = Population::new(phases).unwrap();
        let members: Vec<usize> = (0..m).collect();
        let label = format!("instance {inst} (s = {}, r = {}, gamma = {gamma}, width = {width})", rp.s(), rp.r());

        let fine = widths_series(&every_event(&pop, &rp, &fs, 50.0), &members, &rp).unwrap();
        if fine.split.is_some() {
            bad.push(format!("{label}: group split"));
            continue;
        }
        if let Some(p) = fine.samples.windows(2).find(|p| p[1].1 > p[0].1 + ROUNDING) {
            bad.push(format!("{label}: width grew {} -> {} at t = {}", p[0].1, p[1].1, p[1].0));
        }
        // the leading cell keeps unit speed, so integer times are one pass apart
        let coarse = widths_series(&per_cycle(&pop, &rp, &fs, 50.0), &members, &rp).unwrap();
        if let Some(p) = coarse.samples.windows(2).find(|p| p[0].1 > ROUNDING && p[1].1 >= p[0].1) {
            bad.push(format!("{label}: no contraction over the pass ending at t = {}", p[1].0));
        }
        let last = coarse.samples.last().unwrap().1;
        if !(last < 0.9 * width) {
            bad.push(format!("{label}: width ratio {} after 50 cycles", last / width));
        }
    }
    bad
}

/// Positive feedback with one gap of at least `|R| + |S|`: the population
/// ends as isolated clusters. Groups are split at gaps of at least
/// `|R| + |S|`, so each one is isolated by construction and its width must
/// have dropped below `tol`.
pub fn converges_to_isolated_clusters(instances: usize, seed: u64, cycles: f64, tol: f64) -> Vec<String> {
    let mut rng = rng(seed);
    let mut bad = Vec::new();
    for inst in 0..instances {
        let rp = random_regions(&mut rng, 0.1, 0.45);
        let gamma = rng.random_range(0.3..1.5);
        let fs = FeedbackSpec::linear(gamma).unwrap();
        let n = rng.random_range(5..40);
        let pop = population_with_large_gap(&mut rng, &rp, n);
        let opts = ExactOptions {
            schedule: SampleSchedule::EndOnly,
            record_events: false,
            ..Default::default()
        };
        let traj = simulate_exact(&pop, &rp, &fs, cycles, &opts).unwrap();
        let end = pop.with_phases(traj.final_snapshot().unwrap().phases.clone()).unwrap();
        let dec = decompose(&end, &rp, rp.interaction_width() * (1.0 - 1e-9)).unwrap();
        let widest = dec.groups.iter().map(|g| g.width).fold(0.0, f64::max);
        if !dec.all_isolated() || widest > tol {
            bad.push(format!(
                "instance {inst} (s = {}, r = {}, gamma = {gamma}, n = {n}): {} groups, all isolated = {}, widest {widest:e}",
                rp.s(),
                rp.r(),
                dec.len(),
                dec.all_isolated()
            ));
        }
    }
    bad
}

/// Negative feedback: a cell nudged off a strictly isolated cluster drifts
/// further away on every cycle.
pub fn isolated_clusters_unstable(instances: usize, seed: u64, cycles: usize) -> Vec<String> {
    let mut rng = rng(seed);
    let mut bad = Vec::new();
    for inst in 0..instances {
        let rp = random_regions(&mut rng, 0.1, 0.3);
        let w = rp.interaction_width();
        let gamma = rng.random_range(-0.9..-0.1);
        let fs = FeedbackSpec::linear(gamma).unwrap();
        let m = rp.max_isolated_clusters();
        let k = rng.random_range(1..=m.max(1));
        let slack = 1.0 - k as f64 * w;
        if slack <= 1e-3 {
            continue;
        }
        // gaps of w plus a random share of the slack keep every gap > w
        let mut shares: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = shares.iter().sum();
        shares.iter_mut().for_each(|x| *x *= slack / total);
        let size = rng.random_range(2..5usize);
        let mut phases = Vec::new();
        let mut at = rng.random::<f64>();
        for share in &shares {
            phases.extend(std::iter::repeat_n(at.rem_euclid(1.0), size));
            at += w + share;
        }
        let eps = 1e-6 * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let victim = rng.random_range(0..size);
        phases[victim] = (phases[victim] + eps).rem_euclid(1.0);
        let pop = Population::new(phases).unwrap();
        let traj = per_cycle(&pop, &rp, &fs, cycles as f64);
        let mate = if victim == 0 { 1 } else { 0 };
        let seps: Vec<f64> = traj
            .samples
            .iter()
            .map(|s| cellcycle::model::circle_distance(s.phases[victim], s.phases[mate]))
            .collect();
        if let Some(j) = (1..seps.len()).find(|&j| seps[j] <= seps[j - 1]) {
            bad.push(format!(
                "instance {inst} (s = {}, r = {}, gamma = {gamma}, k = {k}): separation {} -> {} in cycle {j}",
                rp.s(),
                rp.r(),
                seps[j - 1],
                seps[j]
            ));
        }
    }
    bad
}

/// Negative feedback: two equal interacting clusters drift apart until their
/// gap is `|R| + |S|`, rising on every cycle and within `tol` of it after
/// `cycles` cycles. Near the limit the shortfall shrinks by `1 + f(1/2)`
/// per cycle, at most 0.9 for the gains drawn here.
pub fn interacting_pair_spreads(instances: usize, seed: u64, cycles: usize, tol: f64) -> Vec<String> {
    let mut rng = rng(seed);
    let mut bad = Vec::new();
    for inst in 0..instances {
        let rp = random_regions(&mut rng, 0.1, 0.45);
        let w = rp.interaction_width();
        let gamma = rng.random_range(-0.9..-0.2);
        let fs = FeedbackSpec::linear(gamma).unwrap();
        let gap = w * rng.random_range(0.05..0.95);
        let a = rng.random_range(1..6usize);
        let start = rng.random::<f64>();
        let mut phases = vec![start; a];
        phases.extend(std::iter::repeat_n((start + gap).rem_euclid(1.0), a));
        let pop = Population::new(phases).unwrap();
        let traj = per_cycle(&pop, &rp, &fs, cycles as f64);
        // cell 0 trails, cell a leads
        let gaps: Vec<f64> = traj
            .samples
            .iter()
            .map(|s| forward_gap(s.phases[0], s.phases[a]))
            .collect();
        let label = format!("instance {inst} (s = {}, r = {}, gamma = {gamma}, gap = {gap})", rp.s(), rp.r());
        if let Some(j) = (1..gaps.len()).find(|&j| gaps[j - 1] < w - ROUNDING && gaps[j] <= gaps[j - 1]) {
            bad.push(format!("{label}: gap {} -> {} in cycle {j}", gaps[j - 1], gaps[j]));
        }
        if let Some(g) = gaps.iter().find(|&&g| g > w + ROUNDING) {
            bad.push(format!("{label}: gap overshot to {g}"));
        }
        let last = *gaps.last().unwrap();
        if (w - last).abs() > tol {
            bad.push(format!("{label}: gap {last} still {:e} from |R| + |S|", w - last));
        }
    }
    bad
}

/// Random parameters with `k = M + 1 <= 8` whose Case I inequalities select
/// `want`.
pub fn cyclic_draw(rng: &mut ChaCha8Rng, want: Case) -> (RegionParams, usize, f64) {
    loop {
        let k = rng.random_range(2..=8usize);
        let lo = 1.0 / k as f64;
        let hi = if k == 2 { 0.98 } else { 1.0 / (k - 1) as f64 };
        let w = rng.random_range(lo + 1e-6..hi - 1e-6);
        let s = rng.random_range(0.01 * w..0.99 * w);
        let r = 1.0 - w + s;
        let beta = rng.random_range(-0.5..0.5);
        let Ok(rp) = RegionParams::new(s, r) else { continue };
        if rp.max_isolated_clusters() + 1 != k || beta == 0.0 {
            continue;
        }
        let got = match case_one_inequalities(&rp, k, beta) {
            (true, true) => Case::I,
            (true, false) => Case::II,
            (false, true) => Case::III,
            (false, false) => continue,
        };
        if got == want {
            return (rp, k, beta);
        }
    }
}

/// Like [`cyclic_draw`] with a fixed `k`.
pub fn cyclic_draw_k(rng: &mut ChaCha8Rng, want: Case, k: usize) -> (RegionParams, f64) {
    for _ in 0..100_000 {
        let (rp, kk, beta) = cyclic_draw(rng, want);
        if kk == k {
            return (rp, beta);
        }
    }
    panic!("no parameters for {want} with k = {k}");
}
