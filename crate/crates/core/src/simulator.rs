//! Time integration of RS populations.
//!
//! Between boundary crossings every cell moves at a constant speed, so the
//! exact flow is obtained by jumping from one crossing to the next. A
//! fixed-step Euler–Maruyama integrator is provided for noisy runs.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{signaling_fraction_of, wrap_unit, FeedbackSpec, Population, Region, RegionParams};

/// Crossings closer together than this (in time) are processed as one batch.
pub const EVENT_TIE_TOLERANCE: f64 = 1e-12;

pub const DEFAULT_MAX_EVENTS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    /// Reached `s`, leaving the signaling region.
    #[serde(rename = "HitS_end")]
    LeaveSignaling,
    /// Reached `r`, entering the responsive region.
    #[serde(rename = "HitR_start")]
    EnterResponsive,
    /// Reached `1` and wrapped to `0`.
    #[serde(rename = "HitCycleEnd")]
    CycleEnd,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::LeaveSignaling => "HitS_end",
            EventKind::EnterResponsive => "HitR_start",
            EventKind::CycleEnd => "HitCycleEnd",
        }
    }

    fn at_boundary(boundary: f64, rp: &RegionParams) -> Self {
        if boundary == rp.s() {
            EventKind::LeaveSignaling
        } else if boundary == rp.r() {
            EventKind::EnterResponsive
        } else {
            EventKind::CycleEnd
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub cell: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub phases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Snapshot>,
    pub events: Vec<EventRecord>,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn final_snapshot(&self) -> Option<&Snapshot> {
        self.samples.last()
    }

    /// Writes `t,phase_0,...,phase_{n-1}`, one row per sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.samples.first().map_or(0, |s| s.phases.len());
        write!(out, "t")?;
        for i in 0..n {
            write!(out, ",phase_{i}")?;
        }
        writeln!(out)?;
        for snap in &self.samples {
            write!(out, "{}", snap.time)?;
            for x in &snap.phases {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Writes `t,kind,cell`, one row per event.
    pub fn write_events_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,kind,cell")?;
        for e in &self.events {
            writeln!(out, "{},{},{}", e.time, e.kind.label(), e.cell)?;
        }
        Ok(())
    }
}

/// Which states a simulation keeps. The initial and final states are always
/// kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampleSchedule {
    /// After every event batch (exact) or every step (stochastic).
    EveryEvent,
    /// At multiples of the given interval.
    Interval(f64),
    EndOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactOptions {
    pub schedule: SampleSchedule,
    pub record_events: bool,
    pub max_events: usize,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions {
            schedule: SampleSchedule::EveryEvent,
            record_events: true,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

impl ExactOptions {
    pub fn sampled(schedule: SampleSchedule) -> Self {
        ExactOptions {
            schedule,
            ..Default::default()
        }
    }
}

/// Per-step noise: each step adds `sigma * N(0, 1)` to every phase, so the
/// diffusion per unit time is `sigma^2 / dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub dt: f64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, dt: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("noise level {sigma} must be >= 0")));
        }
        if !(dt > 0.0 && dt <= 0.1) {
            return Err(invalid(format!("step {dt} must lie in (0, 0.1]")));
        }
        Ok(NoiseSpec { sigma, dt })
    }
}

fn speeds_into(
    phases: &[f64],
    weights: Option<&[f64]>,
    total: f64,
    rp: &RegionParams,
    fs: &FeedbackSpec,
    out: &mut Vec<f64>,
) {
    let i = signaling_fraction_of(phases, weights, total, rp);
    let boosted = if i > 0.0 { 1.0 + fs.response(i) } else { 1.0 };
    let r = rp.r();
    out.clear();
    out.extend(phases.iter().map(|&x| if x >= r { boosted } else { 1.0 }));
}

/// Speed of every cell: `1 + f(I)` inside `R` when `I > 0`, otherwise `1`.
pub fn cell_speeds(pop: &Population, rp: &RegionParams, fs: &FeedbackSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(pop.len());
    speeds_into(pop.phases(), pop.weights(), pop.total_weight(), rp, fs, &mut out);
    out
}

/// Time until the next boundary crossing and the cells that cross then.
#[derive(Debug, Clone, PartialEq)]
pub struct NextEvent {
    pub dt: f64,
    pub cells: Vec<usize>,
}

fn next_event_of(phases: &[f64], speeds: &[f64], rp: &RegionParams, time: f64) -> Result<NextEvent> {
    let mut dt = f64::INFINITY;
    for (&x, &v) in phases.iter().zip(speeds) {
        dt = dt.min((rp.next_boundary(x) - x) / v);
    }
    if !(dt > 0.0) {
        return Err(Error::NonPositiveStep { dt, time });
    }
    let cells = phases
        .iter()
        .zip(speeds)
        .enumerate()
        .filter(|(_, (&x, &v))| (rp.next_boundary(x) - x) / v - dt <= EVENT_TIE_TOLERANCE)
        .map(|(i, _)| i)
        .collect();
    Ok(NextEvent { dt, cells })
}

pub fn next_event(pop: &Population, rp: &RegionParams, fs: &FeedbackSpec) -> Result<NextEvent> {
    let speeds = cell_speeds(pop, rp, fs);
    next_event_of(pop.phases(), &speeds, rp, 0.0)
}

/// Event-driven integrator holding the evolving state.
#[derive(Debug, Clone)]
pub struct ExactStepper {
    rp: RegionParams,
    fs: FeedbackSpec,
    phases: Vec<f64>,
    weights: Option<Vec<f64>>,
    total: f64,
    speeds: Vec<f64>,
    time: f64,
    batches: usize,
}

impl ExactStepper {
    pub fn new(pop: &Population, rp: &RegionParams, fs: &FeedbackSpec) -> Self {
        let mut stepper = ExactStepper {
            rp: *rp,
            fs: fs.clone(),
            phases: pop.phases().to_vec(),
            weights: pop.weights().map(<[f64]>::to_vec),
            total: pop.total_weight(),
            speeds: Vec::with_capacity(pop.len()),
            time: 0.0,
            batches: 0,
        };
        stepper.refresh_speeds();
        stepper
    }

    fn refresh_speeds(&mut self) {
        speeds_into(
            &self.phases,
            self.weights.as_deref(),
            self.total,
            &self.rp,
            &self.fs,
            &mut self.speeds,
        );
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    /// Number of event batches processed so far.
    pub fn batches(&self) -> usize {
        self.batches
    }

    pub fn signaling_fraction(&self) -> f64 {
        signaling_fraction_of(&self.phases, self.weights.as_deref(), self.total, &self.rp)
    }

    pub fn next_event(&self) -> Result<NextEvent> {
        next_event_of(&self.phases, &self.speeds, &self.rp, self.time)
    }

    /// Phases after moving for `dt` at the current speeds. Only meaningful
    /// when `dt` does not exceed the time to the next event.
    pub fn peek(&self, dt: f64) -> Vec<f64> {
        self.phases
            .iter()
            .zip(&self.speeds)
            .map(|(x, v)| x + v * dt)
            .collect()
    }

    /// Moves every cell for `dt`, which must not exceed the time to the next
    /// event.
    pub fn drift(&mut self, dt: f64) {
        for (x, v) in self.phases.iter_mut().zip(&self.speeds) {
            *x += v * dt;
        }
        self.time += dt;
    }

    /// Advances to the next crossing, processes every cell that reaches a
    /// boundary there in one batch and recomputes the speeds once.
    pub fn step(&mut self) -> Result<Vec<EventRecord>> {
        let next = self.next_event()?;
        Ok(self.apply(next))
    }

    pub(crate) fn apply(&mut self, next: NextEvent) -> Vec<EventRecord> {
        let NextEvent { dt, cells } = next;
        let mut events = Vec::with_capacity(cells.len());
        let mut hits = cells.iter().peekable();
        for (i, (x, v)) in self.phases.iter_mut().zip(&self.speeds).enumerate() {
            if hits.peek() == Some(&&i) {
                hits.next();
                let boundary = self.rp.next_boundary(*x);
                events.push(EventRecord {
                    time: self.time + dt,
                    kind: EventKind::at_boundary(boundary, &self.rp),
                    cell: i,
                });
                *x = if boundary >= 1.0 { 0.0 } else { boundary };
            } else {
                *x += v * dt;
            }
        }
        self.time += dt;
        self.batches += 1;
        self.refresh_speeds();
        events
    }

    pub fn region_of(&self, i: usize) -> Region {
        self.rp.region_of(self.phases[i])
    }
}

/// Exact trajectory of `pop` over `[0, duration]`.
pub fn simulate_exact(
    pop: &Population,
    rp: &RegionParams,
    fs: &FeedbackSpec,
    duration: f64,
    opts: &ExactOptions,
) -> Result<Trajectory> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(invalid(format!("duration {duration} must be positive")));
    }
    let mut stepper = ExactStepper::new(pop, rp, fs);
    let mut traj = Trajectory {
        samples: vec![Snapshot {
            time: 0.0,
            phases: stepper.phases().to_vec(),
        }],
        events: Vec::new(),
        seed: None,
    };
    let interval = match opts.schedule {
        SampleSchedule::Interval(tau) if tau > 0.0 => Some(tau),
        SampleSchedule::Interval(tau) => {
            return Err(invalid(format!("sample interval {tau} must be positive")))
        }
        _ => None,
    };
    let mut next_sample_idx = 1u64;

    loop {
        let next = stepper.next_event()?;
        let t0 = stepper.time();
        let t_event = t0 + next.dt;
        let horizon = t_event.min(duration);

        if let Some(tau) = interval {
            loop {
                let ts = next_sample_idx as f64 * tau;
                if ts >= horizon || ts >= duration - EVENT_TIE_TOLERANCE {
                    break;
                }
                traj.samples.push(Snapshot {
                    time: ts,
                    phases: stepper.peek(ts - t0),
                });
                next_sample_idx += 1;
            }
        }

        if t_event > duration + EVENT_TIE_TOLERANCE {
            stepper.drift(duration - t0);
            break;
        }
        if stepper.batches() >= opts.max_events {
            return Err(Error::EventOverflow {
                limit: opts.max_events,
                time: t0,
                params: format!("s = {}, r = {}, feedback = {:?}", rp.s(), rp.r(), fs.kind()),
            });
        }
        let events = stepper.apply(next);
        if opts.record_events {
            traj.events.extend(events);
        }
        let done = stepper.time() >= duration - EVENT_TIE_TOLERANCE;
        if opts.schedule == SampleSchedule::EveryEvent && !done {
            traj.samples.push(Snapshot {
                time: stepper.time(),
                phases: stepper.phases().to_vec(),
            });
        }
        if done {
            break;
        }
    }

    traj.samples.push(Snapshot {
        time: stepper.time(),
        phases: stepper.phases().to_vec(),
    });
    Ok(traj)
}

/// Euler–Maruyama integration: `x <- x + v dt + sigma N(0,1)` wrapped onto
/// the circle, with speeds recomputed from the current `I` at every step.
pub fn simulate_sde(
    pop: &Population,
    rp: &RegionParams,
    fs: &FeedbackSpec,
    noise: &NoiseSpec,
    duration: f64,
    seed: u64,
    schedule: &SampleSchedule,
) -> Result<Trajectory> {
    let rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = simulate_sde_with_rng(pop, rp, fs, noise, duration, rng, schedule)?;
    traj.seed = Some(seed);
    Ok(traj)
}

/// As [`simulate_sde`] with a caller-supplied random stream.
pub fn simulate_sde_with_rng<R: rand::Rng>(
    pop: &Population,
    rp: &RegionParams,
    fs: &FeedbackSpec,
    noise: &NoiseSpec,
    duration: f64,
    mut rng: R,
    schedule: &SampleSchedule,
) -> Result<Trajectory> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(invalid(format!("duration {duration} must be positive")));
    }
    let steps = (duration / noise.dt).round().max(1.0) as u64;
    let every = match schedule {
        SampleSchedule::EveryEvent => Some(1),
        SampleSchedule::Interval(tau) if *tau > 0.0 => Some(((tau / noise.dt).round() as u64).max(1)),
        SampleSchedule::Interval(tau) => {
            return Err(invalid(format!("sample interval {tau} must be positive")))
        }
        SampleSchedule::EndOnly => None,
    };

    let weights = pop.weights();
    let total = pop.total_weight();
    let mut phases = pop.phases().to_vec();
    let mut speeds = Vec::with_capacity(phases.len());
    let mut traj = Trajectory {
        samples: vec![Snapshot {
            time: 0.0,
            phases: phases.clone(),
        }],
        ..Default::default()
    };

    for step in 1..=steps {
        speeds_into(&phases, weights, total, rp, fs, &mut speeds);
        for (x, v) in phases.iter_mut().zip(&speeds) {
            let kick = if noise.sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                noise.sigma * z
            } else {
                0.0
            };
            *x = wrap_unit(*x + v * noise.dt + kick);
        }
        let keep = step == steps || every.is_some_and(|e| step % e == 0);
        if keep {
            traj.samples.push(Snapshot {
                time: step as f64 * noise.dt,
                phases: phases.clone(),
            });
        }
    }
    Ok(traj)
}

/// True when walking the cells in their initial cyclic order visits `later`
/// going once around the circle, i.e. no cell has overtaken another.
pub fn preserves_cyclic_order(initial: &[f64], later: &[f64]) -> bool {
    if initial.len() != later.len() {
        return false;
    }
    if initial.len() < 3 {
        return true;
    }
    let mut order: Vec<usize> = (0..initial.len()).collect();
    order.sort_by(|&a, &b| initial[a].total_cmp(&initial[b]).then(a.cmp(&b)));
    let mut turn = 0.0;
    for j in 0..order.len() {
        let a = later[order[j]];
        let b = later[order[(j + 1) % order.len()]];
        let mut gap = wrap_unit(b - a);
        if gap > 1.0 - 1e-9 {
            gap = 0.0;
        }
        turn += gap;
    }
    turn < 1.0 + 1e-9
}
