//! Experiment recipes that turn the library into data files.
//!
//! Every run is fully determined by its configuration and seed. Each command
//! writes CSV data plus a `<command>.meta.json` sidecar echoing the
//! configuration, its SHA-256, the seed and the tool version.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cluster::{count_clusters_histogram, DEFAULT_BINS, DEFAULT_OCCUPANCY_THRESHOLD};
use crate::cyclic::{self, beta_grid, case_one_inequalities, classify_case, Case};
use crate::error::{invalid, Error, Result};
use crate::model::{FeedbackSpec, Population, RegionParams};
use crate::pde::{flux_residual, mass, steady_profile};
use crate::retmap::{analytic_f_k2, as_piecewise, classify_k2, compose, fixed_points, numeric_f, SimplexPoint};
use crate::simulator::{simulate_exact, simulate_sde_with_rng, ExactOptions, NoiseSpec, SampleSchedule};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Largest analytic/numeric deviation of the two-cluster map accepted by
/// `retmap`.
pub const RETMAP_AGREEMENT: f64 = 1e-9;
/// Largest flux residual accepted by `pde-steady`.
pub const FLUX_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialCondition {
    /// Uniform random phases drawn from the seed.
    Random,
    /// Cells at `i / n`.
    EquallySpaced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub s: f64,
    pub r: f64,
    pub n: usize,
    pub cycles: f64,
    pub feedback: FeedbackSpec,
    pub init: InitialCondition,
    /// Explicit initial phases; overrides `n` and `init`.
    pub phases: Option<Vec<f64>>,
    /// Euler–Maruyama integration instead of exact event stepping.
    pub noise: Option<NoiseConfig>,
    /// Sampling interval; `None` keeps only the initial and final states.
    pub sample_interval: Option<f64>,
    pub record_events: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            s: 0.25,
            r: 0.75,
            n: 200,
            cycles: 100.0,
            feedback: FeedbackSpec::linear(-0.6).expect("valid default"),
            init: InitialCondition::Random,
            phases: None,
            noise: None,
            sample_interval: Some(1.0),
            record_events: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Linear gains `f(I) = gamma I`, one sweep each.
    pub gammas: Vec<f64>,
    pub n: usize,
    pub points: usize,
    pub cycles: f64,
    pub sigma: f64,
    pub steps_per_cycle: usize,
    /// Range of `(|R| + |S|)^-1`; the first point is one increment above
    /// `min_inverse_width`.
    pub min_inverse_width: f64,
    pub max_inverse_width: f64,
    pub bins: usize,
    pub occupancy_threshold: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            gammas: vec![0.6, -0.6],
            n: 1000,
            points: 60,
            cycles: 100.0,
            sigma: 1e-6,
            steps_per_cycle: 50,
            min_inverse_width: 1.0,
            max_inverse_width: 6.0,
            bins: DEFAULT_BINS,
            occupancy_threshold: DEFAULT_OCCUPANCY_THRESHOLD,
        }
    }
}

impl SweepConfig {
    /// 5000 cells and 100 sweep points.
    pub fn full_scale() -> Self {
        SweepConfig {
            n: 5000,
            points: 100,
            ..Default::default()
        }
    }

    pub fn sweep_values(&self) -> Vec<f64> {
        let step = (self.max_inverse_width - self.min_inverse_width) / self.points as f64;
        (1..=self.points)
            .map(|i| self.min_inverse_width + step * i as f64)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.points == 0 || self.n == 0 || self.steps_per_cycle == 0 {
            return Err(invalid("points, n and steps_per_cycle must be positive"));
        }
        if !(self.min_inverse_width >= 1.0 && self.max_inverse_width > self.min_inverse_width) {
            return Err(invalid(format!(
                "sweep range [{}, {}] must satisfy 1 <= min < max",
                self.min_inverse_width, self.max_inverse_width
            )));
        }
        if !(self.cycles > 0.0) {
            return Err(invalid("cycles must be positive"));
        }
        if self.gammas.is_empty() {
            return Err(invalid("no feedback gains to sweep"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVerdict {
    NoClusters,
    AtMostM,
    AboveM,
}

impl SweepVerdict {
    pub fn label(self) -> &'static str {
        match self {
            SweepVerdict::NoClusters => "none",
            SweepVerdict::AtMostM => "le_M",
            SweepVerdict::AboveM => "gt_M",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sweep_value: f64,
    pub m: usize,
    pub n_clusters: usize,
}

impl SweepPoint {
    pub fn verdict(&self) -> SweepVerdict {
        if self.n_clusters == 0 {
            SweepVerdict::NoClusters
        } else if self.n_clusters <= self.m {
            SweepVerdict::AtMostM
        } else {
            SweepVerdict::AboveM
        }
    }
}

/// Cluster counts across the sweep for one linear gain. Point `i` draws its
/// initial state and noise from stream `i` of a generator seeded with `seed`,
/// so results do not depend on scheduling.
pub fn sweep_fig4(cfg: &SweepConfig, gamma: f64, seed: u64) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    let fs = FeedbackSpec::linear(gamma)?;
    let noise = NoiseSpec::new(cfg.sigma, 1.0 / cfg.steps_per_cycle as f64)?;
    cfg.sweep_values()
        .into_par_iter()
        .enumerate()
        .map(|(i, x)| {
            let rp = RegionParams::symmetric(x)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let pop = Population::random_uniform(cfg.n, &mut rng)?;
            let traj = simulate_sde_with_rng(&pop, &rp, &fs, &noise, cfg.cycles, rng, &SampleSchedule::EndOnly)?;
            let last = traj.final_snapshot().expect("final state is always kept");
            let end = pop.with_phases(last.phases.clone())?;
            Ok(SweepPoint {
                sweep_value: x,
                m: rp.max_isolated_clusters(),
                n_clusters: count_clusters_histogram(&end, cfg.bins, cfg.occupancy_threshold)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetmapConfig {
    pub s: f64,
    pub r: f64,
    pub alpha: f64,
    /// Samples of `[0, 1]` in the output tables.
    pub grid: usize,
    /// Power of `F` whose fixed points are reported.
    pub compose: usize,
    /// Also evaluate `F` by simulation and compare.
    pub numeric_check: bool,
}

impl Default for RetmapConfig {
    fn default() -> Self {
        RetmapConfig {
            s: 0.2,
            r: 0.6,
            alpha: 0.5,
            grid: 1000,
            compose: 2,
            numeric_check: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CyclicConfig {
    /// Cluster counts for the spectrum table.
    pub ks: Vec<usize>,
    pub beta_points: usize,
    /// Resolution of the `(r, s)` region grid.
    pub grid: usize,
}

impl Default for CyclicConfig {
    fn default() -> Self {
        CyclicConfig {
            ks: vec![2, 4, 6, 8, 10, 12],
            beta_points: 50,
            grid: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeConfig {
    pub s: f64,
    pub r: f64,
    pub c: f64,
    pub feedback: FeedbackSpec,
    pub points: usize,
}

impl Default for PdeConfig {
    fn default() -> Self {
        PdeConfig {
            s: 0.25,
            r: 0.75,
            c: 1.0,
            feedback: FeedbackSpec::linear(0.6).expect("valid default"),
            points: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub config: Value,
    pub outputs: Vec<String>,
    pub summary: Value,
}

/// SHA-256 of the compact JSON form of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let text = serde_json::to_string(config)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

struct Run<'a> {
    out: &'a Path,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn new(out: &'a Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Run {
            out,
            outputs: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn finish<T: Serialize>(
        self,
        command: &str,
        config: &T,
        seed: Option<u64>,
        summary: Value,
    ) -> Result<RunMetadata> {
        let meta = RunMetadata {
            tool: "cellcycle".into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            seed,
            config_sha256: config_hash(config)?,
            config: serde_json::to_value(config)?,
            outputs: self.outputs,
            summary,
        };
        let path: PathBuf = self.out.join(format!("{command}.meta.json"));
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, &meta)?;
        writeln!(f)?;
        f.flush()?;
        Ok(meta)
    }
}

pub fn run_simulate(cfg: &SimulateConfig, seed: u64, out: &Path) -> Result<RunMetadata> {
    let rp = RegionParams::new(cfg.s, cfg.r)?;
    let pop = match (&cfg.phases, cfg.init) {
        (Some(phases), _) => Population::new(phases.clone())?,
        (None, InitialCondition::EquallySpaced) => Population::equally_spaced(cfg.n)?,
        (None, InitialCondition::Random) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Population::random_uniform(cfg.n, &mut rng)?
        }
    };
    let schedule = match cfg.sample_interval {
        Some(tau) => SampleSchedule::Interval(tau),
        None => SampleSchedule::EndOnly,
    };
    let traj = match &cfg.noise {
        Some(noise) => {
            if cfg.record_events {
                return Err(invalid("events are only recorded by exact integration"));
            }
            let noise = NoiseSpec::new(noise.sigma, noise.dt)?;
            // stream 1 keeps the noise independent of a random initial draw
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let mut traj = simulate_sde_with_rng(&pop, &rp, &cfg.feedback, &noise, cfg.cycles, rng, &schedule)?;
            traj.seed = Some(seed);
            traj
        }
        None => {
            let opts = ExactOptions {
                schedule,
                record_events: cfg.record_events,
                ..Default::default()
            };
            simulate_exact(&pop, &rp, &cfg.feedback, cfg.cycles, &opts)?
        }
    };

    let mut run = Run::new(out)?;
    let mut f = run.create("trajectory.csv")?;
    traj.write_csv(&mut f)?;
    f.flush()?;
    if cfg.record_events {
        let mut f = run.create("events.csv")?;
        traj.write_events_csv(&mut f)?;
        f.flush()?;
    }
    let summary = json!({
        "cells": pop.len(),
        "M": rp.max_isolated_clusters(),
        "samples": traj.samples.len(),
        "events": traj.events.len(),
        "final_clusters_histogram": count_clusters_histogram(
            &pop.with_phases(traj.final_snapshot().expect("final state").phases.clone())?,
            DEFAULT_BINS,
            DEFAULT_OCCUPANCY_THRESHOLD,
        )?,
    });
    run.finish("simulate", cfg, Some(seed), summary)
}

fn gain_tag(gamma: f64) -> String {
    format!("g{gamma}")
}

pub fn run_sweep(cfg: &SweepConfig, seed: u64, out: &Path) -> Result<RunMetadata> {
    cfg.validate()?;
    let mut run = Run::new(out)?;
    let mut summary = serde_json::Map::new();
    for &gamma in &cfg.gammas {
        let points = sweep_fig4(cfg, gamma, seed)?;
        let mut f = run.create(&format!("sweep_fig4_{}.csv", gain_tag(gamma)))?;
        writeln!(f, "sweep_value,M,N,verdict")?;
        for p in &points {
            writeln!(f, "{},{},{},{}", p.sweep_value, p.m, p.n_clusters, p.verdict().label())?;
        }
        f.flush()?;
        let count = |v: SweepVerdict| points.iter().filter(|p| p.verdict() == v).count();
        summary.insert(
            gain_tag(gamma),
            json!({
                "points": points.len(),
                "none": count(SweepVerdict::NoClusters),
                "le_M": count(SweepVerdict::AtMostM),
                "gt_M": count(SweepVerdict::AboveM),
                "one_cluster": points.iter().filter(|p| p.n_clusters == 1).count(),
            }),
        );
    }
    run.finish("sweep-fig4", cfg, Some(seed), Value::Object(summary))
}

/// Largest deviation between simulated and closed-form `F` over `grid + 1`
/// points, with feedback equal to `alpha` from `I = 1/2` on.
pub fn retmap_agreement(rp: &RegionParams, alpha: f64, grid: usize) -> Result<Vec<(f64, f64, f64)>> {
    let fs = FeedbackSpec::saturating_at(0.5, alpha)?;
    (0..=grid)
        .into_par_iter()
        .map(|j| {
            let x = j as f64 / grid as f64;
            let num = numeric_f(&SimplexPoint::new(vec![x])?, rp, &fs, None)?;
            Ok((x, analytic_f_k2(x, rp, alpha), num.point.coords()[0]))
        })
        .collect()
}

pub fn run_retmap(cfg: &RetmapConfig, out: &Path) -> Result<RunMetadata> {
    let rp = RegionParams::new(cfg.s, cfg.r)?;
    if cfg.grid == 0 {
        return Err(invalid("grid must be positive"));
    }
    let dynamics = classify_k2(&rp, cfg.alpha)?;
    let f = as_piecewise(&rp, cfg.alpha)?;
    let f2 = compose(&f, 2)?;
    let fk = compose(&f, cfg.compose)?;
    let report = fixed_points(&fk)?;

    let mut run = Run::new(out)?;
    let mut w = run.create("retmap.csv")?;
    writeln!(w, "x,F(x),F2(x)")?;
    for j in 0..=cfg.grid {
        let x = j as f64 / cfg.grid as f64;
        writeln!(w, "{x},{},{}", f.eval(x), f2.eval(x))?;
    }
    w.flush()?;

    let mut w = run.create("retmap_fixed_points.json")?;
    serde_json::to_writer_pretty(
        &mut w,
        &json!({ "dynamics": dynamics, "power": cfg.compose, "report": report }),
    )?;
    writeln!(w)?;
    w.flush()?;

    let mut max_dev = None;
    if cfg.numeric_check {
        let rows = retmap_agreement(&rp, cfg.alpha, cfg.grid)?;
        let mut w = run.create("retmap_numeric.csv")?;
        writeln!(w, "x,analytic,numeric,abs_diff")?;
        let mut worst: f64 = 0.0;
        for (x, a, n) in rows {
            writeln!(w, "{x},{a},{n},{}", (a - n).abs())?;
            worst = worst.max((a - n).abs());
        }
        w.flush()?;
        if worst >= RETMAP_AGREEMENT {
            return Err(Error::Certificate(format!(
                "simulated and closed-form F differ by {worst:e}"
            )));
        }
        max_dev = Some(worst);
    }
    let summary = json!({
        "dynamics": dynamics,
        "segments_F": f.len(),
        "segments_power": fk.len(),
        "interior_fixed_points": report.interior_points().count(),
        "neutral_intervals": report.neutral_intervals,
        "max_numeric_deviation": max_dev,
    });
    run.finish("retmap", cfg, None, summary)
}

/// Region grid point: `(r, s, k, case)` with `k = M + 1` and `beta = 1/k`.
pub fn region_grid(grid: usize) -> Result<Vec<(f64, f64, usize, Case)>> {
    let cells: Vec<(f64, f64)> = (0..grid)
        .flat_map(|i| (0..grid).map(move |j| ((j as f64 + 0.5) / grid as f64, (i as f64 + 0.5) / grid as f64)))
        .filter(|(r, s)| s < r)
        .collect();
    cells
        .into_par_iter()
        .map(|(r, s)| {
            let rp = RegionParams::new(s, r)?;
            let k = rp.max_isolated_clusters() + 1;
            Ok((r, s, k, classify_case(&rp, k, 1.0 / k as f64)?))
        })
        .collect()
}

/// Region parameters inside the `k = M + 1` band whose Case I inequalities
/// select `case` with the widest margin, found on a coarse grid.
pub fn representative_params(k: usize, beta: f64, case: Case) -> Option<RegionParams> {
    let lo = 1.0 / k as f64;
    let hi = if k == 2 { 1.0 } else { 1.0 / (k - 1) as f64 };
    let mut best: Option<(f64, RegionParams)> = None;
    for a in 1..40 {
        let w = lo + (hi - lo) * a as f64 / 40.0;
        for b in 1..40 {
            let s = w * b as f64 / 40.0;
            let Ok(rp) = RegionParams::new(s, 1.0 - w + s) else { continue };
            if rp.max_isolated_clusters() + 1 != k {
                continue;
            }
            let kf = k as f64;
            let s_slack = (1.0 / kf) * (1.0 + beta * rp.r()) / (1.0 + beta) - s;
            let r_slack = rp.r() - ((kf - 1.0) / kf) * (1.0 - s * beta);
            let margin = match (case, case_one_inequalities(&rp, k, beta)) {
                (Case::I, (true, true)) => s_slack.min(r_slack),
                (Case::II, (true, false)) => s_slack.min(-r_slack),
                (Case::III, (false, true)) => (-s_slack).min(r_slack),
                _ => continue,
            };
            if best.as_ref().is_none_or(|(m, _)| margin > *m) {
                best = Some((margin, rp));
            }
        }
    }
    best.map(|(_, rp)| rp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub k: usize,
    pub beta: f64,
    pub case: Case,
    /// Spacing at a representative parameter point of the case, if any.
    pub d: Option<f64>,
    pub spectral_radius: f64,
    pub min_modulus: f64,
}

pub fn spectrum_rows(ks: &[usize], betas: &[f64]) -> Result<Vec<SpectrumRow>> {
    let jobs: Vec<(usize, f64, Case)> = ks
        .iter()
        .flat_map(|&k| Case::ALL.into_iter().flat_map(move |c| betas.iter().map(move |&b| (k, b, c))))
        .collect();
    jobs.into_par_iter()
        .map(|(k, beta, case)| {
            let rep = cyclic::spectrum(k, beta, case)?;
            let d = match representative_params(k, beta, case) {
                Some(rp) => {
                    let sol = cyclic::cyclic_solution(&rp, k, beta)?;
                    if sol.case != case {
                        return Err(Error::Certificate(format!(
                            "representative point for case {case} classified as {}",
                            sol.case
                        )));
                    }
                    Some(sol.d)
                }
                None => None,
            };
            Ok(SpectrumRow {
                k,
                beta,
                case,
                d,
                spectral_radius: rep.spectral_radius,
                min_modulus: rep.min_modulus,
            })
        })
        .collect()
}

pub fn run_cyclic(cfg: &CyclicConfig, out: &Path) -> Result<RunMetadata> {
    if cfg.ks.iter().any(|&k| k < 2) || cfg.beta_points == 0 || cfg.grid == 0 {
        return Err(invalid("need k >= 2 and positive grid sizes"));
    }
    let regions = region_grid(cfg.grid)?;
    let rows = spectrum_rows(&cfg.ks, &beta_grid(cfg.beta_points))?;

    let mut run = Run::new(out)?;
    let mut w = run.create("cyclic_regions.csv")?;
    writeln!(w, "r,s,k,case")?;
    for (r, s, k, case) in &regions {
        writeln!(w, "{r},{s},{k},{case}")?;
    }
    w.flush()?;

    let mut w = run.create("cyclic_spectrum.csv")?;
    writeln!(w, "k,beta,case,d,spectral_radius,min_modulus")?;
    for row in &rows {
        let d = row.d.map_or_else(String::new, |d| d.to_string());
        writeln!(
            w,
            "{},{},{},{d},{},{}",
            row.k, row.beta, row.case, row.spectral_radius, row.min_modulus
        )?;
    }
    w.flush()?;

    let count = |c: Case| regions.iter().filter(|g| g.3 == c).count();
    let summary = json!({
        "grid_points": regions.len(),
        "case_I": count(Case::I),
        "case_II": count(Case::II),
        "case_III": count(Case::III),
        "spectrum_rows": rows.len(),
    });
    run.finish("cyclic", cfg, None, summary)
}

pub fn run_pde(cfg: &PdeConfig, out: &Path) -> Result<RunMetadata> {
    let rp = RegionParams::new(cfg.s, cfg.r)?;
    if cfg.points == 0 {
        return Err(invalid("points must be positive"));
    }
    let p = steady_profile(cfg.c, &rp, &cfg.feedback)?;
    let residual = flux_residual(&p, &rp, &cfg.feedback)?;
    if residual >= FLUX_TOLERANCE {
        return Err(Error::Certificate(format!("flux residual {residual:e}")));
    }
    let mut run = Run::new(out)?;
    let mut w = run.create("pde_steady.csv")?;
    p.write_csv(&mut w, cfg.points)?;
    w.flush()?;
    let summary = json!({
        "off_r_level": p.off_r_level,
        "on_r_level": p.on_r_level,
        "signaling": p.signaling,
        "mass": mass(&p),
        "flux_residual": residual,
    });
    run.finish("pde-steady", cfg, None, summary)
}
