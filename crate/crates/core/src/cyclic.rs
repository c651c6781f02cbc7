//! Cyclic solutions of `k = M + 1` equal clusters.
//!
//! With clusters at `0, d, ..., (k-1)d`, one advance of the return map
//! passes through one of three event sequences:
//!
//! * Case I: `x_{k-1} -> r`, `x_0 -> s`, `x_{k-1} -> 1`
//! * Case II: `x_0 -> s`, `x_{k-1} -> 1` (leader starts inside `R`)
//! * Case III: `x_1 -> s`, `x_{k-1} -> r`, `x_{k-1} -> 1` (two clusters start in `S`)
//!
//! Only `beta = f(1/k)` enters, since at most one cluster is in `S` while `R`
//! is occupied.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{FeedbackSpec, Population, RegionParams};
use crate::retmap::{numeric_f, SimplexPoint};
use crate::simulator::{EventKind, ExactStepper};

/// Closure residual accepted when checking a spacing by simulation.
pub const CLOSURE_TOLERANCE: f64 = 1e-9;
/// Allowed disagreement between polynomial roots and eigenvalues of `A`.
pub const SPECTRUM_AGREEMENT: f64 = 1e-8;
pub const ROOT_REQUIREMENT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    I,
    II,
    III,
}

impl Case {
    pub const ALL: [Case; 3] = [Case::I, Case::II, Case::III];

    pub fn label(self) -> &'static str {
        match self {
            Case::I => "I",
            Case::II => "II",
            Case::III => "III",
        }
    }
}

impl std::fmt::Display for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "I" | "1" => Ok(Case::I),
            "II" | "2" => Ok(Case::II),
            "III" | "3" => Ok(Case::III),
            other => Err(invalid(format!("unknown case {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicSolution {
    pub k: usize,
    pub d: f64,
    pub case: Case,
    pub beta: f64,
}

impl CyclicSolution {
    /// Cluster positions `(d, 2d, ..., (k-1)d)` relative to the trailing one.
    pub fn point(&self) -> Result<SimplexPoint> {
        SimplexPoint::equally_spaced(self.k, self.d)
    }

    pub fn population(&self) -> Result<Population> {
        Population::equal_clusters((0..self.k).map(|i| i as f64 * self.d).collect())
    }
}

fn check_k_beta(k: usize, beta: f64) -> Result<()> {
    if k < 2 {
        return Err(invalid(format!("k = {k}: need at least two clusters")));
    }
    if !(beta > -1.0 && beta.is_finite()) {
        return Err(invalid(format!("beta = {beta} must exceed -1")));
    }
    Ok(())
}

/// Spacing `d` given by the formula for `case`.
pub fn cyclic_spacing(case: Case, rp: &RegionParams, k: usize, beta: f64) -> Result<f64> {
    check_k_beta(k, beta)?;
    let (r, s, kf) = (rp.r(), rp.s(), k as f64);
    let d = match case {
        Case::I => (1.0 + beta * (r - s)) / (kf + beta * (kf - 1.0)),
        Case::II => (1.0 - s * beta) / kf,
        Case::III => (1.0 + r * beta) / (kf * (1.0 + beta)),
    };
    if !(d > 0.0 && d < 1.0) {
        return Err(invalid(format!(
            "spacing d = {d} outside (0, 1) for case {case}, k = {k}, beta = {beta}"
        )));
    }
    Ok(d)
}

/// The two inequalities that select Case I: `(s < d, r > (k-1)d)` with the
/// Case I spacing.
pub fn case_one_inequalities(rp: &RegionParams, k: usize, beta: f64) -> (bool, bool) {
    let (r, s, kf) = (rp.r(), rp.s(), k as f64);
    let s_ok = s < (1.0 / kf) * (1.0 + beta * r) / (1.0 + beta);
    let r_ok = r > ((kf - 1.0) / kf) * (1.0 - s * beta);
    (s_ok, r_ok)
}

/// Feedback with `f(I) = beta` for every `I >= 1/k`, used to realise a
/// cyclic solution in simulation.
pub fn realising_feedback(k: usize, beta: f64) -> Result<FeedbackSpec> {
    FeedbackSpec::saturating_at(1.0 / k as f64, beta)
}

/// `max |F(p) - p|` for the cyclic configuration, computed by exact
/// simulation.
pub fn closure_residual(sol: &CyclicSolution, rp: &RegionParams) -> Result<f64> {
    let fs = realising_feedback(sol.k, sol.beta)?;
    let p = sol.point()?;
    let img = numeric_f(&p, rp, &fs, None)?;
    Ok(img.point.max_abs_diff(&p).max((img.time - sol.d).abs()))
}

/// A boundary crossing of one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Milestone {
    pub cluster: usize,
    pub kind: EventKind,
}

/// Crossings of the cyclic configuration up to the leading cluster reaching 1,
/// with their times.
pub fn milestones(sol: &CyclicSolution, rp: &RegionParams) -> Result<Vec<(f64, Milestone)>> {
    let fs = realising_feedback(sol.k, sol.beta)?;
    let mut stepper = ExactStepper::new(&sol.population()?, rp, &fs);
    let lead = sol.k - 1;
    let mut out = Vec::new();
    for _ in 0..(8 * sol.k + 16) {
        let events = stepper.step()?;
        let mut done = false;
        for e in events {
            done |= e.cell == lead && e.kind == EventKind::CycleEnd;
            out.push((
                e.time,
                Milestone {
                    cluster: e.cell,
                    kind: e.kind,
                },
            ));
        }
        if done {
            return Ok(out);
        }
    }
    Err(Error::Certificate(format!(
        "leading cluster of {sol:?} did not reach 1"
    )))
}

/// The defining milestones of a case, in order.
pub fn case_sequence(case: Case, k: usize) -> Vec<Milestone> {
    let m = |cluster, kind| Milestone { cluster, kind };
    let lead = k - 1;
    match case {
        Case::I => vec![
            m(lead, EventKind::EnterResponsive),
            m(0, EventKind::LeaveSignaling),
            m(lead, EventKind::CycleEnd),
        ],
        Case::II => vec![m(0, EventKind::LeaveSignaling), m(lead, EventKind::CycleEnd)],
        Case::III => vec![
            m(1, EventKind::LeaveSignaling),
            m(lead, EventKind::EnterResponsive),
            m(lead, EventKind::CycleEnd),
        ],
    }
}

/// Why a candidate case does or does not describe the dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseCheck {
    pub case: Case,
    pub d: Option<f64>,
    pub residual: Option<f64>,
    pub sequence_ok: bool,
}

impl CaseCheck {
    pub fn consistent(&self) -> bool {
        self.sequence_ok && self.residual.is_some_and(|r| r < CLOSURE_TOLERANCE)
    }
}

/// Recomputes `d` for `case`, simulates one advance and checks both the
/// closure and the defining event order (ties within the event tolerance
/// count as ordered).
pub fn check_case(case: Case, rp: &RegionParams, k: usize, beta: f64) -> Result<CaseCheck> {
    let Ok(d) = cyclic_spacing(case, rp, k, beta) else {
        return Ok(CaseCheck {
            case,
            d: None,
            residual: None,
            sequence_ok: false,
        });
    };
    let sol = CyclicSolution { k, d, case, beta };
    let residual = closure_residual(&sol, rp)?;
    let seen = milestones(&sol, rp)?;
    let mut last_time = f64::NEG_INFINITY;
    let mut sequence_ok = true;
    for want in case_sequence(case, k) {
        match seen.iter().find(|(_, m)| *m == want) {
            Some(&(t, _)) if t >= last_time - 1e-12 => last_time = t,
            _ => {
                // starting exactly on the boundary means the crossing is at t = 0
                let at_start = match want.kind {
                    EventKind::EnterResponsive => ((want.cluster as f64) * d - rp.r()).abs() <= 1e-12,
                    EventKind::LeaveSignaling => ((want.cluster as f64) * d - rp.s()).abs() <= 1e-12,
                    EventKind::CycleEnd => false,
                };
                if !(at_start && last_time <= 1e-12) {
                    sequence_ok = false;
                    break;
                }
                last_time = last_time.max(0.0);
            }
        }
    }
    Ok(CaseCheck {
        case,
        d: Some(d),
        residual: Some(residual),
        sequence_ok,
    })
}

/// Selects the case from the Case I inequalities and confirms it by
/// simulation. When both inequalities fail, Cases II and III are each
/// checked and exactly one must be consistent.
pub fn classify_case(rp: &RegionParams, k: usize, beta: f64) -> Result<Case> {
    check_k_beta(k, beta)?;
    let m = rp.max_isolated_clusters();
    if k != m + 1 {
        log::warn!("k = {k} but M + 1 = {} for s = {}, r = {}", m + 1, rp.s(), rp.r());
    }
    let candidates: &[Case] = match case_one_inequalities(rp, k, beta) {
        (true, true) => &[Case::I],
        (true, false) => &[Case::II],
        (false, true) => &[Case::III],
        (false, false) => &[Case::II, Case::III],
    };
    let checks = candidates
        .iter()
        .map(|&c| check_case(c, rp, k, beta))
        .collect::<Result<Vec<_>>>()?;
    let good: Vec<Case> = checks.iter().filter(|c| c.consistent()).map(|c| c.case).collect();
    match good.as_slice() {
        [case] => Ok(*case),
        _ => Err(Error::Certificate(format!(
            "no unique consistent case for s = {}, r = {}, k = {k}, beta = {beta}: {checks:?}",
            rp.s(),
            rp.r()
        ))),
    }
}

/// Classifies and returns the solution with its spacing.
pub fn cyclic_solution(rp: &RegionParams, k: usize, beta: f64) -> Result<CyclicSolution> {
    let case = classify_case(rp, k, beta)?;
    let d = cyclic_spacing(case, rp, k, beta)?;
    Ok(CyclicSolution { k, d, case, beta })
}

/// Linear part of the return map at the cyclic fixed point, in the
/// coordinates `(x_1, ..., x_{k-1})`.
pub fn build_a(k: usize, beta: f64, case: Case) -> DMatrix<f64> {
    assert!(k >= 2, "k must be at least 2");
    let n = k - 1;
    let last = match case {
        Case::I => -(1.0 + beta),
        Case::II | Case::III => -1.0,
    };
    DMatrix::from_fn(n, n, |i, j| {
        if j == n - 1 {
            last
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    })
}

/// Coefficients `c_0, ..., c_{n-1}` of the monic characteristic polynomial
/// `λ^n + c_{n-1} λ^{n-1} + ... + c_0` of `A`, `n = k - 1`.
fn char_poly(k: usize, beta: f64, case: Case) -> Vec<f64> {
    let c = match case {
        Case::I => 1.0 + beta,
        Case::II | Case::III => 1.0,
    };
    vec![c; k - 1]
}

fn poly_eval(coeffs: &[f64], z: Complex<f64>) -> (Complex<f64>, Complex<f64>) {
    // Horner on the monic polynomial and its derivative.
    let mut p = Complex::new(1.0, 0.0);
    let mut dp = Complex::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// Roots of the characteristic polynomial via its Frobenius companion
/// matrix, each polished by Newton steps.
pub fn polynomial_roots(k: usize, beta: f64, case: Case) -> Vec<Complex<f64>> {
    let coeffs = char_poly(k, beta, case);
    let n = coeffs.len();
    let companion = DMatrix::from_fn(n, n, |i, j| {
        if i == 0 {
            -coeffs[n - 1 - j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion
        .complex_eigenvalues()
        .iter()
        .map(|&z0| {
            let mut z = z0;
            for _ in 0..8 {
                let (p, dp) = poly_eval(&coeffs, z);
                if dp.norm() == 0.0 {
                    break;
                }
                let step = p / dp;
                z -= step;
                if step.norm() < 1e-16 {
                    break;
                }
            }
            z
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// `(re, im)` pairs sorted by modulus, then argument.
    pub eigenvalues: Vec<(f64, f64)>,
    pub spectral_radius: f64,
    pub min_modulus: f64,
    /// Root-requirement residual per eigenvalue (Case I only).
    pub residuals: Vec<f64>,
}

impl SpectrumReport {
    pub fn moduli(&self) -> impl Iterator<Item = f64> + '_ {
        self.eigenvalues.iter().map(|&(re, im)| re.hypot(im))
    }
}

/// `|((λ + β)/(1 + β)) λ^{k-1} - 1|`, zero exactly for the Case I
/// eigenvalues.
pub fn verify_root_requirement(lambda: Complex<f64>, k: usize, beta: f64) -> Result<f64> {
    if lambda == Complex::new(1.0, 0.0) {
        return Err(invalid("λ = 1 is excluded from the root requirement"));
    }
    if k < 2 || beta <= -1.0 {
        return Err(invalid(format!("k = {k}, beta = {beta}")));
    }
    let lhs = (lambda + beta) / (1.0 + beta) * lambda.powu((k - 1) as u32);
    Ok((lhs - 1.0).norm())
}

/// Eigenvalues of `A` computed twice, from the characteristic polynomial and
/// from `A` directly; the two must agree.
pub fn spectrum(k: usize, beta: f64, case: Case) -> Result<SpectrumReport> {
    check_k_beta(k, beta)?;
    if case == Case::I && beta == 0.0 {
        return Err(invalid("Case I spectrum needs beta != 0"));
    }
    let mut roots = polynomial_roots(k, beta, case);
    let direct: Vec<Complex<f64>> = build_a(k, beta, case).complex_eigenvalues().iter().copied().collect();

    let mut unmatched = direct.clone();
    for z in &roots {
        let (idx, dist) = unmatched
            .iter()
            .enumerate()
            .map(|(i, w)| (i, (w - z).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::Certificate("eigenvalue count mismatch".into()))?;
        if dist > SPECTRUM_AGREEMENT {
            return Err(Error::Certificate(format!(
                "root {z} has no eigenvalue of A within {SPECTRUM_AGREEMENT:e} (nearest {dist:e}); k = {k}, beta = {beta}, case {case}"
            )));
        }
        unmatched.swap_remove(idx);
    }

    roots.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.arg().total_cmp(&b.arg())));
    let residuals = if case == Case::I {
        roots
            .iter()
            .map(|&z| verify_root_requirement(z, k, beta))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let moduli: Vec<f64> = roots.iter().map(|z| z.norm()).collect();
    Ok(SpectrumReport {
        eigenvalues: roots.iter().map(|z| (z.re, z.im)).collect(),
        spectral_radius: moduli.iter().copied().fold(0.0, f64::max),
        min_modulus: moduli.iter().copied().fold(f64::INFINITY, f64::min),
        residuals,
    })
}

/// The grid `-0.5 + (j + 0.5)/50`, `j = 0..50`: fifty values in
/// `(-0.5, 0.5)` avoiding zero.
pub fn beta_grid(points: usize) -> Vec<f64> {
    (0..points)
        .map(|j| -0.5 + (j as f64 + 0.5) / points as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rp(s: f64, r: f64) -> RegionParams {
        RegionParams::new(s, r).unwrap()
    }

    #[test]
    fn case_one_example() {
        let p = rp(0.15, 0.6);
        assert_eq!(case_one_inequalities(&p, 2, -0.3), (true, true));
        let sol = cyclic_solution(&p, 2, -0.3).unwrap();
        assert_eq!(sol.case, Case::I);
        assert!((sol.d - 0.865 / 1.7).abs() < 1e-15);
        assert!(closure_residual(&sol, &p).unwrap() < 1e-12);
    }

    #[test]
    fn case_two_example() {
        let p = rp(0.1, 0.65);
        assert_eq!(p.max_isolated_clusters(), 2);
        let sol = cyclic_solution(&p, 3, -0.2).unwrap();
        assert_eq!(sol.case, Case::II);
        assert!((sol.d - 0.34).abs() < 1e-15);
        assert!(closure_residual(&sol, &p).unwrap() < 1e-12);
    }

    #[test]
    fn zero_feedback_spacing_is_uniform() {
        let p = rp(0.2, 0.7);
        for case in Case::ALL {
            for k in 2..6 {
                assert!((cyclic_spacing(case, &p, k, 0.0).unwrap() - 1.0 / k as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn matrices() {
        assert_eq!(build_a(2, 0.3, Case::I), DMatrix::from_element(1, 1, -1.3));
        assert_eq!(
            build_a(3, 0.3, Case::I),
            DMatrix::from_row_slice(2, 2, &[0.0, -1.3, 1.0, -1.3])
        );
        assert_eq!(
            build_a(3, 0.3, Case::II),
            DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, -1.0])
        );
    }

    #[test]
    fn spectrum_examples() {
        let rep = spectrum(2, 0.5, Case::I).unwrap();
        assert!((rep.spectral_radius - 1.5).abs() < 1e-12);
        assert!((rep.eigenvalues[0].0 + 1.5).abs() < 1e-12);
        assert!(rep.residuals[0] < 1e-15);

        let rep = spectrum(2, 0.5, Case::II).unwrap();
        assert!((rep.eigenvalues[0].0 + 1.0).abs() < 1e-12);
        assert!(spectrum(3, 0.0, Case::I).is_err());
    }

    #[test]
    fn root_requirement() {
        assert_eq!(verify_root_requirement(Complex::new(-1.5, 0.0), 2, 0.5).unwrap(), 0.0);
        assert!(verify_root_requirement(Complex::new(1.0, 0.0), 3, 0.5).is_err());
        let rep = spectrum(5, -0.3, Case::I).unwrap();
        for &(re, im) in &rep.eigenvalues {
            let z = Complex::new(re, im);
            assert!(verify_root_requirement(z, 5, -0.3).unwrap() < 1e-12);
            assert!(verify_root_requirement(z + 1e-3, 5, -0.3).unwrap() > 1e-4);
        }
    }

    #[test]
    fn neutral_cases_sit_on_unit_circle() {
        for k in 2..=12 {
            for case in [Case::II, Case::III] {
                let rep = spectrum(k, 0.2, case).unwrap();
                assert_eq!(rep.eigenvalues.len(), k - 1);
                assert!(rep.moduli().all(|m| (m - 1.0).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn beta_grid_avoids_zero() {
        let g = beta_grid(50);
        assert_eq!(g.len(), 50);
        assert!((g[0] + 0.49).abs() < 1e-15 && (g[49] - 0.49).abs() < 1e-15);
        assert!(g.iter().all(|b| b.abs() > 1e-3));
    }

    #[test]
    fn case_sequences_are_observed() {
        // case I example: leader enters R, then x0 leaves S, then leader wraps
        let p = rp(0.15, 0.6);
        let sol = cyclic_solution(&p, 2, -0.3).unwrap();
        let seen: Vec<Milestone> = milestones(&sol, &p).unwrap().into_iter().map(|(_, m)| m).collect();
        assert_eq!(seen, case_sequence(Case::I, 2));
    }
}
