//! Steady state of the continuum (density) version of the model.
//!
//! The density `u` is transported at speed `b(x) = 1 + f(I)` on `R` and `1`
//! elsewhere, with `I` the mass in `S`. A steady state has constant flux
//! `b u = c`, so `u` is piecewise constant.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{FeedbackSpec, RegionParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyProfile {
    /// Density (and flux) off `R`.
    pub c: f64,
    pub off_r_level: f64,
    pub on_r_level: f64,
    /// Mass in the signaling region, `c s`.
    pub signaling: f64,
    /// Speed on `R`, `1 + f(c s)`.
    pub on_r_speed: f64,
    pub s: f64,
    pub r: f64,
}

impl SteadyProfile {
    pub fn density(&self, x: f64) -> f64 {
        if x >= self.r {
            self.on_r_level
        } else {
            self.off_r_level
        }
    }

    pub fn speed(&self, x: f64) -> f64 {
        if x >= self.r {
            self.on_r_speed
        } else {
            1.0
        }
    }

    /// `x,u,b,flux` at `points` cell centres of `[0, 1)`.
    pub fn write_csv<W: Write>(&self, mut out: W, points: usize) -> Result<()> {
        writeln!(out, "x,u,b,flux")?;
        for j in 0..points {
            let x = (j as f64 + 0.5) / points as f64;
            let (u, b) = (self.density(x), self.speed(x));
            writeln!(out, "{x},{u},{b},{}", u * b)?;
        }
        Ok(())
    }
}

pub fn steady_profile(c: f64, rp: &RegionParams, fs: &FeedbackSpec) -> Result<SteadyProfile> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid(format!("flux level c = {c} must be positive")));
    }
    let signaling = c * rp.s();
    if signaling > 1.0 {
        return Err(invalid(format!(
            "signaling mass c s = {signaling} exceeds 1, outside the domain of f"
        )));
    }
    let speed = 1.0 + fs.eval(signaling)?;
    if speed <= 0.0 {
        return Err(invalid(format!("speed 1 + f(c s) = {speed} is not positive")));
    }
    Ok(SteadyProfile {
        c,
        off_r_level: c,
        on_r_level: c / speed,
        signaling,
        on_r_speed: speed,
        s: rp.s(),
        r: rp.r(),
    })
}

/// Exact integral of the profile over the circle.
pub fn mass(p: &SteadyProfile) -> f64 {
    let width_r = 1.0 - p.r;
    p.off_r_level * (1.0 - width_r) + p.on_r_level * width_r
}

/// `max |b u - c|` over the two regions, with `b` recomputed from `fs`.
pub fn flux_residual(p: &SteadyProfile, rp: &RegionParams, fs: &FeedbackSpec) -> Result<f64> {
    let signaling = p.off_r_level * rp.s();
    let speed = 1.0 + fs.eval(signaling)?;
    let off = (p.off_r_level - p.c).abs();
    let on = (speed * p.on_r_level - p.c).abs();
    Ok(off.max(on))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quarter() -> RegionParams {
        RegionParams::new(0.25, 0.75).unwrap()
    }

    #[test]
    fn levels() {
        let rp = quarter();
        let p = steady_profile(1.0, &rp, &FeedbackSpec::linear(0.6).unwrap()).unwrap();
        assert!((p.on_r_level - 1.0 / 1.15).abs() < 1e-15);
        assert!((mass(&p) - (0.75 + 0.25 / 1.15)).abs() < 1e-15);

        let p = steady_profile(1.0, &rp, &FeedbackSpec::linear(-0.6).unwrap()).unwrap();
        assert!((p.on_r_level - 1.0 / 0.85).abs() < 1e-15);
        assert!(p.on_r_level > p.off_r_level);
    }

    #[test]
    fn no_feedback_is_flat() {
        let rp = quarter();
        let p = steady_profile(1.3, &rp, &FeedbackSpec::none()).unwrap();
        assert_eq!(p.on_r_level, 1.3);
        assert_eq!(flux_residual(&p, &rp, &FeedbackSpec::none()).unwrap(), 0.0);
        let p = steady_profile(1.0, &rp, &FeedbackSpec::none()).unwrap();
        assert_eq!(mass(&p), 1.0);
    }

    #[test]
    fn perturbed_level_shows_in_residual() {
        let rp = quarter();
        let fs = FeedbackSpec::linear(0.6).unwrap();
        let mut p = steady_profile(1.0, &rp, &fs).unwrap();
        assert!(flux_residual(&p, &rp, &fs).unwrap() < 1e-14);
        p.on_r_level += 1e-3;
        let res = flux_residual(&p, &rp, &fs).unwrap();
        assert!((res - 1.15e-3).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let rp = quarter();
        let fs = FeedbackSpec::linear(0.6).unwrap();
        assert!(steady_profile(0.0, &rp, &fs).is_err());
        assert!(steady_profile(5.0, &rp, &fs).is_err());
    }

    #[test]
    fn mass_is_recomputed_not_scaled() {
        let rp = quarter();
        let fs = FeedbackSpec::linear(0.6).unwrap();
        let m1 = mass(&steady_profile(1.0, &rp, &fs).unwrap());
        let m2 = mass(&steady_profile(2.0, &rp, &fs).unwrap());
        let expected = 2.0 * 0.75 + 0.25 * 2.0 / 1.3;
        assert!((m2 - expected).abs() < 1e-15);
        assert!((m2 - 2.0 * m1).abs() > 1e-3);
    }

    #[test]
    fn csv_layout() {
        let rp = quarter();
        let p = steady_profile(1.0, &rp, &FeedbackSpec::linear(0.6).unwrap()).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf, 4).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,u,b,flux");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0.125,1,1,1"));
    }
}
