//! Gaussian width estimation on sampled 1D profiles.
//!
//! The model is `a * exp(-(x - c)^2 / w^2)`. Only samples at or above 1% of
//! the peak enter the least-squares fit; when the RMS residual exceeds 10% of
//! the peak the second-moment width (`w = sqrt(2) * sigma`) is reported
//! instead.

use crate::error::{Error, Result};

pub const FIT_THRESHOLD: f64 = 0.01;
pub const MAX_RELATIVE_RESIDUAL: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WidthMethod {
    GaussianFit,
    SecondMoment,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WidthEstimate {
    /// e-folding width `w` of `exp(-(x-c)^2/w^2)`.
    pub width: f64,
    pub center: f64,
    pub amplitude: f64,
    pub method: WidthMethod,
    /// RMS fit residual relative to the profile peak.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Moments {
    pub mass: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Mass, mean and variance of a nonnegative profile; negative samples are
/// ignored.
pub fn moments(x: &[f64], y: &[f64]) -> Option<Moments> {
    let mass: f64 = y.iter().filter(|v| **v > 0.0).sum();
    if !(mass > 0.0 && mass.is_finite()) {
        return None;
    }
    let mean = x
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0)
        .map(|(x, v)| x * v)
        .sum::<f64>()
        / mass;
    let variance = x
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0)
        .map(|(x, v)| (x - mean).powi(2) * v)
        .sum::<f64>()
        / mass;
    Some(Moments {
        mass,
        mean,
        variance,
    })
}

/// Fit a Gaussian to `(x, y)`, falling back to second moments on a poor fit.
pub fn gaussian_width(x: &[f64], y: &[f64]) -> Result<WidthEstimate> {
    assert_eq!(x.len(), y.len());
    let (peak_idx, peak) = y
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::FitFailed("profile has no positive mass".into()));
    }
    let m = moments(x, y).ok_or_else(|| Error::FitFailed("profile has no positive mass".into()))?;

    let (sx, sy): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(_, v)| **v >= FIT_THRESHOLD * peak)
        .map(|(a, b)| (*a, *b))
        .unzip();

    let fallback = |residual: f64| -> Result<WidthEstimate> {
        let width = (2.0 * m.variance).sqrt();
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::FitFailed(
                "profile is not resolvable: zero second moment".into(),
            ));
        }
        Ok(WidthEstimate {
            width,
            center: m.mean,
            amplitude: peak,
            method: WidthMethod::SecondMoment,
            residual,
        })
    };

    if sx.len() < 3 {
        return fallback(f64::INFINITY);
    }

    let start_width = (2.0 * m.variance).sqrt().max(0.5);
    let init = [peak, x[peak_idx], start_width];
    match levenberg_marquardt(&sx, &sy, init) {
        Some(p) => {
            let residual = rms_residual(&sx, &sy, p) / peak;
            if residual <= MAX_RELATIVE_RESIDUAL && p[2].abs() > 0.0 && p[2].is_finite() {
                Ok(WidthEstimate {
                    width: p[2].abs(),
                    center: p[1],
                    amplitude: p[0],
                    method: WidthMethod::GaussianFit,
                    residual,
                })
            } else {
                fallback(residual)
            }
        }
        None => fallback(f64::INFINITY),
    }
}

fn model(x: f64, p: [f64; 3]) -> f64 {
    p[0] * (-((x - p[1]) / p[2]).powi(2)).exp()
}

fn rms_residual(x: &[f64], y: &[f64], p: [f64; 3]) -> f64 {
    let ss: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (model(xi, p) - yi).powi(2))
        .sum();
    (ss / x.len() as f64).sqrt()
}

fn levenberg_marquardt(x: &[f64], y: &[f64], mut p: [f64; 3]) -> Option<[f64; 3]> {
    let cost = |p: [f64; 3]| -> f64 {
        x.iter()
            .zip(y)
            .map(|(&xi, &yi)| (model(xi, p) - yi).powi(2))
            .sum()
    };
    let mut lambda = 1e-3;
    let mut current = cost(p);
    for _ in 0..200 {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&xi, &yi) in x.iter().zip(y) {
            let u = (xi - p[1]) / p[2];
            let e = (-u * u).exp();
            let f = p[0] * e;
            let j = [e, f * 2.0 * u / p[2], f * 2.0 * u * u / p[2]];
            let r = yi - f;
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut a = jtj;
            for (d, row) in a.iter_mut().enumerate() {
                row[d] += lambda * jtj[d][d].max(1e-300);
            }
            let Some(step) = solve3(a, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            let c = cost(trial);
            if c.is_finite() && c < current && trial[2].abs() > 1e-9 {
                let rel = (current - c) / current.max(1e-300);
                p = trial;
                current = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-14 {
                    return Some(p);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    p.iter().all(|v| v.is_finite()).then_some(p)
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    if d.abs() < 1e-300 || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][k] = b[r];
        }
        *o = det(&m) / d;
    }
    Some(out)
}
