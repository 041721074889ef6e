//! Double-Gaussian biphoton source in the momentum domain.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fit::{gaussian_width, WidthEstimate};
use crate::grid::{BiphotonState, Domain, GridSpec, C64};

/// Widths are 1/e amplitude half-widths in momentum pixels:
/// `psi(qi, qs) = exp(-(qi - qs)^2 / w_q^2) * exp(-(qi + qs)^2 / w_0^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceParams {
    /// Phase-matching width.
    pub w_q: f64,
    /// Pump amplitude width.
    pub w_0: f64,
}

impl SourceParams {
    pub fn new(w_q: f64, w_0: f64) -> Result<Self> {
        let p = Self { w_q, w_0 };
        p.validate()?;
        Ok(p)
    }

    /// Phase-matching width `w_q` with the pump width set by `w_q / ratio`.
    pub fn with_entanglement(w_q: f64, ratio: f64) -> Result<Self> {
        Self::new(w_q, w_q / ratio)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_q", self.w_q), ("w_0", self.w_0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be > 0")));
            }
        }
        if self.w_q < self.w_0 {
            return Err(Error::InvalidParameter(format!(
                "entanglement ratio w_q/w_0 = {} must be >= 1",
                self.entanglement_ratio()
            )));
        }
        Ok(())
    }

    pub fn entanglement_ratio(&self) -> f64 {
        self.w_q / self.w_0
    }

    /// 1/e^2 half-width of the single-photon momentum marginal.
    pub fn momentum_marginal_width(&self) -> f64 {
        (self.w_q.powi(2) + self.w_0.powi(2)).sqrt() / 2.0
    }

    /// Amplitude width along `x_i - x_s` in the position domain, in pixels.
    /// This is also the 1/e^2 half-width of `|psi|^2` along the difference
    /// coordinate.
    pub fn position_correlation_width(&self, grid: &GridSpec) -> f64 {
        2.0 * grid.size() as f64 / (PI * self.w_q)
    }

    /// Amplitude width along `x_i + x_s` in the position domain, in pixels.
    pub fn position_sum_width(&self, grid: &GridSpec) -> f64 {
        2.0 * grid.size() as f64 / (PI * self.w_0)
    }

    /// 1/e^2 half-width of the single-photon position marginal.
    pub fn position_marginal_width(&self, grid: &GridSpec) -> f64 {
        (self.position_correlation_width(grid).powi(2) + self.position_sum_width(grid).powi(2))
            .sqrt()
            / 2.0
    }
}

/// Whether the widths must be comfortably resolved on the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Sampling {
    /// Both widths within `[4, M/4]` pixels and `w_q > w_0`.
    #[default]
    Strict,
    Relaxed,
}

pub const MIN_RESOLVABLE_WIDTH: f64 = 4.0;

fn check_resolvable(grid: &GridSpec, params: &SourceParams, sampling: Sampling) -> Result<()> {
    params.validate()?;
    if sampling == Sampling::Relaxed {
        return Ok(());
    }
    let max = grid.size() as f64 / 4.0;
    for (name, v) in [("w_q", params.w_q), ("w_0", params.w_0)] {
        if v < MIN_RESOLVABLE_WIDTH {
            return Err(Error::InvalidParameter(format!(
                "{name} = {v:.3} px is below the resolvable lower bound of {MIN_RESOLVABLE_WIDTH} px \
                 (disable strict sampling to allow it)"
            )));
        }
        if v > max {
            return Err(Error::InvalidParameter(format!(
                "{name} = {v:.3} px exceeds the resolvable upper bound M/4 = {max} px \
                 (disable strict sampling to allow it)"
            )));
        }
    }
    if params.w_q <= params.w_0 {
        return Err(Error::InvalidParameter(format!(
            "strict sampling requires w_q > w_0 (got w_q = {}, w_0 = {})",
            params.w_q, params.w_0
        )));
    }
    Ok(())
}

/// Normalized momentum-domain source state.
pub fn make_source(grid: GridSpec, params: SourceParams, sampling: Sampling) -> Result<BiphotonState> {
    check_resolvable(&grid, &params, sampling)?;
    let m = grid.size();
    let inv_q2 = 1.0 / params.w_q.powi(2);
    let inv_02 = 1.0 / params.w_0.powi(2);
    let mut amp = Vec::with_capacity(m * m);
    for i in 0..m {
        let qi = grid.offset(i);
        for j in 0..m {
            let qs = grid.offset(j);
            let d = qi - qs;
            let s = qi + qs;
            amp.push(C64::new((-d * d * inv_q2 - s * s * inv_02).exp(), 0.0));
        }
    }
    BiphotonState::normalized(grid, amp, Domain::Momentum)
        .map_err(|_| Error::InvalidParameter("source amplitude underflows on this grid".into()))
}

/// Probability along the difference coordinate, wrapped onto the periodic
/// grid: `P(d) = sum_x |psi(x + d mod M, x)|^2` for `d = -floor(M/2) ..`
/// (M values), returned as `(d, P(d))`.
pub fn difference_profile(probabilities: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(probabilities.len(), m * m);
    let h = m / 2;
    let mut p = vec![0.0; m];
    for i in 0..m {
        let row = &probabilities[i * m..(i + 1) * m];
        for (s, v) in row.iter().enumerate() {
            p[(i + m + h - s) % m] += v;
        }
    }
    let d = (0..m).map(|k| k as f64 - h as f64).collect();
    (d, p)
}

/// 1/e^2 half-width (pixels) of `|psi|^2` along `x_i - x_s`, plus the fit record.
pub fn correlation_width_of(probabilities: &[f64], m: usize) -> Result<(f64, WidthEstimate)> {
    let (d, p) = difference_profile(probabilities, m);
    let est = gaussian_width(&d, &p)?;
    // intensity exp(-2 d^2 / W^2) fits as exp(-d^2 / w^2) with W = sqrt(2) w
    Ok((est.width * std::f64::consts::SQRT_2, est))
}

/// Position-domain correlation width of a state, in pixels.
pub fn position_correlation_width(state: &BiphotonState) -> Result<f64> {
    state.require_domain(Domain::Position)?;
    correlation_width_of(&state.probabilities(), state.grid().size()).map(|(w, _)| w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::WidthMethod;
    use crate::grid::{fourier_2d, Direction};

    fn grid(m: usize) -> GridSpec {
        GridSpec::new(m, 1.0).unwrap()
    }

    #[test]
    fn strict_bounds_reject_fig_s4_pump_width() {
        let g = grid(128);
        let w_q = 0.2 * 128.0;
        let p = SourceParams::new(w_q, w_q / 15.0).unwrap();
        let err = make_source(g, p, Sampling::Strict).unwrap_err();
        assert!(err.to_string().contains("w_0"), "{err}");
        assert!(err.to_string().contains("lower bound"), "{err}");
        let s = make_source(g, p, Sampling::Relaxed).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strict_bounds_upper_and_ratio() {
        let g = grid(64);
        let err = make_source(g, SourceParams::new(20.0, 5.0).unwrap(), Sampling::Strict).unwrap_err();
        assert!(err.to_string().contains("upper bound"), "{err}");
        let err = make_source(g, SourceParams::new(8.0, 8.0).unwrap(), Sampling::Strict).unwrap_err();
        assert!(err.to_string().contains("w_q > w_0"), "{err}");
        assert!(SourceParams::new(4.0, 8.0).is_err());
    }

    #[test]
    fn source_is_real_nonnegative_symmetric() {
        let g = grid(128);
        let s = make_source(g, SourceParams::new(25.0, 5.0).unwrap(), Sampling::Strict).unwrap();
        assert_eq!(s.domain(), Domain::Momentum);
        let m = 128;
        for i in 0..m {
            for j in 0..m {
                let a = s.at(i, j);
                assert!(a.im == 0.0 && a.re >= 0.0);
                assert!((a - s.at(j, i)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn equal_widths_give_a_product_state() {
        let g = grid(64);
        let s = make_source(g, SourceParams::new(8.0, 8.0).unwrap(), Sampling::Relaxed).unwrap();
        // rank one: psi(i,j) psi(k,l) == psi(i,l) psi(k,j)
        for (i, j, k, l) in [(10, 20, 30, 40), (31, 33, 28, 35), (0, 63, 17, 5)] {
            let lhs = s.at(i, j) * s.at(k, l);
            let rhs = s.at(i, l) * s.at(k, j);
            assert!((lhs - rhs).norm() < 1e-15);
        }
    }

    #[test]
    fn momentum_marginal_matches_closed_form() {
        let g = grid(512);
        let p = SourceParams::new(100.0, 2.0).unwrap();
        let s = make_source(g, p, Sampling::Relaxed).unwrap();
        let m = 512;
        let marg: Vec<f64> = (0..m).map(|i| (0..m).map(|j| s.at(i, j).norm_sqr()).sum()).collect();
        let x: Vec<f64> = (0..m).map(|k| g.offset(k)).collect();
        let e = gaussian_width(&x, &marg).unwrap();
        assert_eq!(e.method, WidthMethod::GaussianFit);
        let width = e.width * std::f64::consts::SQRT_2;
        let expect = p.momentum_marginal_width();
        assert!((width / expect - 1.0).abs() < 0.02, "{width} vs {expect}");

        // the ridge along qi + qs has 1/e^2 intensity half-width w_0
        let c = g.center();
        let ridge: Vec<f64> = (0..m)
            .map(|k| s.at(k, c).norm_sqr())
            .collect();
        let e = gaussian_width(&x, &ridge).unwrap();
        let expect = 1.0 / (1.0 / p.w_q.powi(2) + 1.0 / p.w_0.powi(2)).sqrt();
        assert!((e.width * std::f64::consts::SQRT_2 / expect - 1.0).abs() < 0.02);
    }

    #[test]
    fn position_correlation_width_matches_analytic_scaling() {
        let g = grid(512);
        let p = SourceParams::new(100.0, 2.0).unwrap();
        let s = fourier_2d(make_source(g, p, Sampling::Relaxed).unwrap(), Direction::Inverse).unwrap();
        let w = position_correlation_width(&s).unwrap();
        let expect = p.position_correlation_width(&g);
        assert!((w / expect - 1.0).abs() < 0.01, "{w} vs {expect}");
    }

    #[test]
    fn correlation_width_requires_position_domain() {
        let g = grid(64);
        let s = make_source(g, SourceParams::new(12.0, 4.0).unwrap(), Sampling::Strict).unwrap();
        assert!(matches!(
            position_correlation_width(&s),
            Err(Error::DomainMismatch { .. })
        ));
    }

    #[test]
    fn separable_state_has_single_photon_correlation_width() {
        let g = grid(128);
        let p = SourceParams::new(10.0, 10.0).unwrap();
        let s = fourier_2d(make_source(g, p, Sampling::Relaxed).unwrap(), Direction::Inverse).unwrap();
        let w = position_correlation_width(&s).unwrap();
        // difference of two independent photons each of 1/e^2 width W1:
        // intensity widths add in quadrature.
        let w1 = p.position_marginal_width(&g);
        let expect = (2.0f64).sqrt() * w1;
        assert!((w / expect - 1.0).abs() < 0.02, "{w} vs {expect}");
    }

    #[test]
    fn correlation_width_is_non_increasing_in_w_q() {
        let g = grid(128);
        let mut last = f64::INFINITY;
        for w_q in [8.0, 12.0, 16.0, 24.0, 32.0] {
            let s = fourier_2d(
                make_source(g, SourceParams::new(w_q, 4.0).unwrap(), Sampling::Relaxed).unwrap(),
                Direction::Inverse,
            )
            .unwrap();
            let w = position_correlation_width(&s).unwrap();
            assert!(w <= last + 1e-9, "w_q={w_q}: {w} > {last}");
            last = w;
        }
    }

    #[test]
    fn difference_profile_conserves_mass() {
        let probs: Vec<f64> = (0..16).map(|k| k as f64).collect();
        let (d, p) = difference_profile(&probs, 4);
        assert_eq!(d, vec![-2.0, -1.0, 0.0, 1.0]);
        assert_eq!(p.iter().sum::<f64>(), probs.iter().sum::<f64>());
        // d = 0 is the main diagonal: 0 + 5 + 10 + 15
        assert_eq!(p[2], 30.0);
        // d = +1 includes the wrapped (i=0, s=3): 4 + 9 + 14 + 3
        assert_eq!(p[3], 30.0);
        // d = -2 and d = +2 coincide: (2,0),(3,1),(0,2),(1,3)
        assert_eq!(p[0], 8.0 + 13.0 + 2.0 + 7.0);
    }
}
