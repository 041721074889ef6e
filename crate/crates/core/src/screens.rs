//! Random far-field phase screens and their disorder-averaged autocorrelation.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fit::{gaussian_width, WidthMethod, FIT_THRESHOLD};
use crate::grid::{BiphotonState, Direction, Domain, Field1D, Fourier, GridSpec, C64};
use crate::rng::{substream, StreamTag};

/// Placement of the coarse random knots before interpolation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KnotLattice {
    /// `S` knots, the first on pixel 0 and the last on pixel `M-1`.
    #[default]
    Anchored,
    /// `S + 1` knots with the same spacing, shifted by a uniform random
    /// fraction of a spacing per screen. Gives statistically stationary
    /// screens.
    Jittered,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenParams {
    /// Length of the coarse random list.
    pub segments: usize,
    pub realizations: usize,
    pub base_seed: u64,
    pub lattice: KnotLattice,
}

impl ScreenParams {
    pub fn new(segments: usize, realizations: usize, base_seed: u64) -> Self {
        Self {
            segments,
            realizations,
            base_seed,
            lattice: KnotLattice::Anchored,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let m = grid.size();
        if self.segments < 2 || self.segments > m {
            return Err(Error::InvalidParameter(format!(
                "segment count {} outside [2, {m}]",
                self.segments
            )));
        }
        if self.realizations == 0 {
            return Err(Error::InvalidParameter("realization count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which far-field plane a screen belongs to. Screens in different planes
/// draw from independent substreams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScreenPlane {
    BeforeObject,
    AfterObject,
}

impl ScreenPlane {
    fn tag(self) -> StreamTag {
        match self {
            ScreenPlane::BeforeObject => StreamTag::ScreenBefore,
            ScreenPlane::AfterObject => StreamTag::ScreenAfter,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseScreen {
    grid: GridSpec,
    phase: Vec<f64>,
    realization: usize,
    params: ScreenParams,
}

impl PhaseScreen {
    /// Wrap an explicit phase array (radians, wrapped into `[-pi, pi]`).
    pub fn from_phase(grid: GridSpec, phase: Vec<f64>, params: ScreenParams, realization: usize) -> Result<Self> {
        if phase.len() != grid.size() {
            return Err(Error::InvalidParameter(format!(
                "screen has {} samples, grid expects {}",
                phase.len(),
                grid.size()
            )));
        }
        if let Some(v) = phase.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite phase value {v}")));
        }
        Ok(Self {
            grid,
            phase: phase.into_iter().map(wrap_phase).collect(),
            realization,
            params,
        })
    }

    /// Screen with every phase equal to `value`.
    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self {
            grid,
            phase: vec![wrap_phase(value); grid.size()],
            realization: 0,
            params: ScreenParams::new(grid.size(), 1, 0),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn realization(&self) -> usize {
        self.realization
    }

    pub fn params(&self) -> &ScreenParams {
        &self.params
    }

    pub fn phasors(&self) -> Vec<C64> {
        self.phase.iter().map(|&p| C64::from_polar(1.0, p)).collect()
    }

    pub fn as_field(&self) -> Field1D {
        Field1D::new(self.grid, self.phasors(), Domain::Momentum).expect("length checked")
    }

    /// One value per line, radians.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for v in &self.phase {
            writeln!(out, "{v:.17e}")?;
        }
        Ok(())
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_text(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_text(grid: GridSpec, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut phase = Vec::with_capacity(grid.size());
        for (n, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let v: f64 = t.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("not a number: {t:?}"),
            })?;
            phase.push(v);
        }
        Self::from_phase(grid, phase, ScreenParams::new(grid.size(), 1, 0), 0)
    }
}

/// Map any angle into `[-pi, pi]`; values already inside are returned unchanged.
pub fn wrap_phase(p: f64) -> f64 {
    if (-PI..=PI).contains(&p) {
        p
    } else {
        (p + PI).rem_euclid(2.0 * PI) - PI
    }
}

/// Screen for realization `r` in the plane before the object.
pub fn generate_screen(grid: GridSpec, params: &ScreenParams, r: usize) -> Result<PhaseScreen> {
    generate_screen_in(grid, params, r, ScreenPlane::BeforeObject)
}

/// Draw `S` uniform phases in `[-pi, pi]` from the `(base_seed, plane, r)`
/// substream and linearly interpolate them onto the grid.
pub fn generate_screen_in(
    grid: GridSpec,
    params: &ScreenParams,
    r: usize,
    plane: ScreenPlane,
) -> Result<PhaseScreen> {
    params.validate(&grid)?;
    if r >= params.realizations {
        return Err(Error::InvalidParameter(format!(
            "realization index {r} out of range (R = {})",
            params.realizations
        )));
    }
    let m = grid.size();
    let s = params.segments;
    let mut rng = substream(params.base_seed, plane.tag(), r as u64);
    let spacing = (m - 1) as f64 / (s - 1) as f64;
    let (knots, offset) = match params.lattice {
        KnotLattice::Anchored => {
            let k: Vec<f64> = (0..s).map(|_| rng.random_range(-PI..=PI)).collect();
            (k, 0.0)
        }
        KnotLattice::Jittered => {
            let k: Vec<f64> = (0..=s).map(|_| rng.random_range(-PI..=PI)).collect();
            let u = rng.random_range(0.0..spacing);
            (k, u)
        }
    };
    let phase = if s == m && params.lattice == KnotLattice::Anchored {
        knots
    } else {
        (0..m)
            .map(|p| {
                let t = (p as f64 + offset) / spacing;
                let k = (t.floor() as usize).min(knots.len() - 2);
                let f = t - k as f64;
                wrap_phase(knots[k] * (1.0 - f) + knots[k + 1] * f)
            })
            .collect()
    };
    Ok(PhaseScreen {
        grid,
        phase,
        realization: r,
        params: *params,
    })
}

/// Which photon a one-arm operation acts on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Arm {
    Idler,
    #[default]
    Signal,
}

fn check_screen(state: &BiphotonState, screen: &PhaseScreen) -> Result<()> {
    state.require_domain(Domain::Momentum)?;
    state.grid().ensure_same(screen.grid(), "phase screen")
}

/// `psi(qi, qs) -> exp(i (phi(qi) + phi(qs))) psi(qi, qs)`.
pub fn apply_screen_both(mut state: BiphotonState, screen: &PhaseScreen) -> Result<BiphotonState> {
    check_screen(&state, screen)?;
    let m = state.grid().size();
    let p = screen.phasors();
    for (row, pi) in state.amplitude_mut().chunks_exact_mut(m).zip(&p) {
        row.iter_mut().zip(&p).for_each(|(v, pj)| *v *= pi * pj);
    }
    Ok(state)
}

/// Phase applied along a single photon's coordinate.
pub fn apply_screen_one(mut state: BiphotonState, screen: &PhaseScreen, arm: Arm) -> Result<BiphotonState> {
    check_screen(&state, screen)?;
    let m = state.grid().size();
    let p = screen.phasors();
    match arm {
        Arm::Idler => {
            for (row, pi) in state.amplitude_mut().chunks_exact_mut(m).zip(&p) {
                row.iter_mut().for_each(|v| *v *= pi);
            }
        }
        Arm::Signal => {
            for row in state.amplitude_mut().chunks_exact_mut(m) {
                row.iter_mut().zip(&p).for_each(|(v, pj)| *v *= pj);
            }
        }
    }
    Ok(state)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScatterCharacterization {
    /// e-folding width of the Gaussian fitted to `A(x)`, pixels.
    pub w_a: f64,
    /// `w_q / w_a`.
    pub strength: f64,
    /// Disorder-averaged autocorrelation, center-origin (index `M/2` is lag 0).
    pub autocorrelation: Vec<f64>,
    pub method: WidthMethod,
}

/// Circular autocorrelation `sum_x' phi(x - x') phi(x')`, center-origin.
pub fn autocorrelation(phase: &[f64], fourier: &Fourier) -> Vec<f64> {
    let m = phase.len();
    let mut buf: Vec<C64> = phase.iter().map(|&p| C64::new(p, 0.0)).collect();
    fourier.transform_1d(&mut buf, Direction::Forward);
    // |F|^2 back-transformed, times sqrt(M) for the unitary convention, gives
    // the circular autocorrelation; the centered transform keeps lag 0 at M/2.
    buf.iter_mut().for_each(|v| *v = C64::new(v.norm_sqr(), 0.0));
    fourier.transform_1d(&mut buf, Direction::Inverse);
    let scale = (m as f64).sqrt();
    buf.iter().map(|v| v.re * scale).collect()
}

/// Average `A(x)` over realizations and fit a Gaussian to extract `w_A`.
///
/// When fewer than three lags exceed the fit threshold the autocorrelation
/// is unresolved on the grid and `w_A` is reported as one pixel.
pub fn characterize_screens(screens: &[PhaseScreen], w_q: f64) -> Result<ScatterCharacterization> {
    let first = screens
        .first()
        .ok_or_else(|| Error::InvalidParameter("no screens to characterize".into()))?;
    let grid = *first.grid();
    let m = grid.size();
    let fourier = Fourier::new(m);
    let mut acc = vec![0.0; m];
    for s in screens {
        grid.ensure_same(s.grid(), "screen ensemble")?;
        for (a, v) in acc.iter_mut().zip(autocorrelation(s.phase(), &fourier)) {
            *a += v;
        }
    }
    let r = screens.len() as f64;
    acc.iter_mut().for_each(|a| *a /= r);
    characterize_autocorrelation(&grid, acc, w_q)
}

pub(crate) fn characterize_autocorrelation(
    grid: &GridSpec,
    acc: Vec<f64>,
    w_q: f64,
) -> Result<ScatterCharacterization> {
    let m = grid.size();
    let peak = acc[m / 2];
    let scale = acc.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(peak > 1e-12 * m as f64 && peak >= 0.5 * scale) {
        return Err(Error::NoScattering(
            "phase autocorrelation is flat; w_A is undefined".into(),
        ));
    }
    // the central lobe is the contiguous run of lags above threshold around
    // lag 0; isolated noise lags further out are not part of it
    let floor = FIT_THRESHOLD * peak;
    let c = m / 2;
    let lo = (0..c).rev().take_while(|&k| acc[k] >= floor).last().unwrap_or(c);
    let hi = (c + 1..m).take_while(|&k| acc[k] >= floor).last().unwrap_or(c);
    let (w_a, method) = if hi - lo + 1 < 3 {
        (1.0, WidthMethod::GaussianFit)
    } else {
        let lags: Vec<f64> = (lo..=hi).map(|k| grid.offset(k)).collect();
        let e = gaussian_width(&lags, &acc[lo..=hi])?;
        (e.width, e.method)
    };
    Ok(ScatterCharacterization {
        w_a,
        strength: w_q / w_a,
        autocorrelation: acc,
        method,
    })
}

/// Empirical map from segment count to `w_A` for one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScreenCalibration {
    pub grid: GridSpec,
    pub realizations: usize,
    pub lattice: KnotLattice,
    /// `(segments, w_a)` sorted by segments.
    pub entries: Vec<(usize, f64)>,
}

impl ScreenCalibration {
    /// Measure `w_A` for every segment count in `segments`.
    pub fn measure(
        grid: GridSpec,
        segments: impl IntoIterator<Item = usize>,
        realizations: usize,
        seed: u64,
        lattice: KnotLattice,
    ) -> Result<Self> {
        use rayon::prelude::*;
        let mut seg: Vec<usize> = segments.into_iter().collect();
        seg.sort_unstable();
        seg.dedup();
        let entries = seg
            .par_iter()
            .map(|&s| {
                let params = ScreenParams {
                    segments: s,
                    realizations,
                    base_seed: crate::rng::derive_seed(seed, &[StreamTag::Calibration as u64, s as u64]),
                    lattice,
                };
                let screens = (0..realizations)
                    .map(|r| generate_screen(grid, &params, r))
                    .collect::<Result<Vec<_>>>()?;
                Ok((s, characterize_screens(&screens, 1.0)?.w_a))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            realizations,
            lattice,
            entries,
        })
    }

    /// Every admissible segment count `2..=M`.
    pub fn full(grid: GridSpec, realizations: usize, seed: u64, lattice: KnotLattice) -> Result<Self> {
        Self::measure(grid, 2..=grid.size(), realizations, seed, lattice)
    }

    /// Segment count whose measured strength `w_q / w_A` is closest to the
    /// target on a log scale.
    pub fn segments_for_strength(&self, w_q: f64, target: f64) -> Result<(usize, f64)> {
        if !(target.is_finite() && target > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "target strength {target} must be > 0"
            )));
        }
        self.entries
            .iter()
            .map(|&(s, w)| (s, w_q / w))
            .min_by(|a, b| {
                let da = (a.1 / target).ln().abs();
                let db = (b.1 / target).ln().abs();
                da.total_cmp(&db)
            })
            .ok_or_else(|| Error::InvalidParameter("empty calibration table".into()))
    }

    pub fn w_a(&self, segments: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|(s, _)| *s == segments)
            .map(|(_, w)| *w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fourier_2d;
    use crate::source::{make_source, position_correlation_width, Sampling, SourceParams};

    fn grid(m: usize) -> GridSpec {
        GridSpec::new(m, 1.0).unwrap()
    }

    fn source(m: usize) -> BiphotonState {
        make_source(grid(m), SourceParams::new(m as f64 / 5.0, m as f64 / 25.0).unwrap(), Sampling::Relaxed)
            .unwrap()
    }

    #[test]
    fn segments_bounds() {
        let g = grid(64);
        assert!(generate_screen(g, &ScreenParams::new(1, 1, 0), 0).is_err());
        assert!(generate_screen(g, &ScreenParams::new(65, 1, 0), 0).is_err());
        assert!(generate_screen(g, &ScreenParams::new(8, 2, 0), 2).is_err());
        assert!(generate_screen(g, &ScreenParams::new(8, 0, 0), 0).is_err());
        assert!(generate_screen(g, &ScreenParams::new(64, 1, 0), 0).is_ok());
    }

    #[test]
    fn full_segment_count_is_uninterpolated() {
        let g = grid(64);
        let p = ScreenParams::new(64, 1, 11);
        let s = generate_screen(g, &p, 0).unwrap();
        let mut rng = substream(11, StreamTag::ScreenBefore, 0);
        let expect: Vec<f64> = (0..64).map(|_| rng.random_range(-PI..=PI)).collect();
        assert_eq!(s.phase(), &expect[..]);
    }

    #[test]
    fn two_segments_is_a_linear_ramp() {
        let g = grid(128);
        let s = generate_screen(g, &ScreenParams::new(2, 1, 5), 0).unwrap();
        let p = s.phase();
        let slope = (p[127] - p[0]) / 127.0;
        for (k, v) in p.iter().enumerate() {
            assert!((v - (p[0] + slope * k as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic_and_plane_independent() {
        let g = grid(128);
        let p = ScreenParams::new(16, 4, 42);
        let a = generate_screen(g, &p, 3).unwrap();
        let b = generate_screen(g, &p, 3).unwrap();
        assert_eq!(a.phase(), b.phase());
        let c = generate_screen_in(g, &p, 3, ScreenPlane::AfterObject).unwrap();
        assert_ne!(a.phase(), c.phase());
        let d = generate_screen(g, &p, 2).unwrap();
        assert_ne!(a.phase(), d.phase());
        assert!(a.phase().iter().all(|v| (-PI..=PI).contains(v)));
    }

    #[test]
    fn jittered_lattice_stays_in_range() {
        let g = grid(64);
        let mut p = ScreenParams::new(8, 3, 1);
        p.lattice = KnotLattice::Jittered;
        for r in 0..3 {
            let s = generate_screen(g, &p, r).unwrap();
            assert!(s.phase().iter().all(|v| (-PI..=PI).contains(v)));
        }
    }

    #[test]
    fn zero_screen_is_identity() {
        let s = source(32);
        let z = PhaseScreen::constant(grid(32), 0.0);
        let both = apply_screen_both(s.clone(), &z).unwrap();
        assert_eq!(both, s);
        let one = apply_screen_one(s.clone(), &z, Arm::Idler).unwrap();
        assert_eq!(one, s);
    }

    #[test]
    fn constant_screen_is_a_global_phase() {
        let s = source(32);
        let c = 0.7;
        let z = PhaseScreen::constant(grid(32), c);
        let out = apply_screen_both(s.clone(), &z).unwrap();
        let g = C64::from_polar(1.0, 2.0 * c);
        for (a, b) in s.amplitude().iter().zip(out.amplitude()) {
            assert!((a * g - b).norm() < 1e-12);
            assert!((a.norm_sqr() - b.norm_sqr()).abs() < 1e-15);
        }
    }

    #[test]
    fn one_arm_factorization_and_unitarity() {
        let s = source(64);
        let scr = generate_screen(grid(64), &ScreenParams::new(16, 1, 3), 0).unwrap();
        let seq = apply_screen_one(apply_screen_one(s.clone(), &scr, Arm::Idler).unwrap(), &scr, Arm::Signal).unwrap();
        let both = apply_screen_both(s, &scr).unwrap();
        for (a, b) in seq.amplitude().iter().zip(both.amplitude()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!((both.norm_sqr() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn position_domain_state_is_rejected() {
        let s = fourier_2d(source(32), Direction::Inverse).unwrap();
        let z = PhaseScreen::constant(grid(32), 0.0);
        assert!(matches!(apply_screen_both(s.clone(), &z), Err(Error::DomainMismatch { .. })));
        assert!(matches!(apply_screen_one(s, &z, Arm::Signal), Err(Error::DomainMismatch { .. })));
    }

    #[test]
    fn strong_screen_broadens_correlations() {
        let m = 128;
        let s = source(m);
        let before = position_correlation_width(&fourier_2d(s.clone(), Direction::Inverse).unwrap()).unwrap();
        let p = ScreenParams::new(64, 1, 9);
        let scr = generate_screen(grid(m), &p, 0).unwrap();
        let after = fourier_2d(apply_screen_both(s, &scr).unwrap(), Direction::Inverse).unwrap();
        let w = position_correlation_width(&after).unwrap();
        assert!(w > 3.0 * before, "{w} vs {before}");
    }

    /// Brute-force `A(x) = (1/R) sum_r sum_x' phi(x - x') phi(x')` with
    /// circular indexing, center-origin.
    fn brute_autocorrelation(screens: &[PhaseScreen]) -> Vec<f64> {
        let m = screens[0].grid().size();
        let mut a = vec![0.0; m];
        for s in screens {
            let p = s.phase();
            for (k, out) in a.iter_mut().enumerate() {
                let lag = k as isize - (m / 2) as isize;
                *out += (0..m)
                    .map(|x| p[((x as isize - lag).rem_euclid(m as isize)) as usize] * p[x])
                    .sum::<f64>();
            }
        }
        a.iter().map(|v| v / screens.len() as f64).collect()
    }

    #[test]
    fn autocorrelation_matches_brute_force() {
        let g = grid(32);
        let p = ScreenParams::new(8, 5, 77);
        let screens: Vec<_> = (0..5).map(|r| generate_screen(g, &p, r).unwrap()).collect();
        let want = brute_autocorrelation(&screens);
        let got = characterize_screens(&screens, 10.0).unwrap().autocorrelation;
        for (a, b) in want.iter().zip(&got) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn uncorrelated_screens_have_one_pixel_width_and_uniform_variance() {
        let g = grid(128);
        let p = ScreenParams::new(128, 200, 5);
        let screens: Vec<_> = (0..200).map(|r| generate_screen(g, &p, r).unwrap()).collect();
        let c = characterize_screens(&screens, 25.6).unwrap();
        assert!((1.0..=2.0).contains(&c.w_a), "w_A = {}", c.w_a);
        // A(0)/M estimates the phase variance pi^2/3 of the uniform distribution
        let a0 = c.autocorrelation[64] / 128.0;
        assert!((a0 / (PI * PI / 3.0) - 1.0).abs() < 0.05, "{a0}");
        // cross-check against the brute-force definition
        let brute = brute_autocorrelation(&screens);
        assert!((brute[64] - c.autocorrelation[64]).abs() < 1e-6);
    }

    #[test]
    fn zero_screens_have_undefined_width() {
        let g = grid(32);
        let screens = vec![PhaseScreen::constant(g, 0.0); 3];
        assert!(matches!(characterize_screens(&screens, 5.0), Err(Error::NoScattering(_))));
        assert!(characterize_screens(&[], 5.0).is_err());
    }

    #[test]
    fn w_a_tracks_inverse_segment_count() {
        let g = grid(512);
        let p = ScreenParams::new(32, 200, 1234);
        let screens: Vec<_> = (0..200).map(|r| generate_screen(g, &p, r).unwrap()).collect();
        let c = characterize_screens(&screens, 102.4).unwrap();
        let expect = 512.0 / 32.0;
        assert!((c.w_a / expect - 1.0).abs() < 0.3, "w_A = {}", c.w_a);
    }

    #[test]
    fn calibration_is_monotone_up_to_single_steps() {
        let g = grid(128);
        let segs = [2usize, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64, 96, 128];
        let cal = ScreenCalibration::measure(g, segs, 100, 3, KnotLattice::Anchored).unwrap();
        let w: Vec<f64> = cal.entries.iter().map(|e| e.1).collect();
        let violations = w.windows(2).filter(|p| p[1] > p[0]).count();
        assert!(violations <= 1, "{w:?}");
        let (s, strength) = cal.segments_for_strength(25.6, 5.0).unwrap();
        assert!((strength / 5.0).ln().abs() < 0.4, "S={s} strength={strength}");
    }

    #[test]
    fn text_round_trip() {
        let g = grid(16);
        let s = generate_screen(g, &ScreenParams::new(4, 1, 8), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("screen.txt");
        s.save_text(&path).unwrap();
        let back = PhaseScreen::load_text(g, &path).unwrap();
        assert_eq!(back.phase(), s.phase());
    }
}
