//! Coordinate grids, complex field containers and the centered unitary DFT.
//!
//! Both Position and Momentum arrays are stored center-origin: sample `k`
//! sits at coordinate `(k - M/2) * pitch`. The transform used by every
//! optical step is
//!
//! ```text
//! X[k] = 1/sqrt(M) * sum_n x[n] * exp(-2 pi i (k - M/2)(n - M/2) / M)
//! ```
//!
//! applied independently along each axis, which is what a thin lens does to
//! a field in its front focal plane once physical scale factors are absorbed
//! into pixel units.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    size: usize,
    pitch: f64,
}

impl GridSpec {
    pub fn new(size: usize, pitch: f64) -> Result<Self> {
        if size < 2 || !size.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "size {size} is not a power of two >= 2"
            )));
        }
        if !(pitch.is_finite() && pitch > 0.0) {
            return Err(Error::InvalidGrid(format!("pitch {pitch} must be > 0")));
        }
        Ok(Self { size, pitch })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    /// Index of the coordinate origin.
    #[inline]
    pub fn center(&self) -> usize {
        self.size / 2
    }

    /// Signed pixel offset of sample `k` from the origin.
    #[inline]
    pub fn offset(&self, k: usize) -> f64 {
        k as f64 - (self.size / 2) as f64
    }

    #[inline]
    pub fn coordinate(&self, k: usize) -> f64 {
        self.offset(k) * self.pitch
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.size).map(|k| self.coordinate(k)).collect()
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{what}: {}x{} (pitch {}) vs {}x{} (pitch {})",
                self.size, self.size, self.pitch, other.size, other.size, other.pitch
            )));
        }
        Ok(())
    }
}

/// Build a grid with a centered coordinate axis.
pub fn make_grid(size: usize, pitch: f64) -> Result<GridSpec> {
    GridSpec::new(size, pitch)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Position,
    Momentum,
}

impl Domain {
    pub fn conjugate(self) -> Self {
        match self {
            Domain::Position => Domain::Momentum,
            Domain::Momentum => Domain::Position,
        }
    }
}

/// Forward maps Position to Momentum, Inverse maps Momentum to Position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    fn source_domain(self) -> Domain {
        match self {
            Direction::Forward => Domain::Position,
            Direction::Inverse => Domain::Momentum,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field1D {
    grid: GridSpec,
    values: Vec<C64>,
    domain: Domain,
}

impl Field1D {
    pub fn new(grid: GridSpec, values: Vec<C64>, domain: Domain) -> Result<Self> {
        if values.len() != grid.size() {
            return Err(Error::InvalidParameter(format!(
                "field has {} samples, grid expects {}",
                values.len(),
                grid.size()
            )));
        }
        Ok(Self {
            grid,
            values,
            domain,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }
}

/// Joint two-photon amplitude, row index = idler coordinate, column index =
/// signal coordinate, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BiphotonState {
    grid: GridSpec,
    amplitude: Vec<C64>,
    domain: Domain,
}

impl BiphotonState {
    pub fn new(grid: GridSpec, amplitude: Vec<C64>, domain: Domain) -> Result<Self> {
        let m = grid.size();
        if amplitude.len() != m * m {
            return Err(Error::InvalidParameter(format!(
                "amplitude has {} samples, grid expects {}",
                amplitude.len(),
                m * m
            )));
        }
        Ok(Self {
            grid,
            amplitude,
            domain,
        })
    }

    /// Construct and scale to unit norm. Fails on an all-zero amplitude.
    pub fn normalized(grid: GridSpec, amplitude: Vec<C64>, domain: Domain) -> Result<Self> {
        let (state, norm) = Self::new(grid, amplitude, domain)?.renormalize()?;
        debug_assert!(norm > 0.0);
        Ok(state)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn amplitude(&self) -> &[C64] {
        &self.amplitude
    }

    pub(crate) fn amplitude_mut(&mut self) -> &mut [C64] {
        &mut self.amplitude
    }

    pub fn into_amplitude(self) -> Vec<C64> {
        self.amplitude
    }

    #[inline]
    pub fn at(&self, idler: usize, signal: usize) -> C64 {
        self.amplitude[idler * self.grid.size() + signal]
    }

    /// Total probability `sum |amplitude|^2`.
    pub fn norm_sqr(&self) -> f64 {
        self.amplitude.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitude.iter().map(|v| v.norm_sqr()).collect()
    }

    /// Rescale to unit norm, returning the norm before rescaling.
    pub fn renormalize(mut self) -> Result<(Self, f64)> {
        let norm = self.norm_sqr();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Invariant(format!(
                "cannot normalize a state with total probability {norm}"
            )));
        }
        let scale = 1.0 / norm.sqrt();
        self.amplitude.iter_mut().for_each(|v| *v *= scale);
        Ok((self, norm))
    }

    pub(crate) fn require_domain(&self, expected: Domain) -> Result<()> {
        if self.domain != expected {
            return Err(Error::DomainMismatch {
                expected,
                found: self.domain,
            });
        }
        Ok(())
    }

    /// Multiply by a real mask on the idler rows and the signal columns.
    /// Either mask may be omitted.
    pub(crate) fn scale_separable(&mut self, idler: Option<&[f64]>, signal: Option<&[f64]>) {
        let m = self.grid.size();
        for (i, row) in self.amplitude.chunks_exact_mut(m).enumerate() {
            let ri = idler.map_or(1.0, |t| t[i]);
            match signal {
                Some(t) => row
                    .iter_mut()
                    .zip(t)
                    .for_each(|(v, &tj)| *v *= ri * tj),
                None if ri != 1.0 => row.iter_mut().for_each(|v| *v *= ri),
                None => {}
            }
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Cached plans for the centered unitary DFT of one grid size.
#[derive(Clone)]
pub struct Fourier {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `(-1)^k`, applied before and after the raw FFT to center both axes.
    signs: Vec<f64>,
}

impl std::fmt::Debug for Fourier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fourier").field("size", &self.size).finish()
    }
}

impl Fourier {
    pub fn new(size: usize) -> Self {
        let (forward, inverse) = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            (p.plan_fft_forward(size), p.plan_fft_inverse(size))
        });
        let signs = (0..size)
            .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        Self {
            size,
            forward,
            inverse,
            signs,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Global factor left over after the sign modulation: the transform is
    /// `exp(-+ i pi M / 2) / sqrt(M)` times the sign-modulated raw FFT.
    fn scale(&self, direction: Direction) -> C64 {
        let m = self.size as f64;
        let s = match direction {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        };
        C64::from_polar(1.0 / m.sqrt(), s * PI * m / 2.0)
    }

    fn plan(&self, direction: Direction) -> &Arc<dyn Fft<f64>> {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Inverse => &self.inverse,
        }
    }

    /// Centered unitary transform of a single length-M vector.
    pub fn transform_1d(&self, data: &mut [C64], direction: Direction) {
        assert_eq!(data.len(), self.size);
        data.iter_mut()
            .zip(&self.signs)
            .for_each(|(v, &s)| *v *= s);
        self.plan(direction).process(data);
        let c = self.scale(direction);
        data.iter_mut()
            .zip(&self.signs)
            .for_each(|(v, &s)| *v *= c * s);
    }

    /// Centered unitary transform along both axes of a row-major M x M array.
    pub fn transform_2d(&self, data: &mut [C64], direction: Direction) {
        let m = self.size;
        assert_eq!(data.len(), m * m);
        let plan = self.plan(direction);
        let mut scratch = vec![C64::default(); plan.get_inplace_scratch_len()];

        for (i, row) in data.chunks_exact_mut(m).enumerate() {
            let si = self.signs[i];
            row.iter_mut()
                .zip(&self.signs)
                .for_each(|(v, &sj)| *v *= si * sj);
        }
        plan.process_with_scratch(data, &mut scratch);
        transpose_in_place(data, m);
        plan.process_with_scratch(data, &mut scratch);
        transpose_in_place(data, m);

        let c = self.scale(direction);
        let c2 = c * c;
        for (i, row) in data.chunks_exact_mut(m).enumerate() {
            let si = self.signs[i];
            row.iter_mut()
                .zip(&self.signs)
                .for_each(|(v, &sj)| *v *= c2 * (si * sj));
        }
    }

    pub fn state(&self, mut state: BiphotonState, direction: Direction) -> Result<BiphotonState> {
        if state.grid.size() != self.size {
            return Err(Error::GridMismatch(format!(
                "transform planned for {} samples, state has {}",
                self.size,
                state.grid.size()
            )));
        }
        state.require_domain(direction.source_domain())?;
        self.transform_2d(&mut state.amplitude, direction);
        state.domain = state.domain.conjugate();
        Ok(state)
    }
}

fn transpose_in_place(data: &mut [C64], m: usize) {
    const BLOCK: usize = 32;
    for ib in (0..m).step_by(BLOCK) {
        for jb in (ib..m).step_by(BLOCK) {
            for i in ib..(ib + BLOCK).min(m) {
                let j0 = if ib == jb { i + 1 } else { jb };
                for j in j0..(jb + BLOCK).min(m) {
                    data.swap(i * m + j, j * m + i);
                }
            }
        }
    }
}

/// Centered unitary DFT along both coordinates; the domain tag flips.
pub fn fourier_2d(state: BiphotonState, direction: Direction) -> Result<BiphotonState> {
    Fourier::new(state.grid.size()).state(state, direction)
}

pub fn fourier_1d(mut field: Field1D, direction: Direction) -> Result<Field1D> {
    if field.domain != direction.source_domain() {
        return Err(Error::DomainMismatch {
            expected: direction.source_domain(),
            found: field.domain,
        });
    }
    Fourier::new(field.grid.size()).transform_1d(&mut field.values, direction);
    field.domain = field.domain.conjugate();
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(M^2) centered unitary DFT along one axis.
    fn naive_dft(x: &[C64], direction: Direction) -> Vec<C64> {
        let m = x.len();
        let h = (m / 2) as f64;
        let s = match direction {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        };
        (0..m)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(n, &v)| {
                        let arg = s * 2.0 * PI * (k as f64 - h) * (n as f64 - h) / m as f64;
                        v * C64::from_polar(1.0, arg)
                    })
                    .sum::<C64>()
                    / (m as f64).sqrt()
            })
            .collect()
    }

    fn naive_dft_2d(a: &[C64], m: usize, direction: Direction) -> Vec<C64> {
        let mut rows: Vec<C64> = a
            .chunks_exact(m)
            .flat_map(|r| naive_dft(r, direction))
            .collect();
        for j in 0..m {
            let col: Vec<C64> = (0..m).map(|i| rows[i * m + j]).collect();
            for (i, v) in naive_dft(&col, direction).into_iter().enumerate() {
                rows[i * m + j] = v;
            }
        }
        rows
    }

    fn random_state(m: usize, seed: u64) -> BiphotonState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = (0..m * m)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        BiphotonState::normalized(GridSpec::new(m, 1.0).unwrap(), amp, Domain::Position).unwrap()
    }

    #[test]
    fn make_grid_examples() {
        let g = make_grid(512, 1.0).unwrap();
        assert_eq!(g.coordinate(0), -256.0);
        assert_eq!(g.coordinate(511), 255.0);
        let g = make_grid(128, 1.0).unwrap();
        assert_eq!(g.coordinate(0), -64.0);
        assert_eq!(g.coordinate(127), 63.0);
        assert!(matches!(make_grid(100, 1.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(make_grid(64, 0.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(make_grid(64, -1.0), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn delta_transforms_to_flat_magnitude() {
        let g = GridSpec::new(32, 1.0).unwrap();
        let mut amp = vec![C64::default(); 32 * 32];
        amp[16 * 32 + 16] = C64::new(1.0, 0.0);
        let s = BiphotonState::new(g, amp, Domain::Position).unwrap();
        let f = fourier_2d(s, Direction::Forward).unwrap();
        assert_eq!(f.domain(), Domain::Momentum);
        for v in f.amplitude() {
            assert!((v.norm() - 1.0 / 32.0).abs() < 1e-12);
            // centered origin: no phase ramp
            assert!(v.im.abs() < 1e-12 && v.re > 0.0);
        }
    }

    #[test]
    fn round_trip_and_norm() {
        for &m in &[4usize, 16, 64] {
            let s = random_state(m, m as u64);
            let f = fourier_2d(s.clone(), Direction::Forward).unwrap();
            assert!((f.norm_sqr() - 1.0).abs() < 1e-9);
            let b = fourier_2d(f, Direction::Inverse).unwrap();
            assert_eq!(b.domain(), Domain::Position);
            for (x, y) in s.amplitude().iter().zip(b.amplitude()) {
                assert!((x - y).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn matches_naive_oracle() {
        for &m in &[2usize, 8, 64] {
            let s = random_state(m, 99 + m as u64);
            let want = naive_dft_2d(s.amplitude(), m, Direction::Forward);
            let got = fourier_2d(s, Direction::Forward).unwrap();
            for (a, b) in want.iter().zip(got.amplitude()) {
                assert!((a - b).norm() < 1e-9, "m={m}");
            }
            let back = naive_dft_2d(got.amplitude(), m, Direction::Inverse);
            let got_back = fourier_2d(got, Direction::Inverse).unwrap();
            for (a, b) in back.iter().zip(got_back.amplitude()) {
                assert!((a - b).norm() < 1e-9, "m={m}");
            }
        }
    }

    #[test]
    fn gaussian_width_maps_to_conjugate_width() {
        // exp(-x^2/w^2) -> exp(-k^2/(M/(pi w))^2), checked against the naive DFT.
        let m = 64;
        let w = 4.0;
        let g = GridSpec::new(m, 1.0).unwrap();
        let prof: Vec<C64> = (0..m)
            .map(|k| C64::new((-(g.offset(k) / w).powi(2)).exp(), 0.0))
            .collect();
        let amp: Vec<C64> = (0..m * m)
            .map(|idx| prof[idx / m] * prof[idx % m])
            .collect();
        let s = BiphotonState::normalized(g, amp, Domain::Position).unwrap();
        let oracle = naive_dft_2d(s.amplitude(), m, Direction::Forward);
        let f = fourier_2d(s, Direction::Forward).unwrap();
        let wk = m as f64 / (PI * w);
        let c = g.center();
        let peak = oracle[c * m + c].re;
        for k in 0..m {
            let expect = peak * (-(g.offset(k) / wk).powi(2)).exp();
            assert!((oracle[c * m + k].re - expect).abs() < 1e-9);
            assert!((f.at(c, k) - oracle[c * m + k]).norm() < 1e-9);
        }
    }

    #[test]
    fn direction_must_match_domain() {
        let s = random_state(8, 1);
        assert!(matches!(
            fourier_2d(s, Direction::Inverse),
            Err(Error::DomainMismatch { .. })
        ));
    }

    #[test]
    fn one_dimensional_round_trip() {
        let g = GridSpec::new(16, 1.0).unwrap();
        let vals: Vec<C64> = (0..16).map(|k| C64::new(k as f64, -(k as f64))).collect();
        let f = Field1D::new(g, vals.clone(), Domain::Position).unwrap();
        let want = naive_dft(&vals, Direction::Forward);
        let k = fourier_1d(f, Direction::Forward).unwrap();
        for (a, b) in want.iter().zip(k.values()) {
            assert!((a - b).norm() < 1e-9);
        }
        let x = fourier_1d(k, Direction::Inverse).unwrap();
        for (a, b) in vals.iter().zip(x.values()) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}
