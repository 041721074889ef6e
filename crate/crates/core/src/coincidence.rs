//! Coincidence matrices, marginals, post-selection and finite-count sampling.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{BiphotonState, Domain, GridSpec};
use crate::rng::{derive_seed, substream, StreamTag};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixKind {
    /// Sums to one.
    Probability,
    /// Integer counts from this many draws.
    Sampled(u64),
}

/// `Gamma(x_i, x_s)`, row = idler, column = signal.
#[derive(Clone, Debug, PartialEq)]
pub struct CoincidenceMatrix {
    grid: GridSpec,
    counts: Vec<f64>,
    kind: MatrixKind,
}

impl CoincidenceMatrix {
    /// Normalize nonnegative weights to a probability matrix.
    pub fn probability(grid: GridSpec, mut values: Vec<f64>) -> Result<Self> {
        let m = grid.size();
        if values.len() != m * m {
            return Err(Error::InvalidParameter(format!(
                "matrix has {} entries, grid expects {}",
                values.len(),
                m * m
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Invariant("coincidence weights must be finite and nonnegative".into()));
        }
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            return Err(Error::Invariant("coincidence matrix has zero total".into()));
        }
        values.iter_mut().for_each(|v| *v /= total);
        Ok(Self {
            grid,
            counts: values,
            kind: MatrixKind::Probability,
        })
    }

    /// `|psi|^2` of a normalized position-domain state.
    pub fn from_state(state: &BiphotonState) -> Result<Self> {
        state.require_domain(Domain::Position)?;
        Self::probability(*state.grid(), state.probabilities())
    }

    pub fn from_counts(grid: GridSpec, counts: Vec<u64>) -> Result<Self> {
        let m = grid.size();
        if counts.len() != m * m {
            return Err(Error::InvalidParameter(format!(
                "matrix has {} entries, grid expects {}",
                counts.len(),
                m * m
            )));
        }
        let n = counts.iter().sum();
        Ok(Self {
            grid,
            counts: counts.into_iter().map(|c| c as f64).collect(),
            kind: MatrixKind::Sampled(n),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn size(&self) -> usize {
        self.grid.size()
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    #[inline]
    pub fn at(&self, idler: usize, signal: usize) -> f64 {
        self.counts[idler * self.grid.size() + signal]
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Comma-separated rows.
    pub fn write_dense<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let m = self.size();
        for row in self.counts.chunks_exact(m) {
            let line: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// `row,col,count` for nonzero entries, preceded by a `# size=M` line.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let m = self.size();
        writeln!(out, "# size={m}")?;
        writeln!(out, "row,col,count")?;
        for (k, v) in self.counts.iter().enumerate() {
            if *v != 0.0 {
                writeln!(out, "{},{},{}", k / m, k % m, format_value(*v))?;
            }
        }
        Ok(())
    }

    pub fn save_dense(&self, path: &Path) -> Result<()> {
        write_file(path, |w| self.write_dense(w))
    }

    pub fn save_triplets(&self, path: &Path) -> Result<()> {
        write_file(path, |w| self.write_triplets(w))
    }
}

pub(crate) fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.9e}")
    }
}

pub(crate) fn write_file(
    path: &Path,
    f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileLabel {
    Singles,
    Marginal,
    PostSelected(i64),
    PostSelectedSum(usize),
    GroundTruth,
}

impl std::fmt::Display for ProfileLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProfileLabel::Singles => write!(f, "singles"),
            ProfileLabel::Marginal => write!(f, "marginal"),
            ProfileLabel::PostSelected(xi) => write!(f, "post_xi{xi}"),
            ProfileLabel::PostSelectedSum(n) => write!(f, "post_n{n}"),
            ProfileLabel::GroundTruth => write!(f, "ground_truth"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageProfile {
    grid: GridSpec,
    values: Vec<f64>,
    label: ProfileLabel,
}

impl ImageProfile {
    pub fn new(grid: GridSpec, values: Vec<f64>, label: ProfileLabel) -> Result<Self> {
        if values.len() != grid.size() {
            return Err(Error::InvalidParameter(format!(
                "profile has {} samples, grid expects {}",
                values.len(),
                grid.size()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Invariant("profile values must be finite and nonnegative".into()));
        }
        Ok(Self { grid, values, label })
    }

    pub fn new_normalized(grid: GridSpec, values: Vec<f64>, label: ProfileLabel) -> Result<Self> {
        Self::new(grid, values, label)?.normalized()
    }

    /// Scaled to unit sum.
    pub fn normalized(mut self) -> Result<Self> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::Invariant(format!("{} profile has zero total", self.label)));
        }
        self.values.iter_mut().for_each(|v| *v /= total);
        Ok(self)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn label(&self) -> ProfileLabel {
        self.label
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Two columns: coordinate, value.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,{}", self.label)?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", self.grid.coordinate(k), format_value(*v))?;
        }
        Ok(())
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        write_file(path, |w| self.write_text(w))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarginalAxis {
    /// `Gamma_s(x_s) = sum_{x_i} Gamma(x_i, x_s)`.
    OverIdler,
    /// `Gamma_i(x_i) = sum_{x_s} Gamma(x_i, x_s)`.
    OverSignal,
}

pub fn marginal(gamma: &CoincidenceMatrix, which: MarginalAxis) -> ImageProfile {
    let m = gamma.size();
    let mut out = vec![0.0; m];
    for (i, row) in gamma.counts.chunks_exact(m).enumerate() {
        match which {
            MarginalAxis::OverIdler => out.iter_mut().zip(row).for_each(|(o, v)| *o += v),
            MarginalAxis::OverSignal => out[i] = row.iter().sum(),
        }
    }
    ImageProfile {
        grid: gamma.grid,
        values: out,
        label: ProfileLabel::Marginal,
    }
}

/// Signal-arm single-photon image of a position-domain state.
pub fn singles(state: &BiphotonState) -> Result<ImageProfile> {
    let gamma = CoincidenceMatrix::from_state(state)?;
    Ok(singles_of(&gamma))
}

/// Signal marginal of `Gamma` relabelled as singles; equal to the singles
/// image at unit detection efficiency.
pub fn singles_of(gamma: &CoincidenceMatrix) -> ImageProfile {
    let mut p = marginal(gamma, MarginalAxis::OverIdler);
    p.label = ProfileLabel::Singles;
    p
}

/// `Gamma_post(x; xi) = Gamma(x + xi, x)`, zero where `x + xi` leaves the grid.
pub fn postselect(gamma: &CoincidenceMatrix, xi: i64) -> ImageProfile {
    let m = gamma.size() as i64;
    let values = (0..m)
        .map(|x| {
            let i = x + xi;
            if (0..m).contains(&i) {
                gamma.at(i as usize, x as usize)
            } else {
                0.0
            }
        })
        .collect();
    ImageProfile {
        grid: gamma.grid,
        values,
        label: ProfileLabel::PostSelected(xi),
    }
}

/// Offsets summed by the `n`-window: `-floor((n-1)/2) ..= ceil((n-1)/2)`.
pub fn window_offsets(n: usize) -> std::ops::RangeInclusive<i64> {
    let n = n as i64;
    -((n - 1) / 2)..=(n / 2)
}

/// `Gamma_post^(n)(x) = sum_xi Gamma_post(x - xi; xi) = sum_xi Gamma(x, x - xi)`.
pub fn postselect_sum(gamma: &CoincidenceMatrix, n: usize) -> Result<ImageProfile> {
    let m = gamma.size();
    if n == 0 || n > (m / 8).max(1) {
        return Err(Error::InvalidParameter(format!("window size {n} outside [1, M/8 = {}]", m / 8)));
    }
    let mi = m as i64;
    let mut values = vec![0.0; m];
    for xi in window_offsets(n) {
        for (x, v) in values.iter_mut().enumerate() {
            let s = x as i64 - xi;
            if (0..mi).contains(&s) {
                *v += gamma.at(x, s as usize);
            }
        }
    }
    Ok(ImageProfile {
        grid: gamma.grid,
        values,
        label: ProfileLabel::PostSelectedSum(n),
    })
}

/// Per-arm efficiency and uncorrelated background for sampled acquisition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionModel {
    pub efficiency: f64,
    /// Mean number of accidental coincidences, uniform over the matrix.
    pub accidentals: f64,
}

impl Default for DetectionModel {
    fn default() -> Self {
        Self {
            efficiency: 1.0,
            accidentals: 0.0,
        }
    }
}

impl DetectionModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::InvalidParameter(format!(
                "detection efficiency {} outside [0, 1]",
                self.efficiency
            )));
        }
        if !(self.accidentals.is_finite() && self.accidentals >= 0.0) {
            return Err(Error::InvalidParameter("accidental rate must be >= 0".into()));
        }
        Ok(())
    }
}

/// Pairs per sampling chunk. Each chunk has its own substream.
pub const SAMPLE_CHUNK: u64 = 1 << 20;

fn alias_table(p: &[f64]) -> Result<WeightedAliasIndex<f64>> {
    WeightedAliasIndex::new(p.to_vec())
        .map_err(|e| Error::InvalidParameter(format!("cannot sample from distribution: {e}")))
}

fn chunks(n: u64) -> Vec<(u64, u64)> {
    (0..n.div_ceil(SAMPLE_CHUNK))
        .map(|c| (c, SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK)))
        .collect()
}

/// Draw `n` independent pairs from a probability matrix.
pub fn sample_pairs(gamma: &CoincidenceMatrix, n: u64, seed: u64) -> Result<CoincidenceMatrix> {
    Ok(sample_acquisition(gamma, n, DetectionModel::default(), None, seed)?.coincidences)
}

/// Outcome of a finite-budget acquisition.
#[derive(Clone, Debug)]
pub struct SampledAcquisition {
    pub coincidences: CoincidenceMatrix,
    /// Signal-arm detections whether or not the partner was detected.
    pub singles: ImageProfile,
    /// Accidental coincidences included in `coincidences`.
    pub accidental_count: u64,
}

/// Draw `n` emitted pairs from `gamma`, detect each photon with the model's
/// efficiency and add Poisson accidentals. When `singles_distribution` is
/// given, signal singles are drawn from it (for geometries where the singles
/// image differs from the coincidence marginal); otherwise they come from
/// the sampled pairs.
pub fn sample_acquisition(
    gamma: &CoincidenceMatrix,
    n: u64,
    model: DetectionModel,
    singles_distribution: Option<&ImageProfile>,
    seed: u64,
) -> Result<SampledAcquisition> {
    if gamma.kind != MatrixKind::Probability {
        return Err(Error::InvalidParameter("sampling requires a probability matrix".into()));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("pair budget must be >= 1".into()));
    }
    model.validate()?;
    let m = gamma.size();
    let table = alias_table(&gamma.counts)?;
    let singles_table = singles_distribution.map(|p| alias_table(p.values())).transpose()?;
    let eta = model.efficiency;

    let parts = chunks(n)
        .into_par_iter()
        .map(|(c, len)| {
            let mut rng = substream(seed, StreamTag::PairSampling, c);
            let mut coinc = vec![0u32; m * m];
            let mut sing = vec![0u64; m];
            for _ in 0..len {
                let bin = table.sample(&mut rng);
                let (di, ds) = if eta >= 1.0 {
                    (true, true)
                } else {
                    (rng.random_bool(eta), rng.random_bool(eta))
                };
                if di && ds {
                    coinc[bin] += 1;
                }
                if ds && singles_table.is_none() {
                    sing[bin % m] += 1;
                }
            }
            if let Some(t) = &singles_table {
                let k = if eta >= 1.0 {
                    len
                } else {
                    Binomial::new(len, eta).expect("efficiency checked").sample(&mut rng)
                };
                for _ in 0..k {
                    sing[t.sample(&mut rng)] += 1;
                }
            }
            (coinc, sing)
        })
        .collect::<Vec<_>>();

    let mut coinc = vec![0u64; m * m];
    let mut sing = vec![0u64; m];
    for (c, s) in parts {
        coinc.iter_mut().zip(c).for_each(|(a, b)| *a += b as u64);
        sing.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }

    let mut accidental_count = 0;
    if model.accidentals > 0.0 {
        let mut rng = substream(derive_seed(seed, &[0xACC]), StreamTag::PairSampling, 0);
        accidental_count = Poisson::new(model.accidentals)
            .map_err(|e| Error::InvalidParameter(format!("accidental rate: {e}")))?
            .sample(&mut rng) as u64;
        for _ in 0..accidental_count {
            coinc[rng.random_range(0..m * m)] += 1;
        }
    }

    Ok(SampledAcquisition {
        coincidences: CoincidenceMatrix::from_counts(gamma.grid, coinc)?,
        singles: ImageProfile::new(
            gamma.grid,
            sing.into_iter().map(|v| v as f64).collect(),
            ProfileLabel::Singles,
        )?,
        accidental_count,
    })
}

/// Pearson chi-square statistic of sampled counts against a probability
/// matrix, pooling bins with expected count below `min_expected`. Returns
/// `(statistic, degrees of freedom)`.
pub fn chi_square(sampled: &CoincidenceMatrix, expected: &CoincidenceMatrix, min_expected: f64) -> (f64, usize) {
    let n = sampled.total();
    let mut stat = 0.0;
    let mut bins = 0usize;
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (o, p) in sampled.counts.iter().zip(&expected.counts) {
        let e = p * n;
        if e < min_expected {
            pool_o += o;
            pool_e += e;
        } else {
            stat += (o - e).powi(2) / e;
            bins += 1;
        }
    }
    if pool_e > 0.0 {
        stat += (pool_o - pool_e).powi(2) / pool_e;
        bins += 1;
    }
    (stat, bins.saturating_sub(1))
}

/// Row-major grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "image data has {} samples, expected {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut f64 {
        &mut self.data[y * self.width + x]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Zero-mean Laplacian-of-Gaussian kernel of radius `ceil(3 sigma)`.
pub fn log_kernel(sigma: f64) -> Result<Image2D> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("LoG sigma {sigma} must be > 0")));
    }
    let r = (3.0 * sigma).ceil() as isize;
    let n = (2 * r + 1) as usize;
    let s2 = sigma * sigma;
    let mut k = Vec::with_capacity(n * n);
    for y in -r..=r {
        for x in -r..=r {
            let q = (x * x + y * y) as f64 / (2.0 * s2);
            k.push(-(1.0 - q) * (-q).exp() / (std::f64::consts::PI * s2 * s2));
        }
    }
    // truncation leaves a small DC term; remove it so constants map to zero
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    Image2D::new(n, n, k)
}

/// Convolution with the LoG kernel, zero-padded borders.
pub fn laplacian_gaussian_filter(image: &Image2D, sigma: f64) -> Result<Image2D> {
    let k = log_kernel(sigma)?;
    let r = (k.width / 2) as isize;
    let (w, h) = (image.width as isize, image.height as isize);
    let mut out = Image2D::zeros(image.width, image.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -r..=r {
                let yy = y - dy;
                if !(0..h).contains(&yy) {
                    continue;
                }
                for dx in -r..=r {
                    let xx = x - dx;
                    if (0..w).contains(&xx) {
                        acc += image.at(xx as usize, yy as usize) * k.at((dx + r) as usize, (dy + r) as usize);
                    }
                }
            }
            *out.at_mut(x as usize, y as usize) = acc;
        }
    }
    Ok(out)
}
