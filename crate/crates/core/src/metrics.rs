//! Image-quality figures: MTF, normalized absolute difference, correlation
//! widths and the scattering-strength relations.

use std::fmt::Write as _;

use rustfft::FftPlanner;

use crate::coincidence::Image2D;
use crate::error::{Error, Result};
use crate::grid::{C64, GridSpec};
use crate::pipeline::{Configuration, ObjectMask, Pipeline, PipelineConfig};
use crate::screens::{characterize_screens, generate_screen, KnotLattice, ScreenCalibration, ScreenParams};
use crate::source::{correlation_width_of, Sampling, SourceParams};

/// Half-width in bins of the band searched around `k0`.
pub const K0_BAND: usize = 2;
/// Half-width in bins of the band searched around zero frequency.
pub const DC_BAND: usize = 1;
/// Minimum ratio of the ground-truth peak to the median spectral magnitude.
pub const MIN_PEAK_TO_FLOOR: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mtf {
    pub mtf: f64,
    /// Dominant frequency in bins (radius in 2D).
    pub k0: f64,
}

/// `|DFT|` in standard bin order.
pub fn spectrum_1d(values: &[f64]) -> Vec<f64> {
    let mut buf: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

pub fn spectrum_2d(image: &Image2D) -> Vec<f64> {
    let (w, h) = (image.width, image.height);
    let mut buf: Vec<C64> = image.data.iter().map(|&v| C64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(w).process(&mut buf);
    let col = planner.plan_fft_forward(h);
    let mut tmp = vec![C64::default(); h];
    for x in 0..w {
        for y in 0..h {
            tmp[y] = buf[y * w + x];
        }
        col.process(&mut tmp);
        for y in 0..h {
            buf[y * w + x] = tmp[y];
        }
    }
    buf.iter().map(|c| c.norm()).collect()
}

fn signed_bin(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_image(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invariant(format!("{what} has non-finite values")));
    }
    if values.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Invariant(format!("{what} has zero total")));
    }
    Ok(())
}

/// Dominant nonzero frequency of a 1D ground truth. The DC lobe is skipped by
/// walking down to the first local minimum of the spectrum.
pub fn dominant_frequency(ground_truth: &[f64]) -> Result<usize> {
    check_image(ground_truth, "ground truth")?;
    let n = ground_truth.len();
    let s = spectrum_1d(ground_truth);
    let half = n / 2;
    if half < 2 {
        return Err(Error::NoDominantFrequency("profile too short".into()));
    }
    let mut k = 1;
    while k < half && s[k + 1] < s[k] {
        k += 1;
    }
    let (k0, peak) = (k..=half)
        .map(|k| (k, s[k]))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let floor = median(s[1..=half].to_vec());
    if k0 == 0 || !(peak >= MIN_PEAK_TO_FLOOR * floor) || peak <= 1e-12 * s[0] {
        return Err(Error::NoDominantFrequency(format!(
            "spectral peak {peak:.3e} is below {MIN_PEAK_TO_FLOOR} x the noise floor {floor:.3e}"
        )));
    }
    Ok(k0)
}

/// MTF of `image` at a known dominant frequency `k0`.
pub fn mtf_at(image: &[f64], k0: usize) -> Result<f64> {
    check_image(image, "image")?;
    let n = image.len();
    let s = spectrum_1d(image);
    let band = |center: isize, half: usize| -> f64 {
        (-(half as isize)..=half as isize)
            .map(|d| s[(center + d).rem_euclid(n as isize) as usize])
            .fold(0.0, f64::max)
    };
    Ok(band(k0 as isize, K0_BAND) / band(0, DC_BAND))
}

/// `max |F(k ~ k0)| / max |F(k ~ 0)|` with `k0` taken from the ground truth.
pub fn mtf(image: &[f64], ground_truth: &[f64]) -> Result<Mtf> {
    if image.len() != ground_truth.len() {
        return Err(Error::InvalidParameter("image and ground truth differ in length".into()));
    }
    let k0 = dominant_frequency(ground_truth)?;
    Ok(Mtf {
        mtf: mtf_at(image, k0)?,
        k0: k0 as f64,
    })
}

/// 2D MTF: `k0` is the radius of the strongest ground-truth bin outside the
/// DC lobe; the numerator is the maximum over the annulus `| |k| - k0 | <= 2`.
pub fn mtf_2d(image: &Image2D, ground_truth: &Image2D) -> Result<Mtf> {
    if (image.width, image.height) != (ground_truth.width, ground_truth.height) {
        return Err(Error::InvalidParameter("image and ground truth differ in shape".into()));
    }
    let k0 = dominant_radius(ground_truth)?;
    Ok(Mtf {
        mtf: mtf_2d_at(image, k0)?,
        k0,
    })
}

fn radii(w: usize, h: usize) -> Vec<f64> {
    (0..w * h)
        .map(|k| signed_bin(k % w, w).hypot(signed_bin(k / w, h)))
        .collect()
}

pub fn dominant_radius(ground_truth: &Image2D) -> Result<f64> {
    check_image(&ground_truth.data, "ground truth")?;
    let (w, h) = (ground_truth.width, ground_truth.height);
    let s = spectrum_2d(ground_truth);
    let r = radii(w, h);
    let rmax = (w.min(h) / 2) as usize;
    if rmax < 2 {
        return Err(Error::NoDominantFrequency("image too small".into()));
    }
    let mut ring = vec![0.0f64; rmax + 1];
    for (rad, v) in r.iter().zip(&s) {
        let b = rad.round() as usize;
        if b <= rmax {
            ring[b] = ring[b].max(*v);
        }
    }
    let mut start = 1;
    while start < rmax && ring[start + 1] < ring[start] {
        start += 1;
    }
    let (k, peak) = r
        .iter()
        .zip(&s)
        .filter(|(rad, _)| rad.round() as usize >= start && **rad <= rmax as f64)
        .fold((0.0, f64::NEG_INFINITY), |a, (rad, v)| if *v > a.1 { (*rad, *v) } else { a });
    let floor = median(
        r.iter()
            .zip(&s)
            .filter(|(rad, _)| **rad >= 1.0)
            .map(|(_, v)| *v)
            .collect(),
    );
    if !(peak >= MIN_PEAK_TO_FLOOR * floor) || k == 0.0 {
        return Err(Error::NoDominantFrequency(format!(
            "spectral peak {peak:.3e} is below {MIN_PEAK_TO_FLOOR} x the noise floor {floor:.3e}"
        )));
    }
    Ok(k)
}

pub fn mtf_2d_at(image: &Image2D, k0: f64) -> Result<f64> {
    check_image(&image.data, "image")?;
    let s = spectrum_2d(image);
    let r = radii(image.width, image.height);
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for (rad, v) in r.iter().zip(&s) {
        if (rad - k0).abs() <= K0_BAND as f64 {
            num = num.max(*v);
        }
        if *rad <= DC_BAND as f64 {
            den = den.max(*v);
        }
    }
    Ok(num / den)
}

/// `sum |g - r| / sum (g + r)` after scaling both images to unit sum.
pub fn rms(reconstruction: &[f64], ground_truth: &[f64]) -> Result<f64> {
    if reconstruction.len() != ground_truth.len() {
        return Err(Error::InvalidParameter("image and ground truth differ in length".into()));
    }
    for (v, what) in [(reconstruction, "reconstruction"), (ground_truth, "ground truth")] {
        check_image(v, what)?;
        if v.iter().any(|x| *x < 0.0) {
            return Err(Error::InvalidParameter(format!("{what} has negative values")));
        }
    }
    let sr: f64 = reconstruction.iter().sum();
    let sg: f64 = ground_truth.iter().sum();
    let num: f64 = reconstruction
        .iter()
        .zip(ground_truth)
        .map(|(r, g)| (g / sg - r / sr).abs())
        .sum();
    // both normalized images sum to one
    Ok(num / 2.0)
}

/// Which photons meet the scattering layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScatterGeometry {
    BothPhotons,
    OneArm,
}

impl ScatterGeometry {
    pub fn name(self) -> &'static str {
        match self {
            ScatterGeometry::BothPhotons => "both",
            ScatterGeometry::OneArm => "one_arm",
        }
    }

    fn divisor(self) -> f64 {
        match self {
            ScatterGeometry::BothPhotons => 1.0,
            ScatterGeometry::OneArm => 2.0,
        }
    }

    /// Smallest broadening ratio the relation can produce.
    pub fn min_ratio(self) -> f64 {
        (1.0 / self.divisor()).sqrt()
    }
}

/// `w_- / w_-0` predicted for a strength `w_q / w_A`.
pub fn predict_ratio(strength: f64, geometry: ScatterGeometry) -> f64 {
    ((1.0 + 3.0 * strength * strength) / geometry.divisor()).sqrt()
}

/// Inverse of [`predict_ratio`]; the positive root.
pub fn estimate_strength(ratio: f64, geometry: ScatterGeometry) -> Result<f64> {
    if !ratio.is_finite() {
        return Err(Error::InvalidParameter(format!("broadening ratio {ratio} is not finite")));
    }
    let arg = (geometry.divisor() * ratio * ratio - 1.0) / 3.0;
    if arg < -1e-12 {
        return Err(Error::NoScattering(format!(
            "broadening ratio {ratio:.6} is below the minimum {:.6}",
            geometry.min_ratio()
        )));
    }
    Ok(arg.max(0.0).sqrt())
}

/// Ratio of correlation widths from two measurements.
pub fn strength_from_widths(w_minus: f64, w_minus_0: f64, geometry: ScatterGeometry) -> Result<f64> {
    if !(w_minus_0 > 0.0 && w_minus > 0.0) {
        return Err(Error::InvalidParameter("correlation widths must be > 0".into()));
    }
    estimate_strength(w_minus / w_minus_0, geometry)
}

/// Image-quality summary of one reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub mtf: f64,
    pub rms: f64,
    pub k0: f64,
    pub w_minus: Option<f64>,
    pub w_minus_0: Option<f64>,
    pub strength_estimate: Option<f64>,
}

impl MetricsReport {
    pub fn evaluate(label: impl Into<String>, image: &[f64], ground_truth: &[f64]) -> Result<Self> {
        let m = mtf(image, ground_truth)?;
        Ok(Self {
            label: label.into(),
            mtf: m.mtf,
            rms: rms(image, ground_truth)?,
            k0: m.k0,
            w_minus: None,
            w_minus_0: None,
            strength_estimate: None,
        })
    }

    pub fn with_widths(mut self, w_minus: f64, w_minus_0: f64, geometry: ScatterGeometry) -> Self {
        self.w_minus = Some(w_minus);
        self.w_minus_0 = Some(w_minus_0);
        self.strength_estimate = strength_from_widths(w_minus, w_minus_0, geometry).ok();
        self
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.9}"));
        vec![
            ("label", self.label.clone()),
            ("mtf", format!("{:.9}", self.mtf)),
            ("rms", format!("{:.9}", self.rms)),
            ("k0", format!("{:.6}", self.k0)),
            ("k0_band", K0_BAND.to_string()),
            ("w_minus", opt(self.w_minus)),
            ("w_minus_0", opt(self.w_minus_0)),
            ("strength_estimate", opt(self.strength_estimate)),
        ]
    }

    /// `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn csv_header() -> String {
        "label,mtf,rms,k0,k0_band,w_minus,w_minus_0,strength_estimate".to_string()
    }

    pub fn csv_row(&self) -> String {
        self.fields().into_iter().map(|(_, v)| v).collect::<Vec<_>>().join(",")
    }
}

/// Parameters of a broadening-law sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct BroadeningSetup {
    pub size: usize,
    pub w_q: f64,
    pub w_0: f64,
    pub realizations: usize,
    pub seed: u64,
    pub lattice: KnotLattice,
    /// Realizations per segment count when building the calibration table.
    pub calibration_realizations: usize,
}

impl Default for BroadeningSetup {
    fn default() -> Self {
        let size = 128;
        let w_q = 0.2 * size as f64;
        Self {
            size,
            w_q,
            w_0: w_q / 15.0,
            realizations: 40,
            seed: 1,
            lattice: KnotLattice::Anchored,
            calibration_realizations: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BroadeningPoint {
    pub geometry: ScatterGeometry,
    pub target_strength: f64,
    pub segments: usize,
    /// `w_q / w_A` measured on the screens actually used.
    pub strength: f64,
    pub w_minus_0: f64,
    /// Mean over realizations of `w_- / w_-0`.
    pub measured_ratio: f64,
    pub ratio_std: f64,
    pub predicted_ratio: f64,
}

impl BroadeningPoint {
    pub fn relative_error(&self) -> f64 {
        self.measured_ratio / self.predicted_ratio - 1.0
    }
}

/// Measure correlation broadening against the closed-form relations for
/// both geometries at each target strength.
pub fn validate_broadening_law(setup: &BroadeningSetup, strengths: &[f64]) -> Result<Vec<BroadeningPoint>> {
    let grid = GridSpec::new(setup.size, 1.0)?;
    let source = SourceParams::new(setup.w_q, setup.w_0)?;
    let calibration = ScreenCalibration::full(grid, setup.calibration_realizations, setup.seed, setup.lattice)?;
    let mut out = Vec::new();
    for (k, &target) in strengths.iter().enumerate() {
        let (segments, _) = calibration.segments_for_strength(setup.w_q, target)?;
        let screen = ScreenParams {
            segments,
            realizations: setup.realizations,
            base_seed: crate::rng::derive_seed(setup.seed, &[crate::rng::StreamTag::SweepJob as u64, k as u64]),
            lattice: setup.lattice,
        };
        let screens = (0..setup.realizations)
            .map(|r| generate_screen(grid, &screen, r))
            .collect::<Result<Vec<_>>>()?;
        let strength = characterize_screens(&screens, setup.w_q)?.strength;
        for geometry in [ScatterGeometry::BothPhotons, ScatterGeometry::OneArm] {
            let mut config = PipelineConfig::new(source, screen, ObjectMask::uniform(grid));
            config.sampling = Sampling::Relaxed;
            config.configuration = match geometry {
                ScatterGeometry::BothPhotons => Configuration::BothPhotons,
                ScatterGeometry::OneArm => Configuration::OneArmScattered,
            };
            let pipeline = Pipeline::new(config)?;
            let (w0, _) = correlation_width_of(&pipeline.source_position().probabilities(), setup.size)?;
            let ratios = (0..setup.realizations)
                .map(|r| {
                    let st = pipeline.propagate_realization(r)?.state;
                    Ok(correlation_width_of(&st.probabilities(), setup.size)?.0 / w0)
                })
                .collect::<Result<Vec<f64>>>()?;
            let n = ratios.len() as f64;
            let mean = ratios.iter().sum::<f64>() / n;
            let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            out.push(BroadeningPoint {
                geometry,
                target_strength: target,
                segments,
                strength,
                w_minus_0: w0,
                measured_ratio: mean,
                ratio_std: var.sqrt(),
                predicted_ratio: predict_ratio(strength, geometry),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(n: usize, k0: usize, c: f64) -> Vec<f64> {
        (0..n)
            .map(|x| 1.0 + c * (2.0 * std::f64::consts::PI * (k0 * x) as f64 / n as f64).cos())
            .collect()
    }

    #[test]
    fn cosine_mtf_is_half_the_contrast() {
        for (n, k0, c) in [(128, 10, 0.4), (512, 16, 0.9), (64, 5, 0.1)] {
            let img = cosine(n, k0, c);
            let m = mtf(&img, &img).unwrap();
            assert_eq!(m.k0, k0 as f64);
            assert!((m.mtf - c / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_ground_truth_has_no_dominant_frequency() {
        assert!(matches!(dominant_frequency(&vec![1.0; 64]), Err(Error::NoDominantFrequency(_))));
        assert!(dominant_frequency(&vec![0.0; 64]).is_err());
    }

    #[test]
    fn mtf_scale_and_translation_invariance() {
        let gt = cosine(128, 8, 0.5);
        let img: Vec<f64> = (0..128).map(|x| 1.0 + ((x * 7919) % 13) as f64 / 13.0).collect();
        let a = mtf(&img, &gt).unwrap().mtf;
        let scaled: Vec<f64> = img.iter().map(|v| 3.7 * v).collect();
        assert!((mtf(&scaled, &gt).unwrap().mtf - a).abs() < 1e-12);
        let mut rolled = img.clone();
        rolled.rotate_left(17);
        assert!((mtf(&rolled, &gt).unwrap().mtf - a).abs() < 1e-9);
    }

    /// Direct O(N^2) DFT magnitude at one bin.
    fn dft_mag(v: &[f64], k: usize) -> f64 {
        let n = v.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (x, y) in v.iter().enumerate() {
            let a = -2.0 * std::f64::consts::PI * (k * x) as f64 / n;
            re += y * a.cos();
            im += y * a.sin();
        }
        re.hypot(im)
    }

    #[test]
    fn spectrum_matches_direct_dft() {
        let v: Vec<f64> = (0..64).map(|x| ((x * 31) % 7) as f64).collect();
        let s = spectrum_1d(&v);
        for k in 0..64 {
            assert!((s[k] - dft_mag(&v, k)).abs() < 1e-9);
        }
    }

    #[test]
    fn aperture_ground_truth_mtf_regression() {
        // 16 periods of a 16-px-open square wave: |F(16)| = 16 / sin(pi/32), F(0) = 256
        let grid = GridSpec::new(512, 1.0).unwrap();
        let o = ObjectMask::aperture_array(grid, 32, 0.5).unwrap();
        let t = o.intensity();
        let m = mtf(&t, &t).unwrap();
        assert_eq!(m.k0, 16.0);
        let oracle = dft_mag(&t, 16) / dft_mag(&t, 0);
        assert!((m.mtf - oracle).abs() < 1e-12);
        let closed = 16.0 / (std::f64::consts::PI / 32.0).sin() / 256.0;
        assert!((m.mtf - closed).abs() < 1e-12, "{}", m.mtf);
    }

    #[test]
    fn rms_limits_and_symmetry() {
        let a = vec![1.0, 2.0, 3.0, 0.0];
        assert_eq!(rms(&a, &a).unwrap(), 0.0);
        let scaled: Vec<f64> = a.iter().map(|v| v * 5.0).collect();
        assert!(rms(&scaled, &a).unwrap() < 1e-15);
        let b = vec![0.0, 0.0, 0.0, 6.0];
        assert!((rms(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let c = vec![2.0, 1.0, 1.0, 1.0];
        assert_eq!(rms(&a, &c).unwrap(), rms(&c, &a).unwrap());
        assert!(rms(&a, &[0.0; 4]).is_err());
    }

    #[test]
    fn strength_relations() {
        let r = predict_ratio(3.4, ScatterGeometry::BothPhotons);
        assert!((r - (1.0f64 + 3.0 * 3.4 * 3.4).sqrt()).abs() < 1e-15);
        assert!((r - 5.97).abs() < 0.01);
        assert!((estimate_strength(r, ScatterGeometry::BothPhotons).unwrap() - 3.4).abs() < 1e-12);
        let r = predict_ratio(6.8, ScatterGeometry::OneArm);
        assert!((r - 8.35).abs() < 0.01);
        assert!((estimate_strength(r, ScatterGeometry::OneArm).unwrap() - 6.8).abs() < 1e-12);
        assert_eq!(estimate_strength(1.0, ScatterGeometry::BothPhotons).unwrap(), 0.0);
        assert!(matches!(
            estimate_strength(0.9, ScatterGeometry::BothPhotons),
            Err(Error::NoScattering(_))
        ));
        assert!(estimate_strength(0.70, ScatterGeometry::OneArm).is_err());
        assert!(estimate_strength(0.75, ScatterGeometry::OneArm).is_ok());
    }

    #[test]
    fn report_serialization() {
        let gt = cosine(64, 4, 0.5);
        let r = MetricsReport::evaluate("post", &gt, &gt)
            .unwrap()
            .with_widths(6.0, 2.0, ScatterGeometry::BothPhotons);
        let kv = r.to_key_value();
        assert!(kv.contains("mtf = 0.250000000"));
        assert!(kv.contains("k0_band = 2"));
        assert_eq!(
            MetricsReport::csv_header().split(',').count(),
            r.csv_row().split(',').count()
        );
        assert!((r.strength_estimate.unwrap() - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mtf_2d_of_a_grating() {
        let (w, h) = (64, 64);
        let data = (0..w * h)
            .map(|k| 1.0 + 0.6 * (2.0 * std::f64::consts::PI * 8.0 * (k % w) as f64 / w as f64).cos())
            .collect();
        let img = Image2D::new(w, h, data).unwrap();
        let m = mtf_2d(&img, &img).unwrap();
        assert_eq!(m.k0, 8.0);
        assert!((m.mtf - 0.3).abs() < 1e-9);
    }
}
