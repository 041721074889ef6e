//! Source, far-field screens and object chained to the detection plane.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::coincidence::{CoincidenceMatrix, ImageProfile, ProfileLabel};
use crate::error::{Error, Result};
use crate::grid::{BiphotonState, Direction, Domain, Fourier, GridSpec};
use crate::screens::{apply_screen_both, apply_screen_one, generate_screen_in, Arm, PhaseScreen, ScreenParams, ScreenPlane};
use crate::source::{make_source, Sampling, SourceParams};

/// How an object transmission profile was produced.
#[derive(Clone, Debug, PartialEq)]
pub enum ObjectDescriptor {
    /// Periodic apertures of `period` pixels, open for `duty * period` pixels,
    /// one aperture centered on the optical axis.
    ApertureArray { period: usize, duty: f64 },
    /// `count` transmitting lines of `width` pixels separated by `gap`
    /// pixels, centered on the axis.
    Lines { count: usize, width: usize, gap: usize },
    FromFile(PathBuf),
    /// `O = 1` everywhere.
    Uniform,
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMask {
    grid: GridSpec,
    transmission: Vec<f64>,
    descriptor: ObjectDescriptor,
}

impl ObjectMask {
    pub fn uniform(grid: GridSpec) -> Self {
        Self {
            grid,
            transmission: vec![1.0; grid.size()],
            descriptor: ObjectDescriptor::Uniform,
        }
    }

    pub fn aperture_array(grid: GridSpec, period: usize, duty: f64) -> Result<Self> {
        let m = grid.size();
        if period < 2 || period > m {
            return Err(Error::InvalidParameter(format!("aperture period {period} outside [2, {m}]")));
        }
        if !(duty > 0.0 && duty < 1.0) {
            return Err(Error::InvalidParameter(format!("duty cycle {duty} outside (0, 1)")));
        }
        let open = ((duty * period as f64).round() as usize).clamp(1, period - 1);
        let p = period as isize;
        let shift = (open / 2) as isize;
        let transmission = (0..m)
            .map(|k| {
                let x = k as isize - (m / 2) as isize + shift;
                if (x.rem_euclid(p) as usize) < open {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            grid,
            transmission,
            descriptor: ObjectDescriptor::ApertureArray { period, duty },
        })
    }

    pub fn lines(grid: GridSpec, count: usize, width: usize, gap: usize) -> Result<Self> {
        let m = grid.size();
        if count == 0 || width == 0 {
            return Err(Error::InvalidParameter("line count and width must be >= 1".into()));
        }
        let span = count * width + (count - 1) * gap;
        if span > m {
            return Err(Error::InvalidParameter(format!(
                "{count} lines of width {width} with gap {gap} span {span} px, grid has {m}"
            )));
        }
        let start = m / 2 - span / 2;
        let mut transmission = vec![0.0; m];
        for l in 0..count {
            let a = start + l * (width + gap);
            transmission[a..a + width].iter_mut().for_each(|t| *t = 1.0);
        }
        Ok(Self {
            grid,
            transmission,
            descriptor: ObjectDescriptor::Lines { count, width, gap },
        })
    }

    /// Explicit transmission values; out-of-range values are clamped to
    /// `[0, 1]` with a warning.
    pub fn from_transmission(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        Self::checked(grid, values, ObjectDescriptor::Custom)
    }

    fn checked(grid: GridSpec, mut values: Vec<f64>, descriptor: ObjectDescriptor) -> Result<Self> {
        if values.len() != grid.size() {
            return Err(Error::InvalidParameter(format!(
                "object has {} samples, grid expects {}",
                values.len(),
                grid.size()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("object transmission must be finite".into()));
        }
        let clamped = values.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
        if clamped > 0 {
            log::warn!("{clamped} object transmission values clamped to [0, 1]");
            values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        Ok(Self {
            grid,
            transmission: values,
            descriptor,
        })
    }

    /// One transmission value per line, `M` lines. Blank lines and `#`
    /// comments are skipped.
    pub fn from_file(grid: GridSpec, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = Vec::with_capacity(grid.size());
        for (n, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            values.push(t.parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("not a number: {t:?}"),
            })?);
        }
        Self::checked(grid, values, ObjectDescriptor::FromFile(path.to_path_buf()))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn transmission(&self) -> &[f64] {
        &self.transmission
    }

    pub fn descriptor(&self) -> &ObjectDescriptor {
        &self.descriptor
    }

    /// `|O(x)|^2`.
    pub fn intensity(&self) -> Vec<f64> {
        self.transmission.iter().map(|t| t * t).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Configuration {
    /// Both photons cross the screens and the object.
    #[default]
    BothPhotons,
    /// Only one photon meets the screens and the object; the other is a
    /// spatial reference.
    OneArmScattered,
    /// One static screen in the object's far field, none before it.
    StaticAfterObject,
}

/// How realizations enter the ensemble average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Weighting {
    /// Each realization contributes `T_r |psi_r|^2`.
    #[default]
    Throughput,
    /// Each realization contributes its normalized `|psi_r|^2`.
    Unit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub configuration: Configuration,
    pub screens_before: bool,
    pub screens_after: bool,
    pub source: SourceParams,
    pub sampling: Sampling,
    /// Realization count lives in `screen.realizations`.
    pub screen: ScreenParams,
    pub object: ObjectMask,
    pub weighting: Weighting,
    /// Arm carrying object and screens in `OneArmScattered`.
    pub scattered_arm: Arm,
}

impl PipelineConfig {
    pub fn new(source: SourceParams, screen: ScreenParams, object: ObjectMask) -> Self {
        Self {
            configuration: Configuration::BothPhotons,
            screens_before: true,
            screens_after: true,
            source,
            sampling: Sampling::Strict,
            screen,
            object,
            weighting: Weighting::Throughput,
            scattered_arm: Arm::Signal,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.object.grid()
    }

    pub fn realizations(&self) -> usize {
        self.screen.realizations
    }

    pub fn has_screens(&self) -> bool {
        self.screens_before || self.screens_after
    }

    pub fn validate(&self) -> Result<()> {
        if self.configuration == Configuration::StaticAfterObject
            && (self.screens_before || self.screen.realizations != 1)
        {
            return Err(Error::Config(
                "static configuration requires no screen before the object and exactly one realization".into(),
            ));
        }
        if self.screen.realizations == 0 {
            return Err(Error::Config("realization count must be >= 1".into()));
        }
        if self.has_screens() {
            self.screen.validate(self.grid())?;
        }
        Ok(())
    }
}

/// Result of one realization at the detection plane.
#[derive(Clone, Debug)]
pub struct Realization {
    /// Normalized position-domain state.
    pub state: BiphotonState,
    /// Probability transmitted by the object before renormalization.
    pub throughput: f64,
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    /// Realization-averaged coincidences, normalized to unit sum.
    pub gamma: CoincidenceMatrix,
    /// Single-photon image of the object arm, normalized to unit sum.
    pub singles: Option<ImageProfile>,
    pub throughputs: Vec<f64>,
    pub mean_throughput: f64,
}

/// Realizations per reduction chunk. Chunks are summed in index order, so
/// the result does not depend on the number of worker threads.
pub const REALIZATION_CHUNK: usize = 4;

#[derive(Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    fourier: Fourier,
    source: BiphotonState,
    /// Position-domain source, reused when there is no screen before the object.
    source_position: BiphotonState,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let grid = *config.grid();
        let source = make_source(grid, config.source, config.sampling)?;
        let fourier = Fourier::new(grid.size());
        let source_position = fourier.state(source.clone(), Direction::Inverse)?;
        Ok(Self {
            config,
            fourier,
            source,
            source_position,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn grid(&self) -> &GridSpec {
        self.config.grid()
    }

    /// Momentum-domain source state.
    pub fn source(&self) -> &BiphotonState {
        &self.source
    }

    pub fn source_position(&self) -> &BiphotonState {
        &self.source_position
    }

    /// Screens applied in realization `r`, in propagation order.
    pub fn screens(&self, r: usize) -> Result<Vec<(ScreenPlane, PhaseScreen)>> {
        let mut out = Vec::new();
        for (on, plane) in [
            (self.config.screens_before, ScreenPlane::BeforeObject),
            (self.config.screens_after, ScreenPlane::AfterObject),
        ] {
            if on {
                out.push((plane, generate_screen_in(*self.grid(), &self.config.screen, r, plane)?));
            }
        }
        Ok(out)
    }

    fn screen(&self, state: BiphotonState, r: usize, plane: ScreenPlane) -> Result<BiphotonState> {
        let screen = generate_screen_in(*self.grid(), &self.config.screen, r, plane)?;
        match self.config.configuration {
            Configuration::OneArmScattered => apply_screen_one(state, &screen, self.config.scattered_arm),
            _ => apply_screen_both(state, &screen),
        }
    }

    /// Position-domain state in the object plane, before the object.
    fn object_plane(&self, r: usize) -> Result<BiphotonState> {
        if self.config.screens_before {
            let s = self.screen(self.source.clone(), r, ScreenPlane::BeforeObject)?;
            self.fourier.state(s, Direction::Inverse)
        } else {
            Ok(self.source_position.clone())
        }
    }

    fn detect(&self, mut state: BiphotonState, r: usize) -> Result<Realization> {
        if self.config.screens_after {
            state = self.fourier.state(state, Direction::Forward)?;
            state = self.screen(state, r, ScreenPlane::AfterObject)?;
            state = self.fourier.state(state, Direction::Inverse)?;
        }
        let (state, throughput) = state.renormalize()?;
        Ok(Realization { state, throughput })
    }

    fn object_arms(&self) -> (bool, bool) {
        match self.config.configuration {
            Configuration::OneArmScattered => match self.config.scattered_arm {
                Arm::Idler => (true, false),
                Arm::Signal => (false, true),
            },
            _ => (true, true),
        }
    }

    fn apply_object(&self, mut state: BiphotonState, idler: bool, signal: bool) -> BiphotonState {
        let t = self.config.object.transmission();
        state.scale_separable(idler.then_some(t), signal.then_some(t));
        state
    }

    fn wrap<T>(r: usize, res: Result<T>) -> Result<T> {
        res.map_err(|e| Error::Realization {
            index: r,
            source: Box::new(e),
        })
    }

    /// Detection-plane state of realization `r`.
    pub fn propagate_realization(&self, r: usize) -> Result<Realization> {
        Self::wrap(r, self.realization_inner(r, false).map(|(a, _)| a))
    }

    fn realization_inner(&self, r: usize, with_singles: bool) -> Result<(Realization, Option<Realization>)> {
        if r >= self.config.realizations() {
            return Err(Error::InvalidParameter(format!(
                "realization index {r} out of range (R = {})",
                self.config.realizations()
            )));
        }
        let plane = self.object_plane(r)?;
        let (oi, os) = self.object_arms();
        // singles ignore whether the partner photon was absorbed, so only the
        // object arm is filtered
        let singles_state = (with_singles && oi && os).then(|| self.apply_object(plane.clone(), false, true));
        let main = self.detect(self.apply_object(plane, oi, os), r)?;
        let singles = singles_state.map(|s| self.detect(s, r)).transpose()?;
        Ok((main, singles))
    }

    /// Ensemble over all realizations.
    pub fn ensemble_coincidences(&self) -> Result<Ensemble> {
        let idx: Vec<usize> = (0..self.config.realizations()).collect();
        self.ensemble_over(&idx, false)
    }

    /// Ensemble plus the object-arm singles image.
    pub fn ensemble_with_singles(&self) -> Result<Ensemble> {
        let idx: Vec<usize> = (0..self.config.realizations()).collect();
        self.ensemble_over(&idx, true)
    }

    /// Ensemble over an explicit list of realization indices.
    pub fn ensemble_over(&self, indices: &[usize], with_singles: bool) -> Result<Ensemble> {
        if indices.is_empty() {
            return Err(Error::InvalidParameter("empty realization list".into()));
        }
        let grid = *self.grid();
        let m = grid.size();
        let (oi, os) = self.object_arms();
        let singles_arm = if oi && !os { Arm::Idler } else { Arm::Signal };

        struct Partial {
            gamma: Vec<f64>,
            singles: Vec<f64>,
            throughputs: Vec<f64>,
        }

        let partials = indices
            .par_chunks(REALIZATION_CHUNK)
            .map(|chunk| -> Result<Partial> {
                let mut p = Partial {
                    gamma: vec![0.0; m * m],
                    singles: vec![0.0; m],
                    throughputs: Vec::with_capacity(chunk.len()),
                };
                for &r in chunk {
                    let (main, singles) = Self::wrap(r, self.realization_inner(r, with_singles))?;
                    let w = self.weight(main.throughput);
                    p.gamma
                        .iter_mut()
                        .zip(main.state.amplitude())
                        .for_each(|(g, a)| *g += w * a.norm_sqr());
                    if with_singles {
                        let (st, ws) = match &singles {
                            Some(s) => (&s.state, self.weight(s.throughput)),
                            None => (&main.state, w),
                        };
                        add_arm_marginal(&mut p.singles, st, singles_arm, ws);
                    }
                    p.throughputs.push(main.throughput);
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut gamma = vec![0.0; m * m];
        let mut singles = vec![0.0; m];
        let mut throughputs = Vec::with_capacity(indices.len());
        for p in partials {
            gamma.iter_mut().zip(&p.gamma).for_each(|(a, b)| *a += b);
            singles.iter_mut().zip(&p.singles).for_each(|(a, b)| *a += b);
            throughputs.extend(p.throughputs);
        }
        let mean_throughput = throughputs.iter().sum::<f64>() / throughputs.len() as f64;
        let gamma = CoincidenceMatrix::probability(grid, gamma)?;
        let singles = if with_singles {
            Some(ImageProfile::new_normalized(grid, singles, ProfileLabel::Singles)?)
        } else {
            None
        };
        Ok(Ensemble {
            gamma,
            singles,
            throughputs,
            mean_throughput,
        })
    }

    fn weight(&self, throughput: f64) -> f64 {
        match self.config.weighting {
            Weighting::Throughput => throughput,
            Weighting::Unit => 1.0,
        }
    }

    /// Ground truth `|O(x)|^2 E(x)`, with `E` the single-photon position
    /// marginal of the source, normalized to unit sum.
    pub fn ground_truth(&self) -> Result<ImageProfile> {
        let m = self.grid().size();
        let mut env = vec![0.0; m];
        add_arm_marginal(&mut env, &self.source_position, Arm::Signal, 1.0);
        let values = env
            .iter()
            .zip(self.config.object.intensity())
            .map(|(e, o)| e * o)
            .collect();
        ImageProfile::new_normalized(*self.grid(), values, ProfileLabel::GroundTruth)
    }
}

fn add_arm_marginal(out: &mut [f64], state: &BiphotonState, arm: Arm, weight: f64) {
    debug_assert_eq!(state.domain(), Domain::Position);
    let m = state.grid().size();
    for (i, row) in state.amplitude().chunks_exact(m).enumerate() {
        match arm {
            Arm::Signal => out
                .iter_mut()
                .zip(row)
                .for_each(|(o, a)| *o += weight * a.norm_sqr()),
            Arm::Idler => out[i] += weight * row.iter().map(|a| a.norm_sqr()).sum::<f64>(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coincidence::{marginal, postselect, MarginalAxis};

    fn grid(m: usize) -> GridSpec {
        GridSpec::new(m, 1.0).unwrap()
    }

    fn config(m: usize, object: ObjectMask, segments: usize, r: usize) -> PipelineConfig {
        let mut c = PipelineConfig::new(
            SourceParams::new(0.2 * m as f64, 0.2 * m as f64 / 10.0).unwrap(),
            ScreenParams::new(segments, r, 17),
            object,
        );
        c.sampling = Sampling::Relaxed;
        c
    }

    #[test]
    fn aperture_array_layout() {
        let o = ObjectMask::aperture_array(grid(64), 8, 0.5).unwrap();
        let t = o.transmission();
        // centered aperture of 4 px around pixel 32
        assert_eq!(&t[30..34], &[1.0; 4]);
        assert_eq!(t[29], 0.0);
        assert_eq!(t[34], 0.0);
        assert_eq!(t.iter().sum::<f64>(), 32.0);
        assert!(ObjectMask::aperture_array(grid(64), 1, 0.5).is_err());
        assert!(ObjectMask::aperture_array(grid(64), 8, 1.0).is_err());
    }

    #[test]
    fn lines_layout() {
        let o = ObjectMask::lines(grid(64), 3, 2, 4).unwrap();
        let on: Vec<usize> = (0..64).filter(|&k| o.transmission()[k] > 0.0).collect();
        assert_eq!(on, vec![25, 26, 31, 32, 37, 38]);
        assert!(ObjectMask::lines(grid(16), 3, 6, 4).is_err());
    }

    #[test]
    fn object_file_clamps_and_reports_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.txt");
        let vals: Vec<String> = (0..8).map(|k| format!("{}", k as f64 * 0.25 - 0.25)).collect();
        std::fs::write(&path, vals.join("\n")).unwrap();
        let o = ObjectMask::from_file(grid(8), &path).unwrap();
        assert_eq!(o.transmission()[0], 0.0);
        assert_eq!(o.transmission()[7], 1.0);
        assert_eq!(o.transmission()[2], 0.25);
        std::fs::write(&path, "0.5\nabc\n").unwrap();
        match ObjectMask::from_file(grid(8), &path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "0.5\n0.5\n").unwrap();
        assert!(ObjectMask::from_file(grid(8), &path).is_err());
    }

    #[test]
    fn static_configuration_contradictions() {
        let mut c = config(32, ObjectMask::uniform(grid(32)), 8, 1);
        c.configuration = Configuration::StaticAfterObject;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.screens_before = false;
        assert!(c.validate().is_ok());
        c.screen.realizations = 2;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn identity_pipeline_is_a_relay() {
        let m = 32;
        let mut c = config(m, ObjectMask::uniform(grid(m)), 8, 1);
        c.screens_before = false;
        c.screens_after = false;
        let p = Pipeline::new(c).unwrap();
        let out = p.propagate_realization(0).unwrap();
        assert!((out.throughput - 1.0).abs() < 1e-12);
        for (a, b) in out.state.amplitude().iter().zip(p.source_position().amplitude()) {
            assert!((a - b).norm() < 1e-9);
        }
        // screens after the object with O = 1 only ever reach the detector
        // through unitary steps
        let mut c = config(m, ObjectMask::uniform(grid(m)), 8, 3);
        c.screens_before = true;
        let p = Pipeline::new(c).unwrap();
        for r in 0..3 {
            let out = p.propagate_realization(r).unwrap();
            assert!((out.throughput - 1.0).abs() < 1e-9);
            assert!((out.state.norm_sqr() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn throughput_is_bounded() {
        let m = 64;
        let c = config(m, ObjectMask::aperture_array(grid(m), 8, 0.5).unwrap(), 16, 6);
        let e = Pipeline::new(c).unwrap().ensemble_coincidences().unwrap();
        assert_eq!(e.throughputs.len(), 6);
        assert!(e.throughputs.iter().all(|t| *t > 0.0 && *t <= 1.0));
        assert!((e.gamma.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_screens_match_unscattered_ensemble() {
        let m = 32;
        let o = ObjectMask::lines(grid(m), 3, 2, 2).unwrap();
        let mut c = config(m, o.clone(), 8, 1);
        c.screens_before = false;
        c.screens_after = false;
        let reference = Pipeline::new(c).unwrap().ensemble_coincidences().unwrap();
        // without screens every realization is the same relay
        let mut c2 = config(m, o, 8, 5);
        c2.screens_before = false;
        c2.screens_after = false;
        let many = Pipeline::new(c2).unwrap().ensemble_coincidences().unwrap();
        for (a, b) in reference.gamma.counts().iter().zip(many.gamma.counts()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_is_order_invariant() {
        let m = 32;
        let c = config(m, ObjectMask::aperture_array(grid(m), 8, 0.5).unwrap(), 8, 9);
        let p = Pipeline::new(c).unwrap();
        let fwd: Vec<usize> = (0..9).collect();
        let perm = vec![4, 8, 0, 2, 7, 1, 3, 6, 5];
        let a = p.ensemble_over(&fwd, true).unwrap();
        let b = p.ensemble_over(&perm, true).unwrap();
        for (x, y) in a.gamma.counts().iter().zip(b.gamma.counts()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.mean_throughput - b.mean_throughput).abs() < 1e-12);
    }

    #[test]
    fn ensemble_is_independent_of_thread_count() {
        let m = 32;
        let c = config(m, ObjectMask::aperture_array(grid(m), 8, 0.5).unwrap(), 8, 11);
        let p = Pipeline::new(c).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| p.ensemble_with_singles().unwrap());
        let b = three.install(|| p.ensemble_with_singles().unwrap());
        assert_eq!(a.gamma.counts(), b.gamma.counts());
        assert_eq!(a.singles.unwrap().values(), b.singles.unwrap().values());
    }

    #[test]
    fn reference_arm_is_untouched_by_one_arm_scattering() {
        let m = 64;
        // O = 1 with both screens
        let mut c = config(m, ObjectMask::uniform(grid(m)), 16, 4);
        c.configuration = Configuration::OneArmScattered;
        let scattered = Pipeline::new(c.clone()).unwrap().ensemble_coincidences().unwrap();
        c.screens_before = false;
        c.screens_after = false;
        let clean = Pipeline::new(c).unwrap().ensemble_coincidences().unwrap();
        let a = marginal(&scattered.gamma, MarginalAxis::OverSignal);
        let b = marginal(&clean.gamma, MarginalAxis::OverSignal);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-9);
        }
        // an absorbing object followed by screens in the object's far field
        let o = ObjectMask::aperture_array(grid(m), 8, 0.5).unwrap();
        let mut c = config(m, o, 16, 4);
        c.configuration = Configuration::OneArmScattered;
        c.screens_before = false;
        let scattered = Pipeline::new(c.clone()).unwrap().ensemble_coincidences().unwrap();
        c.screens_after = false;
        let clean = Pipeline::new(c).unwrap().ensemble_coincidences().unwrap();
        let a = marginal(&scattered.gamma, MarginalAxis::OverSignal);
        let b = marginal(&clean.gamma, MarginalAxis::OverSignal);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn unscattered_diagonal_follows_ground_truth() {
        let m = 128;
        let o = ObjectMask::aperture_array(grid(m), 16, 0.5).unwrap();
        let mut c = config(m, o, 8, 1);
        c.source = SourceParams::new(25.6, 25.6 / 20.0).unwrap();
        c.screens_before = false;
        c.screens_after = false;
        let p = Pipeline::new(c).unwrap();
        let e = p.ensemble_with_singles().unwrap();
        let truth = p.ground_truth().unwrap();
        let post = postselect(&e.gamma, 0).normalized().unwrap();
        let num: f64 = post.values().iter().zip(truth.values()).map(|(a, b)| (a - b).abs()).sum();
        assert!(num / 2.0 < 0.01, "{}", num / 2.0);
        // singles see the object once, through the source envelope
        let s = e.singles.unwrap();
        assert_eq!(s.label(), ProfileLabel::Singles);
        assert!((s.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blocked_object_reports_realization() {
        let m = 16;
        let o = ObjectMask::from_transmission(grid(m), vec![0.0; m]).unwrap();
        let c = config(m, o, 4, 2);
        let p = Pipeline::new(c).unwrap();
        match p.propagate_realization(1) {
            Err(Error::Realization { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }
}
