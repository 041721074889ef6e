//! TOML run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coincidence::DetectionModel;
use crate::error::{Error, Result};
use crate::events::{RoiRect, StreamHeader, SynthParams};
use crate::grid::GridSpec;
use crate::pipeline::{Configuration, ObjectMask, PipelineConfig, Weighting};
use crate::screens::{KnotLattice, ScreenCalibration, ScreenParams};
use crate::source::{Sampling, SourceParams};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub strict_sampling: bool,
    pub grid: GridSection,
    pub source: SourceSection,
    pub scattering: ScatteringSection,
    pub object: ObjectSection,
    pub imaging: ImagingSection,
    pub sweep: SweepSection,
    pub broadening: BroadeningSection,
    pub events: EventsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub size: usize,
    pub pitch: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { size: 512, pitch: 1.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    /// Phase-matching width in pixels; `0.2 * M` when omitted.
    pub w_q: Option<f64>,
    /// Pump width in pixels; `w_q / entanglement` when omitted.
    pub w_0: Option<f64>,
    /// `w_q / w_0`, used when `w_0` is omitted (default 50).
    pub entanglement: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigurationName {
    #[default]
    Both,
    OneArm,
    Static,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeName {
    #[default]
    Anchored,
    Jittered,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingName {
    #[default]
    Throughput,
    Unit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatteringSection {
    pub configuration: ConfigurationName,
    pub screens_before: bool,
    pub screens_after: bool,
    pub realizations: usize,
    /// Target `w_q / w_A`; `0` disables scattering. Ignored when `segments` is set.
    pub strength: f64,
    pub segments: Option<usize>,
    pub lattice: LatticeName,
    pub weighting: WeightingName,
    pub calibration_realizations: usize,
    pub calibration_seed: u64,
}

impl Default for ScatteringSection {
    fn default() -> Self {
        Self {
            configuration: ConfigurationName::Both,
            screens_before: true,
            screens_after: true,
            realizations: 100,
            strength: 5.0,
            segments: None,
            lattice: LatticeName::Anchored,
            weighting: WeightingName::Throughput,
            calibration_realizations: 50,
            calibration_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    #[default]
    Apertures,
    Lines,
    File,
    Uniform,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectSection {
    pub kind: ObjectKind,
    /// Aperture period in pixels; `M / 16` when omitted.
    pub period: Option<usize>,
    pub duty: Option<f64>,
    pub count: Option<usize>,
    pub width: Option<usize>,
    pub gap: Option<usize>,
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingSection {
    /// Window sizes `n` for the shifted post-selection sums.
    pub windows: Vec<usize>,
    /// Emitted pairs for the sampled reconstruction; none for probabilities only.
    pub pair_budget: Option<u64>,
    pub efficiency: f64,
    /// Mean accidental coincidences added to the sampled matrix.
    pub accidentals: f64,
}

impl Default for ImagingSection {
    fn default() -> Self {
        Self {
            windows: vec![1, 3, 6],
            pair_budget: None,
            efficiency: 1.0,
            accidentals: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub strengths: Vec<f64>,
    pub entanglements: Vec<f64>,
    pub repeats: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            strengths: vec![1.0, 2.0, 5.0, 10.0, 20.0],
            entanglements: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            repeats: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BroadeningSection {
    pub size: usize,
    /// `w_q` as a fraction of the grid size.
    pub w_q_fraction: f64,
    pub entanglement: f64,
    pub realizations: usize,
    pub strengths: Vec<f64>,
    pub calibration_realizations: usize,
}

impl Default for BroadeningSection {
    fn default() -> Self {
        Self {
            size: 128,
            w_q_fraction: 0.2,
            entanglement: 15.0,
            realizations: 40,
            strengths: vec![1.0, 2.0, 3.0, 5.0, 7.0, 10.0],
            calibration_realizations: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventFormat {
    #[default]
    Text,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventsSection {
    /// Event file read by `events-analyze`.
    pub input: Option<PathBuf>,
    /// Ground-truth image (dense CSV) for `events-analyze`.
    pub ground_truth: Option<PathBuf>,
    pub format: EventFormat,
    /// Pixels between the two ROIs on the detector.
    pub roi_gap: u16,
    pub pair_rate: f64,
    pub efficiency: f64,
    pub accidental_rate: f64,
    pub jitter_sigma: f64,
    pub resolution: u64,
    pub frame_length: u64,
    pub frame_count: u64,
    pub window: u64,
    pub cross_frames: bool,
    /// Laplacian-of-Gaussian sigma for filtered image variants.
    pub log_sigma: Option<f64>,
}

impl Default for EventsSection {
    fn default() -> Self {
        Self {
            input: None,
            ground_truth: None,
            format: EventFormat::Text,
            roi_gap: 16,
            pair_rate: 1e5,
            efficiency: 1.0,
            accidental_rate: 0.0,
            jitter_sigma: 0.0,
            resolution: 7,
            frame_length: 100_000_000,
            frame_count: 10,
            window: 10,
            cross_frames: false,
            log_sigma: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fill every derived default so the snapshot records actual values.
    pub fn resolve(&mut self) -> Result<()> {
        let m = self.grid.size;
        let w_q = *self.source.w_q.get_or_insert(0.2 * m as f64);
        let ratio = *self.source.entanglement.get_or_insert(50.0);
        if self.source.w_0.is_none() {
            self.source.w_0 = Some(w_q / ratio);
        }
        if self.object.kind == ObjectKind::Apertures {
            self.object.period.get_or_insert((m / 16).max(2));
            self.object.duty.get_or_insert(0.5);
        }
        if self.object.kind == ObjectKind::Lines {
            self.object.count.get_or_insert(3);
            self.object.width.get_or_insert((m / 64).max(1));
            self.object.gap.get_or_insert((m / 64).max(1));
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        GridSpec::new(self.grid.size, self.grid.pitch).map_err(|e| Error::Config(e.to_string()))?;
        let nonempty = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must not be empty")))
            }
        };
        nonempty(!self.imaging.windows.is_empty(), "imaging.windows")?;
        nonempty(!self.sweep.strengths.is_empty(), "sweep.strengths")?;
        nonempty(!self.sweep.entanglements.is_empty(), "sweep.entanglements")?;
        nonempty(!self.broadening.strengths.is_empty(), "broadening.strengths")?;
        if self.sweep.repeats == 0 {
            return Err(Error::Config("sweep.repeats must be >= 1".into()));
        }
        if self.scattering.realizations == 0 {
            return Err(Error::Config("scattering.realizations must be >= 1".into()));
        }
        if !(self.scattering.strength.is_finite() && self.scattering.strength >= 0.0) {
            return Err(Error::Config("scattering.strength must be >= 0".into()));
        }
        if self.sweep.strengths.iter().any(|s| !(s.is_finite() && *s >= 0.0))
            || self.sweep.entanglements.iter().any(|s| !(s.is_finite() && *s >= 1.0))
        {
            return Err(Error::Config("sweep values must be finite (strengths >= 0, entanglements >= 1)".into()));
        }
        if self.scattering.calibration_realizations == 0 {
            return Err(Error::Config("scattering.calibration_realizations must be >= 1".into()));
        }
        Ok(())
    }

    /// Resolved configuration as TOML.
    pub fn snapshot(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.size, self.grid.pitch)
    }

    pub fn sampling(&self) -> Sampling {
        if self.strict_sampling {
            Sampling::Strict
        } else {
            Sampling::Relaxed
        }
    }

    pub fn source_params(&self) -> Result<SourceParams> {
        let w_q = self.source.w_q.unwrap_or(0.2 * self.grid.size as f64);
        let w_0 = self
            .source
            .w_0
            .unwrap_or(w_q / self.source.entanglement.unwrap_or(50.0));
        SourceParams::new(w_q, w_0)
    }

    pub fn lattice(&self) -> KnotLattice {
        match self.scattering.lattice {
            LatticeName::Anchored => KnotLattice::Anchored,
            LatticeName::Jittered => KnotLattice::Jittered,
        }
    }

    pub fn object_mask(&self, grid: GridSpec) -> Result<ObjectMask> {
        let o = &self.object;
        let m = grid.size();
        match o.kind {
            ObjectKind::Apertures => {
                ObjectMask::aperture_array(grid, o.period.unwrap_or((m / 16).max(2)), o.duty.unwrap_or(0.5))
            }
            ObjectKind::Lines => ObjectMask::lines(
                grid,
                o.count.unwrap_or(3),
                o.width.unwrap_or((m / 64).max(1)),
                o.gap.unwrap_or((m / 64).max(1)),
            ),
            ObjectKind::File => {
                let path = o
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("object.path is required for kind = \"file\"".into()))?;
                ObjectMask::from_file(grid, path)
            }
            ObjectKind::Uniform => Ok(ObjectMask::uniform(grid)),
        }
    }

    pub fn calibration(&self, grid: GridSpec) -> Result<ScreenCalibration> {
        ScreenCalibration::full(
            grid,
            self.scattering.calibration_realizations,
            self.scattering.calibration_seed,
            self.lattice(),
        )
    }

    /// Pipeline at a given target strength (`0` = no scattering) with the
    /// given screen seed. `calibration` is consulted only when the segment
    /// count is not fixed in the file.
    pub fn pipeline_config(
        &self,
        grid: GridSpec,
        source: SourceParams,
        strength: f64,
        screen_seed: u64,
        calibration: Option<&ScreenCalibration>,
    ) -> Result<PipelineConfig> {
        let sc = &self.scattering;
        let scattering = strength > 0.0 || sc.segments.is_some();
        let segments = match (sc.segments, scattering) {
            (Some(s), _) => s,
            (None, true) => {
                let cal = calibration.ok_or_else(|| Error::Config("calibration table required".into()))?;
                cal.segments_for_strength(source.w_q, strength)?.0
            }
            (None, false) => 2,
        };
        let configuration = match sc.configuration {
            ConfigurationName::Both => Configuration::BothPhotons,
            ConfigurationName::OneArm => Configuration::OneArmScattered,
            ConfigurationName::Static => Configuration::StaticAfterObject,
        };
        let static_mode = configuration == Configuration::StaticAfterObject;
        let mut c = PipelineConfig::new(
            source,
            ScreenParams {
                segments,
                realizations: if static_mode { 1 } else { sc.realizations },
                base_seed: screen_seed,
                lattice: self.lattice(),
            },
            self.object_mask(grid)?,
        );
        c.configuration = configuration;
        c.screens_before = scattering && sc.screens_before && !static_mode;
        c.screens_after = scattering && (sc.screens_after || static_mode);
        c.sampling = self.sampling();
        c.weighting = match sc.weighting {
            WeightingName::Throughput => Weighting::Throughput,
            WeightingName::Unit => Weighting::Unit,
        };
        if !scattering {
            c.screen.realizations = 1;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn detection(&self) -> DetectionModel {
        DetectionModel {
            efficiency: self.imaging.efficiency,
            accidentals: self.imaging.accidentals,
        }
    }

    pub fn event_header(&self) -> Result<StreamHeader> {
        let e = &self.events;
        // each ROI spans the simulation grid
        let n = u16::try_from(self.grid.size).map_err(|_| Error::Config("grid.size too large for event ROIs".into()))?;
        let width = n
            .checked_mul(2)
            .and_then(|v| v.checked_add(e.roi_gap))
            .ok_or_else(|| Error::Config("detector size overflows".into()))?;
        let h = StreamHeader {
            detector_width: width,
            detector_height: n,
            roi_a: RoiRect::new(0, 0, n, n),
            roi_b: RoiRect::new(n + e.roi_gap, 0, n, n),
            frame_length: e.frame_length,
            frame_count: e.frame_count,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn synth_params(&self, seed: u64) -> SynthParams {
        let e = &self.events;
        SynthParams {
            pair_rate: e.pair_rate,
            efficiency: e.efficiency,
            accidental_rate: e.accidental_rate,
            jitter_sigma: e.jitter_sigma,
            resolution: e.resolution,
            seed,
        }
    }
}
