//! Command implementations behind the CLI. Each writes plain-text artifacts
//! into an output directory; CSV content depends only on the configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::coincidence::{
    format_value, marginal, postselect_sum, sample_acquisition, write_file, CoincidenceMatrix, Image2D,
    ImageProfile, MarginalAxis,
};
use crate::config::{EventFormat, ObjectKind, RunConfig};
use crate::error::{Error, Result};
use crate::events::{
    accumulate_corr4d, pair_events_with, postselect_sum_2d, read_events, synthesize_stream, write_events_binary,
    write_events_text, Corr4D, PairingOptions, Roi,
};
use crate::image::{matrix_image, profile_strip, save_pgm, save_png};
use crate::metrics::{
    dominant_radius, mtf_2d_at, rms, validate_broadening_law, BroadeningPoint, BroadeningSetup, MetricsReport,
    ScatterGeometry,
};
use crate::pipeline::{Configuration, Ensemble, Pipeline, PipelineConfig};
use crate::rng::{derive_seed, StreamTag};
use crate::screens::{characterize_screens, generate_screen, PhaseScreen, ScreenCalibration, ScreenPlane};
use crate::source::{correlation_width_of, position_correlation_width, SourceParams};

/// Profiles of one reconstruction, all normalized to unit sum.
#[derive(Clone, Debug)]
pub struct ProfileSet {
    pub ground_truth: ImageProfile,
    pub singles: ImageProfile,
    pub marginal: ImageProfile,
    /// `(n, Gamma_post^(n))` in the configured window order.
    pub post: Vec<(usize, ImageProfile)>,
}

impl ProfileSet {
    fn all(&self) -> Vec<&ImageProfile> {
        let mut v = vec![&self.ground_truth, &self.singles, &self.marginal];
        v.extend(self.post.iter().map(|(_, p)| p));
        v
    }

    pub fn post_n(&self, n: usize) -> Option<&ImageProfile> {
        self.post.iter().find(|(k, _)| *k == n).map(|(_, p)| p)
    }
}

fn geometry_of(c: &PipelineConfig) -> ScatterGeometry {
    match c.configuration {
        Configuration::OneArmScattered => ScatterGeometry::OneArm,
        _ => ScatterGeometry::BothPhotons,
    }
}

/// Singles, marginal and post-selected profiles from a coincidence matrix.
pub fn profiles_from(
    gamma: &CoincidenceMatrix,
    singles: ImageProfile,
    ground_truth: ImageProfile,
    windows: &[usize],
) -> Result<ProfileSet> {
    let post = windows
        .iter()
        .map(|&n| Ok((n, postselect_sum(gamma, n)?.normalized()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProfileSet {
        ground_truth,
        singles: singles.normalized()?,
        marginal: marginal(gamma, MarginalAxis::OverIdler).normalized()?,
        post,
    })
}

/// Metrics for every profile except the ground truth itself.
pub fn reports_for(set: &ProfileSet, prefix: &str) -> Result<Vec<MetricsReport>> {
    let gt = set.ground_truth.values();
    set.all()
        .into_iter()
        .map(|p| {
            let label = format!("{prefix}{}", p.label());
            match MetricsReport::evaluate(label.clone(), p.values(), gt) {
                // objects without a periodic component have no MTF, only RMS
                Err(Error::NoDominantFrequency(_)) => Ok(MetricsReport {
                    label,
                    mtf: f64::NAN,
                    rms: rms(p.values(), gt)?,
                    k0: f64::NAN,
                    w_minus: None,
                    w_minus_0: None,
                    strength_estimate: None,
                }),
                other => other,
            }
        })
        .collect()
}

/// MTFs of one sweep cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellMtf {
    pub singles: f64,
    pub marginal: f64,
    pub post: f64,
    /// `w_q / w_A` measured on the screens before the object (0 without screens).
    pub strength: f64,
    pub segments: usize,
}

/// Run one pipeline and measure singles, marginal and `n = 1` post-selected MTFs.
pub fn measure_cell(config: PipelineConfig) -> Result<CellMtf> {
    let strength = if config.has_screens() {
        let grid = *config.grid();
        let screens = (0..config.realizations())
            .map(|r| generate_screen(grid, &config.screen, r))
            .collect::<Result<Vec<_>>>()?;
        characterize_screens(&screens, config.source.w_q)?.strength
    } else {
        0.0
    };
    let segments = if config.has_screens() { config.screen.segments } else { 0 };
    let pipeline = Pipeline::new(config)?;
    let ens = pipeline.ensemble_with_singles()?;
    let gt = pipeline.ground_truth()?;
    let set = profiles_from(&ens.gamma, singles_or_marginal(&ens), gt, &[1])?;
    let g = set.ground_truth.values();
    let m = |p: &ImageProfile| -> Result<f64> { Ok(crate::metrics::mtf(p.values(), g)?.mtf) };
    Ok(CellMtf {
        singles: m(&set.singles)?,
        marginal: m(&set.marginal)?,
        post: m(&set.post[0].1)?,
        strength,
        segments,
    })
}

fn singles_or_marginal(ens: &Ensemble) -> ImageProfile {
    ens.singles.clone().unwrap_or_else(|| crate::coincidence::singles_of(&ens.gamma))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Strength,
    Entanglement,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Strength => "strength",
            SweepAxis::Entanglement => "entanglement",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation across repeats (0 for one repeat).
    pub std: f64,
    /// Standard error of the mean.
    pub sem: f64,
}

impl Stat {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            sem: std / n.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub repeats: Vec<CellMtf>,
    pub singles: Stat,
    pub marginal: Stat,
    pub post: Stat,
    pub strength: Stat,
    /// `mean(post) / mean(marginal)`.
    pub enhancement: f64,
    /// Spread of the per-repeat ratios.
    pub enhancement_spread: Stat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "row,{},repeat,segments,strength_measured,mtf_singles,mtf_singles_std,mtf_singles_sem,\
             mtf_marginal,mtf_marginal_std,mtf_marginal_sem,mtf_post,mtf_post_std,mtf_post_sem,\
             enhancement,enhancement_std,enhancement_sem",
            self.axis.name()
        );
        let f = |v: f64| format!("{v:.9e}");
        for p in &self.points {
            for (k, c) in p.repeats.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "raw,{},{k},{},{},{},,,{},,,{},,,{},,",
                    f(p.axis_value),
                    c.segments,
                    f(c.strength),
                    f(c.singles),
                    f(c.marginal),
                    f(c.post),
                    f(c.post / c.marginal)
                );
            }
        }
        for p in &self.points {
            let st = |x: &Stat| format!("{},{},{}", f(x.mean), f(x.std), f(x.sem));
            let _ = writeln!(
                s,
                "aggregate,{},all,{},{},{},{},{},{},{},{}",
                f(p.axis_value),
                p.repeats[0].segments,
                f(p.strength.mean),
                st(&p.singles),
                st(&p.marginal),
                st(&p.post),
                f(p.enhancement),
                f(p.enhancement_spread.std),
                f(p.enhancement_spread.sem)
            );
        }
        s
    }
}

/// Evaluate the configured sweep. Every (point, repeat) job has its own
/// screen seed, so the result is independent of scheduling.
pub fn run_sweep(cfg: &RunConfig, axis: SweepAxis) -> Result<SweepResult> {
    let grid = cfg.grid_spec()?;
    let base = cfg.source_params()?;
    let values = match axis {
        SweepAxis::Strength => cfg.sweep.strengths.clone(),
        SweepAxis::Entanglement => cfg.sweep.entanglements.clone(),
    };
    let needs_cal = cfg.scattering.segments.is_none()
        && match axis {
            SweepAxis::Strength => values.iter().any(|s| *s > 0.0),
            SweepAxis::Entanglement => cfg.scattering.strength > 0.0,
        };
    let cal = if needs_cal { Some(cfg.calibration(grid)?) } else { None };
    let repeats = cfg.sweep.repeats;
    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|p| (0..repeats).map(move |r| (p, r)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(p, r)| {
            let (source, strength) = match axis {
                SweepAxis::Strength => (base, values[p]),
                SweepAxis::Entanglement => (
                    SourceParams::with_entanglement(base.w_q, values[p])?,
                    cfg.scattering.strength,
                ),
            };
            let seed = derive_seed(cfg.seed, &[StreamTag::SweepJob as u64, p as u64, r as u64]);
            let pc = cfg.pipeline_config(grid, source, strength, seed, cal.as_ref())?;
            measure_cell(pc)
        })
        .collect::<Result<Vec<_>>>()?;
    let points = values
        .iter()
        .enumerate()
        .map(|(p, &v)| {
            let reps = cells[p * repeats..(p + 1) * repeats].to_vec();
            let col = |f: fn(&CellMtf) -> f64| reps.iter().map(f).collect::<Vec<_>>();
            let singles = Stat::of(&col(|c| c.singles));
            let marginal = Stat::of(&col(|c| c.marginal));
            let post = Stat::of(&col(|c| c.post));
            SweepPoint {
                axis_value: v,
                singles,
                marginal,
                post,
                strength: Stat::of(&col(|c| c.strength)),
                enhancement: post.mean / marginal.mean,
                enhancement_spread: Stat::of(&col(|c| c.post / c.marginal)),
                repeats: reps,
            }
        })
        .collect();
    Ok(SweepResult { axis, points })
}

/// Everything `simulate` computes.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub ensemble: Ensemble,
    pub profiles: ProfileSet,
    pub reports: Vec<MetricsReport>,
    pub sampled: Option<(CoincidenceMatrix, ProfileSet, Vec<MetricsReport>)>,
    pub is_static: bool,
    pub segments: Option<usize>,
    /// Screens of the first realization, empty without scattering.
    pub screens: Vec<(ScreenPlane, PhaseScreen)>,
}

pub fn run_simulation(cfg: &RunConfig) -> Result<Simulation> {
    let grid = cfg.grid_spec()?;
    let source = cfg.source_params()?;
    let strength = cfg.scattering.strength;
    let cal = if cfg.scattering.segments.is_none() && strength > 0.0 {
        Some(cfg.calibration(grid)?)
    } else {
        None
    };
    let pc = cfg.pipeline_config(grid, source, strength, cfg.seed, cal.as_ref())?;
    let geometry = geometry_of(&pc);
    let is_static = pc.realizations() == 1 && pc.has_screens();
    let segments = pc.has_screens().then_some(pc.screen.segments);
    let pipeline = Pipeline::new(pc)?;
    let ensemble = pipeline.ensemble_with_singles()?;
    let screens = if pipeline.config().has_screens() { pipeline.screens(0)? } else { Vec::new() };
    let gt = pipeline.ground_truth()?;
    let profiles = profiles_from(&ensemble.gamma, singles_or_marginal(&ensemble), gt.clone(), &cfg.imaging.windows)?;
    let w0 = position_correlation_width(pipeline.source_position()).ok();
    let w = correlation_width_of(ensemble.gamma.counts(), grid.size()).ok().map(|(w, _)| w);
    let mut reports = reports_for(&profiles, "")?;
    if let (Some(w), Some(w0)) = (w, w0) {
        reports = reports.into_iter().map(|r| r.with_widths(w, w0, geometry)).collect();
    }
    let sampled = match cfg.imaging.pair_budget {
        Some(n) => {
            let acq = sample_acquisition(
                &ensemble.gamma,
                n,
                cfg.detection(),
                ensemble.singles.as_ref(),
                derive_seed(cfg.seed, &[StreamTag::PairSampling as u64]),
            )?;
            let set = profiles_from(&acq.coincidences, acq.singles, gt, &cfg.imaging.windows)?;
            let rep = reports_for(&set, "sampled_")?;
            Some((acq.coincidences, set, rep))
        }
        None => None,
    };
    Ok(Simulation {
        ensemble,
        profiles,
        reports,
        sampled,
        is_static,
        segments,
        screens,
    })
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_snapshot(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_text(&out.join("config.resolved.toml"), &cfg.snapshot()?)
}

fn save_gray(image: &Image2D, out: &Path, stem: &str) -> Result<()> {
    save_pgm(image, &out.join(format!("{stem}.pgm")))?;
    save_png(image, &out.join(format!("{stem}.png")))
}

fn profiles_csv(set: &ProfileSet) -> String {
    let all = set.all();
    let grid = set.ground_truth.grid();
    let mut s = String::from("x");
    for p in &all {
        let _ = write!(s, ",{}", p.label());
    }
    s.push('\n');
    for k in 0..grid.size() {
        s.push_str(&format_value(grid.coordinate(k)));
        for p in &all {
            let _ = write!(s, ",{}", format_value(p.values()[k]));
        }
        s.push('\n');
    }
    s
}

fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut s = MetricsReport::csv_header();
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn write_profile_images(set: &ProfileSet, out: &Path, prefix: &str) -> Result<()> {
    for p in set.all() {
        save_gray(&profile_strip(p.values(), 32), out, &format!("{prefix}{}", p.label()))?;
    }
    Ok(())
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Simulation> {
    let sim = run_simulation(cfg)?;
    ensure_dir(out)?;
    write_snapshot(cfg, out)?;
    sim.ensemble.gamma.save_dense(&out.join("gamma.csv"))?;
    sim.ensemble.gamma.save_triplets(&out.join("gamma_triplets.csv"))?;
    save_gray(&matrix_image(&sim.ensemble.gamma), out, "gamma")?;
    write_text(&out.join("profiles.csv"), &profiles_csv(&sim.profiles))?;
    write_profile_images(&sim.profiles, out, "")?;
    for (plane, screen) in &sim.screens {
        let name = match plane {
            ScreenPlane::BeforeObject => "screen_before_r0.txt",
            ScreenPlane::AfterObject => "screen_after_r0.txt",
        };
        screen.save_text(&out.join(name))?;
    }
    let mut kv = String::new();
    let _ = writeln!(kv, "static = {}", sim.is_static);
    let _ = writeln!(kv, "realizations = {}", sim.ensemble.throughputs.len());
    match sim.segments {
        Some(s) => {
            let _ = writeln!(kv, "segments = {s}");
        }
        None => kv.push_str("segments = none\n"),
    }
    let _ = writeln!(kv, "mean_throughput = {:.9}", sim.ensemble.mean_throughput);
    let mut reports = sim.reports.clone();
    if let Some((counts, set, rep)) = &sim.sampled {
        counts.save_triplets(&out.join("gamma_sampled_triplets.csv"))?;
        let _ = writeln!(kv, "sampled_pairs = {}", counts.total());
        write_text(&out.join("profiles_sampled.csv"), &profiles_csv(set))?;
        write_profile_images(set, out, "sampled_")?;
        reports.extend(rep.iter().cloned());
    }
    for r in &reports {
        kv.push('\n');
        kv.push_str(&r.to_key_value());
    }
    write_text(&out.join("metrics.txt"), &kv)?;
    write_text(&out.join("metrics.csv"), &metrics_csv(&reports))?;
    if sim.is_static {
        log::warn!("static configuration (R = 1): speckle distortions are expected");
    }
    Ok(sim)
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path, axis: SweepAxis) -> Result<SweepResult> {
    let res = run_sweep(cfg, axis)?;
    ensure_dir(out)?;
    write_snapshot(cfg, out)?;
    let name = match axis {
        SweepAxis::Strength => "sweep_scatter.csv",
        SweepAxis::Entanglement => "sweep_entanglement.csv",
    };
    write_text(&out.join(name), &res.csv())?;
    Ok(res)
}

pub fn broadening_setup(cfg: &RunConfig) -> BroadeningSetup {
    let b = &cfg.broadening;
    let w_q = b.w_q_fraction * b.size as f64;
    BroadeningSetup {
        size: b.size,
        w_q,
        w_0: w_q / b.entanglement,
        realizations: b.realizations,
        seed: cfg.seed,
        lattice: cfg.lattice(),
        calibration_realizations: b.calibration_realizations,
    }
}

pub fn broadening_csv(points: &[BroadeningPoint]) -> String {
    let mut s = String::from(
        "geometry,target_strength,segments,strength,w_minus_0,measured_ratio,ratio_std,predicted_ratio,relative_error\n",
    );
    let f = |v: f64| format!("{v:.9e}");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            p.geometry.name(),
            f(p.target_strength),
            p.segments,
            f(p.strength),
            f(p.w_minus_0),
            f(p.measured_ratio),
            f(p.ratio_std),
            f(p.predicted_ratio),
            f(p.relative_error())
        );
    }
    s
}

pub fn cmd_validate_broadening(cfg: &RunConfig, out: &Path) -> Result<Vec<BroadeningPoint>> {
    let points = validate_broadening_law(&broadening_setup(cfg), &cfg.broadening.strengths)?;
    ensure_dir(out)?;
    write_snapshot(cfg, out)?;
    write_text(&out.join("broadening.csv"), &broadening_csv(&points))?;
    Ok(points)
}

pub fn calibration_csv(cal: &ScreenCalibration, w_q: f64) -> String {
    let mut s = String::from("segments,w_a,strength\n");
    for &(seg, w) in &cal.entries {
        let _ = writeln!(s, "{seg},{w:.9e},{:.9e}", w_q / w);
    }
    s
}

pub fn cmd_calibrate_screens(cfg: &RunConfig, out: &Path) -> Result<ScreenCalibration> {
    let grid = cfg.grid_spec()?;
    let cal = cfg.calibration(grid)?;
    ensure_dir(out)?;
    write_snapshot(cfg, out)?;
    let w_q = cfg.source_params()?.w_q;
    write_text(&out.join("calibration.csv"), &calibration_csv(&cal, w_q))?;
    Ok(cal)
}

fn outer(x: &[f64], y: &[f64]) -> Image2D {
    let data = y.iter().flat_map(|yv| x.iter().map(move |xv| xv * yv)).collect();
    Image2D {
        width: x.len(),
        height: y.len(),
        data,
    }
}

pub fn write_dense_image(image: &Image2D, path: &Path) -> Result<()> {
    write_file(path, |w| {
        use std::io::Write;
        for row in image.data.chunks_exact(image.width) {
            let line: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    })
}

pub fn read_dense_image(path: &Path) -> Result<Image2D> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message,
        };
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| parse_err(format!("{v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(format!("expected {w} columns, found {}", row.len())))
            }
            _ => {}
        }
        data.extend(row);
        height += 1;
    }
    Image2D::new(width.unwrap_or(0), height, data)
}

/// Per-axis coincidence distributions and the 2D ground truth for synthesis.
/// The configured object is applied along x, a uniform object along y.
pub fn event_distributions(cfg: &RunConfig) -> Result<(CoincidenceMatrix, CoincidenceMatrix, Image2D)> {
    let grid = cfg.grid_spec()?;
    let source = cfg.source_params()?;
    let strength = cfg.scattering.strength;
    let cal = if cfg.scattering.segments.is_none() && strength > 0.0 {
        Some(cfg.calibration(grid)?)
    } else {
        None
    };
    let axis = |object_cfg: &RunConfig, tag: u64| -> Result<(CoincidenceMatrix, ImageProfile)> {
        let seed = derive_seed(cfg.seed, &[StreamTag::EventSynthesis as u64, tag]);
        let pc = object_cfg.pipeline_config(grid, source, strength, seed, cal.as_ref())?;
        let p = Pipeline::new(pc)?;
        Ok((p.ensemble_coincidences()?.gamma, p.ground_truth()?))
    };
    let (gx, tx) = axis(cfg, 0)?;
    let mut uniform = cfg.clone();
    uniform.object.kind = ObjectKind::Uniform;
    let (gy, ty) = axis(&uniform, 1)?;
    Ok((gx, gy, outer(tx.values(), ty.values())))
}

fn event_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    match cfg.events.format {
        EventFormat::Text => out.join("events.txt"),
        EventFormat::Binary => out.join("events.bin"),
    }
}

pub fn cmd_events_synth(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let header = cfg.event_header()?;
    let (gx, gy, truth) = event_distributions(cfg)?;
    let stream = synthesize_stream(&gx, &gy, header, &cfg.synth_params(cfg.seed))?;
    ensure_dir(out)?;
    write_snapshot(cfg, out)?;
    let path = event_path(cfg, out);
    match cfg.events.format {
        EventFormat::Text => write_events_text(&stream.stream, &path)?,
        EventFormat::Binary => write_events_binary(&stream.stream, &path)?,
    }
    write_dense_image(&truth, &out.join("ground_truth.csv"))?;
    save_gray(&truth, out, "ground_truth")?;
    log::info!("wrote {} events to {}", stream.stream.len(), path.display());
    Ok(path)
}

/// Output of the event analysis chain.
#[derive(Clone, Debug)]
pub struct EventAnalysis {
    pub pairs: usize,
    pub corr: Corr4D,
    pub center: (i64, i64),
    /// Correlation widths along x and y, when fittable.
    pub widths: (Option<f64>, Option<f64>),
    /// `(name, image)` for singles, marginal, post-selections and filtered variants.
    pub images: Vec<(String, Image2D)>,
    pub k0: f64,
    /// `(name, mtf, rms against the ground truth when available)`.
    pub metrics: Vec<(String, f64, Option<f64>)>,
}

fn peak_offset(c: &Corr4D, axis: usize) -> i64 {
    let (d, p) = c.difference_profile(axis);
    let k = p
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (k, &v)| if v > a.1 { (k, v) } else { a })
        .0;
    d[k] as i64
}

fn normalized(img: &Image2D) -> Image2D {
    let t = img.total();
    let mut out = img.clone();
    if t > 0.0 {
        out.data.iter_mut().for_each(|v| *v /= t);
    }
    out
}

pub fn analyze_stream(
    stream: &crate::events::EventStream,
    cfg: &RunConfig,
    ground_truth: Option<&Image2D>,
) -> Result<EventAnalysis> {
    let e = &cfg.events;
    let pairs = pair_events_with(
        stream,
        PairingOptions {
            window: e.window,
            cross_frames: e.cross_frames,
        },
    )?;
    let corr = accumulate_corr4d(&pairs, stream.header());
    if corr.is_empty() {
        return Err(Error::Invariant("no coincidences found in the event stream".into()));
    }
    let center = (peak_offset(&corr, 0), peak_offset(&corr, 1));
    let roi_b = *stream.header().roi(Roi::B);
    let mut singles = Image2D::zeros(roi_b.width as usize, roi_b.height as usize);
    for r in stream.records().iter().filter(|r| r.roi == Roi::B) {
        let (x, y) = roi_b.local(r.x, r.y);
        *singles.at_mut(x as usize, y as usize) += 1.0;
    }
    let mut images = vec![("singles".to_string(), singles), ("marginal".to_string(), corr.marginal_b())];
    for &n in &cfg.imaging.windows {
        images.push((format!("post_n{n}"), postselect_sum_2d(&corr, n, center)?));
    }
    if let Some(sigma) = e.log_sigma {
        let filtered = images
            .iter()
            .map(|(name, img)| Ok((format!("{name}_log"), crate::coincidence::laplacian_gaussian_filter(img, sigma)?)))
            .collect::<Result<Vec<_>>>()?;
        images.extend(filtered);
    }
    if let Some(gt) = ground_truth {
        if (gt.width, gt.height) != (corr.width(), corr.height()) {
            return Err(Error::GridMismatch(format!(
                "ground truth is {}x{}, ROI is {}x{}",
                gt.width,
                gt.height,
                corr.width(),
                corr.height()
            )));
        }
    }
    // without a ground truth the dominant frequency comes from the marginal image
    let k0 = match ground_truth {
        Some(gt) => dominant_radius(gt)?,
        None => dominant_radius(&images[1].1)?,
    };
    let mut metrics = Vec::new();
    for (name, img) in &images {
        if name.ends_with("_log") {
            continue;
        }
        let m = mtf_2d_at(img, k0)?;
        let r = match ground_truth {
            Some(gt) => Some(rms(&normalized(img).data, &normalized(gt).data)?),
            None => None,
        };
        metrics.push((name.clone(), m, r));
    }
    Ok(EventAnalysis {
        pairs: pairs.len(),
        widths: (corr.correlation_width(0).ok(), corr.correlation_width(1).ok()),
        corr,
        center,
        images,
        k0,
        metrics,
    })
}

pub fn cmd_events_analyze(cfg: &RunConfig, out: &Path) -> Result<EventAnalysis> {
    let input = match &cfg.events.input {
        Some(p) => p.clone(),
        None => [out.join("events.bin"), out.join("events.txt")]
            .into_iter()
            .find(|p| p.exists())
            .ok_or_else(|| Error::Config("events.input is not set and no event file exists in the output directory".into()))?,
    };
    let stream = read_events(&input)?;
    let gt_path = cfg
        .events
        .ground_truth
        .clone()
        .or_else(|| Some(out.join("ground_truth.csv")).filter(|p| p.exists()));
    let gt = gt_path.as_deref().map(read_dense_image).transpose()?;
    let res = analyze_stream(&stream, cfg, gt.as_ref())?;
    ensure_dir(out)?;
    write_snapshot(cfg, out)?;
    for (name, img) in &res.images {
        write_dense_image(img, &out.join(format!("{name}.csv")))?;
        save_gray(img, out, name)?;
    }
    let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.9e}"));
    let mut csv = String::from("image,mtf,rms,counts\n");
    for (name, m, r) in &res.metrics {
        let counts = res.images.iter().find(|(n, _)| n == name).map_or(0.0, |(_, i)| i.total());
        let _ = writeln!(csv, "{name},{m:.9e},{},{}", opt(*r), format_value(counts));
    }
    write_text(&out.join("events_metrics.csv"), &csv)?;
    let mut kv = String::new();
    let _ = writeln!(kv, "events = {}", stream.len());
    let _ = writeln!(kv, "pairs = {}", res.pairs);
    let _ = writeln!(kv, "center_x = {}", res.center.0);
    let _ = writeln!(kv, "center_y = {}", res.center.1);
    let _ = writeln!(kv, "correlation_width_x = {}", opt(res.widths.0));
    let _ = writeln!(kv, "correlation_width_y = {}", opt(res.widths.1));
    let _ = writeln!(kv, "k0 = {:.6}", res.k0);
    let _ = writeln!(kv, "ground_truth = {}", gt_path.is_some());
    write_text(&out.join("events_metrics.txt"), &kv)?;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(extra: &str) -> RunConfig {
        let mut c = RunConfig::from_toml(&format!(
            "seed = 3\n[grid]\nsize = 64\n[scattering]\nrealizations = 8\ncalibration_realizations = 10\n{extra}"
        ))
        .unwrap();
        c.resolve().unwrap();
        c
    }

    #[test]
    fn stat_of_constant_has_zero_spread() {
        let s = Stat::of(&[2.0, 2.0, 2.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 0.0);
        let s = Stat::of(&[1.0, 3.0]);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
        assert!((s.sem - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_row_accounting() {
        let mut c = small("");
        c.sweep.strengths = vec![0.0, 2.0];
        c.sweep.repeats = 3;
        let r = run_sweep(&c, SweepAxis::Strength).unwrap();
        let csv = r.csv();
        assert_eq!(csv.lines().filter(|l| l.starts_with("raw,")).count(), 6);
        assert_eq!(csv.lines().filter(|l| l.starts_with("aggregate,")).count(), 2);
        // no screens: every repeat is identical
        assert_eq!(r.points[0].post.std, 0.0);
    }

    #[test]
    fn simulate_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small("strength = 0.0");
        c.imaging.windows = vec![1, 3];
        c.imaging.pair_budget = Some(20_000);
        let sim = cmd_simulate(&c, dir.path()).unwrap();
        for f in [
            "gamma.csv",
            "gamma_triplets.csv",
            "gamma.pgm",
            "gamma.png",
            "profiles.csv",
            "metrics.txt",
            "metrics.csv",
            "config.resolved.toml",
            "profiles_sampled.csv",
            "post_n3.pgm",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(!sim.is_static);
        let kv = std::fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
        assert!(kv.starts_with("static = false"));
        assert!(kv.contains("label = post_n3"));
        assert!(kv.contains("label = sampled_marginal"));
    }

    #[test]
    fn static_run_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let c = small("configuration = \"static\"\nsegments = 16");
        let sim = cmd_simulate(&c, dir.path()).unwrap();
        assert!(sim.is_static);
        let kv = std::fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
        assert!(kv.starts_with("static = true"));
    }

    #[test]
    fn dense_image_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.csv");
        let img = Image2D::new(3, 2, vec![0.0, 1.5, 2.0, 3.0, 4.0, 5.25]).unwrap();
        write_dense_image(&img, &p).unwrap();
        assert_eq!(read_dense_image(&p).unwrap(), img);
        std::fs::write(&p, "1,2\n3,x\n").unwrap();
        match read_dense_image(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn events_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small("strength = 0.0");
        c.grid.size = 32;
        c.object.period = Some(8);
        c.events.frame_count = 2;
        c.events.pair_rate = 2e5;
        c.events.log_sigma = Some(1.0);
        c.imaging.windows = vec![1, 3];
        cmd_events_synth(&c, dir.path()).unwrap();
        let a = cmd_events_analyze(&c, dir.path()).unwrap();
        assert!(a.pairs > 1000);
        assert_eq!(a.center, (0, 0));
        assert!(dir.path().join("post_n3_log.pgm").exists());
        assert!(dir.path().join("events_metrics.csv").exists());
        assert!(a.metrics.iter().all(|(_, _, r)| r.is_some()));
    }
}
