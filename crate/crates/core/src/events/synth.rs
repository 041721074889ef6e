//! Synthetic event streams with known provenance.

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use super::{EventRecord, EventStream, Roi, StreamHeader};
use crate::coincidence::{CoincidenceMatrix, MatrixKind};
use crate::error::{Error, Result};
use crate::rng::{substream, StreamTag};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    /// Emitted pairs per second.
    pub pair_rate: f64,
    /// Detection probability of each photon.
    pub efficiency: f64,
    /// Uncorrelated events per second in each ROI.
    pub accidental_rate: f64,
    /// Gaussian timing jitter, nanoseconds.
    pub jitter_sigma: f64,
    /// Timestamp granularity, nanoseconds (multiple of the 1 ns tick).
    pub resolution: u64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            pair_rate: 1e5,
            efficiency: 1.0,
            accidental_rate: 0.0,
            jitter_sigma: 0.0,
            resolution: 7,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.pair_rate) || !nonneg(self.accidental_rate) || !nonneg(self.jitter_sigma) {
            return Err(Error::InvalidParameter("rates and jitter must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::InvalidParameter(format!(
                "efficiency {} outside [0, 1]",
                self.efficiency
            )));
        }
        if self.resolution == 0 {
            return Err(Error::InvalidParameter("timestamp resolution must be >= 1 ns".into()));
        }
        Ok(())
    }
}

/// Origin of a synthetic event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// Member of emitted pair `id`.
    Pair(u64),
    Accidental,
}

#[derive(Clone, Debug)]
pub struct LabeledStream {
    pub stream: EventStream,
    /// One label per record, aligned with `stream.records()`.
    pub labels: Vec<Provenance>,
}

impl LabeledStream {
    /// Whether two records come from the same emitted pair.
    pub fn is_true_pair(&self, a_index: usize, b_index: usize) -> bool {
        matches!(
            (self.labels[a_index], self.labels[b_index]),
            (Provenance::Pair(x), Provenance::Pair(y)) if x == y
        )
    }
}

/// Generate a stream whose pair positions follow the product of two 1D
/// coincidence distributions, one per transverse axis (rows go to ROI A,
/// columns to ROI B).
pub fn synthesize_stream(
    gamma_x: &CoincidenceMatrix,
    gamma_y: &CoincidenceMatrix,
    header: StreamHeader,
    params: &SynthParams,
) -> Result<LabeledStream> {
    header.validate()?;
    params.validate()?;
    for (g, n, axis) in [
        (gamma_x, header.roi_a.width, "x"),
        (gamma_y, header.roi_a.height, "y"),
    ] {
        if g.kind() != MatrixKind::Probability {
            return Err(Error::InvalidParameter("synthesis needs probability matrices".into()));
        }
        if g.size() != n as usize {
            return Err(Error::GridMismatch(format!(
                "{axis} distribution has {} pixels, ROI has {n}",
                g.size()
            )));
        }
    }
    let table = |g: &CoincidenceMatrix| {
        WeightedAliasIndex::new(g.counts().to_vec())
            .map_err(|e| Error::InvalidParameter(format!("cannot sample distribution: {e}")))
    };
    let (tx, ty) = (table(gamma_x)?, table(gamma_y)?);
    let (mx, my) = (gamma_x.size(), gamma_y.size());
    let fl = header.frame_length;
    let end = header.duration();
    let fl_s = fl as f64 * 1e-9;
    let jitter = Normal::new(0.0, params.jitter_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let poisson = |mean: f64| -> Result<Option<Poisson<f64>>> {
        if mean > 0.0 {
            Poisson::new(mean).map(Some).map_err(|e| Error::InvalidParameter(e.to_string()))
        } else {
            Ok(None)
        }
    };
    let pair_count = poisson(params.pair_rate * fl_s)?;
    let acc_count = poisson(params.accidental_rate * fl_s)?;
    let res = params.resolution;
    let stamp = |t: f64| -> u64 {
        let tick = if t <= 0.0 { 0 } else { t.floor() as u64 };
        (tick.min(end - 1) / res) * res
    };

    let frames: Vec<Vec<(EventRecord, Provenance)>> = (0..header.frame_count)
        .into_par_iter()
        .map(|f| {
            let mut rng = substream(params.seed, StreamTag::EventSynthesis, f);
            let t0 = (f * fl) as f64;
            let mut out = Vec::new();
            let n = pair_count.as_ref().map_or(0, |d| d.sample(&mut rng) as u64);
            for k in 0..n {
                let t = t0 + rng.random::<f64>() * fl as f64;
                let bx = tx.sample(&mut rng);
                let by = ty.sample(&mut rng);
                let id = (f << 32) | k;
                let coords = [
                    (Roi::A, bx / mx, by / my, &header.roi_a),
                    (Roi::B, bx % mx, by % my, &header.roi_b),
                ];
                for (roi, x, y, rect) in coords {
                    if params.efficiency < 1.0 && !rng.random_bool(params.efficiency) {
                        continue;
                    }
                    let dt = if params.jitter_sigma > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
                    out.push((
                        EventRecord::new(stamp(t + dt), rect.x0 + x as u16, rect.y0 + y as u16, roi),
                        Provenance::Pair(id),
                    ));
                }
            }
            for (roi, rect) in [(Roi::A, &header.roi_a), (Roi::B, &header.roi_b)] {
                let n = acc_count.as_ref().map_or(0, |d| d.sample(&mut rng) as u64);
                for _ in 0..n {
                    let t = t0 + rng.random::<f64>() * fl as f64;
                    let x = rect.x0 + rng.random_range(0..rect.width);
                    let y = rect.y0 + rng.random_range(0..rect.height);
                    out.push((EventRecord::new(stamp(t), x, y, roi), Provenance::Accidental));
                }
            }
            out
        })
        .collect();

    let mut all: Vec<(EventRecord, Provenance)> = frames.concat();
    // stable sort keeps generation order among identical records
    all.sort_by_key(|(r, _)| r.sort_key());
    let (records, labels): (Vec<_>, Vec<_>) = all.into_iter().unzip();
    Ok(LabeledStream {
        stream: EventStream::new(header, records)?,
        labels,
    })
}
