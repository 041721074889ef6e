//! Greedy earliest-first coincidence pairing.

use rayon::prelude::*;

use super::{CoincidencePair, EventRecord, EventStream, Roi};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairingOptions {
    /// Maximum `|t_b - t_a|` in nanoseconds.
    pub window: u64,
    /// Allow pairs that straddle a frame boundary.
    pub cross_frames: bool,
}

impl PairingOptions {
    pub fn new(window: u64) -> Self {
        Self {
            window,
            cross_frames: false,
        }
    }
}

/// Pair within frames using a coincidence window in nanoseconds.
pub fn pair_events(stream: &EventStream, window: u64) -> Result<Vec<CoincidencePair>> {
    pair_events_with(stream, PairingOptions::new(window))
}

/// Scan A events in time order; each takes the earliest unused B event with
/// `|t_b - t_a| <= window`. Linear in the number of events.
pub fn pair_events_with(stream: &EventStream, opts: PairingOptions) -> Result<Vec<CoincidencePair>> {
    let recs = stream.records();
    if let Some(k) = recs.windows(2).position(|w| w[0].sort_key() > w[1].sort_key()) {
        return Err(Error::UnsortedStream(k + 1));
    }
    if opts.cross_frames {
        return Ok(pair_segment(recs, 0, opts.window));
    }
    let fl = stream.header().frame_length;
    let mut bounds = vec![0usize];
    let mut start = 0;
    while start < recs.len() {
        let frame = recs[start].t / fl;
        let end_t = (frame + 1).saturating_mul(fl);
        let end = start + recs[start..].partition_point(|r| r.t < end_t);
        bounds.push(end);
        start = end;
    }
    let parts: Vec<Vec<CoincidencePair>> = bounds
        .par_windows(2)
        .map(|w| pair_segment(&recs[w[0]..w[1]], w[0], opts.window))
        .collect();
    Ok(parts.concat())
}

fn pair_segment(recs: &[EventRecord], offset: usize, window: u64) -> Vec<CoincidencePair> {
    let bs: Vec<usize> = (0..recs.len()).filter(|&k| recs[k].roi == Roi::B).collect();
    let mut out = Vec::new();
    let mut lower = 0;
    let mut next = 0;
    for (ka, a) in recs.iter().enumerate().filter(|(_, r)| r.roi == Roi::A) {
        while lower < bs.len() && recs[bs[lower]].t + window < a.t {
            lower += 1;
        }
        next = next.max(lower);
        if next < bs.len() && recs[bs[next]].t <= a.t + window {
            let b = recs[bs[next]];
            out.push(CoincidencePair {
                a: *a,
                b,
                a_index: offset + ka,
                b_index: offset + bs[next],
                dt: b.t as i64 - a.t as i64,
            });
            next += 1;
        }
    }
    out
}
