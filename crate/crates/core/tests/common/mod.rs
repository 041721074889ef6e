#![allow(dead_code)]

use biphoton::events::{EventRecord, EventStream, Roi, RoiRect, StreamHeader};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn header(frame_length: u64, frame_count: u64) -> StreamHeader {
    StreamHeader {
        detector_width: 32,
        detector_height: 16,
        roi_a: RoiRect::new(0, 0, 16, 16),
        roi_b: RoiRect::new(16, 0, 16, 16),
        frame_length,
        frame_count,
    }
}

/// Random stream of `n` events with uniform times, ROIs and pixels.
pub fn random_stream(seed: u64, n: usize, header: StreamHeader) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let end = header.frame_length * header.frame_count;
    let recs = (0..n)
        .map(|_| {
            let roi = if rng.random_bool(0.5) { Roi::A } else { Roi::B };
            let r = header.roi(roi);
            EventRecord::new(
                rng.random_range(0..end),
                r.x0 + rng.random_range(0..r.width),
                r.y0 + rng.random_range(0..r.height),
                roi,
            )
        })
        .collect();
    EventStream::from_unsorted(header, recs).unwrap()
}

/// Quadratic reference matcher: A events in stream order each take the
/// earliest unused B event in the same frame with `|dt| <= window`.
pub fn brute_force_pairs(stream: &EventStream, window: u64) -> Vec<(usize, usize)> {
    let recs = stream.records();
    let fl = stream.header().frame_length;
    let mut used = vec![false; recs.len()];
    let mut out = Vec::new();
    for (i, a) in recs.iter().enumerate() {
        if a.roi != Roi::A {
            continue;
        }
        let mut best: Option<usize> = None;
        for (j, b) in recs.iter().enumerate() {
            if b.roi != Roi::B || used[j] || b.t / fl != a.t / fl || a.t.abs_diff(b.t) > window {
                continue;
            }
            match best {
                Some(k) if (recs[k].t, k) <= (b.t, j) => {}
                _ => best = Some(j),
            }
        }
        if let Some(j) = best {
            used[j] = true;
            out.push((i, j));
        }
    }
    out
}
