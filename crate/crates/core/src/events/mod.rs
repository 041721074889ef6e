//! Time-stamped single-photon events from a two-ROI detector.

mod corr4d;
mod io;
mod pairing;
mod synth;

pub use corr4d::{accumulate_corr4d, postselect_2d, postselect_sum_2d, Corr4D, Key4};
pub use io::{read_events, read_events_binary, read_events_text, write_events_binary, write_events_text, BINARY_MAGIC};
pub use pairing::{pair_events, pair_events_with, PairingOptions};
pub use synth::{synthesize_stream, LabeledStream, Provenance, SynthParams};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Roi {
    A,
    B,
}

impl Roi {
    pub fn code(self) -> u8 {
        match self {
            Roi::A => 0,
            Roi::B => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Roi::A),
            1 => Some(Roi::B),
            _ => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Roi::A => 'A',
            Roi::B => 'B',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventRecord {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub roi: Roi,
}

impl EventRecord {
    pub fn new(t: u64, x: u16, y: u16, roi: Roi) -> Self {
        Self { t, x, y, roi }
    }

    /// Canonical stream order: time, then ROI, then position.
    pub fn sort_key(&self) -> (u64, Roi, u16, u16) {
        (self.t, self.roi, self.x, self.y)
    }
}

/// Rectangle on the detector, in absolute pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoiRect {
    pub x0: u16,
    pub y0: u16,
    pub width: u16,
    pub height: u16,
}

impl RoiRect {
    pub fn new(x0: u16, y0: u16, width: u16, height: u16) -> Self {
        Self { x0, y0, width, height }
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x >= self.x0
            && y >= self.y0
            && (x as u32) < self.x0 as u32 + self.width as u32
            && (y as u32) < self.y0 as u32 + self.height as u32
    }

    /// ROI-local coordinates.
    pub fn local(&self, x: u16, y: u16) -> (u16, u16) {
        (x - self.x0, y - self.y0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub detector_width: u16,
    pub detector_height: u16,
    pub roi_a: RoiRect,
    pub roi_b: RoiRect,
    pub frame_length: u64,
    pub frame_count: u64,
}

impl StreamHeader {
    pub fn validate(&self) -> Result<()> {
        if self.frame_length == 0 || self.frame_count == 0 {
            return Err(Error::Config("frame length and frame count must be >= 1".into()));
        }
        for (name, r) in [("A", self.roi_a), ("B", self.roi_b)] {
            if r.width == 0
                || r.height == 0
                || r.x0 as u32 + r.width as u32 > self.detector_width as u32
                || r.y0 as u32 + r.height as u32 > self.detector_height as u32
            {
                return Err(Error::Config(format!("ROI {name} does not fit on the detector")));
            }
        }
        if (self.roi_a.width, self.roi_a.height) != (self.roi_b.width, self.roi_b.height) {
            return Err(Error::Config("ROI A and ROI B must have the same size".into()));
        }
        Ok(())
    }

    pub fn roi(&self, roi: Roi) -> &RoiRect {
        match roi {
            Roi::A => &self.roi_a,
            Roi::B => &self.roi_b,
        }
    }

    pub fn duration(&self) -> u64 {
        self.frame_length.saturating_mul(self.frame_count)
    }

    /// `# biphoton-events v1 ...` line shared by the text and binary formats.
    pub fn to_line(&self) -> String {
        let r = |r: &RoiRect| format!("{},{},{},{}", r.x0, r.y0, r.width, r.height);
        format!(
            "biphoton-events v1 grid={}x{} roi_a={} roi_b={} frame_length={} frame_count={}",
            self.detector_width,
            self.detector_height,
            r(&self.roi_a),
            r(&self.roi_b),
            self.frame_length,
            self.frame_count
        )
    }
}

/// Time-sorted events.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    header: StreamHeader,
    records: Vec<EventRecord>,
}

impl EventStream {
    /// Validate ordering and ROI membership.
    pub fn new(header: StreamHeader, records: Vec<EventRecord>) -> Result<Self> {
        header.validate()?;
        if let Some(k) = records.windows(2).position(|w| w[0].sort_key() > w[1].sort_key()) {
            return Err(Error::UnsortedStream(k + 1));
        }
        for (k, r) in records.iter().enumerate() {
            if !header.roi(r.roi).contains(r.x, r.y) {
                return Err(Error::InvalidParameter(format!(
                    "record {k} at ({}, {}) lies outside ROI {}",
                    r.x,
                    r.y,
                    r.roi.letter()
                )));
            }
        }
        Ok(Self { header, records })
    }

    /// Sort into canonical order, then validate.
    pub fn from_unsorted(header: StreamHeader, mut records: Vec<EventRecord>) -> Result<Self> {
        records.sort_unstable_by_key(|r| r.sort_key());
        Self::new(header, records)
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn frame_of(&self, t: u64) -> u64 {
        t / self.header.frame_length
    }

    /// Histogram of one ROI's events in local coordinates, row-major.
    pub fn singles_image(&self, roi: Roi) -> crate::coincidence::Image2D {
        let rect = *self.header.roi(roi);
        let (w, h) = (rect.width as usize, rect.height as usize);
        let mut img = crate::coincidence::Image2D::zeros(w, h);
        for r in self.records.iter().filter(|r| r.roi == roi) {
            let (x, y) = rect.local(r.x, r.y);
            *img.at_mut(x as usize, y as usize) += 1.0;
        }
        img
    }
}

/// One A event matched with one B event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoincidencePair {
    pub a: EventRecord,
    pub b: EventRecord,
    /// Indices of the two records in the stream.
    pub a_index: usize,
    pub b_index: usize,
    /// `t_b - t_a`.
    pub dt: i64,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn header() -> StreamHeader {
        StreamHeader {
            detector_width: 64,
            detector_height: 32,
            roi_a: RoiRect::new(0, 0, 32, 32),
            roi_b: RoiRect::new(32, 0, 32, 32),
            frame_length: 1000,
            frame_count: 4,
        }
    }

    #[test]
    fn ordering_and_bounds() {
        let h = header();
        let ok = vec![EventRecord::new(0, 1, 1, Roi::A), EventRecord::new(0, 40, 1, Roi::B)];
        assert!(EventStream::new(h, ok).is_ok());
        let bad = vec![EventRecord::new(5, 1, 1, Roi::A), EventRecord::new(3, 40, 1, Roi::B)];
        assert!(matches!(EventStream::new(h, bad.clone()), Err(Error::UnsortedStream(1))));
        assert!(EventStream::from_unsorted(h, bad).is_ok());
        let tie = vec![EventRecord::new(0, 40, 1, Roi::B), EventRecord::new(0, 1, 1, Roi::A)];
        assert!(EventStream::new(h, tie).is_err());
        let outside = vec![EventRecord::new(0, 40, 1, Roi::A)];
        assert!(EventStream::new(h, outside).is_err());
    }

    #[test]
    fn header_validation() {
        let mut h = header();
        h.roi_b = RoiRect::new(40, 0, 32, 32);
        assert!(matches!(h.validate(), Err(Error::Config(_))));
        let mut h = header();
        h.frame_length = 0;
        assert!(h.validate().is_err());
    }
}
