//! Sparse four-dimensional coincidence histogram and its 2D post-selections.

use std::collections::HashMap;

use super::{CoincidencePair, StreamHeader};
use crate::coincidence::{window_offsets, Image2D};
use crate::error::{Error, Result};
use crate::fit::gaussian_width;

/// `(x_a, y_a, x_b, y_b)` in ROI-local pixels.
pub type Key4 = (u16, u16, u16, u16);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corr4D {
    width: usize,
    height: usize,
    counts: HashMap<Key4, u64>,
    total: u64,
}

impl Corr4D {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            counts: HashMap::new(),
            total: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn add(&mut self, key: Key4, count: u64) {
        if count > 0 {
            *self.counts.entry(key).or_insert(0) += count;
            self.total += count;
        }
    }

    pub fn get(&self, key: Key4) -> u64 {
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of distinct occupied coordinates.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Entries in ascending key order.
    pub fn entries(&self) -> Vec<(Key4, u64)> {
        let mut v: Vec<_> = self.counts.iter().map(|(k, c)| (*k, *c)).collect();
        v.sort_unstable();
        v
    }

    fn image_from(&self, mut f: impl FnMut(Key4, u64, &mut Image2D)) -> Image2D {
        let mut img = Image2D::zeros(self.width, self.height);
        for (k, c) in &self.counts {
            f(*k, *c, &mut img);
        }
        img
    }

    /// `Gamma_s` image: counts summed over the A coordinate, on B pixels.
    pub fn marginal_b(&self) -> Image2D {
        self.image_from(|k, c, img| *img.at_mut(k.2 as usize, k.3 as usize) += c as f64)
    }

    /// Counts summed over the B coordinate, on A pixels.
    pub fn marginal_a(&self) -> Image2D {
        self.image_from(|k, c, img| *img.at_mut(k.0 as usize, k.1 as usize) += c as f64)
    }

    /// Histogram of `b - a` along one axis (0 = x, 1 = y) as `(offset, counts)`.
    pub fn difference_profile(&self, axis: usize) -> (Vec<f64>, Vec<f64>) {
        let n = if axis == 0 { self.width } else { self.height };
        let mut p = vec![0.0; 2 * n - 1];
        for (k, c) in &self.counts {
            let d = if axis == 0 {
                k.2 as i64 - k.0 as i64
            } else {
                k.3 as i64 - k.1 as i64
            };
            p[(d + n as i64 - 1) as usize] += *c as f64;
        }
        let d = (0..2 * n - 1).map(|k| k as f64 - (n - 1) as f64).collect();
        (d, p)
    }

    /// 1/e^2 half-width (pixels) of the `b - a` distribution along one axis.
    pub fn correlation_width(&self, axis: usize) -> Result<f64> {
        let (d, p) = self.difference_profile(axis);
        Ok(gaussian_width(&d, &p)?.width * std::f64::consts::SQRT_2)
    }
}

/// Accumulate pairs into ROI-local coordinates.
pub fn accumulate_corr4d(pairs: &[CoincidencePair], header: &StreamHeader) -> Corr4D {
    let mut c = Corr4D::new(header.roi_a.width as usize, header.roi_a.height as usize);
    for p in pairs {
        let (xa, ya) = header.roi_a.local(p.a.x, p.a.y);
        let (xb, yb) = header.roi_b.local(p.b.x, p.b.y);
        c.add((xa, ya, xb, yb), 1);
    }
    c
}

/// `I_xi(p) = C(p, p + xi)` on A pixels.
pub fn postselect_2d(c: &Corr4D, xi: (i64, i64)) -> Image2D {
    c.image_from(|k, n, img| {
        if k.2 as i64 - k.0 as i64 == xi.0 && k.3 as i64 - k.1 as i64 == xi.1 {
            *img.at_mut(k.0 as usize, k.1 as usize) += n as f64;
        }
    })
}

/// Sum of the `n x n` post-selected images around offset `center`, each
/// shifted by `-delta` so features align: `J(p) = sum_delta I_{center+delta}(p - delta)`.
pub fn postselect_sum_2d(c: &Corr4D, n: usize, center: (i64, i64)) -> Result<Image2D> {
    if n == 0 || n > c.width.min(c.height) {
        return Err(Error::InvalidParameter(format!("window size {n} out of range")));
    }
    let win = window_offsets(n);
    let (w, h) = (c.width as i64, c.height as i64);
    Ok(c.image_from(|k, cnt, img| {
        let dx = k.2 as i64 - k.0 as i64 - center.0;
        let dy = k.3 as i64 - k.1 as i64 - center.1;
        if win.contains(&dx) && win.contains(&dy) {
            let (px, py) = (k.0 as i64 + dx, k.1 as i64 + dy);
            if (0..w).contains(&px) && (0..h).contains(&py) {
                *img.at_mut(px as usize, py as usize) += cnt as f64;
            }
        }
    }))
}
