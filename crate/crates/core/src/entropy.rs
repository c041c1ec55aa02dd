//! Histogram entropy of a weight matrix.

use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Shannon entropy (natural log) of the values of `w` over `bins` equal-width
/// bins spanning `[min(w), max(w)]`.
///
/// The maximum value falls in the last bin. A constant matrix has entropy
/// exactly zero. The result lies in `[0, ln bins]`.
pub fn weight_entropy(w: &Matrix, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!(
            "entropy needs at least 2 bins, got {bins}"
        )));
    }
    let data = w.data();
    if data.is_empty() {
        return Err(Error::Shape("entropy of an empty matrix".into()));
    }
    let (lo, hi) = data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if lo == hi {
        return Ok(0.0);
    }

    let lo = lo as f64;
    let span = hi as f64 - lo;
    let mut counts = vec![0usize; bins];
    for &v in data {
        let pos = (v as f64 - lo) / span * bins as f64;
        let idx = (libm::floor(pos) as usize).min(bins - 1);
        counts[idx] += 1;
    }

    let total = data.len() as f64;
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * libm::log(p)
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}
