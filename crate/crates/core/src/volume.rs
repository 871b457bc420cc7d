//! Real and complex cubic grids with the centered index convention.
//!
//! A side-`n` grid covers indices `-n/2 ..= n/2 - 1` on every axis. Storage is
//! x fastest, then y, then z, with the most negative index stored first.

use num_complex::Complex64;

use crate::error::{invalid, Result};

/// Smallest centered index on an axis of length `n`.
#[inline]
pub fn index_min(n: usize) -> i64 {
    -(n as i64 / 2)
}

/// Centered index of storage position `q` on an axis of length `n`.
#[inline]
pub fn centered(q: usize, n: usize) -> i64 {
    q as i64 + index_min(n)
}

/// Linear storage offset of a centered triple. Caller guarantees range.
#[inline]
pub fn offset(idx: [i64; 3], n: usize) -> usize {
    let h = n as i64 / 2;
    let (x, y, z) = ((idx[0] + h) as usize, (idx[1] + h) as usize, (idx[2] + h) as usize);
    x + n * (y + n * z)
}

/// Centered triple for a linear storage offset.
#[inline]
pub fn triple(off: usize, n: usize) -> [i64; 3] {
    [centered(off % n, n), centered((off / n) % n, n), centered(off / (n * n), n)]
}

pub(crate) fn check_side(n: usize) -> Result<()> {
    if n < 4 || n % 2 != 0 {
        return invalid(format!("grid side must be even and >= 4, got {n}"));
    }
    Ok(())
}

/// Real density on a centered `n`³ grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    n: usize,
    pixel_size: f64,
    data: Vec<f64>,
}

impl Volume {
    pub fn zeros(n: usize, pixel_size: f64) -> Result<Self> {
        Self::from_data(n, pixel_size, vec![0.0; n * n * n])
    }

    pub fn from_data(n: usize, pixel_size: f64, data: Vec<f64>) -> Result<Self> {
        check_side(n)?;
        if data.len() != n * n * n {
            return invalid(format!("volume data has {} entries, expected {}", data.len(), n * n * n));
        }
        if !(pixel_size.is_finite() && pixel_size > 0.0) {
            return invalid(format!("pixel size must be positive, got {pixel_size}"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("volume contains non-finite entries");
        }
        Ok(Self { n, pixel_size, data })
    }

    pub fn with_pixel_size(self, pixel_size: f64) -> Result<Self> {
        Self::from_data(self.n, pixel_size, self.data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: [i64; 3]) -> f64 {
        self.data[offset(idx, self.n)]
    }

    pub fn to_complex(&self) -> ComplexGrid {
        ComplexGrid { n: self.n, data: self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect() }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Complex values on a centered `n`³ grid (same layout as [`Volume`]).
///
/// `n` may be odd here; kernel lag arrays use side `2N - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![Complex64::new(0.0, 0.0); n * n * n] }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn imag_norm(&self) -> f64 {
        self.data.iter().map(|v| v.im * v.im).sum::<f64>().sqrt()
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.re).collect()
    }
}

pub(crate) fn dot_c(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

pub(crate) fn dot_r(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_c(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}
