//! The normal operator `A*A` as a convolution, applied through a circulant
//! embedding on the doubled grid.

use std::path::Path;

use log::{debug, warn};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, FirmError, Result};
use crate::fft::{fft3, Direction};
use crate::io::{read_f64, read_json, sidecar_path, write_f64, write_json};
use crate::projector::ProjectionOperator;
use crate::volume::{centered, check_side};

const SYMMETRY_TOL: f64 = 1e-6;
const IMAG_TOL: f64 = 1e-6;
const PSD_TOL: f64 = 1e-6;

/// Values `Ker(n)` for `-N < n < N` on each axis, x fastest.
#[derive(Debug, Clone)]
pub struct ConvolutionKernel {
    n: usize,
    data: Vec<Complex64>,
}

impl ConvolutionKernel {
    pub fn new(n: usize, data: Vec<Complex64>) -> Result<Self> {
        check_side(n)?;
        let s = 2 * n - 1;
        if data.len() != s * s * s {
            return invalid(format!("kernel for side {n} needs {} values, got {}", s * s * s, data.len()));
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Side of the stored array, `2N - 1`.
    pub fn side(&self) -> usize {
        2 * self.n - 1
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, l: [i64; 3]) -> usize {
        let s = self.side();
        let h = self.n as i64 - 1;
        (l[0] + h) as usize + s * ((l[1] + h) as usize + s * (l[2] + h) as usize)
    }

    #[inline]
    pub fn get(&self, l: [i64; 3]) -> Complex64 {
        self.data[self.index(l)]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `max |Ker(-n) - conj(Ker(n))|`.
    pub fn hermitian_defect(&self) -> f64 {
        let h = self.n as i64 - 1;
        let mut worst = 0.0f64;
        for z in -h..=h {
            for y in -h..=h {
                for x in -h..=h {
                    let d = (self.get([-x, -y, -z]) - self.get([x, y, z]).conj()).norm();
                    worst = worst.max(d);
                }
            }
        }
        worst
    }
}

/// Per-point weights `h_m(‖ω_k‖)²` in the operator's point order.
fn squared_ctf_weights(op: &ProjectionOperator) -> Vec<f64> {
    let p = op.grid().len();
    (0..op.m() * p).map(|i| op.ctf(i / p, i % p).powi(2)).collect()
}

/// `Ker(n) = Σ_m Σ_k h_m² exp(i⟨n, p_mk⟩)` for `-N < n < N`.
///
/// Only `n3 ≥ 0` is transformed, as four side-`N` blocks offset by
/// `(±N/2, ±N/2, N/2)`; the rest follows from `Ker(-n) = conj(Ker(n))`.
pub fn compute_kernel(op: &ProjectionOperator) -> Result<ConvolutionKernel> {
    let n = op.n();
    let h = (n / 2) as i64;
    let w2 = squared_ctf_weights(op);
    let points = op.plan().points();
    let mut out = ConvolutionKernel { n, data: vec![Complex64::new(0.0, 0.0); (2 * n - 1).pow(3)] };
    let hi = n as i64 - 1;
    for sy in [-h, h] {
        for sx in [-h, h] {
            let shift = [sx as f64, sy as f64, h as f64];
            let weights: Vec<Complex64> = points
                .par_iter()
                .zip(&w2)
                .map(|(p, &w)| Complex64::from_polar(w, shift[0] * p[0] + shift[1] * p[1] + shift[2] * p[2]))
                .collect();
            let block = op.plan().type1(&weights, n)?;
            for (q, v) in block.into_iter().enumerate() {
                let l = [sx + centered(q % n, n), sy + centered((q / n) % n, n), h + centered(q / (n * n), n)];
                if l[0] > -hi - 1 && l[1] > -hi - 1 && l[2] <= hi {
                    let i = out.index(l);
                    out.data[i] = v;
                }
            }
        }
    }
    for z in -hi..=0 {
        for y in -hi..=hi {
            for x in -hi..=hi {
                let (a, b) = (out.index([x, y, z]), out.index([-x, -y, -z]));
                if z < 0 {
                    out.data[a] = out.data[b].conj();
                } else if a < b {
                    // n3 = 0 plane holds both halves; average them
                    let v = (out.data[a] + out.data[b].conj()) * 0.5;
                    out.data[a] = v;
                    out.data[b] = v.conj();
                } else if a == b {
                    out.data[a] = Complex64::new(out.data[a].re, 0.0);
                }
            }
        }
    }
    Ok(out)
}

/// Same values from one type-1 transform onto the `2N` grid, with no
/// symmetry imposed.
pub fn compute_kernel_full(op: &ProjectionOperator) -> Result<ConvolutionKernel> {
    let n = op.n();
    let weights: Vec<Complex64> = squared_ctf_weights(op).into_iter().map(|w| Complex64::new(w, 0.0)).collect();
    let big = op.plan().type1(&weights, 2 * n)?;
    let s = 2 * n;
    let mut data = Vec::with_capacity((s - 1).pow(3));
    for z in 1..s {
        for y in 1..s {
            for x in 1..s {
                data.push(big[x + s * (y + s * z)]);
            }
        }
    }
    ConvolutionKernel::new(n, data)
}

/// Value placed in the circulant slot that no retained output reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Padding {
    /// The slot maps back to lag 0, so it repeats `Ker` at zero lag on that axis.
    Literal,
    Constant(f64),
}

/// One-based circulant index map on an axis of length `2N`:
/// `i ↦ i` for `i ≤ N`, `N+1 ↦ 1`, and `i ↦ i − 2N` beyond.
pub fn circulant_index(i: usize, n: usize) -> i64 {
    assert!((1..=2 * n).contains(&i), "index {i} outside 1..={}", 2 * n);
    if i <= n {
        i as i64
    } else if i == n + 1 {
        1
    } else {
        i as i64 - 2 * n as i64
    }
}

/// Identity of the geometry a kernel was built from, stored with cached kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMetadata {
    pub n: usize,
    pub m: usize,
    pub accuracy: f64,
    pub rotations_sha256: String,
    pub ctf_sha256: String,
}

impl KernelMetadata {
    pub fn for_operator(op: &ProjectionOperator) -> Self {
        let mut rot = Sha256::new();
        for r in op.rotations() {
            for v in r.matrix().iter().flatten() {
                rot.update(v.to_le_bytes());
            }
        }
        let mut ctf = Sha256::new();
        for &g in op.defocus_group() {
            ctf.update((g as u64).to_le_bytes());
        }
        for table in op.ctf_tables() {
            for v in table {
                ctf.update(v.to_le_bytes());
            }
        }
        Self {
            n: op.n(),
            m: op.m(),
            accuracy: op.plan().accuracy(),
            rotations_sha256: hex::encode(rot.finalize()),
            ctf_sha256: hex::encode(ctf.finalize()),
        }
    }
}

/// Real eigenvalues of the circulant embedding of `A*A`.
#[derive(Debug, Clone)]
pub struct ToeplitzKernel {
    n: usize,
    spectrum: Vec<f64>,
    metadata: Option<KernelMetadata>,
}

/// Embed with the literal padding slot.
pub fn embed_circulant(ker: &ConvolutionKernel) -> Result<ToeplitzKernel> {
    embed_circulant_with(ker, Padding::Literal)
}

pub fn embed_circulant_with(ker: &ConvolutionKernel, padding: Padding) -> Result<ToeplitzKernel> {
    let n = ker.n();
    let scale = ker.max_abs();
    let defect = ker.hermitian_defect();
    if !scale.is_finite() || defect > SYMMETRY_TOL * scale {
        return Err(FirmError::InconsistentKernel(format!(
            "Ker(-n) differs from conj(Ker(n)) by {defect:e} (max |Ker| = {scale:e})"
        )));
    }
    let s = 2 * n;
    let lag: Vec<Option<i64>> = (1..=s)
        .map(|i| match padding {
            Padding::Constant(_) if i == n + 1 => None,
            _ => Some(circulant_index(i, n) - 1),
        })
        .collect();
    let mut col = vec![Complex64::new(0.0, 0.0); s * s * s];
    col.par_chunks_mut(s * s).enumerate().for_each(|(z, plane)| {
        for y in 0..s {
            for x in 0..s {
                plane[x + s * y] = match (lag[x], lag[y], lag[z], padding) {
                    (Some(a), Some(b), Some(c), _) => ker.get([a, b, c]),
                    (.., Padding::Constant(v)) => Complex64::new(v, 0.0),
                    _ => unreachable!("literal padding always has a lag"),
                };
            }
        }
    });
    fft3(&mut col, s, Direction::Forward);
    let max = col.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let max_imag = col.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    debug!("circulant spectrum: max {max:e}, max imaginary part {max_imag:e}");
    if max_imag > IMAG_TOL * max {
        return Err(FirmError::InconsistentKernel(format!(
            "circulant spectrum has imaginary part {max_imag:e} against max {max:e}"
        )));
    }
    let spectrum: Vec<f64> = col.iter().map(|v| v.re).collect();
    let kernel = ToeplitzKernel { n, spectrum, metadata: None };
    let (lo, hi) = kernel.spectrum_range();
    if lo < -PSD_TOL * hi {
        warn!("circulant spectrum is indefinite: min {lo:e}, max {hi:e}");
    }
    Ok(kernel)
}

impl ToeplitzKernel {
    /// Kernel for `op`: compute `Ker`, embed, and record the build metadata.
    pub fn build(op: &ProjectionOperator) -> Result<Self> {
        let mut k = embed_circulant(&compute_kernel(op)?)?;
        k.metadata = Some(KernelMetadata::for_operator(op));
        Ok(k)
    }

    pub fn from_spectrum(n: usize, spectrum: Vec<f64>, metadata: Option<KernelMetadata>) -> Result<Self> {
        check_side(n)?;
        if spectrum.len() != 8 * n * n * n {
            return invalid(format!("spectrum for side {n} needs {} values, got {}", 8 * n * n * n, spectrum.len()));
        }
        if spectrum.iter().any(|v| !v.is_finite()) {
            return invalid("spectrum has non-finite values");
        }
        Ok(Self { n, spectrum, metadata })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn metadata(&self) -> Option<&KernelMetadata> {
        self.metadata.as_ref()
    }

    pub fn with_metadata(mut self, metadata: KernelMetadata) -> Self {
        self.metadata = Some(metadata);
        self
    }

    /// `(min, max)` of the spectrum.
    pub fn spectrum_range(&self) -> (f64, f64) {
        self.spectrum.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Kernel of `alpha · A*A`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self { n: self.n, spectrum: self.spectrum.iter().map(|v| v * alpha).collect(), metadata: self.metadata.clone() }
    }

    /// `A*A v` for a complex `N³` array (x fastest).
    pub fn apply_normal(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.n;
        if v.len() != n * n * n {
            return invalid(format!("input has {} values, expected {}", v.len(), n * n * n));
        }
        let s = 2 * n;
        let mut buf = vec![Complex64::new(0.0, 0.0); s * s * s];
        buf.par_chunks_mut(s * s).take(n).enumerate().for_each(|(z, plane)| {
            for y in 0..n {
                let src = n * (y + n * z);
                plane[s * y..s * y + n].copy_from_slice(&v[src..src + n]);
            }
        });
        fft3(&mut buf, s, Direction::Forward);
        buf.par_iter_mut().zip(self.spectrum.par_iter()).for_each(|(b, &l)| *b *= l);
        fft3(&mut buf, s, Direction::Inverse);
        let norm = 1.0 / (s * s * s) as f64;
        let mut out = vec![Complex64::new(0.0, 0.0); n * n * n];
        out.par_chunks_mut(n * n).enumerate().for_each(|(z, plane)| {
            for y in 0..n {
                let src = s * (y + s * z);
                for (o, b) in plane[n * y..n * y + n].iter_mut().zip(&buf[src..src + n]) {
                    *o = b * norm;
                }
            }
        });
        Ok(out)
    }

    /// Real part of `A*A v` for a real `N³` array.
    pub fn apply_normal_real(&self, v: &[f64]) -> Result<Vec<f64>> {
        let c: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Ok(self.apply_normal(&c)?.into_iter().map(|z| z.re).collect())
    }

    /// Write the spectrum as raw little-endian f64 plus a `<path>.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = self
            .metadata
            .as_ref()
            .ok_or_else(|| FirmError::InvalidArgument("kernel has no build metadata to cache".into()))?;
        write_f64(path, &self.spectrum)?;
        write_json(&sidecar_path(path), meta)
    }

    /// Load a cached kernel, refusing it unless its metadata equals `expected`.
    pub fn load(path: &Path, expected: &KernelMetadata) -> Result<Self> {
        let meta: KernelMetadata = read_json(&sidecar_path(path))?;
        if &meta != expected {
            return Err(FirmError::CacheMismatch(format!(
                "{} was built for n={} m={} eps={:e} rotations {} ctf {}",
                path.display(),
                meta.n,
                meta.m,
                meta.accuracy,
                &meta.rotations_sha256[..12.min(meta.rotations_sha256.len())],
                &meta.ctf_sha256[..12.min(meta.ctf_sha256.len())],
            )));
        }
        let spectrum = read_f64(path)?;
        if spectrum.len() != 8 * meta.n.pow(3) {
            return Err(FirmError::CacheMismatch(format!(
                "{} holds {} values, expected {}",
                path.display(),
                spectrum.len(),
                8 * meta.n.pow(3)
            )));
        }
        Self::from_spectrum(meta.n, spectrum, Some(meta))
    }
}
