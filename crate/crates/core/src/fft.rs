//! Multidimensional FFTs on cubic and square arrays (x fastest).
//!
//! Transforms are unnormalized. Every line is transformed independently, so
//! results do not depend on the number of worker threads.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

fn plan(n: usize, dir: Direction) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    match dir {
        Direction::Forward => planner.plan_fft_forward(n),
        Direction::Inverse => planner.plan_fft_inverse(n),
    }
}

fn fft_rows(data: &mut [Complex64], n: usize, fft: &Arc<dyn Fft<f64>>) {
    // batch rows so each task amortizes its scratch buffer
    let batch = n * n.clamp(1, 64);
    data.par_chunks_mut(batch).for_each_init(
        || vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()],
        |scratch, chunk| fft.process_with_scratch(chunk, scratch),
    );
}

/// Cyclic axis permutation of a cube: (x, y, z) → (y, z, x) so that the old
/// y axis becomes the fastest one.
fn rotate_axes(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    let n2 = n * n;
    dst.par_chunks_mut(n2).enumerate().for_each(|(x, plane)| {
        for z in 0..n {
            for y in 0..n {
                plane[y + n * z] = src[x + n * y + n2 * z];
            }
        }
    });
}

/// 3D FFT of an `n`³ cube in place.
pub fn fft3(data: &mut [Complex64], n: usize, dir: Direction) {
    assert_eq!(data.len(), n * n * n);
    let fft = plan(n, dir);
    let mut tmp = vec![Complex64::new(0.0, 0.0); data.len()];
    for _ in 0..3 {
        fft_rows(data, n, &fft);
        rotate_axes(data, &mut tmp, n);
        data.copy_from_slice(&tmp);
    }
}

/// 2D FFT of an `n`×`n` image in place (rows are x).
pub fn fft2(data: &mut [Complex64], n: usize, dir: Direction) {
    assert_eq!(data.len(), n * n);
    let fft = plan(n, dir);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut tmp = vec![Complex64::new(0.0, 0.0); n * n];
    for _ in 0..2 {
        fft.process_with_scratch(data, &mut scratch);
        for y in 0..n {
            for x in 0..n {
                tmp[y + n * x] = data[x + n * y];
            }
        }
        data.copy_from_slice(&tmp);
    }
}

/// Sign `(-1)^(k1 + k2 + ...)` that converts between a standard FFT over
/// storage positions and a DFT over centered indices for even sides.
#[inline]
pub fn centering_sign(sum: i64) -> f64 {
    if sum.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Forward DFT of a real centered cube onto centered frequencies:
/// `F(j) = Σ_n V(n) exp(-2πi⟨n, j⟩/N)`, both index sets `-N/2 .. N/2-1`.
pub fn centered_dft3(values: &[f64], n: usize) -> Vec<Complex64> {
    let h = n / 2;
    // move centered index 0 to storage 0
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n * n];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let src = x + n * (y + n * z);
                let dst = (x + h) % n + n * ((y + h) % n + n * ((z + h) % n));
                buf[dst] = Complex64::new(values[src], 0.0);
            }
        }
    }
    fft3(&mut buf, n, Direction::Forward);
    let mut out = vec![Complex64::new(0.0, 0.0); n * n * n];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let src = (x + h) % n + n * ((y + h) % n + n * ((z + h) % n));
                out[x + n * (y + n * z)] = buf[src];
            }
        }
    }
    out
}
