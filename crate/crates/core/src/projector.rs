//! Forward projector (volume → CTF-modulated central slices) and its adjoint.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::ctf::{ctf_on_disk, CtfParams};
use crate::error::{invalid, Result};
use crate::fft::{centering_sign, fft2, Direction};
use crate::geometry::{slice_points, DiskGrid, Rotation};
use crate::nufft::NufftPlan;
use crate::volume::{ComplexGrid, Volume};

/// Truncated Fourier slices for `m` images, slice-major (`values[m * P + k]`).
#[derive(Debug, Clone)]
pub struct SliceStack {
    pub grid: DiskGrid,
    pub values: Vec<Complex64>,
    pub rotations: Vec<Rotation>,
    pub defocus_group: Vec<usize>,
    pub ctfs: Vec<CtfParams>,
}

impl SliceStack {
    pub fn m(&self) -> usize {
        self.rotations.len()
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn slice(&self, m: usize) -> &[Complex64] {
        let p = self.grid.len();
        &self.values[m * p..(m + 1) * p]
    }

    /// Largest `|b(-k) - conj(b(k))|` relative to the largest `|b|`.
    pub fn hermitian_defect(&self) -> f64 {
        hermitian_defect(&self.grid, &self.values)
    }
}

pub(crate) fn hermitian_defect(grid: &DiskGrid, values: &[Complex64]) -> f64 {
    let neg = grid.negation_map();
    let p = grid.len();
    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    values
        .chunks(p)
        .flat_map(|s| neg.iter().enumerate().map(move |(k, &nk)| (s[nk] - s[k].conj()).norm()))
        .fold(0.0, f64::max)
        / scale
}

/// The operator `A` and its adjoint for fixed geometry and CTFs.
#[derive(Debug, Clone)]
pub struct ProjectionOperator {
    grid: DiskGrid,
    rotations: Vec<Rotation>,
    defocus_group: Vec<usize>,
    ctf_disk: Vec<Vec<f64>>,
    plan: NufftPlan,
}

impl ProjectionOperator {
    pub fn new(
        grid: DiskGrid,
        rotations: Vec<Rotation>,
        ctfs: &[CtfParams],
        defocus_group: Vec<usize>,
        accuracy: f64,
    ) -> Result<Self> {
        for c in ctfs {
            c.validate()?;
        }
        let tables = ctfs.iter().map(|c| ctf_on_disk(c, &grid)).collect();
        Self::with_ctf_tables(grid, rotations, tables, defocus_group, accuracy)
    }

    /// Operator with `h ≡ 1` for every image.
    pub fn without_ctf(grid: DiskGrid, rotations: Vec<Rotation>, accuracy: f64) -> Result<Self> {
        let ones = vec![vec![1.0; grid.len()]];
        let groups = vec![0; rotations.len()];
        Self::with_ctf_tables(grid, rotations, ones, groups, accuracy)
    }

    /// Operator with explicit per-group CTF samples on the disk.
    pub fn with_ctf_tables(
        grid: DiskGrid,
        rotations: Vec<Rotation>,
        ctf_disk: Vec<Vec<f64>>,
        defocus_group: Vec<usize>,
        accuracy: f64,
    ) -> Result<Self> {
        if rotations.is_empty() {
            return invalid("projection operator needs at least one rotation");
        }
        if defocus_group.len() != rotations.len() {
            return invalid(format!("{} group ids for {} rotations", defocus_group.len(), rotations.len()));
        }
        if let Some(&g) = defocus_group.iter().find(|&&g| g >= ctf_disk.len()) {
            return invalid(format!("defocus group {g} has no CTF ({} groups)", ctf_disk.len()));
        }
        if ctf_disk.iter().any(|t| t.len() != grid.len() || t.iter().any(|v| !v.is_finite())) {
            return invalid("CTF tables must be finite and match the disk size");
        }
        let points: Vec<[f64; 3]> = rotations.iter().flat_map(|r| slice_points(r, &grid)).collect();
        let plan = NufftPlan::new(grid.n(), points, accuracy)?;
        Ok(Self { grid, rotations, defocus_group, ctf_disk, plan })
    }

    pub fn grid(&self) -> &DiskGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn m(&self) -> usize {
        self.rotations.len()
    }

    pub fn rotations(&self) -> &[Rotation] {
        &self.rotations
    }

    pub fn defocus_group(&self) -> &[usize] {
        &self.defocus_group
    }

    pub fn ctf_tables(&self) -> &[Vec<f64>] {
        &self.ctf_disk
    }

    pub fn plan(&self) -> &NufftPlan {
        &self.plan
    }

    /// CTF value for image `m` at disk position `k`.
    #[inline]
    pub fn ctf(&self, m: usize, k: usize) -> f64 {
        self.ctf_disk[self.defocus_group[m]][k]
    }

    pub fn forward(&self, v: &Volume) -> Result<Vec<Complex64>> {
        if v.n() != self.n() {
            return invalid(format!("volume side {} does not match operator side {}", v.n(), self.n()));
        }
        self.forward_grid(&v.to_complex())
    }

    pub fn forward_grid(&self, v: &ComplexGrid) -> Result<Vec<Complex64>> {
        if v.n != self.n() {
            return invalid(format!("grid side {} does not match operator side {}", v.n, self.n()));
        }
        let mut out = self.plan.type2(&v.data)?;
        self.apply_ctf(&mut out);
        Ok(out)
    }

    pub fn adjoint(&self, g: &[Complex64]) -> Result<ComplexGrid> {
        if g.len() != self.m() * self.grid.len() {
            return invalid(format!("slice data has {} values, expected {}", g.len(), self.m() * self.grid.len()));
        }
        let mut weighted = g.to_vec();
        self.apply_ctf(&mut weighted);
        let data = self.plan.type1(&weighted, self.n())?;
        Ok(ComplexGrid { n: self.n(), data })
    }

    fn apply_ctf(&self, values: &mut [Complex64]) {
        let p = self.grid.len();
        values.par_chunks_mut(p).enumerate().for_each(|(m, s)| {
            let h = &self.ctf_disk[self.defocus_group[m]];
            for (v, &hk) in s.iter_mut().zip(h) {
                *v *= hk;
            }
        });
    }
}

fn check_images(images: &[f64], n: usize) -> Result<usize> {
    if n == 0 || images.len() % (n * n) != 0 {
        return invalid(format!("image buffer of {} values is not a stack of {n}×{n} images", images.len()));
    }
    Ok(images.len() / (n * n))
}

/// Centered 2D DFT of each real image restricted to the disk:
/// `b(k) = Σ_x I(x) exp(-2πi⟨x, k⟩/N)`. Images are x-fastest, `N²` each.
///
/// The result is Hermitian-symmetrized, which is exact for real input.
pub fn slices_from_images(images: &[f64], grid: &DiskGrid) -> Result<Vec<Complex64>> {
    let n = grid.n();
    let m = check_images(images, n)?;
    let p = grid.len();
    let neg = grid.negation_map();
    let mut out = vec![Complex64::new(0.0, 0.0); m * p];
    out.par_chunks_mut(p).zip(images.par_chunks(n * n)).for_each(|(slice, img)| {
        let mut buf: Vec<Complex64> = img.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2(&mut buf, n, Direction::Forward);
        let raw: Vec<Complex64> = grid
            .points()
            .iter()
            .map(|&[k1, k2]| {
                let q = k1.rem_euclid(n as i64) as usize + n * k2.rem_euclid(n as i64) as usize;
                buf[q] * centering_sign(k1 + k2)
            })
            .collect();
        for (k, &nk) in neg.iter().enumerate() {
            slice[k] = (raw[k] + raw[nk].conj()) * 0.5;
        }
    });
    Ok(out)
}

/// Inverse of [`slices_from_images`] with zeros off the disk; returns the real part.
pub fn images_from_slices(values: &[Complex64], grid: &DiskGrid) -> Result<Vec<f64>> {
    let n = grid.n();
    let p = grid.len();
    if values.len() % p != 0 {
        return invalid("slice data is not a whole number of slices");
    }
    let m = values.len() / p;
    let mut out = vec![0.0; m * n * n];
    let scale = 1.0 / (n * n) as f64;
    out.par_chunks_mut(n * n).zip(values.par_chunks(p)).for_each(|(img, slice)| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
        for (&[k1, k2], v) in grid.points().iter().zip(slice) {
            let q = k1.rem_euclid(n as i64) as usize + n * k2.rem_euclid(n as i64) as usize;
            buf[q] = v * centering_sign(k1 + k2);
        }
        fft2(&mut buf, n, Direction::Inverse);
        for (o, b) in img.iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    });
    Ok(out)
}
