//! Gaussian-blob phantoms, conical tilt geometry and noisy synthetic datasets.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::ctf::{ctf_on_disk, CtfParams};
use crate::error::{invalid, Result};
use crate::geometry::{slice_points, DiskGrid, Rotation};
use crate::projector::{images_from_slices, slices_from_images, ProjectionOperator, SliceStack};
use crate::volume::{check_side, index_min, triple, Volume};

const STREAM_ROTATIONS: u64 = 1;
const STREAM_GROUPS: u64 = 2;
const STREAM_NOISE: u64 = 3 << 32;

/// NUFFT accuracy used when rendering clean data.
pub const RENDER_ACCURACY: f64 = 1e-10;
/// Images forward-projected per NUFFT pass while rendering.
const RENDER_CHUNK: usize = 512;

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    /// Centered grid coordinates.
    pub center: [f64; 3],
    pub sigma: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobPhantom {
    blobs: Vec<Blob>,
}

// Layout for a 32-voxel box; scaled for other sides.
const DEFAULT_BLOBS: [Blob; 6] = [
    Blob { center: [1.0, -0.5, 0.5], sigma: 4.0, weight: 1.0 },
    Blob { center: [-5.0, 3.0, 2.0], sigma: 2.5, weight: 0.8 },
    Blob { center: [6.0, 4.0, -3.0], sigma: 2.0, weight: 0.7 },
    Blob { center: [-3.0, -7.0, -4.0], sigma: 1.5, weight: 1.2 },
    Blob { center: [4.0, -5.0, 6.0], sigma: 3.0, weight: 0.6 },
    Blob { center: [-8.0, 1.0, -6.0], sigma: 1.8, weight: 0.9 },
];

impl BlobPhantom {
    pub fn new(blobs: Vec<Blob>) -> Result<Self> {
        if blobs.is_empty() {
            return invalid("phantom needs at least one blob");
        }
        for b in &blobs {
            let finite = b.center.iter().chain([&b.sigma, &b.weight]).all(|v| v.is_finite());
            if !finite || b.sigma <= 0.0 {
                return invalid(format!("invalid blob {b:?}"));
            }
        }
        Ok(Self { blobs })
    }

    /// Six asymmetric blobs, larger ones near the center, scaled to side `n`.
    /// Widths never drop below one voxel.
    pub fn default_for(n: usize) -> Result<Self> {
        check_side(n)?;
        let s = n as f64 / 32.0;
        let blobs = DEFAULT_BLOBS
            .iter()
            .map(|b| Blob { center: b.center.map(|c| c * s), sigma: (b.sigma * s).max(1.0), weight: b.weight })
            .collect();
        Self::new(blobs)
    }

    pub fn blobs(&self) -> &[Blob] {
        &self.blobs
    }

    /// `Σ_j w_j (2πσ_j²)^{3/2}`, the continuous integral.
    pub fn mass(&self) -> f64 {
        self.blobs.iter().map(|b| b.weight * (2.0 * PI * b.sigma * b.sigma).powf(1.5)).sum()
    }

    fn check_fits(&self, n: usize) -> Result<()> {
        let lo = index_min(n) as f64;
        let hi = lo + n as f64 - 1.0;
        match self.blobs.iter().find(|b| b.center.iter().any(|&c| c < lo || c > hi)) {
            Some(b) => invalid(format!("blob center {:?} lies outside a side-{n} volume", b.center)),
            None => Ok(()),
        }
    }

    /// `V(n) = Σ_j w_j exp(−‖n − c_j‖² / 2σ_j²)`.
    pub fn rasterize(&self, n: usize, pixel_size: f64) -> Result<Volume> {
        check_side(n)?;
        self.check_fits(n)?;
        let mut data = vec![0.0; n * n * n];
        data.par_chunks_mut(n * n).enumerate().for_each(|(z, plane)| {
            for (i, v) in plane.iter_mut().enumerate() {
                let t = triple(i + z * n * n, n);
                *v = self
                    .blobs
                    .iter()
                    .map(|b| {
                        let d2: f64 = (0..3).map(|k| (t[k] as f64 - b.center[k]).powi(2)).sum();
                        b.weight * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
                    })
                    .sum();
            }
        });
        Volume::from_data(n, pixel_size, data)
    }

    /// Closed-form slice values from the Gaussian sum formula, optionally
    /// multiplied by a CTF.
    pub fn analytic_slice(&self, rot: &Rotation, grid: &DiskGrid, ctf: Option<&CtfParams>) -> Vec<Complex64> {
        let h = ctf.map(|c| ctf_on_disk(c, grid));
        slice_points(rot, grid)
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let p2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
                let v: Complex64 = self
                    .blobs
                    .iter()
                    .map(|b| {
                        let amp =
                            b.weight * (2.0 * PI * b.sigma * b.sigma).powf(1.5) * (-b.sigma * b.sigma * p2 / 2.0).exp();
                        let phase = -(b.center[0] * p[0] + b.center[1] * p[1] + b.center[2] * p[2]);
                        Complex64::from_polar(amp, phase)
                    })
                    .sum();
                h.as_ref().map_or(v, |h| v * h[k])
            })
            .collect()
    }
}

/// `(0, tilt, ψ)` ZYZ Euler angles in degrees with ψ uniform on `[0, 360)`.
///
/// Slices are taken at `Rᵀ(ω, 0)`, so the first angle only spins a slice
/// within its own plane; the viewing azimuth is the third angle.
pub fn conical_tilt_angles(m: usize, tilt_deg: f64, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = stream(seed, STREAM_ROTATIONS);
    (0..m).map(|_| [0.0, tilt_deg, rng.random_range(0.0..360.0)]).collect()
}

pub fn conical_tilt_rotations(m: usize, tilt_deg: f64, seed: u64) -> Vec<Rotation> {
    conical_tilt_angles(m, tilt_deg, seed).iter().map(|a| Rotation::from_euler_zyz_deg(a[0], a[1], a[2])).collect()
}

/// Balanced group ids `0..groups`, shuffled.
pub fn assign_groups(m: usize, groups: usize, seed: u64) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..m).map(|i| i % groups.max(1)).collect();
    ids.shuffle(&mut stream(seed, STREAM_GROUPS));
    ids
}

/// Population variance over every pixel of every image.
pub fn pooled_variance(images: &[f64]) -> f64 {
    if images.is_empty() {
        return 0.0;
    }
    let len = images.len() as f64;
    let mean = images.iter().sum::<f64>() / len;
    images.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len
}

/// Add white Gaussian noise of variance `pooled_variance / snr`. Each image of
/// `image_len` pixels draws from its own stream, so the result does not depend
/// on scheduling.
pub fn add_noise(images: &[f64], image_len: usize, snr: f64, seed: u64) -> Result<Vec<f64>> {
    if !(snr > 0.0) {
        return invalid(format!("snr must be positive or infinite, got {snr}"));
    }
    if image_len == 0 || images.len() % image_len != 0 {
        return invalid("image buffer is not a whole number of images");
    }
    if snr.is_infinite() {
        return Ok(images.to_vec());
    }
    let sd = (pooled_variance(images) / snr).sqrt();
    let mut out = images.to_vec();
    out.par_chunks_mut(image_len).enumerate().for_each(|(i, img)| {
        let mut rng = stream(seed, STREAM_NOISE + i as u64);
        for v in img {
            let z: f64 = rng.sample(StandardNormal);
            *v += sd * z;
        }
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n: usize,
    pub m: usize,
    pub tilt_deg: f64,
    pub snr: f64,
    pub pixel_size: f64,
    pub defocus_groups: Vec<CtfParams>,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        check_side(self.n)?;
        if self.m == 0 {
            return invalid("dataset needs at least one image");
        }
        if !(self.tilt_deg > 0.0 && self.tilt_deg < 90.0) {
            return invalid(format!("tilt must lie in (0, 90) degrees, got {}", self.tilt_deg));
        }
        if !(self.snr > 0.0) {
            return invalid(format!("snr must be positive or infinite, got {}", self.snr));
        }
        if self.defocus_groups.is_empty() {
            return invalid("dataset needs at least one defocus group");
        }
        for c in &self.defocus_groups {
            c.validate()?;
            if c.pixel_size != self.pixel_size {
                return invalid(format!(
                    "CTF pixel size {} differs from dataset pixel size {}",
                    c.pixel_size, self.pixel_size
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub euler_zyz_deg: Vec<[f64; 3]>,
    pub rotations: Vec<Rotation>,
    pub defocus_group: Vec<usize>,
    /// `m` images of `n²` pixels, x fastest within an image.
    pub images: Vec<f64>,
    pub truth: Volume,
}

impl Dataset {
    /// Fourier slices of the images on the disk grid.
    pub fn slice_stack(&self) -> Result<SliceStack> {
        let grid = DiskGrid::new(self.spec.n)?;
        let values = slices_from_images(&self.images, &grid)?;
        Ok(SliceStack {
            grid,
            values,
            rotations: self.rotations.clone(),
            defocus_group: self.defocus_group.clone(),
            ctfs: self.spec.defocus_groups.clone(),
        })
    }
}

/// Render CTF-filtered projections of the rasterized phantom and add noise.
pub fn make_dataset(spec: &DatasetSpec, phantom: &BlobPhantom) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.n;
    let truth = phantom.rasterize(n, spec.pixel_size)?;
    let euler = conical_tilt_angles(spec.m, spec.tilt_deg, spec.seed);
    let rotations: Vec<Rotation> = euler.iter().map(|a| Rotation::from_euler_zyz_deg(a[0], a[1], a[2])).collect();
    let groups = assign_groups(spec.m, spec.defocus_groups.len(), spec.seed);
    let grid = DiskGrid::new(n)?;

    let mut clean = Vec::with_capacity(spec.m * n * n);
    for (rots, ids) in rotations.chunks(RENDER_CHUNK).zip(groups.chunks(RENDER_CHUNK)) {
        let op =
            ProjectionOperator::new(grid.clone(), rots.to_vec(), &spec.defocus_groups, ids.to_vec(), RENDER_ACCURACY)?;
        let slices = op.forward(&truth)?;
        clean.extend(images_from_slices(&slices, &grid)?);
    }
    let images = add_noise(&clean, n * n, spec.snr, spec.seed)?;
    Ok(Dataset { spec: spec.clone(), euler_zyz_deg: euler, rotations, defocus_group: groups, images, truth })
}
