//! Fourier shell correlation, optionally restricted by a missing-cone mask.

use std::path::Path;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::fft::centered_dft3;
use crate::io::atomic_write;
use crate::volume::{triple, Volume};

/// Offset of the shell boundaries.
pub const SHELL_EPS: f64 = 1e-4;

/// Shell `i ≥ 1` holding radius `r`, i.e. `0.5 + (i−1) + ε ≤ r < 0.5 + i + ε`.
pub fn shell_of(r: f64) -> Option<usize> {
    let t = r - 0.5 - SHELL_EPS;
    if t < 0.0 {
        None
    } else {
        Some(t.floor() as usize + 1)
    }
}

/// Voxels of the centered frequency grid inside a double cone about the z axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeMask {
    n: usize,
    half_angle_deg: f64,
    inside: Vec<bool>,
}

impl ConeMask {
    /// Cone of the given half-angle; the origin is never inside.
    pub fn new(n: usize, half_angle_deg: f64) -> Result<Self> {
        if !(0.0..=90.0).contains(&half_angle_deg) {
            return invalid(format!("cone half-angle must lie in [0, 90], got {half_angle_deg}"));
        }
        let c = half_angle_deg.to_radians().cos();
        let inside = (0..n * n * n)
            .map(|off| {
                let j = triple(off, n);
                let r = ((j[0] * j[0] + j[1] * j[1] + j[2] * j[2]) as f64).sqrt();
                half_angle_deg > 0.0 && r > 0.0 && (j[2] as f64).abs() > r * c
            })
            .collect();
        Ok(Self { n, half_angle_deg, inside })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_angle_deg(&self) -> f64 {
        self.half_angle_deg
    }

    #[inline]
    pub fn contains(&self, offset: usize) -> bool {
        self.inside[offset]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }
}

/// The cone left unsampled by a conical tilt series: half-angle `90° − tilt`.
pub fn missing_cone_mask(n: usize, tilt_deg: f64) -> Result<ConeMask> {
    if !(tilt_deg > 0.0 && tilt_deg < 90.0) {
        return invalid(format!("tilt must lie in (0, 90) degrees, got {tilt_deg}"));
    }
    ConeMask::new(n, 90.0 - tilt_deg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Exclude,
    Within,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FscShell {
    pub index: usize,
    /// `i / (N · pixel_size)` in 1/Å.
    pub frequency: f64,
    /// `None` when the shell has no voxels or no energy.
    pub fsc: Option<f64>,
    pub voxels: usize,
    pub numerator: f64,
    pub energy_a: f64,
    pub energy_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FscCurve {
    pub shells: Vec<FscShell>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    num: Complex64,
    ea: f64,
    eb: f64,
    voxels: usize,
}

impl Acc {
    fn add(&mut self, a: Complex64, b: Complex64) {
        self.num += a * b.conj();
        self.ea += a.norm_sqr();
        self.eb += b.norm_sqr();
        self.voxels += 1;
    }

    fn merge(&self, other: &Acc) -> Acc {
        Acc {
            num: self.num + other.num,
            ea: self.ea + other.ea,
            eb: self.eb + other.eb,
            voxels: self.voxels + other.voxels,
        }
    }
}

impl FscCurve {
    fn from_accs(accs: &[Acc], n: usize, pixel_size: f64) -> Self {
        let shells = accs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, a)| {
                let denom = (a.ea * a.eb).sqrt();
                debug_assert!(a.num.im.abs() <= 1e-10 * denom.max(f64::MIN_POSITIVE) || denom == 0.0);
                let fsc = (a.voxels > 0 && denom > 0.0).then(|| (a.num.re / denom).clamp(-1.0, 1.0));
                FscShell {
                    index: i,
                    frequency: i as f64 / (n as f64 * pixel_size),
                    fsc,
                    voxels: a.voxels,
                    numerator: a.num.re,
                    energy_a: a.ea,
                    energy_b: a.eb,
                }
            })
            .collect();
        Self { shells }
    }

    /// Smallest correlation over shells `1..=max_index`; `None` if any of them is absent.
    pub fn min_up_to(&self, max_index: usize) -> Option<f64> {
        self.shells
            .iter()
            .filter(|s| s.index <= max_index)
            .map(|s| s.fsc)
            .try_fold(f64::INFINITY, |m, v| v.map(|v| m.min(v)))
    }

    /// Columns: `shell_index,spatial_freq_inv_angstrom,fsc,voxel_count`, then the
    /// per-shell numerator and the two energies.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("shell_index,spatial_freq_inv_angstrom,fsc,voxel_count,numerator,energy_a,energy_b\n");
        for sh in &self.shells {
            let fsc = sh.fsc.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                sh.index, sh.frequency, fsc, sh.voxels, sh.numerator, sh.energy_a, sh.energy_b
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_csv().as_bytes())
    }
}

fn check_pair(v1: &Volume, v2: &Volume) -> Result<()> {
    if v1.n() != v2.n() {
        return invalid(format!("volume sides differ: {} vs {}", v1.n(), v2.n()));
    }
    if v1.pixel_size() != v2.pixel_size() {
        return invalid(format!("pixel sizes differ: {} vs {}", v1.pixel_size(), v2.pixel_size()));
    }
    Ok(())
}

/// Per-shell sums split by the mask: `(outside, inside)`.
fn shell_sums(v1: &Volume, v2: &Volume, mask: Option<&ConeMask>) -> Result<(Vec<Acc>, Vec<Acc>)> {
    check_pair(v1, v2)?;
    let n = v1.n();
    if let Some(m) = mask {
        if m.n() != n {
            return invalid(format!("mask side {} does not match volume side {n}", m.n()));
        }
    }
    let f1 = centered_dft3(v1.data(), n);
    let f2 = centered_dft3(v2.data(), n);
    let nshell = n / 2;
    let mut out = vec![Acc::default(); nshell];
    let mut ins = vec![Acc::default(); nshell];
    for (off, (a, b)) in f1.iter().zip(&f2).enumerate() {
        let j = triple(off, n);
        let r = ((j[0] * j[0] + j[1] * j[1] + j[2] * j[2]) as f64).sqrt();
        let Some(i) = shell_of(r).filter(|&i| i < nshell) else { continue };
        if mask.is_some_and(|m| m.contains(off)) {
            ins[i].add(*a, *b);
        } else {
            out[i].add(*a, *b);
        }
    }
    Ok((out, ins))
}

/// FSC over shells `1 .. N/2 − 1`, optionally keeping only voxels outside
/// (`Exclude`) or inside (`Within`) the mask.
pub fn fsc(v1: &Volume, v2: &Volume, mask: Option<&ConeMask>, mode: MaskMode) -> Result<FscCurve> {
    let (out, ins) = shell_sums(v1, v2, mask)?;
    let accs = match (mask, mode) {
        (None, _) | (_, MaskMode::Exclude) => out,
        (_, MaskMode::Within) => ins,
    };
    Ok(FscCurve::from_accs(&accs, v1.n(), v1.pixel_size()))
}

/// Unmasked, excluded and within curves from one pass. The unmasked sums are
/// the sum of the other two, so the numerators partition exactly.
pub struct PartitionedFsc {
    pub all: FscCurve,
    pub exclude: FscCurve,
    pub within: FscCurve,
}

pub fn fsc_partitioned(v1: &Volume, v2: &Volume, mask: &ConeMask) -> Result<PartitionedFsc> {
    let (out, ins) = shell_sums(v1, v2, Some(mask))?;
    let all: Vec<Acc> = out.iter().zip(&ins).map(|(a, b)| a.merge(b)).collect();
    let (n, px) = (v1.n(), v1.pixel_size());
    Ok(PartitionedFsc {
        all: FscCurve::from_accs(&all, n, px),
        exclude: FscCurve::from_accs(&out, n, px),
        within: FscCurve::from_accs(&ins, n, px),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::BlobPhantom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_volume(seed: u64, n: usize) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::from_data(n, 2.0, (0..n * n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn scaled(v: &Volume, s: f64) -> Volume {
        Volume::from_data(v.n(), v.pixel_size(), v.data().iter().map(|x| x * s).collect()).unwrap()
    }

    #[test]
    fn self_correlation_is_one() {
        let v = random_volume(1, 16);
        let c = fsc(&v, &v, None, MaskMode::Exclude).unwrap();
        assert_eq!(c.shells.len(), 7);
        for s in &c.shells {
            assert!((s.fsc.unwrap() - 1.0).abs() < 1e-12);
        }
        assert!((c.shells[2].frequency - 3.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn scale_and_sign() {
        let v = random_volume(2, 8);
        for s in fsc(&v, &scaled(&v, 2.0), None, MaskMode::Exclude).unwrap().shells {
            assert!((s.fsc.unwrap() - 1.0).abs() < 1e-12);
        }
        for s in fsc(&v, &scaled(&v, -1.0), None, MaskMode::Exclude).unwrap().shells {
            assert!((s.fsc.unwrap() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_in_arguments() {
        let (a, b) = (random_volume(3, 16), random_volume(4, 16));
        let x = fsc(&a, &b, None, MaskMode::Exclude).unwrap();
        let y = fsc(&b, &a, None, MaskMode::Exclude).unwrap();
        for (s, t) in x.shells.iter().zip(&y.shells) {
            assert!((s.fsc.unwrap() - t.fsc.unwrap()).abs() < 1e-12);
            assert!(s.fsc.unwrap().abs() <= 1.0);
        }
    }

    #[test]
    fn matches_brute_force_shell_sums() {
        let n = 8;
        let (a, b) = (random_volume(5, n), random_volume(6, n));
        let mask = missing_cone_mask(n, 60.0).unwrap();
        let got = fsc(&a, &b, Some(&mask), MaskMode::Exclude).unwrap();
        let h = (n / 2) as i64;
        for sh in &got.shells {
            let i = sh.index as f64;
            let (mut num, mut ea, mut eb, mut cnt) = (Complex64::new(0.0, 0.0), 0.0, 0.0, 0);
            for j3 in -h..h {
                for j2 in -h..h {
                    for j1 in -h..h {
                        let r = ((j1 * j1 + j2 * j2 + j3 * j3) as f64).sqrt();
                        let in_shell = 0.5 + (i - 1.0) + 1e-4 <= r && r < 0.5 + i + 1e-4;
                        let in_cone = r > 0.0 && (j3 as f64).abs() > r * 30f64.to_radians().cos();
                        if !in_shell || in_cone {
                            continue;
                        }
                        let (mut fa, mut fb) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
                        for (off, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
                            let t = triple(off, n);
                            let ph = -2.0 * PI * (t[0] * j1 + t[1] * j2 + t[2] * j3) as f64 / n as f64;
                            let e = Complex64::from_polar(1.0, ph);
                            fa += x * e;
                            fb += y * e;
                        }
                        num += fa * fb.conj();
                        ea += fa.norm_sqr();
                        eb += fb.norm_sqr();
                        cnt += 1;
                    }
                }
            }
            assert_eq!(sh.voxels, cnt);
            assert!((sh.fsc.unwrap() - num.re / (ea * eb).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn partition_identity_is_exact() {
        let (a, b) = (random_volume(7, 16), random_volume(8, 16));
        let mask = missing_cone_mask(16, 60.0).unwrap();
        let p = fsc_partitioned(&a, &b, &mask).unwrap();
        for ((all, ex), wi) in p.all.shells.iter().zip(&p.exclude.shells).zip(&p.within.shells) {
            assert_eq!(ex.numerator + wi.numerator, all.numerator);
            assert_eq!(ex.voxels + wi.voxels, all.voxels);
        }
        let plain = fsc(&a, &b, None, MaskMode::Exclude).unwrap();
        for (x, y) in plain.shells.iter().zip(&p.all.shells) {
            assert!((x.fsc.unwrap() - y.fsc.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn cone_geometry() {
        let m = missing_cone_mask(32, 60.0).unwrap();
        let n = 32;
        assert!(m.contains(crate::volume::offset([0, 0, 5], n)));
        assert!(m.contains(crate::volume::offset([0, 0, -5], n)));
        assert!(!m.contains(crate::volume::offset([0, 0, 0], n)));
        assert!(!m.contains(crate::volume::offset([3, -4, 0], n)));
        for off in 0..n * n * n {
            let j = triple(off, n);
            if j.iter().all(|&c| c > -16) {
                assert_eq!(m.contains(off), m.contains(crate::volume::offset([-j[0], -j[1], -j[2]], n)));
            }
        }
        assert_eq!(ConeMask::new(n, 0.0).unwrap().count(), 0);
    }

    #[test]
    fn cone_fraction_of_ball() {
        let n = 32;
        let m = missing_cone_mask(n, 60.0).unwrap();
        let (mut ball, mut cone) = (0usize, 0usize);
        for off in 0..n * n * n {
            let j = triple(off, n);
            let r2 = j[0] * j[0] + j[1] * j[1] + j[2] * j[2];
            if r2 > 0 && r2 <= 15 * 15 {
                ball += 1;
                cone += m.contains(off) as usize;
            }
        }
        let frac = cone as f64 / ball as f64;
        let want = 1.0 - 30f64.to_radians().cos();
        assert!((frac - want).abs() <= 0.2 * want, "{frac}");
    }

    #[test]
    fn absent_shells_are_none_and_blank_in_csv() {
        let v = random_volume(9, 16);
        let mask = ConeMask::new(16, 0.0).unwrap();
        let c = fsc(&v, &v, Some(&mask), MaskMode::Within).unwrap();
        assert_eq!(c.shells[0].voxels, 0);
        assert!(c.shells[0].fsc.is_none());
        let csv = c.to_csv();
        let first = csv.lines().nth(1).unwrap();
        assert_eq!(first.split(',').nth(2), Some(""));
        let zero = Volume::zeros(16, 2.0).unwrap();
        assert!(fsc(&v, &zero, None, MaskMode::Exclude).unwrap().shells.iter().all(|s| s.fsc.is_none()));
        assert_eq!(c.min_up_to(3), None);
    }

    #[test]
    fn mismatched_volumes_rejected() {
        let a = random_volume(10, 8);
        assert!(fsc(&a, &random_volume(10, 16), None, MaskMode::Exclude).is_err());
        let b = Volume::from_data(8, 1.0, a.data().to_vec()).unwrap();
        assert!(fsc(&a, &b, None, MaskMode::Exclude).is_err());
    }

    #[test]
    fn phantom_self_fsc_min() {
        let v = BlobPhantom::default_for(16).unwrap().rasterize(16, 3.36).unwrap();
        let c = fsc(&v, &v, None, MaskMode::Exclude).unwrap();
        assert_eq!(c.min_up_to(7), Some(1.0));
    }
}
