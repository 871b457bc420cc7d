//! 3D non-uniform FFT between a centered Cartesian grid and arbitrary
//! frequencies in `[-π, π]³`, plus direct-summation references.
//!
//! Type 2 evaluates `f(p) = Σ_n V(n) exp(-i⟨n, p⟩)`; type 1 is its adjoint,
//! `g(n) = Σ_j c_j exp(+i⟨n, p_j⟩)`. Both use Kaiser-Bessel gridding on a
//! twice-oversampled grid with deconvolution on the Cartesian side, so the
//! two directions are exact transposes of each other.
//!
//! Type-1 spreading partitions the fine grid into z slabs; each slab is owned
//! by one task and visits its points in ascending order, so the accumulated
//! grid is bit-identical for any number of threads.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::fft::{fft3, Direction};
use crate::volume::centered;

pub const DEFAULT_ACCURACY: f64 = 1e-6;
pub const OVERSAMPLING: f64 = 2.0;

const MAX_SUPPORT: usize = 16;
const DIRECT_MAX_SIDE: usize = 32;
const DIRECT_MAX_POINTS: usize = 10_000;

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < 1e-17 * sum {
            return sum;
        }
        k += 1.0;
    }
}

/// Kaiser-Bessel window `I0(β·sqrt(1 - (2x/w)²))` on `|x| ≤ w/2` fine cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KaiserBessel {
    pub width: usize,
    pub beta: f64,
}

impl KaiserBessel {
    pub fn for_accuracy(eps: f64) -> Self {
        // guard against log10 landing a hair above an integer
        let digits = ((1.0 / eps).log10() - 1e-9).ceil().max(1.0) as usize;
        let width = digits + 2;
        let beta = PI * width as f64 * (1.0 - 1.0 / (2.0 * OVERSAMPLING));
        Self { width, beta }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let u = 2.0 * x / self.width as f64;
        let s = 1.0 - u * u;
        if s < 0.0 {
            0.0
        } else {
            bessel_i0(self.beta * s.sqrt())
        }
    }

    /// Continuous Fourier transform `∫ φ(x) exp(-iξx) dx`.
    pub fn fourier(&self, xi: f64) -> f64 {
        let w = self.width as f64;
        let a = 0.5 * xi * w;
        let d = self.beta * self.beta - a * a;
        if d > 1e-12 {
            let z = d.sqrt();
            w * z.sinh() / z
        } else if d < -1e-12 {
            let z = (-d).sqrt();
            w * z.sin() / z
        } else {
            w
        }
    }

    /// Fine-grid indices and weights covering `t`: all `j` with `|t - j| ≤ w/2`.
    #[inline]
    fn support(&self, t: f64, idx: &mut [i64; MAX_SUPPORT], wts: &mut [f64; MAX_SUPPORT]) -> usize {
        let half = 0.5 * self.width as f64;
        let lo = (t - half).ceil() as i64;
        let hi = (t + half).floor() as i64;
        let count = (hi - lo + 1) as usize;
        for i in 0..count {
            let j = lo + i as i64;
            idx[i] = j;
            wts[i] = self.eval(t - j as f64);
        }
        count
    }
}

/// Layout of the oversampled grid for one Cartesian output side.
struct FineLayout {
    side: usize,
    fine: usize,
    deconv: Vec<f64>,
}

impl FineLayout {
    fn new(side: usize, kernel: &KaiserBessel) -> Self {
        let fine = (OVERSAMPLING as usize) * side;
        let deconv =
            (0..side).map(|q| 1.0 / kernel.fourier(2.0 * PI * centered(q, side) as f64 / fine as f64)).collect();
        Self { side, fine, deconv }
    }

    #[inline]
    fn wrap(&self, j: i64) -> usize {
        j.rem_euclid(self.fine as i64) as usize
    }

    #[inline]
    fn scale(&self, p: f64) -> f64 {
        p * self.fine as f64 / (2.0 * PI)
    }
}

/// Precomputed configuration for transforms between a side-`grid_side`
/// centered grid and a fixed list of frequencies (radians).
#[derive(Debug, Clone)]
pub struct NufftPlan {
    grid_side: usize,
    points: Vec<[f64; 3]>,
    accuracy: f64,
    kernel: KaiserBessel,
}

impl NufftPlan {
    pub fn new(grid_side: usize, points: Vec<[f64; 3]>, accuracy: f64) -> Result<Self> {
        if grid_side < 2 || grid_side % 2 != 0 {
            return invalid(format!("NUFFT grid side must be even and >= 2, got {grid_side}"));
        }
        if !(1e-12..=1e-2).contains(&accuracy) {
            return invalid(format!("NUFFT accuracy must lie in [1e-12, 1e-2], got {accuracy}"));
        }
        if let Some(p) = points.iter().find(|p| p.iter().any(|c| !(c.abs() <= PI))) {
            return invalid(format!("NUFFT point {p:?} lies outside [-π, π]³"));
        }
        Ok(Self { grid_side, points, accuracy, kernel: KaiserBessel::for_accuracy(accuracy) })
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    pub fn oversampling(&self) -> f64 {
        OVERSAMPLING
    }

    pub fn kernel(&self) -> KaiserBessel {
        self.kernel
    }

    /// Grid → points.
    pub fn type2(&self, grid: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.grid_side;
        if grid.len() != n * n * n {
            return invalid(format!("type-2 input has {} values, expected {}", grid.len(), n * n * n));
        }
        let lay = FineLayout::new(n, &self.kernel);
        let nf = lay.fine;
        let mut fine = vec![Complex64::new(0.0, 0.0); nf * nf * nf];
        for z in 0..n {
            let fz = lay.wrap(centered(z, n));
            for y in 0..n {
                let fy = lay.wrap(centered(y, n));
                let dyz = lay.deconv[y] * lay.deconv[z];
                for x in 0..n {
                    let fx = lay.wrap(centered(x, n));
                    fine[fx + nf * (fy + nf * fz)] = grid[x + n * (y + n * z)] * (lay.deconv[x] * dyz);
                }
            }
        }
        fft3(&mut fine, nf, Direction::Forward);

        let kernel = self.kernel;
        let out = self
            .points
            .par_iter()
            .map(|p| {
                let mut ix = [[0i64; MAX_SUPPORT]; 3];
                let mut wt = [[0f64; MAX_SUPPORT]; 3];
                let mut cnt = [0usize; 3];
                for d in 0..3 {
                    cnt[d] = kernel.support(lay.scale(p[d]), &mut ix[d], &mut wt[d]);
                }
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..cnt[2] {
                    let oz = nf * nf * lay.wrap(ix[2][c]);
                    let mut acc_y = Complex64::new(0.0, 0.0);
                    for b in 0..cnt[1] {
                        let oy = oz + nf * lay.wrap(ix[1][b]);
                        let mut acc_x = Complex64::new(0.0, 0.0);
                        for a in 0..cnt[0] {
                            acc_x += fine[oy + lay.wrap(ix[0][a])] * wt[0][a];
                        }
                        acc_y += acc_x * wt[1][b];
                    }
                    acc += acc_y * wt[2][c];
                }
                acc
            })
            .collect();
        Ok(out)
    }

    /// Points → grid of side `out_side` (the plan side or twice it).
    pub fn type1(&self, values: &[Complex64], out_side: usize) -> Result<Vec<Complex64>> {
        if values.len() != self.points.len() {
            return invalid(format!("type-1 input has {} values for {} points", values.len(), self.points.len()));
        }
        if out_side != self.grid_side && out_side != 2 * self.grid_side {
            return invalid(format!(
                "type-1 output side {out_side} must be {} or {}",
                self.grid_side,
                2 * self.grid_side
            ));
        }
        let lay = FineLayout::new(out_side, &self.kernel);
        let nf = lay.fine;
        let plane = nf * nf;
        let slab = self.kernel.width.max(2);
        let nblocks = nf.div_ceil(slab);
        let kernel = self.kernel;

        // which slabs each point touches, in ascending point order
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); nblocks];
        let mut idx = [0i64; MAX_SUPPORT];
        let mut wts = [0f64; MAX_SUPPORT];
        for (j, p) in self.points.iter().enumerate() {
            let cnt = kernel.support(lay.scale(p[2]), &mut idx, &mut wts);
            let mut last = usize::MAX;
            let mut seen = [usize::MAX; MAX_SUPPORT];
            let mut nseen = 0;
            for &z in &idx[..cnt] {
                let b = lay.wrap(z) / slab;
                if b != last && !seen[..nseen].contains(&b) {
                    seen[nseen] = b;
                    nseen += 1;
                    members[b].push(j as u32);
                }
                last = b;
            }
        }

        let mut fine = vec![Complex64::new(0.0, 0.0); nf * plane];
        fine.par_chunks_mut(slab * plane).zip(members.par_iter()).enumerate().for_each(|(b, (chunk, list))| {
            let z0 = b * slab;
            let z1 = z0 + chunk.len() / plane;
            let mut ix = [[0i64; MAX_SUPPORT]; 3];
            let mut wt = [[0f64; MAX_SUPPORT]; 3];
            let mut cnt = [0usize; 3];
            let mut wx = [0usize; MAX_SUPPORT];
            for &j in list {
                let p = &self.points[j as usize];
                for d in 0..3 {
                    cnt[d] = kernel.support(lay.scale(p[d]), &mut ix[d], &mut wt[d]);
                }
                for a in 0..cnt[0] {
                    wx[a] = lay.wrap(ix[0][a]);
                }
                let v = values[j as usize];
                for c in 0..cnt[2] {
                    let z = lay.wrap(ix[2][c]);
                    if z < z0 || z >= z1 {
                        continue;
                    }
                    let vz = v * wt[2][c];
                    let oz = (z - z0) * plane;
                    for b2 in 0..cnt[1] {
                        let vy = vz * wt[1][b2];
                        let oy = oz + nf * lay.wrap(ix[1][b2]);
                        for a in 0..cnt[0] {
                            chunk[oy + wx[a]] += vy * wt[0][a];
                        }
                    }
                }
            }
        });
        fft3(&mut fine, nf, Direction::Inverse);

        let n = lay.side;
        let mut out = vec![Complex64::new(0.0, 0.0); n * n * n];
        out.par_chunks_mut(n * n).enumerate().for_each(|(z, slice)| {
            let fz = lay.wrap(centered(z, n));
            for y in 0..n {
                let fy = lay.wrap(centered(y, n));
                let dyz = lay.deconv[y] * lay.deconv[z];
                for x in 0..n {
                    let fx = lay.wrap(centered(x, n));
                    slice[x + n * y] = fine[fx + nf * (fy + nf * fz)] * (lay.deconv[x] * dyz);
                }
            }
        });
        Ok(out)
    }
}

pub fn nufft_type2(plan: &NufftPlan, grid_values: &[Complex64]) -> Result<Vec<Complex64>> {
    plan.type2(grid_values)
}

pub fn nufft_type1(plan: &NufftPlan, point_values: &[Complex64], out_side: usize) -> Result<Vec<Complex64>> {
    plan.type1(point_values, out_side)
}

fn direct_guard(side: usize, npoints: usize) -> Result<()> {
    if side > DIRECT_MAX_SIDE || npoints > DIRECT_MAX_POINTS {
        return invalid(format!(
            "direct DFT limited to side <= {DIRECT_MAX_SIDE} and <= {DIRECT_MAX_POINTS} points (got {side}, {npoints})"
        ));
    }
    Ok(())
}

fn axis_phases(p: &[f64; 3], side: usize, sign: f64) -> [Vec<Complex64>; 3] {
    std::array::from_fn(|d| {
        (0..side).map(|q| Complex64::from_polar(1.0, sign * centered(q, side) as f64 * p[d])).collect()
    })
}

/// `Σ_n V(n) exp(-i⟨n, p⟩)` by direct summation.
pub fn dft_direct_type2(side: usize, grid: &[Complex64], points: &[[f64; 3]]) -> Result<Vec<Complex64>> {
    direct_guard(side, points.len())?;
    if grid.len() != side * side * side {
        return invalid("direct type-2 grid size mismatch");
    }
    Ok(points
        .par_iter()
        .map(|p| {
            let [ex, ey, ez] = axis_phases(p, side, -1.0);
            let mut acc = Complex64::new(0.0, 0.0);
            for z in 0..side {
                for y in 0..side {
                    let eyz = ey[y] * ez[z];
                    let row = &grid[side * (y + side * z)..side * (y + 1 + side * z)];
                    let s: Complex64 = row.iter().zip(&ex).map(|(v, e)| v * e).sum();
                    acc += s * eyz;
                }
            }
            acc
        })
        .collect())
}

/// `Σ_j c_j exp(+i⟨n, p_j⟩)` on a centered `side`³ grid by direct summation.
pub fn dft_direct_type1(side: usize, values: &[Complex64], points: &[[f64; 3]]) -> Result<Vec<Complex64>> {
    direct_guard(side, points.len())?;
    if values.len() != points.len() {
        return invalid("direct type-1 value count mismatch");
    }
    let phases: Vec<[Vec<Complex64>; 3]> = points.iter().map(|p| axis_phases(p, side, 1.0)).collect();
    let mut out = vec![Complex64::new(0.0, 0.0); side * side * side];
    out.par_chunks_mut(side * side).enumerate().for_each(|(z, slice)| {
        for (ph, c) in phases.iter().zip(values) {
            let cz = c * ph[2][z];
            for y in 0..side {
                let cyz = cz * ph[1][y];
                for x in 0..side {
                    slice[x + side * y] += cyz * ph[0][x];
                }
            }
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{dot_c, norm_c};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_grid(rng: &mut ChaCha8Rng, len: usize) -> Vec<Complex64> {
        (0..len).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn rand_points(rng: &mut ChaCha8Rng, m: usize) -> Vec<[f64; 3]> {
        (0..m).map(|_| std::array::from_fn(|_| rng.random_range(-PI..=PI))).collect()
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let d: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm_c(&d) / norm_c(b)
    }

    #[test]
    fn bessel_reference_values() {
        // I0(1), I0(5), I0(20) from tables
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-16);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-15);
        assert!((bessel_i0(5.0) / 27.239_871_823_604_44 - 1.0).abs() < 1e-14);
        assert!((bessel_i0(20.0) / 4.355_828_255_955_353e7 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn kernel_fourier_matches_quadrature() {
        let k = KaiserBessel::for_accuracy(1e-6);
        assert_eq!(k.width, 8);
        let steps = 20_000;
        let h = k.width as f64 / steps as f64;
        for xi in [0.0, 0.4, 1.3, PI / 2.0] {
            // composite Simpson on [-w/2, w/2]
            let mut s = 0.0;
            for i in 0..=steps {
                let x = -0.5 * k.width as f64 + i as f64 * h;
                let c = if i == 0 || i == steps {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                s += c * k.eval(x) * (xi * x).cos();
            }
            s *= h / 3.0;
            assert!((s / k.fourier(xi) - 1.0).abs() < 1e-9, "xi={xi}");
        }
    }

    #[test]
    fn width_tracks_accuracy() {
        assert_eq!(KaiserBessel::for_accuracy(1e-4).width, 6);
        assert_eq!(KaiserBessel::for_accuracy(1e-8).width, 10);
        assert_eq!(KaiserBessel::for_accuracy(1e-12).width, 14);
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(NufftPlan::new(8, vec![[3.2, 0.0, 0.0]], 1e-6).is_err());
        assert!(NufftPlan::new(8, vec![[0.0; 3]], 1e-1).is_err());
        assert!(NufftPlan::new(7, vec![[0.0; 3]], 1e-6).is_err());
        assert!(NufftPlan::new(8, vec![[PI, -PI, 0.0]], 1e-6).is_ok());
    }

    #[test]
    fn zero_and_impulse() {
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = rand_points(&mut rng, 50);
        let plan = NufftPlan::new(n, pts, 1e-6).unwrap();
        let zero = vec![Complex64::new(0.0, 0.0); n * n * n];
        assert!(plan.type2(&zero).unwrap().iter().all(|v| v.norm() == 0.0));
        assert!(plan.type1(&vec![Complex64::new(0.0, 0.0); 50], n).unwrap().iter().all(|v| v.norm() == 0.0));

        let mut imp = zero.clone();
        imp[crate::volume::offset([0, 0, 0], n)] = Complex64::new(1.0, 0.0);
        for v in plan.type2(&imp).unwrap() {
            assert!((v - 1.0).norm() < 1e-6);
        }
    }

    #[test]
    fn single_point_at_origin_gives_constant() {
        for side in [8, 16] {
            let plan = NufftPlan::new(8, vec![[0.0; 3]], 1e-6).unwrap();
            let g = plan.type1(&[Complex64::new(1.0, 0.0)], side).unwrap();
            assert_eq!(g.len(), side * side * side);
            let ones = vec![Complex64::new(1.0, 0.0); g.len()];
            let err = rel_err(&g, &ones);
            assert!(err < 1e-6, "side {side}: {err}");
        }
    }

    #[test]
    fn matches_direct_sums() {
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grid = rand_grid(&mut rng, n * n * n);
        let pts = rand_points(&mut rng, 200);
        let vals = rand_grid(&mut rng, 200);
        let plan = NufftPlan::new(n, pts.clone(), 1e-6).unwrap();
        let e2 = rel_err(&plan.type2(&grid).unwrap(), &dft_direct_type2(n, &grid, &pts).unwrap());
        assert!(e2 < 1e-6, "type2 err {e2}");
        for side in [n, 2 * n] {
            let e1 = rel_err(&plan.type1(&vals, side).unwrap(), &dft_direct_type1(side, &vals, &pts).unwrap());
            assert!(e1 < 1e-6, "type1 side {side} err {e1}");
        }
    }

    #[test]
    fn accuracy_is_monotone() {
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = rand_grid(&mut rng, n * n * n);
        let pts = rand_points(&mut rng, 300);
        let exact = dft_direct_type2(n, &grid, &pts).unwrap();
        let coarse = rel_err(&NufftPlan::new(n, pts.clone(), 1e-4).unwrap().type2(&grid).unwrap(), &exact);
        let fine = rel_err(&NufftPlan::new(n, pts.clone(), 1e-8).unwrap().type2(&grid).unwrap(), &exact);
        assert!(fine <= coarse);
        assert!(coarse < 1e-4 && fine < 1e-8, "{coarse} {fine}");
    }

    #[test]
    fn nufft_pair_is_adjoint() {
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = rand_points(&mut rng, 150);
        let plan = NufftPlan::new(n, pts, 1e-6).unwrap();
        for _ in 0..5 {
            let v = rand_grid(&mut rng, n * n * n);
            let g = rand_grid(&mut rng, 150);
            let lhs = dot_c(&plan.type2(&v).unwrap(), &g);
            let rhs = dot_c(&v, &plan.type1(&g, n).unwrap());
            assert!((lhs - rhs).norm() <= 10.0 * 1e-6 * norm_c(&v) * norm_c(&g));
        }
    }

    #[test]
    fn linearity() {
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = rand_points(&mut rng, 100);
        let plan = NufftPlan::new(n, pts, 1e-6).unwrap();
        let v = rand_grid(&mut rng, n * n * n);
        let w = rand_grid(&mut rng, n * n * n);
        let alpha = Complex64::new(0.3, -1.7);
        let comb: Vec<Complex64> = v.iter().zip(&w).map(|(a, b)| alpha * a + b).collect();
        let lhs = plan.type2(&comb).unwrap();
        let tv = plan.type2(&v).unwrap();
        let tw = plan.type2(&w).unwrap();
        let rhs: Vec<Complex64> = tv.iter().zip(&tw).map(|(a, b)| alpha * a + b).collect();
        assert!(rel_err(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn circular_shift_is_phase() {
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = rand_grid(&mut rng, n * n * n);
        let s = [2i64, -1, 3];
        let mut shifted = vec![Complex64::new(0.0, 0.0); n * n * n];
        for off in 0..n * n * n {
            let t = crate::volume::triple(off, n);
            let moved: [i64; 3] = std::array::from_fn(|d| {
                let h = n as i64 / 2;
                (t[d] + s[d] + h).rem_euclid(n as i64) - h
            });
            shifted[crate::volume::offset(moved, n)] = grid[off];
        }
        let pts: Vec<[f64; 3]> =
            (0..40).map(|_| std::array::from_fn(|_| 2.0 * PI * (rng.random_range(-3..=3) as f64) / n as f64)).collect();
        let plan = NufftPlan::new(n, pts.clone(), 1e-6).unwrap();
        let a = plan.type2(&grid).unwrap();
        let b = plan.type2(&shifted).unwrap();
        for ((p, va), vb) in pts.iter().zip(&a).zip(&b) {
            let ph = Complex64::from_polar(1.0, -(s[0] as f64 * p[0] + s[1] as f64 * p[1] + s[2] as f64 * p[2]));
            assert!((vb - va * ph).norm() <= 1e-6 * norm_c(&a));
        }
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts = rand_points(&mut rng, 500);
        let vals = rand_grid(&mut rng, 500);
        let plan = NufftPlan::new(n, pts, 1e-6).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| plan.type1(&vals, 2 * n).unwrap());
        let b = four.install(|| plan.type1(&vals, 2 * n).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn direct_grid_aligned_point_is_plain_dft() {
        let n = 4;
        let grid: Vec<Complex64> = (0..64).map(|i| Complex64::new(i as f64, 0.5 * i as f64)).collect();
        let k = [1i64, -1, 0];
        let p = [2.0 * PI * k[0] as f64 / 4.0, 2.0 * PI * k[1] as f64 / 4.0, 0.0];
        let got = dft_direct_type2(n, &grid, &[p]).unwrap()[0];
        let mut want = Complex64::new(0.0, 0.0);
        for off in 0..64 {
            let t = crate::volume::triple(off, n);
            let ph = -2.0 * PI * (t[0] * k[0] + t[1] * k[1] + t[2] * k[2]) as f64 / 4.0;
            want += grid[off] * Complex64::from_polar(1.0, ph);
        }
        assert!((got - want).norm() < 1e-12);
    }

    #[test]
    fn direct_sums_are_transposes() {
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = rand_points(&mut rng, 30);
        let v = rand_grid(&mut rng, n * n * n);
        let g = rand_grid(&mut rng, 30);
        let lhs = dot_c(&dft_direct_type2(n, &v, &pts).unwrap(), &g);
        let rhs = dot_c(&v, &dft_direct_type1(n, &g, &pts).unwrap());
        assert!((lhs - rhs).norm() <= 1e-12 * norm_c(&v) * norm_c(&g));
    }

    #[test]
    fn direct_size_guard() {
        assert!(dft_direct_type2(34, &vec![Complex64::new(0.0, 0.0); 34 * 34 * 34], &[[0.0; 3]]).is_err());
        assert!(dft_direct_type1(4, &vec![Complex64::new(0.0, 0.0); 10_001], &vec![[0.0; 3]; 10_001]).is_err());
    }

    // Frozen reference: n=4, V[idx] = sin(1.3 idx) + i cos(0.7 idx) over storage
    // index idx, ten deterministic points; values from an independent evaluation.
    #[test]
    fn direct_regression_values() {
        let n = 4;
        let v: Vec<Complex64> =
            (0..64).map(|i| Complex64::new((1.3 * i as f64).sin(), (0.7 * i as f64).cos())).collect();
        let pts: Vec<[f64; 3]> = (0..10)
            .map(|j| {
                let j = j as f64;
                [PI * (0.9 * j + 0.1).sin(), PI * (1.7 * j + 0.3).cos() * 0.9, PI * (2.3 * j + 0.7).sin() * 0.8]
            })
            .collect();
        let want = [
            Complex64::new(-11.148696225415208, -10.283545432647156),
            Complex64::new(0.6480868629521053, -0.5610642845434144),
            Complex64::new(-3.226349987627994, -3.3665340757140245),
            Complex64::new(2.0788376661177486, 5.2627926841713055),
            Complex64::new(-4.090671314463647, -5.11178702003993),
            Complex64::new(0.19036402104240047, -0.29384976737154644),
            Complex64::new(3.028865814818804, 5.126991465972535),
            Complex64::new(6.443976688088768, -13.127339564671395),
            Complex64::new(-1.6659960071773259, -0.5396623746515401),
            Complex64::new(3.8195841605888265, -4.664606991887568),
        ];
        let got = dft_direct_type2(n, &v, &pts).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).norm() < 1e-12, "{g} vs {w}");
        }
    }
}
