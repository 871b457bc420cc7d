//! Rotations, the truncated Fourier disk, and rotated slice points.

use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::volume::check_side;

const ORTHO_TOL: f64 = 1e-12;

/// Proper rotation matrix in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    m: [[f64; 3]; 3],
}

impl Rotation {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("rotation matrix has non-finite entries");
        }
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (rtr - want).abs() > ORTHO_TOL {
                    return invalid(format!("matrix is not orthogonal (RᵀR[{i}][{j}] = {rtr})"));
                }
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if (det - 1.0).abs() > ORTHO_TOL {
            return invalid(format!("rotation determinant is {det}, expected 1"));
        }
        Ok(Self { m })
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { m: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]] }
    }

    /// Intrinsic ZYZ Euler angles in degrees: `Rz(phi)·Ry(theta)·Rz(psi)`.
    pub fn from_euler_zyz_deg(phi: f64, theta: f64, psi: f64) -> Self {
        Self::about_z(phi.to_radians())
            .compose(&Self::about_y(theta.to_radians()))
            .compose(&Self::about_z(psi.to_radians()))
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &Self) -> Self {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Self { m }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    /// `Rᵀ·v`, i.e. `R⁻¹·v`.
    #[inline]
    pub fn apply_inverse(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        ]
    }

    /// Unit normal of the central slice imaged under this rotation (`Rᵀ·e_z`).
    pub fn slice_normal(&self) -> [f64; 3] {
        self.apply_inverse([0.0, 0.0, 1.0])
    }
}

/// Integer frequencies `k = (k1, k2)` with `‖k‖ ≤ N/2` inside the symmetric
/// index range `-(N/2 - 1) ..= N/2 - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiskGrid {
    n: usize,
    points: Vec<[i64; 2]>,
}

impl DiskGrid {
    pub fn new(n: usize) -> Result<Self> {
        check_side(n)?;
        let half = n as i64 / 2;
        let r2 = half * half;
        let mut points = Vec::new();
        // row-major, k2 fastest
        for k1 in -(half - 1)..half {
            for k2 in -(half - 1)..half {
                if k1 * k1 + k2 * k2 <= r2 {
                    points.push([k1, k2]);
                }
            }
        }
        Ok(Self { n, points })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn points(&self) -> &[[i64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Position of `k` in the ordering, if present.
    pub fn position(&self, k: [i64; 2]) -> Option<usize> {
        self.points.binary_search(&k).ok()
    }

    /// For every point, the position of its negation.
    pub fn negation_map(&self) -> Vec<usize> {
        self.points.iter().map(|&[a, b]| self.position([-a, -b]).expect("disk grid is closed under negation")).collect()
    }

    /// Slice-plane frequency in radians per grid step, `2πk/N`.
    #[inline]
    pub fn omega(&self, k: [i64; 2]) -> [f64; 2] {
        let s = 2.0 * PI / self.n as f64;
        [s * k[0] as f64, s * k[1] as f64]
    }
}

/// Alias matching the operation name used throughout the crate.
pub fn build_disk_grid(n: usize) -> Result<DiskGrid> {
    DiskGrid::new(n)
}

/// 3D frequencies `Rᵀ·(2πk1/N, 2πk2/N, 0)` for every disk point.
pub fn slice_points(rot: &Rotation, grid: &DiskGrid) -> Vec<[f64; 3]> {
    grid.points()
        .iter()
        .map(|&k| {
            let [w1, w2] = grid.omega(k);
            rot.apply_inverse([w1, w2, 0.0])
        })
        .collect()
}
