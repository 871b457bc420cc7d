//! Radially symmetric contrast transfer function.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::DiskGrid;

/// Microscope parameters for one defocus group.
///
/// Units: defocus in μm, `cs` in mm, `lambda` in pm, `pixel_size` in Å.
/// Everything is converted to Å before evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtfParams {
    pub defocus: f64,
    pub cs: f64,
    pub lambda: f64,
    pub amplitude_contrast: f64,
    pub b_factor: f64,
    pub pixel_size: f64,
}

impl CtfParams {
    pub fn new(
        defocus: f64,
        cs: f64,
        lambda: f64,
        amplitude_contrast: f64,
        b_factor: f64,
        pixel_size: f64,
    ) -> Result<Self> {
        let p = Self { defocus, cs, lambda, amplitude_contrast, b_factor, pixel_size };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.defocus > 0.0
            && self.cs >= 0.0
            && self.lambda > 0.0
            && (0.0..1.0).contains(&self.amplitude_contrast)
            && self.b_factor > 0.0
            && self.pixel_size > 0.0
            && [self.defocus, self.cs, self.lambda, self.pixel_size].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            invalid(format!("invalid CTF parameters {self:?}"))
        }
    }

    /// The three defocus groups used for the reference experiments:
    /// 1.4, 1.75 and 2.0 μm with Cs 2.0 mm, λ 2.51 pm, A 0.07, B 100, 3.36 Å pixels.
    pub fn reference_groups() -> Vec<CtfParams> {
        [1.4, 1.75, 2.0]
            .iter()
            .map(|&d| CtfParams {
                defocus: d,
                cs: 2.0,
                lambda: 2.51,
                amplitude_contrast: 0.07,
                b_factor: 100.0,
                pixel_size: 3.36,
            })
            .collect()
    }

    /// Evaluate at spatial frequency `r` in 1/Å.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return invalid(format!("spatial frequency must be non-negative, got {r}"));
        }
        Ok(self.eval_unchecked(r))
    }

    #[inline]
    fn eval_unchecked(&self, r: f64) -> f64 {
        let defocus = self.defocus * 1e4;
        let cs = self.cs * 1e7;
        let lambda = self.lambda * 1e-2;
        let r2 = r * r;
        let phase = -PI * (defocus * r2 - cs * lambda.powi(3) * r2 * r2 / 2.0) - self.amplitude_contrast;
        let envelope = (-(r / (2.0 * self.b_factor)).powi(2)).exp();
        phase.sin() * envelope
    }
}

pub fn ctf_eval(params: &CtfParams, r: f64) -> Result<f64> {
    params.eval(r)
}

/// CTF sampled at every disk point, at `r = ‖k‖ / (N · pixel_size)`.
pub fn ctf_on_disk(params: &CtfParams, grid: &DiskGrid) -> Vec<f64> {
    let unit = 1.0 / (grid.n() as f64 * params.pixel_size);
    grid.points().iter().map(|&[a, b]| params.eval_unchecked(((a * a + b * b) as f64).sqrt() * unit)).collect()
}
