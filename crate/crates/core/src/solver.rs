//! Conjugate gradients on `A*A x = A*b` with the Toeplitz normal operator.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;

use crate::error::{invalid, FirmError, Result};
use crate::io::atomic_write;
use crate::projector::ProjectionOperator;
use crate::toeplitz::ToeplitzKernel;
use crate::volume::{dot_r, norm_c, ComplexGrid, Volume};

const RHS_IMAG_TOL: f64 = 1e-6;
const STALL_RUN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub max_iters: usize,
    /// Compute `‖b − A x‖` every this many iterations; 0 disables it.
    pub record_data_residual_every: usize,
    /// Stop after 3 consecutive relative objective decreases below this; 0 disables.
    pub objective_tolerance: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { max_iters: 30, record_data_residual_every: 0, objective_tolerance: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Dropping,
    Transition,
    Level,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Dropping => "dropping",
            Phase::Transition => "transition",
            Phase::Level => "level",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgIteration {
    pub iter: usize,
    /// `‖A*b − K x‖`, from the recursively updated residual.
    pub normal_residual: f64,
    /// `½⟨x, K x⟩ − ⟨x, A*b⟩`.
    pub objective: f64,
    pub data_residual: Option<f64>,
    pub phase: Option<Phase>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CgTrace {
    pub rhs_norm: f64,
    pub iterations: Vec<CgIteration>,
    pub stopped_early: bool,
}

impl CgTrace {
    pub fn normal_residuals(&self) -> Vec<f64> {
        self.iterations.iter().map(|it| it.normal_residual).collect()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.iterations.iter().map(|it| it.objective).collect()
    }

    /// CSV with columns `iter,normal_residual,objective,data_residual,phase`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,normal_residual,objective,data_residual,phase\n");
        for it in &self.iterations {
            let data = it.data_residual.map(|v| format!("{v:e}")).unwrap_or_default();
            let phase = it.phase.map(|p| p.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{:e},{:e},{},{}\n", it.iter, it.normal_residual, it.objective, data, phase));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_csv().as_bytes())
    }
}

/// Measured data `b` and the operator that produced it, for `‖b − A x‖`.
#[derive(Debug, Clone, Copy)]
pub struct DataResidual<'a> {
    pub operator: &'a ProjectionOperator,
    pub data: &'a [Complex64],
}

impl DataResidual<'_> {
    fn eval(&self, x: &[f64], n: usize) -> Result<f64> {
        let grid = ComplexGrid { n, data: x.iter().map(|&v| Complex64::new(v, 0.0)).collect() };
        let ax = self.operator.forward_grid(&grid)?;
        let diff: Vec<Complex64> = self.data.iter().zip(&ax).map(|(b, a)| b - a).collect();
        Ok(norm_c(&diff))
    }
}

fn failure<T>(iteration: usize, message: impl Into<String>) -> Result<T> {
    Err(FirmError::NumericalFailure { iteration, message: message.into() })
}

/// Plain CG from the zero volume on the real part of `rhs`.
pub fn cg_solve(
    kernel: &ToeplitzKernel,
    rhs: &ComplexGrid,
    opts: &CgOptions,
    data_residual: Option<DataResidual<'_>>,
) -> Result<(Volume, CgTrace)> {
    let n = kernel.n();
    if rhs.n != n || rhs.data.len() != n * n * n {
        return invalid(format!("right-hand side side {} does not match kernel side {n}", rhs.n));
    }
    if opts.max_iters == 0 {
        return invalid("max_iters must be at least 1");
    }
    if !(opts.objective_tolerance >= 0.0) {
        return invalid("objective tolerance must be non-negative");
    }
    let rhs_total = rhs.norm();
    if rhs.imag_norm() > RHS_IMAG_TOL * rhs_total {
        return invalid(format!(
            "right-hand side is not real: imaginary norm {:e} against {rhs_total:e}",
            rhs.imag_norm()
        ));
    }
    if let Some(d) = &data_residual {
        if d.operator.n() != n || d.data.len() != d.operator.m() * d.operator.grid().len() {
            return invalid("data residual operator or data does not match the kernel");
        }
    }

    let b = rhs.real_part();
    if b.iter().any(|v| !v.is_finite()) {
        return failure(0, "right-hand side is not finite");
    }
    let mut x = vec![0.0; b.len()];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = dot_r(&r, &r);
    let mut trace = CgTrace { rhs_norm: rr.sqrt(), ..Default::default() };
    if rr == 0.0 {
        return Ok((Volume::from_data(n, 1.0, x)?, trace));
    }

    let mut prev_objective = 0.0;
    let mut stalled = 0;
    for k in 1..=opts.max_iters {
        let start = Instant::now();
        let kp = kernel.apply_normal_real(&p)?;
        let pkp = dot_r(&p, &kp);
        if !pkp.is_finite() {
            return failure(k, format!("curvature ⟨p, Kp⟩ = {pkp}"));
        }
        if pkp <= 0.0 {
            // direction carries no curvature: nothing left to reduce
            log::debug!("CG stopped at iteration {k}: ⟨p, Kp⟩ = {pkp:e}");
            trace.stopped_early = true;
            break;
        }
        let alpha = rr / pkp;
        for ((xi, ri), (pi, kpi)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&kp)) {
            *xi += alpha * pi;
            *ri -= alpha * kpi;
        }
        let rr_new = dot_r(&r, &r);
        if !rr_new.is_finite() || !alpha.is_finite() {
            return failure(k, format!("residual became {rr_new}"));
        }
        let objective = -0.5 * (dot_r(&x, &b) + dot_r(&x, &r));
        let data = match (&data_residual, opts.record_data_residual_every) {
            (Some(d), every) if every > 0 && k % every == 0 => Some(d.eval(&x, n)?),
            _ => None,
        };
        trace.iterations.push(CgIteration {
            iter: k,
            normal_residual: rr_new.sqrt(),
            objective,
            data_residual: data,
            phase: None,
            seconds: start.elapsed().as_secs_f64(),
        });

        if opts.objective_tolerance > 0.0 {
            let decrease = (prev_objective - objective) / objective.abs().max(f64::MIN_POSITIVE);
            stalled = if decrease < opts.objective_tolerance { stalled + 1 } else { 0 };
            if stalled >= STALL_RUN {
                trace.stopped_early = true;
                break;
            }
        }
        prev_objective = objective;
        if rr_new == 0.0 {
            break;
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }

    let residuals = trace.normal_residuals();
    if residuals.len() >= 3 {
        let phases = classify_phases(&residuals)?;
        for (it, ph) in trace.iterations.iter_mut().zip(phases.labels) {
            it.phase = Some(ph);
        }
    }
    Ok((Volume::from_data(n, 1.0, x)?, trace))
}

/// Contiguous segments of a residual curve with their phase labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSegments {
    /// Exclusive end index of each segment; the last equals the curve length.
    pub breakpoints: Vec<usize>,
    pub slopes: Vec<f64>,
    pub labels: Vec<Phase>,
}

/// Least-squares line fits over index ranges via prefix sums.
struct LineFits {
    s1: Vec<f64>,
    sx: Vec<f64>,
    sy: Vec<f64>,
    sxx: Vec<f64>,
    sxy: Vec<f64>,
    syy: Vec<f64>,
}

impl LineFits {
    fn new(y: &[f64]) -> Self {
        let mut f =
            Self { s1: vec![0.0], sx: vec![0.0], sy: vec![0.0], sxx: vec![0.0], sxy: vec![0.0], syy: vec![0.0] };
        for (i, &v) in y.iter().enumerate() {
            let x = i as f64;
            f.s1.push(f.s1[i] + 1.0);
            f.sx.push(f.sx[i] + x);
            f.sy.push(f.sy[i] + v);
            f.sxx.push(f.sxx[i] + x * x);
            f.sxy.push(f.sxy[i] + x * v);
            f.syy.push(f.syy[i] + v * v);
        }
        f
    }

    /// `(slope, residual sum of squares)` of the fit over `a..b`.
    fn fit(&self, a: usize, b: usize) -> (f64, f64) {
        let n = self.s1[b] - self.s1[a];
        let sx = self.sx[b] - self.sx[a];
        let sy = self.sy[b] - self.sy[a];
        let sxx = self.sxx[b] - self.sxx[a];
        let sxy = self.sxy[b] - self.sxy[a];
        let syy = self.syy[b] - self.syy[a];
        let vxx = sxx - sx * sx / n;
        let vxy = sxy - sx * sy / n;
        let vyy = syy - sy * sy / n;
        if vxx <= 0.0 {
            return (0.0, vyy.max(0.0));
        }
        let slope = vxy / vxx;
        (slope, (vyy - slope * vxy).max(0.0))
    }
}

/// Slope below which a segment counts as flat, in decades per iteration.
const LEVEL_SLOPE: f64 = 0.01;
/// Residual floor for the fit criterion, in squared decades per point.
const RSS_FLOOR: f64 = 1e-12;

/// Split a residual curve into at most three linear pieces of `log10`
/// residual and label them dropping, transition and level.
///
/// The number of pieces and the breakpoints minimize
/// `len·ln(RSS/len) + params·ln(len)` over all placements.
pub fn classify_phases(residuals: &[f64]) -> Result<PhaseSegments> {
    let len = residuals.len();
    if len < 3 {
        return invalid(format!("phase classification needs at least 3 residuals, got {len}"));
    }
    if residuals.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return invalid("residuals must be positive and finite");
    }
    let y: Vec<f64> = residuals.iter().map(|r| r.log10()).collect();
    let fits = LineFits::new(&y);
    let nf = len as f64;
    let score = |rss: f64, segments: usize| {
        let params = (3 * segments - 1) as f64;
        nf * (rss / nf + RSS_FLOOR).ln() + params * nf.ln()
    };

    let mut best = (score(fits.fit(0, len).1, 1), vec![len]);
    const MIN_SEG: usize = 2;
    for a in MIN_SEG..=len.saturating_sub(MIN_SEG) {
        let s = score(fits.fit(0, a).1 + fits.fit(a, len).1, 2);
        if s < best.0 {
            best = (s, vec![a, len]);
        }
        for b in a + MIN_SEG..=len.saturating_sub(MIN_SEG) {
            let s = score(fits.fit(0, a).1 + fits.fit(a, b).1 + fits.fit(b, len).1, 3);
            if s < best.0 {
                best = (s, vec![a, b, len]);
            }
        }
    }

    let breakpoints = best.1;
    let mut starts = vec![0];
    starts.extend(&breakpoints[..breakpoints.len() - 1]);
    let slopes: Vec<f64> = starts.iter().zip(&breakpoints).map(|(&a, &b)| fits.fit(a, b).0).collect();
    let segment_phase: Vec<Phase> = match slopes.len() {
        1 if slopes[0] < -LEVEL_SLOPE => vec![Phase::Dropping],
        1 => vec![Phase::Level],
        2 if slopes[1].abs() < LEVEL_SLOPE.max(slopes[0].abs() / 4.0) => vec![Phase::Dropping, Phase::Level],
        2 => vec![Phase::Dropping, Phase::Transition],
        _ => vec![Phase::Dropping, Phase::Transition, Phase::Level],
    };
    let mut labels = Vec::with_capacity(len);
    for ((&a, &b), &ph) in starts.iter().zip(&breakpoints).zip(&segment_phase) {
        labels.extend(std::iter::repeat_n(ph, b - a));
    }
    Ok(PhaseSegments { breakpoints, slopes, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctf::CtfParams;
    use crate::geometry::{DiskGrid, Rotation};
    use crate::toeplitz::ToeplitzKernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, m: usize, seed: u64) -> (ProjectionOperator, ToeplitzKernel, ComplexGrid, Vec<Complex64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rots: Vec<Rotation> = (0..m)
            .map(|_| {
                Rotation::from_euler_zyz_deg(
                    rng.random_range(0.0..360.0),
                    rng.random_range(0.0..180.0),
                    rng.random_range(0.0..360.0),
                )
            })
            .collect();
        let groups = (0..m).map(|i| i % 3).collect();
        let op = ProjectionOperator::new(DiskGrid::new(n).unwrap(), rots, &CtfParams::reference_groups(), groups, 1e-8)
            .unwrap();
        let truth = Volume::from_data(n, 1.0, (0..n * n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b = op.forward(&truth).unwrap();
        let rhs = op.adjoint(&b).unwrap();
        let kern = ToeplitzKernel::build(&op).unwrap();
        (op, kern, rhs, b)
    }

    #[test]
    fn zero_rhs_gives_zero_volume() {
        let (_, kern, _, _) = setup(8, 2, 1);
        let (v, trace) = cg_solve(&kern, &ComplexGrid::zeros(8), &CgOptions::default(), None).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
        assert!(trace.iterations.is_empty());
    }

    #[test]
    fn first_step_is_closed_form() {
        let (_, kern, rhs, _) = setup(8, 4, 2);
        let opts = CgOptions { max_iters: 1, ..Default::default() };
        let (v, _) = cg_solve(&kern, &rhs, &opts, None).unwrap();
        let r0 = rhs.real_part();
        let kr = kern.apply_normal_real(&r0).unwrap();
        let a = dot_r(&r0, &r0) / dot_r(&r0, &kr);
        for (x, r) in v.data().iter().zip(&r0) {
            assert!((x - a * r).abs() <= 1e-12 * (a * r).abs().max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn objective_never_increases() {
        let (op, kern, rhs, b) = setup(8, 6, 3);
        let opts = CgOptions { max_iters: 40, record_data_residual_every: 5, ..Default::default() };
        let (_, trace) = cg_solve(&kern, &rhs, &opts, Some(DataResidual { operator: &op, data: &b })).unwrap();
        let obj = trace.objectives();
        assert!(obj[0] < 0.0);
        for w in obj.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs(), "{} > {}", w[1], w[0]);
        }
        let recorded: Vec<usize> =
            trace.iterations.iter().filter(|i| i.data_residual.is_some()).map(|i| i.iter).collect();
        assert_eq!(recorded, vec![5, 10, 15, 20, 25, 30, 35, 40]);
        assert!(trace.iterations.iter().all(|i| i.phase.is_some()));
    }

    #[test]
    fn data_residual_decreases_on_consistent_data() {
        let (op, kern, rhs, b) = setup(8, 6, 4);
        let opts = CgOptions { max_iters: 20, record_data_residual_every: 1, ..Default::default() };
        let (_, trace) = cg_solve(&kern, &rhs, &opts, Some(DataResidual { operator: &op, data: &b })).unwrap();
        let d: Vec<f64> = trace.iterations.iter().map(|i| i.data_residual.unwrap()).collect();
        assert!(d.last().unwrap() < &(0.1 * norm_c(&b)));
    }

    #[test]
    fn scaling_invariance() {
        let (_, kern, rhs, _) = setup(8, 4, 5);
        let opts = CgOptions { max_iters: 8, ..Default::default() };
        let (a, _) = cg_solve(&kern, &rhs, &opts, None).unwrap();
        let alpha = 3.7;
        let scaled_rhs = ComplexGrid { n: 8, data: rhs.data.iter().map(|z| z * alpha).collect() };
        let (b, _) = cg_solve(&kern.scaled(alpha), &scaled_rhs, &opts, None).unwrap();
        let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 1e-12 * a.norm());
    }

    #[test]
    fn early_stop_on_stalled_objective() {
        let (_, kern, rhs, _) = setup(8, 4, 6);
        let opts = CgOptions { max_iters: 200, objective_tolerance: 1e-3, ..Default::default() };
        let (_, trace) = cg_solve(&kern, &rhs, &opts, None).unwrap();
        assert!(trace.stopped_early);
        assert!(trace.iterations.len() < 200);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (_, kern, rhs, _) = setup(8, 2, 7);
        assert!(cg_solve(&kern, &ComplexGrid::zeros(16), &CgOptions::default(), None).is_err());
        let opts = CgOptions { max_iters: 0, ..Default::default() };
        assert!(cg_solve(&kern, &rhs, &opts, None).is_err());
        let complex = ComplexGrid { n: 8, data: rhs.data.iter().map(|z| z * Complex64::new(0.0, 1.0)).collect() };
        assert!(cg_solve(&kern, &complex, &CgOptions::default(), None).is_err());
        let mut nan = rhs.clone();
        nan.data[3] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(
            cg_solve(&kern, &nan, &CgOptions::default(), None),
            Err(FirmError::NumericalFailure { .. }) | Err(FirmError::InvalidArgument(_))
        ));
    }

    #[test]
    fn nan_spectrum_is_numerical_failure() {
        let (_, kern, rhs, _) = setup(8, 2, 8);
        let mut spec = kern.spectrum().to_vec();
        spec[0] = f64::INFINITY;
        // bypass validation to reach the iteration
        let bad = ToeplitzKernel::from_spectrum(8, spec, None);
        assert!(bad.is_err());
        let bad = kern.scaled(f64::NAN);
        assert!(matches!(
            cg_solve(&bad, &rhs, &CgOptions::default(), None),
            Err(FirmError::NumericalFailure { iteration: 1, .. })
        ));
    }

    #[test]
    fn csv_layout() {
        let (_, kern, rhs, _) = setup(8, 2, 9);
        let (_, trace) = cg_solve(&kern, &rhs, &CgOptions { max_iters: 4, ..Default::default() }, None).unwrap();
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,normal_residual,objective,data_residual,phase");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1].split(',').count(), 5);
        assert!(lines[1].starts_with("1,"));
        assert_eq!(lines[1].split(',').nth(3), Some(""));
    }

    #[test]
    fn geometric_decay_is_one_dropping_segment() {
        let r: Vec<f64> = (0..20).map(|k| 10f64.powi(-k)).collect();
        let s = classify_phases(&r).unwrap();
        assert_eq!(s.breakpoints, vec![20]);
        assert!(s.labels.iter().all(|&p| p == Phase::Dropping));
    }

    #[test]
    fn constant_is_one_level_segment() {
        let s = classify_phases(&[0.3; 12]).unwrap();
        assert_eq!(s.breakpoints, vec![12]);
        assert!(s.labels.iter().all(|&p| p == Phase::Level));
    }

    #[test]
    fn synthetic_l_curve_breakpoints() {
        // steep for 10, knee for 5, flat for 15
        let mut y = Vec::new();
        let mut v = 0.0;
        for k in 0..30 {
            y.push(v);
            v += if k < 10 {
                -0.4
            } else if k < 15 {
                -0.08
            } else {
                0.0
            };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let r: Vec<f64> = y.iter().map(|v| 10f64.powf(v + rng.random_range(-0.005..0.005))).collect();
        let s = classify_phases(&r).unwrap();
        assert_eq!(s.breakpoints.len(), 3, "{s:?}");
        assert!((s.breakpoints[0] as i64 - 10).abs() <= 2, "{s:?}");
        assert!((s.breakpoints[1] as i64 - 15).abs() <= 2, "{s:?}");
        assert_eq!(s.labels[0], Phase::Dropping);
        assert_eq!(s.labels[12], Phase::Transition);
        assert_eq!(s.labels[29], Phase::Level);
    }

    #[test]
    fn classifier_needs_three_points() {
        assert!(classify_phases(&[1.0, 0.5]).is_err());
        assert!(classify_phases(&[1.0, 0.0, 0.5]).is_err());
    }
}
