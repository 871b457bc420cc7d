//! Command-line surface: simulate, reconstruct, evaluate and check.

use std::fmt;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ctf::CtfParams;
use crate::diagnostics::{run_checks, CheckOutcome};
use crate::error::{FirmError, Result};
use crate::eval::{fsc, fsc_partitioned, missing_cone_mask, MaskMode};
use crate::geometry::{DiskGrid, Rotation};
use crate::io::{read_f32, read_json, write_f32, write_json};
use crate::projector::{slices_from_images, ProjectionOperator};
use crate::sim::{make_dataset, BlobPhantom, DatasetSpec};
use crate::solver::{cg_solve, CgOptions, DataResidual};
use crate::toeplitz::{KernelMetadata, ToeplitzKernel};
use crate::volume::Volume;

pub const MANIFEST: &str = "manifest.json";
pub const IMAGES: &str = "images.f32";
pub const TRUTH: &str = "truth.f32";

#[derive(Debug, Parser)]
#[command(name = "firm", version, about = "Fourier-based iterative reconstruction of projection data")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<NonZeroUsize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a conical-tilt dataset of the default blob phantom.
    Simulate(SimulateArgs),
    /// Back-project, build the kernel and run conjugate gradients.
    Reconstruct(ReconstructArgs),
    /// Fourier shell correlation of a reconstruction against a reference.
    Evaluate(EvaluateArgs),
    /// Run the operator self-checks on a random geometry.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 60.0)]
    pub tilt: f64,
    /// Signal-to-noise ratio; `inf` renders clean images.
    #[arg(long, default_value = "1")]
    pub snr: Snr,
    #[arg(long, default_value_t = 3)]
    pub groups: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Å per pixel.
    #[arg(long, default_value_t = 3.36)]
    pub pixel_size: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Dataset directory or its manifest file.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub nufft_eps: f64,
    /// Spectrum cache; reused when its metadata matches, written otherwise.
    #[arg(long)]
    pub kernel_cache: Option<PathBuf>,
    /// Record ‖A·x − b‖ every this many iterations (0 = never).
    #[arg(long, default_value_t = 0)]
    pub residual_every: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub recon: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Conical tilt in degrees; enables the missing-cone split.
    #[arg(long)]
    pub tilt: Option<f64>,
    /// Prepended verbatim to the CSV file names.
    #[arg(long)]
    pub out_prefix: String,
    /// Å per voxel, used for the frequency column.
    #[arg(long, default_value_t = 1.0)]
    pub pixel_size: f64,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub nufft_eps: f64,
}

/// Signal-to-noise ratio, possibly infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snr(pub f64);

impl FromStr for Snr {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => Ok(Snr(f64::INFINITY)),
            t => match t.parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => Ok(Snr(v)),
                _ => Err(format!("snr must be a positive number or `inf`, got `{s}`")),
            },
        }
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

// JSON has no infinity, so the clean case is the string "inf".
impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Snr(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n: usize,
    pub m: usize,
    pub pixel_size: f64,
    pub tilt_deg: f64,
    pub snr: Snr,
    pub seed: u64,
    pub euler_zyz_deg: Vec<[f64; 3]>,
    pub defocus_group: Vec<usize>,
    pub ctf: Vec<CtfParams>,
    pub images: String,
    pub truth: String,
}

impl DatasetManifest {
    /// Read `dir/manifest.json` (or the manifest path itself) and check it against its files.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let (file, dir) = if path.is_dir() {
            (path.join(MANIFEST), path.to_path_buf())
        } else {
            (path.to_path_buf(), path.parent().map(Path::to_path_buf).unwrap_or_default())
        };
        if !file.exists() {
            return Err(FirmError::InvalidArgument(format!("no manifest at {}", file.display())));
        }
        let man: Self = read_json(&file)?;
        man.validate(&dir)?;
        Ok((man, dir))
    }

    pub fn validate(&self, dir: &Path) -> Result<()> {
        let bad = |msg: String| Err(FirmError::InvalidArgument(format!("manifest: {msg}")));
        if self.euler_zyz_deg.len() != self.m || self.defocus_group.len() != self.m {
            return bad(format!(
                "{} angle triples and {} group labels for m = {}",
                self.euler_zyz_deg.len(),
                self.defocus_group.len(),
                self.m
            ));
        }
        if let Some(&g) = self.defocus_group.iter().find(|&&g| g >= self.ctf.len()) {
            return bad(format!("group label {g} but only {} CTFs", self.ctf.len()));
        }
        for c in &self.ctf {
            c.validate()?;
        }
        for (name, want) in [(&self.images, self.m * self.n * self.n), (&self.truth, self.n.pow(3))] {
            let p = dir.join(name);
            let len = match std::fs::metadata(&p) {
                Ok(md) => md.len(),
                Err(_) => return bad(format!("missing file {}", p.display())),
            };
            if len != 4 * want as u64 {
                return bad(format!("{} has {len} bytes, expected {}", p.display(), 4 * want));
            }
        }
        Ok(())
    }

    pub fn rotations(&self) -> Vec<Rotation> {
        self.euler_zyz_deg.iter().map(|a| Rotation::from_euler_zyz_deg(a[0], a[1], a[2])).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub threads: usize,
    pub fft: f64,
    pub backprojection: f64,
    pub kernel: f64,
    pub kernel_cache_hit: bool,
    pub kernel_load: f64,
    pub per_iteration: Vec<f64>,
    pub cg: f64,
    pub total: f64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Firm(#[from] FirmError),
    #[error("failed checks: {0}")]
    ChecksFailed(String),
}

impl CliError {
    /// 1 for bad input or failed checks, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Firm(FirmError::InvalidArgument(_) | FirmError::CacheMismatch(_) | FirmError::Json(_)) => 1,
            CliError::ChecksFailed(_) => 1,
            CliError::Firm(_) => 2,
        }
    }
}

pub fn run(cmd: &Command) -> std::result::Result<(), CliError> {
    match cmd {
        Command::Simulate(a) => simulate(a).map_err(Into::into),
        Command::Reconstruct(a) => reconstruct(a).map(|_| ()).map_err(Into::into),
        Command::Evaluate(a) => evaluate(a).map_err(Into::into),
        Command::Check(a) => check(a),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let refs = CtfParams::reference_groups();
    if a.groups == 0 || a.groups > refs.len() {
        return Err(FirmError::InvalidArgument(format!("--groups must be between 1 and {}", refs.len())));
    }
    let ctf: Vec<CtfParams> = refs[..a.groups].iter().map(|c| CtfParams { pixel_size: a.pixel_size, ..*c }).collect();
    let spec = DatasetSpec {
        n: a.n,
        m: a.m,
        tilt_deg: a.tilt,
        snr: a.snr.0,
        pixel_size: a.pixel_size,
        defocus_groups: ctf.clone(),
        seed: a.seed,
    };
    spec.validate()?;
    let phantom = BlobPhantom::default_for(a.n)?;
    let data = make_dataset(&spec, &phantom)?;

    std::fs::create_dir_all(&a.out)?;
    write_f32(&a.out.join(IMAGES), &data.images)?;
    write_f32(&a.out.join(TRUTH), data.truth.data())?;
    let man = DatasetManifest {
        n: a.n,
        m: a.m,
        pixel_size: a.pixel_size,
        tilt_deg: a.tilt,
        snr: a.snr,
        seed: a.seed,
        euler_zyz_deg: data.euler_zyz_deg,
        defocus_group: data.defocus_group,
        ctf,
        images: IMAGES.into(),
        truth: TRUTH.into(),
    };
    write_json(&a.out.join(MANIFEST), &man)?;
    println!("wrote {} images of {}x{} to {}", a.m, a.n, a.n, a.out.display());
    Ok(())
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<Timing> {
    let start = Instant::now();
    let (man, dir) = DatasetManifest::load(&a.dataset)?;
    let images = read_f32(&dir.join(&man.images))?;
    let grid = DiskGrid::new(man.n)?;

    let t = Instant::now();
    let values = slices_from_images(&images, &grid)?;
    let fft = secs(t);

    let op = ProjectionOperator::new(grid, man.rotations(), &man.ctf, man.defocus_group.clone(), a.nufft_eps)?;
    let t = Instant::now();
    let rhs = op.adjoint(&values)?;
    let backprojection = secs(t);

    let meta = KernelMetadata::for_operator(&op);
    let (kernel, kernel_time, hit, load) = match &a.kernel_cache {
        Some(p) if p.exists() => {
            let t = Instant::now();
            let k = ToeplitzKernel::load(p, &meta)?;
            log::info!("kernel cache hit at {}", p.display());
            (k, 0.0, true, secs(t))
        }
        _ => {
            let t = Instant::now();
            let k = ToeplitzKernel::build(&op)?;
            let built = secs(t);
            if let Some(p) = &a.kernel_cache {
                if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent)?;
                }
                k.save(p)?;
            }
            (k, built, false, 0.0)
        }
    };

    let opts = CgOptions { max_iters: a.iters, record_data_residual_every: a.residual_every, ..Default::default() };
    let residual = (a.residual_every > 0).then_some(DataResidual { operator: &op, data: &values });
    let t = Instant::now();
    let (x, trace) = cg_solve(&kernel, &rhs, &opts, residual)?;
    let cg = secs(t);
    let x = x.with_pixel_size(man.pixel_size)?;

    std::fs::create_dir_all(&a.out)?;
    write_f32(&a.out.join("recon.f32"), x.data())?;
    trace.write_csv(&a.out.join("residuals.csv"))?;
    let timing = Timing {
        threads: rayon::current_num_threads(),
        fft,
        backprojection,
        kernel: kernel_time,
        kernel_cache_hit: hit,
        kernel_load: load,
        per_iteration: trace.iterations.iter().map(|i| i.seconds).collect(),
        cg,
        total: secs(start),
    };
    write_json(&a.out.join("timing.json"), &timing)?;
    let last = trace.iterations.last().map(|i| i.normal_residual / trace.rhs_norm);
    println!(
        "{} CG iterations, relative normal residual {}, wrote {}",
        trace.iterations.len(),
        last.map_or("n/a".into(), |r| format!("{r:.3e}")),
        a.out.display()
    );
    Ok(timing)
}

/// Read a cubic volume, inferring its side from the file length.
pub fn read_volume(path: &Path, pixel_size: f64) -> Result<Volume> {
    let data = read_f32(path)?;
    let n = (data.len() as f64).cbrt().round() as usize;
    if n.pow(3) != data.len() {
        return Err(FirmError::InvalidArgument(format!("{} holds {} values, not a cube", path.display(), data.len())));
    }
    Volume::from_data(n, pixel_size, data)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let recon = read_volume(&a.recon, a.pixel_size)?;
    let truth = read_volume(&a.truth, a.pixel_size)?;
    if recon.n() != truth.n() {
        return Err(FirmError::InvalidArgument(format!("volume sides differ: {} vs {}", recon.n(), truth.n())));
    }
    let out = |name: &str| PathBuf::from(format!("{}{name}", a.out_prefix));
    if let Some(parent) = out("x").parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let quarter = (recon.n() / 8).max(1);
    let (all, headline) = match a.tilt {
        Some(tilt) => {
            let mask = missing_cone_mask(recon.n(), tilt)?;
            let p = fsc_partitioned(&recon, &truth, &mask)?;
            p.exclude.write_csv(&out("fsc_exclude_cone.csv"))?;
            p.within.write_csv(&out("fsc_within_cone.csv"))?;
            let h = p.exclude.min_up_to(quarter);
            (p.all, ("outside the missing cone", h))
        }
        None => {
            let all = fsc(&recon, &truth, None, MaskMode::Exclude)?;
            let h = all.min_up_to(quarter);
            (all, ("over full shells", h))
        }
    };
    all.write_csv(&out("fsc_all.csv"))?;
    match headline.1 {
        Some(v) => println!("min FSC {} on shells 1..={quarter}: {v:.4}", headline.0),
        None => println!("FSC undefined on the lowest shells"),
    }
    Ok(())
}

pub fn check(a: &CheckArgs) -> std::result::Result<(), CliError> {
    let outcomes = run_checks(a.n, a.m, a.seed, a.nufft_eps)?;
    for c in &outcomes {
        println!("{}", format_outcome(c));
    }
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|c| !c.passed && !c.informational)
        .map(|c| format!("{} = {:.3e} (tolerance {:.0e})", c.name, c.value, c.tolerance))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed.join(", ")))
    }
}

fn format_outcome(c: &CheckOutcome) -> String {
    let status = match (c.passed, c.informational) {
        (true, _) => "PASS",
        (false, true) => "INFO",
        (false, false) => "FAIL",
    };
    format!("{status} {:<28} {:.3e} (tolerance {:.0e})", c.name, c.value, c.tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_parses_and_round_trips() {
        assert_eq!("inf".parse::<Snr>().unwrap().0, f64::INFINITY);
        assert_eq!("2.5".parse::<Snr>().unwrap(), Snr(2.5));
        assert!("0".parse::<Snr>().is_err());
        assert!("-1".parse::<Snr>().is_err());
        assert!("nan".parse::<Snr>().is_err());
        for s in [Snr(f64::INFINITY), Snr(1.0)] {
            let j = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<Snr>(&j).unwrap(), s);
        }
        assert_eq!(serde_json::to_string(&Snr(f64::INFINITY)).unwrap(), "\"inf\"");
    }

    #[test]
    fn flags_parse_with_defaults() {
        let cli = Cli::try_parse_from(["firm", "simulate", "--n", "8", "--m", "4", "--out", "x"]).unwrap();
        match cli.command {
            Command::Simulate(a) => {
                assert_eq!(a.tilt, 60.0);
                assert_eq!(a.groups, 3);
                assert_eq!(a.snr, Snr(1.0));
            }
            _ => panic!("wrong subcommand"),
        }
        let cli =
            Cli::try_parse_from(["firm", "--threads", "2", "reconstruct", "--dataset", "d", "--out", "o"]).unwrap();
        assert_eq!(cli.threads.map(NonZeroUsize::get), Some(2));
        assert!(Cli::try_parse_from(["firm", "--threads", "0", "check"]).is_err());
        assert!(Cli::try_parse_from(["firm", "simulate", "--n", "8"]).is_err());
        let big = [
            "firm", "simulate", "--n", "90", "--m", "10000", "--tilt", "60", "--snr", "1", "--groups", "3", "--out",
            "d",
        ];
        assert!(Cli::try_parse_from(big).is_ok());
    }

    #[test]
    fn manifest_validation_catches_bad_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let a = SimulateArgs {
            n: 8,
            m: 6,
            tilt: 60.0,
            snr: Snr(f64::INFINITY),
            groups: 2,
            seed: 1,
            pixel_size: 3.0,
            out: dir.path().to_path_buf(),
        };
        simulate(&a).unwrap();
        let (mut man, d) = DatasetManifest::load(dir.path()).unwrap();
        assert_eq!(man.ctf.len(), 2);
        assert!(man.ctf.iter().all(|c| c.pixel_size == 3.0));
        man.defocus_group.pop();
        assert!(man.validate(&d).is_err());
    }
}
