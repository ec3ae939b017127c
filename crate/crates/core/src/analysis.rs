//! Fidelity patches, sensitivity exponents, and S_L-T boundary curves.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::apparatus::apply_local;
use crate::error::{Error, Result};
use crate::qmat::{c, CMatrix};
use crate::states::{self, mems, DensityMatrix, MemsParam, Subclass};

/// Attempts per deterministic substream.
pub const CHUNK_SIZE: u64 = 1024;
/// Attempts after which a kernel with acceptance below `MIN_ACCEPTANCE` is rejected.
pub const ACCEPTANCE_WINDOW: u64 = 1_000_000;
pub const MIN_ACCEPTANCE: f64 = 1e-3;
/// Thresholds above this are clamped to it; exact unit fidelity is not
/// reachable in floating point.
pub const MAX_F_MIN: f64 = 1.0 - 1e-12;

pub const DEFAULT_EPS_MAX: f64 = 0.08;
pub const DEFAULT_ANGLE_MAX: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    pub s_l: f64,
    pub t: f64,
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// (1 - eps) target + eps Ginibre, eps uniform on (0, eps_max].
    MixGinibre { eps_max: f64 },
    /// Independent Bloch-sphere rotations of each qubit by up to `angle_max`
    /// radians about a random axis.
    LocalUnitaryJitter { angle_max: f64 },
    Combined { eps_max: f64, angle_max: f64 },
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::Combined {
            eps_max: DEFAULT_EPS_MAX,
            angle_max: DEFAULT_ANGLE_MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub f_min: f64,
    pub kernel: Kernel,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_samples: 5000,
            f_min: 0.99,
            kernel: Kernel::default(),
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Combined kernel whose width follows the threshold: the mixing weight
    /// scales with 1 - f_min and the rotation angle with its square root, so
    /// the acceptance rate stays roughly that of the defaults at f_min = 0.99.
    pub fn scaled_for(f_min: f64) -> Self {
        let gap = (1.0 - f_min.min(MAX_F_MIN)) / 0.01;
        SamplerConfig {
            f_min,
            kernel: Kernel::Combined {
                eps_max: (DEFAULT_EPS_MAX * gap).min(1.0),
                angle_max: DEFAULT_ANGLE_MAX * gap.sqrt(),
            },
            ..Default::default()
        }
    }

    pub fn effective_f_min(&self) -> f64 {
        self.f_min.min(MAX_F_MIN)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if !(self.f_min > 0.0 && self.f_min <= 1.0) {
            return Err(Error::out_of_range("f_min", self.f_min, "(0, 1]"));
        }
        let (eps, angle) = match self.kernel {
            Kernel::MixGinibre { eps_max } => (Some(eps_max), None),
            Kernel::LocalUnitaryJitter { angle_max } => (None, Some(angle_max)),
            Kernel::Combined { eps_max, angle_max } => (Some(eps_max), Some(angle_max)),
        };
        if let Some(e) = eps {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::out_of_range("eps_max", e, "(0, 1]"));
            }
        }
        if let Some(a) = angle {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::out_of_range("angle_max", a, "(0, inf)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Patch {
    pub samples: Vec<PatchSample>,
    /// The accepted states, parallel to `samples`.
    #[serde(skip)]
    pub states: Vec<DensityMatrix>,
    /// Attempts up to and including the one that produced the last sample.
    pub attempts: u64,
    pub acceptance_rate: f64,
}

impl Patch {
    /// (max - min) of S_L and of T over the samples.
    pub fn spread(&self) -> (f64, f64) {
        let range = |f: fn(&PatchSample) -> f64| {
            let (lo, hi) = self
                .samples
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            hi - lo
        };
        (range(|s| s.s_l), range(|s| s.t))
    }
}

fn jitter_unitary<R: Rng + ?Sized>(rng: &mut R, angle_max: f64) -> CMatrix {
    let mut n = [0.0f64; 3];
    loop {
        for v in n.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let norm = n.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            n.iter_mut().for_each(|v| *v /= norm);
            break;
        }
    }
    // Bloch-sphere rotation by a: cos(a/2) I - i sin(a/2) (n . sigma)
    let a = rng.random_range(0.0..=angle_max);
    let (s, co) = (0.5 * a).sin_cos();
    CMatrix::from_rows(
        2,
        vec![
            c(co, -s * n[2]),
            c(-s * n[1], -s * n[0]),
            c(s * n[1], -s * n[0]),
            c(co, s * n[2]),
        ],
    )
}

fn propose<R: Rng + ?Sized>(target: &DensityMatrix, kernel: Kernel, rng: &mut R) -> Result<DensityMatrix> {
    let jitter = |rho: &DensityMatrix, rng: &mut R, angle_max| {
        let u1 = jitter_unitary(rng, angle_max);
        let u2 = jitter_unitary(rng, angle_max);
        apply_local(rho, &u1, &u2)
    };
    let mix = |rho: &DensityMatrix, rng: &mut R, eps_max: f64| {
        let eps = eps_max * (1.0 - rng.random::<f64>());
        let g = states::random_ginibre(rng);
        rho.mix(&g, eps)
    };
    Ok(match kernel {
        Kernel::MixGinibre { eps_max } => mix(target, rng, eps_max),
        Kernel::LocalUnitaryJitter { angle_max } => jitter(target, rng, angle_max)?,
        Kernel::Combined { eps_max, angle_max } => {
            let rotated = jitter(target, rng, angle_max)?;
            mix(&rotated, rng, eps_max)
        }
    })
}

type Accepted = (u64, PatchSample, DensityMatrix);

/// Accepted samples of one substream, tagged with their global attempt index.
fn run_chunk(target: &DensityMatrix, cfg: &SamplerConfig, chunk: u64) -> Result<Vec<Accepted>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(chunk);
    let f_min = cfg.effective_f_min();
    let mut out = Vec::new();
    for i in 0..CHUNK_SIZE {
        let candidate = propose(target, cfg.kernel, &mut rng)?;
        let f = states::fidelity(target, &candidate)?;
        if f >= f_min {
            out.push((
                chunk * CHUNK_SIZE + i,
                PatchSample {
                    s_l: states::linear_entropy(&candidate),
                    t: states::tangle(&candidate)?,
                    f,
                },
                candidate,
            ));
        }
    }
    Ok(out)
}

/// Rejection-samples states with fidelity at least `f_min` to `target`.
pub fn sample_patch(target: &DensityMatrix, cfg: &SamplerConfig) -> Result<Patch> {
    sample_patch_parallel(target, cfg, 1)
}

/// As [`sample_patch`], spreading substreams over `workers` threads. The
/// output depends only on the configuration, not on `workers`.
pub fn sample_patch_parallel(target: &DensityMatrix, cfg: &SamplerConfig, workers: usize) -> Result<Patch> {
    cfg.validate()?;
    let workers = workers.max(1) as u64;
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut kept = Vec::with_capacity(cfg.n_samples);
    let mut next_chunk = 0u64;
    loop {
        let batch: Vec<Result<Vec<Accepted>>> = if workers == 1 {
            vec![run_chunk(target, cfg, next_chunk)]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = (next_chunk..next_chunk + workers)
                    .map(|k| scope.spawn(move || run_chunk(target, cfg, k)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("sampler thread panicked")).collect()
            })
        };
        for chunk in batch {
            for (attempt, s, rho) in chunk? {
                samples.push(s);
                kept.push(rho);
                if samples.len() == cfg.n_samples {
                    let attempts = attempt + 1;
                    return Ok(Patch {
                        acceptance_rate: samples.len() as f64 / attempts as f64,
                        samples,
                        states: kept,
                        attempts,
                    });
                }
            }
            next_chunk += 1;
            let attempts = next_chunk * CHUNK_SIZE;
            if attempts >= ACCEPTANCE_WINDOW && (samples.len() as f64) < MIN_ACCEPTANCE * attempts as f64 {
                return Err(Error::KernelTooWide {
                    accepted: samples.len(),
                    attempts: attempts as usize,
                });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Exponents {
    pub fid_exponent: f64,
    pub t_exponent: f64,
    pub sl_exponent: f64,
}

/// `n` log-spaced offsets from `lo` to `hi`.
pub fn log_deltas(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Log-log slopes of 1 - F, |dT| and |dS_L| against the offset in r.
pub fn sensitivity_exponents(r0: f64, deltas: &[f64], subclass: Subclass) -> Result<Exponents> {
    if deltas.len() < 2 || deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::Config("deltas must be at least two positive values".into()));
    }
    let lo = deltas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = deltas.iter().cloned().fold(0.0, f64::max);
    if hi / lo < 10.0 {
        return Err(Error::Config(format!("deltas span {:.3} decades, need at least 1", (hi / lo).log10())));
    }
    let base = mems(MemsParam::new(r0, subclass)?);
    MemsParam::new(r0 - hi, subclass)?;
    MemsParam::new(r0 + hi, subclass)?;
    let t0 = states::tangle(&base)?;
    let s0 = states::linear_entropy(&base);
    let mut logd = Vec::new();
    let (mut lf, mut lt, mut ls) = (Vec::new(), Vec::new(), Vec::new());
    for &d in deltas {
        let rho = mems(MemsParam::new(r0 + d, subclass)?);
        let f = states::fidelity(&base, &rho)?;
        logd.push(d.ln());
        lf.push((1.0 - f).max(f64::MIN_POSITIVE).ln());
        lt.push((states::tangle(&rho)? - t0).abs().max(f64::MIN_POSITIVE).ln());
        ls.push((states::linear_entropy(&rho) - s0).abs().max(f64::MIN_POSITIVE).ln());
    }
    Ok(Exponents {
        fid_exponent: slope(&logd, &lf),
        t_exponent: slope(&logd, &lt),
        sl_exponent: slope(&logd, &ls),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Curve {
    #[serde(rename = "MEMS_I")]
    MemsI,
    #[serde(rename = "MEMS_II")]
    MemsII,
    #[serde(rename = "Werner")]
    Werner,
}

impl Curve {
    pub fn name(self) -> &'static str {
        match self {
            Curve::MemsI => "MEMS_I",
            Curve::MemsII => "MEMS_II",
            Curve::Werner => "Werner",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub curve: Curve,
    /// Sweep parameter: r for MEMS, p for Werner.
    #[serde(skip)]
    pub param: f64,
    pub s_l: f64,
    pub t: f64,
}

/// MEMS I over r in [2/3, 1], MEMS II over r in [0, 2/3] and Werner over
/// p in [1/3, 1], `n_points` each.
pub fn boundary_curves(n_points: usize) -> Result<Vec<CurvePoint>> {
    if n_points < 2 {
        return Err(Error::Config("n_points must be at least 2".into()));
    }
    let sweep = |lo: f64, hi: f64| (0..n_points).map(move |i| lo + (hi - lo) * i as f64 / (n_points - 1) as f64);
    let point = |curve, param, rho: DensityMatrix| -> Result<CurvePoint> {
        Ok(CurvePoint {
            curve,
            param,
            s_l: states::linear_entropy(&rho),
            t: states::tangle(&rho)?,
        })
    };
    let mut out = Vec::with_capacity(3 * n_points);
    for r in sweep(2.0 / 3.0, 1.0) {
        out.push(point(Curve::MemsI, r, mems(MemsParam::new(r, Subclass::I)?))?);
    }
    for r in sweep(0.0, 2.0 / 3.0) {
        out.push(point(Curve::MemsII, r, mems(MemsParam::new(r, Subclass::II)?))?);
    }
    for p in sweep(1.0 / 3.0, 1.0) {
        out.push(point(Curve::Werner, p, states::werner(p)?)?);
    }
    Ok(out)
}

/// Tangle of the MEMS with the given linear entropy, located by bisection
/// in r (S_L decreases monotonically along the MEMS family).
pub fn mems_tangle_at(s_l: f64) -> Result<f64> {
    if !(0.0..=8.0 / 9.0 + 1e-12).contains(&s_l) {
        return Err(Error::out_of_range("s_l", s_l, "[0, 8/9]"));
    }
    let sl_of = |r: f64| -> Result<f64> { Ok(states::linear_entropy(&states::mems_r(r)?)) };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sl_of(mid)? > s_l {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    states::tangle(&states::mems_r(0.5 * (lo + hi))?)
}

/// Numbers in output tables: fixed notation with six significant digits.
pub fn format_number(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.5}", x);
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).clamp(0, 20) as usize;
    format!("{:.*}", decimals, x)
}

pub fn write_patch_csv<W: Write>(writer: W, samples: &[PatchSample]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["s_l", "t", "f"])?;
    for s in samples {
        wtr.write_record([format_number(s.s_l), format_number(s.t), format_number(s.f)])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_curves_csv<W: Write>(writer: W, points: &[CurvePoint]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["curve", "s_l", "t"])?;
    for p in points {
        wtr.write_record([p.curve.name().to_string(), format_number(p.s_l), format_number(p.t)])?;
    }
    wtr.flush()?;
    Ok(())
}
