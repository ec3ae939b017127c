//! The state-creation bench: pump-angle pure states, waveplates, and the
//! birefringent decoherers that turn a rotated pure state into a MEMS.
//!
//! Delays are measured in wavelengths. A decoherer in arm `i` delays V
//! relative to H by `delay_arm_i`; the coherence between basis states
//! |p1 p2> and |q1 q2> is scaled by `gamma(x_p - x_q)` with
//! `x_ab = tau(1, a) - tau(2, b)`, the relative arrival-time offset of the
//! two photons. The pump is taken to be perfectly coherent.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmat::{self, c, CMatrix, Complex};
use crate::states::{self, DensityMatrix, MemsParam, Subclass, HH, VV};

/// Unitarity tolerance for user-supplied local operations.
pub const UNITARY_TOL: f64 = 1e-9;
/// Coherence length of the detected photons, lambda^2 / delta-lambda.
pub const DEFAULT_COHERENCE_LENGTH: f64 = 70.0;
/// Birefringent path difference of one decoherer.
pub const DEFAULT_DELAY: f64 = 140.0;
/// Side of the seed grid used by [`solve_waveplates`].
pub const SOLVER_GRID: usize = 64;
pub const SOLVER_TOL: f64 = 1e-10;
/// Residuals above this mean the target diagonal is unreachable.
pub const INFEASIBLE_RESIDUAL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WaveplateKind {
    Half,
    Quarter,
    /// Retarder of arbitrary retardance, e.g. the phi-plate.
    Phase(f64),
}

/// Jones matrix of a retarder with its fast axis at `angle` from horizontal:
/// `R(angle) diag(1, e^{i delta}) R(angle)^T`.
///
/// A half-wave plate at angle `a` is `[[cos 2a, sin 2a], [sin 2a, -cos 2a]]`.
pub fn waveplate_unitary(kind: WaveplateKind, angle: f64) -> CMatrix {
    let (s, co) = angle.sin_cos();
    if let WaveplateKind::Half = kind {
        let (s2, c2) = (2.0 * angle).sin_cos();
        return CMatrix::from_real_rows(&[&[c2, s2], &[s2, -c2]]);
    }
    let delta = match kind {
        WaveplateKind::Quarter => FRAC_PI_2,
        WaveplateKind::Phase(phi) => phi,
        WaveplateKind::Half => unreachable!(),
    };
    let e = Complex::from_polar(1.0, delta);
    let one = c(1.0, 0.0);
    CMatrix::from_rows(
        2,
        vec![
            one * co * co + e * s * s,
            (one - e) * s * co,
            (one - e) * s * co,
            one * s * s + e * co * co,
        ],
    )
}

fn check_unitary(u: &CMatrix, name: &'static str) -> Result<()> {
    if u.dim() != 2 {
        return Err(Error::Config(format!("{name} must be 2x2")));
    }
    let dev = (&(&u.dagger() * u) - &CMatrix::identity(2)).max_abs();
    if dev > UNITARY_TOL {
        return Err(Error::NotUnitary(name, dev));
    }
    Ok(())
}

/// (u1 x u2) rho (u1 x u2)^dagger.
pub fn apply_local(rho: &DensityMatrix, u1: &CMatrix, u2: &CMatrix) -> Result<DensityMatrix> {
    check_unitary(u1, "u1")?;
    check_unitary(u2, "u2")?;
    Ok(rho.conjugated(&qmat::kron(u1, u2)?))
}

/// Shape of the first-order coherence of the detected photons as a function
/// of path mismatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Envelope {
    /// `2^{-(2x/L)^2}`, half width at half maximum L/2.
    #[default]
    Gaussian,
    /// `2^{-2|x|/L}`, same half width.
    Exponential,
    /// Piecewise-linear table of `(|x|, gamma)` with ascending `|x|`;
    /// constant beyond the last point.
    Custom(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecohererConfig {
    pub delay_arm1: f64,
    pub delay_arm2: f64,
    #[serde(default = "default_coherence_length")]
    pub coherence_length: f64,
    #[serde(default)]
    pub envelope: Envelope,
}

fn default_coherence_length() -> f64 {
    DEFAULT_COHERENCE_LENGTH
}

impl Default for DecohererConfig {
    fn default() -> Self {
        DecohererConfig {
            delay_arm1: DEFAULT_DELAY,
            delay_arm2: DEFAULT_DELAY,
            coherence_length: DEFAULT_COHERENCE_LENGTH,
            envelope: Envelope::Gaussian,
        }
    }
}

impl DecohererConfig {
    pub fn with_delays(delay_arm1: f64, delay_arm2: f64) -> Self {
        DecohererConfig {
            delay_arm1,
            delay_arm2,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coherence_length > 0.0 && self.coherence_length.is_finite()) {
            return Err(Error::out_of_range(
                "coherence_length",
                self.coherence_length,
                "(0, inf)",
            ));
        }
        for (name, d) in [("delay_arm1", self.delay_arm1), ("delay_arm2", self.delay_arm2)] {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::out_of_range(name, d, "[0, inf)"));
            }
        }
        if let Envelope::Custom(table) = &self.envelope {
            if table.is_empty() {
                return Err(Error::Config("custom envelope table is empty".into()));
            }
            if table.windows(2).any(|w| w[1].0 <= w[0].0) || table[0].0 < 0.0 {
                return Err(Error::Config(
                    "custom envelope abscissae must be non-negative and ascending".into(),
                ));
            }
            if table.iter().any(|&(_, g)| !(0.0..=1.0).contains(&g)) {
                return Err(Error::Config("custom envelope values must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn delay_table(&self) -> DelayTable {
        DelayTable {
            arm: [[0.0, self.delay_arm1], [0.0, self.delay_arm2]],
        }
    }
}

/// `arm[i][pol]`: delay of polarization `pol` (0 = H, 1 = V) in arm `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayTable {
    pub arm: [[f64; 2]; 2],
}

impl DelayTable {
    /// Relative arrival offset of the two photons in basis state `index`.
    pub fn offset(&self, index: usize) -> f64 {
        let (a, b) = (index >> 1, index & 1);
        self.arm[0][a] - self.arm[1][b]
    }
}

/// gamma(x) in [0, 1]; gamma(0) = 1 and non-increasing in |x| for the
/// built-in envelopes.
pub fn coherence_factor(cfg: &DecohererConfig, x: f64) -> f64 {
    let x = x.abs();
    let l = cfg.coherence_length;
    match &cfg.envelope {
        Envelope::Gaussian => 2f64.powf(-(2.0 * x / l).powi(2)),
        Envelope::Exponential => 2f64.powf(-2.0 * x / l),
        Envelope::Custom(table) => {
            if x == 0.0 {
                return 1.0;
            }
            let mut prev = (0.0, 1.0);
            for &(tx, tg) in table {
                if x <= tx {
                    if tx == prev.0 {
                        return tg;
                    }
                    let w = (x - prev.0) / (tx - prev.0);
                    return prev.1 + w * (tg - prev.1);
                }
                prev = (tx, tg);
            }
            prev.1
        }
    }
}

/// Delay mismatch `x >= 0` with `gamma(x) = target`, by bisection.
/// Targets the envelope cannot reach saturate at the widest mismatch tried.
pub fn invert_coherence(cfg: &DecohererConfig, target: f64) -> f64 {
    if target >= 1.0 {
        return 0.0;
    }
    let target = target.max(1e-15);
    let mut hi = cfg.coherence_length;
    let limit = 1e4 * cfg.coherence_length;
    while coherence_factor(cfg, hi) > target {
        if hi > limit {
            return hi;
        }
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if coherence_factor(cfg, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Dephasing channel of the two decoherers. Populations are untouched.
pub fn decohere(rho: &DensityMatrix, cfg: &DecohererConfig) -> Result<DensityMatrix> {
    cfg.validate()?;
    let table = cfg.delay_table();
    let mut kernel = CMatrix::zeros(4);
    for p in 0..4 {
        for q in 0..4 {
            let g = coherence_factor(cfg, table.offset(p) - table.offset(q));
            kernel[(p, q)] = c(g, 0.0);
        }
    }
    let out = rho.matrix().hadamard(&kernel);
    let min = qmat::hermitian_eigen(&out)?.values[3];
    if min < states::EIGEN_FLOOR {
        return Err(Error::OutputNotPsd { eigenvalue: min });
    }
    Ok(DensityMatrix::new_unchecked(out))
}

/// Result of the HWP2/HWP3 angle search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveplateSolution {
    pub theta2: f64,
    pub theta3: f64,
    /// Sum of squared population errors at the returned angles.
    pub residual: f64,
}

fn rotated(initial: &DensityMatrix, theta2: f64, theta3: f64) -> DensityMatrix {
    let u = qmat::kron(
        &waveplate_unitary(WaveplateKind::Half, theta2),
        &waveplate_unitary(WaveplateKind::Half, theta3),
    )
    .expect("4x4 fits");
    initial.conjugated(&u)
}

fn population_errors(initial: &DensityMatrix, target: &[f64; 4], x: [f64; 2]) -> [f64; 4] {
    let pops = rotated(initial, x[0], x[1]).populations();
    std::array::from_fn(|i| pops[i] - target[i])
}

fn sum_sq(r: &[f64; 4]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Levenberg-Marquardt on the two angles with a central-difference Jacobian.
fn refine(initial: &DensityMatrix, target: &[f64; 4], start: [f64; 2]) -> ([f64; 2], f64) {
    const H: f64 = 1e-6;
    let mut x = start;
    let mut r = population_errors(initial, target, x);
    let mut f = sum_sq(&r);
    let mut mu = 1e-3;
    for _ in 0..200 {
        if f < SOLVER_TOL * SOLVER_TOL {
            break;
        }
        let mut jac = [[0.0; 2]; 4];
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += H;
            xm[k] -= H;
            let rp = population_errors(initial, target, xp);
            let rm = population_errors(initial, target, xm);
            for i in 0..4 {
                jac[i][k] = (rp[i] - rm[i]) / (2.0 * H);
            }
        }
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for i in 0..4 {
            for a in 0..2 {
                jtr[a] += jac[i][a] * r[i];
                for b in 0..2 {
                    jtj[a][b] += jac[i][a] * jac[i][b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let a00 = jtj[0][0] * (1.0 + mu) + 1e-300;
            let a11 = jtj[1][1] * (1.0 + mu) + 1e-300;
            let a01 = jtj[0][1];
            let det = a00 * a11 - a01 * a01;
            let step = [
                -(a11 * jtr[0] - a01 * jtr[1]) / det,
                -(a00 * jtr[1] - a01 * jtr[0]) / det,
            ];
            let xn = [x[0] + step[0], x[1] + step[1]];
            let rn = population_errors(initial, target, xn);
            let fnew = sum_sq(&rn);
            if fnew < f {
                x = xn;
                r = rn;
                let gain = f - fnew;
                f = fnew;
                mu = (mu / 3.0).max(1e-12);
                improved = gain > 0.0;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (x, f)
}

/// Finds half-wave plate angles (theta2 on arm 1, theta3 on arm 2) whose
/// rotation of `initial` best reproduces `target_diag` as populations.
pub fn solve_waveplates(initial: &DensityMatrix, target_diag: [f64; 4]) -> Result<WaveplateSolution> {
    let total: f64 = target_diag.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::out_of_range("sum of target populations", total, "1 +/- 1e-9"));
    }
    let step = PI / SOLVER_GRID as f64;
    let mut seeds: Vec<(f64, [f64; 2])> = Vec::with_capacity(SOLVER_GRID * SOLVER_GRID);
    for i in 0..SOLVER_GRID {
        for j in 0..SOLVER_GRID {
            let x = [i as f64 * step, j as f64 * step];
            seeds.push((sum_sq(&population_errors(initial, &target_diag, x)), x));
        }
    }
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best = (seeds[0].1, seeds[0].0);
    for &(_, x0) in seeds.iter().take(8) {
        let (x, f) = refine(initial, &target_diag, x0);
        if f < best.1 {
            best = (x, f);
        }
        if best.1 < SOLVER_TOL * SOLVER_TOL {
            break;
        }
    }
    let ([t2, t3], residual) = best;
    if residual > INFEASIBLE_RESIDUAL {
        return Err(Error::Infeasible {
            residual,
            limit: INFEASIBLE_RESIDUAL,
        });
    }
    Ok(WaveplateSolution {
        theta2: t2.rem_euclid(PI),
        theta3: t3.rem_euclid(PI),
        residual,
    })
}

/// Settings of the creation bench that are not implied by the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_coherence_length")]
    pub coherence_length: f64,
    #[serde(default)]
    pub envelope: Envelope,
    /// Path difference of the decoherer that stays fixed.
    #[serde(default = "default_delay")]
    pub base_delay: f64,
    /// Explicit per-arm delays; when absent they are derived from the target.
    #[serde(default)]
    pub delays: Option<(f64, f64)>,
}

fn default_delay() -> f64 {
    DEFAULT_DELAY
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            coherence_length: DEFAULT_COHERENCE_LENGTH,
            envelope: Envelope::Gaussian,
            base_delay: DEFAULT_DELAY,
            delays: None,
        }
    }
}

/// JSON document accepted by the pipeline: target fields plus bench settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRequest {
    pub r: f64,
    pub subclass: Subclass,
    #[serde(flatten)]
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutcome {
    pub state: DensityMatrix,
    /// Pump angle of the initial pure state.
    pub theta1: f64,
    /// phi-plate phase of the initial pure state.
    pub phi: f64,
    pub waveplates: WaveplateSolution,
    pub decoherer: DecohererConfig,
    /// Fidelity of `state` with the analytic target.
    pub fidelity: f64,
}

pub fn mems_pipeline(p: MemsParam) -> Result<PipelineOutcome> {
    mems_pipeline_with(p, &PipelineConfig::default())
}

/// Prepares `cos t1 |HH> + e^{i phi} sin t1 |VV>`, rotates it with HWP2/HWP3
/// onto the subclass-I populations, then decoheres.
///
/// Subclass II starts from the r = 2/3 boundary state and lengthens one
/// decoherer so the HH-VV coherence drops from 1/3 to r/2.
pub fn mems_pipeline_with(p: MemsParam, cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let p = MemsParam::new(p.r, p.subclass)?;
    let target = states::mems(p);
    let r_i = match p.subclass {
        Subclass::I => p.r.min(1.0),
        Subclass::II => 2.0 / 3.0,
    };
    let target_diag = [r_i / 2.0, 1.0 - r_i, 0.0, r_i / 2.0];
    // A pure state's concurrence survives local rotations; the subclass-I
    // populations need |a d| = r/2 with a zero VH amplitude, i.e. C = r.
    let theta1 = 0.5 * r_i.clamp(0.0, 1.0).asin();

    let mut decoherer = DecohererConfig {
        delay_arm1: cfg.base_delay,
        delay_arm2: cfg.base_delay,
        coherence_length: cfg.coherence_length,
        envelope: cfg.envelope.clone(),
    };
    match (cfg.delays, p.subclass) {
        (Some((d1, d2)), _) => {
            decoherer.delay_arm1 = d1;
            decoherer.delay_arm2 = d2;
        }
        (None, Subclass::II) => {
            let ratio = (p.r / 2.0) / (r_i / 2.0);
            decoherer.delay_arm1 = cfg.base_delay + invert_coherence(&decoherer, ratio);
        }
        (None, Subclass::I) => {}
    }
    decoherer.validate()?;

    let mut best: Option<PipelineOutcome> = None;
    for phi in [0.0, PI] {
        let initial = states::nonmax_pure(theta1, phi).density();
        let sol = solve_waveplates(&initial, target_diag)?;
        let state = decohere(&rotated(&initial, sol.theta2, sol.theta3), &decoherer)?;
        let fidelity = states::fidelity(&target, &state)?;
        if best.as_ref().is_none_or(|b| fidelity > b.fidelity) {
            best = Some(PipelineOutcome {
                state,
                theta1,
                phi,
                waveplates: sol,
                decoherer: decoherer.clone(),
                fidelity,
            });
        }
    }
    Ok(best.expect("at least one phase tried"))
}

/// HH-VV coherence magnitude, the element the decoherers leave alive.
pub fn hh_vv_coherence(rho: &DensityMatrix) -> f64 {
    rho.get(HH, VV).norm()
}
