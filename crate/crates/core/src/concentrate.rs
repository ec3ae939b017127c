//! Entanglement concentration schemes and their efficiency comparison.
//!
//! * Procrustean filtering: stacks of Brewster-angle glass pieces in both
//!   arms attenuate V relative to H; post-selecting surviving pairs drives a
//!   rotated MEMS towards (|HV> + |VH>)/sqrt2.
//! * Twirling followed by one recurrence round with ideal bilateral CNOTs.
//! * The two-copy polarizing-beam-splitter scheme applied without twirling.

use serde::{Deserialize, Serialize};

use crate::apparatus::{waveplate_unitary, WaveplateKind};
use crate::error::{Error, Result};
use crate::qmat::{self, c, CMatrix};
use crate::states::{self, Bell, DensityMatrix};

/// Below this trace nothing is considered to have survived.
pub const ZERO_SURVIVAL: f64 = 1e-15;
/// Longest trajectory computed.
pub const MAX_TRAJECTORY: usize = 64;

/// Measured single-piece transmissions.
pub const MEASURED_T_H: f64 = 0.990;
pub const MEASURED_T_V: f64 = 0.740;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarizerMode {
    /// Transmissions as measured: t_h = 0.990, t_v = 0.740.
    Measured,
    /// Lossless pass axis: t_h = 1, t_v = 0.740/0.990.
    Ideal,
}

impl std::str::FromStr for PolarizerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ideal" => Ok(PolarizerMode::Ideal),
            "measured" => Ok(PolarizerMode::Measured),
            other => Err(Error::Config(format!(
                "mode must be ideal or measured, got {other:?}"
            ))),
        }
    }
}

/// One glass piece: intensity transmissions for H and V.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialPolarizer {
    pub t_h: f64,
    pub t_v: f64,
}

impl PartialPolarizer {
    pub fn new(t_h: f64, t_v: f64) -> Result<Self> {
        for (name, t) in [("t_h", t_h), ("t_v", t_v)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::out_of_range(name, t, "[0, 1]"));
            }
        }
        Ok(PartialPolarizer { t_h, t_v })
    }

    pub fn from_mode(mode: PolarizerMode) -> Self {
        match mode {
            PolarizerMode::Measured => PartialPolarizer {
                t_h: MEASURED_T_H,
                t_v: MEASURED_T_V,
            },
            PolarizerMode::Ideal => PartialPolarizer {
                t_h: 1.0,
                t_v: MEASURED_T_V / MEASURED_T_H,
            },
        }
    }

    pub fn ideal() -> Self {
        Self::from_mode(PolarizerMode::Ideal)
    }

    pub fn measured() -> Self {
        Self::from_mode(PolarizerMode::Measured)
    }

    /// Single-arm amplitude filter for a stack of `n` pieces.
    fn amplitude_filter(&self, n: u32) -> CMatrix {
        CMatrix::from_diag(&[self.t_h.sqrt().powi(n as i32), self.t_v.sqrt().powi(n as i32)])
    }
}

/// A post-selected state with the probability of obtaining it.
#[derive(Debug, Clone, Serialize)]
pub struct FilterOutcome {
    pub state: DensityMatrix,
    pub success_prob: f64,
}

/// HWP at 45 degrees on arm 1, exchanging H and V there.
pub fn rotate_for_filtering(rho: &DensityMatrix) -> DensityMatrix {
    let swap = waveplate_unitary(WaveplateKind::Half, std::f64::consts::FRAC_PI_4);
    let u = qmat::kron(&swap, &CMatrix::identity(2)).expect("4x4 fits");
    rho.conjugated(&u)
}

/// Applies `n_pieces` glass pieces to each arm and post-selects survivors.
pub fn procrustean_filter(
    rho: &DensityMatrix,
    pol: PartialPolarizer,
    n_pieces: u32,
) -> Result<FilterOutcome> {
    let f = pol.amplitude_filter(n_pieces);
    let ff = qmat::kron(&f, &f)?;
    let sigma = &(&ff * rho.matrix()) * &ff;
    let tr = sigma.trace().re;
    if !(tr >= ZERO_SURVIVAL) {
        return Err(Error::ZeroSurvival { probability: tr });
    }
    let (state, success_prob) = DensityMatrix::normalize(&sigma);
    Ok(FilterOutcome {
        state,
        success_prob,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub n: u32,
    pub s_l: f64,
    pub t: f64,
    pub success_prob: f64,
    /// Fidelity with (|HV> + |VH>)/sqrt2.
    pub fidelity: f64,
}

/// Filtering trajectory for 0..=n_max pieces per arm. Stops early if the
/// survival probability underflows.
pub fn trajectory(
    rho0: &DensityMatrix,
    pol: PartialPolarizer,
    n_max: usize,
) -> Result<Vec<TrajectoryPoint>> {
    if n_max > MAX_TRAJECTORY {
        return Err(Error::out_of_range(
            "n_max",
            n_max as f64,
            format!("[0, {MAX_TRAJECTORY}]"),
        ));
    }
    let target = Bell::HvPlusVh.density();
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max as u32 {
        let outcome = match procrustean_filter(rho0, pol, n) {
            Ok(o) => o,
            Err(Error::ZeroSurvival { .. }) => break,
            Err(e) => return Err(e),
        };
        out.push(TrajectoryPoint {
            n,
            s_l: states::linear_entropy(&outcome.state),
            t: states::tangle(&outcome.state)?,
            success_prob: outcome.success_prob,
            fidelity: states::fidelity(&target, &outcome.state)?,
        });
    }
    Ok(out)
}

/// The Bell state with the largest overlap and that overlap.
pub fn dominant_bell(rho: &DensityMatrix) -> (Bell, f64) {
    Bell::ALL
        .iter()
        .map(|&b| (b, states::bell_overlap(rho, b)))
        .fold((Bell::HhPlusVv, f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        })
}

/// Random bilateral rotations: the Werner state (towards (|HH>+|VV>)/sqrt2)
/// with the same maximal Bell fidelity. The dominant Bell state is first
/// mapped onto |HH>+|VV> by a local Pauli, so only the fidelity matters.
pub fn twirl(rho: &DensityMatrix) -> DensityMatrix {
    let (_, f) = dominant_bell(rho);
    let p = states::werner_p_from_fidelity(f).clamp(0.0, 1.0);
    states::werner(p).expect("p clamped to [0, 1]")
}

/// One recurrence round on two Werner pairs of Bell fidelity `f`:
/// returns (success probability, output fidelity).
pub fn recurrence_round(f: f64) -> Result<(f64, f64)> {
    if !(0.25..=1.0).contains(&f) {
        return Err(Error::out_of_range("f", f, "[1/4, 1]"));
    }
    let g = (1.0 - f) / 3.0;
    let p = f * f + 2.0 * f * g + 5.0 * g * g;
    let f_out = (f * f + g * g) / p;
    Ok((p, f_out))
}

/// Two copies of `rho` on (a1 b1)(a2 b2); each side's PBS post-selects equal
/// polarizations (a1 = a2, b1 = b2). The second pair is then measured in the
/// +/-45 degree basis; outcomes with opposite signs get a Z correction on
/// a1, and all four outcomes are kept.
pub fn pbs_concentrate(rho: &DensityMatrix) -> Result<FilterOutcome> {
    let two_copy = qmat::kron(rho.matrix(), rho.matrix())?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let diag_basis = [[s, s], [s, -s]]; // <+|, <-| components on (H, V)
    let mut acc = CMatrix::zeros(4);
    for sa in 0..2 {
        for sb in 0..2 {
            let corr = if sa != sb { -1.0 } else { 1.0 };
            // Kraus operator 16 -> (a1 b1) embedded with the ancilla reset to |HH>.
            let mut k = CMatrix::zeros(16);
            for a1 in 0..2 {
                for b1 in 0..2 {
                    // post-selection keeps only a2 = a1, b2 = b1
                    let (a2, b2) = (a1, b1);
                    let src = (a1 << 3) | (b1 << 2) | (a2 << 1) | b2;
                    let dst = (a1 << 3) | (b1 << 2);
                    let phase = if a1 == 1 { corr } else { 1.0 };
                    let amp = diag_basis[sa][a2] * diag_basis[sb][b2] * phase;
                    k[(dst, src)] = c(amp, 0.0);
                }
            }
            let out = &(&k * &two_copy) * &k.dagger();
            acc = &acc + &out.partial_trace_second(4, 4);
        }
    }
    let tr = acc.trace().re;
    if !(tr >= ZERO_SURVIVAL) {
        return Err(Error::ZeroSurvival { probability: tr });
    }
    let (state, success_prob) = DensityMatrix::normalize(&acc);
    Ok(FilterOutcome {
        state,
        success_prob,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "pieces", rename_all = "snake_case")]
pub enum Scheme {
    Twirling,
    NoTwirling,
    Procrustean(u32),
}

impl Scheme {
    /// Input pairs consumed per attempt.
    pub fn pairs_consumed(self) -> f64 {
        match self {
            Scheme::Procrustean(_) => 1.0,
            Scheme::Twirling | Scheme::NoTwirling => 2.0,
        }
    }

    pub fn label(self) -> String {
        match self {
            Scheme::Twirling => "twirling".into(),
            Scheme::NoTwirling => "no_twirling".into(),
            Scheme::Procrustean(n) => format!("procrustean_{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeReport {
    pub scheme: Scheme,
    pub success_prob: f64,
    pub ef_success: f64,
    /// Average entanglement of formation per input pair.
    pub ef_per_pair: f64,
    /// State on success; `None` when nothing survives.
    pub output: Option<DensityMatrix>,
}

impl SchemeReport {
    fn new(scheme: Scheme, success_prob: f64, output: DensityMatrix) -> Result<Self> {
        let ef_success = states::entanglement_of_formation(&output)?;
        Ok(SchemeReport {
            scheme,
            success_prob,
            ef_success,
            ef_per_pair: success_prob * ef_success / scheme.pairs_consumed(),
            output: Some(output),
        })
    }
}

/// Efficiency of every scheme on the same input. The Procrustean rows rotate
/// the input with HWP4 first, as on the bench.
pub fn scheme_table(
    rho: &DensityMatrix,
    pol: PartialPolarizer,
    piece_counts: &[u32],
) -> Result<Vec<SchemeReport>> {
    let mut rows = Vec::with_capacity(piece_counts.len() + 2);

    let (_, f) = dominant_bell(rho);
    let twirled_f = f.clamp(0.25, 1.0);
    let (p, f_out) = recurrence_round(twirled_f)?;
    let werner_out = states::werner(states::werner_p_from_fidelity(f_out).clamp(0.0, 1.0))?;
    rows.push(SchemeReport::new(Scheme::Twirling, p, werner_out)?);

    let pbs = pbs_concentrate(rho)?;
    rows.push(SchemeReport::new(Scheme::NoTwirling, pbs.success_prob, pbs.state)?);

    let rotated = rotate_for_filtering(rho);
    for &n in piece_counts {
        let row = match procrustean_filter(&rotated, pol, n) {
            Ok(o) => SchemeReport::new(Scheme::Procrustean(n), o.success_prob, o.state)?,
            Err(Error::ZeroSurvival { .. }) => SchemeReport {
                scheme: Scheme::Procrustean(n),
                success_prob: 0.0,
                ef_success: 0.0,
                ef_per_pair: 0.0,
                output: None,
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(rows)
}
