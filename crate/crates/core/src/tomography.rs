//! Simulated polarization tomography and maximum-likelihood reconstruction.
//!
//! Each arm analyzes in one of the single-photon states H, V, D, A, R, L;
//! a setting is the product of the two analyzer states. Reconstruction
//! parameterizes rho = T T^dagger / Tr(T T^dagger) with T lower triangular
//! (real diagonal, 16 real parameters) so every estimate is physical, and
//! minimizes the Poisson negative log-likelihood of the coincidence counts.

use std::collections::{HashSet, VecDeque};
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmat::{self, c, CMatrix, Complex};
use crate::states::{DensityMatrix, PureState};

/// Guard added inside the logarithm of the likelihood.
pub const NLL_EPSILON: f64 = 1e-12;

/// Single-photon analyzer states.
pub fn analyzer(label: char) -> Option<[Complex; 2]> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Some(match label {
        'H' => [c(1.0, 0.0), c(0.0, 0.0)],
        'V' => [c(0.0, 0.0), c(1.0, 0.0)],
        'D' => [c(s, 0.0), c(s, 0.0)],
        'A' => [c(s, 0.0), c(-s, 0.0)],
        'R' => [c(s, 0.0), c(0.0, s)],
        'L' => [c(s, 0.0), c(0.0, -s)],
        _ => return None,
    })
}

#[derive(Debug, Clone)]
pub struct ProjectorSet {
    entries: Vec<(String, PureState)>,
}

impl ProjectorSet {
    pub fn new(entries: Vec<(String, PureState)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (label, _) in &entries {
            if !seen.insert(label.as_str()) {
                return Err(Error::Config(format!("duplicate projector label {label:?}")));
            }
        }
        Ok(ProjectorSet { entries })
    }

    fn products(letters: &str) -> Self {
        let mut entries = Vec::new();
        for a in letters.chars() {
            for b in letters.chars() {
                let psi = PureState::product(analyzer(a).unwrap(), analyzer(b).unwrap());
                entries.push((format!("{a}{b}"), psi));
            }
        }
        ProjectorSet { entries }
    }

    /// 16 settings from {H, V, D, R} in each arm.
    pub fn standard() -> Self {
        Self::products("HVDR")
    }

    /// 36 settings from {H, V, D, A, R, L} in each arm.
    pub fn extended() -> Self {
        Self::products("HVDARL")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, PureState)> {
        self.entries.iter()
    }

    pub fn get(&self, label: &str) -> Option<&PureState> {
        self.entries.iter().find(|(l, _)| l == label).map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub label: String,
    pub counts: u64,
    /// Expected number of pairs reaching the analyzers for this setting.
    pub exposure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Poisson,
    None,
}

/// Expected counts `exposure * <psi|rho|psi>` per setting, Poisson-sampled
/// or rounded.
pub fn simulate_counts(
    rho: &DensityMatrix,
    set: &ProjectorSet,
    exposure: f64,
    rng_seed: u64,
    noise: Noise,
) -> Result<Vec<CountRecord>> {
    if !(exposure > 0.0 && exposure.is_finite()) {
        return Err(Error::out_of_range("exposure", exposure, "(0, inf)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    set.iter()
        .map(|(label, psi)| {
            let mean = exposure * rho.overlap(psi).max(0.0);
            let counts = match noise {
                Noise::None => mean.round() as u64,
                Noise::Poisson if mean > 0.0 => {
                    let dist = Poisson::new(mean)
                        .map_err(|e| Error::Config(format!("poisson mean {mean}: {e}")))?;
                    dist.sample(&mut rng) as u64
                }
                Noise::Poisson => 0,
            };
            Ok(CountRecord {
                label: label.clone(),
                counts,
                exposure,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStrategy {
    /// Least-squares inversion clipped to the nearest PSD matrix.
    LinearInversion,
    MaximallyMixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MLSettings {
    pub max_iterations: usize,
    /// Stop once the infinity norm of the gradient of the per-pair NLL
    /// (NLL divided by the total exposure) falls below this.
    pub gradient_tolerance: f64,
    pub seed_strategy: SeedStrategy,
}

impl Default for MLSettings {
    fn default() -> Self {
        MLSettings {
            max_iterations: 5000,
            gradient_tolerance: 1e-8,
            seed_strategy: SeedStrategy::LinearInversion,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Reconstruction {
    pub state: DensityMatrix,
    pub iterations: usize,
    pub final_nll: f64,
    pub converged: bool,
    /// Negative log-likelihood after every accepted step (first entry is the seed).
    #[serde(skip)]
    pub nll_history: Vec<f64>,
}

/// Pairs of (projector, counts, exposure), sorted by label so the result
/// does not depend on record order.
struct Data {
    projectors: Vec<CMatrix>,
    counts: Vec<f64>,
    exposure: Vec<f64>,
    total_exposure: f64,
}

impl Data {
    fn new(records: &[CountRecord], set: &ProjectorSet) -> Result<Self> {
        let mut sorted: Vec<&CountRecord> = records.iter().collect();
        sorted.sort_by(|a, b| a.label.cmp(&b.label).then(a.counts.cmp(&b.counts)));
        let mut projectors = Vec::with_capacity(sorted.len());
        let mut counts = Vec::with_capacity(sorted.len());
        let mut exposure = Vec::with_capacity(sorted.len());
        for rec in sorted {
            let psi = set.get(&rec.label).ok_or_else(|| {
                Error::InsufficientSettings(format!("label {:?} is not in the projector set", rec.label))
            })?;
            if !(rec.exposure > 0.0 && rec.exposure.is_finite()) {
                return Err(Error::out_of_range("exposure", rec.exposure, "(0, inf)"));
            }
            projectors.push(CMatrix::outer(&psi.amp));
            counts.push(rec.counts as f64);
            exposure.push(rec.exposure);
        }
        let total_exposure = exposure.iter().sum();
        Ok(Data {
            projectors,
            counts,
            exposure,
            total_exposure,
        })
    }

    fn nll(&self, rho: &CMatrix) -> f64 {
        self.projectors
            .iter()
            .zip(self.counts.iter().zip(&self.exposure))
            .map(|(proj, (&n, &e))| {
                let p = trace_product(proj, rho);
                e * p - n * (e * p + NLL_EPSILON).ln()
            })
            .sum()
    }
}

/// Tr(a b) for Hermitian a, b.
fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

const N_PARAMS: usize = 16;

fn params_to_t(x: &[f64]) -> CMatrix {
    let mut t = CMatrix::zeros(4);
    for i in 0..4 {
        t[(i, i)] = c(x[i], 0.0);
    }
    let mut k = 4;
    for i in 1..4 {
        for j in 0..i {
            t[(i, j)] = c(x[k], x[k + 1]);
            k += 2;
        }
    }
    t
}

fn t_to_params(t: &CMatrix) -> Vec<f64> {
    let mut x = vec![0.0; N_PARAMS];
    for i in 0..4 {
        x[i] = t[(i, i)].re;
    }
    let mut k = 4;
    for i in 1..4 {
        for j in 0..i {
            x[k] = t[(i, j)].re;
            x[k + 1] = t[(i, j)].im;
            k += 2;
        }
    }
    x
}

fn rho_from_t(t: &CMatrix) -> CMatrix {
    let a = t * &t.dagger();
    let s = a.trace().re;
    a.scale_real(1.0 / s)
}

/// NLL (scaled by 1/total exposure) and its gradient in the T parameters.
fn objective(data: &Data, x: &[f64]) -> (f64, Vec<f64>) {
    let t = params_to_t(x);
    let a = &t * &t.dagger();
    let s = a.trace().re;
    let rho = a.scale_real(1.0 / s);
    let scale = 1.0 / data.total_exposure;
    let mut value = 0.0;
    let mut g = CMatrix::zeros(4);
    for (proj, (&n, &e)) in data.projectors.iter().zip(data.counts.iter().zip(&data.exposure)) {
        let p = trace_product(proj, &rho);
        value += e * p - n * (e * p + NLL_EPSILON).ln();
        let w = e - n * e / (e * p + NLL_EPSILON);
        // d p / dA = (P - p I) / s
        for i in 0..4 {
            for j in 0..4 {
                g[(i, j)] += proj[(i, j)] * (w / s);
            }
            g[(i, i)] -= c(w * p / s, 0.0);
        }
    }
    let m = &g * &t;
    let mut grad = vec![0.0; N_PARAMS];
    for i in 0..4 {
        grad[i] = 2.0 * m[(i, i)].re * scale;
    }
    let mut k = 4;
    for i in 1..4 {
        for j in 0..i {
            grad[k] = 2.0 * m[(i, j)].re * scale;
            grad[k + 1] = 2.0 * m[(i, j)].im * scale;
            k += 2;
        }
    }
    (value * scale, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Cholesky factor of a Hermitian positive-definite matrix.
fn cholesky(a: &CMatrix) -> Option<CMatrix> {
    let n = a.dim();
    let mut l = CMatrix::zeros(n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = c(d, 0.0);
        for i in (j + 1)..n {
            let mut z = a[(i, j)];
            for k in 0..j {
                z -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = z / d;
        }
    }
    Some(l)
}

/// Solves the square system `a x = b` by partially pivoted elimination.
/// Returns `None` when `a` is numerically singular.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-10 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            let pivot_row = a[col].clone();
            for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn pauli(k: usize) -> CMatrix {
    match k {
        0 => CMatrix::identity(2),
        1 => CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]),
        2 => CMatrix::sigma_y(),
        _ => CMatrix::from_diag(&[1.0, -1.0]),
    }
}

/// Least-squares estimate in the two-qubit Pauli basis, clipped to the
/// nearest PSD matrix and renormalized.
pub fn linear_inversion(records: &[CountRecord], set: &ProjectorSet) -> Result<DensityMatrix> {
    let data = Data::new(records, set)?;
    linear_inversion_from(&data)
}

fn linear_inversion_from(data: &Data) -> Result<DensityMatrix> {
    let basis: Vec<CMatrix> = (0..16)
        .map(|k| qmat::kron(&pauli(k / 4), &pauli(k % 4)).expect("4x4 fits"))
        .collect();
    let rows: Vec<Vec<f64>> = data
        .projectors
        .iter()
        .map(|proj| basis.iter().map(|b| trace_product(proj, b) / 4.0).collect())
        .collect();
    let freqs: Vec<f64> = data
        .counts
        .iter()
        .zip(&data.exposure)
        .map(|(n, e)| n / e)
        .collect();
    let mut ata = vec![vec![0.0; 16]; 16];
    let mut atf = vec![0.0; 16];
    for (row, &f) in rows.iter().zip(&freqs) {
        for i in 0..16 {
            atf[i] += row[i] * f;
            for j in 0..16 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let coeffs = solve_linear(ata, atf).ok_or_else(|| {
        Error::InsufficientSettings(format!(
            "{} settings do not span the 16-dimensional operator space",
            data.projectors.len()
        ))
    })?;
    let mut est = CMatrix::zeros(4);
    for (b, &cf) in basis.iter().zip(&coeffs) {
        est = &est + &b.scale_real(cf / 4.0);
    }
    let est = (&est + &est.dagger()).scale_real(0.5);
    let eig = qmat::hermitian_eigen(&est)?;
    let clipped = eig.map_values(|x| x.max(0.0));
    let tr = clipped.trace().re;
    if !(tr > 0.0) {
        return Ok(DensityMatrix::maximally_mixed());
    }
    Ok(DensityMatrix::normalize(&clipped).0)
}

const LBFGS_MEMORY: usize = 10;

/// Maximum-likelihood state from coincidence counts.
pub fn ml_reconstruct(records: &[CountRecord], set: &ProjectorSet, cfg: &MLSettings) -> Result<Reconstruction> {
    if cfg.max_iterations == 0 || !(cfg.gradient_tolerance > 0.0) {
        return Err(Error::Config("ML limits must be positive".into()));
    }
    let data = Data::new(records, set)?;
    // spanning check doubles as the linear-inversion seed
    let lin = linear_inversion_from(&data)?;
    let seed = match cfg.seed_strategy {
        SeedStrategy::LinearInversion => lin,
        SeedStrategy::MaximallyMixed => DensityMatrix::maximally_mixed(),
    };
    // keep the seed strictly inside the cone so its Cholesky factor exists
    let seed = seed.mix(&DensityMatrix::maximally_mixed(), 1e-3);
    let t0 = cholesky(seed.matrix()).expect("mixed seed is positive definite");

    let mut x = t_to_params(&t0);
    let (mut f, mut g) = objective(&data, &x);
    let mut history = vec![f * data.total_exposure];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(LBFGS_MEMORY);
    let mut iterations = 0;
    let mut converged = inf_norm(&g) < cfg.gradient_tolerance;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = mem
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or_else(|| 1e-2 / inf_norm(&g).max(1e-300));
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            mem.clear();
            dir = g.iter().map(|v| -v * 1e-2 / inf_norm(&g)).collect();
            slope = dot(&dir, &g);
        }

        // backtracking Armijo line search
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (fn_, gn) = objective(&data, &xn);
            if fn_ <= f + 1e-4 * step * slope && fn_.is_finite() {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if mem.len() == LBFGS_MEMORY {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        f = fn_;
        g = gn;
        history.push(f * data.total_exposure);
        converged = inf_norm(&g) < cfg.gradient_tolerance;
    }

    let rho = rho_from_t(&params_to_t(&x));
    let state = DensityMatrix::normalize(&rho).0;
    Ok(Reconstruction {
        final_nll: data.nll(state.matrix()),
        state,
        iterations,
        converged,
        nll_history: history,
    })
}

pub fn read_counts_csv<R: Read>(reader: R) -> Result<Vec<CountRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["label", "counts", "exposure"] {
        return Err(Error::Config(format!(
            "counts file header must be label,counts,exposure, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn write_counts_csv<W: Write>(writer: W, records: &[CountRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for rec in records {
        wtr.serialize(rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{self, mems_r, random_ginibre, HH};
    use crate::qmat::testutil::rng;
    use proptest::prelude::*;

    #[test]
    fn projector_sets() {
        let std16 = ProjectorSet::standard();
        let ext = ProjectorSet::extended();
        assert_eq!(std16.len(), 16);
        assert_eq!(ext.len(), 36);
        for (_, psi) in ext.iter() {
            let n: f64 = psi.amp.iter().map(|z| z.norm_sqr()).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let hh = ext.get("HH").unwrap();
        assert_eq!(hh.amp[0], c(1.0, 0.0));
        let dup = vec![("HH".to_string(), hh.clone()), ("HH".to_string(), hh.clone())];
        assert!(ProjectorSet::new(dup).is_err());
    }

    #[test]
    fn noiseless_counts() {
        let rho = DensityMatrix::basis(HH);
        let recs = simulate_counts(&rho, &ProjectorSet::standard(), 1000.0, 0, Noise::None).unwrap();
        let get = |l: &str| recs.iter().find(|r| r.label == l).unwrap().counts;
        assert_eq!(get("HH"), 1000);
        assert_eq!(get("VV"), 0);
        assert_eq!(get("HD"), 500);
        assert!(simulate_counts(&rho, &ProjectorSet::standard(), 0.0, 0, Noise::None).is_err());
    }

    #[test]
    fn poisson_counts_on_mixed_state() {
        // every product projector sees exposure/4 on I/4; chi^2 over seeds
        let rho = DensityMatrix::maximally_mixed();
        let set = ProjectorSet::extended();
        let exposure = 400.0;
        let mut chi2 = 0.0;
        let mut dof = 0;
        for seed in 0..20 {
            for rec in simulate_counts(&rho, &set, exposure, seed, Noise::Poisson).unwrap() {
                let mean = exposure / 4.0;
                chi2 += (rec.counts as f64 - mean).powi(2) / mean;
                dof += 1;
            }
        }
        // mean 1, sd sqrt(2/dof) ~ 0.053
        let reduced = chi2 / dof as f64;
        assert!((reduced - 1.0).abs() < 0.25, "{reduced}");
        let a = simulate_counts(&rho, &set, exposure, 7, Noise::Poisson).unwrap();
        let b = simulate_counts(&rho, &set, exposure, 7, Noise::Poisson).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_inversion_is_exact_on_noiseless_data() {
        let mut r = rng(41);
        let rho = random_ginibre(&mut r);
        let recs = simulate_counts(&rho, &ProjectorSet::extended(), 1e12, 0, Noise::None).unwrap();
        let est = linear_inversion(&recs, &ProjectorSet::extended()).unwrap();
        assert!((est.matrix() - rho.matrix()).frobenius_norm() < 1e-6);
    }

    #[test]
    fn insufficient_settings() {
        let set = ProjectorSet::standard();
        let recs: Vec<CountRecord> = simulate_counts(&DensityMatrix::maximally_mixed(), &set, 100.0, 0, Noise::None)
            .unwrap()
            .into_iter()
            .take(10)
            .collect();
        assert!(matches!(
            ml_reconstruct(&recs, &set, &MLSettings::default()),
            Err(Error::InsufficientSettings(_))
        ));
        let bogus = vec![CountRecord {
            label: "XX".into(),
            counts: 1,
            exposure: 1.0,
        }];
        assert!(ml_reconstruct(&bogus, &set, &MLSettings::default()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(42);
        let rho = random_ginibre(&mut r);
        let set = ProjectorSet::extended();
        let recs = simulate_counts(&rho, &set, 1e3, 3, Noise::Poisson).unwrap();
        let data = Data::new(&recs, &set).unwrap();
        let x: Vec<f64> = (0..N_PARAMS).map(|k| 0.3 + 0.05 * k as f64).collect();
        let (_, g) = objective(&data, &x);
        for k in 0..N_PARAMS {
            let h = 1e-6;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (objective(&data, &xp).0 - objective(&data, &xm).0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn noiseless_reconstruction_of_mems() {
        let truth = mems_r(2.0 / 3.0).unwrap();
        let set = ProjectorSet::extended();
        let recs = simulate_counts(&truth, &set, 1e5, 0, Noise::None).unwrap();
        let out = ml_reconstruct(&recs, &set, &MLSettings::default()).unwrap();
        let f = states::fidelity(&truth, &out.state).unwrap();
        assert!(f >= 0.9999, "{f}");
        assert!(out.nll_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn sixteen_settings_full_rank() {
        let mut r = rng(43);
        let truth = random_ginibre(&mut r);
        let set = ProjectorSet::standard();
        let recs = simulate_counts(&truth, &set, 1e9, 0, Noise::None).unwrap();
        let out = ml_reconstruct(&recs, &set, &MLSettings::default()).unwrap();
        assert!((out.state.matrix() - truth.matrix()).frobenius_norm() < 1e-4);
    }

    #[test]
    fn rank_one_limit() {
        let set = ProjectorSet::extended();
        let recs: Vec<CountRecord> = set
            .iter()
            .map(|(l, _)| CountRecord {
                label: l.clone(),
                counts: if l == "HH" { 5000 } else { 0 },
                exposure: 1e4,
            })
            .collect();
        let out = ml_reconstruct(&recs, &set, &MLSettings::default()).unwrap();
        assert!(out.state.populations()[HH] >= 0.99);
    }

    #[test]
    fn record_order_does_not_matter() {
        let truth = mems_r(0.8).unwrap();
        let set = ProjectorSet::extended();
        let recs = simulate_counts(&truth, &set, 1e3, 5, Noise::Poisson).unwrap();
        let mut rev = recs.clone();
        rev.reverse();
        let cfg = MLSettings {
            max_iterations: 300,
            ..Default::default()
        };
        let a = ml_reconstruct(&recs, &set, &cfg).unwrap();
        let b = ml_reconstruct(&rev, &set, &cfg).unwrap();
        assert!((a.state.matrix() - b.state.matrix()).max_abs() < 1e-10);
    }

    #[test]
    fn counts_csv_round_trip() {
        let recs = simulate_counts(&mems_r(0.9).unwrap(), &ProjectorSet::standard(), 100.0, 1, Noise::Poisson).unwrap();
        let mut buf = Vec::new();
        write_counts_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("label,counts,exposure\n"));
        assert_eq!(read_counts_csv(buf.as_slice()).unwrap(), recs);
        assert!(read_counts_csv("a,b,c\nHH,1,2\n".as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn arbitrary_counts_give_a_physical_state(counts in proptest::collection::vec(0u64..2000, 36)) {
            let set = ProjectorSet::extended();
            let recs: Vec<CountRecord> = set
                .iter()
                .zip(&counts)
                .map(|((l, _), &n)| CountRecord { label: l.clone(), counts: n, exposure: 1e3 })
                .collect();
            let cfg = MLSettings { max_iterations: 300, ..Default::default() };
            let out = ml_reconstruct(&recs, &set, &cfg).unwrap();
            prop_assert!(DensityMatrix::new(out.state.matrix().clone()).is_ok());
            prop_assert!(out.nll_history.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
