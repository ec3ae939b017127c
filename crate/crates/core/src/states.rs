//! Two-qubit states and the measures used to place them on the
//! linear-entropy/tangle plane.
//!
//! The basis order is fixed throughout the crate: |HH>, |HV>, |VH>, |VV>,
//! i.e. index = 2*(arm 1 is V) + (arm 2 is V).

use std::f64::consts::FRAC_1_SQRT_2;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmat::{self, c, CMatrix, Complex};

pub const HH: usize = 0;
pub const HV: usize = 1;
pub const VH: usize = 2;
pub const VV: usize = 3;

/// Tolerance on Hermiticity and unit trace of a [`DensityMatrix`].
pub const STATE_TOL: f64 = 1e-10;
/// Most negative eigenvalue a [`DensityMatrix`] may carry.
pub const EIGEN_FLOOR: f64 = -1e-9;

pub const BASIS_LABEL: &str = "HH,HV,VH,VV";

/// A 4x4 Hermitian, unit-trace, positive-semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    /// Validates every invariant and reports the first one violated.
    pub fn new(mat: CMatrix) -> Result<Self> {
        if mat.dim() != 4 {
            return Err(Error::InvalidState(format!(
                "dimension must be 4, got {}",
                mat.dim()
            )));
        }
        if !mat.is_finite() {
            return Err(Error::InvalidState("entries must be finite".into()));
        }
        let herm = mat.hermiticity_error();
        if herm > STATE_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian (max deviation {herm:e})"
            )));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::InvalidState(format!(
                "trace must be 1, got {}{:+}i",
                tr.re, tr.im
            )));
        }
        let eig = qmat::hermitian_eigen(&mat)?;
        let min = eig.values[3];
        if min < EIGEN_FLOOR {
            return Err(Error::InvalidState(format!(
                "not positive semidefinite (eigenvalue {min:e})"
            )));
        }
        Ok(DensityMatrix(mat))
    }

    /// For matrices that are physical by construction.
    pub(crate) fn new_unchecked(mat: CMatrix) -> Self {
        debug_assert_eq!(mat.dim(), 4);
        DensityMatrix(mat)
    }

    /// Normalizes a nonzero PSD operator to unit trace, dropping rounding
    /// asymmetry. Returns the trace that was divided out.
    pub(crate) fn normalize(unnormalized: &CMatrix) -> (Self, f64) {
        let tr = unnormalized.trace().re;
        let sym = (unnormalized + &unnormalized.dagger()).scale_real(0.5 / tr);
        (DensityMatrix(sym), tr)
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(CMatrix::identity(4).scale_real(0.25))
    }

    pub fn from_pure(psi: &PureState) -> Self {
        DensityMatrix(CMatrix::outer(&psi.amp))
    }

    /// Computational-basis projector, e.g. `basis(HV)` for |HV><HV|.
    pub fn basis(index: usize) -> Self {
        let mut d = [0.0; 4];
        d[index] = 1.0;
        DensityMatrix(CMatrix::from_diag(&d))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> Complex {
        self.0[(i, j)]
    }

    /// Diagonal (populations) in basis order.
    pub fn populations(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|i| self.0[(i, i)].re)
    }

    /// <psi|rho|psi>.
    pub fn overlap(&self, psi: &PureState) -> f64 {
        self.0.expectation(&psi.amp).re
    }

    /// U rho U^dagger for a 4x4 unitary.
    pub(crate) fn conjugated(&self, u: &CMatrix) -> Self {
        let m = &(u * &self.0) * &u.dagger();
        let sym = (&m + &m.dagger()).scale_real(0.5);
        DensityMatrix(sym)
    }

    /// Convex combination `(1-w)*self + w*other`.
    pub fn mix(&self, other: &DensityMatrix, w: f64) -> Self {
        DensityMatrix(&self.0.scale_real(1.0 - w) + &other.0.scale_real(w))
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(qmat::hermitian_eigen(&self.0)?.values)
    }

    pub fn to_json(&self) -> DensityMatrixJson {
        DensityMatrixJson {
            dim: 4,
            re: (0..4)
                .map(|i| (0..4).map(|j| self.0[(i, j)].re).collect())
                .collect(),
            im: (0..4)
                .map(|i| (0..4).map(|j| self.0[(i, j)].im).collect())
                .collect(),
            basis: BASIS_LABEL.to_string(),
        }
    }

    pub fn from_json(doc: &DensityMatrixJson) -> Result<Self> {
        if doc.dim != 4 {
            return Err(Error::InvalidState(format!(
                "dimension must be 4, got {}",
                doc.dim
            )));
        }
        if doc.basis.replace(' ', "") != BASIS_LABEL {
            return Err(Error::InvalidState(format!(
                "basis must be \"{BASIS_LABEL}\", got \"{}\"",
                doc.basis
            )));
        }
        let shape_ok = |m: &Vec<Vec<f64>>| m.len() == 4 && m.iter().all(|r| r.len() == 4);
        if !shape_ok(&doc.re) || !shape_ok(&doc.im) {
            return Err(Error::InvalidState("re and im must both be 4x4".into()));
        }
        let entries = (0..16)
            .map(|k| c(doc.re[k / 4][k % 4], doc.im[k / 4][k % 4]))
            .collect();
        DensityMatrix::new(CMatrix::from_rows(4, entries))
    }
}

/// Serialized form: `{ "dim": 4, "re": [[..]], "im": [[..]], "basis": "HH,HV,VH,VV" }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityMatrixJson {
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
    pub basis: String,
}

impl Serialize for DensityMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = DensityMatrixJson::deserialize(d)?;
        DensityMatrix::from_json(&doc).map_err(serde::de::Error::custom)
    }
}

/// Normalized two-qubit state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    pub amp: [Complex; 4],
}

impl PureState {
    pub fn new(amp: [Complex; 4]) -> Result<Self> {
        let norm: f64 = amp.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(Error::InvalidState(format!(
                "state vector norm^2 is {norm}, expected 1"
            )));
        }
        Ok(PureState { amp })
    }

    /// Rescales to unit norm. Panics on the zero vector.
    pub fn normalized(amp: [Complex; 4]) -> Self {
        let norm = amp.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(norm > 0.0, "cannot normalize the zero vector");
        PureState {
            amp: amp.map(|z| z / norm),
        }
    }

    pub fn product(a: [Complex; 2], b: [Complex; 2]) -> Self {
        PureState::normalized([a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]])
    }

    pub fn inner(&self, other: &PureState) -> Complex {
        self.amp.iter().zip(&other.amp).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix::from_pure(self)
    }
}

/// The four maximally entangled basis states, named by their content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bell {
    /// (|HH> + |VV>)/sqrt2, the state the MEMS family is built around.
    HhPlusVv,
    HhMinusVv,
    /// (|HV> + |VH>)/sqrt2, the target of partial-polarizer filtering.
    HvPlusVh,
    HvMinusVh,
}

impl Bell {
    pub const ALL: [Bell; 4] = [Bell::HhPlusVv, Bell::HhMinusVv, Bell::HvPlusVh, Bell::HvMinusVh];

    pub fn state(self) -> PureState {
        let s = FRAC_1_SQRT_2;
        let z = c(0.0, 0.0);
        let amp = match self {
            Bell::HhPlusVv => [c(s, 0.), z, z, c(s, 0.)],
            Bell::HhMinusVv => [c(s, 0.), z, z, c(-s, 0.)],
            Bell::HvPlusVh => [z, c(s, 0.), c(s, 0.), z],
            Bell::HvMinusVh => [z, c(s, 0.), c(-s, 0.), z],
        };
        PureState { amp }
    }

    pub fn density(self) -> DensityMatrix {
        self.state().density()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subclass {
    I,
    II,
}

impl Subclass {
    /// Natural subclass for a concurrence value (I at and above 2/3).
    pub fn for_r(r: f64) -> Self {
        if r >= 2.0 / 3.0 {
            Subclass::I
        } else {
            Subclass::II
        }
    }
}

impl std::str::FromStr for Subclass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "i" | "1" => Ok(Subclass::I),
            "II" | "ii" | "2" => Ok(Subclass::II),
            other => Err(Error::Config(format!(
                "subclass must be I or II, got {other:?}"
            ))),
        }
    }
}

/// Concurrence target `r` of a maximally entangled mixed state together
/// with its subclass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemsParam {
    pub r: f64,
    pub subclass: Subclass,
}

/// Rounding slack on the 2/3 subclass boundary, so that decimal inputs such
/// as 0.6667 for subclass I are not rejected over the last digit.
const SUBCLASS_SLACK: f64 = 1e-4;

impl MemsParam {
    pub fn new(r: f64, subclass: Subclass) -> Result<Self> {
        let ok = match subclass {
            Subclass::I => (2.0 / 3.0 - SUBCLASS_SLACK..=1.0).contains(&r),
            Subclass::II => (0.0..=2.0 / 3.0 + SUBCLASS_SLACK).contains(&r),
        };
        if !ok {
            let range = match subclass {
                Subclass::I => "[2/3, 1] for subclass I",
                Subclass::II => "[0, 2/3] for subclass II",
            };
            return Err(Error::out_of_range("r", r, range));
        }
        Ok(MemsParam { r, subclass })
    }

    pub fn for_r(r: f64) -> Result<Self> {
        MemsParam::new(r, Subclass::for_r(r))
    }
}

/// The maximally entangled mixed state with concurrence `p.r`.
///
/// Subclass I: populations (r/2, 1-r, 0, r/2); subclass II: (1/3, 1/3, 0, 1/3).
/// Both carry an HH-VV coherence of r/2.
pub fn mems(p: MemsParam) -> DensityMatrix {
    let r = p.r;
    let (a, b) = match p.subclass {
        Subclass::I => (r / 2.0, 1.0 - r),
        Subclass::II => (1.0 / 3.0, 1.0 / 3.0),
    };
    let mut m = CMatrix::from_diag(&[a, b, 0.0, a]);
    m[(HH, VV)] = c(r / 2.0, 0.0);
    m[(VV, HH)] = c(r / 2.0, 0.0);
    DensityMatrix::new_unchecked(m)
}

/// Shorthand for `mems` with the subclass picked from `r`.
pub fn mems_r(r: f64) -> Result<DensityMatrix> {
    Ok(mems(MemsParam::for_r(r)?))
}

/// `p |HH+VV><HH+VV|/2 + (1-p) I/4`.
pub fn werner(p: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::out_of_range("p", p, "[0, 1]"));
    }
    Ok(werner_unchecked(p))
}

fn werner_unchecked(p: f64) -> DensityMatrix {
    Bell::HhPlusVv
        .density()
        .mix(&DensityMatrix::maximally_mixed(), 1.0 - p)
}

/// Werner mixing probability whose Bell fidelity is `f`: (1 + 3p)/4 = f.
pub fn werner_p_from_fidelity(f: f64) -> f64 {
    (4.0 * f - 1.0) / 3.0
}

pub fn werner_fidelity_from_p(p: f64) -> f64 {
    (1.0 + 3.0 * p) / 4.0
}

/// cos(theta)|HH> + e^{i phi} sin(theta)|VV>.
pub fn nonmax_pure(theta: f64, phi: f64) -> PureState {
    let z = c(0.0, 0.0);
    PureState {
        amp: [
            c(theta.cos(), 0.0),
            z,
            z,
            Complex::from_polar(theta.sin(), phi),
        ],
    }
}

/// (sigma_y x sigma_y) rho* (sigma_y x sigma_y).
pub fn spin_flip(rho: &DensityMatrix) -> CMatrix {
    let yy = qmat::kron(&CMatrix::sigma_y(), &CMatrix::sigma_y()).expect("4x4 fits");
    &(&yy * &rho.matrix().conj()) * &yy
}

/// Square roots of the eigenvalues of rho * rho~, sorted non-increasing.
///
/// Computed through the Hermitian matrix sqrt(rho) rho~ sqrt(rho), which has
/// the same spectrum as rho rho~.
pub fn spin_flip_spectrum(rho: &DensityMatrix) -> Result<[f64; 4]> {
    let s = qmat::sqrt_psd(rho.matrix())?;
    let m = &(&s * &spin_flip(rho)) * &s;
    let m = (&m + &m.dagger()).scale_real(0.5);
    let eig = qmat::psd_eigen(&m)?;
    let mut lam = [0.0; 4];
    for (l, v) in lam.iter_mut().zip(&eig.values) {
        *l = v.sqrt();
    }
    Ok(lam)
}

pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    let l = spin_flip_spectrum(rho)?;
    Ok((l[0] - l[1] - l[2] - l[3]).clamp(0.0, 1.0))
}

/// Concurrence squared.
pub fn tangle(rho: &DensityMatrix) -> Result<f64> {
    Ok(concurrence(rho)?.powi(2))
}

/// Tr(rho^2).
pub fn purity(rho: &DensityMatrix) -> f64 {
    // Tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
    rho.matrix().entries().iter().map(|z| z.norm_sqr()).sum()
}

/// (4/3)(1 - Tr rho^2): 0 for pure states, 1 for I/4. Rounding is clamped
/// so pure states do not come out slightly negative.
pub fn linear_entropy(rho: &DensityMatrix) -> f64 {
    (4.0 / 3.0 * (1.0 - purity(rho))).clamp(0.0, 1.0)
}

/// Uhlmann fidelity |Tr sqrt(sqrt(a) b sqrt(a))|^2.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    let s = qmat::sqrt_psd(a.matrix())?;
    let m = &(&s * b.matrix()) * &s;
    let m = (&m + &m.dagger()).scale_real(0.5);
    let tr = qmat::trace_sqrt_psd(&m)?;
    Ok((tr * tr).clamp(0.0, 1.0))
}

pub fn bell_overlap(rho: &DensityMatrix, which: Bell) -> f64 {
    rho.overlap(&which.state())
}

/// Binary entropy in bits with h(0) = h(1) = 0.
pub fn binary_entropy(x: f64) -> f64 {
    let term = |p: f64| if p <= 0.0 { 0.0 } else { -p * p.log2() };
    term(x) + term(1.0 - x)
}

pub fn ef_from_concurrence(conc: f64) -> f64 {
    let conc = conc.clamp(0.0, 1.0);
    binary_entropy((1.0 + (1.0 - conc * conc).sqrt()) / 2.0)
}

pub fn entanglement_of_formation(rho: &DensityMatrix) -> Result<f64> {
    Ok(ef_from_concurrence(concurrence(rho)?))
}

/// Summary of the standard measures of one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub t: f64,
    pub s_l: f64,
    pub c: f64,
    pub e_f: f64,
    pub purity: f64,
}

impl Measures {
    pub fn of(rho: &DensityMatrix) -> Result<Self> {
        let conc = concurrence(rho)?;
        Ok(Measures {
            t: conc * conc,
            s_l: linear_entropy(rho),
            c: conc,
            e_f: ef_from_concurrence(conc),
            purity: purity(rho),
        })
    }
}

/// Random state G G^dagger / Tr(G G^dagger) with i.i.d. complex normal G.
pub fn random_ginibre<R: Rng + ?Sized>(rng: &mut R) -> DensityMatrix {
    let entries = (0..16)
        .map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let g = CMatrix::from_rows(4, entries);
    DensityMatrix::normalize(&(&g * &g.dagger())).0
}

/// Haar-random 2x2 unitary.
pub fn random_unitary2<R: Rng + ?Sized>(rng: &mut R) -> CMatrix {
    let mut v: [Complex; 4] =
        std::array::from_fn(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let n0 = (v[0].norm_sqr() + v[2].norm_sqr()).sqrt();
    v[0] /= n0;
    v[2] /= n0;
    // Gram-Schmidt the second column against the first.
    let proj = v[0].conj() * v[1] + v[2].conj() * v[3];
    v[1] -= proj * v[0];
    v[3] -= proj * v[2];
    let n1 = (v[1].norm_sqr() + v[3].norm_sqr()).sqrt();
    v[1] /= n1;
    v[3] /= n1;
    CMatrix::from_rows(2, v.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::testutil::rng;

    const EPS: f64 = 1e-9;

    fn local(u1: &CMatrix, u2: &CMatrix) -> CMatrix {
        qmat::kron(u1, u2).unwrap()
    }

    #[test]
    fn mems_constructors() {
        let bell = mems_r(1.0).unwrap();
        assert!((&bell.matrix().clone() - Bell::HhPlusVv.density().matrix()).max_abs() < 1e-15);

        let t = 1.0 / 3.0;
        let boundary_i = mems(MemsParam::new(2.0 / 3.0, Subclass::I).unwrap());
        let boundary_ii = mems(MemsParam::new(2.0 / 3.0, Subclass::II).unwrap());
        assert!((boundary_i.matrix() - boundary_ii.matrix()).max_abs() < 1e-15);
        assert!((boundary_i.populations()[0] - t).abs() < 1e-15);
        assert!((boundary_i.get(HH, VV).re - t).abs() < 1e-15);

        let m = mems_r(0.778).unwrap();
        let p = m.populations();
        assert!((p[0] - 0.389).abs() < 1e-12 && (p[1] - 0.222).abs() < 1e-12);
        assert_eq!(p[2], 0.0);
        assert!((m.get(VV, HH).re - 0.389).abs() < 1e-12);
        // constructor output is a valid density matrix
        DensityMatrix::new(m.into_matrix()).unwrap();
    }

    #[test]
    fn mems_range_errors() {
        assert!(matches!(
            MemsParam::new(0.9, Subclass::II),
            Err(Error::OutOfRange { .. })
        ));
        assert!(MemsParam::new(0.5, Subclass::I).is_err());
        assert!(MemsParam::new(1.01, Subclass::I).is_err());
        assert!(MemsParam::new(-0.1, Subclass::II).is_err());
        assert!(werner(1.5).is_err());
    }

    #[test]
    fn werner_measures() {
        let w0 = werner(0.0).unwrap();
        assert!(tangle(&w0).unwrap().abs() < EPS);
        assert!((linear_entropy(&w0) - 1.0).abs() < EPS);
        let w1 = werner(1.0).unwrap();
        assert!((tangle(&w1).unwrap() - 1.0).abs() < EPS);
        assert!(linear_entropy(&w1).abs() < EPS);
        let w = werner(1.0 / 3.0).unwrap();
        assert!(tangle(&w).unwrap().abs() < EPS);
        assert!((linear_entropy(&w) - 8.0 / 9.0).abs() < EPS);
        for p in [0.2, 0.5, 0.9] {
            let expected = ((3.0 * p - 1.0) / 2.0f64).max(0.0);
            assert!((concurrence(&werner(p).unwrap()).unwrap() - expected).abs() < EPS);
            let ov = bell_overlap(&werner(p).unwrap(), Bell::HhPlusVv);
            assert!((ov - (1.0 + 3.0 * p) / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nonmax_pure_concurrence() {
        let bell = nonmax_pure(std::f64::consts::FRAC_PI_4, 0.0).density();
        assert!((concurrence(&bell).unwrap() - 1.0).abs() < EPS);
        assert!(concurrence(&nonmax_pure(0.0, 0.3).density()).unwrap().abs() < EPS);
        let th = std::f64::consts::PI / 6.0;
        let cc = concurrence(&nonmax_pure(th, 0.0).density()).unwrap();
        assert!((cc - 3f64.sqrt() / 2.0).abs() < EPS);
        let cc = concurrence(&nonmax_pure(th, 1.1).density()).unwrap();
        assert!((cc - 3f64.sqrt() / 2.0).abs() < EPS);
    }

    #[test]
    fn concurrence_of_mems_and_mixed() {
        for r in [0.2, 0.5, 2.0 / 3.0, 0.778, 1.0] {
            let cc = concurrence(&mems_r(r).unwrap()).unwrap();
            assert!((cc - r).abs() < EPS, "r={r} got {cc}");
        }
        assert!(concurrence(&DensityMatrix::maximally_mixed()).unwrap().abs() < EPS);
    }

    #[test]
    fn tangle_examples() {
        let t = tangle(&mems_r(2.0 / 3.0).unwrap()).unwrap();
        assert!((t - 4.0 / 9.0).abs() < EPS);
        assert!((tangle(&Bell::HvMinusVh.density()).unwrap() - 1.0).abs() < EPS);
        let t = tangle(&mems(MemsParam::new(0.3651, Subclass::II).unwrap())).unwrap();
        assert!((t - 0.1333).abs() < 1e-4);
    }

    #[test]
    fn linear_entropy_examples() {
        assert!(linear_entropy(&Bell::HvPlusVh.density()).abs() < 1e-12);
        assert!((linear_entropy(&DensityMatrix::maximally_mixed()) - 1.0).abs() < 1e-12);
        let s = linear_entropy(&mems_r(2.0 / 3.0).unwrap());
        assert!((s - 16.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn purity_examples() {
        assert!((purity(&DensityMatrix::maximally_mixed()) - 0.25).abs() < 1e-15);
        assert!((purity(&nonmax_pure(0.3, 0.2).density()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_examples() {
        let mut r = rng(11);
        for _ in 0..20 {
            let rho = random_ginibre(&mut r);
            assert!((fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-9);
            let sigma = random_ginibre(&mut r);
            let ab = fidelity(&rho, &sigma).unwrap();
            let ba = fidelity(&sigma, &rho).unwrap();
            assert!((ab - ba).abs() < 1e-9);
        }
        for _ in 0..20 {
            let u = random_unitary2(&mut r);
            let v = random_unitary2(&mut r);
            let psi = PureState::normalized(local(&u, &v).mul_vec(&Bell::HhPlusVv.state().amp).try_into().unwrap());
            let chi = PureState::normalized(std::array::from_fn(|i| {
                c((i as f64 + 0.3).sin(), (i as f64 * 1.7).cos())
            }));
            let expected = psi.inner(&chi).norm_sqr();
            let f = fidelity(&psi.density(), &chi.density()).unwrap();
            assert!((f - expected).abs() < 1e-9);
        }
        // rank-deficient target against the filtering Bell state
        let swap = CMatrix::from_real_rows(&[&[0., 1.], &[1., 0.]]);
        let rotated = mems_r(2.0 / 3.0)
            .unwrap()
            .conjugated(&local(&swap, &CMatrix::identity(2)));
        let f = fidelity(&rotated, &Bell::HvPlusVh.density()).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn entanglement_of_formation_examples() {
        let ef = entanglement_of_formation(&mems_r(0.778).unwrap()).unwrap();
        assert!((ef - 0.69).abs() < 0.005, "{ef}");
        assert!((ef_from_concurrence(1.0) - 1.0).abs() < 1e-15);
        assert_eq!(ef_from_concurrence(0.0), 0.0);
        let w = werner(werner_p_from_fidelity(0.778)).unwrap();
        let ef = entanglement_of_formation(&w).unwrap();
        assert!((ef - 0.418).abs() < 0.002, "{ef}");
    }

    #[test]
    fn ef_monotone_in_concurrence() {
        let vals: Vec<f64> = (0..=1000).map(|i| ef_from_concurrence(i as f64 / 1000.0)).collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn mems_above_werner() {
        // closed forms for the Werner curve: S_L = 1 - p^2, C = (3p-1)/2
        for i in 0..100 {
            let r = i as f64 / 99.0;
            let m = mems_r(r).unwrap();
            let s = linear_entropy(&m);
            let t = tangle(&m).unwrap();
            if s > 8.0 / 9.0 {
                continue;
            }
            let p = (1.0 - s).sqrt();
            let tw = ((3.0 * p - 1.0) / 2.0f64).max(0.0).powi(2);
            assert!(t >= tw - 1e-9, "r={r}: T={t} < Werner {tw}");
        }
    }

    #[test]
    fn local_unitaries_preserve_measures() {
        let mut r = rng(5);
        for _ in 0..50 {
            let rho = random_ginibre(&mut r);
            let u = local(&random_unitary2(&mut r), &random_unitary2(&mut r));
            let out = rho.conjugated(&u);
            assert!((tangle(&rho).unwrap() - tangle(&out).unwrap()).abs() < 1e-9);
            assert!((linear_entropy(&rho) - linear_entropy(&out)).abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip_and_diagnostics() {
        let m = mems_r(0.8).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: DensityMatrix = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);

        let mut doc = m.to_json();
        doc.re[0][0] += 0.5;
        let err = DensityMatrix::from_json(&doc).unwrap_err().to_string();
        assert!(err.contains("trace"), "{err}");

        let mut doc = m.to_json();
        doc.im[0][3] = 0.1;
        let err = DensityMatrix::from_json(&doc).unwrap_err().to_string();
        assert!(err.contains("Hermitian"), "{err}");

        let mut doc = m.to_json();
        doc.re[1][1] -= 0.3;
        doc.re[2][2] += 0.3;
        let err = DensityMatrix::from_json(&doc).unwrap_err().to_string();
        assert!(err.contains("positive semidefinite"), "{err}");

        let mut doc = m.to_json();
        doc.basis = "HH,VV,HV,VH".into();
        let err = DensityMatrix::from_json(&doc).unwrap_err().to_string();
        assert!(err.contains("basis"), "{err}");
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut r = rng(9);
        for _ in 0..20 {
            let u = random_unitary2(&mut r);
            let uu = &u.dagger() * &u;
            assert!((&uu - &CMatrix::identity(2)).frobenius_norm() < 1e-12);
        }
    }
}
