//! Pauli eigenvalues of the twirled circuit channel, their Gaussian averages,
//! the no-error probability, and the extremal-covariance bounds.
//!
//! For a Pauli `Q` with commutation mask `M_Q` and Gaussian angles of
//! covariance `Σ`, the resummed eigenvalue averages to
//! `det(1 + 4 M_Q Σ)^(-1/2)`. The determinant equals that of `1 + 4 Σ̃` where
//! `Σ̃` is the principal submatrix of `Σ` on the set bits, which is SPD and
//! is evaluated by Cholesky in log space.

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::noise::CovMatrix;
use crate::pauli::{propagate_noise_axes, CliffordCircuit, CommutationMask, PauliString};
use crate::rng;

/// Default largest register for the exact `4^n` Pauli sum.
pub const DEFAULT_EXACT_LIMIT: usize = 12;

/// Paulis per deterministic reduction chunk.
const CHUNK: usize = 1 << 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactSum,
    PauliSampled,
    MonteCarlo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ExactSum => "exact-sum",
            Method::PauliSampled => "pauli-sampled",
            Method::MonteCarlo => "monte-carlo",
        }
    }
}

/// Circuit fidelity with its statistical error. `std_error` is zero exactly
/// for exact sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityEstimate {
    pub n: usize,
    pub p: f64,
    pub p_std_error: f64,
    pub value: f64,
    pub std_error: f64,
    pub method: Method,
}

impl FidelityEstimate {
    /// From a no-error probability estimate.
    pub fn from_p(n: usize, p: f64, p_std_error: f64, method: Method) -> Self {
        let scale = dim_ratio(n);
        FidelityEstimate {
            n,
            p,
            p_std_error,
            value: affine_fidelity(p, n),
            std_error: p_std_error * scale,
            method,
        }
    }

    /// From a direct fidelity estimate.
    pub fn from_fidelity(n: usize, f: f64, std_error: f64, method: Method) -> Self {
        let scale = dim_ratio(n);
        let d = 2f64.powi(n as i32);
        FidelityEstimate {
            n,
            p: (f * (d + 1.0) - 1.0) / d,
            p_std_error: std_error / scale,
            value: f,
            std_error,
            method,
        }
    }
}

fn dim_ratio(n: usize) -> f64 {
    let d = 2f64.powi(n as i32);
    d / (d + 1.0)
}

fn affine_fidelity(p: f64, n: usize) -> f64 {
    let d = 2f64.powi(n as i32);
    (d * p + 1.0) / (d + 1.0)
}

/// `F = (2^n p + 1) / (2^n + 1)`.
pub fn fidelity_from_p(p: f64, n: usize) -> Result<f64> {
    if !(-1e-12..=1.0 + 1e-12).contains(&p) {
        return Err(Error::InvalidParameter(format!("probability {p} outside [0, 1]")));
    }
    Ok(affine_fidelity(p, n))
}

/// `prod_k cos(2 θ_k)` over set bits.
pub fn eigenvalue_exact(theta: &[f64], mask: &CommutationMask) -> Result<f64> {
    check_dim(mask.len(), theta.len())?;
    Ok(mask.ones().map(|k| (2.0 * theta[k]).cos()).product())
}

/// `exp(-2 Σ θ_k²)` over set bits.
pub fn eigenvalue_resummed(theta: &[f64], mask: &CommutationMask) -> Result<f64> {
    check_dim(mask.len(), theta.len())?;
    Ok((-2.0 * mask.ones().map(|k| theta[k] * theta[k]).sum::<f64>()).exp())
}

/// `max_k θ_k² · Σ_k θ_k²` over set bits: the scale of the terms dropped by
/// the resummation relative to those kept.
pub fn resummation_budget(theta: &[f64], mask: &CommutationMask) -> Result<f64> {
    check_dim(mask.len(), theta.len())?;
    let sq: Vec<f64> = mask.ones().map(|k| theta[k] * theta[k]).collect();
    Ok(sq.iter().cloned().fold(0.0, f64::max) * sq.iter().sum::<f64>())
}

/// `-½ log det(1 + c Σ̃)` for an SPD-compatible principal submatrix.
pub(crate) fn log_det_half(sub: DMatrix<f64>, c: f64) -> Result<f64> {
    let k = sub.nrows();
    if k == 0 {
        return Ok(0.0);
    }
    let a = DMatrix::identity(k, k) + sub * c;
    let chol = Cholesky::new(a).ok_or(Error::NotPsd {
        min_eigenvalue: f64::NAN,
        tolerance: 0.0,
    })?;
    Ok(-chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// `det(1 + 4 M_Q Σ)^(-1/2)`.
pub fn eigenvalue_gaussian(mask: &CommutationMask, cov: &CovMatrix) -> Result<f64> {
    check_dim(mask.len(), cov.dim())?;
    let idx: Vec<usize> = mask.ones().collect();
    Ok(log_det_half(cov.submatrix(&idx), 4.0)?.exp())
}

/// Second-order expansion around `Σ = 0`:
/// `1 - 2 tr[MΣ] + 2 tr[MΣ]² + 4 tr[(MΣ)²]`.
pub fn eigenvalue_perturbative(mask: &CommutationMask, cov: &CovMatrix) -> Result<f64> {
    check_dim(mask.len(), cov.dim())?;
    let idx: Vec<usize> = mask.ones().collect();
    let sub = cov.submatrix(&idx);
    let tr = sub.trace();
    let tr2 = sub.component_mul(&sub.transpose()).sum();
    Ok(1.0 - 2.0 * tr + 2.0 * tr * tr + 4.0 * tr2)
}

/// Leading-order covariance `½ Σ_{jj'}²` of the error probabilities
/// `sin² θ_j` and `sin² θ_j'`.
pub fn error_prob_covariance(sigma_entry: f64) -> f64 {
    0.5 * sigma_entry * sigma_entry
}

/// Exact `cov(sin² θ_a, sin² θ_b)` for jointly Gaussian zero-mean angles:
/// `¼ exp(-2(v_a + v_b)) (cosh(4 c) - 1)`, whose leading term is `2 c²`.
pub fn error_prob_covariance_exact(var_a: f64, var_b: f64, cov_ab: f64) -> f64 {
    0.25 * (-2.0 * (var_a + var_b)).exp() * ((4.0 * cov_ab).cosh() - 1.0)
}

/// No-error probability of the untwirled single-qubit idle circuit under
/// `exp(-i Z θ_j)` dephasing: `½ + ½ exp(-2 Σ_{jk} Σ_jk)`.
pub fn bare_free_induction_p(block: &CovMatrix) -> f64 {
    0.5 + 0.5 * (-2.0 * block.matrix().sum()).exp()
}

/// Propagated noise axes of a circuit in packed form, for fast masks.
#[derive(Clone, Debug)]
pub struct MaskTable {
    n: usize,
    axes: Vec<(u64, u64)>,
}

impl MaskTable {
    pub fn new(circuit: &CliffordCircuit) -> Result<Self> {
        let n = circuit.num_qubits();
        if n > 64 {
            return Err(Error::ResourceLimit(format!(
                "analytic engine packs Paulis into 64 bits; got {n} qubits"
            )));
        }
        let axes = propagate_noise_axes(circuit).iter().map(|p| p.packed()).collect();
        Ok(MaskTable { n, axes })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn num_sites(&self) -> usize {
        self.axes.len()
    }

    /// Flat indices of axes anticommuting with the packed Pauli `(x, z)`.
    pub fn anticommuting(&self, x: u64, z: u64) -> Vec<usize> {
        self.axes
            .iter()
            .enumerate()
            .filter(|(_, &(ax, az))| ((x & az) ^ (z & ax)).count_ones() & 1 == 1)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn mask(&self, q: &PauliString) -> Result<CommutationMask> {
        check_dim(self.n, q.num_qubits())?;
        let (x, z) = q.packed();
        let mut m = CommutationMask::zeros(self.axes.len());
        for i in self.anticommuting(x, z) {
            m.set(i);
        }
        Ok(m)
    }

    /// Gaussian eigenvalue of the packed Pauli.
    pub fn eigenvalue(&self, x: u64, z: u64, cov: &CovMatrix) -> Result<f64> {
        let idx = self.anticommuting(x, z);
        Ok(log_det_half(cov.submatrix(&idx), 4.0)?.exp())
    }
}

/// Splits Pauli number `index` (qubit `k` at bits `2k`, `2k+1`) into packed
/// `(x, z)`.
pub fn unpack_index(n: usize, index: u64) -> (u64, u64) {
    let mut x = 0u64;
    let mut z = 0u64;
    for k in 0..n {
        x |= ((index >> (2 * k)) & 1) << k;
        z |= ((index >> (2 * k + 1)) & 1) << k;
    }
    (x, z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Exact,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnalyticOptions {
    pub mode: Mode,
    /// Largest `n` accepted by exact mode.
    pub exact_limit: usize,
    /// Paulis drawn in sampled mode.
    pub budget: usize,
    pub seed: u64,
}

impl Default for AnalyticOptions {
    fn default() -> Self {
        AnalyticOptions {
            mode: Mode::Exact,
            exact_limit: DEFAULT_EXACT_LIMIT,
            budget: 4096,
            seed: 0,
        }
    }
}

/// Average Gaussian eigenvalue over all or sampled Paulis.
pub fn no_error_probability(
    circuit: &CliffordCircuit,
    cov: &CovMatrix,
    opts: &AnalyticOptions,
) -> Result<FidelityEstimate> {
    let table = MaskTable::new(circuit)?;
    no_error_probability_with(&table, cov, opts)
}

pub fn no_error_probability_with(
    table: &MaskTable,
    cov: &CovMatrix,
    opts: &AnalyticOptions,
) -> Result<FidelityEstimate> {
    check_dim(table.num_sites(), cov.dim())?;
    let n = table.n;
    match opts.mode {
        Mode::Exact => {
            if n > opts.exact_limit {
                return Err(Error::ResourceLimit(format!(
                    "exact Pauli sum over 4^{n} terms exceeds the limit n = {}; use sampled mode",
                    opts.exact_limit
                )));
            }
            let total = 1u64 << (2 * n);
            let chunks = total.div_ceil(CHUNK as u64);
            let partial: Vec<f64> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let lo = c * CHUNK as u64;
                    let hi = (lo + CHUNK as u64).min(total);
                    let mut s = 0.0;
                    for i in lo..hi {
                        let (x, z) = unpack_index(n, i);
                        s += table.eigenvalue(x, z, cov)?;
                    }
                    Ok(s)
                })
                .collect::<Result<_>>()?;
            let p = partial.iter().sum::<f64>() / total as f64;
            Ok(FidelityEstimate::from_p(n, p, 0.0, Method::ExactSum))
        }
        Mode::Sampled => {
            if opts.budget < 2 {
                return Err(Error::InvalidParameter("sampled mode needs budget >= 2".into()));
            }
            let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
            let values: Vec<f64> = (0..opts.budget as u64)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng::stream(opts.seed, rng::tag::PAULIS, i);
                    let x = r.random::<u64>() & mask;
                    let z = r.random::<u64>() & mask;
                    table.eigenvalue(x, z, cov)
                })
                .collect::<Result<_>>()?;
            let (mean, se) = mean_and_se(&values);
            Ok(FidelityEstimate::from_p(n, mean, se, Method::PauliSampled))
        }
    }
}

/// Mean and standard error of the mean, summed in order.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Fidelity at `Σ_min` and `Σ_max` built from the diagonal of `cov`.
pub fn fidelity_bounds(
    circuit: &CliffordCircuit,
    cov: &CovMatrix,
    opts: &AnalyticOptions,
) -> Result<(FidelityEstimate, FidelityEstimate)> {
    let table = MaskTable::new(circuit)?;
    check_dim(table.num_sites(), cov.dim())?;
    Ok((
        no_error_probability_with(&table, &cov.to_min(), opts)?,
        no_error_probability_with(&table, &cov.to_max(), opts)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{cov_exponential, cov_markovian, cov_max, cov_min, cov_quasistatic};
    use crate::circuit::NoiseLayout;
    use crate::pauli::CliffordTableau;

    fn mask(bits: &[bool]) -> CommutationMask {
        CommutationMask::from_bools(bits)
    }

    fn idle(n: usize, l: usize) -> CliffordCircuit {
        CliffordCircuit::with_full_noise(n, vec![CliffordTableau::identity(n); l]).unwrap()
    }

    #[test]
    fn exact_eigenvalue_examples() {
        assert_eq!(eigenvalue_exact(&[0.3, 0.1], &mask(&[false, false])).unwrap(), 1.0);
        let v = eigenvalue_exact(&[std::f64::consts::FRAC_PI_4], &mask(&[true])).unwrap();
        assert!(v.abs() < 1e-15);
        let v = eigenvalue_exact(&[0.1, 0.2], &mask(&[true, true])).unwrap();
        assert!((v - 0.2f64.cos() * 0.4f64.cos()).abs() < 1e-15);
        assert!(eigenvalue_exact(&[0.1], &mask(&[true, true])).is_err());
    }

    #[test]
    fn resummed_dominates_exact_below_quarter_turn() {
        for i in 0..=200 {
            let t = std::f64::consts::FRAC_PI_4 * i as f64 / 200.0;
            let m = mask(&[true]);
            assert!(eigenvalue_resummed(&[t], &m).unwrap() >= eigenvalue_exact(&[t], &m).unwrap());
        }
        assert_eq!(eigenvalue_resummed(&[0.0, 0.0], &mask(&[true, true])).unwrap(), 1.0);
    }

    #[test]
    fn resummation_error_is_bounded_by_budget() {
        // |log cos 2θ + 2θ²| ≤ C θ⁴ with C = 2 for |θ| ≤ 0.5
        let thetas = [0.5, -0.3, 0.2, 0.05, -0.45];
        for k in 1..=thetas.len() {
            let th = &thetas[..k];
            let m = mask(&vec![true; k]);
            let le = eigenvalue_exact(th, &m).unwrap().ln();
            let lr = eigenvalue_resummed(th, &m).unwrap().ln();
            assert!((le - lr).abs() <= 2.0 * resummation_budget(th, &m).unwrap());
        }
    }

    #[test]
    fn gaussian_limiting_forms() {
        let s2: f64 = 0.15 * 0.15;
        let c = cov_markovian(6, 0.15).unwrap();
        let m = mask(&[true, false, true, true, false, true]);
        let v = eigenvalue_gaussian(&m, &c).unwrap();
        assert!((v - (1.0 + 4.0 * s2).powf(-2.0)).abs() < 1e-14);

        let c = cov_quasistatic(&NoiseLayout::grid(1, 6), 0.15, false).unwrap();
        let v = eigenvalue_gaussian(&m, &c).unwrap();
        assert!((v - (1.0 + 16.0 * s2).powf(-0.5)).abs() < 1e-14);

        assert_eq!(eigenvalue_gaussian(&m, &CovMatrix::zeros(6)).unwrap(), 1.0);
    }

    #[test]
    fn gaussian_matches_naive_determinant() {
        let c = cov_exponential(2, 5, 0.3, 3.0, 1.0).unwrap();
        let m = mask(&[true, true, false, true, false, false, true, true, true, false]);
        let d = DMatrix::from_fn(10, 10, |i, j| if m.get(i) { 4.0 * c.get(i, j) } else { 0.0 })
            + DMatrix::identity(10, 10);
        let naive = d.determinant().powf(-0.5);
        let v = eigenvalue_gaussian(&m, &c).unwrap();
        assert!((v - naive).abs() < 1e-12 * naive);
    }

    #[test]
    fn perturbative_expansion() {
        let m = mask(&[true, false, true]);
        assert_eq!(eigenvalue_perturbative(&m, &CovMatrix::zeros(3)).unwrap(), 1.0);
        let c = cov_min(&[0.01, 0.02, 0.03]).unwrap();
        let tr: f64 = 0.04;
        let sq: f64 = 0.01f64.powi(2) + 0.03f64.powi(2);
        let v = eigenvalue_perturbative(&m, &c).unwrap();
        assert!((v - (1.0 - 2.0 * tr + 2.0 * tr * tr + 4.0 * sq)).abs() < 1e-15);
    }

    #[test]
    fn perturbative_error_is_third_order() {
        let base = cov_exponential(2, 3, 1.0, 2.0, 1.0).unwrap();
        let m = mask(&[true, true, false, true, false, true]);
        let err = |eps: f64| {
            let c = CovMatrix::new(base.matrix() * eps).unwrap();
            (eigenvalue_gaussian(&m, &c).unwrap() - eigenvalue_perturbative(&m, &c).unwrap()).abs()
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        let order = (e1 / e2).log2();
        assert!((order - 3.0).abs() < 0.1, "observed order {order}");
    }

    #[test]
    fn error_probability_covariance() {
        assert_eq!(error_prob_covariance(0.0), 0.0);
        let (s2, tau, d) = (0.0025f64, 3.0f64, 2.0f64);
        let v = error_prob_covariance(s2 * (-d / tau).exp());
        assert!((v - 0.5 * s2 * s2 * (-d / (tau / 2.0)).exp()).abs() < 1e-20);
        // the exact form decays at half the correlation time too, with
        // leading coefficient 2
        let c = s2 * (-d / tau).exp();
        let exact = error_prob_covariance_exact(s2, s2, c);
        assert!((exact / (2.0 * c * c) - 1.0).abs() < 0.02);
    }

    #[test]
    fn fidelity_conversion() {
        assert_eq!(fidelity_from_p(1.0, 3).unwrap(), 1.0);
        assert!((fidelity_from_p(0.5, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((fidelity_from_p(0.0, 2).unwrap() - 0.2).abs() < 1e-15);
        assert!(fidelity_from_p(1.5, 2).is_err());
    }

    #[test]
    fn free_induction() {
        assert_eq!(bare_free_induction_p(&CovMatrix::zeros(3)), 1.0);
        let (l, s) = (5usize, 0.02f64);
        let q = cov_quasistatic(&NoiseLayout::grid(1, l), s, false).unwrap();
        let expect = 0.5 + 0.5 * (-2.0 * (l * l) as f64 * s * s).exp();
        assert!((bare_free_induction_p(&q) - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_covariance_gives_unit_probability() {
        let c = idle(2, 3);
        let e = no_error_probability(&c, &CovMatrix::zeros(6), &AnalyticOptions::default()).unwrap();
        assert_eq!(e.p, 1.0);
        assert_eq!(e.value, 1.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn single_qubit_idle_by_hand() {
        let (l, s) = (4usize, 0.1f64);
        let e = no_error_probability(&idle(1, l), &cov_markovian(l, s).unwrap(), &AnalyticOptions::default())
            .unwrap();
        let expect = 0.25 * (2.0 + 2.0 * (1.0 + 4.0 * s * s).powf(-(l as f64) / 2.0));
        assert!((e.p - expect).abs() < 1e-15);
    }

    #[test]
    fn exact_mode_refuses_large_registers() {
        let c = idle(3, 1);
        let opts = AnalyticOptions {
            exact_limit: 2,
            ..Default::default()
        };
        let err = no_error_probability(&c, &CovMatrix::zeros(3), &opts).unwrap_err();
        assert!(matches!(err, Error::ResourceLimit(_)));
    }

    #[test]
    fn sampled_agrees_with_exact() {
        let t = CliffordTableau::from_gates(
            2,
            &[crate::circuit::Gate::H(0), crate::circuit::Gate::Cx(0, 1)],
        )
        .unwrap();
        let c = CliffordCircuit::with_full_noise(2, vec![t; 3]).unwrap();
        let cov = cov_exponential(2, 3, 0.3, 2.0, 1.0).unwrap();
        let exact = no_error_probability(&c, &cov, &AnalyticOptions::default()).unwrap();
        let opts = AnalyticOptions {
            mode: Mode::Sampled,
            budget: 16,
            seed: 9,
            ..Default::default()
        };
        let s = no_error_probability(&c, &cov, &opts).unwrap();
        assert_eq!(s.method, Method::PauliSampled);
        assert!(s.p_std_error > 0.0);
        assert!((s.p - exact.p).abs() <= 3.0 * s.p_std_error);
    }

    #[test]
    fn bounds_saturate() {
        let c = idle(1, 4);
        let opts = AnalyticOptions::default();
        let d = cov_min(&[0.01, 0.02, 0.03, 0.04]).unwrap();
        let (lo, _) = fidelity_bounds(&c, &d, &opts).unwrap();
        assert_eq!(lo.value, no_error_probability(&c, &d, &opts).unwrap().value);
        let r = cov_max(&[0.1, 0.2, 0.1, 0.3], &[1, 1, 1, 1]).unwrap();
        let (_, hi) = fidelity_bounds(&c, &r, &opts).unwrap();
        assert!((hi.value - no_error_probability(&c, &r, &opts).unwrap().value).abs() < 1e-15);
    }
}
