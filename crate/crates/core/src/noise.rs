//! Covariance matrices of the Gaussian error angles and correlated sampling.
//!
//! Angles are indexed by the flat qubit-major noise index; entries are in
//! radians squared and times are in units of the layer duration.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::circuit::NoiseLayout;
use crate::error::{check_dim, Error, Result};
use crate::rng;

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;
/// Relative eigenvalue magnitude treated as zero when factoring.
pub const EIG_FLOOR: f64 = 1e-13;

/// Symmetric positive semi-definite covariance of the error angles.
#[derive(Clone, Debug, PartialEq)]
pub struct CovMatrix {
    m: DMatrix<f64>,
}

impl CovMatrix {
    /// Validates symmetry and positive semi-definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax() / scale;
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let m = (&m + m.transpose()) * 0.5;
        let c = CovMatrix { m };
        c.min_eigenvalue_check()?;
        Ok(c)
    }

    fn new_unchecked(m: DMatrix<f64>) -> Self {
        CovMatrix { m }
    }

    fn max_diag(&self) -> f64 {
        self.m.diagonal().iter().fold(0.0f64, |a, &b| a.max(b))
    }

    fn min_eigenvalue_check(&self) -> Result<()> {
        if self.dim() == 0 {
            return Ok(());
        }
        let min = SymmetricEigen::new(self.m.clone()).eigenvalues.min();
        let tol = PSD_TOL * self.max_diag();
        if min < -tol {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
                tolerance: tol,
            });
        }
        Ok(())
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new_unchecked(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.m.diagonal().iter().copied().collect()
    }

    /// `Σ_min`: the same variances with all correlations removed.
    pub fn to_min(&self) -> CovMatrix {
        cov_min(&self.diagonal()).expect("diagonal of a PSD matrix is non-negative")
    }

    /// `Σ_max`: perfectly positively correlated angles with the same variances.
    pub fn to_max(&self) -> CovMatrix {
        let sig: Vec<f64> = self.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
        cov_max(&sig, &vec![1; sig.len()]).expect("lengths agree")
    }

    /// Principal submatrix on `indices`.
    pub fn submatrix(&self, indices: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(indices.len(), indices.len(), |a, b| {
            self.m[(indices[a], indices[b])]
        })
    }
}

/// Cross-qubit correlation of the exponential model.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum SpatialKernel {
    /// Independent qubits.
    #[default]
    Diagonal,
    /// Symmetric PSD `n x n` kernel multiplying the temporal correlation.
    Matrix(DMatrix<f64>),
}

/// `Σ_{(α,j),(α',j')} = K_{αα'} σ² exp(-|t_j - t_j'| t_g / τ_c)` over the
/// sites of `layout`. An infinite `tau_c` gives the quasistatic limit.
pub fn cov_exponential_layout(
    layout: &NoiseLayout,
    sigma: f64,
    tau_c: f64,
    t_g: f64,
    spatial: &SpatialKernel,
) -> Result<CovMatrix> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    if !(tau_c > 0.0) {
        return Err(Error::InvalidParameter(format!("tau_c must be > 0, got {tau_c}")));
    }
    if !(t_g > 0.0) || !t_g.is_finite() {
        return Err(Error::InvalidParameter(format!("t_g must be > 0, got {t_g}")));
    }
    let n = layout.num_qubits();
    if let SpatialKernel::Matrix(k) = spatial {
        check_dim(n, k.nrows())?;
        check_dim(n, k.ncols())?;
    }
    let sites = layout.sites();
    let s2 = sigma * sigma;
    let rate = t_g / tau_c;
    let m = DMatrix::from_fn(sites.len(), sites.len(), |a, b| {
        let (sa, sb) = (&sites[a], &sites[b]);
        let k = match spatial {
            SpatialKernel::Diagonal => {
                if sa.qubit == sb.qubit {
                    1.0
                } else {
                    0.0
                }
            }
            SpatialKernel::Matrix(k) => k[(sa.qubit, sb.qubit)],
        };
        if k == 0.0 {
            return 0.0;
        }
        let dt = (sa.time as f64 - sb.time as f64).abs();
        let decay = if dt == 0.0 { 1.0 } else { (-dt * rate).exp() };
        k * s2 * decay
    });
    match spatial {
        SpatialKernel::Diagonal => Ok(CovMatrix::new_unchecked(m)),
        SpatialKernel::Matrix(_) => CovMatrix::new(m),
    }
}

/// Exponential covariance on the full `n x l` grid of noise sites.
pub fn cov_exponential(n: usize, l: usize, sigma: f64, tau_c: f64, t_g: f64) -> Result<CovMatrix> {
    cov_exponential_layout(&NoiseLayout::grid(n, l), sigma, tau_c, t_g, &SpatialKernel::Diagonal)
}

/// `σ² I`.
pub fn cov_markovian(dim: usize, sigma: f64) -> Result<CovMatrix> {
    cov_min(&vec![sigma * sigma; dim])
}

/// All entries `σ²` within each qubit block; with `maximal_spatial` every
/// entry is `σ²`.
pub fn cov_quasistatic(layout: &NoiseLayout, sigma: f64, maximal_spatial: bool) -> Result<CovMatrix> {
    let n = layout.num_qubits();
    let kernel = if maximal_spatial {
        SpatialKernel::Matrix(DMatrix::from_element(n, n, 1.0))
    } else {
        SpatialKernel::Diagonal
    };
    cov_exponential_layout(layout, sigma, f64::INFINITY, 1.0, &kernel)
}

pub fn cov_min(diag: &[f64]) -> Result<CovMatrix> {
    if let Some(v) = diag.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidParameter(format!("negative variance {v}")));
    }
    Ok(CovMatrix::new_unchecked(DMatrix::from_diagonal(
        &DVector::from_column_slice(diag),
    )))
}

/// Rank-one `s sᵀ` with `s_k = signs_k · sigmas_k`.
pub fn cov_max(sigmas: &[f64], signs: &[i8]) -> Result<CovMatrix> {
    check_dim(sigmas.len(), signs.len())?;
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidParameter(format!("negative standard deviation {s}")));
    }
    if let Some(s) = signs.iter().find(|s| s.abs() != 1) {
        return Err(Error::InvalidParameter(format!("sign must be +1 or -1, got {s}")));
    }
    let v = DVector::from_iterator(
        sigmas.len(),
        sigmas.iter().zip(signs).map(|(s, &g)| s * g as f64),
    );
    Ok(CovMatrix::new_unchecked(&v * v.transpose()))
}

/// One draw of the error angles, in flat noise-index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRealization {
    pub theta: Vec<f64>,
}

/// Symmetric square root `Σ^(1/2) = V Λ^(1/2) Vᵀ` of each independent block
/// of `Σ`, with eigenvalues clipped at zero.
///
/// The symmetric root is basis-free, so the same standard-normal draw maps
/// continuously onto realizations of neighbouring covariances; sweeps over
/// a parameter then share common random numbers.
#[derive(Clone, Debug)]
pub struct NoiseSampler {
    dim: usize,
    blocks: Vec<(Vec<usize>, DMatrix<f64>)>,
    seed: u64,
}

/// Connected components of the non-zero pattern, each sorted.
fn independent_blocks(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let dim = m.nrows();
    let mut parent: Vec<usize> = (0..dim).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..dim {
        for j in i + 1..dim {
            if m[(i, j)] != 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; dim];
    for i in 0..dim {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

impl NoiseSampler {
    pub fn new(cov: &CovMatrix, seed: u64) -> Result<Self> {
        let tol = PSD_TOL * cov.max_diag();
        let mut blocks = Vec::new();
        for idx in independent_blocks(cov.matrix()) {
            let sub = cov.submatrix(&idx);
            let eig = SymmetricEigen::new(sub);
            if let Some(&bad) = eig.eigenvalues.iter().find(|&&v| v < -tol) {
                return Err(Error::NotPsd {
                    min_eigenvalue: bad,
                    tolerance: tol,
                });
            }
            // eigenvalues at round-off level are structural zeros (e.g. rank one)
            let floor = EIG_FLOOR * eig.eigenvalues.amax();
            let roots = eig.eigenvalues.map(|v| if v > floor { v.sqrt() } else { 0.0 });
            let v = &eig.eigenvectors;
            let root = v * DMatrix::from_diagonal(&roots) * v.transpose();
            blocks.push((idx, root));
        }
        Ok(NoiseSampler {
            dim: cov.dim(),
            blocks,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Realization number `index`; independent of any other draw.
    pub fn draw(&self, index: u64) -> NoiseRealization {
        let mut rng = rng::stream(self.seed, rng::tag::NOISE, index);
        let z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut theta = vec![0.0; self.dim];
        for (idx, root) in &self.blocks {
            for (r, &i) in idx.iter().enumerate() {
                theta[i] = idx
                    .iter()
                    .enumerate()
                    .map(|(c, &j)| root[(r, c)] * z[j])
                    .sum();
            }
        }
        NoiseRealization { theta }
    }
}

/// Realizations `0..count` of `cov` under `seed`.
pub fn sample(cov: &CovMatrix, seed: u64, count: usize) -> Result<Vec<NoiseRealization>> {
    let s = NoiseSampler::new(cov, seed)?;
    Ok((0..count as u64).map(|k| s.draw(k)).collect())
}
