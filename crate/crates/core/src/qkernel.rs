//! Leading-order memory kernels of a qubit register coupled to a Gaussian
//! bath, and a dense check that Pauli averaging removes the part weighted by
//! the bath susceptibility.
//!
//! Superoperators act on column-stacked density matrices, so
//! `vec(X ρ Y) = (Yᵀ ⊗ X) vec(ρ)`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::circuit::{Circuit, Gate, Layer};
use crate::error::{check_dim, Error, Result};
use crate::finite_time::{pauli_from_index, ControlSchedule};
use crate::statevec::pauli_matrix;

/// Largest register the dense superoperators are built for.
pub const MAX_QUBITS: usize = 3;

type Op = DMatrix<C64>;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `ρ ↦ X ρ`.
pub fn left(x: &Op) -> Op {
    Op::identity(x.nrows(), x.nrows()).kronecker(x)
}

/// `ρ ↦ ρ Y`.
pub fn right(y: &Op) -> Op {
    y.transpose().kronecker(&Op::identity(y.nrows(), y.nrows()))
}

/// `ρ ↦ X ρ Y`.
pub fn sandwich(x: &Op, y: &Op) -> Op {
    y.transpose().kronecker(x)
}

/// `ρ ↦ [A, [B, ρ]]`.
pub fn double_commutator(a: &Op, b: &Op) -> Op {
    left(&(a * b)) - sandwich(a, b) - sandwich(b, a) + right(&(b * a))
}

/// `ρ ↦ [A, {B, ρ}]`.
pub fn commutator_anticommutator(a: &Op, b: &Op) -> Op {
    left(&(a * b)) + sandwich(a, b) - sandwich(b, a) - right(&(b * a))
}

/// The four pieces of `½ χ [A1, {A2, ρ}]`:
/// `A1 A2 ρ`, `-ρ A2 A1`, `A1 ρ A2` and `-A2 ρ A1`, each weighted by `½ χ`.
#[derive(Clone, Debug)]
pub struct KernelTerm {
    pub t1: f64,
    pub t2: f64,
    pub a1: Op,
    pub a2: Op,
    pub chi: f64,
    pub terms: [Op; 4],
}

impl KernelTerm {
    pub fn new(a1: Op, a2: Op, chi: f64, t1: f64, t2: f64) -> Self {
        let w = c(0.5 * chi);
        let terms = [
            left(&(&a1 * &a2)) * w,
            -right(&(&a2 * &a1)) * w,
            sandwich(&a1, &a2) * w,
            -sandwich(&a2, &a1) * w,
        ];
        KernelTerm {
            t1,
            t2,
            a1,
            a2,
            chi,
            terms,
        }
    }

    pub fn total(&self) -> Op {
        self.terms.iter().fold(Op::zeros(self.terms[0].nrows(), self.terms[0].ncols()), |acc, t| acc + t)
    }
}

/// Time dependence of the bath correlator `S(t) = S_R(t) + i S_I(t)`.
#[derive(Clone, Debug, PartialEq)]
pub enum CorrelatorShape {
    /// Zero-temperature Ohmic bath with exponential cutoff:
    /// `S(t) = (η ω_c² / π) / (1 + i ω_c t)²`.
    Ohmic { eta: f64, cutoff: f64 },
    /// Samples at non-negative times, linearly interpolated and extended to
    /// negative times as an even real part and odd imaginary part.
    Sampled {
        times: Vec<f64>,
        real: Vec<f64>,
        imag: Vec<f64>,
    },
}

/// `S^{αα'}(t) = coupling[α][α'] · S(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BathCorrelator {
    pub shape: CorrelatorShape,
    pub coupling: DMatrix<f64>,
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let k = times.partition_point(|&x| x <= t);
    if k == 0 {
        return values[0];
    }
    if k >= times.len() {
        return values[times.len() - 1];
    }
    let (t0, t1) = (times[k - 1], times[k]);
    let w = (t - t0) / (t1 - t0);
    values[k - 1] * (1.0 - w) + values[k] * w
}

impl BathCorrelator {
    pub fn ohmic(eta: f64, cutoff: f64, ops: usize) -> Self {
        BathCorrelator {
            shape: CorrelatorShape::Ohmic { eta, cutoff },
            coupling: DMatrix::identity(ops, ops),
        }
    }

    pub fn sampled(times: Vec<f64>, real: Vec<f64>, imag: Vec<f64>, coupling: DMatrix<f64>) -> Result<Self> {
        check_dim(times.len(), real.len())?;
        check_dim(times.len(), imag.len())?;
        if times.is_empty() || times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "correlator samples need strictly increasing times starting at 0".into(),
            ));
        }
        if imag[0] != 0.0 {
            return Err(Error::InvalidParameter("an odd imaginary part must vanish at t = 0".into()));
        }
        Ok(BathCorrelator {
            shape: CorrelatorShape::Sampled { times, real, imag },
            coupling,
        })
    }

    pub fn num_ops(&self) -> usize {
        self.coupling.nrows()
    }

    fn shape_real(&self, t: f64) -> f64 {
        match &self.shape {
            CorrelatorShape::Ohmic { eta, cutoff } => {
                let x = cutoff * t;
                eta * cutoff * cutoff / std::f64::consts::PI * (1.0 - x * x) / (1.0 + x * x).powi(2)
            }
            CorrelatorShape::Sampled { times, real, .. } => interpolate(times, real, t.abs()),
        }
    }

    fn shape_imag(&self, t: f64) -> f64 {
        match &self.shape {
            CorrelatorShape::Ohmic { eta, cutoff } => {
                let x = cutoff * t;
                -eta * cutoff * cutoff / std::f64::consts::PI * 2.0 * x / (1.0 + x * x).powi(2)
            }
            CorrelatorShape::Sampled { times, imag, .. } => t.signum() * interpolate(times, imag, t.abs()),
        }
    }

    pub fn s_r(&self, a: usize, b: usize, t: f64) -> f64 {
        self.coupling[(a, b)] * self.shape_real(t)
    }

    pub fn s_i(&self, a: usize, b: usize, t: f64) -> f64 {
        self.coupling[(a, b)] * self.shape_imag(t)
    }

    /// Kubo susceptibility `χ(t) = 2 θ(t) S_I(t)`.
    pub fn chi(&self, a: usize, b: usize, t: f64) -> f64 {
        if t > 0.0 {
            2.0 * self.s_i(a, b, t)
        } else {
            0.0
        }
    }

    fn max_lag(&self) -> f64 {
        match &self.shape {
            CorrelatorShape::Ohmic { .. } => f64::INFINITY,
            CorrelatorShape::Sampled { times, .. } => *times.last().expect("non-empty by construction"),
        }
    }
}

/// All `4^n` Paulis as dense matrices.
pub fn pauli_basis(n: usize) -> Vec<Op> {
    (0..1usize << (2 * n))
        .map(|i| pauli_matrix(&pauli_from_index(n, i)))
        .collect()
}

/// `(1/4^n) Σ_P build(P A1 P, P A2 P)`: the average over the Pauli applied
/// before both noise operators.
pub fn pauli_average_superop<F>(n: usize, a1: &Op, a2: &Op, build: F) -> Op
where
    F: Fn(&Op, &Op) -> Op,
{
    let basis = pauli_basis(n);
    let d2 = 1usize << (2 * n);
    let mut acc = Op::zeros(d2, d2);
    for p in &basis {
        acc += build(&(p * a1 * p), &(p * a2 * p));
    }
    acc / c(basis.len() as f64)
}

/// `(1/4^n) Σ_P P A P`.
pub fn pauli_twirl_operator(n: usize, a: &Op) -> Op {
    let basis = pauli_basis(n);
    let mut acc = Op::zeros(a.nrows(), a.ncols());
    for p in &basis {
        acc += p * a * p;
    }
    acc / c(basis.len() as f64)
}

fn max_entry(m: &Op) -> f64 {
    m.iter().fold(0.0f64, |a, z| a.max(z.norm()))
}

/// Largest singular value of a Hermitian matrix.
pub fn operator_norm(a: &Op) -> f64 {
    nalgebra::SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct KernelReport {
    pub grid: Vec<f64>,
    /// Largest entry of the Pauli-averaged quantum kernel over all
    /// `t2 ≤ t1` on the grid.
    pub max_quantum_entry: f64,
    /// Largest entry of the Pauli-averaged classical kernel; must stay
    /// away from zero for the check to mean anything.
    pub max_classical_entry: f64,
    /// Largest averaged entry of the first two and of the last two terms,
    /// each pair summed.
    pub max_pair_12: f64,
    pub max_pair_34: f64,
    /// Largest entry of the quantum kernel before averaging.
    pub max_unaveraged_quantum_entry: f64,
}

/// Pauli-averaged quantum and classical kernels on every ordered pair of
/// grid times, for the noise operators of `fragment` carried into the
/// interaction frame of its control.
pub fn verify_kernel_cancellation(
    fragment: &ControlSchedule,
    bath: &BathCorrelator,
    grid: &[f64],
) -> Result<KernelReport> {
    let n = fragment.num_qubits();
    if n > MAX_QUBITS {
        return Err(Error::ResourceLimit(format!(
            "dense kernel check needs at most {MAX_QUBITS} qubits, got {n}"
        )));
    }
    let ops = fragment.num_noise_ops();
    check_dim(ops, bath.num_ops())?;
    if grid.is_empty() || grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidParameter("time grid must be non-empty and non-negative".into()));
    }
    let lag = grid.iter().cloned().fold(0.0, f64::max) - grid.iter().cloned().fold(f64::INFINITY, f64::min);
    if lag > bath.max_lag() {
        return Err(Error::InvalidParameter(format!(
            "grid spans lag {lag} beyond the sampled correlator ({})",
            bath.max_lag()
        )));
    }
    // Ã^α(t) = U†(t) A^α U(t)
    let frames: Vec<Vec<Op>> = grid
        .iter()
        .map(|&t| {
            let u = fragment.evolution(t);
            fragment.noise_ops().iter().map(|a| u.adjoint() * a * &u).collect()
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|i| (0..grid.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| grid[j] <= grid[i])
        .collect();
    let basis = pauli_basis(n);
    let d2 = 1usize << (2 * n);
    let per_pair: Vec<[f64; 5]> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let dt = grid[i] - grid[j];
            let mut quantum = Op::zeros(d2, d2);
            let mut classical = Op::zeros(d2, d2);
            let mut pair12 = Op::zeros(d2, d2);
            let mut pair34 = Op::zeros(d2, d2);
            let mut bare = Op::zeros(d2, d2);
            for a in 0..ops {
                for b in 0..ops {
                    let chi = bath.chi(a, b, dt);
                    let sr = bath.s_r(a, b, dt);
                    let (x, y) = (&frames[i][a], &frames[j][b]);
                    bare += KernelTerm::new(x.clone(), y.clone(), chi, grid[i], grid[j]).total();
                    for p in &basis {
                        let term = KernelTerm::new(p * x * p, p * y * p, chi, grid[i], grid[j]);
                        pair12 += &term.terms[0] + &term.terms[1];
                        pair34 += &term.terms[2] + &term.terms[3];
                        quantum += term.total();
                        classical += double_commutator(&term.a1, &term.a2) * c(sr);
                    }
                }
            }
            let k = c(basis.len() as f64);
            [
                max_entry(&(quantum / k)),
                max_entry(&(classical / k)),
                max_entry(&(pair12 / k)),
                max_entry(&(pair34 / k)),
                max_entry(&bare),
            ]
        })
        .collect();
    let fold = |k: usize| per_pair.iter().fold(0.0f64, |m, v| m.max(v[k]));
    Ok(KernelReport {
        grid: grid.to_vec(),
        max_quantum_entry: fold(0),
        max_classical_entry: fold(1),
        max_pair_12: fold(2),
        max_pair_34: fold(3),
        max_unaveraged_quantum_entry: fold(4),
    })
}

/// Inputs of one kernel check.
#[derive(Clone, Debug)]
pub struct KernelCase {
    pub fragment: ControlSchedule,
    pub bath: BathCorrelator,
    pub grid: Vec<f64>,
}

/// A random two-layer Clifford fragment on `n` qubits with finite-duration
/// gates, one or two random Hermitian noise operators, an Ohmic bath with a
/// random correlation matrix between operators, and a five-point time grid
/// starting at 0.
pub fn random_case<R: Rng>(n: usize, rng: &mut R) -> Result<KernelCase> {
    if n == 0 || n > MAX_QUBITS {
        return Err(Error::InvalidParameter(format!("need 1 <= n <= {MAX_QUBITS}, got {n}")));
    }
    let one_qubit = |q: usize, rng: &mut R| -> Vec<Gate> {
        (0..3)
            .filter_map(|_| match rng.random_range(0..3) {
                0 => Some(Gate::H(q)),
                1 => Some(Gate::S(q)),
                _ => None,
            })
            .collect()
    };
    let first: Vec<Gate> = (0..n).flat_map(|q| one_qubit(q, rng)).collect();
    let second = if n >= 2 {
        let c = rng.random_range(0..n);
        vec![Gate::Cx(c, (c + rng.random_range(1..n)) % n)]
    } else {
        one_qubit(0, rng)
    };
    let circuit = Circuit::new(n, vec![Layer::new(first, vec![]), Layer::new(second, vec![])])?;
    let control = ControlSchedule::from_circuit(&circuit, rng.random_range(0.2..1.0))?;
    let d = 1usize << n;
    let ops = rng.random_range(1..=2);
    let noise: Vec<Op> = (0..ops)
        .map(|_| {
            let m = Op::from_fn(d, d, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            &m + m.adjoint()
        })
        .collect();
    let fragment = ControlSchedule::new(n, control.t_gate(), control.layers().to_vec(), noise)?;
    let g = DMatrix::from_fn(ops, ops, |_, _| rng.random::<f64>() - 0.5);
    let mut coupling = &g * g.transpose() + DMatrix::identity(ops, ops) * 0.1;
    // unit diagonal: every operator sees the same bath strength
    let diag: Vec<f64> = (0..ops).map(|a| coupling[(a, a)].sqrt()).collect();
    for a in 0..ops {
        for b in 0..ops {
            coupling[(a, b)] /= diag[a] * diag[b];
        }
    }
    let bath = BathCorrelator {
        shape: CorrelatorShape::Ohmic {
            eta: rng.random_range(1.0..2.0),
            cutoff: rng.random_range(1.5..3.0),
        },
        coupling,
    };
    let span = fragment.span();
    let mut grid: Vec<f64> = std::iter::once(0.0)
        .chain((0..4).map(|_| rng.random_range(0.0..span)))
        .collect();
    grid.sort_by(f64::total_cmp);
    Ok(KernelCase { fragment, bath, grid })
}
