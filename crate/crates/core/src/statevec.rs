//! Dense statevector kernels. Qubit `k` is bit `k` of the basis index.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::circuit::Gate;
use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliString};

/// Largest register the dense kernels accept.
pub const MAX_QUBITS: usize = 24;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

type M2 = [[C64; 2]; 2];

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// 2x2 matrix of a single-qubit gate, rows indexed by output bit.
pub fn single_qubit_matrix(gate: &Gate) -> Option<M2> {
    let o = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let h = c(FRAC_1_SQRT_2, 0.0);
    let m = match *gate {
        Gate::H(_) => [[h, h], [h, -h]],
        Gate::S(_) => [[one, o], [o, c(0.0, 1.0)]],
        Gate::Sdg(_) => [[one, o], [o, c(0.0, -1.0)]],
        Gate::X(_) => [[o, one], [one, o]],
        Gate::Y(_) => [[o, c(0.0, -1.0)], [c(0.0, 1.0), o]],
        Gate::Z(_) => [[one, o], [o, -one]],
        Gate::SqrtX(_) => [[c(0.5, 0.5), c(0.5, -0.5)], [c(0.5, -0.5), c(0.5, 0.5)]],
        Gate::SqrtXdg(_) => [[c(0.5, -0.5), c(0.5, 0.5)], [c(0.5, 0.5), c(0.5, -0.5)]],
        Gate::T(_) => [[one, o], [o, C64::from_polar(1.0, std::f64::consts::FRAC_PI_4)]],
        Gate::Tdg(_) => [[one, o], [o, C64::from_polar(1.0, -std::f64::consts::FRAC_PI_4)]],
        Gate::Rz(_, t) => [[C64::from_polar(1.0, -t), o], [o, C64::from_polar(1.0, t)]],
        Gate::U1(_, l) => [[one, o], [o, C64::from_polar(1.0, l)]],
        Gate::Cx(..) | Gate::Cz(..) | Gate::Swap(..) => return None,
    };
    Some(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn zero(n: usize) -> Result<Self> {
        if n > MAX_QUBITS {
            return Err(Error::ResourceLimit(format!(
                "statevector of {n} qubits exceeds the {MAX_QUBITS}-qubit limit"
            )));
        }
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
        amps[0] = C64::new(1.0, 0.0);
        Ok(StateVector { n, amps })
    }

    pub fn basis(n: usize, index: usize) -> Result<Self> {
        let mut s = Self::zero(n)?;
        if index >= s.amps.len() {
            return Err(Error::InvalidParameter(format!(
                "basis index {index} out of range for {n} qubits"
            )));
        }
        s.amps[0] = C64::new(0.0, 0.0);
        s.amps[index] = C64::new(1.0, 0.0);
        Ok(s)
    }

    pub fn from_amplitudes(n: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != 1 << n {
            return Err(Error::Dimension {
                expected: 1 << n,
                found: amps.len(),
            });
        }
        Ok(StateVector { n, amps })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    fn check(&self, q: usize) -> Result<()> {
        if q >= self.n {
            Err(Error::QubitOutOfRange { qubit: q, n: self.n })
        } else {
            Ok(())
        }
    }

    pub fn apply_matrix(&mut self, q: usize, m: &M2) -> Result<()> {
        self.check(q)?;
        let bit = 1usize << q;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let (a0, a1) = (self.amps[i], self.amps[i | bit]);
                self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[i | bit] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
        Ok(())
    }

    pub fn apply_gate(&mut self, gate: &Gate) -> Result<()> {
        for q in gate.qubits() {
            self.check(q)?;
        }
        if let Some(m) = single_qubit_matrix(gate) {
            return self.apply_matrix(gate.qubits()[0], &m);
        }
        let (a, b) = match *gate {
            Gate::Cx(a, b) | Gate::Cz(a, b) | Gate::Swap(a, b) => (1usize << a, 1usize << b),
            _ => unreachable!("single-qubit gates handled above"),
        };
        match gate {
            Gate::Cx(..) => {
                for i in 0..self.amps.len() {
                    if i & a != 0 && i & b == 0 {
                        self.amps.swap(i, i | b);
                    }
                }
            }
            Gate::Cz(..) => {
                for (i, amp) in self.amps.iter_mut().enumerate() {
                    if i & a != 0 && i & b != 0 {
                        *amp = -*amp;
                    }
                }
            }
            _ => {
                for i in 0..self.amps.len() {
                    if i & a != 0 && i & b == 0 {
                        self.amps.swap(i, (i & !a) | b);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn apply_gates(&mut self, gates: &[Gate]) -> Result<()> {
        gates.iter().try_for_each(|g| self.apply_gate(g))
    }

    /// `exp(-i θ Z_q)`.
    pub fn apply_rz(&mut self, q: usize, theta: f64) -> Result<()> {
        self.apply_z_phases(&[(q, theta)])
    }

    /// Applies `prod_k exp(-i θ_k Z_{q_k})` in one pass using byte-chunked
    /// phase tables.
    pub fn apply_z_phases(&mut self, rotations: &[(usize, f64)]) -> Result<()> {
        if rotations.is_empty() {
            return Ok(());
        }
        for &(q, _) in rotations {
            self.check(q)?;
        }
        let chunks = self.n.div_ceil(8).max(1);
        let mut tables = vec![[0.0f64; 256]; chunks];
        for &(q, theta) in rotations {
            let (ch, b) = (q / 8, q % 8);
            for (idx, v) in tables[ch].iter_mut().enumerate() {
                *v += if (idx >> b) & 1 == 0 { -theta } else { theta };
            }
        }
        let phases: Vec<Vec<C64>> = tables
            .iter()
            .map(|t| t.iter().map(|&a| C64::from_polar(1.0, a)).collect())
            .collect();
        let used: Vec<usize> = (0..chunks)
            .filter(|&ch| rotations.iter().any(|&(q, _)| q / 8 == ch))
            .collect();
        for (i, amp) in self.amps.iter_mut().enumerate() {
            let mut f = phases[used[0]][(i >> (8 * used[0])) & 0xff];
            for &ch in &used[1..] {
                f *= phases[ch][(i >> (8 * ch)) & 0xff];
            }
            *amp *= f;
        }
        Ok(())
    }

    /// Applies a Hermitian Pauli operator (no phase beyond its matrix).
    pub fn apply_pauli(&mut self, p: &PauliString) -> Result<()> {
        if p.num_qubits() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                found: p.num_qubits(),
            });
        }
        let (xm, zm) = pauli_masks(p);
        let ny = (xm & zm).count_ones();
        let base = C64::new(0.0, 1.0).powu(ny);
        let old = self.amps.clone();
        for (i, &a) in old.iter().enumerate() {
            // P|i> = i^{#Y} (-1)^{|i & z|} |i ^ x>
            let sign = if (i & zm).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            self.amps[i ^ xm] = base * sign * a;
        }
        Ok(())
    }

    /// Probability that qubit `q` reads 1.
    pub fn prob_one(&self, q: usize) -> Result<f64> {
        self.check(q)?;
        let bit = 1usize << q;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Projective Z measurement; `u` is a uniform variate in [0, 1).
    pub fn measure(&mut self, q: usize, u: f64) -> Result<bool> {
        let p1 = self.prob_one(q)?;
        let outcome = u < p1;
        let keep = if outcome { p1 } else { 1.0 - p1 };
        let scale = 1.0 / keep.sqrt();
        let bit = 1usize << q;
        for (i, a) in self.amps.iter_mut().enumerate() {
            if (i & bit != 0) == outcome {
                *a *= scale;
            } else {
                *a = C64::new(0.0, 0.0);
            }
        }
        Ok(outcome)
    }

    /// Measures qubit `q` and flips it back to |0>.
    pub fn measure_and_reset(&mut self, q: usize, u: f64) -> Result<bool> {
        let outcome = self.measure(q, u)?;
        if outcome {
            self.apply_gate(&Gate::X(q))?;
        }
        Ok(outcome)
    }
}

fn pauli_masks(p: &PauliString) -> (usize, usize) {
    let mut xm = 0usize;
    let mut zm = 0usize;
    for k in 0..p.num_qubits() {
        match p.get(k) {
            Pauli::I => {}
            Pauli::X => xm |= 1 << k,
            Pauli::Z => zm |= 1 << k,
            Pauli::Y => {
                xm |= 1 << k;
                zm |= 1 << k;
            }
        }
    }
    (xm, zm)
}

/// Dense unitary of `gates` applied in order on `n` qubits.
pub fn unitary(n: usize, gates: &[Gate]) -> Result<DMatrix<C64>> {
    let d = 1usize << n;
    let mut u = DMatrix::zeros(d, d);
    for col in 0..d {
        let mut s = StateVector::basis(n, col)?;
        s.apply_gates(gates)?;
        for (row, a) in s.amps.iter().enumerate() {
            u[(row, col)] = *a;
        }
    }
    Ok(u)
}

pub fn pauli_matrix(p: &PauliString) -> DMatrix<C64> {
    let n = p.num_qubits();
    let d = 1usize << n;
    let mut m = DMatrix::zeros(d, d);
    for col in 0..d {
        let mut s = StateVector::basis(n, col).expect("Pauli register fits dense limit");
        s.apply_pauli(p).expect("dimensions agree");
        for (row, a) in s.amps.iter().enumerate() {
            m[(row, col)] = *a;
        }
    }
    m
}
