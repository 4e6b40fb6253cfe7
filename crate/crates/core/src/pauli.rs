//! Symplectic Pauli arithmetic and Clifford tableaus.
//!
//! Pauli strings carry no global phase: only commutation and conjugation up to
//! sign matter for commutation masks. Tableaus do track the sign of each
//! generator image so that composition and inversion are exact.

use std::fmt;

use crate::circuit::{Circuit, Clock, Gate, NoiseLayout};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn bits(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    fn from_bits(x: bool, z: bool) -> Pauli {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }
}

/// An n-qubit Pauli operator `⊗_k σ_k` in symplectic form.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    n: usize,
    x: Vec<u64>,
    z: Vec<u64>,
}

fn words(n: usize) -> usize {
    n.div_ceil(64).max(1)
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        PauliString {
            n,
            x: vec![0; words(n)],
            z: vec![0; words(n)],
        }
    }

    pub fn single(n: usize, qubit: usize, p: Pauli) -> Self {
        let mut s = Self::identity(n);
        s.set(qubit, p);
        s
    }

    pub fn z_on(n: usize, qubit: usize) -> Self {
        Self::single(n, qubit, Pauli::Z)
    }

    /// Pauli number `index` in `0..4^n`; qubit `k` reads bits `2k` (x) and
    /// `2k+1` (z).
    pub fn from_index(n: usize, index: u64) -> Self {
        assert!(n <= 32, "index enumeration supports at most 32 qubits");
        let mut s = Self::identity(n);
        for k in 0..n {
            let x = (index >> (2 * k)) & 1 == 1;
            let z = (index >> (2 * k + 1)) & 1 == 1;
            s.set(k, Pauli::from_bits(x, z));
        }
        s
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn get(&self, k: usize) -> Pauli {
        let (w, b) = (k / 64, k % 64);
        Pauli::from_bits((self.x[w] >> b) & 1 == 1, (self.z[w] >> b) & 1 == 1)
    }

    pub fn set(&mut self, k: usize, p: Pauli) {
        assert!(k < self.n, "qubit {k} out of range for {} qubits", self.n);
        let (w, b) = (k / 64, k % 64);
        let (x, z) = p.bits();
        self.x[w] = (self.x[w] & !(1 << b)) | ((x as u64) << b);
        self.z[w] = (self.z[w] & !(1 << b)) | ((z as u64) << b);
    }

    pub fn x_bit(&self, k: usize) -> bool {
        (self.x[k / 64] >> (k % 64)) & 1 == 1
    }

    pub fn z_bit(&self, k: usize) -> bool {
        (self.z[k / 64] >> (k % 64)) & 1 == 1
    }

    pub fn is_identity(&self) -> bool {
        self.x.iter().chain(&self.z).all(|&w| w == 0)
    }

    pub fn weight(&self) -> usize {
        self.x
            .iter()
            .zip(&self.z)
            .map(|(x, z)| (x | z).count_ones() as usize)
            .sum()
    }

    pub fn num_y(&self) -> usize {
        self.x
            .iter()
            .zip(&self.z)
            .map(|(x, z)| (x & z).count_ones() as usize)
            .sum()
    }

    /// Low 64 bits of the x and z vectors (all bits when `n <= 64`).
    pub fn packed(&self) -> (u64, u64) {
        (self.x[0], self.z[0])
    }

    pub fn commutes(&self, other: &PauliString) -> Result<bool> {
        check_dim(self.n, other.n)?;
        Ok(self.commutes_unchecked(other))
    }

    pub(crate) fn commutes_unchecked(&self, other: &PauliString) -> bool {
        let parity: u32 = self
            .x
            .iter()
            .zip(&self.z)
            .zip(other.x.iter().zip(&other.z))
            .map(|((ax, az), (bx, bz))| ((ax & bz) ^ (az & bx)).count_ones())
            .sum();
        parity.is_multiple_of(2)
    }

    /// Product `self * other` as a Pauli string, with the power of `i` it
    /// picks up relative to the Hermitian representation.
    fn mul_phase(&self, other: &PauliString) -> (PauliString, u8) {
        let mut phase: i64 = 0;
        for k in 0..self.n {
            let (x1, z1) = (self.x_bit(k) as i64, self.z_bit(k) as i64);
            let (x2, z2) = (other.x_bit(k) as i64, other.z_bit(k) as i64);
            phase += match (x1, z1) {
                (0, 0) => 0,
                (1, 1) => z2 - x2,
                (1, 0) => z2 * (2 * x2 - 1),
                _ => x2 * (1 - 2 * z2),
            };
        }
        let out = PauliString {
            n: self.n,
            x: self.x.iter().zip(&other.x).map(|(a, b)| a ^ b).collect(),
            z: self.z.iter().zip(&other.z).map(|(a, b)| a ^ b).collect(),
        };
        (out, phase.rem_euclid(4) as u8)
    }
}

impl fmt::Debug for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PauliString({self})")
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.n {
            let c = match self.get(k) {
                Pauli::I => 'I',
                Pauli::X => 'X',
                Pauli::Y => 'Y',
                Pauli::Z => 'Z',
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for PauliString {
    type Err = Error;

    /// Character `k` is the Pauli acting on qubit `k`.
    fn from_str(s: &str) -> Result<Self> {
        let mut p = PauliString::identity(s.len());
        for (k, c) in s.chars().enumerate() {
            let q = match c.to_ascii_uppercase() {
                'I' => Pauli::I,
                'X' => Pauli::X,
                'Y' => Pauli::Y,
                'Z' => Pauli::Z,
                other => return Err(Error::Format(format!("invalid Pauli character `{other}`"))),
            };
            p.set(k, q);
        }
        Ok(p)
    }
}

/// Image of one generator: a Hermitian Pauli with a sign.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Row {
    pauli: PauliString,
    negative: bool,
}

impl Row {
    fn xz(&self, k: usize) -> (bool, bool) {
        (self.pauli.x_bit(k), self.pauli.z_bit(k))
    }

    fn set_xz(&mut self, k: usize, x: bool, z: bool) {
        self.pauli.set(k, Pauli::from_bits(x, z));
    }

    fn h(&mut self, a: usize) {
        let (x, z) = self.xz(a);
        self.negative ^= x & z;
        self.set_xz(a, z, x);
    }

    fn s(&mut self, a: usize) {
        let (x, z) = self.xz(a);
        self.negative ^= x & z;
        self.set_xz(a, x, z ^ x);
    }

    fn cx(&mut self, a: usize, b: usize) {
        let (xa, za) = self.xz(a);
        let (xb, zb) = self.xz(b);
        self.negative ^= xa & zb & !(xb ^ za);
        self.set_xz(b, xb ^ xa, zb);
        self.set_xz(a, xa, za ^ zb);
    }

    fn apply(&mut self, gate: &Gate) -> Result<()> {
        use Gate::*;
        match *gate {
            H(a) => self.h(a),
            S(a) => self.s(a),
            Sdg(a) => {
                self.s(a);
                self.s(a);
                self.s(a);
            }
            X(a) => self.negative ^= self.pauli.z_bit(a),
            Z(a) => self.negative ^= self.pauli.x_bit(a),
            Y(a) => self.negative ^= self.pauli.x_bit(a) ^ self.pauli.z_bit(a),
            SqrtX(a) => {
                self.h(a);
                self.s(a);
                self.h(a);
            }
            SqrtXdg(a) => {
                self.h(a);
                self.s(a);
                self.s(a);
                self.s(a);
                self.h(a);
            }
            Cx(a, b) => self.cx(a, b),
            Cz(a, b) => {
                self.h(b);
                self.cx(a, b);
                self.h(b);
            }
            Swap(a, b) => {
                let (xa, za) = self.xz(a);
                let (xb, zb) = self.xz(b);
                self.set_xz(a, xb, zb);
                self.set_xz(b, xa, za);
            }
            T(_) | Tdg(_) | Rz(..) | U1(..) => {
                return Err(Error::NonClifford(gate.name().to_string()))
            }
        }
        Ok(())
    }
}

/// Conjugation action `P -> g P g†` of a Clifford unitary `g`, stored as the
/// signed images of the generators `X_k` and `Z_k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CliffordTableau {
    n: usize,
    x_images: Vec<Row>,
    z_images: Vec<Row>,
}

impl CliffordTableau {
    pub fn identity(n: usize) -> Self {
        let row = |p| Row {
            pauli: p,
            negative: false,
        };
        CliffordTableau {
            n,
            x_images: (0..n)
                .map(|k| row(PauliString::single(n, k, Pauli::X)))
                .collect(),
            z_images: (0..n)
                .map(|k| row(PauliString::single(n, k, Pauli::Z)))
                .collect(),
        }
    }

    /// Tableau of the product of `gates`, applied in order.
    pub fn from_gates(n: usize, gates: &[Gate]) -> Result<Self> {
        let mut t = Self::identity(n);
        for g in gates {
            t.apply_gate(g)?;
        }
        Ok(t)
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    /// Appends `gate` after the unitary this tableau represents.
    pub fn apply_gate(&mut self, gate: &Gate) -> Result<()> {
        for q in gate.qubits() {
            if q >= self.n {
                return Err(Error::QubitOutOfRange { qubit: q, n: self.n });
            }
        }
        for row in self.x_images.iter_mut().chain(self.z_images.iter_mut()) {
            row.apply(gate)?;
        }
        Ok(())
    }

    /// `g p g†` together with its sign (`true` when negative).
    pub fn conjugate_signed(&self, p: &PauliString) -> Result<(PauliString, bool)> {
        check_dim(self.n, p.n)?;
        // p = i^{#Y} prod_k X_k^{x_k} Z_k^{z_k}
        let mut acc = PauliString::identity(self.n);
        let mut phase = (p.num_y() % 4) as u8;
        for k in 0..self.n {
            for (bit, row) in [(p.x_bit(k), &self.x_images[k]), (p.z_bit(k), &self.z_images[k])] {
                if bit {
                    let (next, ph) = acc.mul_phase(&row.pauli);
                    acc = next;
                    phase = (phase + ph + if row.negative { 2 } else { 0 }) % 4;
                }
            }
        }
        debug_assert!(phase.is_multiple_of(2), "conjugate of a Hermitian Pauli must be Hermitian");
        Ok((acc, phase == 2))
    }

    /// `g p g†` up to sign.
    pub fn conjugate(&self, p: &PauliString) -> Result<PauliString> {
        Ok(self.conjugate_signed(p)?.0)
    }

    /// Tableau of `self` followed by `next`.
    pub fn then(&self, next: &CliffordTableau) -> Result<CliffordTableau> {
        check_dim(self.n, next.n)?;
        let map = |row: &Row| -> Result<Row> {
            let (p, neg) = next.conjugate_signed(&row.pauli)?;
            Ok(Row {
                pauli: p,
                negative: neg ^ row.negative,
            })
        };
        Ok(CliffordTableau {
            n: self.n,
            x_images: self.x_images.iter().map(map).collect::<Result<_>>()?,
            z_images: self.z_images.iter().map(map).collect::<Result<_>>()?,
        })
    }

    pub fn inverse(&self) -> CliffordTableau {
        let n = self.n;
        // For a symplectic matrix S the inverse is Ω Sᵀ Ω: the preimage of X_k
        // (resp. Z_k) collects the generators whose images anticommute with
        // Z_k (resp. X_k).
        let mut inv = CliffordTableau::identity(n);
        for k in 0..n {
            let zk = PauliString::single(n, k, Pauli::Z);
            let xk = PauliString::single(n, k, Pauli::X);
            let mut px = PauliString::identity(n);
            let mut pz = PauliString::identity(n);
            for m in 0..n {
                // preimage(P) holds X_m iff img(Z_m) anticommutes with P,
                // and Z_m iff img(X_m) anticommutes with P.
                let ax = !self.x_images[m].pauli.commutes_unchecked(&zk);
                let az = !self.z_images[m].pauli.commutes_unchecked(&zk);
                let bx = !self.z_images[m].pauli.commutes_unchecked(&xk);
                let bz = !self.x_images[m].pauli.commutes_unchecked(&xk);
                px.set(m, Pauli::from_bits(bx, bz));
                pz.set(m, Pauli::from_bits(az, ax));
            }
            inv.x_images[k] = Row {
                pauli: px,
                negative: false,
            };
            inv.z_images[k] = Row {
                pauli: pz,
                negative: false,
            };
        }
        // fix signs so that self(inv(G)) = +G
        for k in 0..n {
            for is_x in [true, false] {
                let row = if is_x {
                    &inv.x_images[k]
                } else {
                    &inv.z_images[k]
                };
                let (_, neg) = self
                    .conjugate_signed(&row.pauli)
                    .expect("dimensions agree by construction");
                let row = if is_x {
                    &mut inv.x_images[k]
                } else {
                    &mut inv.z_images[k]
                };
                row.negative = neg;
            }
        }
        inv
    }

    pub fn is_identity(&self) -> bool {
        *self == CliffordTableau::identity(self.n)
    }

    /// Checks that the generator images satisfy the canonical commutation
    /// relations.
    pub fn is_symplectic(&self) -> bool {
        let n = self.n;
        for a in 0..2 * n {
            for b in 0..2 * n {
                let ra = if a < n { &self.x_images[a] } else { &self.z_images[a - n] };
                let rb = if b < n { &self.x_images[b] } else { &self.z_images[b - n] };
                let expected_anti = a % n == b % n && (a < n) != (b < n);
                if ra.pauli.commutes_unchecked(&rb.pauli) == expected_anti {
                    return false;
                }
            }
        }
        true
    }
}

/// Clifford circuit as a list of layer tableaus with the dephasing sites
/// following each layer.
#[derive(Clone, Debug)]
pub struct CliffordCircuit {
    n: usize,
    layers: Vec<CliffordTableau>,
    noise_sites: Vec<Vec<usize>>,
    layout: NoiseLayout,
}

impl CliffordCircuit {
    pub fn new(
        n: usize,
        layers: Vec<CliffordTableau>,
        noise_sites: Vec<Vec<usize>>,
        clock: Clock,
    ) -> Result<Self> {
        check_dim(layers.len(), noise_sites.len())?;
        for t in &layers {
            check_dim(n, t.n)?;
        }
        for sites in &noise_sites {
            for &q in sites {
                if q >= n {
                    return Err(Error::QubitOutOfRange { qubit: q, n });
                }
            }
        }
        let layout = NoiseLayout::new(n, &noise_sites, clock);
        Ok(CliffordCircuit {
            n,
            layers,
            noise_sites,
            layout,
        })
    }

    /// Every qubit dephases after every layer.
    pub fn with_full_noise(n: usize, layers: Vec<CliffordTableau>) -> Result<Self> {
        let l = layers.len();
        Self::new(n, layers, vec![(0..n).collect(); l], Clock::PerQubit)
    }

    /// Rejects circuits containing non-Clifford gates.
    pub fn from_circuit(circuit: &Circuit, clock: Clock) -> Result<Self> {
        if let Some(g) = circuit.first_non_clifford() {
            return Err(Error::NonClifford(g.name().to_string()));
        }
        let n = circuit.num_qubits();
        let layers = circuit
            .layers()
            .iter()
            .map(|l| CliffordTableau::from_gates(n, &l.gates))
            .collect::<Result<Vec<_>>>()?;
        let noise = circuit.layers().iter().map(|l| l.noise.clone()).collect();
        Self::new(n, layers, noise, clock)
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[CliffordTableau] {
        &self.layers
    }

    pub fn noise_sites(&self) -> &[Vec<usize>] {
        &self.noise_sites
    }

    pub fn layout(&self) -> &NoiseLayout {
        &self.layout
    }

    pub fn num_sites(&self) -> usize {
        self.layout.len()
    }

    /// Tableau of the whole circuit.
    pub fn total(&self) -> CliffordTableau {
        self.layers
            .iter()
            .fold(CliffordTableau::identity(self.n), |acc, t| {
                acc.then(t).expect("layer dimensions checked at construction")
            })
    }

    /// `suffix[j]` is the tableau of layers `j+1 ..` (identity for the last).
    pub fn suffix_tableaus(&self) -> Vec<CliffordTableau> {
        let l = self.layers.len();
        let mut suffix = vec![CliffordTableau::identity(self.n); l];
        for j in (0..l.saturating_sub(1)).rev() {
            suffix[j] = self.layers[j + 1]
                .then(&suffix[j + 1])
                .expect("layer dimensions checked at construction");
        }
        suffix
    }
}

/// Noise axis of every site, conjugated through all later layers, in flat
/// (qubit-major) order.
pub fn propagate_noise_axes(circuit: &CliffordCircuit) -> Vec<PauliString> {
    let suffix = circuit.suffix_tableaus();
    circuit
        .layout
        .sites()
        .iter()
        .map(|s| {
            suffix[s.layer]
                .conjugate(&PauliString::z_on(circuit.n, s.qubit))
                .expect("dimensions agree by construction")
        })
        .collect()
}

/// Diagonal 0/1 matrix marking the noise sites whose propagated axis
/// anticommutes with a given Pauli, stored as a bit vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommutationMask {
    bits: Vec<u64>,
    len: usize,
    weight: usize,
}

impl CommutationMask {
    pub fn zeros(len: usize) -> Self {
        CommutationMask {
            bits: vec![0; len.div_ceil(64)],
            len,
            weight: 0,
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut m = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                m.set(i);
            }
        }
        m
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.len);
        let (w, b) = (i / 64, i % 64);
        if (self.bits[w] >> b) & 1 == 0 {
            self.bits[w] |= 1 << b;
            self.weight += 1;
        }
    }

    pub fn get(&self, i: usize) -> bool {
        (self.bits[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of set bits, i.e. `tr M_Q`.
    pub fn weight(&self) -> usize {
        self.weight
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }
}

pub fn build_mask(circuit: &CliffordCircuit, q: &PauliString) -> Result<CommutationMask> {
    check_dim(circuit.n, q.num_qubits())?;
    Ok(mask_from_axes(&propagate_noise_axes(circuit), q))
}

pub fn mask_from_axes(axes: &[PauliString], q: &PauliString) -> CommutationMask {
    let mut m = CommutationMask::zeros(axes.len());
    for (i, a) in axes.iter().enumerate() {
        if !a.commutes_unchecked(q) {
            m.set(i);
        }
    }
    m
}
