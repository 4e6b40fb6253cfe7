//! Finite-duration gates: commutation masks generalised to noise that acts
//! while the control Hamiltonian is on.
//!
//! Within layer `j` the noise operator `A^α` is seen in the end-of-layer
//! frame, `Ã^α(t) = W(t) A^α W(t)†` with `W(t)` the control evolution from
//! `t` to the end of the layer. The second-order generator
//! `K^{αα'} = t_G^-2 ∫∫_{t2<t1} [Ã^α(t1), [Ã^α'(t2), ·]]` is Pauli twirled
//! into a Pauli channel `Σ_P k_P P·P`. Its eigenvalue on the Pauli `R` that
//! `Q` becomes when pulled back through the later layers gives the mask
//! entry `m^{αα'}_{j,Q}`; the layer's noise eigenvalue is then
//! `1 - ½ θᵀ (c M) θ` to second order with `c = 2`, and the Gaussian
//! average is `det(1 + c M Σ)^(-1/2)`.
//!
//! Mask matrices are indexed qubit-major like covariances: noise operator
//! `α` in layer `j` sits at `α·l + j`. With instantaneous gates and `Z`
//! noise the mask is twice the 0/1 commutation mask.

use nalgebra::{Cholesky, DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::Circuit;
use crate::error::{check_dim, Error, Result};
use crate::noise::CovMatrix;
use crate::pauli::{CliffordTableau, Pauli, PauliString};
use crate::statevec::{pauli_matrix, unitary};

/// Largest register handled by the dense construction.
pub const MAX_QUBITS: usize = 4;
/// Factor `c` in `det(1 + c M Σ)^(-1/2)` for masks built here.
pub const DEFAULT_NORMALIZATION: f64 = 2.0;
/// Allowed deviation of a schedule's layer unitary from the intended gates.
pub const UNITARY_TOL: f64 = 1e-8;
const HERMITIAN_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Piece of a layer during which `W(s) = exp(-i G s / d)`; `d = 0` is an
/// instantaneous kick `exp(-i G)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub generator: DMatrix<C64>,
    pub duration: f64,
}

impl Segment {
    /// Hamiltonian during the segment, `G / d`.
    pub fn hamiltonian(&self) -> Option<DMatrix<C64>> {
        (self.duration > 0.0).then(|| &self.generator / C64::new(self.duration, 0.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlSchedule {
    n: usize,
    t_gate: f64,
    layers: Vec<Vec<Segment>>,
    noise_ops: Vec<DMatrix<C64>>,
}

fn check_hermitian(m: &DMatrix<C64>, d: usize) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::Dimension {
            expected: d,
            found: m.nrows().max(m.ncols()),
        });
    }
    let asym = (m - m.adjoint()).iter().fold(0.0f64, |a, z| a.max(z.norm()));
    if asym > HERMITIAN_TOL * m.iter().fold(1.0f64, |a, z| a.max(z.norm())) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// `Z` on every qubit.
pub fn z_noise(n: usize) -> Vec<DMatrix<C64>> {
    (0..n).map(|q| pauli_matrix(&PauliString::z_on(n, q))).collect()
}

/// Hermitian `G` with `exp(-i G) = U` and spectrum in `(-π, π]`.
pub fn unitary_generator(u: &DMatrix<C64>) -> DMatrix<C64> {
    let (q, t) = Schur::new(u.clone()).unpack();
    let phases = DMatrix::from_fn(u.nrows(), u.ncols(), |a, b| {
        if a == b {
            C64::new(-t[(a, a)].arg(), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let g = &q * phases * q.adjoint();
    (&g + g.adjoint()) * C64::new(0.5, 0.0)
}

/// `exp(-i H s)` for Hermitian `H`, diagonalised once.
#[derive(Clone, Debug)]
struct HermitianFlow {
    vectors: DMatrix<C64>,
    values: DVector<f64>,
}

impl HermitianFlow {
    fn new(h: &DMatrix<C64>) -> Self {
        let eig = SymmetricEigen::new(h.clone());
        HermitianFlow {
            vectors: eig.eigenvectors,
            values: eig.eigenvalues,
        }
    }

    fn phases(&self, s: f64) -> DVector<C64> {
        self.values.map(|w| C64::from_polar(1.0, -w * s))
    }

    fn at(&self, s: f64) -> DMatrix<C64> {
        let mut v = self.vectors.clone();
        for (c, p) in self.phases(s).iter().enumerate() {
            for r in 0..v.nrows() {
                v[(r, c)] *= p;
            }
        }
        v * self.vectors.adjoint()
    }
}

impl ControlSchedule {
    pub fn new(
        n: usize,
        t_gate: f64,
        layers: Vec<Vec<Segment>>,
        noise_ops: Vec<DMatrix<C64>>,
    ) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::ResourceLimit(format!(
                "finite-duration masks are dense; need 1..={MAX_QUBITS} qubits, got {n}"
            )));
        }
        if !(t_gate > 0.0 && t_gate.is_finite()) {
            return Err(Error::InvalidParameter(format!("layer duration must be positive, got {t_gate}")));
        }
        let d = 1usize << n;
        for (j, layer) in layers.iter().enumerate() {
            let mut total = 0.0;
            for s in layer {
                if !(s.duration >= 0.0 && s.duration.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "layer {j}: segment duration {} is not a non-negative number",
                        s.duration
                    )));
                }
                check_hermitian(&s.generator, d)?;
                total += s.duration;
            }
            if (total - t_gate).abs() > 1e-12 * t_gate {
                return Err(Error::InvalidParameter(format!(
                    "layer {j}: segment durations sum to {total}, expected {t_gate}"
                )));
            }
        }
        if noise_ops.is_empty() {
            return Err(Error::InvalidParameter("no noise operators".into()));
        }
        for a in &noise_ops {
            check_hermitian(a, d)?;
        }
        Ok(ControlSchedule {
            n,
            t_gate,
            layers,
            noise_ops,
        })
    }

    /// Each layer's gates as one constant Hamiltonian running for a fraction
    /// `gate_fraction` of the layer at its start, idle afterwards, with `Z`
    /// noise on every qubit. `gate_fraction = 0` is the instantaneous limit.
    pub fn from_circuit(circuit: &Circuit, gate_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gate_fraction) {
            return Err(Error::InvalidParameter(format!(
                "gate fraction must lie in [0, 1], got {gate_fraction}"
            )));
        }
        let n = circuit.num_qubits();
        if n > MAX_QUBITS {
            return Err(Error::ResourceLimit(format!(
                "finite-duration masks are dense; need at most {MAX_QUBITS} qubits, got {n}"
            )));
        }
        let d = 1usize << n;
        let layers = circuit
            .layers()
            .iter()
            .map(|layer| {
                let g = unitary_generator(&unitary(n, &layer.gates)?);
                let mut segs = vec![Segment {
                    generator: g,
                    duration: gate_fraction,
                }];
                if gate_fraction < 1.0 {
                    segs.push(Segment {
                        generator: DMatrix::zeros(d, d),
                        duration: 1.0 - gate_fraction,
                    });
                }
                Ok(segs)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, 1.0, layers, z_noise(n))
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_noise_ops(&self) -> usize {
        self.noise_ops.len()
    }

    pub fn t_gate(&self) -> f64 {
        self.t_gate
    }

    pub fn layers(&self) -> &[Vec<Segment>] {
        &self.layers
    }

    pub fn noise_ops(&self) -> &[DMatrix<C64>] {
        &self.noise_ops
    }

    /// Full control evolution of layer `j`.
    pub fn layer_unitary(&self, j: usize) -> DMatrix<C64> {
        let d = 1usize << self.n;
        self.layers[j].iter().fold(DMatrix::identity(d, d), |acc, s| {
            HermitianFlow::new(&s.generator).at(1.0) * acc
        })
    }

    /// Control evolution from the start of the first layer to time `t`,
    /// clamped to the schedule's span.
    pub fn evolution(&self, t: f64) -> DMatrix<C64> {
        let d = 1usize << self.n;
        let mut u = DMatrix::identity(d, d);
        let mut clock = 0.0;
        for layer in &self.layers {
            for s in layer {
                if t < clock + s.duration {
                    let frac = ((t - clock) / s.duration).max(0.0);
                    return HermitianFlow::new(&s.generator).at(frac) * u;
                }
                clock += s.duration;
                u = HermitianFlow::new(&s.generator).at(1.0) * u;
            }
        }
        u
    }

    /// Total duration of all layers.
    pub fn span(&self) -> f64 {
        self.t_gate * self.layers.len() as f64
    }

    /// Checks that every layer implements the circuit's layer up to a
    /// global phase.
    pub fn check_against(&self, circuit: &Circuit) -> Result<()> {
        check_dim(self.n, circuit.num_qubits())?;
        check_dim(self.layers.len(), circuit.num_layers())?;
        for (j, layer) in circuit.layers().iter().enumerate() {
            let target = unitary(self.n, &layer.gates)?;
            let dev = phase_distance(&self.layer_unitary(j), &target);
            if dev > UNITARY_TOL {
                return Err(Error::InvalidParameter(format!(
                    "layer {j}: control evolution differs from the gates by {dev:e}"
                )));
            }
        }
        Ok(())
    }

    /// Schedule from its JSON description. Generators and noise operators
    /// are real combinations of Pauli strings; character `k` of a string
    /// acts on qubit `k`. Noise defaults to `Z` on every qubit.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ScheduleSpec = serde_json::from_str(text)?;
        let n = spec.n;
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::ResourceLimit(format!(
                "finite-duration masks are dense; need 1..={MAX_QUBITS} qubits, got {n}"
            )));
        }
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                l.segments
                    .iter()
                    .map(|s| {
                        Ok(Segment {
                            generator: from_terms(n, &s.generator)?,
                            duration: s.duration,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let noise = match &spec.noise {
            Some(ops) => ops.iter().map(|t| from_terms(n, t)).collect::<Result<Vec<_>>>()?,
            None => z_noise(n),
        };
        Self::new(n, spec.t_gate, layers, noise)
    }

    pub fn to_json(&self) -> Result<String> {
        let spec = ScheduleSpec {
            n: self.n,
            t_gate: self.t_gate,
            noise: Some(self.noise_ops.iter().map(|a| to_terms(self.n, a)).collect()),
            layers: self
                .layers
                .iter()
                .map(|l| LayerSpec {
                    segments: l
                        .iter()
                        .map(|s| SegmentSpec {
                            duration: s.duration,
                            generator: to_terms(self.n, &s.generator),
                        })
                        .collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&spec)?)
    }
}

/// `min_φ max |U - e^{iφ} V|` up to the choice of `φ` from the trace overlap.
fn phase_distance(u: &DMatrix<C64>, v: &DMatrix<C64>) -> f64 {
    let overlap = (v.adjoint() * u).trace();
    let phase = if overlap.norm() > 0.0 {
        overlap / overlap.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    (u - v * phase).iter().fold(0.0f64, |a, z| a.max(z.norm()))
}

#[derive(Serialize, Deserialize)]
struct TermSpec {
    pauli: String,
    coeff: f64,
}

#[derive(Serialize, Deserialize)]
struct SegmentSpec {
    duration: f64,
    generator: Vec<TermSpec>,
}

#[derive(Serialize, Deserialize)]
struct LayerSpec {
    segments: Vec<SegmentSpec>,
}

fn default_t_gate() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
struct ScheduleSpec {
    n: usize,
    #[serde(default = "default_t_gate")]
    t_gate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<Vec<Vec<TermSpec>>>,
    layers: Vec<LayerSpec>,
}

fn from_terms(n: usize, terms: &[TermSpec]) -> Result<DMatrix<C64>> {
    let d = 1usize << n;
    let mut m = DMatrix::zeros(d, d);
    for t in terms {
        let p: PauliString = t.pauli.parse()?;
        check_dim(n, p.num_qubits())?;
        m += pauli_matrix(&p) * C64::new(t.coeff, 0.0);
    }
    Ok(m)
}

fn to_terms(n: usize, m: &DMatrix<C64>) -> Vec<TermSpec> {
    pauli_coefficients(n, m)
        .into_iter()
        .enumerate()
        .filter(|(_, c)| c.abs() > 1e-15)
        .map(|(i, c)| TermSpec {
            pauli: pauli_from_index(n, i).to_string(),
            coeff: c,
        })
        .collect()
}

/// Pauli with packed index `x | z << n`.
pub fn pauli_from_index(n: usize, index: usize) -> PauliString {
    let mut p = PauliString::identity(n);
    for k in 0..n {
        let x = (index >> k) & 1 == 1;
        let z = (index >> (n + k)) & 1 == 1;
        p.set(
            k,
            match (x, z) {
                (false, false) => Pauli::I,
                (true, false) => Pauli::X,
                (true, true) => Pauli::Y,
                (false, true) => Pauli::Z,
            },
        );
    }
    p
}

fn anticommute_packed(n: usize, a: usize, b: usize) -> bool {
    let mask = (1usize << n) - 1;
    let (ax, az) = (a & mask, a >> n);
    let (bx, bz) = (b & mask, b >> n);
    ((ax & bz).count_ones() + (az & bx).count_ones()) % 2 == 1
}

/// Real parts of `tr(P M) / 2^n` for every Pauli, indexed `x | z << n`.
pub fn pauli_coefficients(n: usize, m: &DMatrix<C64>) -> Vec<f64> {
    let d = 1usize << n;
    let mut out = vec![0.0; d * d];
    let ipow = [
        C64::new(1.0, 0.0),
        C64::new(0.0, 1.0),
        C64::new(-1.0, 0.0),
        C64::new(0.0, -1.0),
    ];
    for z in 0..d {
        for x in 0..d {
            // P|c> = i^{#Y} (-1)^{|c ∧ z|} |c ⊕ x>
            let mut acc = C64::new(0.0, 0.0);
            for c in 0..d {
                let v = m[(c, c ^ x)];
                if (c & z).count_ones() % 2 == 1 {
                    acc -= v;
                } else {
                    acc += v;
                }
            }
            out[x | (z << n)] = (ipow[(x & z).count_ones() as usize % 4] * acc).re / d as f64;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FtOptions {
    /// Largest allowed change of any mask entry when the grid is refined.
    pub tol: f64,
    /// Midpoint cells per timed segment on the first pass.
    pub min_nodes: usize,
    /// Refinement stops with an error beyond this many cells per segment.
    pub max_nodes: usize,
}

impl Default for FtOptions {
    fn default() -> Self {
        FtOptions {
            tol: 1e-8,
            min_nodes: 16,
            max_nodes: 1 << 17,
        }
    }
}

/// Twirled second-order generator of one layer for every pair of noise
/// operators.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerKernel {
    n: usize,
    ops: usize,
    /// `t_G^-2 ∫∫_{t2<t1} a^α_P(t1) a^α'_P(t2)` at `(α·ops + α')·4^n + P`.
    ordered: Vec<f64>,
    /// `t_G^-1 ∫ a^α_P(t)` at `α·4^n + P`.
    mean: Vec<f64>,
    /// Cells per timed segment of the accepted grid.
    pub nodes: usize,
}

impl LayerKernel {
    fn paulis(&self) -> usize {
        1 << (2 * self.n)
    }

    pub fn ordered(&self, a: usize, b: usize, p: usize) -> f64 {
        self.ordered[(a * self.ops + b) * self.paulis() + p]
    }

    /// Time-averaged Pauli coefficient of `Ã^α`.
    pub fn mean(&self, a: usize, p: usize) -> f64 {
        self.mean[a * self.paulis() + p]
    }

    /// Pauli-channel coefficient `k^{αα'}_P` of the twirled generator,
    /// `Σ_P k_P P ρ P`.
    pub fn k(&self, a: usize, b: usize, p: usize) -> f64 {
        if p == 0 {
            let all: f64 = (0..self.paulis()).map(|r| self.ordered(a, b, r)).sum();
            2.0 * all - 2.0 * self.ordered(a, b, 0)
        } else {
            -2.0 * self.ordered(a, b, p)
        }
    }

    /// Eigenvalue of the twirled `K^{αα'}` on Pauli `r`: `Σ_P k_P s_{P,r}`.
    pub fn twirled_eigenvalue(&self, a: usize, b: usize, r: usize) -> f64 {
        (0..self.paulis())
            .map(|p| {
                let s = if anticommute_packed(self.n, p, r) { -1.0 } else { 1.0 };
                self.k(a, b, p) * s
            })
            .sum()
    }
}

fn kernel_on_grid(schedule: &ControlSchedule, j: usize, cells: usize) -> LayerKernel {
    let n = schedule.n;
    let d = 1usize << n;
    let np = d * d;
    let ops = schedule.noise_ops.len();
    let segs = &schedule.layers[j];
    let flows: Vec<HermitianFlow> = segs.iter().map(|s| HermitianFlow::new(&s.generator)).collect();
    // suffix[k]: evolution of segments after k
    let mut suffix = vec![DMatrix::<C64>::identity(d, d); segs.len()];
    for k in (0..segs.len().saturating_sub(1)).rev() {
        suffix[k] = &suffix[k + 1] * flows[k + 1].at(1.0);
    }
    let mut ordered = vec![0.0; ops * ops * np];
    let mut prefix = vec![0.0; ops * np];
    let mut coeff = vec![0.0; ops * np];
    let t_gate = schedule.t_gate;
    for (k, seg) in segs.iter().enumerate() {
        if seg.duration == 0.0 {
            continue;
        }
        let h = seg.duration / cells as f64 / t_gate;
        // Ã = S D B D† S† with S = suffix·V and B = V† A V in the eigenbasis
        let s = &suffix[k] * &flows[k].vectors;
        let s_adj = s.adjoint();
        let rotated: Vec<DMatrix<C64>> = schedule
            .noise_ops
            .iter()
            .map(|a| flows[k].vectors.adjoint() * a * &flows[k].vectors)
            .collect();
        for i in 0..cells {
            let remaining = 1.0 - (i as f64 + 0.5) / cells as f64;
            let ph = flows[k].phases(remaining);
            for (a, b) in rotated.iter().enumerate() {
                let inner = DMatrix::from_fn(d, d, |r, c| ph[r] * b[(r, c)] * ph[c].conj());
                let at = &s * inner * &s_adj;
                coeff[a * np..(a + 1) * np].copy_from_slice(&pauli_coefficients(n, &at));
            }
            for a in 0..ops {
                for b in 0..ops {
                    let row = &mut ordered[(a * ops + b) * np..(a * ops + b + 1) * np];
                    for p in 0..np {
                        let ca = coeff[a * np + p];
                        if ca != 0.0 {
                            row[p] += h * ca * (prefix[b * np + p] + 0.5 * h * coeff[b * np + p]);
                        }
                    }
                }
            }
            for (acc, c) in prefix.iter_mut().zip(&coeff) {
                *acc += h * c;
            }
        }
    }
    LayerKernel {
        n,
        ops,
        ordered,
        mean: prefix,
        nodes: cells,
    }
}

/// Bound on the change of any mask entry between two grids: every entry
/// is a `±4`-weighted sum of symmetrised ordered integrals.
fn kernel_change(a: &LayerKernel, b: &LayerKernel) -> f64 {
    let np = a.paulis();
    let mut worst = 0.0f64;
    for x in 0..a.ops {
        for y in 0..a.ops {
            let s: f64 = (0..np)
                .map(|p| {
                    let da = a.ordered(x, y, p) - b.ordered(x, y, p);
                    let db = a.ordered(y, x, p) - b.ordered(y, x, p);
                    2.0 * (da + db).abs()
                })
                .sum();
            worst = worst.max(s);
        }
    }
    worst
}

/// Kernel of layer `j`, refining the midpoint grid until the mask entries
/// settle within `opts.tol`.
pub fn layer_kernel(schedule: &ControlSchedule, j: usize, opts: &FtOptions) -> Result<LayerKernel> {
    if j >= schedule.layers.len() {
        return Err(Error::InvalidParameter(format!(
            "layer {j} out of range for {} layers",
            schedule.layers.len()
        )));
    }
    let mut cells = opts.min_nodes.max(1);
    let mut current = kernel_on_grid(schedule, j, cells);
    if schedule.layers[j].iter().all(|s| s.duration == 0.0) {
        return Ok(current);
    }
    loop {
        cells *= 2;
        let next = kernel_on_grid(schedule, j, cells);
        let change = kernel_change(&current, &next);
        if change < opts.tol {
            return Ok(next);
        }
        if cells >= opts.max_nodes {
            return Err(Error::Quadrature { change, nodes: cells });
        }
        current = next;
    }
}

/// Twirled kernels of every layer, ready to be assembled into masks for
/// any number of Paulis.
#[derive(Clone, Debug)]
pub struct FtKernels {
    n: usize,
    ops: usize,
    layers: Vec<LayerKernel>,
}

impl FtKernels {
    pub fn compute(schedule: &ControlSchedule, opts: &FtOptions) -> Result<Self> {
        let layers = (0..schedule.num_layers())
            .into_par_iter()
            .map(|j| layer_kernel(schedule, j, opts))
            .collect::<Result<Vec<_>>>()?;
        Ok(FtKernels {
            n: schedule.n,
            ops: schedule.noise_ops.len(),
            layers,
        })
    }

    pub fn layers(&self) -> &[LayerKernel] {
        &self.layers
    }

    /// Assembles `m^{αα'}_{j,Q} = ½ Σ_P (k^{αα'}_{j,P} + k^{α'α}_{j,P}) s_{j,P,Q}`
    /// where `s_{j,P,Q}` is `-1` when `P`, carried through the layers after
    /// `j` by `tails[j]`, anticommutes with `Q`.
    pub fn mask(&self, tails: &[CliffordTableau], q: &PauliString) -> Result<FtMask> {
        let l = self.layers.len();
        check_dim(l, tails.len())?;
        check_dim(self.n, q.num_qubits())?;
        let np = 1usize << (2 * self.n);
        let dim = self.ops * l;
        let mut m = DMatrix::zeros(dim, dim);
        let mut nodes = 0;
        for (j, (kern, tail)) in self.layers.iter().zip(tails).enumerate() {
            check_dim(self.n, tail.num_qubits())?;
            nodes = nodes.max(kern.nodes);
            let signs: Vec<f64> = (0..np)
                .map(|p| {
                    let moved = tail.conjugate(&pauli_from_index(self.n, p))?;
                    Ok(if moved.commutes_unchecked(q) { 1.0 } else { -1.0 })
                })
                .collect::<Result<_>>()?;
            for a in 0..self.ops {
                for b in a..self.ops {
                    let v: f64 = (0..np)
                        .map(|p| 0.5 * (kern.k(a, b, p) + kern.k(b, a, p)) * signs[p])
                        .sum();
                    m[(a * l + j, b * l + j)] = v;
                    m[(b * l + j, a * l + j)] = v;
                }
            }
        }
        Ok(FtMask {
            ops: self.ops,
            l,
            m,
            nodes,
        })
    }
}

/// Finite-duration mask for one Pauli `q`. `tails[j]` is the Clifford of the
/// layers after `j`.
pub fn build_ft_mask(
    schedule: &ControlSchedule,
    tails: &[CliffordTableau],
    q: &PauliString,
) -> Result<FtMask> {
    build_ft_mask_with(schedule, tails, q, &FtOptions::default())
}

pub fn build_ft_mask_with(
    schedule: &ControlSchedule,
    tails: &[CliffordTableau],
    q: &PauliString,
    opts: &FtOptions,
) -> Result<FtMask> {
    FtKernels::compute(schedule, opts)?.mask(tails, q)
}

/// Tableaus of the layers after each layer of a Clifford circuit.
pub fn tail_tableaus(circuit: &Circuit) -> Result<Vec<CliffordTableau>> {
    if let Some(g) = circuit.first_non_clifford() {
        return Err(Error::NonClifford(g.name().to_string()));
    }
    let n = circuit.num_qubits();
    let l = circuit.num_layers();
    let mut tails = vec![CliffordTableau::identity(n); l];
    for j in (0..l.saturating_sub(1)).rev() {
        tails[j] = CliffordTableau::from_gates(n, &circuit.layers()[j + 1].gates)?.then(&tails[j + 1])?;
    }
    Ok(tails)
}

/// Symmetric mask over `(noise operator, layer)` pairs, block diagonal in
/// the layer index.
#[derive(Clone, Debug, PartialEq)]
pub struct FtMask {
    ops: usize,
    l: usize,
    m: DMatrix<f64>,
    /// Cells per segment of the finest grid used.
    pub nodes: usize,
}

impl FtMask {
    /// Mask from an explicit matrix; only the within-layer entries may be
    /// nonzero.
    pub fn from_matrix(ops: usize, l: usize, m: DMatrix<f64>) -> Result<Self> {
        check_dim(ops * l, m.nrows())?;
        check_dim(ops * l, m.ncols())?;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if r % l != c % l && m[(r, c)] != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "entry ({r}, {c}) couples different layers"
                    )));
                }
            }
        }
        let mask = FtMask { ops, l, m, nodes: 0 };
        mask.check_psd()?;
        Ok(mask)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn num_layers(&self) -> usize {
        self.l
    }

    pub fn num_noise_ops(&self) -> usize {
        self.ops
    }

    pub fn entry(&self, a: usize, b: usize, layer: usize) -> f64 {
        self.m[(a * self.l + layer, b * self.l + layer)]
    }

    /// Diagonal of block `(a, b)` over layers.
    pub fn block(&self, a: usize, b: usize) -> Vec<f64> {
        (0..self.l).map(|j| self.entry(a, b, j)).collect()
    }

    /// Mask divided by the normalization, comparable with a 0/1 mask.
    pub fn normalized(&self) -> DMatrix<f64> {
        &self.m / DEFAULT_NORMALIZATION
    }

    /// Flat indices of the sites in layer `j`.
    pub fn layer_indices(&self, j: usize) -> Vec<usize> {
        (0..self.ops).map(|a| a * self.l + j).collect()
    }

    pub fn check_psd(&self) -> Result<()> {
        if self.dim() == 0 {
            return Ok(());
        }
        let asym = (&self.m - self.m.transpose()).amax();
        if asym > 1e-12 * self.m.amax().max(1.0) {
            return Err(Error::NotSymmetric(asym));
        }
        let min = SymmetricEigen::new(self.m.clone()).eigenvalues.min();
        let tol = PSD_TOL * self.m.amax().max(1.0);
        if min < -tol {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
                tolerance: tol,
            });
        }
        Ok(())
    }

    /// Symmetric PSD square root, negative round-off clipped.
    fn sqrt(&self) -> Result<DMatrix<f64>> {
        self.check_psd()?;
        let eig = SymmetricEigen::new(self.m.clone());
        let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
    }
}

fn half_log_det(root: &DMatrix<f64>, sigma: &DMatrix<f64>, c: f64) -> Result<f64> {
    let k = root.nrows();
    if k == 0 {
        return Ok(0.0);
    }
    let inner = root * sigma * root;
    let a = DMatrix::identity(k, k) + (&inner + inner.transpose()) * (0.5 * c);
    let chol = Cholesky::new(a).ok_or(Error::NotPsd {
        min_eigenvalue: f64::NAN,
        tolerance: 0.0,
    })?;
    Ok(-chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// `det(1 + c M Σ)^(-1/2)`, evaluated as `det(1 + c √M Σ √M)^(-1/2)`.
pub fn ft_eigenvalue_gaussian(mask: &FtMask, cov: &CovMatrix, c: f64) -> Result<f64> {
    check_dim(mask.dim(), cov.dim())?;
    Ok(half_log_det(&mask.sqrt()?, cov.matrix(), c)?.exp())
}

/// Covariance with every correlation between different layers removed.
pub fn without_temporal_correlations(mask: &FtMask, cov: &CovMatrix) -> Result<CovMatrix> {
    check_dim(mask.dim(), cov.dim())?;
    let l = mask.l;
    let m = DMatrix::from_fn(cov.dim(), cov.dim(), |r, c| {
        if r % l == c % l {
            cov.get(r, c)
        } else {
            0.0
        }
    });
    CovMatrix::new(m)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundViolation {
    pub index: usize,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub covariance: Vec<Vec<f64>>,
    pub mask: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BoundsReport {
    pub checked: usize,
    /// Largest value of `lower - value` and of `value - upper` seen.
    pub worst_lower_gap: f64,
    pub worst_upper_gap: f64,
    pub violations: Vec<BoundViolation>,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Checks `λ(Σ without temporal correlations) ≤ λ(Σ) ≤ (1 + c tr(MΣ))^(-1/2)`
/// for each covariance. The upper value is what a rank-one Σ with the same
/// `tr(MΣ)` attains.
pub fn ft_bounds_check(mask: &FtMask, covs: &[CovMatrix], c: f64, tol: f64) -> Result<BoundsReport> {
    let root = mask.sqrt()?;
    let mut report = BoundsReport {
        worst_lower_gap: f64::NEG_INFINITY,
        worst_upper_gap: f64::NEG_INFINITY,
        ..Default::default()
    };
    for (index, cov) in covs.iter().enumerate() {
        check_dim(mask.dim(), cov.dim())?;
        let value = half_log_det(&root, cov.matrix(), c)?.exp();
        let block = without_temporal_correlations(mask, cov)?;
        let lower = half_log_det(&root, block.matrix(), c)?.exp();
        let tr = (mask.matrix() * cov.matrix()).trace();
        let upper = (1.0 + c * tr).powf(-0.5);
        report.checked += 1;
        report.worst_lower_gap = report.worst_lower_gap.max(lower - value);
        report.worst_upper_gap = report.worst_upper_gap.max(value - upper);
        if lower > value + tol || value > upper + tol {
            report.violations.push(BoundViolation {
                index,
                lower,
                value,
                upper,
                covariance: to_rows(cov.matrix()),
                mask: to_rows(mask.matrix()),
            });
        }
    }
    Ok(report)
}

/// Random covariance whose within-layer blocks equal those of `blocks`
/// while the correlations between layers are random.
///
/// With `L` the block-diagonal Cholesky factor of `blocks`, returns
/// `L D^-1 W D^-T Lᵀ` for a Wishart matrix `W` whose diagonal blocks are
/// whitened by `D`, so every within-layer block is reproduced exactly.
pub fn random_cov_fixed_blocks<R: Rng>(blocks: &CovMatrix, l: usize, rng: &mut R) -> Result<CovMatrix> {
    let dim = blocks.dim();
    if l == 0 || !dim.is_multiple_of(l) {
        return Err(Error::InvalidParameter(format!("{dim} sites do not split into {l} layers")));
    }
    let ops = dim / l;
    let g = DMatrix::from_fn(dim, 2 * dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w = &g * g.transpose();
    let mut whiten = DMatrix::zeros(dim, dim);
    let mut factor = DMatrix::zeros(dim, dim);
    for j in 0..l {
        let idx: Vec<usize> = (0..ops).map(|a| a * l + j).collect();
        let wj = DMatrix::from_fn(ops, ops, |a, b| w[(idx[a], idx[b])]);
        let lw = Cholesky::new(wj)
            .ok_or_else(|| Error::InvalidParameter("degenerate Wishart block".into()))?
            .l();
        let lw_inv = lw
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("degenerate Wishart block".into()))?;
        let bj = blocks.submatrix(&idx);
        let eig = SymmetricEigen::new(bj);
        let lb = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()))
            * eig.eigenvectors.transpose();
        for a in 0..ops {
            for b in 0..ops {
                whiten[(idx[a], idx[b])] = lw_inv[(a, b)];
                factor[(idx[a], idx[b])] = lb[(a, b)];
            }
        }
    }
    let corr = &whiten * w * whiten.transpose();
    let s = &factor * corr * factor.transpose();
    CovMatrix::new((&s + s.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{Gate, Layer};
    use crate::noise::cov_exponential;
    use crate::pauli::{build_mask, CliffordCircuit};
    use crate::rng;
    use std::f64::consts::PI;

    fn all_paulis(n: usize) -> Vec<PauliString> {
        (0..1usize << (2 * n)).map(|i| pauli_from_index(n, i)).collect()
    }

    fn circuit(n: usize, layers: Vec<Vec<Gate>>) -> Circuit {
        let l = layers.into_iter().map(|g| Layer::new(g, (0..n).collect())).collect();
        Circuit::new(n, l).unwrap()
    }

    #[test]
    fn pauli_coefficients_match_dense_paulis() {
        let n = 2;
        for (i, p) in all_paulis(n).iter().enumerate() {
            let c = pauli_coefficients(n, &pauli_matrix(p));
            for (k, v) in c.iter().enumerate() {
                assert!((v - if k == i { 1.0 } else { 0.0 }).abs() < 1e-14, "{p} {k}");
            }
        }
    }

    #[test]
    fn generator_reproduces_unitary() {
        for gates in [vec![Gate::H(0)], vec![Gate::S(1), Gate::Cx(0, 1)], vec![Gate::Swap(0, 1)]] {
            let u = unitary(2, &gates).unwrap();
            let g = unitary_generator(&u);
            let back = HermitianFlow::new(&g).at(1.0);
            assert!(phase_distance(&back, &u) < 1e-12);
        }
    }

    #[test]
    fn instantaneous_limit_is_twice_the_commutation_mask() {
        let gates = vec![
            vec![Gate::H(0), Gate::S(1)],
            vec![Gate::Cx(0, 1)],
            vec![Gate::SqrtX(1)],
            vec![Gate::Cz(0, 1), Gate::H(1)],
        ];
        let c = circuit(2, gates);
        let cc = CliffordCircuit::from_circuit(&c, crate::circuit::Clock::PerQubit).unwrap();
        let tails = tail_tableaus(&c).unwrap();
        for fraction in [0.0, 1e-11] {
            let sched = ControlSchedule::from_circuit(&c, fraction).unwrap();
            sched.check_against(&c).unwrap();
            let kernels = FtKernels::compute(&sched, &FtOptions::default()).unwrap();
            for q in all_paulis(2) {
                let ft = kernels.mask(&tails, &q).unwrap().normalized();
                let bits = build_mask(&cc, &q).unwrap();
                for r in 0..ft.nrows() {
                    for s in 0..ft.ncols() {
                        let want = if r == s && bits.get(r) { 1.0 } else { 0.0 };
                        assert!((ft[(r, s)] - want).abs() < 1e-8, "{q} ({r},{s}) {}", ft[(r, s)]);
                    }
                }
            }
        }
    }

    #[test]
    fn driven_single_qubit_matches_closed_form() {
        // W(u) = exp(-i ω X u) rotates Z into cos(2ωu) Z + sin(2ωu) Y, so the
        // averaged Y coefficient is (1 - cos 2ω) / 2ω and m_Z = 2 ā_Y².
        for (omega, gate) in [(PI / 4.0, Gate::SqrtX(0)), (PI / 2.0, Gate::X(0))] {
            let x = pauli_matrix(&"X".parse().unwrap());
            let seg = Segment {
                generator: x * C64::new(omega, 0.0),
                duration: 1.0,
            };
            let sched = ControlSchedule::new(1, 1.0, vec![vec![seg]], z_noise(1)).unwrap();
            sched.check_against(&circuit(1, vec![vec![gate]])).unwrap();
            let tails = vec![CliffordTableau::identity(1)];
            let m = build_ft_mask(&sched, &tails, &"Z".parse().unwrap()).unwrap();
            let ay = (1.0 - (2.0 * omega).cos()) / (2.0 * omega);
            let entry = m.normalized()[(0, 0)];
            assert!((entry - ay * ay).abs() < 1e-8, "{entry}");
            assert!(entry > 0.0 && entry < 1.0);
            // X noise-free direction: Z and Y both anticommute with X
            let mx = build_ft_mask(&sched, &tails, &"X".parse().unwrap()).unwrap();
            let az = (2.0 * omega).sin() / (2.0 * omega);
            assert!((mx.normalized()[(0, 0)] - (ay * ay + az * az)).abs() < 1e-8);
        }
    }

    #[test]
    fn symmetrised_kernel_is_product_of_time_averages() {
        let c = circuit(2, vec![vec![Gate::Swap(0, 1)], vec![Gate::H(0), Gate::Cx(1, 0)]]);
        let sched = ControlSchedule::from_circuit(&c, 0.7).unwrap();
        let kernels = FtKernels::compute(&sched, &FtOptions::default()).unwrap();
        let tails = tail_tableaus(&c).unwrap();
        for q in all_paulis(2) {
            let m = kernels.mask(&tails, &q).unwrap();
            for (j, kern) in kernels.layers().iter().enumerate() {
                for a in 0..2 {
                    for b in 0..2 {
                        // m = 2 Σ_{P anticommuting with the pulled-back Q} ā^α_P ā^α'_P
                        let want: f64 = (0..16)
                            .filter(|&p| {
                                let moved = tails[j].conjugate(&pauli_from_index(2, p)).unwrap();
                                !moved.commutes_unchecked(&q)
                            })
                            .map(|p| 2.0 * kern.mean(a, p) * kern.mean(b, p))
                            .sum();
                        assert!((m.entry(a, b, j) - want).abs() < 1e-12);
                    }
                }
            }
            m.check_psd().unwrap();
        }
    }

    /// Literal twirl of the dense superoperator `ρ ↦ [A, [B, ρ]]` over all
    /// Paulis, compared with the Pauli-channel coefficients.
    #[test]
    fn twirled_generator_matches_dense_pauli_sum() {
        let n = 2;
        let d = 4;
        let mut r = rng::stream(5, 0, 0);
        let herm = |r: &mut rand_chacha::ChaCha8Rng| {
            let m = DMatrix::from_fn(d, d, |_, _| C64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5));
            &m + m.adjoint()
        };
        let (a, b) = (herm(&mut r), herm(&mut r));
        let ca = pauli_coefficients(n, &a);
        let cb = pauli_coefficients(n, &b);
        // single-instant kernel: ordered integrals replaced by the product
        let kern = LayerKernel {
            n,
            ops: 2,
            ordered: (0..4)
                .flat_map(|pair| (0..16).map(move |p| (pair, p)))
                .map(|(pair, p)| if pair == 1 { ca[p] * cb[p] } else { 0.0 })
                .collect(),
            mean: vec![0.0; 32],
            nodes: 1,
        };
        let superop = |x: &DMatrix<C64>, rho: &DMatrix<C64>| x * rho - rho * x;
        let paulis: Vec<DMatrix<C64>> = all_paulis(n).iter().map(pauli_matrix).collect();
        for (ri, rm) in paulis.iter().enumerate() {
            // (1/16) Σ_P P K(P R P) P, projected back on R
            let mut acc = DMatrix::<C64>::zeros(d, d);
            for p in &paulis {
                let inner = p * rm * p;
                let out = superop(&a, &superop(&b, &inner));
                acc += p * out * p;
            }
            acc /= C64::new(16.0, 0.0);
            let eig = pauli_coefficients(n, &acc)[ri];
            assert!((eig - kern.twirled_eigenvalue(0, 1, ri)).abs() < 1e-12, "{ri}");
        }
    }

    #[test]
    fn uncoupled_qubits_have_no_cross_blocks() {
        let c = circuit(2, vec![vec![Gate::H(0), Gate::S(1)], vec![Gate::SqrtX(0), Gate::H(1)]]);
        let sched = ControlSchedule::from_circuit(&c, 1.0).unwrap();
        let tails = tail_tableaus(&c).unwrap();
        for q in all_paulis(2) {
            let m = build_ft_mask(&sched, &tails, &q).unwrap();
            assert!(m.block(0, 1).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn entangling_control_couples_qubits() {
        let c = circuit(2, vec![vec![Gate::Swap(0, 1)]]);
        let sched = ControlSchedule::from_circuit(&c, 1.0).unwrap();
        let tails = tail_tableaus(&c).unwrap();
        let any = all_paulis(2).iter().any(|q| {
            let m = build_ft_mask(&sched, &tails, q).unwrap();
            m.block(0, 1).iter().any(|v| v.abs() > 1e-3)
        });
        assert!(any);
    }

    #[test]
    fn refinement_changes_entries_below_tolerance() {
        let c = circuit(2, vec![vec![Gate::Cx(0, 1)], vec![Gate::H(0), Gate::SqrtX(1)]]);
        let sched = ControlSchedule::from_circuit(&c, 0.5).unwrap();
        let tails = tail_tableaus(&c).unwrap();
        let q: PauliString = "XY".parse().unwrap();
        let m = build_ft_mask(&sched, &tails, &q).unwrap();
        let fine = FtOptions {
            min_nodes: 2 * m.nodes,
            max_nodes: 2 * m.nodes,
            ..Default::default()
        };
        let finer = FtKernels {
            n: 2,
            ops: 2,
            layers: (0..2).map(|j| kernel_on_grid(&sched, j, fine.min_nodes)).collect(),
        }
        .mask(&tails, &q)
        .unwrap();
        assert!((m.matrix() - finer.matrix()).amax() < 1e-8);
    }

    #[test]
    fn quadrature_failure_is_reported() {
        let c = circuit(1, vec![vec![Gate::H(0)]]);
        let sched = ControlSchedule::from_circuit(&c, 1.0).unwrap();
        let opts = FtOptions {
            tol: 1e-14,
            min_nodes: 4,
            max_nodes: 16,
        };
        assert!(matches!(layer_kernel(&sched, 0, &opts), Err(Error::Quadrature { .. })));
    }

    #[test]
    fn eigenvalue_reductions() {
        let c = circuit(2, vec![vec![Gate::H(0)], vec![Gate::Cx(0, 1)], vec![Gate::S(1)]]);
        let cc = CliffordCircuit::from_circuit(&c, crate::circuit::Clock::PerQubit).unwrap();
        let sched = ControlSchedule::from_circuit(&c, 0.0).unwrap();
        let tails = tail_tableaus(&c).unwrap();
        let cov = cov_exponential(2, 3, 0.15, 2.0, 1.0).unwrap();
        for q in all_paulis(2) {
            let m = build_ft_mask(&sched, &tails, &q).unwrap();
            assert_eq!(ft_eigenvalue_gaussian(&m, &CovMatrix::zeros(6), 2.0).unwrap(), 1.0);
            let ft = ft_eigenvalue_gaussian(&m, &cov, DEFAULT_NORMALIZATION).unwrap();
            let main = crate::analytic::eigenvalue_gaussian(&build_mask(&cc, &q).unwrap(), &cov).unwrap();
            assert!((ft - main).abs() < 1e-8);
        }
    }

    fn driven_mask() -> FtMask {
        let c = circuit(2, vec![vec![Gate::Swap(0, 1)], vec![Gate::H(0), Gate::Cx(0, 1)], vec![Gate::SqrtX(1)], vec![Gate::Cz(0, 1)]]);
        let sched = ControlSchedule::from_circuit(&c, 0.6).unwrap();
        build_ft_mask(&sched, &tail_tableaus(&c).unwrap(), &"XY".parse().unwrap()).unwrap()
    }

    #[test]
    fn rank_one_and_block_diagonal_saturate() {
        let m = driven_mask();
        let mut r = rng::stream(9, 0, 0);
        let v = DVector::from_fn(8, |_, _| 0.1 * r.sample::<f64, _>(StandardNormal));
        let rank_one = CovMatrix::new(&v * v.transpose()).unwrap();
        let lam = ft_eigenvalue_gaussian(&m, &rank_one, 2.0).unwrap();
        let tr = (m.matrix() * rank_one.matrix()).trace();
        assert!((lam.powi(-2) - (1.0 + 2.0 * tr)).abs() < 1e-12);
        let block = without_temporal_correlations(&m, &rank_one).unwrap();
        let report = ft_bounds_check(&m, &[block.clone(), rank_one], 2.0, 1e-12).unwrap();
        assert!(report.passed());
        assert!(report.worst_lower_gap.abs() < 1e-14);
        assert!(report.worst_upper_gap.abs() < 1e-12);
    }

    #[test]
    fn bounds_hold_for_random_covariances_with_fixed_blocks() {
        let m = driven_mask();
        let base = cov_exponential(2, 4, 0.15, 3.0, 1.0).unwrap();
        let blocks = without_temporal_correlations(&m, &base).unwrap();
        let mut r = rng::stream(11, rng::tag::COVARIANCES, 0);
        let covs: Vec<CovMatrix> = (0..200)
            .map(|_| random_cov_fixed_blocks(&blocks, 4, &mut r).unwrap())
            .collect();
        for s in &covs {
            for j in 0..4 {
                let idx = m.layer_indices(j);
                assert!((s.submatrix(&idx) - blocks.submatrix(&idx)).amax() < 1e-12);
            }
        }
        let report = ft_bounds_check(&m, &covs, 2.0, 1e-12).unwrap();
        assert_eq!(report.checked, 200);
        assert!(report.passed(), "{:?}", report.violations.first().map(|v| (v.lower, v.value, v.upper)));
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"n": 1, "layers": [{"segments": [
            {"duration": 0.5, "generator": [{"pauli": "X", "coeff": 0.7853981633974483}]},
            {"duration": 0.5, "generator": []}]}]}"#;
        let s = ControlSchedule::from_json(text).unwrap();
        s.check_against(&circuit(1, vec![vec![Gate::SqrtX(0)]])).unwrap();
        let back = ControlSchedule::from_json(&s.to_json().unwrap()).unwrap();
        assert!(phase_distance(&back.layer_unitary(0), &s.layer_unitary(0)) < 1e-14);
        assert!(ControlSchedule::from_json(r#"{"n": 5, "layers": []}"#).is_err());
        let bad = r#"{"n": 1, "layers": [{"segments": [{"duration": 0.4, "generator": []}]}]}"#;
        assert!(ControlSchedule::from_json(bad).is_err());
    }
}
