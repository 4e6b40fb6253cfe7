//! Statevector Monte-Carlo estimate of the average circuit fidelity under
//! coherent (bare) or Pauli-twirled correlated dephasing.
//!
//! For a noisy realization `U_noisy`, `E_ψ |⟨ψ|U_ideal† U_noisy|ψ⟩|²` over a
//! state 2-design equals the average gate fidelity of `U_ideal† U_noisy`.
//! Random stabilizer states are such a design.
//!
//! Twirling a Clifford layer `G` with a random Pauli `P` and its correction
//! `P^c = G P G†` conjugates the following dephasing by `P^c`, and
//! `P^c exp(-iθZ) P^c = exp(∓iθZ)`: the twirled circuit is the bare circuit
//! with an independent uniformly random sign on every noise angle of a
//! twirled layer. The engine uses that form; [`TwirlSample`] keeps the literal
//! dressing for verification.

use rand::Rng;
use rayon::prelude::*;

use crate::analytic::{mean_and_se, FidelityEstimate, Method};
use crate::circuit::{Circuit, Clock, Gate, NoiseLayout};
use crate::error::{check_dim, Error, Result};
use crate::noise::{CovMatrix, NoiseSampler};
use crate::pauli::{CliffordTableau, Pauli, PauliString};
use crate::rng;
use crate::stabilizer::StabilizerSampler;
use crate::statevec::{StateVector, MAX_QUBITS};

/// Default largest register simulated.
pub const DEFAULT_MAX_QUBITS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct McOptions {
    pub twirled: bool,
    /// Independent noise realizations; each is one statistical unit.
    pub n_noise: usize,
    /// Twirl draws per noise realization.
    pub n_twirl: usize,
    /// Input states per noise realization, shared by its twirl draws.
    pub n_states: usize,
    pub seed: u64,
    pub max_qubits: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            twirled: true,
            n_noise: 256,
            n_twirl: 1,
            n_states: 4,
            seed: 0,
            max_qubits: DEFAULT_MAX_QUBITS,
        }
    }
}

/// A circuit prepared for repeated noisy simulation.
#[derive(Clone, Debug)]
pub struct NoisyCircuit {
    circuit: Circuit,
    layout: NoiseLayout,
}

impl NoisyCircuit {
    pub fn new(circuit: Circuit) -> Self {
        let layout = circuit.noise_layout(Clock::PerQubit);
        NoisyCircuit { circuit, layout }
    }

    pub fn circuit(&self) -> &Circuit {
        &self.circuit
    }

    pub fn num_sites(&self) -> usize {
        self.layout.len()
    }

    /// Checks that every noisy layer can be twirled.
    pub fn check_twirlable(&self) -> Result<()> {
        for (j, layer) in self.circuit.layers().iter().enumerate() {
            if !layer.noise.is_empty() {
                if let Some(g) = layer.gates.iter().find(|g| !g.is_clifford()) {
                    return Err(Error::NonClifford(format!(
                        "{} in noisy layer {j} cannot be Pauli-twirled",
                        g.name()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn run_ideal(&self, state: &mut StateVector) -> Result<()> {
        for layer in self.circuit.layers() {
            state.apply_gates(&layer.gates)?;
        }
        Ok(())
    }

    /// Applies the circuit with the noise angles `theta` (flat order), each
    /// multiplied by `signs[flat]` when given.
    pub fn run_noisy(&self, state: &mut StateVector, theta: &[f64], signs: Option<&[f64]>) -> Result<()> {
        check_dim(self.layout.len(), theta.len())?;
        let mut rot = Vec::new();
        for (j, layer) in self.circuit.layers().iter().enumerate() {
            state.apply_gates(&layer.gates)?;
            rot.clear();
            for &(q, flat) in self.layout.layer_sites(j) {
                let s = signs.map_or(1.0, |s| s[flat]);
                rot.push((q, s * theta[flat]));
            }
            state.apply_z_phases(&rot)?;
        }
        Ok(())
    }
}

/// Uniform `±1` per noise site.
pub fn twirl_signs<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// Per-layer random Pauli and its compensation `P^c = G P G†` (up to sign).
#[derive(Clone, Debug)]
pub struct TwirlSample {
    pub paulis: Vec<PauliString>,
    pub compensations: Vec<PauliString>,
}

impl TwirlSample {
    /// Draws a Pauli for every layer; all layers must be Clifford.
    pub fn draw<R: Rng>(circuit: &Circuit, rng: &mut R) -> Result<Self> {
        let n = circuit.num_qubits();
        let mut paulis = Vec::new();
        let mut compensations = Vec::new();
        for layer in circuit.layers() {
            let t = CliffordTableau::from_gates(n, &layer.gates)?;
            let mut p = PauliString::identity(n);
            for k in 0..n {
                let pk = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][rng.random_range(0..4usize)];
                p.set(k, pk);
            }
            compensations.push(t.conjugate(&p)?);
            paulis.push(p);
        }
        Ok(TwirlSample {
            paulis,
            compensations,
        })
    }

    /// Runs `P_j`, the layer gates, the layer noise and `P^c_j` for every layer.
    pub fn run_dressed(&self, nc: &NoisyCircuit, state: &mut StateVector, theta: &[f64]) -> Result<()> {
        check_dim(nc.layout.len(), theta.len())?;
        for (j, layer) in nc.circuit.layers().iter().enumerate() {
            state.apply_pauli(&self.paulis[j])?;
            state.apply_gates(&layer.gates)?;
            let rot: Vec<(usize, f64)> = nc
                .layout
                .layer_sites(j)
                .iter()
                .map(|&(q, flat)| (q, theta[flat]))
                .collect();
            state.apply_z_phases(&rot)?;
            state.apply_pauli(&self.compensations[j])?;
        }
        Ok(())
    }
}

/// Average circuit fidelity of `nc` under noise drawn from `cov`.
pub fn average_fidelity_mc(nc: &NoisyCircuit, cov: &CovMatrix, opts: &McOptions) -> Result<FidelityEstimate> {
    let values = fidelity_units(nc, cov, opts)?;
    let (mean, se) = jackknife_mean(&values);
    Ok(FidelityEstimate::from_fidelity(
        nc.circuit.num_qubits(),
        mean,
        se,
        Method::MonteCarlo,
    ))
}

/// Per-noise-realization fidelity averages (the statistical units).
pub fn fidelity_units(nc: &NoisyCircuit, cov: &CovMatrix, opts: &McOptions) -> Result<Vec<f64>> {
    let n = nc.circuit.num_qubits();
    if n > opts.max_qubits.min(MAX_QUBITS) {
        return Err(Error::ResourceLimit(format!(
            "statevector Monte Carlo limited to {} qubits, circuit has {n}",
            opts.max_qubits.min(MAX_QUBITS)
        )));
    }
    check_dim(nc.num_sites(), cov.dim())?;
    if opts.n_noise < 2 || opts.n_states == 0 || opts.n_twirl == 0 {
        return Err(Error::InvalidParameter(
            "need n_noise >= 2 and positive n_states and n_twirl".into(),
        ));
    }
    if opts.twirled {
        nc.check_twirlable()?;
    }
    let sampler = NoiseSampler::new(cov, opts.seed)?;
    let states = StabilizerSampler::new(n);
    (0..opts.n_noise as u64)
        .into_par_iter()
        .map(|k| {
            let theta = sampler.draw(k).theta;
            let mut srng = rng::stream(opts.seed, rng::tag::STATES, k);
            let mut trng = rng::stream(opts.seed, rng::tag::TWIRL, k);
            let inputs: Vec<StateVector> = (0..opts.n_states)
                .map(|_| states.sample(&mut srng))
                .collect::<Result<_>>()?;
            let ideal: Vec<StateVector> = inputs
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    nc.run_ideal(&mut s).map(|_| s)
                })
                .collect::<Result<_>>()?;
            let draws = if opts.twirled { opts.n_twirl } else { 1 };
            let mut acc = 0.0;
            for _ in 0..draws {
                let signs = opts.twirled.then(|| twirl_signs(theta.len(), &mut trng));
                for (inp, out) in inputs.iter().zip(&ideal) {
                    let mut s = inp.clone();
                    nc.run_noisy(&mut s, &theta, signs.as_deref())?;
                    acc += out.inner(&s).norm_sqr();
                }
            }
            Ok(acc / (draws * opts.n_states) as f64)
        })
        .collect()
}

/// Mean and delete-one jackknife standard error.
pub fn jackknife_mean(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    let total: f64 = values.iter().sum();
    let mean = total / k as f64;
    if k < 2 {
        return (mean, 0.0);
    }
    let loo: Vec<f64> = values.iter().map(|v| (total - v) / (k - 1) as f64).collect();
    let lm = loo.iter().sum::<f64>() / k as f64;
    let var = (k - 1) as f64 / k as f64 * loo.iter().map(|x| (x - lm).powi(2)).sum::<f64>();
    (mean, var.sqrt())
}

/// Mean and standard error of the mean (same as the jackknife for a mean).
pub fn plain_mean(values: &[f64]) -> (f64, f64) {
    mean_and_se(values)
}

/// Single-qubit idle circuit with dephasing after each of `l` layers.
pub fn idle_circuit(n: usize, l: usize) -> Result<Circuit> {
    use crate::circuit::Layer;
    Circuit::new(
        n,
        (0..l).map(|_| Layer::new(Vec::new(), (0..n).collect())).collect(),
    )
}

/// Dense average gate fidelity `(|tr W|² + d) / (d (d + 1))`.
pub fn dense_average_fidelity(n: usize, ideal: &[Gate], actual: &[Gate]) -> Result<f64> {
    let u = crate::statevec::unitary(n, ideal)?;
    let v = crate::statevec::unitary(n, actual)?;
    let w = u.adjoint() * v;
    let d = (1usize << n) as f64;
    Ok((w.trace().norm_sqr() + d) / (d * (d + 1.0)))
}
