//! Random brickwork circuit ensembles and the bare-versus-twirled fidelity
//! study over a grid of correlation times.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::FidelityEstimate;
use crate::circuit::{Circuit, Clock, Gate, Layer};
use crate::error::{Error, Result};
use crate::montecarlo::{average_fidelity_mc, McOptions, NoisyCircuit};
use crate::noise::{cov_exponential_layout, SpatialKernel};
use crate::pauli::CliffordTableau;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleKind {
    /// Sparse S / √X single-qubit layers between CNOT layers.
    CliffordBrickwork,
    /// As above plus T gates.
    TDopedBrickwork,
    /// As the Clifford ensemble plus a uniformly random single-qubit Clifford
    /// on every qubit before each CNOT layer.
    UniformCliffordBrickwork,
}

impl std::str::FromStr for EnsembleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clifford-brickwork" => Ok(EnsembleKind::CliffordBrickwork),
            "t-doped-brickwork" => Ok(EnsembleKind::TDopedBrickwork),
            "uniform-clifford-brickwork" => Ok(EnsembleKind::UniformCliffordBrickwork),
            other => Err(Error::InvalidParameter(format!("unknown ensemble `{other}`"))),
        }
    }
}

impl EnsembleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleKind::CliffordBrickwork => "clifford-brickwork",
            EnsembleKind::TDopedBrickwork => "t-doped-brickwork",
            EnsembleKind::UniformCliffordBrickwork => "uniform-clifford-brickwork",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub n: usize,
    /// Number of CNOT layers.
    pub depth: usize,
    /// Probability of an S or √X on each qubit in a single-qubit layer.
    pub p_single: f64,
    /// Probability of an extra T on each qubit (T-doped ensemble only).
    pub p_t: f64,
}

impl EnsembleSpec {
    pub fn new(kind: EnsembleKind, n: usize, depth: usize) -> Self {
        EnsembleSpec {
            kind,
            n,
            depth,
            p_single: 0.3,
            p_t: 0.5,
        }
    }
}

/// The 24 single-qubit Cliffords (with Pauli signs distinguished) as words
/// in H and S.
pub fn single_qubit_cliffords() -> Vec<Vec<Gate>> {
    let mut found: Vec<(CliffordTableau, Vec<Gate>)> =
        vec![(CliffordTableau::identity(1), Vec::new())];
    let mut frontier = 0;
    while frontier < found.len() {
        let (t, w) = found[frontier].clone();
        for g in [Gate::H(0), Gate::S(0)] {
            let mut t2 = t.clone();
            t2.apply_gate(&g).expect("single-qubit Clifford");
            if !found.iter().any(|(u, _)| *u == t2) {
                let mut w2 = w.clone();
                w2.push(g);
                found.push((t2, w2));
            }
        }
        frontier += 1;
    }
    found.into_iter().map(|(_, w)| w).collect()
}

fn relabel(word: &[Gate], q: usize) -> impl Iterator<Item = Gate> + '_ {
    word.iter().map(move |g| match g {
        Gate::H(_) => Gate::H(q),
        Gate::S(_) => Gate::S(q),
        other => *other,
    })
}

/// One random circuit: per step a single-qubit layer, then a CNOT layer on
/// pairs (0,1),(2,3),… for even steps and (1,2),(3,4),… for odd steps, with
/// dephasing on both participants of every CNOT.
pub fn generate<R: Rng>(spec: &EnsembleSpec, rng: &mut R) -> Result<Circuit> {
    if spec.n < 2 {
        return Err(Error::InvalidParameter("brickwork needs at least 2 qubits".into()));
    }
    let cliffords = single_qubit_cliffords();
    let mut layers = Vec::new();
    for step in 0..spec.depth {
        let mut gates = Vec::new();
        for q in 0..spec.n {
            if rng.random::<f64>() < spec.p_single {
                gates.push(if rng.random::<bool>() { Gate::S(q) } else { Gate::SqrtX(q) });
            }
            match spec.kind {
                EnsembleKind::TDopedBrickwork => {
                    if rng.random::<f64>() < spec.p_t {
                        gates.push(Gate::T(q));
                    }
                }
                EnsembleKind::UniformCliffordBrickwork => {
                    let w = &cliffords[rng.random_range(0..cliffords.len())];
                    gates.extend(relabel(w, q));
                }
                EnsembleKind::CliffordBrickwork => {}
            }
        }
        layers.push(Layer::new(gates, Vec::new()));
        let mut cx = Vec::new();
        let mut noise = Vec::new();
        let mut a = step % 2;
        while a + 1 < spec.n {
            cx.push(Gate::Cx(a, a + 1));
            noise.extend([a, a + 1]);
            a += 2;
        }
        layers.push(Layer::new(cx, noise));
    }
    Circuit::new(spec.n, layers)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRow {
    pub circuit: usize,
    pub circuit_hash: String,
    pub tau_over_tg: f64,
    pub bare: FidelityEstimate,
    pub twirled: FidelityEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub tau_over_tg: f64,
    pub bare_mean: f64,
    pub bare_std: f64,
    pub twirled_mean: f64,
    pub twirled_std: f64,
    /// Standard error of each ensemble mean, combining circuit-to-circuit
    /// spread (which already contains the per-circuit noise error).
    pub bare_mean_se: f64,
    pub twirled_mean_se: f64,
    pub circuits: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub spec: EnsembleSpec,
    pub circuits: usize,
    pub sigma: f64,
    pub taus: Vec<f64>,
    pub clock: Clock,
    pub mc: McOptions,
    pub seed: u64,
}

/// Bare and twirled fidelity of every circuit at every correlation time.
///
/// Circuit `c` is drawn from its own stream; its Monte-Carlo seed is shared
/// across the grid and between bare and twirled runs, so differences are
/// paired.
pub fn circuit_ensemble_study(cfg: &StudyConfig) -> Result<Vec<EnsembleRow>> {
    if cfg.taus.is_empty() {
        return Err(Error::InvalidParameter("empty correlation-time grid".into()));
    }
    let mut rows = Vec::new();
    for c in 0..cfg.circuits {
        let mut r = rng::stream(cfg.seed, rng::tag::CIRCUITS, c as u64);
        let circuit = generate(&cfg.spec, &mut r)?;
        let hash = circuit.content_hash();
        let layout = circuit.noise_layout(cfg.clock);
        let nc = NoisyCircuit::new(circuit);
        let mc_seed = rng::derive(cfg.seed, rng::tag::NOISE, c as u64);
        for &tau in &cfg.taus {
            let cov = cov_exponential_layout(&layout, cfg.sigma, tau, 1.0, &SpatialKernel::Diagonal)?;
            let run = |twirled| {
                let opts = McOptions {
                    twirled,
                    seed: mc_seed,
                    ..cfg.mc
                };
                average_fidelity_mc(&nc, &cov, &opts)
            };
            rows.push(EnsembleRow {
                circuit: c,
                circuit_hash: hash.clone(),
                tau_over_tg: tau,
                bare: run(false)?,
                twirled: run(true)?,
            });
        }
    }
    Ok(rows)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let m = v.iter().sum::<f64>() / k;
    let s = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, s)
}

/// Ensemble mean and circuit-to-circuit standard deviation per grid point.
pub fn summarize(rows: &[EnsembleRow]) -> Vec<EnsembleSummary> {
    let mut taus: Vec<f64> = Vec::new();
    for r in rows {
        if !taus.contains(&r.tau_over_tg) {
            taus.push(r.tau_over_tg);
        }
    }
    taus.iter()
        .map(|&t| {
            let sel: Vec<&EnsembleRow> = rows.iter().filter(|r| r.tau_over_tg == t).collect();
            let b: Vec<f64> = sel.iter().map(|r| r.bare.value).collect();
            let w: Vec<f64> = sel.iter().map(|r| r.twirled.value).collect();
            let (bm, bs) = mean_std(&b);
            let (wm, ws) = mean_std(&w);
            let k = (sel.len() as f64).sqrt();
            EnsembleSummary {
                tau_over_tg: t,
                bare_mean: bm,
                bare_std: bs,
                twirled_mean: wm,
                twirled_std: ws,
                bare_mean_se: bs / k,
                twirled_mean_se: ws / k,
                circuits: sel.len(),
            }
        })
        .collect()
}
