//! Gate-level circuit representation shared by the analytic and Monte-Carlo
//! engines, plus the layout of dephasing noise sites.
//!
//! A circuit is an ordered list of layers. Each layer holds gates and the list
//! of qubits that receive a Z-axis over-rotation right after the layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Gate {
    H(usize),
    S(usize),
    Sdg(usize),
    X(usize),
    Y(usize),
    Z(usize),
    SqrtX(usize),
    SqrtXdg(usize),
    T(usize),
    Tdg(usize),
    /// `exp(-i Z angle)`.
    Rz(usize, f64),
    /// `diag(1, exp(i lambda))`.
    U1(usize, f64),
    Cx(usize, usize),
    Cz(usize, usize),
    Swap(usize, usize),
}

impl Gate {
    pub fn qubits(&self) -> Vec<usize> {
        use Gate::*;
        match *self {
            H(q) | S(q) | Sdg(q) | X(q) | Y(q) | Z(q) | SqrtX(q) | SqrtXdg(q) | T(q) | Tdg(q)
            | Rz(q, _) | U1(q, _) => vec![q],
            Cx(a, b) | Cz(a, b) | Swap(a, b) => vec![a, b],
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        matches!(self, Gate::Cx(..) | Gate::Cz(..) | Gate::Swap(..))
    }

    /// Parametrised rotations are always treated as non-Clifford, whatever the
    /// angle.
    pub fn is_clifford(&self) -> bool {
        !matches!(self, Gate::T(_) | Gate::Tdg(_) | Gate::Rz(..) | Gate::U1(..))
    }

    pub fn name(&self) -> &'static str {
        use Gate::*;
        match self {
            H(_) => "h",
            S(_) => "s",
            Sdg(_) => "sdg",
            X(_) => "x",
            Y(_) => "y",
            Z(_) => "z",
            SqrtX(_) => "sx",
            SqrtXdg(_) => "sxdg",
            T(_) => "t",
            Tdg(_) => "tdg",
            Rz(..) => "rz",
            U1(..) => "u1",
            Cx(..) => "cx",
            Cz(..) => "cz",
            Swap(..) => "swap",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Gate::Rz(_, a) | Gate::U1(_, a) => vec![a],
            _ => Vec::new(),
        }
    }

    pub fn from_name(name: &str, qubits: &[usize], params: &[f64]) -> Result<Gate> {
        use Gate::*;
        let want = |nq: usize, np: usize| -> Result<()> {
            if qubits.len() != nq || params.len() != np {
                return Err(Error::Format(format!(
                    "gate `{name}` takes {nq} qubit(s) and {np} parameter(s), got {} and {}",
                    qubits.len(),
                    params.len()
                )));
            }
            Ok(())
        };
        let gate = match name {
            "h" | "s" | "sdg" | "x" | "y" | "z" | "sx" | "sxdg" | "t" | "tdg" | "id" => {
                want(1, 0)?;
                let q = qubits[0];
                match name {
                    "h" => H(q),
                    "s" => S(q),
                    "sdg" => Sdg(q),
                    "x" => X(q),
                    "y" => Y(q),
                    "z" => Z(q),
                    "sx" => SqrtX(q),
                    "sxdg" => SqrtXdg(q),
                    "t" => T(q),
                    "tdg" => Tdg(q),
                    // identity is encoded as a zero rotation
                    _ => Rz(q, 0.0),
                }
            }
            "rz" | "u1" => {
                want(1, 1)?;
                if name == "rz" {
                    Rz(qubits[0], params[0])
                } else {
                    U1(qubits[0], params[0])
                }
            }
            "cx" | "cnot" | "cz" | "swap" => {
                want(2, 0)?;
                if qubits[0] == qubits[1] {
                    return Err(Error::Format(format!(
                        "gate `{name}` applied twice to qubit {}",
                        qubits[0]
                    )));
                }
                match name {
                    "cz" => Cz(qubits[0], qubits[1]),
                    "swap" => Swap(qubits[0], qubits[1]),
                    _ => Cx(qubits[0], qubits[1]),
                }
            }
            other => return Err(Error::Format(format!("unknown gate `{other}`"))),
        };
        Ok(gate)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Layer {
    pub gates: Vec<Gate>,
    /// Qubits that dephase after this layer, each at most once.
    pub noise: Vec<usize>,
}

impl Layer {
    pub fn new(gates: Vec<Gate>, noise: Vec<usize>) -> Self {
        Layer { gates, noise }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    n: usize,
    layers: Vec<Layer>,
}

impl Circuit {
    pub fn new(n: usize, layers: Vec<Layer>) -> Result<Self> {
        for layer in &layers {
            for g in &layer.gates {
                for q in g.qubits() {
                    if q >= n {
                        return Err(Error::QubitOutOfRange { qubit: q, n });
                    }
                }
            }
            let mut seen = vec![false; n];
            for &q in &layer.noise {
                if q >= n {
                    return Err(Error::QubitOutOfRange { qubit: q, n });
                }
                if std::mem::replace(&mut seen[q], true) {
                    return Err(Error::InvalidParameter(format!(
                        "qubit {q} listed twice as a noise site in one layer"
                    )));
                }
            }
        }
        Ok(Circuit { n, layers })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn gate_count(&self) -> usize {
        self.layers.iter().map(|l| l.gates.len()).sum()
    }

    pub fn is_clifford(&self) -> bool {
        self.layers.iter().flat_map(|l| &l.gates).all(Gate::is_clifford)
    }

    pub fn first_non_clifford(&self) -> Option<Gate> {
        self.layers
            .iter()
            .flat_map(|l| &l.gates)
            .copied()
            .find(|g| !g.is_clifford())
    }

    pub fn noise_layout(&self, clock: Clock) -> NoiseLayout {
        let noise: Vec<Vec<usize>> = self.layers.iter().map(|l| l.noise.clone()).collect();
        NoiseLayout::new(self.n, &noise, clock)
    }

    /// Stable content hash (hex SHA-256 prefix) used to label output rows.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update((self.n as u64).to_le_bytes());
        for layer in &self.layers {
            hasher.update(b"L");
            for g in &layer.gates {
                hasher.update(g.name().as_bytes());
                for q in g.qubits() {
                    hasher.update((q as u64).to_le_bytes());
                }
                for p in g.params() {
                    hasher.update(p.to_le_bytes());
                }
            }
            hasher.update(b"N");
            for &q in &layer.noise {
                hasher.update((q as u64).to_le_bytes());
            }
        }
        hex::encode(&hasher.finalize()[..8])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&CircuitSpec::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Circuit> {
        let spec: CircuitSpec = serde_json::from_str(text)?;
        spec.try_into()
    }
}

/// How time indices are assigned to noise sites.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clock {
    /// Each qubit counts its own noise sites (1, 2, ...).
    #[default]
    PerQubit,
    /// Time is the index (1-based) of the noisy layer within the circuit.
    GlobalLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseSite {
    pub qubit: usize,
    pub layer: usize,
    pub time: usize,
}

/// Noise sites in the flat qubit-major order used by every covariance matrix:
/// all sites of qubit 0 by increasing time, then qubit 1, and so on. When every
/// qubit dephases after each of `l` layers the flat index is `qubit * l + layer`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLayout {
    n: usize,
    sites: Vec<NoiseSite>,
    by_layer: Vec<Vec<(usize, usize)>>,
}

impl NoiseLayout {
    pub fn new(n: usize, noise: &[Vec<usize>], clock: Clock) -> Self {
        let mut counters = vec![0usize; n];
        let mut noisy_layers = 0usize;
        let mut sites = Vec::new();
        for (layer, qubits) in noise.iter().enumerate() {
            if !qubits.is_empty() {
                noisy_layers += 1;
            }
            for &q in qubits {
                counters[q] += 1;
                let time = match clock {
                    Clock::PerQubit => counters[q],
                    Clock::GlobalLayer => noisy_layers,
                };
                sites.push(NoiseSite { qubit: q, layer, time });
            }
        }
        sites.sort_by_key(|s| (s.qubit, s.layer));
        let mut by_layer = vec![Vec::new(); noise.len()];
        for (flat, s) in sites.iter().enumerate() {
            by_layer[s.layer].push((s.qubit, flat));
        }
        NoiseLayout { n, sites, by_layer }
    }

    /// Every qubit dephases after each of `l` layers.
    pub fn grid(n: usize, l: usize) -> Self {
        let noise = vec![(0..n).collect::<Vec<_>>(); l];
        NoiseLayout::new(n, &noise, Clock::PerQubit)
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[NoiseSite] {
        &self.sites
    }

    pub fn site(&self, flat: usize) -> NoiseSite {
        self.sites[flat]
    }

    /// `(qubit, flat index)` pairs of the sites following `layer`.
    pub fn layer_sites(&self, layer: usize) -> &[(usize, usize)] {
        &self.by_layer[layer]
    }

    pub fn num_layers(&self) -> usize {
        self.by_layer.len()
    }

    pub fn flat_index(&self, qubit: usize, layer: usize) -> Option<usize> {
        self.by_layer
            .get(layer)?
            .iter()
            .find(|(q, _)| *q == qubit)
            .map(|&(_, f)| f)
    }

    pub fn sites_of_qubit(&self, qubit: usize) -> impl Iterator<Item = (usize, &NoiseSite)> {
        self.sites
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.qubit == qubit)
    }
}

#[derive(Serialize, Deserialize)]
struct GateSpec {
    name: String,
    qubits: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerSpec {
    gates: Vec<GateSpec>,
    #[serde(default)]
    noise: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CircuitSpec {
    n: usize,
    layers: Vec<LayerSpec>,
}

impl From<&Circuit> for CircuitSpec {
    fn from(c: &Circuit) -> Self {
        CircuitSpec {
            n: c.n,
            layers: c
                .layers
                .iter()
                .map(|l| LayerSpec {
                    gates: l
                        .gates
                        .iter()
                        .map(|g| GateSpec {
                            name: g.name().to_string(),
                            qubits: g.qubits(),
                            params: g.params(),
                        })
                        .collect(),
                    noise: l.noise.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<CircuitSpec> for Circuit {
    type Error = Error;

    fn try_from(spec: CircuitSpec) -> Result<Circuit> {
        let layers = spec
            .layers
            .into_iter()
            .map(|l| {
                let gates = l
                    .gates
                    .iter()
                    .map(|g| Gate::from_name(&g.name.to_ascii_lowercase(), &g.qubits, &g.params))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Layer::new(gates, l.noise))
            })
            .collect::<Result<Vec<_>>>()?;
        Circuit::new(spec.n, layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout_is_qubit_major() {
        let layout = NoiseLayout::grid(3, 4);
        for q in 0..3 {
            for j in 0..4 {
                let flat = layout.flat_index(q, j).unwrap();
                assert_eq!(flat, q * 4 + j);
                let s = layout.site(flat);
                assert_eq!((s.qubit, s.layer, s.time), (q, j, j + 1));
            }
        }
    }

    #[test]
    fn per_qubit_and_global_clocks_differ_on_sparse_noise() {
        let noise = vec![vec![0, 1], vec![], vec![1, 2]];
        let per = NoiseLayout::new(3, &noise, Clock::PerQubit);
        let glob = NoiseLayout::new(3, &noise, Clock::GlobalLayer);
        let q2 = per.site(per.flat_index(2, 2).unwrap());
        assert_eq!(q2.time, 1);
        let q2 = glob.site(glob.flat_index(2, 2).unwrap());
        assert_eq!(q2.time, 2);
    }

    #[test]
    fn json_roundtrip_preserves_circuit() {
        let c = Circuit::new(
            2,
            vec![
                Layer::new(vec![Gate::H(0), Gate::Rz(1, 0.25)], vec![]),
                Layer::new(vec![Gate::Cx(0, 1)], vec![0, 1]),
            ],
        )
        .unwrap();
        let back = Circuit::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.content_hash(), c.content_hash());
    }

    #[test]
    fn rejects_out_of_range_and_duplicate_noise() {
        assert!(Circuit::new(2, vec![Layer::new(vec![Gate::H(2)], vec![])]).is_err());
        assert!(Circuit::new(2, vec![Layer::new(vec![], vec![1, 1])]).is_err());
    }
}
