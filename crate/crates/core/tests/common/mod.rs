//! Dense-matrix oracles shared by the integration tests. They use only the
//! statevector unitary of a gate list and hand-built Kronecker products, never
//! the tableau or mask machinery under test.

#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;

use twirlcorr::circuit::{Circuit, Gate, Layer};
use twirlcorr::ensemble::single_qubit_cliffords;
use twirlcorr::pauli::{Pauli, PauliString};
use twirlcorr::statevec::unitary;

pub type Mat = DMatrix<C64>;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn single(p: Pauli) -> Mat {
    let (o, z, i) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    match p {
        Pauli::I => Mat::from_row_slice(2, 2, &[o, z, z, o]),
        Pauli::X => Mat::from_row_slice(2, 2, &[z, o, o, z]),
        Pauli::Y => Mat::from_row_slice(2, 2, &[z, -i, i, z]),
        Pauli::Z => Mat::from_row_slice(2, 2, &[o, z, z, -o]),
    }
}

/// Dense Pauli with qubit `k` on bit `k` of the basis index.
pub fn dense_pauli(p: &PauliString) -> Mat {
    let n = p.num_qubits();
    let mut m = Mat::from_element(1, 1, c(1.0, 0.0));
    for k in (0..n).rev() {
        m = m.kronecker(&single(p.get(k)));
    }
    m
}

pub fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
    a.shape() == b.shape() && (a - b).iter().all(|z| z.norm() <= tol)
}

pub fn anticommute(a: &Mat, b: &Mat) -> bool {
    let anti = a * b + b * a;
    let comm = a * b - b * a;
    let na = anti.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let nc = comm.iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(na < 1e-9 || nc < 1e-9, "Pauli-like operators must commute or anticommute");
    na < 1e-9
}

pub fn random_pauli<R: Rng>(n: usize, rng: &mut R) -> PauliString {
    PauliString::from_index(n, rng.random_range(0..1u64 << (2 * n)))
}

/// Random Clifford word of length `len` on `n` qubits over the native gates.
pub fn random_word<R: Rng>(n: usize, len: usize, rng: &mut R) -> Vec<Gate> {
    (0..len)
        .map(|_| {
            let a = rng.random_range(0..n);
            let b = if n > 1 { (a + rng.random_range(1..n)) % n } else { a };
            match rng.random_range(0..if n > 1 { 10 } else { 7 }) {
                0 => Gate::H(a),
                1 => Gate::S(a),
                2 => Gate::Sdg(a),
                3 => Gate::X(a),
                4 => Gate::Y(a),
                5 => Gate::Z(a),
                6 => Gate::SqrtX(a),
                7 => Gate::Cx(a, b),
                8 => Gate::Cz(a, b),
                _ => Gate::Swap(a, b),
            }
        })
        .collect()
}

/// `l` layers, each a uniformly random single-qubit Clifford on every qubit
/// followed by one random CX, CZ or SWAP; every qubit dephases after every
/// layer.
pub fn random_clifford_circuit<R: Rng>(n: usize, l: usize, rng: &mut R) -> Circuit {
    let cliffords = single_qubit_cliffords();
    let layers = (0..l)
        .map(|_| {
            let mut gates = Vec::new();
            for q in 0..n {
                let word = &cliffords[rng.random_range(0..cliffords.len())];
                gates.extend(word.iter().map(|g| retarget(g, q)));
            }
            if n > 1 {
                let a = rng.random_range(0..n);
                let b = (a + rng.random_range(1..n)) % n;
                gates.push(match rng.random_range(0..3) {
                    0 => Gate::Cx(a, b),
                    1 => Gate::Cz(a, b),
                    _ => Gate::Swap(a, b),
                });
            }
            Layer::new(gates, (0..n).collect())
        })
        .collect();
    Circuit::new(n, layers).unwrap()
}

fn retarget(g: &Gate, q: usize) -> Gate {
    match g {
        Gate::H(_) => Gate::H(q),
        Gate::S(_) => Gate::S(q),
        Gate::Sdg(_) => Gate::Sdg(q),
        Gate::X(_) => Gate::X(q),
        Gate::Y(_) => Gate::Y(q),
        Gate::Z(_) => Gate::Z(q),
        Gate::SqrtX(_) => Gate::SqrtX(q),
        Gate::SqrtXdg(_) => Gate::SqrtXdg(q),
        other => panic!("unexpected gate {other:?} in a single-qubit Clifford word"),
    }
}

/// Noise axes `U_tail Z_α U_tail†` in flat qubit-major order, for a circuit
/// in which every listed qubit dephases after its layer.
pub fn dense_axes(circuit: &Circuit) -> Vec<Mat> {
    let n = circuit.num_qubits();
    let l = circuit.num_layers();
    let tails: Vec<Mat> = (0..l)
        .map(|j| {
            let gates: Vec<Gate> = circuit.layers()[j + 1..].iter().flat_map(|x| x.gates.clone()).collect();
            unitary(n, &gates).unwrap()
        })
        .collect();
    let mut axes = Vec::new();
    for q in 0..n {
        for (j, layer) in circuit.layers().iter().enumerate() {
            if layer.noise.contains(&q) {
                let z = dense_pauli(&PauliString::z_on(n, q));
                axes.push(&tails[j] * z * tails[j].adjoint());
            }
        }
    }
    axes
}

/// Anticommutation pattern of every Pauli (in `from_index` order) with the
/// dense noise axes, packed as bit masks over flat sites.
pub fn dense_masks(n: usize, axes: &[Mat]) -> Vec<Vec<bool>> {
    (0..1u64 << (2 * n))
        .map(|i| {
            let q = dense_pauli(&PauliString::from_index(n, i));
            axes.iter().map(|a| anticommute(&q, a)).collect()
        })
        .collect()
}
