//! Uniformly random stabilizer states.
//!
//! Every stabilizer state is, up to global phase, uniquely
//! `2^(-k/2) Σ_y i^(l·y) (-1)^(q(y)) |t ⊕ G y⟩` for an affine subspace
//! `t + span(G)` of dimension `k`, a vector `l ∈ Z_4^k` and a strictly upper
//! triangular quadratic form `q`. Drawing `k` with weight equal to the number
//! of states of that dimension, then the subspace and phases uniformly,
//! samples the uniform distribution, which is an exact state 2-design.

use num_complex::Complex64 as C64;
use rand::Rng;

use crate::error::Result;
use crate::statevec::StateVector;

/// Natural log of the number of stabilizer states whose support has
/// dimension `k`: `2^(n-k) [n choose k]_2 · 2^(k(k+3)/2)`.
fn log_count(n: usize, k: usize) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    // Gaussian binomial: prod_{i<k} (2^(n-i) - 1) / (2^(k-i) - 1)
    let gauss: f64 = (0..k)
        .map(|i| ((2f64.powi((n - i) as i32) - 1.0) / (2f64.powi((k - i) as i32) - 1.0)).ln())
        .sum();
    (n - k) as f64 * ln2 + gauss + (k * (k + 3)) as f64 / 2.0 * ln2
}

/// Total number of `n`-qubit stabilizer states, `2^n prod_{i=1..n} (2^i + 1)`.
pub fn count(n: usize) -> f64 {
    2f64.powi(n as i32) * (1..=n).map(|i| 2f64.powi(i as i32) + 1.0).product::<f64>()
}

/// Sampler with the support-dimension distribution precomputed.
#[derive(Clone, Debug)]
pub struct StabilizerSampler {
    n: usize,
    cumulative: Vec<f64>,
}

impl StabilizerSampler {
    pub fn new(n: usize) -> Self {
        let logs: Vec<f64> = (0..=n).map(|k| log_count(n, k)).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = logs
            .iter()
            .map(|l| {
                acc += (l - top).exp();
                acc
            })
            .collect();
        for c in &mut cumulative {
            *c /= acc;
        }
        StabilizerSampler { n, cumulative }
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<StateVector> {
        let n = self.n;
        let u: f64 = rng.random();
        let k = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(n);
        let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        // uniform ordered basis of a uniform k-dimensional subspace
        let basis = loop {
            let mut b: Vec<u64> = Vec::with_capacity(k);
            let mut reduced: Vec<u64> = Vec::with_capacity(k);
            let mut ok = true;
            for _ in 0..k {
                let v = rng.random::<u64>() & full;
                let mut r = v;
                for &p in &reduced {
                    r = r.min(r ^ p);
                }
                if r == 0 {
                    ok = false;
                    break;
                }
                reduced.push(r);
                reduced.sort_unstable_by(|a, b| b.cmp(a));
                b.push(v);
            }
            if ok {
                break b;
            }
        };
        let offset = rng.random::<u64>() & full;
        let lin: Vec<u8> = (0..k).map(|_| rng.random_range(0..4u8)).collect();
        // row i holds the couplings q_ij for j > i
        let quad: Vec<u64> = (0..k)
            .map(|i| {
                let above = if i + 1 >= 64 { 0 } else { !0u64 << (i + 1) };
                rng.random::<u64>() & above & if k == 64 { u64::MAX } else { (1u64 << k) - 1 }
            })
            .collect();

        let mut amps = vec![C64::new(0.0, 0.0); 1usize << n];
        let norm = 2f64.powf(-(k as f64) / 2.0);
        let phase = [
            C64::new(norm, 0.0),
            C64::new(0.0, norm),
            C64::new(-norm, 0.0),
            C64::new(0.0, -norm),
        ];
        // Gray-code walk over y; `e` is the exponent of i
        let mut x = offset;
        let mut y = 0u64;
        let mut e = 0u8;
        amps[x as usize] = phase[0];
        for step in 1u64..(1u64 << k) {
            let i = step.trailing_zeros() as usize;
            let on = (y >> i) & 1 == 0;
            // couplings of bit i with the other set bits of y
            let cross = {
                let mut c = (quad[i] & y).count_ones();
                for (j, row) in quad.iter().enumerate().take(i) {
                    c += ((row >> i) & 1 & (y >> j) & 1) as u32;
                }
                c
            };
            let delta = lin[i] as i32 + 2 * cross as i32;
            e = (e as i32 + if on { delta } else { -delta }).rem_euclid(4) as u8;
            y ^= 1 << i;
            x ^= basis[i];
            amps[x as usize] = phase[e as usize];
        }
        StateVector::from_amplitudes(n, amps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use std::collections::HashMap;

    #[test]
    fn state_counts() {
        assert_eq!(count(1), 6.0);
        assert_eq!(count(2), 60.0);
        for n in 1..6 {
            let s: f64 = (0..=n).map(|k| log_count(n, k).exp()).sum();
            assert!((s / count(n) - 1.0).abs() < 1e-12);
        }
    }

    fn canonical(s: &StateVector) -> Vec<(i64, i64)> {
        let a = s.amplitudes();
        let lead = a.iter().find(|z| z.norm() > 1e-9).unwrap();
        let ph = lead.conj() / lead.norm();
        a.iter()
            .map(|z| {
                let w = z * ph;
                ((w.re * 1e6).round() as i64, (w.im * 1e6).round() as i64)
            })
            .collect()
    }

    #[test]
    fn samples_are_normalised_and_uniform_on_two_qubits() {
        let sampler = StabilizerSampler::new(2);
        let mut r = rng::stream(1, 0, 0);
        let mut hist: HashMap<Vec<(i64, i64)>, usize> = HashMap::new();
        let draws = 60_000;
        for _ in 0..draws {
            let s = sampler.sample(&mut r).unwrap();
            assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
            *hist.entry(canonical(&s)).or_default() += 1;
        }
        assert_eq!(hist.len(), 60);
        let expect = draws as f64 / 60.0;
        let chi2: f64 = hist.values().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // 59 degrees of freedom; 99.9% quantile ≈ 98
        assert!(chi2 < 98.0, "chi2 = {chi2}");
    }
}
