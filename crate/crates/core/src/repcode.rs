//! Three-qubit phase-flip repetition code under correlated dephasing.
//!
//! Data qubits 0, 1, 2 hold `|0_L⟩ = |+++⟩`; ancilla 3 measures `X0 X1` and
//! ancilla 4 measures `X1 X2`. One round is
//!
//! ```text
//! H(3) H(4)
//! CX(3,0)  CX(3,1)  CX(4,1)  CX(4,2)    dephasing on both qubits after each
//! H(3) H(4)
//! measure 3, 4 in Z, reset to |0⟩, apply the decoded Z correction
//! ```
//!
//! so every round contributes eight noise sites in the order listed. Noise
//! angles of one qubit are correlated across all rounds; different qubits
//! are independent.

use rayon::prelude::*;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{Clock, Gate, NoiseLayout};
use crate::error::{Error, Result};
use crate::montecarlo::twirl_signs;
use crate::noise::{cov_exponential_layout, CovMatrix, NoiseSampler, SpatialKernel};
use crate::rng;
use crate::statevec::StateVector;

pub const DATA: [usize; 3] = [0, 1, 2];
pub const ANCILLAS: [usize; 2] = [3, 4];
/// `(control, target)` of the four CNOTs of a round, in order.
pub const ROUND_CNOTS: [(usize, usize); 4] = [(3, 0), (3, 1), (4, 1), (4, 2)];

/// How corrections reach the data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feedback {
    /// Noiseless Z applied right after each decode.
    #[default]
    Active,
    /// Corrections accumulated in a Pauli frame and applied at the end.
    PauliFrame,
}

/// When a syndrome triggers a correction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decoder {
    /// Every non-trivial syndrome is corrected at once.
    #[default]
    SingleRound,
    /// A non-trivial syndrome is corrected only when the previous round saw
    /// the same one, so a single faulty measurement or a mid-round error is
    /// not turned into a data error.
    Repeated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepCodeConfig {
    pub rounds: usize,
    pub sigma: f64,
    pub taus: Vec<f64>,
    /// Time assigned to successive noise sites of a qubit.
    pub clock: Clock,
    pub feedback: Feedback,
    pub decoder: Decoder,
}

impl Default for RepCodeConfig {
    fn default() -> Self {
        RepCodeConfig {
            rounds: 250,
            sigma: 0.05,
            taus: DEFAULT_TAUS.to_vec(),
            clock: Clock::PerQubit,
            feedback: Feedback::Active,
            decoder: Decoder::default(),
        }
    }
}

/// Correlation times, in gate durations, of the default sweep.
pub const DEFAULT_TAUS: [f64; 8] = [0.1, 1.0, 3.0, 10.0, 30.0, 100.0, 1000.0, 10000.0];

impl RepCodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidParameter("rounds must be >= 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.taus.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidParameter("correlation times must be positive".into()));
        }
        Ok(())
    }

    /// Noise sites of all rounds; layer `4r + m` is CNOT `m` of round `r`.
    pub fn layout(&self) -> NoiseLayout {
        let noise: Vec<Vec<usize>> = (0..self.rounds)
            .flat_map(|_| ROUND_CNOTS.iter().map(|&(c, t)| vec![c, t]))
            .collect();
        NoiseLayout::new(5, &noise, self.clock)
    }

    pub fn covariance(&self, tau: f64) -> Result<CovMatrix> {
        cov_exponential_layout(&self.layout(), self.sigma, tau, 1.0, &SpatialKernel::Diagonal)
    }
}

/// Lookup decoder: the data qubit to flip for syndrome `(X0X1, X1X2)`.
pub fn syndrome_decode(bits: (bool, bool)) -> Option<usize> {
    match bits {
        (false, false) => None,
        (true, false) => Some(0),
        (true, true) => Some(1),
        (false, true) => Some(2),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub syndrome: (bool, bool),
    pub correction: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub rounds: Vec<RoundRecord>,
    /// `|⟨0_L|ψ⟩|²` after the last correction.
    pub overlap: f64,
}

fn encoded_zero() -> StateVector {
    let mut s = StateVector::zero(5).expect("5 qubits fit");
    for q in DATA {
        s.apply_gate(&Gate::H(q)).expect("qubit in range");
    }
    s
}

/// An error injected on the data right before a round's syndrome circuit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InjectedZ {
    pub round: usize,
    pub qubit: usize,
}

/// One trajectory. `theta` is indexed by `layout`; `signs` flip individual
/// angles (the effect of a fresh Pauli twirl on each CNOT layer).
pub fn run_trajectory<R: Rng>(
    cfg: &RepCodeConfig,
    layout: &NoiseLayout,
    theta: &[f64],
    signs: Option<&[f64]>,
    inject: &[InjectedZ],
    measure_rng: &mut R,
) -> Result<Trajectory> {
    let mut s = encoded_zero();
    let mut frame = [false; 3];
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut rots = Vec::with_capacity(2);
    let mut previous = (false, false);
    for r in 0..cfg.rounds {
        for e in inject.iter().filter(|e| e.round == r) {
            s.apply_gate(&Gate::Z(e.qubit))?;
        }
        for a in ANCILLAS {
            s.apply_gate(&Gate::H(a))?;
        }
        for (m, &(c, t)) in ROUND_CNOTS.iter().enumerate() {
            s.apply_gate(&Gate::Cx(c, t))?;
            rots.clear();
            for &(q, flat) in layout.layer_sites(4 * r + m) {
                let sign = signs.map_or(1.0, |v| v[flat]);
                rots.push((q, sign * theta[flat]));
            }
            s.apply_z_phases(&rots)?;
        }
        for a in ANCILLAS {
            s.apply_gate(&Gate::H(a))?;
        }
        let b0 = s.measure_and_reset(ANCILLAS[0], measure_rng.random())?;
        let b1 = s.measure_and_reset(ANCILLAS[1], measure_rng.random())?;
        // a pending frame Z on a data qubit flips the parities it enters
        let syndrome = match cfg.feedback {
            Feedback::Active => (b0, b1),
            Feedback::PauliFrame => (b0 ^ frame[0] ^ frame[1], b1 ^ frame[1] ^ frame[2]),
        };
        let correction = match cfg.decoder {
            Decoder::SingleRound => syndrome_decode(syndrome),
            Decoder::Repeated if syndrome == previous => syndrome_decode(syndrome),
            Decoder::Repeated => None,
        };
        // after a correction the next round starts a fresh comparison
        previous = if correction.is_some() { (false, false) } else { syndrome };
        if let Some(q) = correction {
            match cfg.feedback {
                Feedback::Active => s.apply_gate(&Gate::Z(q))?,
                Feedback::PauliFrame => frame[q] ^= true,
            }
        }
        records.push(RoundRecord {
            syndrome: (b0, b1),
            correction,
        });
    }
    for (q, &f) in frame.iter().enumerate() {
        if f {
            s.apply_gate(&Gate::Z(q))?;
        }
    }
    let overlap = encoded_zero().inner(&s).norm_sqr();
    Ok(Trajectory {
        rounds: records,
        overlap,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub tau_over_tg: f64,
    pub twirled: bool,
    pub survival: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

/// Final overlap of trajectories `0..n_samples` at correlation time `tau`.
/// Trajectory `k` uses noise draw `k` of `seed` and its own measurement and
/// twirl streams, so runs at different `tau` share their random numbers.
pub fn repcode_overlaps(cfg: &RepCodeConfig, tau: f64, twirled: bool, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    if n_samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 trajectories".into()));
    }
    let layout = cfg.layout();
    let cov = cfg.covariance(tau)?;
    let sampler = NoiseSampler::new(&cov, seed)?;
    (0..n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let theta = sampler.draw(k).theta;
            let signs = twirled.then(|| twirl_signs(theta.len(), &mut rng::stream(seed, rng::tag::TWIRL, k)));
            let mut mrng = rng::stream(seed, rng::tag::MEASURE, k);
            run_trajectory(cfg, &layout, &theta, signs.as_deref(), &[], &mut mrng).map(|t| t.overlap)
        })
        .collect()
}

/// Mean final overlap and its standard error.
pub fn run_repcode(cfg: &RepCodeConfig, tau: f64, twirled: bool, n_samples: usize, seed: u64) -> Result<SurvivalEstimate> {
    let overlaps = repcode_overlaps(cfg, tau, twirled, n_samples, seed)?;
    let (survival, std_error) = crate::analytic::mean_and_se(&overlaps);
    Ok(SurvivalEstimate {
        tau_over_tg: tau,
        twirled,
        survival,
        std_error,
        n_samples,
    })
}

/// Mean and standard error of `b - a` over paired trajectories.
pub fn paired_difference(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    crate::analytic::mean_and_se(&d)
}

/// Shape of a survival curve judged with paired standard errors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trend {
    /// `(mean, se)` of each step `S[i+1] - S[i]`.
    pub steps: Vec<(f64, f64)>,
    /// No step falls by more than `z` standard errors.
    pub non_decreasing: bool,
    /// Interior grid points lying more than `z` standard errors below both
    /// endpoints (dips) or above both (peaks).
    pub interior_extrema: Vec<usize>,
}

pub fn trend(curves: &[Vec<f64>], z: f64) -> Trend {
    let steps: Vec<(f64, f64)> = curves.windows(2).map(|w| paired_difference(&w[0], &w[1])).collect();
    let non_decreasing = steps.iter().all(|&(m, se)| m >= -z * se);
    let last = curves.len().saturating_sub(1);
    let interior_extrema = (1..last)
        .filter(|&i| {
            let (d0, s0) = paired_difference(&curves[0], &curves[i]);
            let (d1, s1) = paired_difference(&curves[last], &curves[i]);
            (d0 < -z * s0 && d1 < -z * s1) || (d0 > z * s0 && d1 > z * s1)
        })
        .collect();
    Trend {
        steps,
        non_decreasing,
        interior_extrema,
    }
}

/// Bare and twirled survival over the configured grid.
pub fn sweep(cfg: &RepCodeConfig, n_samples: usize, seed: u64) -> Result<Vec<SurvivalEstimate>> {
    let mut out = Vec::new();
    for twirled in [false, true] {
        for &tau in &cfg.taus {
            out.push(run_repcode(cfg, tau, twirled, n_samples, seed)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(rounds: usize) -> RepCodeConfig {
        RepCodeConfig {
            rounds,
            ..Default::default()
        }
    }

    #[test]
    fn lookup_table() {
        assert_eq!(syndrome_decode((false, false)), None);
        assert_eq!(syndrome_decode((true, false)), Some(0));
        assert_eq!(syndrome_decode((true, true)), Some(1));
        assert_eq!(syndrome_decode((false, true)), Some(2));
    }

    #[test]
    fn every_single_z_error_is_corrected() {
        for feedback in [Feedback::Active, Feedback::PauliFrame] {
            let cfg = RepCodeConfig {
                feedback,
                ..short(4)
            };
            let layout = cfg.layout();
            let theta = vec![0.0; layout.len()];
            for round in 0..4 {
                for qubit in DATA {
                    let t = run_trajectory(
                        &cfg,
                        &layout,
                        &theta,
                        None,
                        &[InjectedZ { round, qubit }],
                        &mut rng::stream(0, 0, 0),
                    )
                    .unwrap();
                    let want = syndrome_decode(match qubit {
                        0 => (true, false),
                        1 => (true, true),
                        _ => (false, true),
                    });
                    assert_eq!(t.rounds[round].correction, want);
                    assert!(t.rounds.iter().enumerate().all(|(r, rec)| r == round || rec.correction.is_none()));
                    assert!((t.overlap - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn qubit_zero_error_gives_syndrome_one_zero() {
        let cfg = short(1);
        let layout = cfg.layout();
        let t = run_trajectory(
            &cfg,
            &layout,
            &vec![0.0; layout.len()],
            None,
            &[InjectedZ { round: 0, qubit: 0 }],
            &mut rng::stream(0, 0, 0),
        )
        .unwrap();
        assert_eq!(t.rounds[0].syndrome, (true, false));
        assert!((t.overlap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_survival_is_one() {
        let cfg = RepCodeConfig {
            sigma: 0.0,
            ..short(20)
        };
        for twirled in [false, true] {
            let e = run_repcode(&cfg, 10.0, twirled, 8, 1).unwrap();
            assert!((e.survival - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_and_active_feedback_agree_in_distribution() {
        // outcomes with a pending frame are the complements of the active
        // ones, so equal uniforms pick different branches: compare means
        let base = RepCodeConfig { sigma: 0.2, ..short(30) };
        let layout = base.layout();
        let sampler = NoiseSampler::new(&base.covariance(5.0).unwrap(), 3).unwrap();
        let mean = |feedback, tag| {
            let cfg = RepCodeConfig { feedback, ..base.clone() };
            let v: Vec<f64> = (0..1500)
                .map(|k| {
                    let theta = sampler.draw(k).theta;
                    run_trajectory(&cfg, &layout, &theta, None, &[], &mut rng::stream(3, tag, k))
                        .unwrap()
                        .overlap
                })
                .collect();
            crate::analytic::mean_and_se(&v)
        };
        let (a, sa) = mean(Feedback::Active, 100);
        let (f, sf) = mean(Feedback::PauliFrame, 200);
        assert!(a < 0.95, "noise too weak to test anything: {a}");
        assert!((a - f).abs() < 4.0 * (sa * sa + sf * sf).sqrt(), "{a} {f}");
    }

    #[test]
    fn trend_detection() {
        let flat = vec![vec![1.0, 0.0, 1.0, 0.0]; 3];
        let up: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64, 1.0 + i as f64, 0.5 + i as f64, i as f64]).collect();
        assert!(trend(&flat, 3.0).non_decreasing);
        assert!(trend(&flat, 3.0).interior_extrema.is_empty());
        assert!(trend(&up, 3.0).non_decreasing);
        let dip = vec![up[1].clone(), up[0].clone(), up[2].clone()];
        let t = trend(&dip, 3.0);
        assert!(!t.non_decreasing);
        assert_eq!(t.interior_extrema, vec![1]);
    }

    #[test]
    fn layout_counts_sites() {
        let cfg = short(3);
        let l = cfg.layout();
        assert_eq!(l.len(), 24);
        assert_eq!(l.sites_of_qubit(1).count(), 6);
        assert_eq!(l.sites_of_qubit(3).count(), 6);
        assert_eq!(l.sites_of_qubit(0).count(), 3);
    }
}
