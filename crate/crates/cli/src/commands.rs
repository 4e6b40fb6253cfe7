//! One function per subcommand. Each validates its settings, runs the
//! engines and returns the finished table; nothing is written here.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};
use twirlcorr::analytic::{
    no_error_probability_with, AnalyticOptions, FidelityEstimate, MaskTable, Mode, DEFAULT_EXACT_LIMIT,
};
use twirlcorr::circuit::{Circuit, Clock, NoiseLayout};
use twirlcorr::ensemble::{circuit_ensemble_study, generate, summarize, EnsembleKind, EnsembleSpec, StudyConfig};
use twirlcorr::finite_time::{tail_tableaus, ControlSchedule, FtKernels, FtOptions, DEFAULT_NORMALIZATION};
use twirlcorr::montecarlo::{average_fidelity_mc, McOptions, NoisyCircuit, DEFAULT_MAX_QUBITS};
use twirlcorr::noise::{cov_exponential_layout, cov_markovian, cov_quasistatic, CovMatrix, SpatialKernel};
use twirlcorr::pauli::{CliffordCircuit, PauliString};
use twirlcorr::qkernel::{operator_norm, random_case, verify_kernel_cancellation, BathCorrelator, KernelCase};
use twirlcorr::repcode::{run_repcode, RepCodeConfig, DEFAULT_TAUS};
use twirlcorr::{qasm, rng};

use crate::settings::{config_error, AnalyticMode, ClockArg, CovKind, Settings};

/// Amplitude updates a run may take without `--long-run` (a few minutes on
/// one core).
pub const INTERACTIVE_WORK: f64 = 2e11;
/// Repetition-code trajectory rounds allowed without `--long-run`.
pub const INTERACTIVE_ROUNDS: f64 = 2e7;
/// Largest quantum-kernel entry counted as cancelled.
pub const KERNEL_TOL: f64 = 1e-12;

/// A refused run: valid, but over the interactive budget.
#[derive(Debug)]
pub struct Refusal(pub String);

impl std::fmt::Display for Refusal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Refusal {}

pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

pub struct Report {
    pub table: Table,
    /// Sample budgets actually used, for the manifest.
    pub budgets: Value,
    /// Extra files written only if the whole run succeeds.
    pub side_files: Vec<(PathBuf, String)>,
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn check_long_run(s: &Settings, cost: f64, limit: f64, what: &str) -> Result<()> {
    if cost > limit && !s.long_run {
        return Err(Refusal(format!(
            "estimated {what} {cost:.3e} exceeds the interactive budget {limit:.0e}; pass --long-run to proceed"
        ))
        .into());
    }
    Ok(())
}

fn positive_list(v: &Option<Vec<f64>>, field: &str, default: Option<&[f64]>, allow_zero: bool) -> Result<Vec<f64>> {
    let list = match (v, default) {
        (Some(v), _) => v.clone(),
        (None, Some(d)) => d.to_vec(),
        (None, None) => return Err(config_error(field, "required")),
    };
    if list.is_empty() {
        return Err(config_error(field, "must be non-empty"));
    }
    for (i, &x) in list.iter().enumerate() {
        let ok = x.is_finite() && if allow_zero { x >= 0.0 } else { x > 0.0 };
        if !ok {
            let want = if allow_zero { "finite and >= 0" } else { "finite and > 0" };
            return Err(config_error(&format!("{field}[{i}]"), format!("{x} must be {want}")));
        }
    }
    Ok(list)
}

fn sigmas(s: &Settings, default: Option<&[f64]>) -> Result<Vec<f64>> {
    positive_list(&s.grid.sigma, "grid.sigma", default, true)
}

fn taus(s: &Settings, default: Option<&[f64]>) -> Result<Vec<f64>> {
    positive_list(&s.grid.tau, "grid.tau", default, false)
}

fn at_least(v: Option<usize>, default: usize, min: usize, field: &str) -> Result<usize> {
    let x = v.unwrap_or(default);
    if x < min {
        return Err(config_error(field, format!("{x} must be >= {min}")));
    }
    Ok(x)
}

fn clock(s: &Settings, default: ClockArg) -> Clock {
    s.source.clock.unwrap_or(default).into()
}

fn engines(s: &Settings) -> Vec<bool> {
    match (s.mode.bare, s.mode.twirled) {
        (true, false) => vec![false],
        (false, true) => vec![true],
        _ => vec![false, true],
    }
}

fn engine_name(twirled: bool) -> &'static str {
    if twirled {
        "twirled"
    } else {
        "bare"
    }
}

/// The circuits named by `source`.
fn circuits(s: &Settings) -> Result<Vec<Circuit>> {
    let src = &s.source;
    let set: Vec<&str> = [
        ("source.ensemble", src.ensemble.is_some()),
        ("source.qasm", src.qasm.is_some()),
        ("source.circuit", src.circuit.is_some()),
    ]
    .iter()
    .filter(|(_, on)| *on)
    .map(|(name, _)| *name)
    .collect();
    if set.len() > 1 {
        return Err(config_error("source", format!("exactly one circuit source allowed, found {}", set.join(" and "))));
    }
    if let Some(path) = &src.qasm {
        let lowered = qasm::load(path).with_context(|| format!("source.qasm: {}", path.display()))?;
        return Ok(vec![lowered.to_circuit()?]);
    }
    if let Some(path) = &src.circuit {
        let text = std::fs::read_to_string(path).with_context(|| format!("source.circuit: {}", path.display()))?;
        let c = Circuit::from_json(&text).with_context(|| format!("source.circuit: {}", path.display()))?;
        return Ok(vec![c]);
    }
    let Some(name) = &src.ensemble else {
        return Err(config_error("source", "one of source.ensemble, source.qasm or source.circuit is required"));
    };
    let kind: EnsembleKind = name.parse().map_err(|e| config_error("source.ensemble", e))?;
    let n = src.n.ok_or_else(|| config_error("source.n", "required with source.ensemble"))?;
    let depth = src.depth.ok_or_else(|| config_error("source.depth", "required with source.ensemble"))?;
    let count = src.circuits.unwrap_or(1);
    if n < 2 {
        return Err(config_error("source.n", format!("{n} must be >= 2 for brickwork circuits")));
    }
    if count == 0 {
        return Err(config_error("source.circuits", "must be >= 1"));
    }
    let spec = EnsembleSpec::new(kind, n, depth);
    (0..count)
        .map(|c| Ok(generate(&spec, &mut rng::stream(s.seed(), rng::tag::CIRCUITS, c as u64))?))
        .collect()
}

fn covariance(kind: CovKind, layout: &NoiseLayout, sigma: f64, tau: f64) -> Result<CovMatrix> {
    Ok(match kind {
        CovKind::Exponential => cov_exponential_layout(layout, sigma, tau, 1.0, &SpatialKernel::Diagonal)?,
        CovKind::Markovian => cov_markovian(layout.len(), sigma)?,
        CovKind::Quasistatic => cov_quasistatic(layout, sigma, false)?,
    })
}

fn analytic_options(s: &Settings, n: usize) -> Result<AnalyticOptions> {
    let mode = match s.mode.mode.unwrap_or(AnalyticMode::Auto) {
        AnalyticMode::Exact => Mode::Exact,
        AnalyticMode::Sampled => Mode::Sampled,
        AnalyticMode::Auto if n <= DEFAULT_EXACT_LIMIT => Mode::Exact,
        AnalyticMode::Auto => Mode::Sampled,
    };
    Ok(AnalyticOptions {
        mode,
        budget: at_least(s.budget.paulis, AnalyticOptions::default().budget, 2, "budget.paulis")?,
        seed: rng::derive(s.seed(), rng::tag::PAULIS, 0),
        ..AnalyticOptions::default()
    })
}

fn mc_options(s: &Settings) -> Result<McOptions> {
    let d = McOptions::default();
    Ok(McOptions {
        n_noise: at_least(s.budget.n_noise, d.n_noise, 2, "budget.n_noise")?,
        n_states: at_least(s.budget.n_states, d.n_states, 1, "budget.n_states")?,
        n_twirl: at_least(s.budget.n_twirl, d.n_twirl, 1, "budget.n_twirl")?,
        ..d
    })
}

/// Amplitude updates of one Monte-Carlo estimate.
fn mc_cost(c: &Circuit, o: &McOptions, twirled: bool) -> f64 {
    let draws = if twirled { o.n_twirl } else { 1 };
    (o.n_noise * o.n_states * draws) as f64 * (c.gate_count().max(1) as f64) * 2f64.powi(c.num_qubits() as i32)
}

struct Prepared {
    circuit: Circuit,
    hash: String,
    clifford: Option<(CliffordCircuit, MaskTable)>,
}

fn prepare(circuit: Circuit, clock: Clock, need_clifford: bool) -> Result<Prepared> {
    let clifford = match CliffordCircuit::from_circuit(&circuit, clock) {
        Ok(cc) => {
            let table = MaskTable::new(&cc)?;
            Some((cc, table))
        }
        Err(e) if need_clifford => return Err(e.into()),
        Err(_) => None,
    };
    Ok(Prepared {
        hash: circuit.content_hash(),
        circuit,
        clifford,
    })
}

fn estimate_row(p: &Prepared, kind: &str, sigma: f64, tau: f64, e: &FidelityEstimate) -> Vec<String> {
    vec![
        p.hash.clone(),
        p.circuit.num_qubits().to_string(),
        p.circuit.num_layers().to_string(),
        kind.to_string(),
        f(sigma),
        f(tau),
        e.method.as_str().to_string(),
        f(e.p),
        f(e.value),
        f(e.std_error),
    ]
}

pub fn analytic(s: &Settings) -> Result<Report> {
    let kind = s.grid.cov.unwrap_or(CovKind::Exponential);
    let (sigmas, taus) = (sigmas(s, None)?, taus(s, None)?);
    let clock = clock(s, ClockArg::PerQubit);
    let mut table = Table::new(&[
        "circuit_hash", "n", "l", "cov_kind", "sigma", "tau_over_tg", "method", "p_I", "F", "std_error",
    ]);
    let mut used = None;
    for c in circuits(s)? {
        let p = prepare(c, clock, true)?;
        let (cc, masks) = p.clifford.as_ref().expect("Clifford checked by prepare");
        let opts = analytic_options(s, cc.num_qubits())?;
        used = Some(opts);
        for &sigma in &sigmas {
            for &tau in &taus {
                let cov = covariance(kind, cc.layout(), sigma, tau)?;
                let e = no_error_probability_with(masks, &cov, &opts)?;
                table.push(estimate_row(&p, kind.as_str(), sigma, tau, &e));
            }
        }
    }
    let budgets = used.map_or(Value::Null, |o| json!({ "mode": o.mode, "paulis": o.budget }));
    Ok(Report {
        table,
        budgets,
        side_files: Vec::new(),
    })
}

pub fn bounds(s: &Settings) -> Result<Report> {
    let kind = s.grid.cov.unwrap_or(CovKind::Exponential);
    let (sigmas, taus) = (sigmas(s, None)?, taus(s, None)?);
    let clock = clock(s, ClockArg::PerQubit);
    let mut table = Table::new(&[
        "circuit_hash", "n", "l", "cov_kind", "sigma", "tau_over_tg", "method", "F_min", "F", "F_max", "within",
    ]);
    let mut used = None;
    for c in circuits(s)? {
        let p = prepare(c, clock, true)?;
        let (cc, masks) = p.clifford.as_ref().expect("Clifford checked by prepare");
        let opts = analytic_options(s, cc.num_qubits())?;
        used = Some(opts);
        for &sigma in &sigmas {
            for &tau in &taus {
                let cov = covariance(kind, cc.layout(), sigma, tau)?;
                let mid = no_error_probability_with(masks, &cov, &opts)?;
                let lo = no_error_probability_with(masks, &cov.to_min(), &opts)?;
                let hi = no_error_probability_with(masks, &cov.to_max(), &opts)?;
                let slack = 3.0 * (lo.std_error + mid.std_error + hi.std_error) + 1e-12;
                let within = lo.value <= mid.value + slack && mid.value <= hi.value + slack;
                table.push(vec![
                    p.hash.clone(),
                    cc.num_qubits().to_string(),
                    cc.num_layers().to_string(),
                    kind.as_str().to_string(),
                    f(sigma),
                    f(tau),
                    mid.method.as_str().to_string(),
                    f(lo.value),
                    f(mid.value),
                    f(hi.value),
                    within.to_string(),
                ]);
            }
        }
    }
    let budgets = used.map_or(Value::Null, |o| json!({ "mode": o.mode, "paulis": o.budget }));
    Ok(Report {
        table,
        budgets,
        side_files: Vec::new(),
    })
}

pub fn mc(s: &Settings) -> Result<Report> {
    let kind = s.grid.cov.unwrap_or(CovKind::Exponential);
    let (sigmas, taus) = (sigmas(s, Some(&[0.035]))?, taus(s, None)?);
    let clock = clock(s, ClockArg::PerQubit);
    let engines = engines(s);
    let opts = mc_options(s)?;
    let circuits = circuits(s)?;
    let cost: f64 = circuits
        .iter()
        .map(|c| engines.iter().map(|&t| mc_cost(c, &opts, t)).sum::<f64>())
        .sum::<f64>()
        * (sigmas.len() * taus.len()) as f64;
    check_long_run(s, cost, INTERACTIVE_WORK, "statevector work")?;
    let mut table = Table::new(&[
        "circuit_hash", "n", "l", "sigma", "tau_over_tg", "engine", "F", "std_error", "n_noise",
    ]);
    for (i, c) in circuits.into_iter().enumerate() {
        let hash = c.content_hash();
        let (n, l) = (c.num_qubits(), c.num_layers());
        let layout = c.noise_layout(clock);
        let nc = NoisyCircuit::new(c);
        // shared by every grid point and engine: differences are paired
        let seed = rng::derive(s.seed(), rng::tag::NOISE, i as u64);
        for &sigma in &sigmas {
            for &tau in &taus {
                let cov = covariance(kind, &layout, sigma, tau)?;
                for &twirled in &engines {
                    let e = average_fidelity_mc(&nc, &cov, &McOptions { twirled, seed, ..opts })?;
                    table.push(vec![
                        hash.clone(),
                        n.to_string(),
                        l.to_string(),
                        f(sigma),
                        f(tau),
                        engine_name(twirled).to_string(),
                        f(e.value),
                        f(e.std_error),
                        opts.n_noise.to_string(),
                    ]);
                }
            }
        }
    }
    Ok(Report {
        table,
        budgets: json!({ "n_noise": opts.n_noise, "n_states": opts.n_states, "n_twirl": opts.n_twirl }),
        side_files: Vec::new(),
    })
}

pub fn ensemble(s: &Settings) -> Result<Report> {
    if s.source.qasm.is_some() || s.source.circuit.is_some() {
        return Err(config_error("source", "ensemble studies draw from a built-in ensemble"));
    }
    let kind: EnsembleKind = match &s.source.ensemble {
        Some(name) => name.parse().map_err(|e| config_error("source.ensemble", e))?,
        None => EnsembleKind::CliffordBrickwork,
    };
    let n = at_least(s.source.n, 8, 2, "source.n")?;
    let depth = at_least(s.source.depth, 8, 1, "source.depth")?;
    let count = at_least(s.source.circuits, 20, 2, "source.circuits")?;
    let (sigmas, taus) = (sigmas(s, Some(&[0.15]))?, taus(s, Some(&[0.1, 1.0, 10.0, 100.0]))?);
    let mc = mc_options(s)?;
    let spec = EnsembleSpec::new(kind, n, depth);
    let gates = (n * depth * 2) as f64;
    let cost = (mc.n_noise * mc.n_states * (1 + mc.n_twirl)) as f64
        * gates
        * 2f64.powi(n as i32)
        * (count * sigmas.len() * taus.len()) as f64;
    check_long_run(s, cost, INTERACTIVE_WORK, "statevector work")?;
    let clock = clock(s, ClockArg::PerQubit);
    let mut table = if s.mode.per_circuit {
        Table::new(&[
            "sigma", "circuit", "circuit_hash", "tau_over_tg", "bare_F", "bare_std_error", "twirled_F", "twirled_std_error",
        ])
    } else {
        Table::new(&[
            "sigma", "tau_over_tg", "circuits", "bare_mean", "bare_std", "bare_mean_se", "twirled_mean", "twirled_std",
            "twirled_mean_se",
        ])
    };
    for &sigma in &sigmas {
        let rows = circuit_ensemble_study(&StudyConfig {
            spec,
            circuits: count,
            sigma,
            taus: taus.clone(),
            clock,
            mc,
            seed: s.seed(),
        })?;
        if s.mode.per_circuit {
            for r in &rows {
                table.push(vec![
                    f(sigma),
                    r.circuit.to_string(),
                    r.circuit_hash.clone(),
                    f(r.tau_over_tg),
                    f(r.bare.value),
                    f(r.bare.std_error),
                    f(r.twirled.value),
                    f(r.twirled.std_error),
                ]);
            }
        } else {
            for m in summarize(&rows) {
                table.push(vec![
                    f(sigma),
                    f(m.tau_over_tg),
                    m.circuits.to_string(),
                    f(m.bare_mean),
                    f(m.bare_std),
                    f(m.bare_mean_se),
                    f(m.twirled_mean),
                    f(m.twirled_std),
                    f(m.twirled_mean_se),
                ]);
            }
        }
    }
    Ok(Report {
        table,
        budgets: json!({
            "circuits": count,
            "n_noise": mc.n_noise,
            "n_states": mc.n_states,
            "n_twirl": mc.n_twirl,
        }),
        side_files: Vec::new(),
    })
}

pub fn qasm_info(s: &Settings) -> Result<Report> {
    let path = s
        .source
        .qasm
        .as_ref()
        .ok_or_else(|| config_error("source.qasm", "required"))?;
    let lowered = qasm::load(path).with_context(|| format!("source.qasm: {}", path.display()))?;
    let circuit = lowered.to_circuit()?;
    let mut table = Table::new(&[
        "file", "n", "gates", "non_clifford_gates", "two_qubit_gates", "noise_sites", "max_two_qubit_count",
        "measurements", "layers", "circuit_hash",
    ]);
    let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    table.push(vec![
        name,
        lowered.n.to_string(),
        lowered.gates.len().to_string(),
        lowered.gates.iter().filter(|g| !g.clifford).count().to_string(),
        lowered.gates.iter().filter(|g| g.gate.is_two_qubit()).count().to_string(),
        lowered.noise_sites.len().to_string(),
        lowered.two_qubit_counts.iter().max().copied().unwrap_or(0).to_string(),
        lowered.measurements.len().to_string(),
        circuit.num_layers().to_string(),
        circuit.content_hash(),
    ]);
    let side_files = match &s.emit_circuit {
        Some(p) => vec![(p.clone(), circuit.to_json()?)],
        None => Vec::new(),
    };
    Ok(Report {
        table,
        budgets: Value::Null,
        side_files,
    })
}

pub fn repcode(s: &Settings) -> Result<Report> {
    let defaults = RepCodeConfig::default();
    let sigma = match sigmas(s, Some(&[defaults.sigma]))?.as_slice() {
        [x] => *x,
        _ => return Err(config_error("grid.sigma", "the repetition code takes a single value")),
    };
    let cfg = RepCodeConfig {
        rounds: at_least(s.budget.rounds, defaults.rounds, 1, "budget.rounds")?,
        sigma,
        taus: taus(s, Some(&DEFAULT_TAUS))?,
        clock: s.source.clock.map_or(defaults.clock, Into::into),
        feedback: s.mode.feedback.map_or(defaults.feedback, Into::into),
        decoder: s.mode.decoder.map_or(defaults.decoder, Into::into),
    };
    let trajectories = at_least(s.budget.trajectories, 2000, 2, "budget.trajectories")?;
    let engines = engines(s);
    let cost = (trajectories * cfg.rounds * cfg.taus.len() * engines.len()) as f64;
    check_long_run(s, cost, INTERACTIVE_ROUNDS, "trajectory rounds")?;
    let mut table = Table::new(&["tau_over_tg", "twirled", "survival", "std_error", "n_samples"]);
    for &twirled in &engines {
        for &tau in &cfg.taus {
            let e = run_repcode(&cfg, tau, twirled, trajectories, s.seed())?;
            table.push(vec![
                f(e.tau_over_tg),
                e.twirled.to_string(),
                f(e.survival),
                f(e.std_error),
                e.n_samples.to_string(),
            ]);
        }
    }
    Ok(Report {
        table,
        budgets: json!({ "trajectories": trajectories, "rounds": cfg.rounds }),
        side_files: Vec::new(),
    })
}

fn read_schedule(path: &Path) -> Result<ControlSchedule> {
    let text = std::fs::read_to_string(path).with_context(|| format!("ft.schedule: {}", path.display()))?;
    ControlSchedule::from_json(&text).with_context(|| format!("ft.schedule: {}", path.display()))
}

pub fn ft_mask(s: &Settings) -> Result<Report> {
    let circuits = circuits(s)?;
    let [circuit] = circuits.as_slice() else {
        return Err(config_error("source.circuits", "ft-mask takes a single circuit"));
    };
    let paulis: Vec<PauliString> = match &s.ft.pauli {
        None => return Err(config_error("ft.pauli", "required")),
        Some(v) if v.is_empty() => return Err(config_error("ft.pauli", "must be non-empty")),
        Some(v) => v
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let q: PauliString = p.parse().map_err(|e| config_error(&format!("ft.pauli[{i}]"), e))?;
                if q.num_qubits() != circuit.num_qubits() {
                    return Err(config_error(
                        &format!("ft.pauli[{i}]"),
                        format!("`{p}` has {} qubits, the circuit {}", q.num_qubits(), circuit.num_qubits()),
                    ));
                }
                Ok(q)
            })
            .collect::<Result<_>>()?,
    };
    let schedule = match &s.ft.schedule {
        Some(path) => {
            let sch = read_schedule(path)?;
            sch.check_against(circuit).context("ft.schedule")?;
            sch
        }
        None => ControlSchedule::from_circuit(circuit, s.ft.gate_fraction.unwrap_or(0.5))
            .map_err(|e| config_error("ft.gate_fraction", e))?,
    };
    let opts = FtOptions {
        tol: s.ft.tol.unwrap_or(FtOptions::default().tol),
        ..FtOptions::default()
    };
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(config_error("ft.tol", "must be > 0"));
    }
    let tails = tail_tableaus(circuit)?;
    let kernels = FtKernels::compute(&schedule, &opts)?;
    let mut table = Table::new(&["pauli", "layer", "op_a", "op_b", "m", "m_normalized"]);
    for q in &paulis {
        let mask = kernels.mask(&tails, q)?;
        for j in 0..mask.num_layers() {
            for a in 0..mask.num_noise_ops() {
                for b in 0..mask.num_noise_ops() {
                    let m = mask.entry(a, b, j);
                    table.push(vec![
                        q.to_string(),
                        j.to_string(),
                        a.to_string(),
                        b.to_string(),
                        f(m),
                        f(m / DEFAULT_NORMALIZATION),
                    ]);
                }
            }
        }
    }
    Ok(Report {
        table,
        budgets: json!({ "tol": opts.tol, "max_nodes": opts.max_nodes }),
        side_files: Vec::new(),
    })
}

pub fn qkernel(s: &Settings) -> Result<Report> {
    let k = &s.kernel;
    let cases: Vec<KernelCase> = match &s.ft.schedule {
        Some(path) => {
            let fragment = read_schedule(path)?;
            let eta = k.eta.unwrap_or(1.0);
            let cutoff = k.cutoff.unwrap_or(2.0);
            if !(eta > 0.0 && cutoff > 0.0) {
                return Err(config_error("kernel", "eta and cutoff must be > 0"));
            }
            let points = at_least(k.points, 5, 2, "kernel.points")?;
            let span = fragment.span();
            let grid = (0..points).map(|i| span * i as f64 / (points - 1) as f64).collect();
            let bath = BathCorrelator::ohmic(eta, cutoff, fragment.num_noise_ops());
            vec![KernelCase { fragment, bath, grid }]
        }
        None => {
            let count = at_least(k.cases, 20, 1, "kernel.cases")?;
            let max_n = at_least(k.max_qubits, 3, 1, "kernel.max_qubits")?;
            (0..count)
                .map(|i| {
                    let mut r = rng::stream(s.seed(), rng::tag::KERNELS, i as u64);
                    random_case(1 + i % max_n, &mut r).map_err(|e| config_error("kernel.max_qubits", e))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut table = Table::new(&[
        "case", "n", "noise_ops", "grid_points", "max_quantum_entry", "max_classical_entry", "max_pair_12",
        "max_pair_34", "max_unaveraged_quantum_entry", "max_norm_sq", "cancelled",
    ]);
    for (i, case) in cases.iter().enumerate() {
        let rep = verify_kernel_cancellation(&case.fragment, &case.bath, &case.grid)?;
        let norm = case.fragment.noise_ops().iter().map(operator_norm).fold(0.0, f64::max);
        let cancelled = rep.max_quantum_entry <= KERNEL_TOL && rep.max_classical_entry > 0.1 * norm * norm;
        table.push(vec![
            i.to_string(),
            case.fragment.num_qubits().to_string(),
            case.fragment.num_noise_ops().to_string(),
            case.grid.len().to_string(),
            f(rep.max_quantum_entry),
            f(rep.max_classical_entry),
            f(rep.max_pair_12),
            f(rep.max_pair_34),
            f(rep.max_unaveraged_quantum_entry),
            f(norm * norm),
            cancelled.to_string(),
        ]);
    }
    Ok(Report {
        table,
        budgets: json!({ "cases": cases.len() }),
        side_files: Vec::new(),
    })
}

pub fn sweep(s: &Settings) -> Result<Report> {
    let kind = s.grid.cov.unwrap_or(CovKind::Exponential);
    let (sigmas, taus) = (sigmas(s, None)?, taus(s, None)?);
    let clock = clock(s, ClockArg::PerQubit);
    let mc = mc_options(s)?;
    let circuits = circuits(s)?;
    let cost: f64 = circuits.iter().map(|c| mc_cost(c, &mc, false) + mc_cost(c, &mc, true)).sum::<f64>()
        * (sigmas.len() * taus.len()) as f64;
    check_long_run(s, cost, INTERACTIVE_WORK, "statevector work")?;
    let mut table = Table::new(&[
        "circuit_hash", "n", "l", "sigma", "tau_over_tg", "analytic_F", "analytic_std_error", "bare_F",
        "bare_std_error", "twirled_F", "twirled_std_error",
    ]);
    for (i, c) in circuits.into_iter().enumerate() {
        let p = prepare(c, clock, false)?;
        let layout = p.circuit.noise_layout(clock);
        let nc = NoisyCircuit::new(p.circuit.clone());
        let seed = rng::derive(s.seed(), rng::tag::NOISE, i as u64);
        let opts = analytic_options(s, p.circuit.num_qubits())?;
        for &sigma in &sigmas {
            for &tau in &taus {
                let cov = covariance(kind, &layout, sigma, tau)?;
                let (af, ae) = match &p.clifford {
                    Some((_, masks)) => {
                        let e = no_error_probability_with(masks, &cov, &opts)?;
                        (f(e.value), f(e.std_error))
                    }
                    None => (String::new(), String::new()),
                };
                let bare = average_fidelity_mc(&nc, &cov, &McOptions { twirled: false, seed, ..mc })?;
                let tw = average_fidelity_mc(&nc, &cov, &McOptions { twirled: true, seed, ..mc })?;
                table.push(vec![
                    p.hash.clone(),
                    p.circuit.num_qubits().to_string(),
                    p.circuit.num_layers().to_string(),
                    f(sigma),
                    f(tau),
                    af,
                    ae,
                    f(bare.value),
                    f(bare.std_error),
                    f(tw.value),
                    f(tw.std_error),
                ]);
            }
        }
    }
    Ok(Report {
        table,
        budgets: json!({
            "n_noise": mc.n_noise,
            "n_states": mc.n_states,
            "n_twirl": mc.n_twirl,
            "max_qubits": DEFAULT_MAX_QUBITS,
        }),
        side_files: Vec::new(),
    })
}
