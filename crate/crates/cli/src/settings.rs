//! Command-line flags, TOML configuration files, and their merge.
//!
//! Every option lives in one of the groups below. A group is both a clap
//! argument set and a TOML table, so `--n 4` and `[source] n = 4` name the
//! same setting. Flags win over the file; boolean flags can only switch an
//! option on.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use twirlcorr::circuit::Clock;
use twirlcorr::repcode::{Decoder, Feedback};

/// A configuration error, reported with the path of the offending field.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(field: &str, msg: impl fmt::Display) -> anyhow::Error {
    ConfigError(format!("{field}: {msg}")).into()
}

macro_rules! overlay {
    ($t:ident { $($f:ident),* $(,)? } $(flags { $($b:ident),* $(,)? })?) => {
        impl $t {
            /// Fields set in `self` win over `base`.
            pub fn over(self, base: $t) -> $t {
                $t {
                    $($f: self.$f.or(base.$f),)*
                    $($($b: self.$b || base.$b,)*)?
                }
            }
        }
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockArg {
    PerQubit,
    GlobalLayer,
}

impl From<ClockArg> for Clock {
    fn from(c: ClockArg) -> Clock {
        match c {
            ClockArg::PerQubit => Clock::PerQubit,
            ClockArg::GlobalLayer => Clock::GlobalLayer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovKind {
    /// `σ² exp(-|Δt| / τ)` per qubit, qubits independent.
    Exponential,
    /// Diagonal `σ²`; the correlation time is ignored.
    Markovian,
    /// Fully correlated in time per qubit; the correlation time is ignored.
    Quasistatic,
}

impl CovKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CovKind::Exponential => "exponential",
            CovKind::Markovian => "markovian",
            CovKind::Quasistatic => "quasistatic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyticMode {
    /// Exact Pauli sum when it fits, sampled otherwise.
    Auto,
    Exact,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderArg {
    SingleRound,
    Repeated,
}

impl From<DecoderArg> for Decoder {
    fn from(d: DecoderArg) -> Decoder {
        match d {
            DecoderArg::SingleRound => Decoder::SingleRound,
            DecoderArg::Repeated => Decoder::Repeated,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackArg {
    Active,
    PauliFrame,
}

impl From<FeedbackArg> for Feedback {
    fn from(f: FeedbackArg) -> Feedback {
        match f {
            FeedbackArg::Active => Feedback::Active,
            FeedbackArg::PauliFrame => Feedback::PauliFrame,
        }
    }
}

/// Where circuits come from. Exactly one of `ensemble`, `qasm` and
/// `circuit` may be set.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceArgs {
    /// Built-in random ensemble: clifford-brickwork, t-doped-brickwork or
    /// uniform-clifford-brickwork.
    #[arg(long)]
    pub ensemble: Option<String>,
    /// Qubits of the built-in ensemble.
    #[arg(long)]
    pub n: Option<usize>,
    /// CNOT layers of the built-in ensemble.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Circuits drawn from the built-in ensemble.
    #[arg(long)]
    pub circuits: Option<usize>,
    /// OpenQASM 2 file.
    #[arg(long)]
    pub qasm: Option<PathBuf>,
    /// Circuit in the JSON interchange format.
    #[arg(long)]
    pub circuit: Option<PathBuf>,
    /// How noise sites are assigned times for the covariance.
    #[arg(long, value_enum)]
    pub clock: Option<ClockArg>,
}

overlay!(SourceArgs { ensemble, n, depth, circuits, qasm, circuit, clock });

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridArgs {
    /// Noise strengths in radians, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    /// Correlation times in units of the gate duration, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    /// Covariance model.
    #[arg(long, value_enum)]
    pub cov: Option<CovKind>,
}

overlay!(GridArgs { sigma, tau, cov });

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetArgs {
    /// Noise realizations per Monte-Carlo estimate.
    #[arg(long)]
    pub n_noise: Option<usize>,
    /// Random stabilizer input states per noise realization.
    #[arg(long)]
    pub n_states: Option<usize>,
    /// Twirl draws per noise realization.
    #[arg(long)]
    pub n_twirl: Option<usize>,
    /// Paulis drawn by the sampled analytic mode.
    #[arg(long)]
    pub paulis: Option<usize>,
    /// Repetition-code trajectories per grid point.
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Repetition-code error-correction rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
}

overlay!(BudgetArgs { n_noise, n_states, n_twirl, paulis, trajectories, rounds });

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeArgs {
    /// Analytic evaluation: exact Pauli sum or Pauli sampling.
    #[arg(long, value_enum)]
    pub mode: Option<AnalyticMode>,
    /// Run the twirled circuits (with --bare, run both; with neither, both).
    #[arg(long)]
    pub twirled: bool,
    /// Run the bare circuits.
    #[arg(long)]
    pub bare: bool,
    /// One row per circuit instead of ensemble summaries.
    #[arg(long)]
    pub per_circuit: bool,
    /// Repetition-code decoder.
    #[arg(long, value_enum)]
    pub decoder: Option<DecoderArg>,
    /// How repetition-code corrections reach the data.
    #[arg(long, value_enum)]
    pub feedback: Option<FeedbackArg>,
}

overlay!(ModeArgs { mode, decoder, feedback } flags { twirled, bare, per_circuit });

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FtArgs {
    /// Control schedule in JSON; defaults to the circuit's own gates.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Fraction of each layer taken by its gate when no schedule is given.
    #[arg(long)]
    pub gate_fraction: Option<f64>,
    /// Paulis whose masks are written, e.g. XZ,IY.
    #[arg(long, value_delimiter = ',')]
    pub pauli: Option<Vec<String>>,
    /// Quadrature convergence tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

overlay!(FtArgs { schedule, gate_fraction, pauli, tol });

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelArgs {
    /// Random configurations checked when no schedule is given.
    #[arg(long)]
    pub cases: Option<usize>,
    /// Largest register of the random configurations.
    #[arg(long)]
    pub max_qubits: Option<usize>,
    /// Ohmic coupling strength for a given schedule.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Ohmic cutoff frequency for a given schedule.
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Evenly spaced grid times over a given schedule.
    #[arg(long)]
    pub points: Option<usize>,
}

overlay!(KernelArgs { cases, max_qubits, eta, cutoff, points });

/// Options every subcommand takes.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV output file; without it the CSV goes to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Manifest file; defaults to the output path with a .manifest.json
    /// extension.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Allow runs whose estimated cost exceeds the interactive budget.
    #[arg(long)]
    pub long_run: bool,
}

/// Every setting of one run after merging file and flags.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub long_run: bool,
    /// Lowered circuit JSON written by `qasm`.
    pub emit_circuit: Option<PathBuf>,
    pub source: SourceArgs,
    pub grid: GridArgs,
    pub budget: BudgetArgs,
    pub mode: ModeArgs,
    pub ft: FtArgs,
    pub kernel: KernelArgs,
}

impl Settings {
    pub fn over(self, base: Settings) -> Settings {
        Settings {
            seed: self.seed.or(base.seed),
            out: self.out.or(base.out),
            manifest: self.manifest.or(base.manifest),
            long_run: self.long_run || base.long_run,
            emit_circuit: self.emit_circuit.or(base.emit_circuit),
            source: self.source.over(base.source),
            grid: self.grid.over(base.grid),
            budget: self.budget.over(base.budget),
            mode: self.mode.over(base.mode),
            ft: self.ft.over(base.ft),
            kernel: self.kernel.over(base.kernel),
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Settings> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error("config", format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_error("config", format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Parser, Debug)]
#[command(name = "twirlcorr", version, about = "Fidelity of twirled circuits under correlated dephasing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Analytic fidelity of Clifford circuits over a sigma x tau grid.
    Analytic {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Paulis drawn by the sampled mode.
        #[arg(long)]
        paulis: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<AnalyticMode>,
    },
    /// Fidelity at the uncorrelated and fully correlated covariances with
    /// the same variances, next to the model's own.
    Bounds {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        paulis: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<AnalyticMode>,
    },
    /// Statevector Monte-Carlo fidelity, bare and twirled.
    Mc {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        budget: McBudget,
        #[arg(long)]
        twirled: bool,
        #[arg(long)]
        bare: bool,
    },
    /// Circuit-to-circuit spread of bare and twirled fidelities.
    Ensemble {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        budget: McBudget,
        /// One row per circuit instead of summaries.
        #[arg(long)]
        per_circuit: bool,
    },
    /// Parse and lower an OpenQASM 2 file and report its structure.
    Qasm {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        source: SourceArgs,
        /// Write the lowered circuit in the JSON interchange format.
        #[arg(long)]
        emit_circuit: Option<PathBuf>,
    },
    /// Logical survival of the three-qubit phase-flip code.
    Repcode {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, value_enum)]
        clock: Option<ClockArg>,
        #[arg(long, value_enum)]
        decoder: Option<DecoderArg>,
        #[arg(long, value_enum)]
        feedback: Option<FeedbackArg>,
        #[arg(long)]
        twirled: bool,
        #[arg(long)]
        bare: bool,
    },
    /// Finite-duration commutation masks.
    FtMask {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        ft: FtArgs,
    },
    /// Check that Pauli averaging cancels the quantum memory kernel.
    Qkernel {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        kernel: KernelArgs,
        /// Control schedule in JSON; without it random configurations are
        /// checked.
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Analytic and Monte-Carlo fidelity side by side over a grid.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        budget: McBudget,
        #[arg(long)]
        paulis: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<AnalyticMode>,
    },
}

/// Monte-Carlo budget flags.
#[derive(Args, Clone, Debug, Default)]
pub struct McBudget {
    /// Noise realizations per estimate.
    #[arg(long)]
    pub n_noise: Option<usize>,
    /// Random stabilizer input states per noise realization.
    #[arg(long)]
    pub n_states: Option<usize>,
    /// Twirl draws per noise realization.
    #[arg(long)]
    pub n_twirl: Option<usize>,
}

impl McBudget {
    fn into_budget(self) -> BudgetArgs {
        BudgetArgs {
            n_noise: self.n_noise,
            n_states: self.n_states,
            n_twirl: self.n_twirl,
            ..BudgetArgs::default()
        }
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analytic { .. } => "analytic",
            Command::Bounds { .. } => "bounds",
            Command::Mc { .. } => "mc",
            Command::Ensemble { .. } => "ensemble",
            Command::Qasm { .. } => "qasm",
            Command::Repcode { .. } => "repcode",
            Command::FtMask { .. } => "ft-mask",
            Command::Qkernel { .. } => "qkernel",
            Command::Sweep { .. } => "sweep",
        }
    }

    /// Flags of this invocation as settings, plus the config file path.
    pub fn into_settings(self) -> (Option<PathBuf>, Settings) {
        let mut s = Settings::default();
        let common = match self {
            Command::Analytic { common, source, grid, paulis, mode }
            | Command::Bounds { common, source, grid, paulis, mode } => {
                s.source = source;
                s.grid = grid;
                s.budget.paulis = paulis;
                s.mode.mode = mode;
                common
            }
            Command::Mc { common, source, grid, budget, twirled, bare } => {
                s.source = source;
                s.grid = grid;
                s.budget = budget.into_budget();
                s.mode.twirled = twirled;
                s.mode.bare = bare;
                common
            }
            Command::Ensemble { common, source, grid, budget, per_circuit } => {
                s.source = source;
                s.grid = grid;
                s.budget = budget.into_budget();
                s.mode.per_circuit = per_circuit;
                common
            }
            Command::Qasm { common, source, emit_circuit } => {
                s.source = source;
                s.emit_circuit = emit_circuit;
                common
            }
            Command::Repcode { common, grid, trajectories, rounds, clock, decoder, feedback, twirled, bare } => {
                s.grid = grid;
                s.budget.trajectories = trajectories;
                s.budget.rounds = rounds;
                s.source.clock = clock;
                s.mode.decoder = decoder;
                s.mode.feedback = feedback;
                s.mode.twirled = twirled;
                s.mode.bare = bare;
                common
            }
            Command::FtMask { common, source, ft } => {
                s.source = source;
                s.ft = ft;
                common
            }
            Command::Qkernel { common, kernel, schedule } => {
                s.kernel = kernel;
                s.ft.schedule = schedule;
                common
            }
            Command::Sweep { common, source, grid, budget, paulis, mode } => {
                s.source = source;
                s.grid = grid;
                s.budget = budget.into_budget();
                s.budget.paulis = paulis;
                s.mode.mode = mode;
                common
            }
        };
        s.seed = common.seed;
        s.out = common.out;
        s.manifest = common.manifest;
        s.long_run = common.long_run;
        (common.config, s)
    }
}
