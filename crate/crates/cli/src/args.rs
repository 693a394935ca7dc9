use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "lps-lab", version, about = "Littlewood–Paley–Stein experiments on finite reversible Markov chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random reversible chain `S` and write `T = S²` (with `S` as its root) as JSON.
    GenChain(GenChainArgs),
    /// Run a verification suite over a random instance family and write a JSON report.
    Verify(VerifyArgs),
    /// Check a chain's spectrum against the calibrated Stolz domain and dump it as CSV.
    Spectrum(SpectrumArgs),
    /// Evaluate a g-function pointwise and its time profile.
    Gfunction(GfunctionArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Dense,
    Graph,
    BirthDeath,
    Cycle,
}

impl From<Model> for lps_core::ChainModel {
    fn from(m: Model) -> Self {
        match m {
            Model::Dense => Self::Dense,
            Model::Graph => Self::Graph,
            Model::BirthDeath => Self::BirthDeath,
            Model::Cycle => Self::Cycle,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenChainArgs {
    /// Number of atoms (at least 2).
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = Model::Dense)]
    pub model: Model,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write `S` itself instead of its square.
    #[arg(long)]
    pub no_square: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Identities,
    Inequalities,
    Spectral,
    Calculus,
    All,
}

/// Exponents of `L_p(Ω; ℓ_q^d)`.
#[derive(Debug, Clone, Copy, Args)]
pub struct SpaceArgs {
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 2.0)]
    pub q: f64,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    #[command(flatten)]
    pub space: SpaceArgs,
    /// Derivative order of the square functions.
    #[arg(long, default_value_t = 1)]
    pub k: u32,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Model::Dense)]
    pub model: Model,
    /// Random restarts of the norm estimator.
    #[arg(long, default_value_t = 8)]
    pub ascent_restarts: usize,
    /// Steps per restart of the norm estimator.
    #[arg(long, default_value_t = 100)]
    pub ascent_steps: usize,
    /// Largest power `n` in the analyticity check.
    #[arg(long, default_value_t = 1024)]
    pub n_max: usize,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub chain: PathBuf,
    #[command(flatten)]
    pub space: SpaceArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Spectrum CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the Stolz boundary polyline as CSV.
    #[arg(long)]
    pub boundary: Option<PathBuf>,
    /// Also write the JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kernel {
    Heat,
    Poisson,
}

#[derive(Debug, Args)]
pub struct GfunctionArgs {
    #[arg(long)]
    pub chain: PathBuf,
    /// Field JSON; a random field of dimension `--d` when absent.
    #[arg(long)]
    pub field: Option<PathBuf>,
    #[command(flatten)]
    pub space: SpaceArgs,
    #[arg(long, default_value_t = 1)]
    pub k: u32,
    /// Real part of α; any nonzero α selects `M^α_t`.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub alpha_im: f64,
    #[arg(long, value_enum, default_value_t = Kernel::Heat)]
    pub kernel: Kernel,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pointwise CSV `atom,value`; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Profile CSV `t,norm` of `‖t^k ∂^k K_t f‖_{L_p(ℓ_q^d)}`.
    #[arg(long)]
    pub profile: Option<PathBuf>,
}
