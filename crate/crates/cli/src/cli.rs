//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gce_core::embedding::{Form, Ridge};
use gce_core::mean_field::GibbsPotential;

use crate::commands::{cmd_control, cmd_eval_predict, cmd_fit, cmd_generate, cmd_sweep, Axis};
use crate::config::{ExperimentConfig, FeatureConfig, Preset};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "gce", version, about = "Graph controllable embedding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate trajectories and write `<out>/dataset/`.
    Generate(Common),
    /// Fit an embedding on a dataset and write `<out>/model/`.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (default `<out>/dataset`).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Multi-step prediction NRMSE; writes `<out>/predict.csv`.
    EvalPredict {
        #[command(flatten)]
        common: Common,
        /// Model directory (default `<out>/model`).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Test dataset; held-out trajectories are generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Receding-horizon control episodes; writes `<out>/control.csv`.
    Control {
        #[command(flatten)]
        common: Common,
        /// Model directory (default `<out>/model`).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Paired sweep over one axis; writes `<out>/sweep_<axis>.csv`.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// fitting_number, noise, bandwidth, feature_dim or form.
        #[arg(long)]
        axis: String,
    },
}

/// Flags shared by every subcommand. They override the JSON configuration,
/// which overrides the preset.
#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file (may be partial).
    #[arg(long)]
    config: Option<PathBuf>,
    /// rope, grid or linear.
    #[arg(long)]
    preset: Option<String>,
    /// Results root.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "GCE_THREADS")]
    threads: Option<usize>,
    /// tensor, dense, hom or hom_mean.
    #[arg(long)]
    form: Option<String>,
    #[arg(long)]
    fitting_number: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    excitation: Option<f64>,
    /// Fixed ridge strength (default: relative to the regressor scale).
    #[arg(long)]
    ridge: Option<f64>,
    /// Gaussian Gibbs potential bandwidth.
    #[arg(long)]
    sigma: Option<f64>,
    /// Random Fourier feature dimension.
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Random Fourier kernel bandwidth.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    feedback: Option<usize>,
    #[arg(long)]
    q2: Option<f64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    eval_horizon: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
}

impl Common {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let preset = self.preset.as_deref().map(str::parse).transpose()?.unwrap_or(Preset::Rope);
        let mut c = match &self.config {
            Some(path) => {
                let c = ExperimentConfig::load(path, preset)?;
                if self.preset.is_some() && c.preset != preset {
                    return Err(CliError::config("--preset disagrees with the configuration file"));
                }
                c
            }
            None => ExperimentConfig::preset(preset),
        };
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.form {
            c.form = v.parse::<Form>()?;
        }
        if let Some(v) = self.fitting_number {
            c.fitting_number = v;
        }
        if let Some(v) = self.episodes {
            c.episodes = v;
        }
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(v) = self.noise {
            c.noise = v;
        }
        if let Some(v) = self.excitation {
            c.excitation = v;
        }
        if let Some(v) = self.ridge {
            c.ridge = Ridge::Fixed(v);
        }
        if let Some(v) = self.sigma {
            c.potential = GibbsPotential::Gaussian { sigma: v };
        }
        if self.feature_dim.is_some() || self.bandwidth.is_some() {
            match &mut c.features {
                FeatureConfig::RandomFourier { dim, bandwidth, .. } => {
                    *dim = self.feature_dim.unwrap_or(*dim);
                    *bandwidth = self.bandwidth.or(*bandwidth);
                }
                _ => return Err(CliError::config("--feature-dim and --bandwidth need random Fourier features")),
            }
        }
        if let Some(v) = self.horizon {
            c.control.horizon = v;
        }
        if let Some(v) = self.feedback {
            c.control.feedback = Some(v);
        }
        if let Some(v) = self.q2 {
            c.control.q2 = v;
        }
        if let Some(v) = self.eval_episodes {
            c.eval_episodes = v;
        }
        if let Some(v) = self.eval_horizon {
            c.eval_horizon = v;
        }
        if let Some(v) = self.replicates {
            c.sweep.replicates = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Parse `args` (including the program name), run the subcommand and return
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(path) => {
            println!("{}", path.display());
            0
        }
        Err(e) => {
            eprintln!("gce: {e}");
            e.exit_code()
        }
    }
}

fn init_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::config("thread count must be positive"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cmd: Command) -> CliResult<PathBuf> {
    match cmd {
        Command::Generate(common) => {
            init_threads(common.threads)?;
            cmd_generate(&common.resolve()?)
        }
        Command::Fit { common, data } => {
            init_threads(common.threads)?;
            let c = common.resolve()?;
            let data = data.unwrap_or_else(|| c.out.join("dataset"));
            cmd_fit(&c, &data)
        }
        Command::EvalPredict { common, model, data } => {
            init_threads(common.threads)?;
            let c = common.resolve()?;
            let model = model.unwrap_or_else(|| c.out.join("model"));
            cmd_eval_predict(&c, &model, data.as_deref())
        }
        Command::Control { common, model } => {
            init_threads(common.threads)?;
            let c = common.resolve()?;
            let model = model.unwrap_or_else(|| c.out.join("model"));
            cmd_control(&c, &model)
        }
        Command::Sweep { common, axis } => {
            init_threads(common.threads)?;
            let axis: Axis = axis.parse()?;
            cmd_sweep(&common.resolve()?, axis)
        }
    }
}
