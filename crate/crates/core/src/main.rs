use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use coopkernel::harness::{metrics_report, run_experiment, write_outputs, ExperimentConfig};
use coopkernel::HarnessError;

/// Runs cooperative kernel-bandit experiments and writes regret curves.
///
/// Every flag overrides the key of the same name in the config file.
#[derive(Debug, Parser)]
#[command(name = "coopkernel", version)]
struct Cli {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// erdos-renyi | complete | star | path | edge-list
    #[arg(long)]
    graph: Option<String>,
    /// Number of agents (or subsample size for edge lists).
    #[arg(long = "V")]
    vertices: Option<String>,
    /// Edge probability for Erdős–Rényi graphs.
    #[arg(long)]
    p: Option<String>,
    /// SNAP-style edge list file.
    #[arg(long = "edge-list")]
    edge_list: Option<String>,
    /// Communication radius; `auto` is ceil(diameter / 2).
    #[arg(long)]
    gamma: Option<String>,
    /// Rounds per trial.
    #[arg(long = "T")]
    rounds: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    /// Comma-separated: coop, dist, eager, independent, linucb, naive, omniscient.
    #[arg(long)]
    policies: Option<String>,
    /// linear | rbf[:bandwidth] | matern[:lengthscale[:nu]]
    #[arg(long = "kernel-x")]
    kernel_x: Option<String>,
    /// Oracle network kernel on z, same syntax as --kernel-x.
    #[arg(long = "kernel-z")]
    kernel_z: Option<String>,
    /// oracle | empirical
    #[arg(long = "kz-mode")]
    kz_mode: Option<String>,
    #[arg(long = "sigma-z")]
    sigma_z: Option<String>,
    /// identical | clustered | random-unit
    #[arg(long)]
    contexts: Option<String>,
    #[arg(long)]
    arms: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long = "fixed-decision-set")]
    fixed_decision_set: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    /// eta | theoretical
    #[arg(long)]
    beta: Option<String>,
    /// RKHS norm bound of the reward function.
    #[arg(long = "B")]
    norm_bound: Option<String>,
    /// Noise standard deviation.
    #[arg(long = "R")]
    noise: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// CSV output path.
    #[arg(long)]
    out: Option<String>,
    /// JSON metrics output path.
    #[arg(long = "metrics-out")]
    metrics_out: Option<String>,
    /// Extra `key=value` settings, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Cli {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let pairs: [(&'static str, &Option<String>); 24] = [
            ("graph", &self.graph),
            ("V", &self.vertices),
            ("p", &self.p),
            ("edge-list", &self.edge_list),
            ("gamma", &self.gamma),
            ("T", &self.rounds),
            ("trials", &self.trials),
            ("policies", &self.policies),
            ("kernel-x", &self.kernel_x),
            ("kernel-z", &self.kernel_z),
            ("kz-mode", &self.kz_mode),
            ("sigma-z", &self.sigma_z),
            ("contexts", &self.contexts),
            ("arms", &self.arms),
            ("dim", &self.dim),
            ("fixed-decision-set", &self.fixed_decision_set),
            ("lambda", &self.lambda),
            ("eta", &self.eta),
            ("beta", &self.beta),
            ("B", &self.norm_bound),
            ("R", &self.noise),
            ("seed", &self.seed),
            ("out", &self.out),
            ("metrics-out", &self.metrics_out),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in cli.overrides() {
        cfg.set(k, v)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    let out = run_experiment(&cfg)?;
    write_outputs(&cfg, &out)?;
    let report = metrics_report(&cfg, &out)?;
    eprintln!(
        "V={} gamma={} cover={} independent-set={} upsilon_z={}",
        report.vertices, report.gamma, report.clique_cover_size, report.independent_set_size, report.upsilon_z
    );
    for p in &report.policies {
        eprintln!(
            "{:>12}  final per-agent regret {:.4} ± {:.4}",
            p.policy, p.final_mean_per_agent_regret, p.final_std_per_agent_regret
        );
    }
    if cfg.out.is_none() {
        print!("{}", coopkernel::harness::csv_string(&out.trace));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
