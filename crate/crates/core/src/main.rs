use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drap::attack::Method;
use drap::harness::{bench_report, run_experiment, ExperimentConfig, ExperimentSummary, HarnessError, Stages};

#[derive(Parser)]
#[command(name = "drap", version, about = "Transfer attacks over diverse surrogate ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build surrogate and target ensembles and save them under --out.
    Forge(Opts),
    /// Run one attack method and report its transfer success.
    Attack(Opts),
    /// Bound diagnostics for the crafted examples.
    Bound(Opts),
    /// Predicted vs observed gradient-call counts per method.
    Bench(Opts),
    /// ASR tables for all selected methods.
    Eval(Opts),
    /// Ensembles, ASR, bound reports and traces.
    All(Opts),
}

/// Every flag overrides the matching key of the config file.
#[derive(Args, Default)]
struct Opts {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long = "beta-x")]
    beta_x: Option<String>,
    #[arg(long = "beta-eps")]
    beta_eps: Option<String>,
    #[arg(long = "inner-T")]
    inner_t: Option<String>,
    #[arg(long = "n-ls")]
    n_ls: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    /// Snapshots per component.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    components: Option<String>,
    /// Comma-separated method names, or `all`.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    phi: Option<String>,
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    c1: Option<String>,
    #[arg(long)]
    c2: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    /// One seed or a comma-separated list.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// gaussian_mixture, two_rings or cifar10:<path>.
    #[arg(long)]
    dataset: Option<String>,
    /// Extra `key=value` overrides for keys without a dedicated flag.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Opts {
    fn overrides(&self) -> Result<BTreeMap<String, String>, HarnessError> {
        let mut map = BTreeMap::new();
        let flags = [
            ("gamma", &self.gamma),
            ("beta_x", &self.beta_x),
            ("beta_eps", &self.beta_eps),
            ("inner_t", &self.inner_t),
            ("n_ls", &self.n_ls),
            ("mu", &self.mu),
            ("n", &self.n),
            ("components", &self.components),
            ("method", &self.method),
            ("phi", &self.phi),
            ("r", &self.r),
            ("c1", &self.c1),
            ("c2", &self.c2),
            ("rho", &self.rho),
            ("delta", &self.delta),
            ("out", &self.out),
            ("dataset", &self.dataset),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                map.insert(k.to_string(), v.clone());
            }
        }
        if let Some(s) = &self.seed {
            let key = if s.contains(',') { "seeds" } else { "seed" };
            map.insert(key.to_string(), s.clone());
        }
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            map.insert(k.trim().replace('-', "_"), v.trim().to_string());
        }
        Ok(map)
    }

    /// Config file (if any) with flags applied on top. A seed flag replaces
    /// whichever of `seed`/`seeds` the file used.
    fn load(&self, default_methods: Option<Vec<Method>>) -> Result<ExperimentConfig, HarnessError> {
        let mut map = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
                ExperimentConfig::parse_text(&text)?
            }
            None => BTreeMap::new(),
        };
        let over = self.overrides()?;
        if over.contains_key("seed") || over.contains_key("seeds") {
            map.remove("seed");
            map.remove("seeds");
        }
        let method_given = over.contains_key("method") || map.contains_key("method");
        map.extend(over);
        let mut cfg = ExperimentConfig::from_map(&map)?;
        if let (Some(methods), false) = (default_methods, method_given) {
            cfg.methods = methods;
        }
        Ok(cfg)
    }
}

fn print_asr(summary: &ExperimentSummary) {
    let means = summary.asr.mean_over_seeds();
    if means.is_empty() {
        return;
    }
    println!("{:<10} {:<14} {:>7}", "method", "set", "asr%");
    for ((method, set), rate) in means {
        println!("{:<10} {:<14} {:>7.1}", method.to_string(), set, 100.0 * rate);
    }
}

fn print_bounds(summary: &ExperimentSummary) {
    for b in &summary.bounds {
        let r = &b.report;
        let realized = r.realized_target_risk.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "seed {} {} ex {}: bound {:.4} (risk {:.4}, sharpness {:.4}, d/c1 {:.4}, c2·r {:.4}, eps_pac {:.4}) realized {realized}",
            b.seed,
            b.method,
            b.example,
            r.assembled,
            r.risk,
            r.sharpness,
            r.d_hat / r.c1,
            r.c2 * r.r,
            r.eps_pac
        );
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    let (opts, stages, methods) = match &cli.command {
        Command::Forge(o) => (
            o,
            Stages {
                save_ensembles: true,
                asr: false,
                bound: false,
                traces: false,
            },
            None,
        ),
        Command::Attack(o) => (
            o,
            Stages {
                save_ensembles: false,
                asr: true,
                bound: false,
                traces: true,
            },
            Some(vec![Method::Drap]),
        ),
        Command::Bound(o) => (
            o,
            Stages {
                save_ensembles: false,
                asr: false,
                bound: true,
                traces: false,
            },
            Some(vec![Method::Drap]),
        ),
        Command::Eval(o) => (
            o,
            Stages {
                save_ensembles: false,
                asr: true,
                bound: false,
                traces: false,
            },
            None,
        ),
        Command::All(o) => (o, Stages::ALL, None),
        Command::Bench(o) => {
            let cfg = o.load(None)?;
            let report = bench_report(&cfg)?;
            fs::create_dir_all(&cfg.out)?;
            fs::write(cfg.out.join("bench.csv"), &report)?;
            print!("{report}");
            return Ok(());
        }
    };
    let cfg = opts.load(methods)?;
    if let Command::Attack(_) = cli.command {
        if cfg.methods.len() != 1 {
            return Err(HarnessError::Config("`attack` runs exactly one --method".into()));
        }
    }
    let summary = run_experiment(&cfg, stages)?;
    print_asr(&summary);
    print_bounds(&summary);
    eprintln!("wrote {} artifacts under {}", summary.files.len(), cfg.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
