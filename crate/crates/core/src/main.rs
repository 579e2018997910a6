use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use faris::commands::{
    cmd_bfs_compare, cmd_run, cmd_selfcheck, cmd_sweep, default_out_dir, exit_code, load_config,
};
use faris::config::reference_toml;
use faris::Error;

#[derive(Parser)]
#[command(name = "faris", version, about = "Ergodic-rate optimization for fluid active RIS")]
struct Cli {
    /// Worker threads for trial-level parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set m_o=4 --set system.tx_power_dbm=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_os_t = default_out_dir())]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Joint port selection and reflection design for one channel draw.
    Run(Common),
    /// Run one scenario of the config file.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: String,
    },
    /// Paired AO vs exhaustive search over `bfs.trials` seeds.
    BfsCompare {
        #[command(flatten)]
        common: Common,
        /// Cap on the exhaustive search size (overrides bfs.max_search_size).
        #[arg(long)]
        max_configs: Option<u64>,
    },
    /// Print every configuration key with its default value.
    ConfigReference,
    /// Numerical self-test on a small random instance.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn execute(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Cmd::Run(c) => {
            let cfg = load_config(c.config.as_deref(), &c.set, c.seed)?;
            let r = cmd_run(&cfg, &c.out_dir)?;
            println!(
                "rate {:.6} bps/Hz after {} outer iterations (converged: {}), selection {:?}",
                r.rate_star,
                r.iteration_count,
                r.converged,
                r.selection_star.indices()
            );
        }
        Cmd::Sweep { common: c, scenario } => {
            let cfg = load_config(c.config.as_deref(), &c.set, c.seed)?;
            let s = cmd_sweep(&cfg, &scenario, &c.out_dir)?;
            for p in &s.points {
                let at = p.sweep_value.map_or_else(|| "-".to_string(), |v| v.to_string());
                println!(
                    "{} {}={at}: mean {:.4} std {:.4} ({} trials, {} failed)",
                    s.scenario, s.sweep_var, p.mean, p.std, p.trials, p.failures
                );
            }
        }
        Cmd::BfsCompare { common: c, max_configs } => {
            let mut set = c.set.clone();
            if let Some(n) = max_configs {
                set.push(format!("bfs.max_search_size={n}"));
            }
            let cfg = load_config(c.config.as_deref(), &set, c.seed)?;
            let s = cmd_bfs_compare(&cfg, &c.out_dir)?;
            println!(
                "{} trials: mean AO {:.4}, mean BFS {:.4}, mean gap {:+.4}, mean |gap| {:.4} bps/Hz",
                s.trials, s.mean_ao_bps_hz, s.mean_bfs_bps_hz, s.mean_gap_bps_hz, s.mean_abs_gap_bps_hz
            );
        }
        Cmd::ConfigReference => print!("{}", reference_toml()),
        Cmd::Selfcheck { seed } => {
            let checks = cmd_selfcheck(seed)?;
            let mut ok = true;
            for (name, pass) in &checks {
                println!("[{}] {name}", if *pass { "ok" } else { "FAILED" });
                ok &= pass;
            }
            if !ok {
                return Err(Error::Numerical("self-check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
