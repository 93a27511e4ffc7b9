use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sgafem::driver::{adaptive_solve, run_suite, write_csv, write_json, RunConfig, SuiteName};
use sgafem::Error;

#[derive(Parser)]
#[command(name = "sgafem", version, about = "Adaptive stochastic Galerkin FEM for parametric diffusion")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One adaptive run; writes run.csv and run.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `out_dir` from the config, else `.`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All four α of an experiment family: fig3 (interval) or fig4 (L-shape).
    Suite {
        name: String,
        /// Base config; dim and alpha are overridden per run.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Subset of α values (comma separated).
        #[arg(long, value_delimiter = ',')]
        alpha: Option<Vec<f64>>,
        /// Element limit per run.
        #[arg(long)]
        max_elements: Option<usize>,
    },
    /// Parse and check a config, printing the resolved parameters.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e @ Error::NotConverged(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Ok(false) flags a run that stopped without reaching its target.
fn run(cli: Cli) -> sgafem::Result<bool> {
    match cli.cmd {
        Cmd::Run { config, out } => {
            let cfg = RunConfig::from_file(&config)?;
            let dir = out.or_else(|| cfg.out_dir.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            let res = adaptive_solve(&cfg)?;
            write_csv(&res.records, &dir.join("run.csv"))?;
            write_json(&cfg, &res, &dir.join("run.json"))?;
            let last = res.records.last().unwrap();
            println!("{:?} after {} passes: N = {}, #F = {}, b = {:.4e}", res.stop, res.records.len(), last.n, last.f, last.b);
            Ok(res.converged())
        }
        Cmd::Suite { name, config, out, alpha, max_elements } => {
            let name: SuiteName = name.parse()?;
            let mut base = match config {
                Some(p) => RunConfig::from_file(&p)?,
                None => RunConfig { eps: 0.0, max_iterations: 500, ..RunConfig::default() },
            };
            base.max_elements = max_elements.unwrap_or(name.default_max_elements());
            let alphas = alpha.unwrap_or_else(|| name.alphas().to_vec());
            let entries = run_suite(name, &base, &alphas, &out)?;
            println!("{:>8} {:>9} {:>9} {:>8} {:>10}", "alpha", "slope", "expected", "final_N", "final_b");
            for e in &entries {
                println!("{:>8.4} {:>9.3} {:>9.3} {:>8} {:>10.3e}", e.alpha, e.slope, e.reference, e.final_n, e.final_b);
            }
            Ok(true)
        }
        Cmd::ValidateConfig { config } => {
            let cfg = RunConfig::from_file(&config)?;
            let cf = cfg.coeff_field()?;
            let cond = cfg.conditions(&cf);
            println!("config ok: dim {}, alpha {}, zeta {}, J {}, zeta_J {}, ell {}", cfg.dim, cfg.alpha, cfg.zeta(), cfg.j_hat(), cfg.zeta_j(), cfg.ell(&cf));
            println!("c_B {:.4}, C_B {:.4}, gamma {:.4}", cond.c_b, cond.big_c_b, cond.gamma);
            if !(cond.zeta_ok && cond.omega_ok && cond.gamma_ok) {
                println!("warning: contraction conditions not met (zeta {}, omega0 {}, gamma {})", cond.zeta_ok, cond.omega_ok, cond.gamma_ok);
            }
            Ok(true)
        }
    }
}
