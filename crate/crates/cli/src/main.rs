use std::path::{Path, PathBuf};
use std::process::ExitCode;

use airfeel::aircomp::{schedule_c, PowerSchedule, PowerScheme};
use airfeel::budget::{audit_plan, feasibility_q};
use airfeel::config::ExperimentConfig;
use airfeel::exec::init_thread_pool;
use airfeel::metrics::{write_csv, Curve};
use airfeel::selftest::{self, Fault};
use airfeel::{run_experiment, Error, Exec};
use clap::{Args, Parser, Subcommand};

/// Smoothing window (evaluation points) used for the printed summary.
const SUMMARY_WINDOW: usize = 100;

#[derive(Parser)]
#[command(name = "airfeel", version, about = "Over-the-air federated learning simulator")]
struct Cli {
    /// Worker threads for the data-parallel core.
    #[arg(long, global = true, env = "AIRFEEL_THREADS")]
    threads: Option<usize>,
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured scheme and repeat, writing one CSV per run.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat `run` for several values of q, one subdirectory per value.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated q values.
        #[arg(long, value_delimiter = ',', required = true)]
        q: Vec<f64>,
    },
    /// Check the configured plan against the latency and energy budgets.
    Audit {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Selftest {
        /// Scale the denoising factor by this value to confirm the checks fail.
        #[arg(long)]
        inject_noise_fault: Option<f64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Print the default configuration.
    Defaults,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to these schemes, e.g. `proposed-reweight,vanilla-baseline`.
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<String>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Estimate theory constants and add bound columns to the CSVs.
    #[arg(long)]
    diagnostics: bool,
}

enum Failure {
    Run(String),
    Config(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn load(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => Failure::Config(e.to_string()),
            other => other.into(),
        }),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_overrides(mut cfg: ExperimentConfig, common: &Common) -> Result<ExperimentConfig, Failure> {
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if !common.scheme.is_empty() {
        cfg.schemes = common.scheme.clone();
    }
    if let Some(r) = common.repeats {
        cfg.repeats = r;
    }
    if let Some(r) = common.rounds {
        cfg.rounds = r;
    }
    if common.diagnostics {
        cfg.diagnostics.enabled = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_into(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| Failure::Run(format!("{}: {e}", out.display())))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())
        .map_err(|e| Failure::Run(format!("{}: {e}", out.display())))?;
    let result = run_experiment(cfg, exec)?;
    let mut audit_text = String::new();
    for run in &result.runs {
        let name = format!("{}_r{}.csv", run.scheme, run.repeat);
        write_csv(&run.record, &out.join(&name))?;
        audit_text.push_str(&format!("[{} repeat {}]\n{}\n", run.scheme, run.repeat, run.audit));
    }
    if let Some(cal) = &result.calibration {
        audit_text.push_str(&format!("[theory constants]\n{:#?}\n", cal.constants));
        println!(
            "calibration ({}): descent bound held in {:.1}% of replayed rounds{}; {} of {} generalization checks exceeded the bound",
            cal.scheme,
            100.0 * cal.descent_pass_rate(),
            if cal.eta_verified() { "" } else { " (step size above the validity cap: unverified)" },
            cal.gen_violations(),
            cal.gen.len()
        );
    }
    std::fs::write(out.join("audit.txt"), audit_text).map_err(|e| Failure::Run(format!("{}: {e}", out.display())))?;
    println!("{:<22} {:>14} {:>16} {:>16}", "scheme", "final_loss", "unit_energy", "raw_samples");
    for scheme in cfg.scheme_list() {
        let curve = Curve::mean_of(&result.records_for(scheme), SUMMARY_WINDOW)?;
        let last = curve.loss.len() - 1;
        println!(
            "{:<22} {:>14.6} {:>16.4} {:>16.0}",
            scheme.name(),
            curve.final_loss(),
            curve.unit_energy[last],
            curve.raw_samples[last]
        );
    }
    if result.runs.iter().any(|r| !r.audit.passed()) {
        return Err(Failure::Run(format!("budget audit failed; see {}", out.join("audit.txt").display())));
    }
    Ok(())
}

fn audit(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let comm = cfg.comm_params()?;
    let system = cfg.system_params();
    let h = cfg.comm.h_floor;
    let mut infeasible = false;
    for scheme in cfg.scheme_list() {
        let c: Vec<f64> = match scheme.power {
            PowerScheme::Optimal => {
                println!("{scheme}: depends on the runtime optimality gap; not audited ahead of time");
                continue;
            }
            p => {
                let sched = PowerSchedule::new(p, cfg.power.q, cfg.rounds)?;
                (1..=cfg.rounds)
                    .map(|r| schedule_c(&sched, r, comm.p_n))
                    .collect::<airfeel::Result<_>>()?
            }
        };
        let feas = feasibility_q(&c, &system, &comm, h)?;
        let plan = audit_plan(
            &vec![cfg.sensing.b_max; cfg.rounds],
            &c,
            &vec![vec![h; cfg.devices]; cfg.rounds],
            &system,
            &comm,
        )?;
        let needed = (cfg.rounds * cfg.sensing.b_max) as f64;
        println!(
            "{scheme}: Q = {:.1} samples per device ({} binding), plan needs {needed:.0}",
            feas.q,
            feas.binding()
        );
        print!("{plan}");
        if !plan.passed() {
            infeasible = true;
        }
    }
    if infeasible {
        return Err(Failure::Run("plan violates the budgets at the worst-case channel".into()));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    if let Some(n) = cli.threads {
        init_thread_pool(n);
    }
    match cli.command {
        Command::Run { common } => {
            let cfg = apply_overrides(load(common.config.as_deref())?, &common)?;
            run_into(&cfg, &common.out, exec)
        }
        Command::Sweep { common, q } => {
            let base = apply_overrides(load(common.config.as_deref())?, &common)?;
            for value in q {
                let mut cfg = base.clone();
                cfg.power.q = value;
                cfg.validate()?;
                let dir = common.out.join(format!("q_{value}"));
                println!("q = {value}");
                run_into(&cfg, &dir, exec)?;
            }
            Ok(())
        }
        Command::Audit { config } => audit(&load(config.as_deref())?),
        Command::Selftest { inject_noise_fault, seed } => {
            let fault = inject_noise_fault.map_or(Fault::None, Fault::NoiseScale);
            let report = selftest::run(fault, seed)?;
            print!("{report}");
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Run("selftest failed".into()))
            }
        }
        Command::Defaults => {
            print!("{}", ExperimentConfig::default_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}
