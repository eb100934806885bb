use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use potwell::classifier::{lambda_scan, LambdaScanResult, VerdictKind};
use potwell::config::RunConfig;
use potwell::evolution::{
    energy_identity_residual, integrate, nehari_derivative_check,
    picard_mild_solve, RunVerdict, SolverConfig,
};
use potwell::functionals::{constants_build, exponent_p, Problem};
use potwell::ground_state::minimize_quotient;
use potwell::io::{write_checkpoint, write_timeseries};
use potwell::verify::run_verify;
use potwell::Error;

#[derive(Parser)]
#[command(name = "potwell", version, about = "Potential-well dynamics of the critical Choquard heat equation on a box")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file with one `key = value` per line.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set t_end=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory; writes trajectory.csv and final.chk.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Bracket the thresholds lambda1 <= lambda2 along u0 = lambda * initial.
    ScanLambda {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0.5)]
        lambda_min: f64,
        #[arg(long, default_value_t = 4.0)]
        lambda_max: f64,
        #[arg(long, default_value_t = 0.05)]
        bracket_tol: f64,
        #[arg(long, default_value_t = 40)]
        max_probes: usize,
    },
    /// Minimise the quotient A / B^{1/p} from the configured initial field.
    GroundState {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Print the sharp constants for one mu.
    Constants {
        #[arg(long, default_value_t = 2.0)]
        mu: f64,
    },
    /// Compare the Picard mild solution with the adaptive integrator.
    PicardCompare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0.01)]
        horizon: f64,
        #[arg(long, default_value_t = 40)]
        n_time: usize,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
    },
    /// Run the invariant suite on small grids.
    Verify {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

enum Failure {
    Config(String),
    Run(String),
    Verify,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidMu(_) | Error::InvalidDomain(_) => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Run(e.to_string()),
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Config(e.to_string()))?,
        None => RunConfig::default(),
    };
    for pair in &args.overrides {
        cfg.apply_override(pair)
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    Ok(cfg)
}

fn prepare(cfg: &RunConfig) -> Result<(Problem, potwell::grid::Field), Failure> {
    let domain = cfg.domain().map_err(|e| Failure::Config(e.to_string()))?;
    let problem = Problem::new(domain, cfg.mu).map_err(|e| Failure::Config(e.to_string()))?;
    let u0 = cfg
        .initial_field()
        .map_err(|e| Failure::Config(e.to_string()))?;
    Ok((problem, u0))
}

fn output_dir(cfg: &RunConfig) -> Result<&Path, Failure> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Failure::Run(e.to_string()))?;
    Ok(&cfg.output_dir)
}

fn verdict_text(v: &RunVerdict) -> String {
    match v {
        RunVerdict::HorizonReached => "horizon reached".into(),
        RunVerdict::BlowUp { t_est } => format!("blow-up, estimated time {t_est:.6e}"),
        RunVerdict::StepLimit { t } => format!("step limit hit at t = {t:.6e}"),
    }
}

fn simulate(args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let (problem, u0) = prepare(&cfg)?;
    let out = integrate(&u0, &cfg.solver, &problem)?;
    let dir = output_dir(&cfg)?;
    write_timeseries(&out.records, &dir.join("trajectory.csv"))?;
    let t_final = out.records.last().map_or(0.0, |r| r.t);
    write_checkpoint(&out.final_field, t_final, cfg.mu, &dir.join("final.chk"))?;
    println!("verdict        {}", verdict_text(&out.verdict));
    println!("well entry     {:?}", out.entry);
    println!(
        "steps          {} accepted, {} rejected",
        out.accepted_steps, out.rejected_steps
    );
    if !out.is_blow_up() && out.records.len() >= 3 {
        println!("energy check   {:.3e}", energy_identity_residual(&out)?);
        println!("nehari check   {:.3e}", nehari_derivative_check(&out)?);
    }
    println!("output         {}", dir.display());
    Ok(())
}

fn write_probes(scan: &LambdaScanResult, path: &Path) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::Run(e.to_string()))?;
    let io = |e: csv::Error| Failure::Run(e.to_string());
    w.write_record(["lambda", "kind", "t0", "blow_up", "t_last", "j_last", "c_limit"])
        .map_err(io)?;
    for (l, v) in &scan.probes {
        let t0 = match v.kind {
            VerdictKind::EntersW { t0 } | VerdictKind::EntersV { t0 } => format!("{t0:.16e}"),
            VerdictKind::Undetermined => String::new(),
        };
        let last = v.outcome.records.last();
        w.write_record([
            format!("{l:.16e}"),
            v.kind.label().to_string(),
            t0,
            v.outcome.is_blow_up().to_string(),
            last.map_or(String::new(), |r| format!("{:.16e}", r.t)),
            last.map_or(String::new(), |r| format!("{:.16e}", r.j)),
            v.c_limit.map_or(String::new(), |c| format!("{c:.16e}")),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Failure::Run(e.to_string()))
}

fn scan_lambda(
    args: &ConfigArgs,
    lambda_min: f64,
    lambda_max: f64,
    bracket_tol: f64,
    max_probes: usize,
) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let (problem, phi) = prepare(&cfg)?;
    let phi = if phi.values().iter().all(|&v| v <= 0.0) {
        phi.scaled(-1.0)
    } else {
        phi
    };
    let scan = lambda_scan(
        &phi,
        lambda_min,
        lambda_max,
        bracket_tol,
        &cfg.solver,
        &problem,
        max_probes,
    )?;
    let dir = output_dir(&cfg)?;
    write_probes(&scan, &dir.join("probes.csv"))?;
    println!("lambda1 in [{:.6}, {:.6}]", scan.lambda1_lo, scan.lambda1_hi);
    println!("lambda2 in [{:.6}, {:.6}]", scan.lambda2_lo, scan.lambda2_hi);
    println!("probes   {}", scan.probes.len());
    println!("ordered  {}", scan.ordered);
    if scan.exhausted {
        println!("probe budget exhausted; brackets are partial");
    }
    Ok(())
}

fn ground_state(args: &ConfigArgs, max_iter: usize, tol: f64) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let (problem, u0) = prepare(&cfg)?;
    let res = minimize_quotient(&u0, max_iter, tol, &problem)?;
    let c = problem.consts();
    let dir = output_dir(&cfg)?;
    write_checkpoint(&res.minimizer, 0.0, cfg.mu, &dir.join("minimizer.chk"))?;
    println!("q_min       {:.10}", res.q_min);
    println!("s_hl        {:.10}  (ratio {:.6})", c.s_hl, res.q_min / c.s_hl);
    println!("m_est       {:.10}", res.m_est);
    println!("m_mu        {:.10}  (ratio {:.6})", c.m_mu, res.m_est / c.m_mu);
    println!("iterations  {}", res.iterations);
    println!("grad norm   {:.3e}", res.grad_norm_final);
    if res.stalled {
        println!("line search stalled");
    }
    Ok(())
}

fn constants(mu: f64) -> Result<(), Failure> {
    let p = exponent_p(mu).map_err(|e| Failure::Config(e.to_string()))?;
    let c = constants_build(mu).map_err(|e| Failure::Config(e.to_string()))?;
    println!("mu     {}", mu);
    println!("p      {}", p);
    println!("c_hls  {:.15}", c.c_hls);
    println!("s_sob  {:.15}", c.s_sob);
    println!("s_hl   {:.15}", c.s_hl);
    println!("m_mu   {:.15}", c.m_mu);
    Ok(())
}

fn picard_compare(
    args: &ConfigArgs,
    horizon: f64,
    n_time: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let (problem, u0) = prepare(&cfg)?;
    let pic = picard_mild_solve(
        &u0,
        horizon,
        n_time,
        tol,
        max_iter,
        &problem,
        cfg.solver.nonlinearity_on,
    )?;
    let run_cfg = SolverConfig {
        t_end: horizon,
        ..cfg.solver.clone()
    };
    let out = integrate(&u0, &run_cfg, &problem)?;
    let mut diff = pic.field.clone();
    diff.axpy(-1.0, &out.final_field);
    let rel = diff.norm(2.0) / out.final_field.norm(2.0).max(f64::MIN_POSITIVE);
    println!("horizon            {horizon}");
    println!("picard iterations  {}", pic.iterations);
    for (k, r) in pic.contraction_ratios().iter().enumerate() {
        println!("ratio {:<3}          {r:.3e}", k + 1);
    }
    println!("relative L2 gap    {rel:.3e}");
    Ok(())
}

fn verify(seed: u64) -> Result<(), Failure> {
    let report = run_verify(seed)?;
    print!("{}", report.text());
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Verify)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Simulate { cfg } => simulate(cfg),
        Command::ScanLambda {
            cfg,
            lambda_min,
            lambda_max,
            bracket_tol,
            max_probes,
        } => scan_lambda(cfg, *lambda_min, *lambda_max, *bracket_tol, *max_probes),
        Command::GroundState { cfg, max_iter, tol } => ground_state(cfg, *max_iter, *tol),
        Command::Constants { mu } => constants(*mu),
        Command::PicardCompare {
            cfg,
            horizon,
            n_time,
            tol,
            max_iter,
        } => picard_compare(cfg, *horizon, *n_time, *tol, *max_iter),
        Command::Verify { seed } => verify(*seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Verify) => ExitCode::from(1),
    }
}
