use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use efalloc::allocators::{ANALYTIC_C, DEFAULT_BRUTE_CAP, DEFAULT_KAPPA};
use efalloc::analysis::{
    big_c_constant, coupon_threshold, global_nonexistence_bound, ln_rho, nonexistence_c,
    nonexistence_max_r, per_allocation_ef_bound, tau_prime, NonExistenceBoundParams,
};
use efalloc::experiments::run_sweep_with_workers;
use efalloc::{
    brute_force_ef_exists, envy_report, select_tau, threshold_matching,
    threshold_matching_with_removal, verify_removal_certificates, welfare_maximizing, Allocation,
    DistributionSpec, Instance, SweepConfig, TauMode, SCHEMA,
};
use serde_json::{json, Value};

const EXIT_NULL: u8 = 2;
const EXIT_NOT_EF: u8 = 3;

#[derive(Parser)]
#[command(
    name = "efalloc",
    version,
    about = "Envy-free allocation under random additive utilities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random instance.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        /// uniform, staircase, truncated_normal:MU,SIGMA, or a JSON object.
        #[arg(long, default_value = "uniform")]
        dist: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an allocator on an instance file.
    Solve {
        instance: PathBuf,
        #[arg(long, value_enum)]
        alg: Alg,
        #[command(flatten)]
        tau: TauArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit an allocation for envy.
    Check {
        instance: PathBuf,
        allocation: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decide by exhaustive search whether an envy-free allocation exists.
    Oracle {
        instance: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BRUTE_CAP)]
        cap: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate thresholds and analytic bounds.
    Bounds {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value = "uniform")]
        dist: String,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
        #[arg(long, default_value_t = ANALYTIC_C)]
        c: f64,
        #[arg(long, default_value_t = DEFAULT_KAPPA)]
        kappa: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo sweep from a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the JSON mirror here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Re-run threshold matching with removal and check every removal certificate.
    Certify {
        instance: PathBuf,
        #[command(flatten)]
        tau: TauArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Alg {
    Wmax,
    Alg1,
    Alg2,
}

#[derive(Clone, Copy, ValueEnum)]
enum TauModeArg {
    Analytic,
    Fixed,
    Quantile,
}

#[derive(Args)]
struct TauArgs {
    /// Items per agent; defaults to m / n.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long, value_enum, default_value = "quantile")]
    tau_mode: TauModeArg,
    /// Threshold for --tau-mode fixed.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    kappa: f64,
    #[arg(long, default_value_t = ANALYTIC_C)]
    c: f64,
}

impl TauArgs {
    fn mode(&self) -> Result<TauMode> {
        Ok(match self.tau_mode {
            TauModeArg::Analytic => TauMode::Analytic { c: self.c },
            TauModeArg::Quantile => TauMode::Quantile { kappa: self.kappa },
            TauModeArg::Fixed => TauMode::Fixed {
                tau: self.tau.context("--tau-mode fixed needs --tau")?,
            },
        })
    }

    fn r(&self, inst: &Instance) -> usize {
        self.r.unwrap_or(inst.m() / inst.n())
    }

    fn resolve(&self, inst: &Instance) -> Result<(usize, f64)> {
        let r = self.r(inst);
        let mode = self.mode()?;
        let params = match mode {
            TauMode::Analytic { .. } => Some(inst.dist().poly_bound_params()?),
            _ => None,
        };
        Ok((r, select_tau(inst, r, params.as_ref(), mode)?.resolved_tau))
    }
}

fn parse_dist(text: &str) -> Result<DistributionSpec> {
    let text = text.trim();
    let spec = if text.starts_with('{') {
        serde_json::from_str(text).context("invalid distribution JSON")?
    } else if let Some(args) = text.strip_prefix("truncated_normal:") {
        let parts: Vec<&str> = args.split(',').collect();
        let [mu, sigma] = parts.as_slice() else {
            bail!("expected truncated_normal:MU,SIGMA, got {text:?}");
        };
        DistributionSpec::truncated_normal(mu.trim().parse()?, sigma.trim().parse()?)
    } else {
        match text {
            "uniform" => DistributionSpec::Uniform,
            "staircase" => DistributionSpec::Staircase,
            other => bail!("unknown distribution {other:?}"),
        }
    };
    spec.validate()?;
    Ok(spec)
}

fn read_instance(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing instance {}", path.display()))
}

/// Accepts `{"owner": [...]}`, which also covers `solve` output.
fn read_allocation(path: &Path) -> Result<Allocation> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing allocation {}", path.display()))?;
    let owner = value
        .get("owner")
        .filter(|o| !o.is_null())
        .with_context(|| format!("{} has no owner array", path.display()))?;
    Ok(Allocation::new(serde_json::from_value(owner.clone())?))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn emit_json(out: Option<&Path>, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(out, &text)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen {
            n,
            m,
            dist,
            seed,
            out,
        } => {
            let inst = Instance::generate(n, m, &parse_dist(&dist)?, seed)?;
            emit(
                out.as_deref(),
                &(serde_json::to_string_pretty(&inst)? + "\n"),
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve {
            instance,
            alg,
            tau,
            out,
        } => {
            let inst = read_instance(&instance)?;
            let (alloc, resolved, removals) = match alg {
                Alg::Wmax => (Some(welfare_maximizing(&inst)), None, None),
                Alg::Alg1 => {
                    let (r, t) = tau.resolve(&inst)?;
                    (threshold_matching(&inst, r, t)?, Some(t), None)
                }
                Alg::Alg2 => {
                    let (r, t) = tau.resolve(&inst)?;
                    let res = threshold_matching_with_removal(&inst, r, t)?;
                    (res.allocation, Some(t), Some(res.log.entries))
                }
            };
            let status = if alloc.is_some() {
                "allocation"
            } else {
                "null"
            };
            let doc = json!({
                "schema": SCHEMA,
                "algorithm": alg.to_possible_value().map(|v| v.get_name().to_string()),
                "status": status,
                "owner": alloc.as_ref().map(|a| &a.owner),
                "tau": resolved,
                "removals": removals,
            });
            emit_json(out.as_deref(), &doc)?;
            Ok(if alloc.is_some() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NULL)
            })
        }
        Command::Check {
            instance,
            allocation,
            out,
        } => {
            let inst = read_instance(&instance)?;
            let alloc = read_allocation(&allocation)?;
            let report = envy_report(&inst, &alloc)?;
            if let Some(w) = report.witness {
                eprintln!(
                    "agent {} envies agent {} by {}",
                    w.envious + 1,
                    w.envied + 1,
                    w.deficit
                );
            }
            let doc = json!({
                "schema": SCHEMA,
                "envy_free": report.envy_free,
                "max_envy": report.max_envy,
                "witness": report.witness,
            });
            emit_json(out.as_deref(), &doc)?;
            Ok(if report.envy_free {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NOT_EF)
            })
        }
        Command::Oracle { instance, cap, out } => {
            let inst = read_instance(&instance)?;
            let res = brute_force_ef_exists(&inst, cap)?;
            let doc = json!({
                "schema": SCHEMA,
                "exists": res.exists,
                "count": res.count,
                "witness": res.witness.as_ref().map(|a| &a.owner),
            });
            emit_json(out.as_deref(), &doc)?;
            Ok(if res.exists {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NULL)
            })
        }
        Command::Bounds {
            n,
            m,
            dist,
            epsilon,
            c,
            kappa,
            out,
        } => {
            let dist = parse_dist(&dist)?;
            emit_json(out.as_deref(), &bounds_doc(n, m, &dist, epsilon, c, kappa)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            config,
            workers,
            seed,
            out,
            json,
        } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg: SweepConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing sweep config {}", config.display()))?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let result = run_sweep_with_workers(&cfg, workers)?;
            if let Some(p) = json {
                fs::write(&p, result.to_json()? + "\n")
                    .with_context(|| format!("writing {}", p.display()))?;
            }
            emit(out.as_deref(), &result.to_csv()?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Certify { instance, tau, out } => {
            let inst = read_instance(&instance)?;
            let (r, t) = tau.resolve(&inst)?;
            let res = threshold_matching_with_removal(&inst, r, t)?;
            let report = verify_removal_certificates(&inst, t, r, &res.log);
            if report.degenerate_tau_prime {
                eprintln!("warning: degenerate tau-prime {} <= 0", report.tau_prime);
            }
            let doc = json!({
                "schema": SCHEMA,
                "tau": t,
                "r": r,
                "report": report,
            });
            emit_json(out.as_deref(), &doc)?;
            Ok(if report.all_certified {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NOT_EF)
            })
        }
    }
}

/// `Ok` value or JSON null plus the error text.
fn split<T: serde::Serialize, E: std::fmt::Display>(
    r: std::result::Result<T, E>,
) -> (Value, Value) {
    match r {
        Ok(v) => (json!(v), Value::Null),
        Err(e) => (Value::Null, json!(e.to_string())),
    }
}

fn bounds_doc(
    n: usize,
    m: usize,
    dist: &DistributionSpec,
    epsilon: f64,
    c: f64,
    kappa: f64,
) -> Result<Value> {
    if n == 0 {
        bail!("n must be positive");
    }
    let r = m / n;
    let ell = m - r * n;
    let params = dist.poly_bound_params();
    let (params_json, params_error) = split(params.as_ref().map(|p| *p).map_err(|e| e.to_string()));

    let tau_analytic = params
        .as_ref()
        .map_err(|e| e.to_string())
        .and_then(|p| efalloc::analysis::analytic_tau(c, n, m, p).map_err(|e| e.to_string()));
    let quantile_tail = kappa * (m as f64).ln() / n as f64;
    let tau_quantile = dist.upper_quantile(quantile_tail);
    let (tau_analytic_v, tau_analytic_err) = split(tau_analytic.clone());
    let (tau_quantile_v, tau_quantile_err) =
        split(tau_quantile.as_ref().map(|t| *t).map_err(|e| e.to_string()));

    let theta_q = params.as_ref().ok().map(|p| (p.theta_lower, p.q));
    let rho_log = match theta_q {
        Some((theta, q)) if r >= 1 => split(ln_rho(theta, q, r)),
        Some(_) => (Value::Null, json!("r = 0: fewer items than agents")),
        None => (Value::Null, params_error.clone()),
    };

    let (non_existence, reason) = if ell == 0 {
        (Value::Null, json!("ℓ = 0"))
    } else {
        match theta_q {
            None => (Value::Null, params_error.clone()),
            Some((theta, q)) => match NonExistenceBoundParams::new(n, m, theta, q, epsilon)
                .and_then(|p| Ok((per_allocation_ef_bound(&p)?, global_nonexistence_bound(&p)?)))
            {
                Ok((per, global)) => (
                    json!({
                        "ell": ell,
                        "in_epsilon_range": per.in_epsilon_range,
                        "per_allocation_log": per.log,
                        "per_allocation_min_form_log": per.log_min_form,
                        "per_allocation_epsilon_form_log": per.log_epsilon_form,
                        "global_log": global.log_bound,
                        "target_log": global.target_log,
                        "meets_target": global.meets_target,
                    }),
                    Value::Null,
                ),
                Err(e) => (Value::Null, json!(e.to_string())),
            },
        }
    };

    let t2c =
        theta_q.map(|(theta, q)| nonexistence_c(epsilon, theta, q).map_err(|e| e.to_string()));
    let (t2c_v, t2c_err) = match t2c.clone() {
        Some(r) => split(r),
        None => (Value::Null, params_error.clone()),
    };
    let t2_max_r = t2c
        .and_then(|r| r.ok())
        .and_then(|cc| nonexistence_max_r(cc, n).ok());

    Ok(json!({
        "schema": SCHEMA,
        "n": n,
        "m": m,
        "r": r,
        "ell": ell,
        "dist": dist,
        "epsilon": epsilon,
        "poly_bound": params_json,
        "poly_bound_error": params_error,
        "c": c,
        "tau_analytic": tau_analytic_v,
        "tau_analytic_error": tau_analytic_err,
        "tau_prime_analytic": tau_analytic.as_ref().ok().map(|&t| tau_prime(t)),
        "kappa": kappa,
        "tau_quantile": tau_quantile_v,
        "tau_quantile_error": tau_quantile_err,
        "tau_prime_quantile": tau_quantile.as_ref().ok().map(|&t| tau_prime(t)),
        "big_c": params.as_ref().ok().and_then(|p| big_c_constant(p.q, p.theta_upper, p.theta_lower).ok()),
        "rho_log": rho_log.0,
        "rho": rho_log.0.as_f64().map(f64::exp),
        "rho_error": rho_log.1,
        "non_existence": non_existence,
        "non_existence_reason": reason,
        "nonexistence_c": t2c_v,
        "nonexistence_c_error": t2c_err,
        "nonexistence_max_r": t2_max_r,
        "coupon_threshold": coupon_threshold(n).ok(),
    }))
}

fn main() -> ExitCode {
    // Usage errors exit 1; clap's own code 2 is reserved for null results.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::FAILURE;
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
