use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use batchpomdp::dataset::{sample_dataset_seeded, SamplingPolicy};
use batchpomdp::evaluator::{rollout_value, validation_select, RolloutConfig};
use batchpomdp::harness::{
    init_thread_pool, run_bounds_report, run_discount_sweep, run_distribution_snapshot, run_sweep,
    ExperimentConfig, Sweep,
};
use batchpomdp::mdp::DEFAULT_TOL;
use batchpomdp::theory::{
    bias_bound, bisim_run, epsilon_sufficiency, overfitting_bound, verify_lemma_qmetric,
    BisimConfig,
};
use batchpomdp::{
    fixture, generator, seed, AugmentedMdp, Dataset, Error, GeneratorConfig, MappingSpec, Pomdp,
    Result, TabularPolicy, WindowMapping,
};

#[derive(Parser)]
#[command(name = "batchpomdp", version, about = "Batch RL on finite POMDPs")]
struct Cli {
    /// Worker threads (0 = runtime default).
    #[arg(long, global = true, env = "BATCHPOMDP_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random POMDP or write a fixture.
    GenPomdp {
        #[arg(long, default_value_t = 5)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 5)]
        obs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// One of the built-in fixtures instead of a random model.
        #[arg(long)]
        fixture: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a dataset under the uniform behaviour policy.
    Sample {
        #[arg(long)]
        pomdp: PathBuf,
        #[arg(long)]
        n_tr: usize,
        #[arg(long, default_value_t = 100)]
        n_l: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the augmented MDP of a mapping.
    Fit {
        #[arg(long)]
        pomdp: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mapping: String,
        #[arg(long, default_value_t = 0.95)]
        gamma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a fitted MDP and write the greedy policy.
    Solve {
        #[arg(long)]
        pomdp: PathBuf,
        #[arg(long)]
        mdp: PathBuf,
        /// Override the discount stored in the model.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo value of a policy in the POMDP.
    Eval {
        #[arg(long)]
        pomdp: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[command(flatten)]
        rollout: RolloutArgs,
    },
    /// Horizon-capped ε of a mapping.
    Epsilon {
        #[arg(long)]
        pomdp: PathBuf,
        #[arg(long)]
        mapping: String,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
        #[arg(long, default_value_t = 1e-12)]
        prune: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form bounds, or the bound-vs-measured report of a config.
    Bounds {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 2.0)]
        r_max: f64,
        #[arg(long, default_value_t = 0.95)]
        gamma: f64,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 5)]
        sigma_card: usize,
        #[arg(long, default_value_t = 2)]
        n_actions: usize,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bisimulation metric of a fitted MDP and the Q-metric check.
    Bisim {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        c_r: f64,
        #[arg(long, default_value_t = 0.9)]
        c_t: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// μ/σ sweep over POMDPs, mappings, discounts and dataset sizes.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
    },
    /// Model vs real values of policies fitted on independent datasets.
    Snapshot {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value_t = 0)]
        pomdp_index: usize,
        #[arg(long, default_value_t = 5)]
        n_tr: usize,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value = "reports/snapshot.json")]
        out: PathBuf,
    },
    /// Sweep over the discount grid at a single mapping.
    DiscountSweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value = "results_discount.csv")]
        out: PathBuf,
    },
    /// Choose a mapping and discount by validation in a held-out model.
    Select {
        #[arg(long)]
        pomdp: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated `descriptor@gamma` candidates.
        #[arg(long, default_value = "phi_h:1@0.95,phi_h:2@0.95,phi_h:3@0.95")]
        candidates: String,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[command(flatten)]
        rollout: RolloutArgs,
    },
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long, default_value_t = 1000)]
    rollouts: usize,
    #[arg(long, default_value_t = 100)]
    horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    discount_env: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RolloutArgs {
    fn config(&self) -> RolloutConfig {
        RolloutConfig {
            n_rollouts: self.rollouts,
            horizon: self.horizon,
            discount_env: self.discount_env,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment configuration; defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of POMDPs.
    #[arg(long)]
    n_pomdps: Option<usize>,
}

impl ExperimentArgs {
    fn load(&self, threads: Option<usize>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_path(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.n_pomdps {
            cfg.n_pomdps = n;
        }
        cfg.validate()?;
        init_thread_pool(threads.unwrap_or(cfg.threads));
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                so.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn load_pomdp(path: &Path) -> Result<Pomdp> {
    Pomdp::from_json(&fs::read_to_string(path)?)
}

fn mapping_for(pomdp: &Pomdp, descriptor: &str) -> Result<WindowMapping> {
    descriptor.parse::<MappingSpec>()?.build(
        pomdp.n_obs(),
        pomdp.n_actions(),
        pomdp.reward_bounds(),
    )
}

fn parse_candidates(s: &str) -> Result<Vec<(MappingSpec, f64)>> {
    s.split(',')
        .map(|c| {
            let (m, g) = c
                .trim()
                .split_once('@')
                .ok_or_else(|| Error::InvalidDescriptor(c.to_string()))?;
            let g: f64 = g
                .parse()
                .map_err(|_| Error::InvalidDescriptor(c.to_string()))?;
            Ok((m.parse()?, g))
        })
        .collect()
}

fn write_sweep(sweep: &Sweep, out: &Path) -> Result<()> {
    emit(Some(out), &sweep.to_csv()?)?;
    let errors = sweep.rows.iter().filter(|r| !r.error.is_empty()).count();
    eprintln!(
        "{} rows ({} with errors) -> {}; hash {}",
        sweep.rows.len(),
        errors,
        out.display(),
        sweep.determinism_hash()?
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    if !matches!(
        cli.command,
        Command::Sweep { .. }
            | Command::Snapshot { .. }
            | Command::DiscountSweep { .. }
            | Command::Bounds { .. }
    ) {
        init_thread_pool(threads.unwrap_or(0));
    }
    match cli.command {
        Command::GenPomdp {
            states,
            actions,
            obs,
            seed,
            fixture: name,
            out,
        } => {
            let p = match name {
                Some(n) => fixture(&n)?,
                None => generator::generate(&GeneratorConfig {
                    seed,
                    ..GeneratorConfig::sized(states, actions, obs)
                })?,
            };
            emit(out.as_deref(), &p.to_json())
        }
        Command::Sample {
            pomdp,
            n_tr,
            n_l,
            seed,
            out,
        } => {
            let p = load_pomdp(&pomdp)?;
            let mut ds =
                sample_dataset_seeded(&p, p.init(), &SamplingPolicy::Uniform, n_tr, n_l, seed)?;
            ds.meta.pomdp = Some(p.fingerprint());
            match out {
                Some(path) => ds.write_jsonl_path(path),
                None => ds.write_jsonl(std::io::stdout().lock()),
            }
        }
        Command::Fit {
            pomdp,
            data,
            mapping,
            gamma,
            out,
        } => {
            let p = load_pomdp(&pomdp)?;
            let m = mapping_for(&p, &mapping)?;
            let ds = Dataset::read_jsonl_path(data)?;
            emit(
                out.as_deref(),
                &AugmentedMdp::fit(&ds, &m, gamma)?.to_json(),
            )
        }
        Command::Solve {
            pomdp,
            mdp,
            gamma,
            tol,
            out,
        } => {
            let p = load_pomdp(&pomdp)?;
            let mut model = AugmentedMdp::from_json(&fs::read_to_string(mdp)?)?;
            if let Some(g) = gamma {
                model = model.with_gamma(g)?;
            }
            let m = mapping_for(&p, model.mapping())?;
            let sol = model.solve(tol)?;
            eprintln!(
                "converged in {} sweeps, initial value {:.6}",
                sol.residuals.len(),
                model.initial_value(&sol.v)
            );
            emit(out.as_deref(), &sol.policy.to_json(&m))
        }
        Command::Eval {
            pomdp,
            policy,
            rollout,
        } => {
            let p = load_pomdp(&pomdp)?;
            let text = fs::read_to_string(policy)?;
            let descriptor: serde_json::Value = serde_json::from_str(&text)?;
            let desc = descriptor["mapping"]
                .as_str()
                .ok_or_else(|| Error::Config("policy file has no mapping".into()))?;
            let m = mapping_for(&p, desc)?;
            let pol = TabularPolicy::from_json(&text, &m)?;
            let cfg = rollout.config();
            let (mean, se) = rollout_value(&p, p.init(), &m, &pol, &cfg, &mut seed::rng(cfg.seed))?;
            emit(
                None,
                &serde_json::json!({ "mean": mean, "standard_error": se }).to_string(),
            )
        }
        Command::Epsilon {
            pomdp,
            mapping,
            horizon,
            prune,
            out,
        } => {
            let p = load_pomdp(&pomdp)?;
            let m = mapping_for(&p, &mapping)?;
            let r =
                epsilon_sufficiency(&p, p.init(), &SamplingPolicy::Uniform, &m, horizon, prune)?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&r)?)
        }
        Command::Bounds {
            exp,
            epsilon,
            r_max,
            gamma,
            n,
            sigma_card,
            n_actions,
            delta,
            out,
        } => {
            if epsilon.is_some() || n.is_some() {
                let mut v = serde_json::Map::new();
                if let Some(e) = epsilon {
                    v.insert("bias_bound".into(), bias_bound(e, r_max, gamma)?.into());
                }
                if let Some(n) = n {
                    let b = overfitting_bound(n, r_max, gamma, sigma_card, n_actions, delta)?;
                    v.insert("overfitting_bound".into(), b.into());
                }
                return emit(out.as_deref(), &serde_json::Value::Object(v).to_string());
            }
            let cfg = exp.load(threads)?;
            let r = run_bounds_report(&cfg)?;
            let out = out.unwrap_or_else(|| PathBuf::from("reports/bounds.json"));
            eprintln!(
                "bias violations {} / {}, overfitting violations {} / {}",
                r.bias.violations,
                r.bias.instances,
                r.overfitting.violations,
                r.overfitting.instances
            );
            emit(Some(&out), &r.to_json())
        }
        Command::Bisim {
            mdp,
            c_r,
            c_t,
            tol,
            out,
        } => {
            let model = AugmentedMdp::from_json(&fs::read_to_string(mdp)?)?;
            let cfg = BisimConfig {
                c_r,
                c_t,
                tol,
                ..BisimConfig::default()
            };
            let run = bisim_run(&model, &cfg)?;
            let check = if c_t >= model.gamma() {
                Some(verify_lemma_qmetric(&model, &cfg)?)
            } else {
                None
            };
            let v = serde_json::json!({
                "config": cfg,
                "iterations": run.residuals.len(),
                "max_contraction_ratio": run.max_contraction_ratio(1e-12),
                "monotone": run.monotone,
                "reward_scale": run.reward_scale,
                "metric": run.metric,
                "qmetric_check": check,
            });
            emit(out.as_deref(), &serde_json::to_string_pretty(&v)?)
        }
        Command::Sweep { exp, out } => write_sweep(&run_sweep(&exp.load(threads)?)?, &out),
        Command::DiscountSweep { exp, out } => {
            write_sweep(&run_discount_sweep(&exp.load(threads)?)?, &out)
        }
        Command::Snapshot {
            exp,
            pomdp_index,
            n_tr,
            k,
            out,
        } => {
            let cfg = exp.load(threads)?;
            let s = run_distribution_snapshot(&cfg, pomdp_index, n_tr, k)?;
            emit(Some(&out), &s.to_json())
        }
        Command::Select {
            pomdp,
            data,
            candidates,
            train_fraction,
            rollout,
        } => {
            let p = load_pomdp(&pomdp)?;
            let ds = Dataset::read_jsonl_path(data)?;
            let cands = parse_candidates(&candidates)?;
            let cfg = rollout.config();
            let sel = validation_select(
                &ds,
                p.n_obs(),
                p.n_actions(),
                &cands,
                train_fraction,
                &cfg,
                &mut seed::rng(cfg.seed),
            )?;
            emit(None, &serde_json::to_string_pretty(&sel)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
