use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use rumorlab::acdt::{
    build_exact_instance, empirical_sample_complexity, lower_bound_samples, theorem_bound_rounds,
    verify_bounded_family, BoundModel, CanonicalInstance, ErrorMode, SearchOptions, EXACT_BUDGET,
};
use rumorlab::estimation::{
    estimate_confusion, export_noise_matrix, messages_from_records, read_records, read_records_file,
    ResponseBins, Smoothing, SYNTHETIC_ANT_CSV,
};
use rumorlab::harness::{
    separation_experiment, sweep, write_records_file, ConvergenceOptions, ProtocolKind, RunConfig,
    SimulatedSystem, SystemSpec,
};
use rumorlab::infotheory::{
    kl_divergence, l1_floor_bound_check, neyman_pearson_error, total_variation, FiniteDistribution,
};
use rumorlab::models::write_trace_file;
use rumorlab::protocols::{
    BayesObserver, EchoProtocol, FixedDisplay, Protocol, PushTwoStage, SourceWait, StructuredNoise,
};
use rumorlab::random::derive_seed;
use rumorlab::reductions::{
    parallel_convergence_ks, parallel_sample_chi_square, run_simulated_rounds, sequential_coupling_check,
    sequential_pair_chi_square, simulate_parallel_k_in_broadcast,
};
use rumorlab::{
    charge_configuration, epsilon_bound, Alphabet, AgentId, ModelKind, NeutralConfiguration, NoiseMatrix,
    Opinion, Population, PopulationOptions, SharedRandomness, SourceStateSpec,
};

#[derive(Parser)]
#[command(name = "rumorlab", version, about = "Rumor spreading under uniform communication noise")]
struct Cli {
    /// Master seed; every output echoes it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for parallel trials (defaults to the number of CPUs).
    #[arg(long, global = true, env = "RUMORLAB_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one execution of a protocol and report the final opinions.
    Simulate {
        /// JSON file with protocol, model, n, s, delta, time and optionally seed and eta.
        #[arg(long)]
        config: PathBuf,
        /// Write the observation trace to this CSV file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Measure convergence times over a parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lower bounds on samples or on convergence time.
    Bound {
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        /// Per-sample gap; when given, only the sample bound for (ε, δ) is reported.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        s: usize,
        /// sequential-pull, broadcast-pull or parallel-pull:K.
        #[arg(long, default_value = "parallel-pull:1", value_parser = parse_model)]
        model: ModelKind,
        /// Sources can be told apart from other agents.
        #[arg(long)]
        reliable: bool,
    },
    /// Build the exact observation process of a protocol and certify its (ε, δ) parameters.
    AcdtVerify {
        #[arg(long, value_enum, default_value_t = InstanceProtocol::Fixed)]
        protocol: InstanceProtocol,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        s: usize,
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        #[arg(long, default_value_t = 6)]
        horizon: usize,
        /// Claimed ε; defaults to 2s(1 − 2δ)/n.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 1)]
        observer: u32,
    },
    /// Smallest number of samples the optimal test needs on the canonical instance.
    AcdtComplexity {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        s: usize,
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        #[arg(long, value_enum, default_value_t = Mode::Auto)]
        mode: Mode,
        #[arg(long, default_value_t = 2000)]
        trials: u64,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        target: f64,
        #[arg(long, default_value_t = 1 << 24)]
        max_horizon: usize,
    },
    /// Check the model reductions: coupled traces, sample frequencies, convergence times.
    ReduceCheck {
        #[arg(long, value_enum, default_value_t = ReductionProtocol::Structured)]
        protocol: ReductionProtocol,
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        s: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        /// Steps for the coupled sequential comparison and the pair-frequency test.
        #[arg(long, default_value_t = 20_000)]
        steps: u64,
        /// Trials per side for the convergence-time comparison.
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 500)]
        rounds: u64,
    },
    /// Estimate a confusion matrix from sent messages and binned responses.
    EstimateNoise {
        /// Comma-separated bin edges.
        #[arg(long, default_value = "1,5,8")]
        bins: String,
        /// CSV with header sent_message,response_value; the bundled synthetic data when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Additive smoothing instead of dropping bins that no message reached.
        #[arg(long)]
        pseudo_count: Option<f64>,
        /// Also write the exported noise matrix as JSON.
        #[arg(long)]
        noise_out: Option<PathBuf>,
    },
    /// Two-stage PUSH against the canonical PULL observer over growing populations.
    Separation {
        #[arg(long, default_value = "100,400,1600", value_delimiter = ',')]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        #[arg(long, default_value_t = 1)]
        s: usize,
        #[arg(long, default_value_t = 2000)]
        trials: u64,
        #[arg(long, default_value_t = 0.02)]
        margin: f64,
        #[arg(long, default_value_t = 10_000_000)]
        cap: u64,
    },
    /// Divergences and the optimal test between two distributions.
    Divergence {
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        q: Vec<f64>,
        /// Also check the ℓ1 bound for distributions floored at δ.
        #[arg(long)]
        delta: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum InstanceProtocol {
    /// Non-sources display the default symbol.
    Fixed,
    /// Agents display the last symbol they received.
    Echo,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionProtocol {
    Fixed,
    Echo,
    Structured,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    MonteCarlo,
    Auto,
}

fn parse_model(text: &str) -> std::result::Result<ModelKind, String> {
    let (name, k) = match text.split_once(':') {
        Some((name, k)) => (name, Some(k.parse::<usize>().map_err(|e| format!("bad k in {text:?}: {e}"))?)),
        None => (text, None),
    };
    match (name, k) {
        ("sequential-pull", None) => Ok(ModelKind::SequentialPull),
        ("broadcast-pull", None) => Ok(ModelKind::BroadcastPull),
        ("parallel-push", None) => Ok(ModelKind::ParallelPush),
        ("parallel-pull", k) => Ok(ModelKind::pull(k.unwrap_or(1))),
        ("parallel-pull-wor", k) => Ok(ModelKind::ParallelPull {
            k: k.unwrap_or(1),
            without_replacement: true,
        }),
        _ => Err(format!(
            "unknown model {text:?}; expected sequential-pull, broadcast-pull, parallel-pull:K, parallel-pull-wor:K or parallel-push"
        )),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let output = run(cli.command, cli.seed)?;
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{}", serde_json::to_string_pretty(&output)?) {
        // a closed pipe (e.g. piping into `head`) is not an error
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn run(command: Command, seed: u64) -> Result<Value> {
    match command {
        Command::Simulate { config, trace } => simulate(&config, trace.as_deref(), seed),
        Command::Sweep { config, out } => {
            let cfg = RunConfig::read(&config).with_context(|| format!("reading {}", config.display()))?;
            let records = sweep(&cfg);
            write_records_file(&records, &out)?;
            Ok(json!({
                "seed": cfg.seed,
                "cells": records.len(),
                "converged": records.iter().filter(|r| r.converged).count(),
                "failed": records.iter().filter(|r| r.error.is_some()).count(),
                "below_bound": records.iter().filter(|r| !r.respects_bound()).count(),
                "out": out,
            }))
        }
        Command::Bound {
            delta,
            epsilon,
            n,
            s,
            model,
            reliable,
        } => {
            if let Some(epsilon) = epsilon {
                let bound = lower_bound_samples(epsilon, delta)?;
                return Ok(json!({ "seed": seed, "samples": bound }));
            }
            let bound = theorem_bound_rounds(BoundModel::from_model(model, reliable)?, n, s, delta)?;
            Ok(json!({ "seed": seed, "bound": bound }))
        }
        Command::AcdtVerify {
            protocol,
            n,
            s,
            delta,
            horizon,
            epsilon,
            observer,
        } => {
            let noise = NoiseMatrix::binary_symmetric(delta)?;
            let spec = SourceStateSpec::DisplayOpinion;
            let instance = match protocol {
                InstanceProtocol::Fixed => {
                    build_exact_instance(&FixedDisplay::binary_zero(), &noise, n, s, AgentId(observer), horizon, &spec, seed)?
                }
                InstanceProtocol::Echo => build_exact_instance(
                    &EchoProtocol::new(Alphabet::binary()),
                    &noise,
                    n,
                    s,
                    AgentId(observer),
                    horizon,
                    &spec,
                    seed,
                )?,
            };
            let epsilon = epsilon.unwrap_or_else(|| epsilon_bound(n, s, delta));
            let certificate = verify_bounded_family(&instance, epsilon, delta, horizon, EXACT_BUDGET);
            Ok(json!({
                "seed": seed,
                "histories": instance.len(),
                "certificate": certificate,
            }))
        }
        Command::AcdtComplexity {
            n,
            s,
            delta,
            mode,
            trials,
            target,
            max_horizon,
        } => {
            let instance = CanonicalInstance::new(n, s, delta)?;
            let mode = match mode {
                Mode::Exact => ErrorMode::Exact,
                Mode::MonteCarlo => ErrorMode::MonteCarlo { trials, seed },
                Mode::Auto => ErrorMode::Auto { trials, seed },
            };
            let options = SearchOptions {
                target,
                mode,
                max_horizon,
            };
            let result = empirical_sample_complexity(&instance, options)?;
            let bound = match lower_bound_samples(instance.epsilon(), delta) {
                Ok(b) => json!(b),
                Err(e) => json!({ "unavailable": e.to_string() }),
            };
            Ok(json!({
                "seed": seed,
                "epsilon": instance.epsilon(),
                "samples": result.horizon,
                "exhausted": result.exhausted,
                "report": result.report,
                "evaluations": result.evaluations.len(),
                "bound": bound,
            }))
        }
        Command::ReduceCheck {
            protocol,
            n,
            s,
            k,
            delta,
            steps,
            trials,
            rounds,
        } => {
            let checks = ReduceParams {
                n,
                s,
                k,
                steps,
                trials,
                rounds,
                seed,
            };
            match protocol {
                ReductionProtocol::Fixed => {
                    reduce_check(&FixedDisplay::binary_zero(), &NoiseMatrix::binary_symmetric(delta)?, checks)
                }
                ReductionProtocol::Echo => reduce_check(
                    &EchoProtocol::new(Alphabet::binary()),
                    &NoiseMatrix::binary_symmetric(delta)?,
                    checks,
                ),
                ReductionProtocol::Structured => {
                    reduce_check(&StructuredNoise::five_level(), &NoiseMatrix::five_level(delta)?, checks)
                }
            }
        }
        Command::EstimateNoise {
            bins,
            input,
            pseudo_count,
            noise_out,
        } => {
            let bins = ResponseBins::parse(&bins)?;
            let records = match &input {
                Some(path) => read_records_file(path).with_context(|| format!("reading {}", path.display()))?,
                None => read_records(SYNTHETIC_ANT_CSV.as_bytes())?,
            };
            let smoothing = match pseudo_count {
                Some(pseudo_count) => Smoothing::Additive { pseudo_count },
                None => Smoothing::DropEmpty,
            };
            let estimate = estimate_confusion(&records, &messages_from_records(&records), &bins, smoothing)?;
            let noise = export_noise_matrix(&estimate)?;
            if let Some(path) = &noise_out {
                noise.write_json(path)?;
            }
            Ok(json!({
                "seed": seed,
                "input": input.map_or_else(|| "synthetic".to_string(), |p| p.display().to_string()),
                "delta": estimate.min_delta,
                "estimate": estimate,
                "noise_matrix": noise.to_json(),
            }))
        }
        Command::Separation {
            ns,
            delta,
            s,
            trials,
            margin,
            cap,
        } => {
            let options = ConvergenceOptions {
                trials,
                margin,
                cap,
                seed,
            };
            let report = separation_experiment(&ns, delta, s, options)?;
            Ok(json!({ "seed": seed, "report": report }))
        }
        Command::Divergence { p, q, delta } => {
            let p = FiniteDistribution::new(p)?;
            let q = FiniteDistribution::new(q)?;
            let kl = |a: &FiniteDistribution, b: &FiniteDistribution| match kl_divergence(a, b) {
                Ok(v) => json!(v),
                Err(e) => json!({ "undefined": e.to_string() }),
            };
            let tv = total_variation(&p, &q)?;
            let floor = delta.map(|d| l1_floor_bound_check(&p, &q, d)).transpose()?;
            Ok(json!({
                "seed": seed,
                "kl_bits": kl(&p, &q),
                "kl_bits_reverse": kl(&q, &p),
                "total_variation": tv,
                "l1": 2.0 * tv,
                "neyman_pearson": neyman_pearson_error(&p, &q)?,
                "floor_bound": floor,
            }))
        }
    }
}

#[derive(Deserialize)]
struct SimulateConfig {
    #[serde(flatten)]
    system: SystemSpec,
    /// Steps or rounds to run.
    time: u64,
    seed: Option<u64>,
    /// Correct opinion; drawn from the seed when absent.
    eta: Option<u8>,
}

fn simulate(path: &Path, trace: Option<&Path>, default_seed: u64) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: SimulateConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let spec = &cfg.system;
    let seed = cfg.seed.unwrap_or(default_seed);
    let eta = match cfg.eta {
        Some(0) => Opinion::Zero,
        Some(1) => Opinion::One,
        Some(other) => bail!("eta must be 0 or 1, got {other}"),
        None => Opinion::from_bit(SharedRandomness::new(derive_seed(seed, &[u64::MAX])).coin(0, 0, 0)),
    };
    let binary = || NoiseMatrix::binary_symmetric(spec.delta);
    let (n, s, model, weight) = (spec.n, spec.s, spec.model, spec.source_weight.max(1));
    match spec.protocol {
        ProtocolKind::CanonicalObserver | ProtocolKind::Bayes => {
            let system = SimulatedSystem::new(BayesObserver::new(n, s, spec.delta)?, binary()?, model, n, s)?;
            run_simulation(system.with_source_weight(weight), &cfg, seed, eta, trace)
        }
        ProtocolKind::Structured => {
            let system = SimulatedSystem::new(StructuredNoise::five_level(), NoiseMatrix::five_level(spec.delta)?, model, n, s)?;
            run_simulation(system.with_source_weight(weight), &cfg, seed, eta, trace)
        }
        ProtocolKind::SourceWait => {
            let system = SimulatedSystem::new(SourceWait::new(Alphabet::binary()), binary()?, model, n, s)?
                .with_reliable_sources(true);
            run_simulation(system.with_source_weight(weight), &cfg, seed, eta, trace)
        }
        ProtocolKind::PushTwoStage => {
            let system = SimulatedSystem::new(PushTwoStage::for_population(n), binary()?, model, n, s)?;
            run_simulation(system.with_source_weight(weight), &cfg, seed, eta, trace)
        }
    }
}

fn run_simulation<P: Protocol>(
    system: SimulatedSystem<P>,
    cfg: &SimulateConfig,
    seed: u64,
    eta: Opinion,
    trace: Option<&Path>,
) -> Result<Value> {
    let (mut pop, designated) = system.population(seed, eta, trace.is_some())?;
    for _ in 0..cfg.time {
        pop.advance(system.model)?;
    }
    let non_sources: Vec<AgentId> = (0..pop.n())
        .map(AgentId::from_index)
        .filter(|&id| !pop.is_source(id))
        .collect();
    let correct = non_sources.iter().filter(|&&id| pop.guess(id) == eta).count();
    if let Some(path) = trace {
        write_trace_file(pop.trace(), system.protocol.alphabet(), path)?;
    }
    Ok(json!({
        "seed": seed,
        "protocol": cfg.system.protocol.label(),
        "model": system.model.label(),
        "n": cfg.system.n,
        "s": cfg.system.s,
        "delta": cfg.system.delta,
        "time": pop.time(),
        "unit": system.model.time_unit(),
        "correct_opinion": eta.index(),
        "designated_agent": designated.0,
        "designated_guess": pop.guess(designated).index(),
        "correct_fraction": correct as f64 / non_sources.len().max(1) as f64,
        "trace": trace,
        "trace_events": trace.map(|_| pop.trace().len()),
    }))
}

#[derive(Clone, Copy)]
struct ReduceParams {
    n: usize,
    s: usize,
    k: usize,
    steps: u64,
    trials: usize,
    rounds: u64,
    seed: u64,
}

fn reduce_check<P: Protocol>(protocol: &P, noise: &NoiseMatrix, p: ReduceParams) -> Result<Value> {
    let neutral = NeutralConfiguration::uniform(p.n)?;
    let charging = SharedRandomness::new(derive_seed(p.seed, &[0]));
    let config = charge_configuration(&neutral, p.s, &SourceStateSpec::DisplayOpinion, 1, &charging)?;
    let coupling = sequential_coupling_check(protocol, noise, &config, derive_seed(p.seed, &[1]), p.steps)?;
    let pairs = sequential_pair_chi_square(protocol, noise, &config, p.steps, derive_seed(p.seed, &[2]))?;
    let samples = parallel_sample_chi_square(protocol, noise, &config, p.k, p.rounds, derive_seed(p.seed, &[3]))?;
    let convergence =
        parallel_convergence_ks(protocol, noise, p.n, p.s, p.k, p.trials, p.rounds, derive_seed(p.seed, &[4]))?;
    let wrapper = simulate_parallel_k_in_broadcast(protocol, p.n, p.k)?;
    let mut pop = Population::new(
        &wrapper,
        noise,
        &config,
        SharedRandomness::new(derive_seed(p.seed, &[5])),
        PopulationOptions::default(),
    )?;
    let overhead_rounds = 10;
    let used = run_simulated_rounds(&mut pop, &wrapper, overhead_rounds)?;
    Ok(json!({
        "seed": p.seed,
        "protocol": protocol.name(),
        "n": p.n,
        "s": p.s,
        "k": p.k,
        "sequential_coupling": coupling,
        "sequential_pair_chi_square": pairs,
        "parallel_sample_chi_square": samples,
        "parallel_convergence": convergence,
        "overhead": {
            "rounds": overhead_rounds,
            "broadcast_steps": used,
            "steps_per_round": wrapper.steps_per_round(),
            "exact": used == overhead_rounds * (p.k * p.n) as u64,
        },
    }))
}
