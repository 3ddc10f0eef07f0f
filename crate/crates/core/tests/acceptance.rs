//! Acceptance checks. Each test prints one `criterion N ...: PASS|FAIL` line to stderr
//! and then asserts the same outcome. The checks share one lock so that their runtime
//! limits are measured without competing for the CPU.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use rumorlab::acdt::{
    build_exact_instance, empirical_sample_complexity, lower_bound_samples, verify_bounded_family,
    CanonicalInstance, CertificateMode, ErrorMode, SearchOptions, EXACT_BUDGET,
};
use rumorlab::estimation::{
    estimate_confusion, export_noise_matrix, messages_from_records, read_records, InteractionRecord,
    ResponseBins, Smoothing, SYNTHETIC_ANT_CSV,
};
use rumorlab::harness::stats::{log_fit, log_log_fit};
use rumorlab::harness::{
    chernoff_source_observers_check, convergence_time, separation_experiment, ConvergenceOptions,
    ProtocolKind, SystemSpec,
};
use rumorlab::infotheory::{
    chain_rule_kl, kl_divergence, l1_floor_bound_check, neyman_pearson_error, taylor_log_bound_check,
    total_variation, ConditionalProcess, FiniteDistribution,
};
use rumorlab::protocols::{EchoProtocol, FixedDisplay, StructuredNoise};
use rumorlab::reductions::{
    parallel_convergence_ks, run_simulated_rounds, sequential_coupling_check,
    simulate_parallel_k_in_broadcast,
};
use rumorlab::{
    charge_configuration, Alphabet, AgentId, ModelKind, NeutralConfiguration, NoiseMatrix, Population,
    PopulationOptions, SharedRandomness, SourceStateSpec,
};

static SERIAL: Mutex<()> = Mutex::new(());

/// Runs `check` alone, prints its verdict line and fails the test on FAIL or when it
/// exceeded `limit`.
fn criterion(number: u32, title: &str, limit: Duration, check: impl FnOnce() -> (bool, String)) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (ok, details) = check();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = ok && in_time;
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "criterion {number} {title}: {verdict} ({details}; {:.2}s of {}s)",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    drop(err);
    assert!(ok, "criterion {number} failed: {details}");
    assert!(in_time, "criterion {number} took {elapsed:?}, limit {limit:?}");
}

fn dist(p: Vec<f64>) -> FiniteDistribution {
    FiniteDistribution::new(p).unwrap()
}

fn random_law(rng: &mut StdRng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

#[test]
fn criterion_01_closed_form_constants() {
    criterion(1, "closed-form constants", Duration::from_secs(1), || {
        let mut points = 0;
        let mut failures = Vec::new();
        let mut min_ratio = f64::INFINITY;
        let mut max_w = 0.0f64;
        for i in 0..10 {
            let delta = 0.05 + 0.05 * i as f64;
            for j in 0..10 {
                // ε from δ/1000 up to just below δ/10
                let epsilon = delta * (0.001 + 0.0098 * j as f64);
                points += 1;
                match lower_bound_samples(epsilon, delta) {
                    Ok(b) => {
                        let floor = 0.14 * delta / (epsilon * epsilon);
                        max_w = max_w.max(b.w_coefficient);
                        min_ratio = min_ratio.min(b.general / floor);
                        if b.w_coefficient > 0.79 || b.general < floor || b.simplified.is_none() {
                            failures.push((epsilon, delta));
                        }
                    }
                    Err(_) => failures.push((epsilon, delta)),
                }
            }
        }
        (
            failures.is_empty() && points == 100,
            format!("{points} grid points, max w = {max_w:.4}, min bound/(0.14 δ/ε²) = {min_ratio:.4}, failures {failures:?}"),
        )
    });
}

/// Binary process whose probability of a 1 at each node of the history tree is a
/// parameter; node `2^L − 1 + value(history)` for histories of length `L`.
struct TreeProcess {
    params: [Vec<f64>; 2],
}

impl ConditionalProcess for TreeProcess {
    fn alphabet_size(&self) -> usize {
        2
    }

    fn law(&self, eta: usize, history: &[u16]) -> Vec<f64> {
        let value = history.iter().fold(0usize, |acc, &x| acc * 2 + x as usize);
        let p = self.params[eta][(1 << history.len()) - 1 + value];
        vec![1.0 - p, p]
    }
}

#[test]
fn criterion_02_information_theory_suite() {
    criterion(2, "information-theory suite", Duration::from_secs(30), || {
        let mut rng = StdRng::seed_from_u64(2);
        let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();

        let mut pinsker_violations = 0;
        let pinsker_cases = 10_000;
        for _ in 0..pinsker_cases {
            let k = rng.random_range(2..=8);
            let p = dist(random_law(&mut rng, k));
            let q = dist(random_law(&mut rng, k));
            let tv = total_variation(&p, &q).unwrap();
            let kl_nats = kl_divergence(&p, &q).unwrap() * std::f64::consts::LN_2;
            if tv > (kl_nats / 2.0).sqrt() + 1e-12 {
                pinsker_violations += 1;
            }
        }

        let chain_gap = |params: [Vec<f64>; 2], horizon: usize| {
            let r = chain_rule_kl(&TreeProcess { params }, horizon).unwrap();
            (r.joint - r.chain_sum).abs()
        };
        let mut chain_cases = 0u64;
        let mut chain_worst = 0.0f64;
        // every two-step process on the grid: three tree nodes per type
        for code in 0..9usize.pow(6) {
            let digit = |d: u32| grid[code / 9usize.pow(d) % 9];
            chain_worst = chain_worst.max(chain_gap([vec![digit(0), digit(1), digit(2)], vec![digit(3), digit(4), digit(5)]], 2));
            chain_cases += 1;
        }
        let exhaustive_two = chain_cases;
        // three-step processes: seven nodes per type, drawn from the grid
        for _ in 0..20_000 {
            let mut pick = || (0..7).map(|_| grid[rng.random_range(0..9)]).collect::<Vec<f64>>();
            let params = [pick(), pick()];
            chain_worst = chain_worst.max(chain_gap(params, 3));
            chain_cases += 1;
        }
        let chain_ok = chain_worst <= 1e-9;

        let mut tight_worst = 0.0f64;
        let mut floor_violations = 0;
        for i in 0..10_000 {
            let delta = 0.5 * (i as f64 + 0.5) / 10_000.0;
            let p = dist(vec![delta, 1.0 - delta]);
            let q = dist(vec![1.0 - delta, delta]);
            let c = l1_floor_bound_check(&p, &q, delta).unwrap();
            tight_worst = tight_worst.max(c.slack.abs());
            if !c.holds || !c.precondition_met {
                floor_violations += 1;
            }
        }

        let mut taylor_violations = 0;
        let mut taylor_cases = 0;
        for i in 1..=100 {
            let a = i as f64 / 101.0;
            for j in 0..=100 {
                let x = (-a + 2.0 * a * j as f64 / 100.0).clamp(-a, a);
                taylor_cases += 1;
                if !taylor_log_bound_check(x, a).unwrap().holds {
                    taylor_violations += 1;
                }
            }
        }

        let ok = pinsker_violations == 0
            && chain_ok
            && exhaustive_two == 531_441
            && tight_worst <= 1e-9
            && floor_violations == 0
            && taylor_violations == 0
            && taylor_cases >= 10_000;
        (
            ok,
            format!(
                "Pinsker {pinsker_violations}/{pinsker_cases} violations; chain rule {chain_cases} processes \
                 ({exhaustive_two} exhaustive two-step), max gap {chain_worst:.1e}; floor bound slack at \
                 the extreme pair {tight_worst:.1e} over 10000 δ, {floor_violations} violations; Taylor \
                 {taylor_violations}/{taylor_cases} violations"
            ),
        )
    });
}

#[test]
fn criterion_03_neyman_pearson_optimality() {
    criterion(3, "Neyman-Pearson optimality", Duration::from_secs(10), || {
        let mut rng = StdRng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let k = rng.random_range(1..=8);
            let p = dist(random_law(&mut rng, k));
            let q = dist(random_law(&mut rng, k));
            let np = neyman_pearson_error(&p, &q).unwrap();
            let exhaustive = np.exhaustive_min.unwrap();
            worst = worst
                .max((np.test_error - exhaustive).abs())
                .max((np.min_error - exhaustive).abs());
        }
        (worst <= 1e-12, format!("1000 instances, largest gap to exhaustive search {worst:.1e}"))
    });
}

#[test]
fn criterion_04_bounded_family_membership() {
    criterion(4, "bounded-family membership", Duration::from_secs(60), || {
        let noise = NoiseMatrix::binary_symmetric(0.2).unwrap();
        let inst = build_exact_instance(
            &FixedDisplay::binary_zero(),
            &noise,
            10,
            1,
            AgentId(1),
            6,
            &SourceStateSpec::DisplayOpinion,
            4,
        )
        .unwrap();
        let cert = verify_bounded_family(&inst, 0.12, 0.2, 6, EXACT_BUDGET);
        let ok = cert.pass
            && cert.mode == CertificateMode::Exhaustive
            && (cert.epsilon_max - 0.12).abs() <= 1e-12
            && (cert.delta_observed - 0.2).abs() <= 1e-12
            && cert.histories_checked == 63;
        (
            ok,
            format!(
                "ε max {:.6}, δ observed {:.6}, {} histories ({:?})",
                cert.epsilon_max, cert.delta_observed, cert.histories_checked, cert.mode
            ),
        )
    });
}

#[test]
fn criterion_05_sample_complexity_scaling() {
    criterion(5, "sample-complexity scaling", Duration::from_secs(600), || {
        let ns = [32usize, 64, 128, 256, 512];
        let mut ok = true;
        let mut lines = Vec::new();
        for s in [1usize, 2] {
            for delta in [0.1, 0.2] {
                let mut times = Vec::new();
                for &n in &ns {
                    let inst = CanonicalInstance::new(n, s, delta).unwrap();
                    let options = SearchOptions {
                        mode: ErrorMode::Exact,
                        ..SearchOptions::default()
                    };
                    let found = empirical_sample_complexity(&inst, options).unwrap();
                    let t = found.horizon.expect("target error reached") as f64;
                    // ε ≥ δ leaves the bound vacuous
                    let bound = lower_bound_samples(inst.epsilon(), delta).map_or(0.0, |b| b.general);
                    if t < bound {
                        ok = false;
                        lines.push(format!("n={n} s={s} δ={delta}: {t} below bound {bound:.1}"));
                    }
                    times.push(t);
                }
                let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
                let fit = log_log_fit(&xs, &times).unwrap();
                if (fit.slope - 2.0).abs() > 0.3 {
                    ok = false;
                }
                lines.push(format!("s={s} δ={delta}: T={times:?} slope {:.3}", fit.slope));
            }
        }
        (ok, lines.join("; "))
    });
}

#[test]
fn criterion_06_structured_noise_log_rounds() {
    criterion(6, "structured-noise logarithmic rounds", Duration::from_secs(300), || {
        let ns = [100usize, 1000, 10_000];
        let mut times = Vec::new();
        for (i, &n) in ns.iter().enumerate() {
            let spec = SystemSpec {
                protocol: ProtocolKind::Structured,
                model: ModelKind::pull(1),
                n,
                s: 1,
                delta: 0.2,
                source_weight: 1,
            };
            let opts = ConvergenceOptions {
                seed: 60 + i as u64,
                ..ConvergenceOptions::default()
            };
            let r = convergence_time(spec.build().unwrap().as_ref(), opts).unwrap();
            match r.time {
                Some(t) => times.push(t as f64),
                None => return (false, format!("n = {n} did not converge")),
            }
        }
        let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let fit = log_fit(&xs, &times).unwrap();
        let ratio = times[2] / times[0];
        (
            fit.r_squared >= 0.9 && ratio <= 3.0,
            format!("rounds {times:?}, a = {:.3}, R² = {:.4}, ratio {ratio:.3}", fit.slope, fit.r_squared),
        )
    });
}

#[test]
fn criterion_07_push_pull_separation() {
    criterion(7, "push/pull separation", Duration::from_secs(600), || {
        let opts = ConvergenceOptions {
            seed: 7,
            ..ConvergenceOptions::default()
        };
        let r = separation_experiment(&[100, 400, 1600], 0.2, 1, opts).unwrap();
        let ok = r.push_ratios.iter().all(|&x| x <= 1.5) && r.pull_ratios.iter().all(|&x| x >= 3.0);
        let times = |pts: &[rumorlab::harness::SeparationPoint]| pts.iter().map(|p| p.time).collect::<Vec<_>>();
        (
            ok,
            format!(
                "push rounds {:?} ratios {:.3?}; pull rounds {:?} ratios {:.3?}",
                times(&r.push),
                r.push_ratios,
                times(&r.pull),
                r.pull_ratios
            ),
        )
    });
}

#[test]
fn criterion_08_reduction_fidelity() {
    criterion(8, "reduction fidelity", Duration::from_secs(300), || {
        let neutral = NeutralConfiguration::uniform(12).unwrap();
        let config =
            charge_configuration(&neutral, 2, &SourceStateSpec::DisplayOpinion, 1, &SharedRandomness::new(8)).unwrap();
        let echo = EchoProtocol::new(Alphabet::binary());
        let coupling = sequential_coupling_check(&echo, &NoiseMatrix::binary_symmetric(0.2).unwrap(), &config, 81, 20_000).unwrap();

        let noise = NoiseMatrix::five_level(0.2).unwrap();
        let protocol = StructuredNoise::five_level();
        let (n, k) = (30, 2);
        let cmp = parallel_convergence_ks(&protocol, &noise, n, 1, k, 500, 500, 82).unwrap();

        let wrapper = simulate_parallel_k_in_broadcast(&protocol, n, k).unwrap();
        let neutral = NeutralConfiguration::uniform(n).unwrap();
        let config =
            charge_configuration(&neutral, 1, &SourceStateSpec::DisplayOpinion, 1, &SharedRandomness::new(83)).unwrap();
        let mut pop =
            Population::new(&wrapper, &noise, &config, SharedRandomness::new(84), PopulationOptions::default()).unwrap();
        let steps = run_simulated_rounds(&mut pop, &wrapper, 10).unwrap();
        let overhead_exact = wrapper.steps_per_round() == (k * n) as u64
            && cmp.steps_per_round == (k * n) as u64
            && steps == 10 * (k * n) as u64;

        let ok = coupling.identical && coupling.final_states_equal && cmp.ks.p_value > 0.01 && overhead_exact;
        (
            ok,
            format!(
                "coupled sequential traces identical over {} steps: {}; KS p = {:.3} (mean rounds {:.2} native, {:.2} simulated, 500 trials each); {} broadcast steps per round for k·n = {}",
                coupling.steps,
                coupling.identical,
                cmp.ks.p_value,
                cmp.native_mean,
                cmp.simulated_mean,
                wrapper.steps_per_round(),
                k * n
            ),
        )
    });
}

#[test]
fn criterion_09_reliable_source_baseline() {
    criterion(9, "reliable-source baseline", Duration::from_secs(120), || {
        let spec = SystemSpec {
            protocol: ProtocolKind::SourceWait,
            model: ModelKind::pull(1),
            n: 100,
            s: 1,
            delta: 0.0,
            source_weight: 1,
        };
        let opts = ConvergenceOptions {
            seed: 9,
            ..ConvergenceOptions::default()
        };
        let r = convergence_time(spec.build().unwrap().as_ref(), opts).unwrap();
        let target = 100.0 * 3f64.ln();
        let Some(t) = r.time else {
            return (false, "did not converge".into());
        };
        let within = (t as f64 - target).abs() <= 0.1 * target;
        let chernoff = chernoff_source_observers_check(100, 1, t, 2000, 91).unwrap();
        let dominated = chernoff.mean_ci.lower <= chernoff.binomial_mean;
        (
            within && dominated,
            format!(
                "{t} rounds against (n/s)·ln 3 = {target:.1}; E[|S(T)| − s] in [{:.2}, {:.2}] vs sT = {}",
                chernoff.mean_ci.lower, chernoff.mean_ci.upper, chernoff.binomial_mean
            ),
        )
    });
}

/// Direct transcription of the hand computation: posteriors from the two likelihood
/// rows, then `δ(i, j) = Σ_v p(v | j) p_i(v)`.
fn hand_delta(rows: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for v in 0..2 {
                let posterior = rows[i][v] / (rows[0][v] + rows[1][v]);
                acc += rows[j][v] * posterior;
            }
            out[i][j] = acc;
        }
    }
    out
}

fn repeated(message: &str, value: f64, count: usize) -> impl Iterator<Item = InteractionRecord> + '_ {
    std::iter::repeat_n(
        InteractionRecord {
            sent_message: message.to_string(),
            response_value: value,
        },
        count,
    )
}

#[test]
fn criterion_10_confusion_pipeline() {
    criterion(10, "confusion-estimation pipeline", Duration::from_secs(5), || {
        let messages: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let total: Vec<InteractionRecord> = messages
            .iter()
            .flat_map(|m| repeated(m, 0.5, 5).chain(repeated(m, 3.0, 2)).chain(repeated(m, 6.5, 1)).chain(repeated(m, 12.0, 2)))
            .collect();
        let est = estimate_confusion(&total, &messages, &ResponseBins::speed_preset(), Smoothing::default()).unwrap();
        let total_ok = est.delta.iter().flatten().all(|&d| d == 0.25) && est.min_delta == 0.25;

        let hand: Vec<InteractionRecord> = repeated("1", 0.5, 8)
            .chain(repeated("1", 2.0, 2))
            .chain(repeated("2", 0.5, 4))
            .chain(repeated("2", 2.0, 6))
            .collect();
        let est2 = estimate_confusion(
            &hand,
            &messages_from_records(&hand),
            &ResponseBins::new(vec![1.0]).unwrap(),
            Smoothing::default(),
        )
        .unwrap();
        let oracle = hand_delta(&[[0.8, 0.2], [0.4, 0.6]]);
        let oracle_min = oracle.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let cells_match = (0..2).all(|i| (0..2).all(|j| (est2.delta[i][j] - oracle[i][j]).abs() <= 1e-12));
        let exported = export_noise_matrix(&est2).unwrap();
        let hand_ok = cells_match
            && (est2.min_delta - 0.4167).abs() <= 1e-4
            && (oracle_min - 0.4167).abs() <= 1e-4
            && (exported.rows()[0][1] - 0.4167).abs() <= 1e-4;

        let ant = read_records(SYNTHETIC_ANT_CSV.as_bytes()).unwrap();
        let est3 = estimate_confusion(&ant, &messages_from_records(&ant), &ResponseBins::speed_preset(), Smoothing::default()).unwrap();
        let ant_ok = (est3.min_delta - 0.2).abs() <= 0.02;

        (
            total_ok && hand_ok && ant_ok,
            format!(
                "total confusion δ = {}; handcrafted δ = {:.6} (oracle {:.6}); synthetic ant δ = {:.4}",
                est.min_delta, est2.min_delta, oracle_min, est3.min_delta
            ),
        )
    });
}
