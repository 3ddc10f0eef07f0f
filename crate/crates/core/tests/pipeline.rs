use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use rumorlab::estimation::{
    estimate_confusion, export_noise_matrix, read_records_file, InteractionRecord, ResponseBins, Smoothing,
};
use rumorlab::harness::{read_records_file as read_sweep, sweep, write_records_file, RunConfig, SimulatedSystem};
use rumorlab::models::write_trace_file;
use rumorlab::protocols::BayesObserver;
use rumorlab::{ModelKind, NoiseMatrix, Opinion};

/// δ(i, j) computed straight from likelihood rows.
fn delta_from_likelihoods(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let bins = rows[0].len();
    let column: Vec<f64> = (0..bins).map(|v| rows.iter().map(|r| r[v]).sum()).collect();
    (0..rows.len())
        .map(|i| {
            (0..rows.len())
                .map(|j| (0..bins).map(|v| rows[j][v] * rows[i][v] / column[v]).sum())
                .collect()
        })
        .collect()
}

#[test]
fn estimator_recovers_a_known_channel() {
    let truth = vec![
        vec![0.5, 0.3, 0.15, 0.05],
        vec![0.2, 0.4, 0.3, 0.1],
        vec![0.05, 0.15, 0.3, 0.5],
    ];
    // one representative response value inside each of the bins <1, 1-5, 5-8, >=8
    let values = [0.5, 3.0, 6.0, 10.0];
    let messages: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    let per_message = 33_334;
    let mut rng = StdRng::seed_from_u64(11);
    let mut records = Vec::new();
    for (j, row) in truth.iter().enumerate() {
        for _ in 0..per_message {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let v = row
                .iter()
                .position(|&p| {
                    acc += p;
                    u < acc
                })
                .unwrap_or(row.len() - 1);
            records.push(InteractionRecord {
                sent_message: messages[j].clone(),
                response_value: values[v],
            });
        }
    }
    assert!(records.len() >= 100_000);
    let est = estimate_confusion(&records, &messages, &ResponseBins::speed_preset(), Smoothing::DropEmpty).unwrap();
    let expected = delta_from_likelihoods(&truth);
    // every δ(i, j) is a weighted average of bin posteriors, so its error is at most a
    // few binomial standard errors of the per-message bin frequencies
    let tolerance = 4.0 * (0.25 / per_message as f64).sqrt() * 2.0;
    for i in 0..3 {
        for j in 0..3 {
            let err = (est.delta[i][j] - expected[i][j]).abs();
            assert!(err <= tolerance, "δ({i},{j}) = {} vs {} (tolerance {tolerance})", est.delta[i][j], expected[i][j]);
        }
    }
    for j in 0..3 {
        let column: f64 = (0..3).map(|i| est.delta[i][j]).sum();
        assert!((column - 1.0).abs() <= 1e-9);
    }
    let noise = export_noise_matrix(&est).unwrap();
    for row in noise.rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn noise_matrix_and_records_survive_files() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("records.csv");
    std::fs::write(&csv, "sent_message,response_value\na,0.5\na,2\nb,6\nb,9\n").unwrap();
    let records = read_records_file(&csv).unwrap();
    assert_eq!(records.len(), 4);
    let messages = vec!["a".to_string(), "b".to_string()];
    let est = estimate_confusion(&records, &messages, &ResponseBins::speed_preset(), Smoothing::DropEmpty).unwrap();
    assert_eq!(est.min_delta, 0.0);

    let noise = NoiseMatrix::five_level(0.2).unwrap();
    let path = dir.path().join("noise.json");
    noise.write_json(&path).unwrap();
    assert_eq!(NoiseMatrix::read_json(&path).unwrap(), noise);
}

#[test]
fn sweep_does_not_depend_on_thread_count() {
    let config = RunConfig::from_json(
        r#"{
            "seed": 5,
            "trials": 300,
            "grids": [{
                "protocol": "canonical-observer",
                "models": [{"kind": "sequential-pull"}, {"kind": "parallel-pull", "k": 3}],
                "n": [20, 40],
                "s": [1, 2],
                "delta": [0.15]
            }],
            "cells": [{"protocol": "source-wait", "model": {"kind": "parallel-pull", "k": 1}, "n": 30, "s": 1, "delta": 0.1}]
        }"#,
    )
    .unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sweep(&config))
    };
    let one = run(1);
    let three = run(3);
    assert_eq!(one, three);
    assert!(one.iter().all(|r| r.converged && r.respects_bound()));
    let seeds: std::collections::HashSet<u64> = one.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), one.len());

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    write_records_file(&one, &out).unwrap();
    assert_eq!(read_sweep(&out).unwrap(), one);
}

#[test]
fn trace_file_lists_every_observation() {
    let system = SimulatedSystem::new(
        BayesObserver::new(12, 1, 0.2).unwrap(),
        NoiseMatrix::binary_symmetric(0.2).unwrap(),
        ModelKind::pull(2),
        12,
        1,
    )
    .unwrap();
    let (mut pop, _) = system.population(3, Opinion::One, true).unwrap();
    for _ in 0..5 {
        pop.advance(system.model).unwrap();
    }
    assert_eq!(pop.trace().len(), 5 * 12 * 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    write_trace_file(pop.trace(), &rumorlab::Alphabet::binary(), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 * 12 * 2);
    assert!(text.starts_with("time,observer,observed,displayed,received"));
}
