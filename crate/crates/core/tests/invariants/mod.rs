//! Invariant suites shared by the `properties` test target and the
//! acceptance runner.

use std::sync::Arc;

use neuroquant::channel::{stream_rng, ChannelModel, CodewordSource};
use neuroquant::codes::{parse_alist, SystematicEncoder, TannerGraph};
use neuroquant::decoder::DecoderConfig;
use neuroquant::eval::{measure_ber, EvalConfig, Receiver};
use neuroquant::quantizer::QuantizerParams;
use neuroquant::staircase::{soft_staircase, solid_staircase, LevelSet, StaircaseConfig};
use neuroquant::train::{anneal, batch_gradient, train, Optimizer, Pipeline, Reduction, TrainConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

pub type Suite = (&'static str, fn() -> Result<(), String>);

pub const SUITES: &[Suite] = &[
    ("staircase converges to the solid staircase", staircase_convergence),
    ("soft staircase is the posterior mean", staircase_mmse),
    ("alist round trip", alist_round_trip),
    ("encoded words have zero syndrome", encoder_syndrome),
    ("annealing schedule", annealing_schedule),
    ("training and evaluation are deterministic", determinism),
];

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn report<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

fn even_levels() -> impl Strategy<Value = usize> {
    (1usize..=8).prop_map(|h| 2 * h)
}

fn staircase_convergence() -> Result<(), String> {
    report(runner(200).run(&(even_levels(), -6.0f64..6.0), |(count, r)| {
        let levels = LevelSet::canonical(count).unwrap();
        let solid = solid_staircase(r, &levels);
        // distance from r to the nearest decision boundary
        let margin = levels
            .levels()
            .windows(2)
            .map(|w| (r - 0.5 * (w[0] + w[1])).abs())
            .fold(f64::INFINITY, f64::min);
        prop_assume!(margin > 0.05);
        let mut last = f64::INFINITY;
        for temperature in [0.1, 0.03, 0.01, 1e-3, 1e-4] {
            let soft = soft_staircase(r, &StaircaseConfig::new(levels.clone(), temperature));
            let err = (soft - solid).abs();
            prop_assert!(err <= last + 1e-15, "error grew at temperature {temperature}");
            last = err;
        }
        prop_assert!(last < 1e-9, "residual {last}");
        Ok(())
    }))
}

fn staircase_mmse() -> Result<(), String> {
    report(runner(200).run(&(even_levels(), -8.0f64..8.0, 1e-3f64..4.0), |(count, r, temperature)| {
        let levels = LevelSet::canonical(count).unwrap();
        // Bayes posterior mean of a uniform level under N(0, temperature) noise
        let logp: Vec<f64> = levels.levels().iter().map(|&s| -(r - s).powi(2) / (2.0 * temperature)).collect();
        let top = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logp.iter().map(|l| (l - top).exp()).collect();
        let mean = levels.levels().iter().zip(&w).map(|(s, w)| s * w).sum::<f64>() / w.iter().sum::<f64>();
        let soft = soft_staircase(r, &StaircaseConfig::new(levels.clone(), temperature));
        prop_assert!((soft - mean).abs() < 1e-12, "{soft} vs {mean}");
        prop_assert!(soft >= levels.min() && soft <= levels.max());
        Ok(())
    }))
}

fn random_graph(seed: u64, n: usize, m: usize, density: f64) -> TannerGraph {
    let mut rng = stream_rng(seed, 0);
    let rows: Vec<Vec<u8>> = (0..m)
        .map(|_| (0..n).map(|_| u8::from(rng.random::<f64>() < density)).collect())
        .collect();
    TannerGraph::from_dense(&rows).unwrap()
}

fn alist_round_trip() -> Result<(), String> {
    report(runner(100).run(&(any::<u64>(), 2usize..60, 1usize..30), |(seed, n, m)| {
        let g = random_graph(seed, n, m, 0.25);
        prop_assume!(g.check_degrees().iter().all(|&d| d > 0) && g.var_degrees().iter().all(|&d| d > 0));
        let text = g.to_alist();
        let parsed = parse_alist(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&parsed, &g);
        prop_assert_eq!(parsed.to_alist(), text);
        Ok(())
    }))
}

fn encoder_syndrome() -> Result<(), String> {
    report(runner(100).run(&(any::<u64>(), 3usize..80, 1usize..40), |(seed, n, m)| {
        let g = random_graph(seed, n, m.min(n - 1), 0.2);
        let enc = SystematicEncoder::new(&g);
        prop_assert_eq!(enc.k() + enc.rank(), n);
        let mut rng = stream_rng(seed, 1);
        for _ in 0..20 {
            let msg: Vec<u8> = (0..enc.k()).map(|_| rng.random_range(0..2u8)).collect();
            let c = enc.encode(&msg).unwrap();
            prop_assert!(g.syndrome(&c).unwrap().iter().all(|&s| s == 0));
            let recovered: Vec<u8> = enc.message_positions().iter().map(|&j| c[j]).collect();
            prop_assert_eq!(recovered, msg);
        }
        Ok(())
    }))
}

fn annealing_schedule() -> Result<(), String> {
    report(runner(200).run(&(-3.0f64..-0.05, 1e-6f64..0.5, 1usize..5000), |(eta, floor, t)| {
        let now = anneal(t, eta, floor);
        let next = anneal(t + 1, eta, floor);
        prop_assert!(next <= now);
        prop_assert!(now >= floor && now <= 1.0);
        prop_assert_eq!(anneal(1, eta, floor), 1.0);
        // the floor binds from t = floor^(1/eta) onwards
        let knee = floor.powf(1.0 / eta).ceil() as usize;
        if knee < usize::MAX / 2 {
            prop_assert_eq!(anneal(knee + 1, eta, floor), floor);
        }
        Ok(())
    }))
}

const HAMMING: &str = "7 3\n3 4\n1 2 1 2 2 1 3\n4 4 4\n1\n1 2\n2\n1 3\n2 3\n3\n1 2 3\n1 2 4 7\n2 3 5 7\n4 5 6 7\n";

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn determinism() -> Result<(), String> {
    let graph = Arc::new(parse_alist(HAMMING).unwrap());
    let encoder = Arc::new(SystematicEncoder::new(&graph));
    let channel = ChannelModel::bpsk_awgn(graph.clone(), 0.5, Some(CodewordSource::Random(encoder.clone()))).unwrap();
    let cfg = TrainConfig {
        batch_size: 16,
        steps: 15,
        cooling: -0.5,
        optimizer: Optimizer::adam(0.04),
        channel,
        decoder: DecoderConfig::with_iterations(5),
        temperature_floor: 1e-3,
        reduction: Reduction::Sum,
        seed: 11,
    };
    let init = QuantizerParams::init(8, 2, 4, 11).unwrap();
    let run = |threads: usize| pool(threads).install(|| train(&cfg, init.clone()).unwrap());
    let (a, ta) = run(1);
    let (b, tb) = run(3);
    if a != b || ta.deterministic_part() != tb.deterministic_part() {
        return Err("training differs across thread counts".into());
    }

    let batch = neuroquant::channel::sample_minibatch(&cfg.channel, 32, &mut stream_rng(5, 0)).unwrap();
    let pipe = Pipeline::QuantizeDecode(&graph, cfg.decoder);
    let g1 = pool(1).install(|| batch_gradient(&batch, &a, 0.2, pipe, Reduction::Sum).unwrap());
    let g2 = pool(4).install(|| batch_gradient(&batch, &a, 0.2, pipe, Reduction::Sum).unwrap());
    if g1 != g2 {
        return Err("batch gradient differs across thread counts".into());
    }

    let ec = EvalConfig {
        snr_db: vec![0.0, 2.0],
        min_frames: 300,
        max_frames: 300,
        iterations: 5,
        chunk: 64,
        ..EvalConfig::default()
    };
    let e1 = pool(1).install(|| measure_ber(&graph, &encoder, &Receiver::Neural(&a), &ec).unwrap());
    let e2 = pool(2).install(|| measure_ber(&graph, &encoder, &Receiver::Neural(&a), &ec).unwrap());
    if e1 != e2 {
        return Err("BER tallies differ across thread counts".into());
    }
    Ok(())
}
