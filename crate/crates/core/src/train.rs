//! Supervised training of the quantizer with an annealed temperature.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_minibatch, stream_rng, ChannelModel, Minibatch, TRAIN_STREAM};
use crate::codes::TannerGraph;
use crate::decoder::{decode_soft, DecoderConfig};
use crate::error::{Error, Result};
use crate::grad::{Real, Tape};
use crate::quantizer::QuantizerParams;
use crate::staircase::DEFAULT_EPSILON;

pub const DEFAULT_TEMPERATURE_FLOOR: f64 = 1e-3;

/// `max(t^cooling, floor)`.
pub fn anneal(t: usize, cooling: f64, floor: f64) -> f64 {
    (t as f64).powf(cooling).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd {
        rate: f64,
    },
    Adam {
        rate: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Optimizer {
    pub fn adam(rate: f64) -> Self {
        Optimizer::Adam {
            rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(rate: f64) -> Self {
        Optimizer::Sgd { rate }
    }

    pub fn validate(&self) -> Result<()> {
        let rate = match *self {
            Optimizer::Sgd { rate } => rate,
            Optimizer::Adam {
                rate,
                beta1,
                beta2,
                eps,
            } => {
                for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                    if !(0.0..1.0).contains(&b) {
                        return Err(Error::InvalidArgument(format!(
                            "{name} must lie in [0, 1), got {b}"
                        )));
                    }
                }
                if !(eps > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "Adam eps must be positive, got {eps}"
                    )));
                }
                rate
            }
        };
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive and finite, got {rate}"
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for Reduction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            _ => Err(format!("unknown reduction {s:?} (expected sum or mean)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub optimizer: Optimizer,
    first: Vec<f64>,
    second: Vec<f64>,
    pub step: usize,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, num_params: usize) -> Self {
        let moments = match optimizer {
            Optimizer::Sgd { .. } => 0,
            Optimizer::Adam { .. } => num_params,
        };
        OptimizerState {
            optimizer,
            first: vec![0.0; moments],
            second: vec![0.0; moments],
            step: 0,
        }
    }

    /// Applies one update in place. A non-finite gradient aborts without
    /// touching the parameters.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::LengthMismatch {
                expected: params.len(),
                actual: grads.len(),
            });
        }
        if let Some((index, &value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NanGradient {
                step: self.step + 1,
                index,
                value,
            });
        }
        self.step += 1;
        match self.optimizer {
            Optimizer::Sgd { rate } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= rate * g;
                }
            }
            Optimizer::Adam {
                rate,
                beta1,
                beta2,
                eps,
            } => {
                if self.first.len() != params.len() {
                    return Err(Error::LengthMismatch {
                        expected: self.first.len(),
                        actual: params.len(),
                    });
                }
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    params[i] -= rate * m / (v.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

/// What sits between the observation and the squared-error loss.
#[derive(Debug, Clone, Copy)]
pub enum Pipeline<'a> {
    /// Observation passed through unchanged.
    Transparent,
    /// Quantizer output compared directly with the source.
    QuantizeOnly,
    /// Quantizer output used as decoder LLRs; soft decoder output compared with the bits.
    QuantizeDecode(&'a TannerGraph, DecoderConfig),
}

fn squared_error<S: Real>(out: &[S], target: &[f64], zero: S) -> S {
    out.iter()
        .zip(target)
        .fold(zero, |acc, (&o, &x)| acc + o.offset(-x).square())
}

fn reduce(total: f64, k: usize, reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / k as f64,
    }
}

/// Untaped loss. A temperature at or below epsilon evaluates the frozen quantizer.
pub fn batch_loss(
    batch: &Minibatch,
    params: &QuantizerParams,
    temperature: f64,
    pipeline: Pipeline<'_>,
    reduction: Reduction,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty mini-batch".into()));
    }
    let mut total = 0.0;
    for (x, y) in batch.inputs.iter().zip(&batch.observations) {
        let out = match pipeline {
            Pipeline::Transparent => y.clone(),
            Pipeline::QuantizeOnly => params.quantize_word(y, temperature),
            Pipeline::QuantizeDecode(graph, cfg) => {
                decode_soft(graph, &params.quantize_word(y, temperature), &cfg)?
            }
        };
        total += squared_error(&out, x, 0.0);
    }
    Ok(reduce(total, batch.len(), reduction))
}

fn sample_gradient(
    tape: &Tape,
    x: &[f64],
    y: &[f64],
    params: &QuantizerParams,
    temperature: f64,
    pipeline: Pipeline<'_>,
) -> Result<(f64, Vec<f64>)> {
    let theta = params.on_tape(tape, temperature)?;
    let zero = tape.constant(0.0);
    let loss = match pipeline {
        Pipeline::Transparent => {
            let out: Vec<_> = y.iter().map(|&v| tape.constant(v)).collect();
            squared_error(&out, x, zero)
        }
        Pipeline::QuantizeOnly => squared_error(&theta.quantize_word(y), x, zero),
        Pipeline::QuantizeDecode(graph, cfg) => {
            let soft = decode_soft(graph, &theta.quantize_word(y), &cfg)?;
            squared_error(&soft, x, zero)
        }
    };
    let grads = tape.backward(loss);
    Ok((loss.value(), theta.gradient(&grads)))
}

/// Loss and gradient with respect to the flattened parameters.
///
/// Each sample is differentiated on its own tape; the per-sample results are
/// summed in sample order so the outcome does not depend on thread count.
pub fn batch_gradient(
    batch: &Minibatch,
    params: &QuantizerParams,
    temperature: f64,
    pipeline: Pipeline<'_>,
    reduction: Reduction,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty mini-batch".into()));
    }
    if temperature <= DEFAULT_EPSILON {
        return Err(Error::SolidTaping(temperature));
    }
    let per_sample: Vec<Result<(f64, Vec<f64>)>> = (0..batch.len())
        .into_par_iter()
        .map_init(Tape::new, |tape, i| {
            tape.clear();
            sample_gradient(
                tape,
                &batch.inputs[i],
                &batch.observations[i],
                params,
                temperature,
                pipeline,
            )
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.num_params()];
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let k = batch.len();
    let grad = grad.into_iter().map(|g| reduce(g, k, reduction)).collect();
    Ok((reduce(loss, k, reduction), grad))
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    /// Negative exponent of the temperature schedule.
    pub cooling: f64,
    pub optimizer: Optimizer,
    pub channel: ChannelModel,
    pub decoder: DecoderConfig,
    pub temperature_floor: f64,
    pub reduction: Reduction,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cooling < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cooling factor must be negative, got {}",
                self.cooling
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("mini-batch size must be >= 1".into()));
        }
        self.optimizer.validate()?;
        if !(self.temperature_floor > DEFAULT_EPSILON) {
            return Err(Error::InvalidArgument(format!(
                "temperature floor must exceed {DEFAULT_EPSILON}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub temperature: f64,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
}

impl TrainTrace {
    /// Records without the wall-clock column, for reproducibility checks.
    pub fn deterministic_part(&self) -> Vec<(usize, f64, f64)> {
        self.records
            .iter()
            .map(|r| (r.step, r.temperature, r.loss))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,sigma2,loss,seconds\n");
        for r in &self.records {
            writeln!(s, "{},{},{},{:.6}", r.step, r.temperature, r.loss, r.seconds).unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Runs `steps` rounds of sample, anneal, differentiate, update.
pub fn train(cfg: &TrainConfig, init: QuantizerParams) -> Result<(QuantizerParams, TrainTrace)> {
    train_with_progress(cfg, init, |_| {})
}

pub fn train_with_progress(
    cfg: &TrainConfig,
    init: QuantizerParams,
    mut progress: impl FnMut(&TrainRecord),
) -> Result<(QuantizerParams, TrainTrace)> {
    cfg.validate()?;
    let graph: Option<Arc<TannerGraph>> = match &cfg.channel {
        ChannelModel::GaussianSource { .. } => None,
        ChannelModel::BpskAwgn { graph, .. } => Some(graph.clone()),
    };
    let pipeline = match &graph {
        None => Pipeline::QuantizeOnly,
        Some(g) => Pipeline::QuantizeDecode(g, cfg.decoder),
    };
    let mut params = init;
    let mut flat = params.flatten();
    let mut opt = OptimizerState::new(cfg.optimizer, flat.len());
    let mut rng = stream_rng(cfg.seed, TRAIN_STREAM);
    let mut trace = TrainTrace::default();
    let start = Instant::now();
    for t in 1..=cfg.steps {
        let batch = sample_minibatch(&cfg.channel, cfg.batch_size, &mut rng)?;
        let temperature = anneal(t, cfg.cooling, cfg.temperature_floor);
        let (loss, grad) = batch_gradient(&batch, &params, temperature, pipeline, cfg.reduction)?;
        opt.apply(&mut flat, &grad)?;
        params.set_flat(&flat)?;
        let record = TrainRecord {
            step: t,
            temperature,
            loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        progress(&record);
        trace.records.push(record);
    }
    Ok((params, trace))
}
