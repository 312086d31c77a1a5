//! Sources and channels: the transparent Gaussian source and BPSK over AWGN.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::codes::{SystematicEncoder, TannerGraph};
use crate::error::{Error, Result};

/// Stream carrying the training mini-batches of a run.
pub const TRAIN_STREAM: u64 = 0;
/// Stream used for parameter initialization.
pub const INIT_STREAM: u64 = 1;
/// Evaluation frame `f` uses stream `EVAL_STREAM_BASE + f`.
pub const EVAL_STREAM_BASE: u64 = 1 << 32;

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Binary-to-bipolar map: 0 -> +1, 1 -> -1.
pub fn bipolar(bit: u8) -> Result<f64> {
    match bit {
        0 => Ok(1.0),
        1 => Ok(-1.0),
        b => Err(Error::InvalidArgument(format!("not a bit: {b}"))),
    }
}

/// `y = bipolar(x) + w`, `w ~ N(0, variance)` i.i.d.
pub fn transmit<R: Rng + ?Sized>(x: &[u8], variance: f64, rng: &mut R) -> Vec<f64> {
    let sd = variance.sqrt();
    x.iter()
        .map(|&b| {
            let z: f64 = rng.sample(StandardNormal);
            let s = if b & 1 == 0 { 1.0 } else { -1.0 };
            s + sd * z
        })
        .collect()
}

/// Channel LLR `2y / v^2`.
pub fn llr_baseline(y: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be positive, got {variance}"
        )));
    }
    Ok(2.0 * y / variance)
}

/// Noise variance for an Eb/N0 of `snr_db` at code rate `rate`, unit symbol energy.
pub fn snr_to_variance(snr_db: f64, rate: f64) -> f64 {
    1.0 / (2.0 * rate * 10f64.powf(snr_db / 10.0))
}

/// Inverse of [`snr_to_variance`].
pub fn variance_to_snr(variance: f64, rate: f64) -> f64 {
    10.0 * (1.0 / (2.0 * rate * variance)).log10()
}

/// How training codewords are drawn.
#[derive(Debug, Clone)]
pub enum CodewordSource {
    Random(Arc<SystematicEncoder>),
    AllZero,
}

#[derive(Debug, Clone)]
pub enum ChannelModel {
    /// `x ~ N(0, I_n)`, `y = x`.
    GaussianSource { n: usize },
    BpskAwgn {
        graph: Arc<TannerGraph>,
        variance: f64,
        codewords: Option<CodewordSource>,
    },
}

impl ChannelModel {
    pub fn bpsk_awgn(
        graph: Arc<TannerGraph>,
        variance: f64,
        codewords: Option<CodewordSource>,
    ) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive, got {variance}"
            )));
        }
        Ok(ChannelModel::BpskAwgn {
            graph,
            variance,
            codewords,
        })
    }

    pub fn block_length(&self) -> usize {
        match self {
            ChannelModel::GaussianSource { n } => *n,
            ChannelModel::BpskAwgn { graph, .. } => graph.n(),
        }
    }
}

/// `K` paired source/observation vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub inputs: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub fn sample_minibatch<R: Rng + ?Sized>(
    model: &ChannelModel,
    k: usize,
    rng: &mut R,
) -> Result<Minibatch> {
    if k == 0 {
        return Err(Error::InvalidArgument("mini-batch size must be >= 1".into()));
    }
    let mut inputs = Vec::with_capacity(k);
    let mut observations = Vec::with_capacity(k);
    match model {
        ChannelModel::GaussianSource { n } => {
            for _ in 0..k {
                let x: Vec<f64> = (0..*n).map(|_| rng.sample(StandardNormal)).collect();
                observations.push(x.clone());
                inputs.push(x);
            }
        }
        ChannelModel::BpskAwgn {
            graph,
            variance,
            codewords,
        } => {
            let source = codewords.as_ref().ok_or_else(|| {
                Error::InvalidArgument(
                    "BPSK/AWGN sampling needs an encoder or the all-zero setting".into(),
                )
            })?;
            for _ in 0..k {
                let x = match source {
                    CodewordSource::Random(enc) => enc.random_codeword(rng),
                    CodewordSource::AllZero => vec![0; graph.n()],
                };
                observations.push(transmit(&x, *variance, rng));
                inputs.push(x.into_iter().map(f64::from).collect());
            }
        }
    }
    Ok(Minibatch {
        inputs,
        observations,
    })
}
