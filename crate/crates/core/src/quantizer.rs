//! The neural quantizer: a small ReLU network followed by an `alpha`-scaled
//! staircase. One parameter set serves every symbol position.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{stream_rng, INIT_STREAM};
use crate::error::{Error, Result};
use crate::grad::{Gradients, Real, Tape, Var};
use crate::staircase::{soft_staircase, LevelSet, StaircaseConfig};

/// Dense affine map, weights stored row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<S> {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

/// Trainable quantities: the layers and the output scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    pub layers: Vec<Layer<S>>,
    pub alpha: S,
}

impl<S: Copy> Network<S> {
    pub fn map<T>(&self, mut f: impl FnMut(S) -> T) -> Network<T> {
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    rows: l.rows,
                    cols: l.cols,
                    weights: l.weights.iter().map(|&w| f(w)).collect(),
                    bias: l.bias.iter().map(|&b| f(b)).collect(),
                })
                .collect(),
            alpha: f(self.alpha),
        }
    }

    /// Parameters in canonical order: per layer weights then bias, then `alpha`.
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out.push(self.alpha);
        out
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum::<usize>()
            + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl<S: Real> Network<S> {
    /// Network output for a scalar input `y`.
    pub fn eval(&self, y: f64, staircase: &StaircaseConfig) -> S {
        let (first, rest) = self.layers.split_first().expect("at least two layers");
        let (last, middle) = rest.split_last().expect("at least two layers");
        let mut hidden: Vec<S> = first
            .weights
            .iter()
            .zip(&first.bias)
            .map(|(&w, &b)| (w.scale(y) + b).relu())
            .collect();
        for layer in middle {
            hidden = affine(layer, &hidden).into_iter().map(Real::relu).collect();
        }
        let z = affine(last, &hidden)[0];
        self.alpha * soft_staircase(z, staircase)
    }
}

fn affine<S: Real>(layer: &Layer<S>, input: &[S]) -> Vec<S> {
    (0..layer.rows)
        .map(|r| {
            let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
            row.iter()
                .zip(input)
                .fold(layer.bias[r], |acc, (&w, &h)| acc + w * h)
        })
        .collect()
}

/// Parameters plus the structural hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerParams {
    pub network: Network<f64>,
    pub hidden_dim: usize,
    pub depth: usize,
    pub levels: LevelSet,
}

impl QuantizerParams {
    /// Glorot-uniform weights, zero biases, `alpha = 1`.
    pub fn init(hidden_dim: usize, depth: usize, level_count: usize, seed: u64) -> Result<Self> {
        if hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden dimension must be >= 1".into()));
        }
        if depth < 2 {
            return Err(Error::InvalidArgument("depth must be >= 2".into()));
        }
        let levels = LevelSet::canonical(level_count)?;
        let mut rng = stream_rng(seed, INIT_STREAM);
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let cols = if i == 0 { 1 } else { hidden_dim };
            let rows = if i == depth - 1 { 1 } else { hidden_dim };
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            layers.push(Layer {
                rows,
                cols,
                weights: (0..rows * cols)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect(),
                bias: vec![0.0; rows],
            });
        }
        Ok(QuantizerParams {
            network: Network { layers, alpha: 1.0 },
            hidden_dim,
            depth,
            levels,
        })
    }

    /// Builds a parameter set from explicit layers, validating the shapes.
    pub fn from_network(network: Network<f64>, level_count: usize) -> Result<Self> {
        let depth = network.layers.len();
        if depth < 2 {
            return Err(Error::InvalidArgument("depth must be >= 2".into()));
        }
        let hidden_dim = network.layers[0].rows;
        for (i, l) in network.layers.iter().enumerate() {
            let cols = if i == 0 { 1 } else { hidden_dim };
            let rows = if i == depth - 1 { 1 } else { hidden_dim };
            if l.rows != rows || l.cols != cols || l.weights.len() != rows * cols || l.bias.len() != rows
            {
                return Err(Error::InvalidArgument(format!(
                    "layer {} has shape {}x{} ({} weights, {} biases), expected {rows}x{cols}",
                    i + 1,
                    l.rows,
                    l.cols,
                    l.weights.len(),
                    l.bias.len()
                )));
            }
        }
        Ok(QuantizerParams {
            network,
            hidden_dim,
            depth,
            levels: LevelSet::canonical(level_count)?,
        })
    }

    pub fn staircase(&self, temperature: f64) -> StaircaseConfig {
        StaircaseConfig::new(self.levels.clone(), temperature)
    }

    pub fn quantize(&self, y: f64, temperature: f64) -> f64 {
        self.network.eval(y, &self.staircase(temperature))
    }

    pub fn quantize_word(&self, y: &[f64], temperature: f64) -> Vec<f64> {
        let cfg = self.staircase(temperature);
        y.iter().map(|&v| self.network.eval(v, &cfg)).collect()
    }

    /// Registers every parameter as a leaf of `tape`.
    ///
    /// Refused for a solid staircase, whose derivative is zero almost everywhere.
    pub fn on_tape<'t>(&self, tape: &'t Tape, temperature: f64) -> Result<TapedQuantizer<'t>> {
        let staircase = self.staircase(temperature);
        if staircase.is_solid() {
            return Err(Error::SolidTaping(temperature));
        }
        Ok(TapedQuantizer {
            network: self.network.map(|v| tape.var(v)),
            staircase,
        })
    }

    pub fn num_params(&self) -> usize {
        self.network.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.network.flatten()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                expected: self.num_params(),
                actual: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.network.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        self.network.alpha = it.next().unwrap();
        Ok(())
    }

    /// Samples the frozen (solid) quantizer at `lo, lo + step, ...` up to `hi`.
    pub fn extract_table(&self, lo: f64, hi: f64, step: f64) -> Result<Vec<(f64, f64)>> {
        if !(lo < hi) || !(step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid grid lo={lo} hi={hi} step={step}"
            )));
        }
        let cfg = self.staircase(0.0);
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        Ok((0..count)
            .map(|k| {
                let x = lo + k as f64 * step;
                (x, self.network.eval(x, &cfg))
            })
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            hidden_dim: self.hidden_dim,
            depth: self.depth,
            levels: self.levels.len(),
            alpha: self.network.alpha,
            layers: self.network.layers.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let params = Self::from_network(
            Network {
                layers: ck.layers,
                alpha: ck.alpha,
            },
            ck.levels,
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if params.hidden_dim != ck.hidden_dim || params.depth != ck.depth {
            return Err(Error::Checkpoint(format!(
                "header says u={} T={}, layers say u={} T={}",
                ck.hidden_dim, ck.depth, params.hidden_dim, params.depth
            )));
        }
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// On-disk parameter format. Floats are written in shortest round-trip form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    #[serde(rename = "u")]
    pub hidden_dim: usize,
    #[serde(rename = "T")]
    pub depth: usize,
    #[serde(rename = "L")]
    pub levels: usize,
    pub alpha: f64,
    pub layers: Vec<Layer<f64>>,
}

/// Parameters registered on a tape.
pub struct TapedQuantizer<'t> {
    network: Network<Var<'t>>,
    staircase: StaircaseConfig,
}

impl<'t> TapedQuantizer<'t> {
    pub fn quantize(&self, y: f64) -> Var<'t> {
        self.network.eval(y, &self.staircase)
    }

    pub fn quantize_word(&self, y: &[f64]) -> Vec<Var<'t>> {
        y.iter().map(|&v| self.quantize(v)).collect()
    }

    /// Gradient in the order of [`QuantizerParams::flatten`].
    pub fn gradient(&self, grads: &Gradients) -> Vec<f64> {
        self.network.flatten().into_iter().map(|v| grads.wrt(v)).collect()
    }
}

/// A maximal run of equal outputs in a sampled table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

pub fn plateaus(table: &[(f64, f64)]) -> Vec<Plateau> {
    let mut out: Vec<Plateau> = Vec::new();
    for &(x, y) in table {
        match out.last_mut() {
            Some(p) if p.value == y => p.end = x,
            _ => out.push(Plateau {
                start: x,
                end: x,
                value: y,
            }),
        }
    }
    out
}

/// Distinct output values of a table in increasing order.
pub fn distinct_outputs(table: &[(f64, f64)]) -> Vec<f64> {
    let mut v: Vec<f64> = table.iter().map(|&(_, y)| y).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::grad_check;
    use proptest::prelude::*;

    fn zero_params(alpha: f64) -> QuantizerParams {
        let mut p = QuantizerParams::init(8, 2, 4, 0).unwrap();
        p.network = p.network.map(|_| 0.0);
        p.network.alpha = alpha;
        p
    }

    /// u = 1, T = 2, identity weights.
    fn identity_like() -> QuantizerParams {
        QuantizerParams::from_network(
            Network {
                layers: vec![
                    Layer { rows: 1, cols: 1, weights: vec![1.0], bias: vec![0.0] },
                    Layer { rows: 1, cols: 1, weights: vec![1.0], bias: vec![0.0] },
                ],
                alpha: 1.0,
            },
            4,
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = QuantizerParams::init(8, 2, 4, 7).unwrap();
        let b = QuantizerParams::init(8, 2, 4, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.network.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert_eq!(a.network.alpha, 1.0);
        let limit = (6.0f64 / 9.0).sqrt();
        assert!(a.network.layers[0].weights.iter().all(|w| w.abs() <= limit));
        assert_ne!(a, QuantizerParams::init(8, 2, 4, 8).unwrap());
    }

    #[test]
    fn init_shapes() {
        let p = QuantizerParams::init(5, 4, 8, 1).unwrap();
        let shapes: Vec<_> = p.network.layers.iter().map(|l| (l.rows, l.cols)).collect();
        assert_eq!(shapes, vec![(5, 1), (5, 5), (5, 5), (1, 5)]);
        assert_eq!(p.num_params(), 10 + 30 + 30 + 6 + 1);
        assert!(QuantizerParams::init(0, 2, 4, 1).is_err());
        assert!(QuantizerParams::init(8, 1, 4, 1).is_err());
        assert!(QuantizerParams::init(8, 2, 5, 1).is_err());
    }

    #[test]
    fn zero_network_hits_lower_tie_level() {
        assert_eq!(zero_params(1.0).quantize(3.3, 0.0), -0.5);
        assert_eq!(zero_params(2.5).quantize(-1.0, 0.0), -1.25);
        let w = zero_params(1.0).quantize_word(&[5.0, -5.0, 0.0], 0.0);
        assert_eq!(w, vec![-0.5, -0.5, -0.5]);
    }

    #[test]
    fn identity_like_trace() {
        assert_eq!(identity_like().quantize(1.2, 0.0), 1.5);
        // relu clips negative inputs to 0, which ties to -0.5.
        assert_eq!(identity_like().quantize(-1.2, 0.0), -0.5);
    }

    #[test]
    fn tables_and_plateaus() {
        let t = zero_params(1.0).extract_table(-2.0, 2.0, 0.01).unwrap();
        assert_eq!(t.len(), 401);
        assert_eq!(distinct_outputs(&t), vec![-0.5]);

        let t = identity_like().extract_table(-3.0, 3.0, 0.01).unwrap();
        let p = plateaus(&t);
        let values: Vec<f64> = p.iter().map(|p| p.value).collect();
        assert_eq!(values, vec![-0.5, 0.5, 1.5]);
        // Thresholds of the hand trace: relu pins y <= 0 to 0 (tie -> -0.5),
        // 0 < y <= 1 to 0.5, y > 1 to 1.5.
        assert!((p[1].start - 0.01).abs() < 1e-9);
        assert!((p[2].start - 1.01).abs() < 1e-9);

        assert!(zero_params(1.0).extract_table(1.0, 1.0, 0.1).is_err());
        assert!(zero_params(1.0).extract_table(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn solid_taping_is_refused() {
        let tape = Tape::new();
        let p = zero_params(1.0);
        assert!(matches!(p.on_tape(&tape, 0.0), Err(Error::SolidTaping(_))));
        assert!(p.on_tape(&tape, 0.1).is_ok());
    }

    #[test]
    fn flatten_round_trip() {
        let mut p = QuantizerParams::init(3, 3, 4, 2).unwrap();
        let flat: Vec<f64> = (0..p.num_params()).map(|i| i as f64).collect();
        p.set_flat(&flat).unwrap();
        assert_eq!(p.flatten(), flat);
        assert_eq!(p.network.alpha, (flat.len() - 1) as f64);
        assert!(p.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = QuantizerParams::init(8, 3, 8, 99).unwrap();
        let q = QuantizerParams::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
        let bits = |p: &QuantizerParams| p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&q));
    }

    #[test]
    fn malformed_checkpoints() {
        assert!(QuantizerParams::from_json("{}").is_err());
        let mut ck = QuantizerParams::init(8, 2, 4, 1).unwrap().to_checkpoint();
        ck.layers[1].weights.pop();
        assert!(QuantizerParams::from_checkpoint(ck).is_err());
        let mut ck = QuantizerParams::init(8, 2, 4, 1).unwrap().to_checkpoint();
        ck.hidden_dim = 4;
        assert!(QuantizerParams::from_checkpoint(ck).is_err());
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        use rand::Rng;
        let mut rng = stream_rng(3, 0);
        for trial in 0..10 {
            let mut p = QuantizerParams::init(4, 3, 4, trial).unwrap();
            let flat: Vec<f64> = p
                .flatten()
                .iter()
                .map(|v| v + rng.random_range(-0.3..0.3))
                .collect();
            p.set_flat(&flat).unwrap();
            let y: f64 = rng.random_range(-2.0..2.0);
            let cfg = p.staircase(0.1);
            let err = grad_check(|_, theta| rebuild(&p.network, theta).eval(y, &cfg), &flat, 1e-6);
            assert!(err < 1e-5, "trial {trial}: {err}");
        }
    }

    fn rebuild<'t>(shape: &Network<f64>, flat: &[Var<'t>]) -> Network<Var<'t>> {
        let mut it = flat.iter().copied();
        // map visits parameters in flatten order.
        shape.map(|_| it.next().unwrap())
    }

    #[test]
    fn taped_gradient_matches_grad_check_path() {
        let p = QuantizerParams::init(8, 2, 4, 5).unwrap();
        let tape = Tape::new();
        let tq = p.on_tape(&tape, 0.1).unwrap();
        let y = tq.quantize(0.37);
        assert_eq!(y.value().to_bits(), p.quantize(0.37, 0.1).to_bits());
        let g = tq.gradient(&tape.backward(y));
        assert_eq!(g.len(), p.num_params());
        assert!(g.iter().all(|v| v.is_finite()));
        assert!(g[p.num_params() - 1] != 0.0);
    }

    proptest! {
        #[test]
        fn hard_quantizer_has_at_most_l_outputs(seed in 0u64..50, xs in proptest::collection::vec(-5.0f64..5.0, 1..60)) {
            let p = QuantizerParams::init(8, 2, 4, seed).unwrap();
            let mut out = p.quantize_word(&xs, 0.0);
            out.sort_by(f64::total_cmp);
            out.dedup();
            prop_assert!(out.len() <= 4);
        }

        #[test]
        fn output_bounded_by_alpha_scale(seed in 0u64..50, y in -20.0f64..20.0, t in 0.0f64..1.0) {
            let mut p = QuantizerParams::init(8, 3, 8, seed).unwrap();
            p.network.alpha = 2.7;
            prop_assert!(p.quantize(y, t).abs() <= 2.7 * 3.5 + 1e-12);
        }

        #[test]
        fn coordinates_are_independent(seed in 0u64..20, xs in proptest::collection::vec(-3.0f64..3.0, 2..10)) {
            let p = QuantizerParams::init(8, 2, 8, seed).unwrap();
            let word = p.quantize_word(&xs, 0.2);
            let mut rev = xs.clone();
            rev.reverse();
            let mut word_rev = p.quantize_word(&rev, 0.2);
            word_rev.reverse();
            prop_assert_eq!(&word, &word_rev);
            for (i, &x) in xs.iter().enumerate() {
                prop_assert_eq!(word[i], p.quantize(x, 0.2));
            }
        }
    }
}
