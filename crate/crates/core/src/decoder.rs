//! Log-domain sum-product decoding with a fixed number of flooding rounds.
//!
//! All message arithmetic goes through [`Real`], so the unrolled decoder can
//! be evaluated on plain floats or recorded on a tape for differentiation with
//! respect to the channel LLRs.

use crate::codes::TannerGraph;
use crate::error::{Error, Result};
use crate::grad::Real;

pub const DEFAULT_ITERATIONS: usize = 20;
pub const DEFAULT_CLIP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub iterations: usize,
    /// Variable-to-check messages are clipped to `[-clip, clip]`.
    pub clip: f64,
    /// Stop as soon as the hard decision is a codeword. Only honoured by
    /// [`decode_hard`]; off by default.
    pub early_stop: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            iterations: DEFAULT_ITERATIONS,
            clip: DEFAULT_CLIP,
            early_stop: false,
        }
    }
}

impl DecoderConfig {
    pub fn with_iterations(iterations: usize) -> Self {
        DecoderConfig {
            iterations,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("decoder iterations must be >= 1".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::InvalidArgument("message clip must be positive".into()));
        }
        Ok(())
    }
}

/// `llr + sum(incoming)`, clipped to `[-clip, clip]`.
pub fn variable_update<S: Real>(llr: S, incoming: impl IntoIterator<Item = S>, clip: f64) -> S {
    incoming
        .into_iter()
        .fold(llr, |acc, a| acc + a)
        .clamp(-clip, clip)
}

/// `2 atanh(prod tanh(b / 2))` with the product kept inside the open unit interval.
pub fn check_update<S: Real>(incoming: &[S]) -> S {
    let (first, rest) = incoming.split_first().expect("check update needs an input");
    rest.iter()
        .fold(first.scale(0.5).tanh(), |acc, b| acc * b.scale(0.5).tanh())
        .atanh()
        .scale(2.0)
}

/// Per-edge message buffers for one decoding run.
#[derive(Debug, Clone)]
pub struct MessageState<S> {
    pub var_to_check: Vec<S>,
    pub check_to_var: Vec<S>,
}

/// Extrinsic check outputs for one check node, via prefix/suffix products.
fn check_node<S: Real>(tanhs: &[S], out: &mut Vec<S>) {
    out.clear();
    let d = tanhs.len();
    if d == 1 {
        out.push(tanhs[0].lift(1.0).atanh().scale(2.0));
        return;
    }
    let mut prefix = Vec::with_capacity(d);
    prefix.push(tanhs[0]);
    for k in 1..d - 1 {
        prefix.push(prefix[k - 1] * tanhs[k]);
    }
    let mut suffix = tanhs[d - 1];
    let mut rev = Vec::with_capacity(d);
    rev.push(prefix[d - 2]);
    for k in (1..d - 1).rev() {
        rev.push(prefix[k - 1] * suffix);
        suffix = suffix * tanhs[k];
    }
    rev.push(suffix);
    out.extend(rev.into_iter().rev().map(|p| p.atanh().scale(2.0)));
}

fn check_input(graph: &TannerGraph, llr: &[f64]) -> Result<()> {
    if llr.len() != graph.n() {
        return Err(Error::LengthMismatch {
            expected: graph.n(),
            actual: llr.len(),
        });
    }
    if let Some(j) = llr.iter().position(|v| v.is_nan()) {
        return Err(Error::NanInput(format!("LLR {j} is NaN")));
    }
    Ok(())
}

struct Runner<'g, S> {
    graph: &'g TannerGraph,
    llr: &'g [S],
    clip: f64,
    state: MessageState<S>,
    started: bool,
    tanh_buf: Vec<S>,
    out_buf: Vec<S>,
}

impl<'g, S: Real> Runner<'g, S> {
    fn new(graph: &'g TannerGraph, llr: &'g [S], clip: f64) -> Self {
        let zero = llr[0].lift(0.0);
        Runner {
            graph,
            llr,
            clip,
            state: MessageState {
                var_to_check: vec![zero; graph.num_edges()],
                check_to_var: vec![zero; graph.num_edges()],
            },
            started: false,
            tanh_buf: Vec::new(),
            out_buf: Vec::new(),
        }
    }

    fn round(&mut self) {
        let g = self.graph;
        for j in 0..g.n() {
            let edges = g.var_edges(j);
            for &e in edges {
                let beta = if self.started {
                    let others = edges
                        .iter()
                        .filter(|&&f| f != e)
                        .map(|&f| self.state.check_to_var[f]);
                    variable_update(self.llr[j], others, self.clip)
                } else {
                    // all check messages are still zero
                    self.llr[j].clamp(-self.clip, self.clip)
                };
                self.state.var_to_check[e] = beta;
            }
        }
        for i in 0..g.m() {
            let edges = g.check_edges(i);
            self.tanh_buf.clear();
            self.tanh_buf
                .extend(edges.iter().map(|&e| self.state.var_to_check[e].scale(0.5).tanh()));
            check_node(&self.tanh_buf, &mut self.out_buf);
            for (&e, &a) in edges.iter().zip(&self.out_buf) {
                self.state.check_to_var[e] = a;
            }
        }
        self.started = true;
    }

    fn marginals(&self) -> Vec<S> {
        (0..self.graph.n())
            .map(|j| {
                let edges = self.graph.var_edges(j);
                edges
                    .iter()
                    .fold(self.llr[j], |acc, &e| acc + self.state.check_to_var[e])
            })
            .collect()
    }
}

/// Final marginal LLRs `llr_j + sum_k alpha_{k->j}` after `cfg.iterations` rounds.
pub fn marginals<S: Real>(graph: &TannerGraph, llr: &[S], cfg: &DecoderConfig) -> Result<Vec<S>> {
    cfg.validate()?;
    check_input(graph, &llr.iter().map(|v| v.value()).collect::<Vec<_>>())?;
    let mut run = Runner::new(graph, llr, cfg.clip);
    for _ in 0..cfg.iterations {
        run.round();
    }
    Ok(run.marginals())
}

/// Differentiable output: `sigmoid(-marginal)`, an estimate of each bit value.
pub fn decode_soft<S: Real>(graph: &TannerGraph, llr: &[S], cfg: &DecoderConfig) -> Result<Vec<S>> {
    Ok(marginals(graph, llr, cfg)?
        .into_iter()
        .map(|l| (-l).sigmoid())
        .collect())
}

fn hard_bits(marg: &[f64]) -> Vec<u8> {
    marg.iter().map(|&l| u8::from(l < 0.0)).collect()
}

/// Hard decisions: bit 1 iff the final marginal is negative.
pub fn decode_hard(graph: &TannerGraph, llr: &[f64], cfg: &DecoderConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    check_input(graph, llr)?;
    let mut run = Runner::new(graph, llr, cfg.clip);
    for _ in 0..cfg.iterations {
        run.round();
        if cfg.early_stop {
            let bits = hard_bits(&run.marginals());
            if graph.is_codeword(&bits) {
                return Ok(bits);
            }
        }
    }
    Ok(hard_bits(&run.marginals()))
}

/// Threshold soft bit estimates at 0.5; exactly 0.5 maps to 0.
pub fn hard_decision(soft: &[f64]) -> Vec<u8> {
    soft.iter().map(|&p| u8::from(p > 0.5)).collect()
}
