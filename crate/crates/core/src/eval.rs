//! Monte-Carlo evaluation of frozen quantizers: BER curves, distortion and
//! CSV export.
//!
//! Frame `f` at every SNR point and in every mode draws its codeword and its
//! unit-variance noise from stream `EVAL_STREAM_BASE + f` of the run seed.
//! Baseline and quantized receivers therefore see identical channel
//! realizations, scaled by the noise standard deviation of the point.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{snr_to_variance, stream_rng, transmit, EVAL_STREAM_BASE};
use crate::codes::{SystematicEncoder, TannerGraph};
use crate::decoder::{decode_hard, DecoderConfig};
use crate::error::{Error, Result};
use crate::lloyd::expected_distortion;
use crate::quantizer::QuantizerParams;

/// Header line stating how SNR values are to be read.
pub const SNR_CONVENTION: &str =
    "# snr_db is Eb/N0 in dB with unit symbol energy: v^2 = 1 / (2 R 10^(snr_db/10)), R = (n - rank H) / n";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub frames: u64,
    pub bit_errors: u64,
    pub bits: u64,
    pub frame_errors: u64,
    pub ber: f64,
    /// No bit error was observed at this point.
    pub zero_errors: bool,
}

/// Receiver front end that turns channel outputs into decoder LLRs.
#[derive(Debug, Clone)]
pub enum Receiver<'a> {
    /// `2y / v^2`.
    Baseline,
    /// Frozen neural quantizer (solid staircase).
    Neural(&'a QuantizerParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub snr_db: Vec<f64>,
    pub min_frames: u64,
    pub min_bit_errors: u64,
    /// Hard cap per point so error-free points terminate.
    pub max_frames: u64,
    pub iterations: usize,
    /// Transmit the all-zero codeword instead of random codewords.
    pub all_zero: bool,
    pub seed: u64,
    /// Frames simulated between stopping-rule checks.
    pub chunk: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            snr_db: vec![1.0, 1.5, 2.0, 2.5, 3.0],
            min_frames: 2000,
            min_bit_errors: 100,
            max_frames: 200_000,
            iterations: 20,
            all_zero: false,
            seed: 1,
            chunk: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    frames: u64,
    bit_errors: u64,
    frame_errors: u64,
}

/// Simulates one frame; returns its bit-error count.
#[allow(clippy::too_many_arguments)]
fn simulate_frame(
    graph: &TannerGraph,
    encoder: &SystematicEncoder,
    receiver: &Receiver<'_>,
    variance: f64,
    decoder: &DecoderConfig,
    all_zero: bool,
    seed: u64,
    frame: u64,
    level_count: usize,
) -> Result<u64> {
    let mut rng = stream_rng(seed, EVAL_STREAM_BASE + frame);
    let x = if all_zero {
        vec![0u8; graph.n()]
    } else {
        encoder.random_codeword(&mut rng)
    };
    let y = transmit(&x, variance, &mut rng);
    let llr: Vec<f64> = match receiver {
        Receiver::Baseline => y.iter().map(|v| 2.0 * v / variance).collect(),
        Receiver::Neural(q) => {
            let llr = q.quantize_word(&y, 0.0);
            let mut distinct = llr.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() > level_count {
                return Err(Error::InvalidArgument(format!(
                    "frozen quantizer produced {} distinct values, more than L = {level_count}",
                    distinct.len()
                )));
            }
            llr
        }
    };
    let xhat = decode_hard(graph, &llr, decoder)?;
    Ok(x.iter().zip(&xhat).filter(|(a, b)| a != b).count() as u64)
}

/// BER at each SNR point of `cfg`.
pub fn measure_ber(
    graph: &TannerGraph,
    encoder: &SystematicEncoder,
    receiver: &Receiver<'_>,
    cfg: &EvalConfig,
) -> Result<Vec<BerPoint>> {
    if cfg.min_frames == 0 || cfg.max_frames < cfg.min_frames || cfg.chunk == 0 {
        return Err(Error::InvalidArgument("invalid frame budget".into()));
    }
    let decoder = DecoderConfig::with_iterations(cfg.iterations);
    let level_count = match receiver {
        Receiver::Baseline => usize::MAX,
        Receiver::Neural(q) => q.levels.len(),
    };
    let rate = encoder.rate();
    let mut points = Vec::with_capacity(cfg.snr_db.len());
    for &snr in &cfg.snr_db {
        let variance = snr_to_variance(snr, rate);
        let mut tally = Tally::default();
        while tally.frames < cfg.min_frames
            || (tally.bit_errors < cfg.min_bit_errors && tally.frames < cfg.max_frames)
        {
            let end = (tally.frames + cfg.chunk).min(cfg.max_frames.max(cfg.min_frames));
            let counts: Vec<Result<u64>> = (tally.frames..end)
                .into_par_iter()
                .map(|f| {
                    simulate_frame(
                        graph,
                        encoder,
                        receiver,
                        variance,
                        &decoder,
                        cfg.all_zero,
                        cfg.seed,
                        f,
                        level_count,
                    )
                })
                .collect();
            for c in counts {
                let c = c?;
                tally.bit_errors += c;
                tally.frame_errors += u64::from(c > 0);
            }
            tally.frames = end;
        }
        let bits = tally.frames * graph.n() as u64;
        points.push(BerPoint {
            snr_db: snr,
            frames: tally.frames,
            bit_errors: tally.bit_errors,
            bits,
            frame_errors: tally.frame_errors,
            ber: tally.bit_errors as f64 / bits as f64,
            zero_errors: tally.bit_errors == 0,
        });
    }
    Ok(points)
}

/// SNR at which a BER curve crosses `target`, by linear interpolation of
/// `log10(BER)` between the bracketing points.
pub fn snr_at_ber(points: &[BerPoint], target: f64) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        if a.ber >= target && b.ber <= target && a.ber > 0.0 {
            if b.ber <= 0.0 {
                return Some(b.snr_db);
            }
            let (la, lb, lt) = (a.ber.log10(), b.ber.log10(), target.log10());
            if la == lb {
                return Some(a.snr_db);
            }
            Some(a.snr_db + (lt - la) / (lb - la) * (b.snr_db - a.snr_db))
        } else {
            None
        }
    })
}

/// Monte-Carlo distortion of the frozen quantizer on the standard Gaussian source.
pub fn measure_distortion<R: Rng + ?Sized>(
    params: &QuantizerParams,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let cfg = params.staircase(0.0);
    expected_distortion(|x| params.network.eval(x, &cfg), samples, rng)
}

pub fn ber_csv(points: &[BerPoint]) -> String {
    let mut s = format!("{SNR_CONVENTION}\nsnr_db,ber,frames,errors\n");
    for p in points {
        writeln!(s, "{},{:e},{},{}", p.snr_db, p.ber, p.frames, p.bit_errors).unwrap();
    }
    s
}

pub fn curve_csv(x_name: &str, y_name: &str, rows: &[(f64, f64)]) -> String {
    let mut s = format!("{x_name},{y_name}\n");
    for (x, y) in rows {
        writeln!(s, "{x},{y}").unwrap();
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn export_ber(points: &[BerPoint], path: &Path) -> Result<()> {
    write_file(path, &ber_csv(points))
}

pub fn export_curve(x_name: &str, y_name: &str, rows: &[(f64, f64)], path: &Path) -> Result<()> {
    write_file(path, &curve_csv(x_name, y_name, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::parse_alist;
    use crate::quantizer::{Layer, Network};
    use rand_distr::StandardNormal;

    fn tiny() -> (TannerGraph, SystematicEncoder) {
        let g = parse_alist("3 2\n2 2\n1 2 1\n2 2\n1\n1 2\n2\n1 2\n2 3\n").unwrap();
        let e = SystematicEncoder::new(&g);
        (g, e)
    }

    fn cfg(snr: Vec<f64>) -> EvalConfig {
        EvalConfig {
            snr_db: snr,
            min_frames: 100,
            min_bit_errors: 0,
            max_frames: 100,
            iterations: 20,
            all_zero: false,
            seed: 4,
            chunk: 50,
        }
    }

    #[test]
    fn noiseless_channel_is_error_free() {
        let (g, e) = tiny();
        // v^2 = 1e-6 at rate 1/3
        let snr = crate::channel::variance_to_snr(1e-6, e.rate());
        let pts = measure_ber(&g, &e, &Receiver::Baseline, &cfg(vec![snr])).unwrap();
        assert_eq!(pts[0].ber, 0.0);
        assert!(pts[0].zero_errors);
        assert_eq!(pts[0].bits, 300);
    }

    /// Maximum-likelihood decoding of the repetition code {000, 111}.
    fn ml_tiny(y: &[f64]) -> [u8; 3] {
        if y.iter().sum::<f64>() >= 0.0 {
            [0; 3]
        } else {
            [1; 3]
        }
    }

    #[test]
    fn very_low_snr_matches_ml_simulation() {
        let (g, e) = tiny();
        let snr = -30.0;
        let mut c = cfg(vec![snr]);
        c.min_frames = 4000;
        c.max_frames = 4000;
        let pts = measure_ber(&g, &e, &Receiver::Baseline, &c).unwrap();
        // independent simulation of the ML receiver on fresh noise
        let v = snr_to_variance(snr, e.rate());
        let mut rng = stream_rng(99, 0);
        let mut errors = 0usize;
        let frames = 4000;
        for _ in 0..frames {
            let bit: u8 = rng.random::<bool>().into();
            let y: Vec<f64> = (0..3)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (1.0 - 2.0 * bit as f64) + v.sqrt() * z
                })
                .collect();
            errors += ml_tiny(&y).iter().filter(|&&b| b != bit).count();
        }
        let ml = errors as f64 / (3 * frames) as f64;
        assert!((pts[0].ber - ml).abs() < 0.05, "{} vs {ml}", pts[0].ber);
        assert!((pts[0].ber - 0.5).abs() < 0.05);
    }

    #[test]
    fn stopping_rule_waits_for_errors() {
        let (g, e) = tiny();
        let mut c = cfg(vec![0.0]);
        c.min_frames = 10;
        c.min_bit_errors = 50;
        c.max_frames = 100_000;
        c.chunk = 10;
        let p = measure_ber(&g, &e, &Receiver::Baseline, &c).unwrap()[0];
        assert!(p.bit_errors >= 50 && p.frames >= 10);
        assert_eq!(p.bits, p.frames * 3);
    }

    #[test]
    fn neural_receiver_uses_paired_noise() {
        let (g, e) = tiny();
        // alpha-scaled identity-like quantizer
        let q = QuantizerParams::from_network(
            Network {
                layers: vec![
                    Layer { rows: 2, cols: 1, weights: vec![1.0, -1.0], bias: vec![0.0, 0.0] },
                    Layer { rows: 1, cols: 2, weights: vec![1.0, -1.0], bias: vec![0.0] },
                ],
                alpha: 2.0,
            },
            8,
        )
        .unwrap();
        let c = cfg(vec![-2.0, 2.0]);
        let a = measure_ber(&g, &e, &Receiver::Neural(&q), &c).unwrap();
        let b = measure_ber(&g, &e, &Receiver::Neural(&q), &c).unwrap();
        assert_eq!(a, b);
        let base = measure_ber(&g, &e, &Receiver::Baseline, &c).unwrap();
        assert!(a[0].ber >= base[0].ber - 0.05);
    }

    #[test]
    fn interpolated_crossing() {
        let mk = |snr: f64, ber: f64| BerPoint {
            snr_db: snr,
            frames: 1,
            bit_errors: 1,
            bits: 1,
            frame_errors: 1,
            ber,
            zero_errors: false,
        };
        let pts = [mk(1.0, 1e-2), mk(2.0, 1e-4), mk(3.0, 1e-6)];
        assert!((snr_at_ber(&pts, 1e-3).unwrap() - 1.5).abs() < 1e-12);
        assert!((snr_at_ber(&pts, 1e-5).unwrap() - 2.5).abs() < 1e-12);
        assert!(snr_at_ber(&pts, 1e-8).is_none());
    }

    #[test]
    fn csv_exports() {
        let empty = ber_csv(&[]);
        assert_eq!(empty.lines().count(), 2);
        assert_eq!(empty.lines().nth(1).unwrap(), "snr_db,ber,frames,errors");
        let p = BerPoint {
            snr_db: 2.5,
            frames: 2000,
            bit_errors: 150,
            bits: 2_016_000,
            frame_errors: 9,
            ber: 150.0 / 2_016_000.0,
            zero_errors: false,
        };
        let s = ber_csv(&[p, p]);
        assert_eq!(s, ber_csv(&[p, p]));
        for line in s.lines().skip(1) {
            assert_eq!(line.split(',').count(), 4);
        }
        assert_eq!(curve_csv("x", "y", &[(0.5, -1.0)]), "x,y\n0.5,-1\n");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ber.csv");
        export_ber(&[p], &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        export_ber(&[p], &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
        let err = export_ber(&[p], &dir.path().join("missing/ber.csv")).unwrap_err();
        assert!(err.to_string().contains("missing"));
    }

    #[test]
    fn distortion_of_trivial_quantizers() {
        let mut q = QuantizerParams::init(8, 2, 4, 1).unwrap();
        q.network = q.network.map(|_| 0.0);
        q.network.alpha = 1.0;
        let d = measure_distortion(&q, 100_000, &mut stream_rng(0, 0));
        // constant output -alpha/2 = -0.5: E[(X + 0.5)^2] = 1.25
        assert!((d - 1.25).abs() < 0.02, "{d}");
        q.network.alpha = 0.0;
        let d = measure_distortion(&q, 100_000, &mut stream_rng(0, 0));
        assert!((d - 1.0).abs() < 0.02, "{d}");
    }
}
