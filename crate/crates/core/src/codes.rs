//! Parity-check matrices: alist ingestion, Tanner graph adjacency and a
//! systematic encoder obtained by GF(2) elimination.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlistError {
    #[error("line {line}: unexpected end of input ({expected})")]
    Truncated { line: usize, expected: &'static str },
    #[error("line {line}: invalid integer {token:?}")]
    BadInteger { line: usize, token: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    WrongCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: index {index} out of range 1..={max}")]
    OutOfRange { line: usize, index: usize, max: usize },
    #[error("line {line}: degree {found} does not match declared degree {declared}")]
    DegreeMismatch {
        line: usize,
        declared: usize,
        found: usize,
    },
    #[error("line {line}: declared maximum degree {declared} but largest is {found}")]
    MaxDegreeMismatch {
        line: usize,
        declared: usize,
        found: usize,
    },
    #[error("line {line}: duplicate index {index}")]
    Duplicate { line: usize, index: usize },
    #[error("line {line}: check block disagrees with variable block at check {check}")]
    InconsistentBlocks { line: usize, check: usize },
    #[error("line {line}: trailing data after matrix")]
    TrailingData { line: usize },
    #[error("line {line}: zero dimension")]
    ZeroDimension { line: usize },
}

/// Bipartite adjacency of a parity-check matrix `H` (`m x n`).
///
/// Indices are zero-based. Edges are numbered check-major: the edges of
/// check 0 first, each check's edges in increasing variable order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TannerGraph {
    n: usize,
    m: usize,
    check_adj: Vec<Vec<usize>>,
    var_adj: Vec<Vec<usize>>,
    check_edges: Vec<Vec<usize>>,
    var_edges: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl TannerGraph {
    /// Builds the graph from per-check variable lists.
    pub fn from_checks(n: usize, checks: Vec<Vec<usize>>) -> Result<Self> {
        let m = checks.len();
        let mut check_adj = checks;
        let mut var_adj = vec![Vec::new(); n];
        for (i, row) in check_adj.iter_mut().enumerate() {
            row.sort_unstable();
            if row.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument(format!("check {i} repeats a variable")));
            }
            for &j in row.iter() {
                if j >= n {
                    return Err(Error::InvalidArgument(format!(
                        "check {i} references variable {j} >= n = {n}"
                    )));
                }
                var_adj[j].push(i);
            }
        }
        let mut edges = Vec::new();
        let mut check_edges = vec![Vec::new(); m];
        let mut var_edges = vec![Vec::new(); n];
        for (i, row) in check_adj.iter().enumerate() {
            for &j in row {
                let e = edges.len();
                edges.push((i, j));
                check_edges[i].push(e);
                var_edges[j].push(e);
            }
        }
        Ok(TannerGraph {
            n,
            m,
            check_adj,
            var_adj,
            check_edges,
            var_edges,
            edges,
        })
    }

    pub fn from_dense(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("ragged dense matrix".into()));
        }
        let checks = rows
            .iter()
            .map(|r| (0..n).filter(|&j| r[j] != 0).collect())
            .collect();
        Self::from_checks(n, checks)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Variables of check `i` (the set A(i)).
    pub fn check_vars(&self, i: usize) -> &[usize] {
        &self.check_adj[i]
    }

    /// Checks of variable `j` (the set B(j)).
    pub fn var_checks(&self, j: usize) -> &[usize] {
        &self.var_adj[j]
    }

    pub fn check_edges(&self, i: usize) -> &[usize] {
        &self.check_edges[i]
    }

    pub fn var_edges(&self, j: usize) -> &[usize] {
        &self.var_edges[j]
    }

    /// `(check, variable)` of edge `e`.
    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn var_degrees(&self) -> Vec<usize> {
        self.var_adj.iter().map(Vec::len).collect()
    }

    pub fn check_degrees(&self) -> Vec<usize> {
        self.check_adj.iter().map(Vec::len).collect()
    }

    pub fn syndrome(&self, x: &[u8]) -> Result<Vec<u8>> {
        if x.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: x.len(),
            });
        }
        Ok(self
            .check_adj
            .iter()
            .map(|row| row.iter().fold(0u8, |acc, &j| acc ^ (x[j] & 1)))
            .collect())
    }

    pub fn is_codeword(&self, x: &[u8]) -> bool {
        self.syndrome(x).is_ok_and(|s| s.iter().all(|&b| b == 0))
    }

    /// Serializes to alist without zero padding.
    pub fn to_alist(&self) -> String {
        let vd = self.var_degrees();
        let cd = self.check_degrees();
        let join = |v: &mut dyn Iterator<Item = usize>| {
            v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
        };
        let mut s = String::new();
        writeln!(s, "{} {}", self.n, self.m).unwrap();
        writeln!(
            s,
            "{} {}",
            vd.iter().max().copied().unwrap_or(0),
            cd.iter().max().copied().unwrap_or(0)
        )
        .unwrap();
        writeln!(s, "{}", join(&mut vd.iter().copied())).unwrap();
        writeln!(s, "{}", join(&mut cd.iter().copied())).unwrap();
        for col in &self.var_adj {
            writeln!(s, "{}", join(&mut col.iter().map(|i| i + 1))).unwrap();
        }
        for row in &self.check_adj {
            writeln!(s, "{}", join(&mut row.iter().map(|j| j + 1))).unwrap();
        }
        s
    }

    pub fn load_alist(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(parse_alist(&text)?)
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_tokens(&mut self, expected: &'static str) -> Result<(usize, Vec<usize>), AlistError> {
        for (idx, raw) in self.inner.by_ref() {
            let line = idx + 1;
            self.last = line;
            if raw.trim().is_empty() {
                continue;
            }
            let values = raw
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>().map_err(|_| AlistError::BadInteger {
                        line,
                        token: t.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            return Ok((line, values));
        }
        Err(AlistError::Truncated {
            line: self.last + 1,
            expected,
        })
    }

    fn expect_count(
        &mut self,
        count: usize,
        what: &'static str,
    ) -> Result<(usize, Vec<usize>), AlistError> {
        let (line, v) = self.next_tokens(what)?;
        if v.len() != count {
            return Err(AlistError::WrongCount {
                line,
                expected: count,
                found: v.len(),
            });
        }
        Ok((line, v))
    }
}

/// Reads one adjacency line: `degree` indices in `1..=max`, optionally
/// followed by zero padding up to `max_degree` entries.
fn adjacency_line(
    lines: &mut Lines<'_>,
    degree: usize,
    max_degree: usize,
    max_index: usize,
    what: &'static str,
) -> Result<(usize, Vec<usize>), AlistError> {
    let (line, values) = lines.next_tokens(what)?;
    let nonzero: Vec<usize> = values.iter().copied().filter(|&v| v != 0).collect();
    let padded = values.len() > nonzero.len();
    if values.len() > max_degree.max(degree) || (padded && values[..nonzero.len()].contains(&0)) {
        return Err(AlistError::WrongCount {
            line,
            expected: degree,
            found: values.len(),
        });
    }
    if nonzero.len() != degree {
        return Err(AlistError::DegreeMismatch {
            line,
            declared: degree,
            found: nonzero.len(),
        });
    }
    let mut out = Vec::with_capacity(degree);
    for v in nonzero {
        if v > max_index {
            return Err(AlistError::OutOfRange {
                line,
                index: v,
                max: max_index,
            });
        }
        if out.contains(&(v - 1)) {
            return Err(AlistError::Duplicate { line, index: v });
        }
        out.push(v - 1);
    }
    out.sort_unstable();
    Ok((line, out))
}

/// Parses the alist format:
///
/// ```text
/// n m
/// max_col_degree max_row_degree
/// col degrees (n values)
/// row degrees (m values)
/// n lines: 1-based check indices of each variable (zero padding allowed)
/// m lines: 1-based variable indices of each check (zero padding allowed)
/// ```
pub fn parse_alist(text: &str) -> Result<TannerGraph, AlistError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (line, dims) = lines.expect_count(2, "dimensions")?;
    let (n, m) = (dims[0], dims[1]);
    if n == 0 || m == 0 {
        return Err(AlistError::ZeroDimension { line });
    }
    let (max_line, maxd) = lines.expect_count(2, "maximum degrees")?;
    let (col_line, col_deg) = lines.expect_count(n, "column degrees")?;
    let (row_line, row_deg) = lines.expect_count(m, "row degrees")?;
    for (l, declared, degs) in [
        (col_line, maxd[0], &col_deg),
        (row_line, maxd[1], &row_deg),
    ] {
        let found = degs.iter().copied().max().unwrap_or(0);
        if found != declared {
            return Err(AlistError::MaxDegreeMismatch {
                line: l.max(max_line),
                declared,
                found,
            });
        }
    }
    if col_deg.iter().sum::<usize>() != row_deg.iter().sum::<usize>() {
        return Err(AlistError::WrongCount {
            line: row_line,
            expected: col_deg.iter().sum(),
            found: row_deg.iter().sum(),
        });
    }
    let mut var_adj = Vec::with_capacity(n);
    for &d in &col_deg {
        var_adj.push(adjacency_line(&mut lines, d, maxd[0], m, "variable adjacency")?.1);
    }
    let mut transposed = vec![Vec::new(); m];
    for (j, checks) in var_adj.iter().enumerate() {
        for &i in checks {
            transposed[i].push(j);
        }
    }
    let mut check_adj = Vec::with_capacity(m);
    for (i, &d) in row_deg.iter().enumerate() {
        let (line, vars) = adjacency_line(&mut lines, d, maxd[1], n, "check adjacency")?;
        if vars != transposed[i] {
            return Err(AlistError::InconsistentBlocks { line, check: i + 1 });
        }
        check_adj.push(vars);
    }
    if let Ok((line, _)) = lines.next_tokens("") {
        return Err(AlistError::TrailingData { line });
    }
    Ok(TannerGraph::from_checks(n, check_adj).expect("validated adjacency"))
}

const WORD: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
struct BitRow(Vec<u64>);

impl BitRow {
    fn zeros(len: usize) -> Self {
        BitRow(vec![0; len.div_ceil(WORD)])
    }
    fn get(&self, j: usize) -> bool {
        self.0[j / WORD] >> (j % WORD) & 1 == 1
    }
    fn set(&mut self, j: usize) {
        self.0[j / WORD] |= 1 << (j % WORD);
    }
    fn xor_assign(&mut self, other: &BitRow) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a ^= b;
        }
    }
    fn dot(&self, other: &BitRow) -> u8 {
        let ones: u32 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a & b).count_ones())
            .sum();
        (ones & 1) as u8
    }
}

/// Systematic encoder for the null space of `H`.
///
/// Message bits occupy the non-pivot columns of the reduced row echelon form
/// of `H`; each pivot bit is the parity of its reduced row over the message
/// positions.
#[derive(Debug, Clone)]
pub struct SystematicEncoder {
    n: usize,
    message_positions: Vec<usize>,
    pivot_positions: Vec<usize>,
    parity_rows: Vec<BitRow>,
}

impl SystematicEncoder {
    pub fn new(graph: &TannerGraph) -> Self {
        let n = graph.n();
        let mut rows: Vec<BitRow> = (0..graph.m())
            .map(|i| {
                let mut r = BitRow::zeros(n);
                for &j in graph.check_vars(i) {
                    r.set(j);
                }
                r
            })
            .collect();
        let mut pivots = Vec::new();
        let mut rank = 0;
        for col in 0..n {
            let Some(p) = (rank..rows.len()).find(|&r| rows[r].get(col)) else {
                continue;
            };
            rows.swap(rank, p);
            let pivot = rows[rank].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r != rank && row.get(col) {
                    row.xor_assign(&pivot);
                }
            }
            pivots.push(col);
            rank += 1;
            if rank == rows.len() {
                break;
            }
        }
        rows.truncate(rank);
        let mut is_pivot = vec![false; n];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        SystematicEncoder {
            n,
            message_positions: (0..n).filter(|&j| !is_pivot[j]).collect(),
            pivot_positions: pivots,
            parity_rows: rows,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Message length `n - rank(H)`.
    pub fn k(&self) -> usize {
        self.message_positions.len()
    }

    pub fn rank(&self) -> usize {
        self.pivot_positions.len()
    }

    pub fn message_positions(&self) -> &[usize] {
        &self.message_positions
    }

    /// Code rate `k / n`.
    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.n as f64
    }

    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>> {
        if message.len() != self.k() {
            return Err(Error::LengthMismatch {
                expected: self.k(),
                actual: message.len(),
            });
        }
        let mut word = BitRow::zeros(self.n);
        let mut out = vec![0u8; self.n];
        for (&pos, &bit) in self.message_positions.iter().zip(message) {
            if bit & 1 == 1 {
                word.set(pos);
                out[pos] = 1;
            }
        }
        for (&pos, row) in self.pivot_positions.iter().zip(&self.parity_rows) {
            out[pos] = row.dot(&word);
        }
        Ok(out)
    }

    /// Encodes a uniformly random message.
    pub fn random_codeword<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u8> {
        let msg: Vec<u8> = (0..self.k()).map(|_| rng.random::<bool>() as u8).collect();
        self.encode(&msg).expect("message length matches k")
    }
}
