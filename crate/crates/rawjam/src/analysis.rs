//! Correlation machinery: Pearson coefficients between hypothesis indicators
//! and observed times, candidate ranking and rank-versus-observations
//! tracking.
//!
//! The hot paths stream over observations with centered (Welford-style)
//! accumulators, so trace counts in the millions need memory proportional to
//! the candidate space only and stay numerically stable even though the
//! observed times sit on a base four orders of magnitude above the signal.

use std::collections::BinaryHeap;
use std::collections::HashSet;
use std::io::{self, Write};

use crate::leakage::TraceSet;
use crate::{Error, Result};

/// A sample Pearson coefficient, or a marker that it was undefined.
///
/// Zero variance in either input makes the coefficient undefined; such
/// results are reported as 0 with `degenerate` set, and rank last.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub r: f64,
    pub degenerate: bool,
}

impl Correlation {
    pub fn of(r: f64) -> Self {
        Correlation { r, degenerate: false }
    }

    pub fn degenerate() -> Self {
        Correlation { r: 0.0, degenerate: true }
    }
}

/// Sample Pearson correlation of two equal-length vectors.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "pearson over vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least 2 samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation::degenerate());
    }
    Ok(Correlation::of(sxy / (sxx * syy).sqrt()))
}

/// Predicted access counts per (observation, key candidate).
///
/// Rows are observations, columns are candidates; entries are small
/// non-negative counts.
#[derive(Clone, Debug)]
pub struct HypothesisMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u16>,
}

impl HypothesisMatrix {
    pub fn from_fn<F>(rows: usize, cols: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize) -> u16,
    {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        HypothesisMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[u16] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Single-pass correlator of many candidate columns against one time vector.
///
/// Keeps centered running moments per candidate (mean, second moment, cross
/// moment), so the result does not suffer the catastrophic cancellation a
/// raw sum/sum-of-squares formulation would at large observation counts.
#[derive(Clone, Debug)]
pub struct StreamingCorrelator {
    n: u64,
    mean_y: f64,
    m2_y: f64,
    mean_x: Vec<f64>,
    m2_x: Vec<f64>,
    cross: Vec<f64>,
}

impl StreamingCorrelator {
    pub fn new(candidates: usize) -> Self {
        StreamingCorrelator {
            n: 0,
            mean_y: 0.0,
            m2_y: 0.0,
            mean_x: vec![0.0; candidates],
            m2_x: vec![0.0; candidates],
            cross: vec![0.0; candidates],
        }
    }

    pub fn observations(&self) -> u64 {
        self.n
    }

    /// Fold in one observation: predicted counts per candidate plus its time.
    pub fn push_row(&mut self, counts: &[u16], y: f64) {
        assert_eq!(counts.len(), self.mean_x.len(), "row width");
        self.n += 1;
        let n = self.n as f64;
        let dy = y - self.mean_y;
        self.mean_y += dy / n;
        let dy_new = y - self.mean_y;
        self.m2_y += dy * dy_new;
        for (c, &count) in counts.iter().enumerate() {
            let x = count as f64;
            let dx = x - self.mean_x[c];
            self.mean_x[c] += dx / n;
            self.m2_x[c] += dx * (x - self.mean_x[c]);
            self.cross[c] += dx * dy_new;
        }
    }

    pub fn correlations(&self) -> Vec<Correlation> {
        self.mean_x
            .iter()
            .enumerate()
            .map(|(c, _)| {
                if self.n < 2 || self.m2_x[c] <= 0.0 || self.m2_y <= 0.0 {
                    Correlation::degenerate()
                } else {
                    Correlation::of(self.cross[c] / (self.m2_x[c] * self.m2_y).sqrt())
                }
            })
            .collect()
    }
}

/// Per-candidate Pearson correlation between hypothesis columns and times.
pub fn correlate_candidates(a: &HypothesisMatrix, times: &[f64]) -> Result<Vec<Correlation>> {
    if a.rows() != times.len() {
        return Err(Error::DimensionMismatch(format!(
            "hypothesis matrix has {} rows, leak vector {}",
            a.rows(),
            times.len()
        )));
    }
    let mut acc = StreamingCorrelator::new(a.cols());
    for (r, &y) in times.iter().enumerate() {
        acc.push_row(a.row(r), y);
    }
    Ok(acc.correlations())
}

/// Streaming correlator specialized to 0/1 hypothesis columns.
///
/// Hypothesis indicators for both attacks are binary and sparse (a handful
/// of candidates predict an access for any given ciphertext), so each
/// observation only touches its hit candidates: per candidate we keep the
/// hit count and the sum of offset-centered times over hits, which together
/// with the global time moments reconstruct the exact Pearson coefficient.
#[derive(Clone, Debug)]
pub struct BinaryColumnCorrelator {
    n: u64,
    mean_y: f64,
    m2_y: f64,
    y_offset: f64,
    hits: Vec<u64>,
    dev_sum: Vec<f64>,
}

impl BinaryColumnCorrelator {
    pub fn new(candidates: usize) -> Self {
        BinaryColumnCorrelator {
            n: 0,
            mean_y: 0.0,
            m2_y: 0.0,
            y_offset: f64::NAN,
            hits: vec![0; candidates],
            dev_sum: vec![0.0; candidates],
        }
    }

    pub fn observations(&self) -> u64 {
        self.n
    }

    /// Fold in one observation whose predicted-access candidates are listed
    /// in `hit_candidates` (each at most once); all other columns are 0.
    pub fn push_hits(&mut self, hit_candidates: &[u16], y: f64) {
        if self.n == 0 {
            self.y_offset = y;
        }
        self.n += 1;
        let dy = y - self.mean_y;
        self.mean_y += dy / self.n as f64;
        self.m2_y += dy * (y - self.mean_y);
        let dev = y - self.y_offset;
        for &c in hit_candidates {
            self.hits[c as usize] += 1;
            self.dev_sum[c as usize] += dev;
        }
    }

    pub fn correlations(&self) -> Vec<Correlation> {
        let n = self.n as f64;
        self.hits
            .iter()
            .zip(&self.dev_sum)
            .map(|(&m, &dev)| {
                if self.n < 2 || m == 0 || m == self.n || self.m2_y <= 0.0 {
                    return Correlation::degenerate();
                }
                let m_f = m as f64;
                // sum over hits of (y - mean_y), reconstructed from the
                // offset-centered sum.
                let cov = dev - m_f * (self.mean_y - self.y_offset);
                let var_x = m_f * (1.0 - m_f / n);
                Correlation::of(cov / (var_x * self.m2_y).sqrt())
            })
            .collect()
    }
}

/// One candidate with its correlation, after ranking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedCandidate {
    pub candidate: u16,
    pub correlation: Correlation,
}

/// Candidates of one byte position sorted by correlation.
#[derive(Clone, Debug)]
pub struct RankedList {
    /// Descending by correlation; ties break to the smaller candidate;
    /// degenerate columns rank last.
    pub entries: Vec<RankedCandidate>,
    pub true_candidate: Option<u16>,
    /// 1-based rank of the true candidate, when one was designated.
    pub true_rank: Option<usize>,
}

impl RankedList {
    pub fn best(&self) -> &RankedCandidate {
        &self.entries[0]
    }

    pub fn rank_of(&self, candidate: u16) -> usize {
        1 + self
            .entries
            .iter()
            .position(|e| e.candidate == candidate)
            .expect("candidate in list")
    }
}

/// Sort candidates by correlation and report the rank of the true one.
pub fn rank_candidates(corrs: &[Correlation], true_candidate: Option<u16>) -> RankedList {
    let mut entries: Vec<RankedCandidate> = corrs
        .iter()
        .enumerate()
        .map(|(c, &correlation)| RankedCandidate { candidate: c as u16, correlation })
        .collect();
    entries.sort_by(|a, b| {
        a.correlation
            .degenerate
            .cmp(&b.correlation.degenerate)
            .then_with(|| b.correlation.r.total_cmp(&a.correlation.r))
            .then_with(|| a.candidate.cmp(&b.candidate))
    });
    let true_rank = true_candidate
        .map(|t| 1 + entries.iter().position(|e| e.candidate == t).expect("true candidate"));
    RankedList { entries, true_candidate, true_rank }
}

/// Per-byte true-candidate ranks after a prefix of the observations.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryPoint {
    pub observations: usize,
    pub ranks: Vec<usize>,
}

/// Remaining-entropy estimate of a rank vector: sum of log2 ranks.
pub fn log2_rank_sum(ranks: &[usize]) -> f64 {
    ranks.iter().map(|&r| (r as f64).log2()).sum()
}

/// Attack output: per byte position, the ranked candidates, plus an optional
/// rank history over observation counts.
#[derive(Clone, Debug)]
pub struct RankReport {
    pub positions: Vec<RankedList>,
    pub history: Vec<HistoryPoint>,
}

impl RankReport {
    /// Number of byte positions whose true candidate ranked first.
    pub fn rank_one_count(&self) -> usize {
        self.positions.iter().filter(|p| p.true_rank == Some(1)).count()
    }

    /// Ranks of the true candidates, when all were designated.
    pub fn true_ranks(&self) -> Option<Vec<usize>> {
        self.positions.iter().map(|p| p.true_rank).collect()
    }

    /// `byte_index,candidate,correlation,rank` rows, one per candidate.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "byte_index,candidate,correlation,rank")?;
        for (byte_index, list) in self.positions.iter().enumerate() {
            for (i, e) in list.entries.iter().enumerate() {
                writeln!(w, "{},{},{},{}", byte_index, e.candidate, e.correlation.r, i + 1)?;
            }
        }
        Ok(())
    }

    /// `observations,byte_index,rank` rows, one per history sample and byte.
    pub fn write_history_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "observations,byte_index,rank")?;
        for point in &self.history {
            for (byte_index, rank) in point.ranks.iter().enumerate() {
                writeln!(w, "{},{},{}", point.observations, byte_index, rank)?;
            }
        }
        Ok(())
    }
}

/// Re-run an attack on growing prefixes of a trace set and record how the
/// true-candidate ranks evolve.
///
/// The returned report carries the final checkpoint's ranking plus one
/// history point per checkpoint. The attack must designate true candidates,
/// otherwise there are no ranks to track.
pub fn rank_history<F>(ts: &TraceSet, checkpoints: &[usize], attack: F) -> Result<RankReport>
where
    F: Fn(&TraceSet) -> Result<RankReport>,
{
    validate_checkpoints(checkpoints, ts.len())?;
    let mut history = Vec::with_capacity(checkpoints.len());
    let mut last = None;
    for &count in checkpoints {
        let report = attack(&ts.prefix(count))?;
        let ranks = report.true_ranks().ok_or_else(|| {
            Error::InvalidArgument("rank history needs a designated true candidate".into())
        })?;
        history.push(HistoryPoint { observations: count, ranks });
        last = Some(report);
    }
    let mut report = last.ok_or(Error::BadCheckpoints)?;
    report.history = history;
    Ok(report)
}

pub(crate) fn validate_checkpoints(checkpoints: &[usize], n: usize) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(Error::BadCheckpoints);
    }
    let ascending = checkpoints.windows(2).all(|w| w[0] < w[1]);
    if !ascending || checkpoints[0] == 0 || *checkpoints.last().unwrap() > n {
        return Err(Error::BadCheckpoints);
    }
    Ok(())
}

#[derive(PartialEq)]
struct EnumState {
    score: f64,
    indices: Vec<u8>,
}

impl Eq for EnumState {}

impl Ord for EnumState {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Min-heap on score via reversed comparison.
        other.score.total_cmp(&self.score)
    }
}

impl PartialOrd for EnumState {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Naive product enumeration over per-byte ranked lists.
///
/// Visits full-key candidates in order of increasing rank product (sum of
/// per-byte log2 ranks) and returns the first one `accept` approves, or
/// `None` once `budget` candidates were tried.
pub fn enumerate_keys<F>(report: &RankReport, budget: usize, mut accept: F) -> Option<Vec<u16>>
where
    F: FnMut(&[u16]) -> bool,
{
    let positions = &report.positions;
    if positions.is_empty() {
        return None;
    }
    let mut heap = BinaryHeap::new();
    let mut seen = HashSet::new();
    let start = vec![0u8; positions.len()];
    seen.insert(start.clone());
    heap.push(EnumState { score: 0.0, indices: start });
    let mut tried = 0;
    while let Some(state) = heap.pop() {
        let key: Vec<u16> = state
            .indices
            .iter()
            .zip(positions)
            .map(|(&i, list)| list.entries[i as usize].candidate)
            .collect();
        tried += 1;
        if accept(&key) {
            return Some(key);
        }
        if tried >= budget {
            return None;
        }
        for p in 0..positions.len() {
            let next_index = state.indices[p] as usize + 1;
            if next_index >= positions[p].entries.len() {
                continue;
            }
            let mut indices = state.indices.clone();
            indices[p] = next_index as u8;
            if seen.insert(indices.clone()) {
                let score: f64 = indices
                    .iter()
                    .map(|&i| ((i as f64) + 1.0).log2())
                    .sum();
                heap.push(EnumState { score, indices });
            }
        }
    }
    None
}
