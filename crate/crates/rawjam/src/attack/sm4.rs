//! Recursive five-round correlation attack on the cache-normalized SM4
//! victim.
//!
//! Unwinding the Feistel structure from the ciphertext, the round-r S-box
//! input is `x_r = w1 ^ w2 ^ w3 ^ k_r` over state words that are known once
//! every round key above `r` is known. A jammed-word indicator on a byte of
//! `x_r` depends only on the top 6 bits of the corresponding key byte, so
//! one round of attack yields 24 of 32 key bits. The missing low bits of
//! the round above feed the next round's state replay, so each subsequent
//! round jointly enumerates the 256 completions of the previous round key
//! with its own 64 per-byte candidates; a completion's correlations are
//! accumulated across the four byte positions, which makes the correct
//! completion stand far above every 6-bit peak. Five rounds (32 down to 28)
//! pin down `k32..k29`, and inverting the key schedule yields the master
//! key.

use std::fmt;

use rayon::prelude::*;

use crate::analysis::{rank_candidates, Correlation, RankedList, RankReport};
use crate::ciphers::sm4::{lmix, sbox_word, sm4_key_schedule, sm4_recover_master_key, Sm4CnVictim};
use crate::ciphers::{AccessTrace, CipherId, CipherKey, TABLE_WORDS};
use crate::leakage::{plaintext_for_record, TraceSet};
use crate::{Error, Result};

/// Configuration of the five-round attack.
#[derive(Clone, Debug)]
pub struct Sm4AttackConfig {
    /// Jammed table word, `0..64`.
    pub jam_word: u8,
    /// Observations used for each round's decision.
    pub traces_per_round: usize,
    /// Number of completion candidates carried between rounds. 1 commits
    /// greedily to the top candidate; more guards against near-ties.
    pub beam_width: usize,
}

impl Default for Sm4AttackConfig {
    fn default() -> Self {
        Sm4AttackConfig { jam_word: 0, traces_per_round: 40_000, beam_width: 1 }
    }
}

/// Top 6 bits of each byte of a round key, as recovered by one round of
/// attack. Byte 0 is the most significant byte of the word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartialRoundKey {
    pub high6: [u8; 4],
}

impl PartialRoundKey {
    /// Bits of the round key covered by the partial: the top 6 of each byte.
    pub const KNOWN_MASK: u32 = 0xfcfc_fcfc;

    /// Combine with an 8-bit completion (2 low bits per byte, byte 0 in the
    /// completion's top bits) into a full round key word.
    pub fn assemble(&self, completion: u8) -> u32 {
        let mut bytes = [0u8; 4];
        for (i, b) in bytes.iter_mut().enumerate() {
            let low = (completion >> (6 - 2 * i)) & 0b11;
            *b = (self.high6[i] << 2) | low;
        }
        u32::from_be_bytes(bytes)
    }

    pub fn of_word(word: u32) -> Self {
        let b = word.to_be_bytes();
        PartialRoundKey { high6: [b[0] >> 2, b[1] >> 2, b[2] >> 2, b[3] >> 2] }
    }
}

/// Recovered knowledge going into one round of attack.
#[derive(Clone, Debug, Default)]
pub struct Sm4RoundState {
    /// Fully known round keys, `k32` first, contiguous downwards. The state
    /// words they imply are replayed per observation from the ciphertext.
    pub full_keys: Vec<u32>,
    /// 24-bit partial (top 6 bits per byte) of the next round key down.
    pub partial_next: Option<PartialRoundKey>,
}

/// Result of one round of attack.
#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub round: u8,
    /// 64-candidate rankings for the top-6 bits of each byte of `k_round`,
    /// under the best completion when one was enumerated.
    pub six_bit: Vec<RankedList>,
    /// Accumulated scores of the 256 completions of `k_{round+1}`;
    /// `None` at round 32 where nothing is deferred.
    pub completion: Option<RankedList>,
}

/// 1 iff the round-r S-box index `u ^ k` lies in the jammed word, for one
/// byte. Only the top 6 bits of the guess matter: the low 2 bits never
/// change the index's 4-byte word.
#[inline]
pub fn predict_round_access(u_byte: u8, k_byte_guess: u8, jam_word: u8) -> bool {
    (u_byte ^ k_byte_guess) >> 2 == jam_word
}

/// Replay the cipher structure backwards from a ciphertext through the given
/// round keys (`k32` first). Returns the S-box input word of the deepest
/// replayed round (round `33 - known_keys.len()`) and the state words after
/// that round's unwinding.
pub fn unwind_rounds(ciphertext: &[u8; 16], known_keys: &[u32]) -> (u32, [u32; 4]) {
    let mut w = initial_state(ciphertext);
    let mut x = 0u32;
    for &k in known_keys {
        x = w[0] ^ w[1] ^ w[2] ^ k;
        let fresh = lmix(sbox_word(x)) ^ w[3];
        w = [fresh, w[0], w[1], w[2]];
    }
    (x, w)
}

/// Ciphertext words numbered from the last output word backwards, the order
/// in which the Feistel unwinding consumes them.
fn initial_state(ciphertext: &[u8; 16]) -> [u32; 4] {
    let mut out = [0u32; 4];
    for (i, w) in out.iter_mut().enumerate() {
        let j = 3 - i;
        *w = u32::from_be_bytes(ciphertext[4 * j..4 * j + 4].try_into().unwrap());
    }
    out
}

/// Per-completion result of a joint enumeration round.
struct CompletionScore {
    acc: f64,
    six_bit: Vec<RankedList>,
}

/// Correlate the one-hot 6-bit indicator of each byte of `u = x_r ^ k_r`
/// over a stream of (u, time) observations.
struct RoundCorrelator {
    per_byte: Vec<crate::analysis::BinaryColumnCorrelator>,
    jam_word: u8,
}

impl RoundCorrelator {
    fn new(jam_word: u8) -> Self {
        RoundCorrelator {
            per_byte: (0..4).map(|_| crate::analysis::BinaryColumnCorrelator::new(64)).collect(),
            jam_word,
        }
    }

    #[inline]
    fn push(&mut self, u: u32, y: f64) {
        let bytes = u.to_be_bytes();
        for (b, correlator) in bytes.iter().zip(self.per_byte.iter_mut()) {
            // Exactly one 6-bit candidate predicts an access for this byte.
            let hit = [((b >> 2) ^ self.jam_word) as u16];
            correlator.push_hits(&hit, y);
        }
    }

    fn ranked(&self) -> Vec<RankedList> {
        self.per_byte.iter().map(|c| rank_candidates(&c.correlations(), None)).collect()
    }
}

fn best_r(list: &RankedList) -> f64 {
    let top = list.best();
    if top.correlation.degenerate {
        0.0
    } else {
        top.correlation.r
    }
}

/// One round of attack.
///
/// At round 32 this is a plain 6-bit-per-byte correlation attack on
/// `x32 = c1 ^ c2 ^ c3 ^ k32`. Below 32 it jointly enumerates the 256
/// completions of the round key above (whose low bits gate the state
/// replay) with the 64 candidates per byte of this round's key, and keeps
/// the completion with the highest correlation accumulated over the four
/// byte positions.
pub fn attack_round(
    ts: &TraceSet,
    recovered: &Sm4RoundState,
    round: u8,
    cfg: &Sm4AttackConfig,
) -> Result<RoundOutcome> {
    validate_inputs(ts, cfg)?;
    if !(28..=32).contains(&round) {
        return Err(Error::InvalidArgument(format!("round {round} outside the attacked range")));
    }
    if round == 32 {
        if !recovered.full_keys.is_empty() || recovered.partial_next.is_some() {
            return Err(Error::InvalidArgument("round 32 starts from no recovered keys".into()));
        }
    } else {
        let expected_full = (31 - round) as usize;
        if recovered.full_keys.len() != expected_full || recovered.partial_next.is_none() {
            return Err(Error::MissingRoundKeys { round });
        }
    }

    let n_use = ts.len().min(cfg.traces_per_round);
    let base: Vec<[u32; 4]> = ts.ciphertexts[..n_use]
        .iter()
        .map(|ct| unwind_rounds(ct, &recovered.full_keys).1)
        .collect();
    let times = &ts.times[..n_use];

    if round == 32 {
        let mut correlator = RoundCorrelator::new(cfg.jam_word);
        for (w, &y) in base.iter().zip(times) {
            correlator.push(w[0] ^ w[1] ^ w[2], y);
        }
        return Ok(RoundOutcome { round, six_bit: correlator.ranked(), completion: None });
    }

    let partial = recovered.partial_next.expect("checked above");
    let scores = joint_completions(&base, times, partial, cfg);
    let acc: Vec<Correlation> = scores.iter().map(|s| Correlation::of(s.acc)).collect();
    let completion_ranking = rank_candidates(&acc, None);
    let best = completion_ranking.best().candidate as usize;
    Ok(RoundOutcome {
        round,
        six_bit: scores[best].six_bit.clone(),
        completion: Some(completion_ranking),
    })
}

/// Score all 256 completions of the partially known round key above.
fn joint_completions(
    base: &[[u32; 4]],
    times: &[f64],
    partial: PartialRoundKey,
    cfg: &Sm4AttackConfig,
) -> Vec<CompletionScore> {
    (0u16..256)
        .into_par_iter()
        .map(|e| {
            let key_above = partial.assemble(e as u8);
            let mut correlator = RoundCorrelator::new(cfg.jam_word);
            for (w, &y) in base.iter().zip(times) {
                let x = w[0] ^ w[1] ^ w[2] ^ key_above;
                let fresh = lmix(sbox_word(x)) ^ w[3];
                // State rotates to (fresh, w0, w1, w2); the next round's
                // S-box input is their XOR with this round's key.
                let u = fresh ^ w[0] ^ w[1];
                correlator.push(u, y);
            }
            let six_bit = correlator.ranked();
            let acc = six_bit.iter().map(best_r).sum();
            CompletionScore { acc, six_bit }
        })
        .collect()
}

/// Outcome of a successful full attack.
#[derive(Clone, Debug)]
pub struct Sm4AttackReport {
    /// Round outcomes in attack order (32 down to 28).
    pub rounds: Vec<RoundOutcome>,
    /// Recovered round keys `k29, k30, k31, k32`.
    pub round_keys: [u32; 4],
    pub key: CipherKey,
    /// The redundant top-6 bits of `k28` recovered at the last round agree
    /// with the schedule re-derived from the recovered master key.
    pub schedule_consistent: bool,
    /// Whether the seeded re-encryption check could be run (it cannot after
    /// outlier filtering, which drops the record-to-substream alignment).
    pub reencryption_checked: bool,
}

impl Sm4AttackReport {
    /// Per-round 6-bit rankings in the shared report shape.
    pub fn round_report(&self, round: u8) -> Option<RankReport> {
        self.rounds
            .iter()
            .find(|o| o.round == round)
            .map(|o| RankReport { positions: o.six_bit.clone(), history: Vec::new() })
    }
}

/// Diagnostics reported when the recovered key fails verification.
#[derive(Debug, Clone)]
pub struct Sm4Failure {
    pub candidate_key: CipherKey,
    pub reason: String,
    pub round_summaries: Vec<String>,
}

impl fmt::Display for Sm4Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (best candidate {})", self.reason, self.candidate_key)?;
        for s in &self.round_summaries {
            writeln!(f, "  {s}")?;
        }
        Ok(())
    }
}

struct Path {
    full_keys: Vec<u32>,
    partial: PartialRoundKey,
    score: f64,
    rounds: Vec<RoundOutcome>,
}

/// Run the full five-round cascade and invert the key schedule.
///
/// The recovered key is accepted only if the schedule re-derived from it
/// matches the redundant `k28` bits from the last round, and (for unfiltered
/// seeded sets) re-encrypting the first record's plaintext reproduces its
/// ciphertext. On failure the error carries per-round diagnostics.
pub fn full_attack(ts: &TraceSet, cfg: &Sm4AttackConfig) -> Result<Sm4AttackReport> {
    validate_inputs(ts, cfg)?;
    if cfg.beam_width == 0 {
        return Err(Error::InvalidArgument("beam width must be >= 1".into()));
    }

    let round32 = attack_round(ts, &Sm4RoundState::default(), 32, cfg)?;
    let partial32 = PartialRoundKey {
        high6: [
            round32.six_bit[0].best().candidate as u8,
            round32.six_bit[1].best().candidate as u8,
            round32.six_bit[2].best().candidate as u8,
            round32.six_bit[3].best().candidate as u8,
        ],
    };
    let mut paths = vec![Path {
        full_keys: Vec::new(),
        partial: partial32,
        score: round32.six_bit.iter().map(best_r).sum(),
        rounds: vec![round32],
    }];

    let n_use = ts.len().min(cfg.traces_per_round);
    let times = &ts.times[..n_use];
    for round in [31u8, 30, 29, 28] {
        let mut expanded = Vec::new();
        for path in &paths {
            let base: Vec<[u32; 4]> = ts.ciphertexts[..n_use]
                .iter()
                .map(|ct| unwind_rounds(ct, &path.full_keys).1)
                .collect();
            let scores = joint_completions(&base, times, path.partial, cfg);
            let acc: Vec<Correlation> = scores.iter().map(|s| Correlation::of(s.acc)).collect();
            let ranking = rank_candidates(&acc, None);
            for take in 0..cfg.beam_width.min(ranking.entries.len()) {
                let chosen = &ranking.entries[take];
                let completion = chosen.candidate as u8;
                let score = &scores[completion as usize];
                let mut full_keys = path.full_keys.clone();
                full_keys.push(path.partial.assemble(completion));
                let partial = PartialRoundKey {
                    high6: [
                        score.six_bit[0].best().candidate as u8,
                        score.six_bit[1].best().candidate as u8,
                        score.six_bit[2].best().candidate as u8,
                        score.six_bit[3].best().candidate as u8,
                    ],
                };
                let mut rounds = path.rounds.clone();
                rounds.push(RoundOutcome {
                    round,
                    six_bit: score.six_bit.clone(),
                    completion: Some(ranking.clone()),
                });
                expanded.push(Path {
                    full_keys,
                    partial,
                    score: path.score + chosen.correlation.r,
                    rounds,
                });
            }
        }
        expanded.sort_by(|a, b| b.score.total_cmp(&a.score));
        expanded.truncate(cfg.beam_width);
        paths = expanded;
    }

    let mut first_failure: Option<Sm4Failure> = None;
    for path in &paths {
        // full_keys holds (k32, k31, k30, k29); partial is the k28 redundancy.
        let [k32, k31, k30, k29]: [u32; 4] = path.full_keys.clone().try_into().expect("4 rounds");
        let key = sm4_recover_master_key(k29, k30, k31, k32);
        let schedule = sm4_key_schedule(&key);
        let consistent = PartialRoundKey::of_word(schedule.round(28)) == path.partial;
        let filtered = ts.flags & TraceSet::FLAG_FILTERED != 0;
        let mut reencrypts = true;
        if !filtered {
            let pt = plaintext_for_record(ts.seed, 0);
            let mut scratch = AccessTrace::with_capacity(4 + 128);
            let ct = Sm4CnVictim::new(&key).encrypt_into(&pt, &mut scratch);
            reencrypts = ct == ts.ciphertexts[0];
        }
        if consistent && reencrypts {
            return Ok(Sm4AttackReport {
                rounds: path.rounds.clone(),
                round_keys: [k29, k30, k31, k32],
                key,
                schedule_consistent: consistent,
                reencryption_checked: !filtered,
            });
        }
        if first_failure.is_none() {
            let reason = if !consistent {
                "re-derived schedule disagrees with the redundant k28 bits".to_string()
            } else {
                "recovered key does not re-encrypt the first record".to_string()
            };
            first_failure = Some(Sm4Failure {
                candidate_key: key,
                reason,
                round_summaries: path.rounds.iter().map(summarize_round).collect(),
            });
        }
    }
    Err(Error::Sm4AttackFailed(Box::new(first_failure.expect("at least one path"))))
}

fn summarize_round(outcome: &RoundOutcome) -> String {
    let bytes: Vec<String> = outcome
        .six_bit
        .iter()
        .map(|list| {
            let top = list.best();
            let runner_up = list.entries.get(1).map(|e| e.correlation.r).unwrap_or(0.0);
            format!("0x{:02x} (r={:.4}, next {:.4})", top.candidate, top.correlation.r, runner_up)
        })
        .collect();
    let completion = outcome
        .completion
        .as_ref()
        .map(|c| {
            let top = c.best();
            let runner_up = c.entries.get(1).map(|e| e.correlation.r).unwrap_or(0.0);
            format!(
                "; completion 0x{:02x} (acc={:.4}, next {:.4})",
                top.candidate, top.correlation.r, runner_up
            )
        })
        .unwrap_or_default();
    format!("round {}: top-6-bit bytes {}{}", outcome.round, bytes.join(", "), completion)
}

fn validate_inputs(ts: &TraceSet, cfg: &Sm4AttackConfig) -> Result<()> {
    if ts.cipher != CipherId::Sm4Cn {
        return Err(Error::WrongCipher { expected: CipherId::Sm4Cn, found: ts.cipher });
    }
    if ts.is_empty() {
        return Err(Error::EmptyTraceSet);
    }
    if cfg.jam_word as usize >= TABLE_WORDS {
        return Err(Error::JamWordOutOfRange(cfg.jam_word as u32));
    }
    if cfg.traces_per_round == 0 {
        return Err(Error::InvalidArgument("traces_per_round must be >= 1".into()));
    }
    Ok(())
}
