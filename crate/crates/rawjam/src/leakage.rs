//! Simulated read-after-write false-dependency timing channel.
//!
//! A conflicting writer pinned to the sibling logical processor hammers one
//! 4-byte word. Every victim read whose address shares the low 12 bits with
//! the jammed word is reissued (~10 cycles); reads landing elsewhere in the
//! same cache line pay a small residual penalty (~2 cycles). The simulator
//! turns an [`AccessTrace`] into a victim time in cycles:
//!
//! `time = base + word_penalty * word_hits + line_penalty * line_hits + noise`
//!
//! Prefetch-tagged accesses are cache-warming only and never conflict.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::ciphers::{
    aes::AesCtVictim, sm4::Sm4CnVictim, AccessTrace, CipherId, CipherKey, EntryKind,
    LINE_BYTES, TABLE_WORDS, WORDS_PER_LINE,
};
use crate::{Error, Result};

/// Execution environment the victim runs in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Ordinary user-space victim timed directly.
    User,
    /// Victim behind an enclave interface call: much larger base time and
    /// heavy-tailed measurement noise.
    Sgx,
}

/// Parameters of the simulated timing channel.
#[derive(Clone, Debug, PartialEq)]
pub struct LeakModel {
    /// Mean victim time without any conflicts, in cycles.
    pub base_cycles: f64,
    /// Extra cycles per access hitting the jammed word itself.
    pub word_penalty: f64,
    /// Extra cycles per access in the jammed line but a different word.
    pub line_penalty: f64,
    /// Standard deviation of the Gaussian measurement noise, in cycles.
    pub noise_sigma: f64,
    /// Jammed 4-byte word of the 256-byte table, in `0..64`
    /// (line = `jam_word / 16`, word within the line = `jam_word % 16`).
    pub jam_word: u8,
    pub profile: Profile,
    /// Fraction of samples hit by a heavy-tail disturbance (enclave exits,
    /// interrupts). Exercises the outlier filter; 0 outside the SGX profile.
    pub contamination_rate: f64,
    /// Uniform range of the heavy-tail shift, in cycles.
    pub contamination_shift: (f64, f64),
}

impl LeakModel {
    /// Hardened AES victim timed with an active sibling thread.
    pub fn aes_ct() -> Self {
        LeakModel {
            base_cycles: 2000.0,
            word_penalty: 10.0,
            line_penalty: 2.0,
            noise_sigma: 30.0,
            jam_word: 0,
            profile: Profile::User,
            contamination_rate: 0.0,
            contamination_shift: (3000.0, 20000.0),
        }
    }

    /// Cache-normalized SM4 victim.
    pub fn sm4_cn() -> Self {
        LeakModel { base_cycles: 700.0, ..LeakModel::aes_ct() }
    }

    /// Victim behind an SGX enclave interface call. The interface overhead
    /// dominates the base time and the noise is far larger and heavy-tailed.
    pub fn sgx_aes() -> Self {
        LeakModel {
            base_cycles: 14_600.0,
            noise_sigma: 300.0,
            profile: Profile::Sgx,
            contamination_rate: 0.07,
            ..LeakModel::aes_ct()
        }
    }

    /// Noise-free counter model: the "time" is exactly the number of
    /// jammed-word hits, as an instrumentation-based ground truth would be.
    pub fn synthetic_counter() -> Self {
        LeakModel {
            base_cycles: 0.0,
            word_penalty: 1.0,
            line_penalty: 0.0,
            noise_sigma: 0.0,
            ..LeakModel::aes_ct()
        }
    }

    /// Default model for a cipher under the given profile.
    pub fn for_cipher(cipher: CipherId, profile: Profile) -> Self {
        match (cipher, profile) {
            (CipherId::AesCt, Profile::User) => LeakModel::aes_ct(),
            (CipherId::Sm4Cn, Profile::User) => LeakModel::sm4_cn(),
            (CipherId::AesCt, Profile::Sgx) => LeakModel::sgx_aes(),
            (CipherId::Sm4Cn, Profile::Sgx) => {
                LeakModel { profile: Profile::Sgx, ..LeakModel::sgx_aes() }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.jam_word as usize >= TABLE_WORDS {
            return Err(Error::JamWordOutOfRange(self.jam_word as u32));
        }
        if self.word_penalty < 0.0 || self.line_penalty < 0.0 {
            return Err(Error::InvalidModel("penalties must be >= 0".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidModel("noise_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.contamination_rate) {
            return Err(Error::InvalidModel("contamination_rate must be in [0, 1]".into()));
        }
        if self.contamination_shift.1 < self.contamination_shift.0 {
            return Err(Error::InvalidModel("contamination_shift range is inverted".into()));
        }
        Ok(())
    }
}

/// Conflict tally of one trace against a jammed word.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConflictCount {
    /// Accesses whose byte offset lies in the jammed word.
    pub word_hits: u32,
    /// Accesses in the jammed line but a different word.
    pub line_hits: u32,
}

fn count_conflicts(trace: &AccessTrace, jam_word: u8) -> ConflictCount {
    let jam_line = jam_word / WORDS_PER_LINE as u8;
    let mut counts = ConflictCount::default();
    for e in trace {
        if e.kind == EntryKind::Prefetch {
            continue;
        }
        if e.offset / 4 == jam_word {
            counts.word_hits += 1;
        } else if e.offset / LINE_BYTES as u8 == jam_line {
            counts.line_hits += 1;
        }
    }
    counts
}

/// Count same-word and same-line-different-word accesses of a trace.
pub fn conflict_count(trace: &AccessTrace, jam_word: u8) -> Result<ConflictCount> {
    if jam_word as usize >= TABLE_WORDS {
        return Err(Error::JamWordOutOfRange(jam_word as u32));
    }
    Ok(count_conflicts(trace, jam_word))
}

/// Simulated victim time for an already-counted trace.
pub fn simulate_from_counts<R: Rng>(counts: ConflictCount, model: &LeakModel, rng: &mut R) -> f64 {
    let mut t = model.base_cycles
        + model.word_penalty * counts.word_hits as f64
        + model.line_penalty * counts.line_hits as f64;
    if model.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, model.noise_sigma).expect("validated sigma");
        t += normal.sample(rng);
    }
    if model.contamination_rate > 0.0 && rng.random::<f64>() < model.contamination_rate {
        t += rng.random_range(model.contamination_shift.0..model.contamination_shift.1);
    }
    t
}

/// Simulated victim time of one encryption, in cycles.
///
/// Deterministic given the state of `rng`.
pub fn simulate_time<R: Rng>(trace: &AccessTrace, model: &LeakModel, rng: &mut R) -> f64 {
    debug_assert!((model.jam_word as usize) < TABLE_WORDS);
    simulate_from_counts(count_conflicts(trace, model.jam_word), model, rng)
}

/// Persisted collection of (ciphertext, time) observations.
#[derive(Clone, Debug)]
pub struct TraceSet {
    pub cipher: CipherId,
    pub flags: u8,
    pub seed: u64,
    pub ciphertexts: Vec<[u8; 16]>,
    pub times: Vec<f64>,
    /// Model used to simulate the set, when known. Not persisted.
    pub model: Option<LeakModel>,
}

impl TraceSet {
    /// Flag bit: generated under the SGX profile.
    pub const FLAG_SGX: u8 = 0b0000_0001;
    /// Flag bit: records were dropped by outlier filtering, so record
    /// indices no longer line up with the generation substreams.
    pub const FLAG_FILTERED: u8 = 0b0000_0010;

    pub fn len(&self) -> usize {
        self.ciphertexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ciphertexts.is_empty()
    }

    /// The first `n` observations as a new set.
    pub fn prefix(&self, n: usize) -> TraceSet {
        TraceSet {
            cipher: self.cipher,
            flags: self.flags,
            seed: self.seed,
            ciphertexts: self.ciphertexts[..n].to_vec(),
            times: self.times[..n].to_vec(),
            model: self.model.clone(),
        }
    }
}

/// Independent random stream for one observation of a seeded run.
///
/// Stream 0 of the seed is reserved for auxiliary draws (e.g. key
/// derivation); record `i` uses stream `i + 1`. Each record's plaintext and
/// noise come from its own stream, so generation order does not matter.
pub fn record_rng(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

/// Plaintext of record `index` in a seeded run.
pub fn plaintext_for_record(seed: u64, index: u64) -> [u8; 16] {
    record_rng(seed, index).random()
}

/// Deterministic key for seeded runs that do not specify one.
pub fn key_for_seed(seed: u64) -> CipherKey {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(0);
    CipherKey::new(rng.random())
}

const GEN_CHUNK: usize = 4096;

fn fill_records<F>(
    encrypt: F,
    model: &LeakModel,
    seed: u64,
    trace_capacity: usize,
    ciphertexts: &mut [[u8; 16]],
    times: &mut [f64],
) where
    F: Fn(&[u8; 16], &mut AccessTrace) -> [u8; 16] + Sync,
{
    ciphertexts
        .par_chunks_mut(GEN_CHUNK)
        .zip(times.par_chunks_mut(GEN_CHUNK))
        .enumerate()
        .for_each(|(chunk_idx, (ct_chunk, time_chunk))| {
            let mut trace = AccessTrace::with_capacity(trace_capacity);
            for (j, (ct_out, t_out)) in ct_chunk.iter_mut().zip(time_chunk.iter_mut()).enumerate() {
                let index = (chunk_idx * GEN_CHUNK + j) as u64;
                let mut rng = record_rng(seed, index);
                let pt: [u8; 16] = rng.random();
                *ct_out = encrypt(&pt, &mut trace);
                *t_out = simulate_time(&trace, model, &mut rng);
            }
        });
}

/// Simulate `n` victim runs: seeded plaintexts, real ciphertexts, modeled times.
///
/// Reproducible per (seed, model, key); records use independent substreams,
/// so parallel and serial generation produce identical output.
pub fn generate_traceset(
    cipher: CipherId,
    n: usize,
    key: &CipherKey,
    model: &LeakModel,
    seed: u64,
) -> Result<TraceSet> {
    model.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("trace count must be >= 1".into()));
    }
    let mut ciphertexts = vec![[0u8; 16]; n];
    let mut times = vec![0.0f64; n];
    match cipher {
        CipherId::AesCt => {
            let victim = AesCtVictim::new(key);
            fill_records(
                |pt, trace| victim.encrypt_into(pt, trace),
                model,
                seed,
                640,
                &mut ciphertexts,
                &mut times,
            );
        }
        CipherId::Sm4Cn => {
            let victim = Sm4CnVictim::new(key);
            fill_records(
                |pt, trace| victim.encrypt_into(pt, trace),
                model,
                seed,
                4 + 128,
                &mut ciphertexts,
                &mut times,
            );
        }
    }
    let mut flags = 0;
    if model.profile == Profile::Sgx {
        flags |= TraceSet::FLAG_SGX;
    }
    Ok(TraceSet { cipher, flags, seed, ciphertexts, times, model: Some(model.clone()) })
}

/// Drop observations farther than `radius` cycles from the mean.
///
/// Returns the surviving set and the fraction kept.
pub fn filter_outliers(ts: &TraceSet, radius: f64) -> Result<(TraceSet, f64)> {
    if ts.is_empty() {
        return Err(Error::EmptyTraceSet);
    }
    let mean = ts.times.iter().sum::<f64>() / ts.len() as f64;
    let mut ciphertexts = Vec::new();
    let mut times = Vec::new();
    for (ct, &t) in ts.ciphertexts.iter().zip(&ts.times) {
        if (t - mean).abs() <= radius {
            ciphertexts.push(*ct);
            times.push(t);
        }
    }
    let pass_fraction = times.len() as f64 / ts.len() as f64;
    let filtered = TraceSet {
        cipher: ts.cipher,
        flags: ts.flags | TraceSet::FLAG_FILTERED,
        seed: ts.seed,
        ciphertexts,
        times,
        model: ts.model.clone(),
    };
    Ok((filtered, pass_fraction))
}

/// Mean simulated victim time with the writer parked on one page word.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanPoint {
    /// 4-byte word offset within the 4 KiB page, in `0..1024`.
    pub page_word: u16,
    pub mean_time: f64,
}

/// Result of scanning the 10-bit page-offset space for the table location.
#[derive(Clone, Debug)]
pub struct ScanOutcome {
    pub points: Vec<ScanPoint>,
    /// Page word with the highest mean time; ties break to the lowest offset.
    pub best_word: u16,
    /// All offsets produced the same mean time (nothing to locate).
    pub flat: bool,
}

/// Number of 4-byte words in a 4 KiB page: the address entropy an attacker
/// must scan when the table offset is unknown.
pub const PAGE_WORDS: usize = 1024;

/// Scan every page word offset, timing `n_per_offset` victim runs for each.
///
/// The table is assumed to start at page word 0, so offsets `0..64` alias
/// table words and anything above only ever observes the conflict-free base
/// time. The scan is read off as: in-table offsets stand out, and the peak
/// identifies the jam word to use for the attack.
pub fn scan_jam_offsets(
    cipher: CipherId,
    key: &CipherKey,
    model_template: &LeakModel,
    n_per_offset: usize,
    seed: u64,
) -> Result<ScanOutcome> {
    model_template.validate()?;
    if n_per_offset == 0 {
        return Err(Error::InvalidArgument("n_per_offset must be >= 1".into()));
    }
    let points: Vec<ScanPoint> = (0..PAGE_WORDS as u16)
        .into_par_iter()
        .map(|page_word| {
            let model = if (page_word as usize) < TABLE_WORDS {
                Some(LeakModel { jam_word: page_word as u8, ..model_template.clone() })
            } else {
                None
            };
            let mut trace = AccessTrace::with_capacity(640);
            let mut sum = 0.0;
            for i in 0..n_per_offset {
                let index = page_word as u64 * n_per_offset as u64 + i as u64;
                let mut rng = record_rng(seed, index);
                let pt: [u8; 16] = rng.random();
                sum += match &model {
                    Some(model) => {
                        match cipher {
                            CipherId::AesCt => {
                                AesCtVictim::new(key).encrypt_into(&pt, &mut trace);
                            }
                            CipherId::Sm4Cn => {
                                Sm4CnVictim::new(key).encrypt_into(&pt, &mut trace);
                            }
                        }
                        simulate_time(&trace, model, &mut rng)
                    }
                    // Off-table writes never alias a victim read.
                    None => simulate_from_counts(ConflictCount::default(), model_template, &mut rng),
                };
            }
            ScanPoint { page_word, mean_time: sum / n_per_offset as f64 }
        })
        .collect();

    let mut best = &points[0];
    for p in &points[1..] {
        if p.mean_time > best.mean_time {
            best = p;
        }
    }
    let min = points.iter().map(|p| p.mean_time).fold(f64::INFINITY, f64::min);
    let flat = best.mean_time - min <= 1e-9;
    Ok(ScanOutcome { points: points.clone(), best_word: best.page_word, flat })
}
