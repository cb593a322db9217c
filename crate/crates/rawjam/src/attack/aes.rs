//! Last-round correlation attack on the hardened AES victim.
//!
//! For a ciphertext byte `c` and last-round-key guess `k`, the table index
//! of the final SubBytes lookup is `S⁻¹(c ^ k)`. The hypothesis predicts an
//! access whenever that index falls into the jammed 4-byte word; its
//! correlation with the observed times peaks at the correct key byte. The
//! victim's three companion fetches per lookup also hit the jammed word
//! whenever their column matches, but the model deliberately ignores them:
//! they ride along as noise and only shave the peak correlation.

use crate::analysis::{
    rank_candidates, validate_checkpoints, BinaryColumnCorrelator, HistoryPoint,
    HypothesisMatrix, RankReport,
};
use crate::ciphers::aes::{aes_inv_sbox, aes_key_schedule, AES_SBOX};
use crate::ciphers::{word_of, CipherId, CipherKey, TABLE_WORDS, WORD_BYTES};
use crate::leakage::TraceSet;
use crate::{Error, Result};

/// Configuration of the last-round attack.
#[derive(Clone, Debug)]
pub struct AesAttackConfig {
    /// Jammed table word, `0..64`. 0 targets the first 4 bytes of the S-box.
    pub jam_word: u8,
    /// Observation counts at which to sample true-candidate ranks.
    /// Requires a designated true key; leave empty to skip.
    pub checkpoints: Vec<usize>,
}

impl Default for AesAttackConfig {
    fn default() -> Self {
        AesAttackConfig { jam_word: 0, checkpoints: Vec::new() }
    }
}

/// 1 iff the last-round lookup index `S⁻¹(c ^ k)` lies in the jammed word.
pub fn predict_access(c_byte: u8, k_guess: u8, jam_word: u8) -> bool {
    word_of(aes_inv_sbox(c_byte ^ k_guess)) == jam_word
}

/// Key guesses predicting an access for ciphertext byte value `c`: exactly
/// the four `c ^ S(i)` with `i` in the jammed word.
fn hit_keys_by_ciphertext(jam_word: u8) -> [[u16; WORD_BYTES]; 256] {
    let mut table = [[0u16; WORD_BYTES]; 256];
    for (c, hits) in table.iter_mut().enumerate() {
        for b in 0..WORD_BYTES {
            let idx = jam_word as usize * WORD_BYTES + b;
            hits[b] = (c as u8 ^ AES_SBOX.bytes[idx]) as u16;
        }
    }
    table
}

/// Full 0/1 hypothesis matrix for one ciphertext byte position.
pub fn build_hypothesis(ts: &TraceSet, byte_pos: usize, jam_word: u8) -> Result<HypothesisMatrix> {
    check_cipher(ts)?;
    check_jam(jam_word)?;
    if byte_pos >= 16 {
        return Err(Error::InvalidArgument(format!("byte position {byte_pos} out of range")));
    }
    Ok(HypothesisMatrix::from_fn(ts.len(), 256, |r, k| {
        predict_access(ts.ciphertexts[r][byte_pos], k as u8, jam_word) as u16
    }))
}

/// Correlation attack over all 16 byte positions.
///
/// With `true_key` given, the report carries the rank of each true
/// last-round key byte, plus a rank history at the configured checkpoints.
pub fn attack(
    ts: &TraceSet,
    cfg: &AesAttackConfig,
    true_key: Option<&CipherKey>,
) -> Result<RankReport> {
    check_cipher(ts)?;
    check_jam(cfg.jam_word)?;
    if ts.is_empty() {
        return Err(Error::EmptyTraceSet);
    }
    let degenerate = ts.times.iter().all(|&t| t == ts.times[0]);
    if degenerate {
        return Err(Error::DegenerateTimes);
    }
    if !cfg.checkpoints.is_empty() {
        validate_checkpoints(&cfg.checkpoints, ts.len())?;
        if true_key.is_none() {
            return Err(Error::InvalidArgument(
                "rank checkpoints need a designated true key".into(),
            ));
        }
    }

    // The attacked unknowns are the last-round key bytes.
    let true_round_key: Option<[u8; 16]> = true_key.map(|k| aes_key_schedule(k).0[10]);
    let hit_table = hit_keys_by_ciphertext(cfg.jam_word);

    let mut correlators: Vec<BinaryColumnCorrelator> =
        (0..16).map(|_| BinaryColumnCorrelator::new(256)).collect();
    let mut history = Vec::with_capacity(cfg.checkpoints.len());
    let mut next_checkpoint = cfg.checkpoints.iter().copied().peekable();

    for (i, (ct, &y)) in ts.ciphertexts.iter().zip(&ts.times).enumerate() {
        for (byte_pos, correlator) in correlators.iter_mut().enumerate() {
            correlator.push_hits(&hit_table[ct[byte_pos] as usize], y);
        }
        if next_checkpoint.peek() == Some(&(i + 1)) {
            next_checkpoint.next();
            let truth = true_round_key.expect("checked above");
            let ranks = correlators
                .iter()
                .enumerate()
                .map(|(byte_pos, c)| {
                    rank_candidates(&c.correlations(), Some(truth[byte_pos] as u16))
                        .true_rank
                        .expect("true candidate designated")
                })
                .collect();
            history.push(HistoryPoint { observations: i + 1, ranks });
        }
    }

    let positions = correlators
        .iter()
        .enumerate()
        .map(|(byte_pos, c)| {
            let truth = true_round_key.map(|rk| rk[byte_pos] as u16);
            rank_candidates(&c.correlations(), truth)
        })
        .collect();
    Ok(RankReport { positions, history })
}

fn check_cipher(ts: &TraceSet) -> Result<()> {
    if ts.cipher != CipherId::AesCt {
        return Err(Error::WrongCipher { expected: CipherId::AesCt, found: ts.cipher });
    }
    Ok(())
}

fn check_jam(jam_word: u8) -> Result<()> {
    if jam_word as usize >= TABLE_WORDS {
        return Err(Error::JamWordOutOfRange(jam_word as u32));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ciphers::aes::AES_SBOX;
    use crate::leakage::{generate_traceset, key_for_seed, LeakModel};

    #[test]
    fn predict_access_block_membership() {
        // Index 0 lives in word 0; index 200 lives in word 50.
        for k in [0u8, 0x3c, 0xff] {
            assert!(predict_access(AES_SBOX.bytes[0] ^ k, k, 0));
            assert!(!predict_access(AES_SBOX.bytes[200] ^ k, k, 0));
            assert!(predict_access(AES_SBOX.bytes[200] ^ k, k, 50));
        }
    }

    #[test]
    fn predict_access_sums_to_block_size() {
        for k in [0u8, 1, 77, 255] {
            let ones = (0..=255u8).filter(|&c| predict_access(c, k, 0)).count();
            assert_eq!(ones, 4);
        }
    }

    #[test]
    fn hypothesis_matrix_matches_predict_access() {
        let key = key_for_seed(21);
        let ts = generate_traceset(CipherId::AesCt, 40, &key, &LeakModel::aes_ct(), 21).unwrap();
        let m = build_hypothesis(&ts, 5, 0).unwrap();
        assert_eq!(m.rows(), 40);
        assert_eq!(m.cols(), 256);
        for r in 0..m.rows() {
            let c = ts.ciphertexts[r][5];
            for k in 0..256 {
                assert_eq!(m.row(r)[k], predict_access(c, k as u8, 0) as u16);
            }
        }
        // Only the selected ciphertext byte matters.
        let m0 = build_hypothesis(&ts, 0, 0).unwrap();
        let differs = (0..m.rows()).any(|r| m.row(r) != m0.row(r));
        assert!(differs);
    }

    #[test]
    fn column_sums_track_hit_probability() {
        let key = key_for_seed(22);
        let n = 4000;
        let ts = generate_traceset(CipherId::AesCt, n, &key, &LeakModel::aes_ct(), 22).unwrap();
        let m = build_hypothesis(&ts, 3, 0).unwrap();
        let mut sums = vec![0u32; 256];
        for r in 0..m.rows() {
            for (k, &v) in m.row(r).iter().enumerate() {
                sums[k] += v as u32;
            }
        }
        let expected = n as f64 / 64.0;
        for &s in &sums {
            assert!((s as f64 - expected).abs() < expected, "column sum {s}");
        }
    }

    #[test]
    fn rejects_wrong_inputs() {
        let key = key_for_seed(23);
        let ts = generate_traceset(CipherId::Sm4Cn, 4, &key, &LeakModel::sm4_cn(), 23).unwrap();
        assert!(matches!(
            attack(&ts, &AesAttackConfig::default(), None),
            Err(Error::WrongCipher { .. })
        ));
        let ts = generate_traceset(CipherId::AesCt, 4, &key, &LeakModel::aes_ct(), 23).unwrap();
        let cfg = AesAttackConfig { jam_word: 99, ..Default::default() };
        assert!(matches!(attack(&ts, &cfg, None), Err(Error::JamWordOutOfRange(99))));
    }

    #[test]
    fn degenerate_times_are_an_error() {
        let key = key_for_seed(24);
        let model = LeakModel {
            word_penalty: 0.0,
            line_penalty: 0.0,
            noise_sigma: 0.0,
            ..LeakModel::aes_ct()
        };
        let ts = generate_traceset(CipherId::AesCt, 16, &key, &model, 24).unwrap();
        assert!(matches!(
            attack(&ts, &AesAttackConfig::default(), None),
            Err(Error::DegenerateTimes)
        ));
    }
}
