//! SM4 victim with cache-normalizing S-box prefetch.
//!
//! Before the first round the implementation touches one byte in each of the
//! four table lines so the whole S-box is cache-resident; afterwards each of
//! the 32 rounds performs four plain byte lookups. The prefetches are tagged
//! so the leakage model can treat them as timing-neutral.

use super::{AccessTrace, CipherKey, EntryKind, SboxTable, TraceEntry, LINE_BYTES, TABLE_LINES};

pub const SM4_SBOX: SboxTable = SboxTable::new([
    0xd6, 0x90, 0xe9, 0xfe, 0xcc, 0xe1, 0x3d, 0xb7, 0x16, 0xb6, 0x14, 0xc2, 0x28, 0xfb, 0x2c, 0x05,
    0x2b, 0x67, 0x9a, 0x76, 0x2a, 0xbe, 0x04, 0xc3, 0xaa, 0x44, 0x13, 0x26, 0x49, 0x86, 0x06, 0x99,
    0x9c, 0x42, 0x50, 0xf4, 0x91, 0xef, 0x98, 0x7a, 0x33, 0x54, 0x0b, 0x43, 0xed, 0xcf, 0xac, 0x62,
    0xe4, 0xb3, 0x1c, 0xa9, 0xc9, 0x08, 0xe8, 0x95, 0x80, 0xdf, 0x94, 0xfa, 0x75, 0x8f, 0x3f, 0xa6,
    0x47, 0x07, 0xa7, 0xfc, 0xf3, 0x73, 0x17, 0xba, 0x83, 0x59, 0x3c, 0x19, 0xe6, 0x85, 0x4f, 0xa8,
    0x68, 0x6b, 0x81, 0xb2, 0x71, 0x64, 0xda, 0x8b, 0xf8, 0xeb, 0x0f, 0x4b, 0x70, 0x56, 0x9d, 0x35,
    0x1e, 0x24, 0x0e, 0x5e, 0x63, 0x58, 0xd1, 0xa2, 0x25, 0x22, 0x7c, 0x3b, 0x01, 0x21, 0x78, 0x87,
    0xd4, 0x00, 0x46, 0x57, 0x9f, 0xd3, 0x27, 0x52, 0x4c, 0x36, 0x02, 0xe7, 0xa0, 0xc4, 0xc8, 0x9e,
    0xea, 0xbf, 0x8a, 0xd2, 0x40, 0xc7, 0x38, 0xb5, 0xa3, 0xf7, 0xf2, 0xce, 0xf9, 0x61, 0x15, 0xa1,
    0xe0, 0xae, 0x5d, 0xa4, 0x9b, 0x34, 0x1a, 0x55, 0xad, 0x93, 0x32, 0x30, 0xf5, 0x8c, 0xb1, 0xe3,
    0x1d, 0xf6, 0xe2, 0x2e, 0x82, 0x66, 0xca, 0x60, 0xc0, 0x29, 0x23, 0xab, 0x0d, 0x53, 0x4e, 0x6f,
    0xd5, 0xdb, 0x37, 0x45, 0xde, 0xfd, 0x8e, 0x2f, 0x03, 0xff, 0x6a, 0x72, 0x6d, 0x6c, 0x5b, 0x51,
    0x8d, 0x1b, 0xaf, 0x92, 0xbb, 0xdd, 0xbc, 0x7f, 0x11, 0xd9, 0x5c, 0x41, 0x1f, 0x10, 0x5a, 0xd8,
    0x0a, 0xc1, 0x31, 0x88, 0xa5, 0xcd, 0x7b, 0xbd, 0x2d, 0x74, 0xd0, 0x12, 0xb8, 0xe5, 0xb4, 0xb0,
    0x89, 0x69, 0x97, 0x4a, 0x0c, 0x96, 0x77, 0x7e, 0x65, 0xb9, 0xf1, 0x09, 0xc5, 0x6e, 0xc6, 0x84,
    0x18, 0xf0, 0x7d, 0xec, 0x3a, 0xdc, 0x4d, 0x20, 0x79, 0xee, 0x5f, 0x3e, 0xd7, 0xcb, 0x39, 0x48,
]);

const FK: [u32; 4] = [0xa3b1bac6, 0x56aa3350, 0x677d9197, 0xb27022dc];

const CK: [u32; 32] = [
    0x00070e15, 0x1c232a31, 0x383f464d, 0x545b6269, 0x70777e85, 0x8c939aa1, 0xa8afb6bd, 0xc4cbd2d9,
    0xe0e7eef5, 0xfc030a11, 0x181f262d, 0x343b4249, 0x50575e65, 0x6c737a81, 0x888f969d, 0xa4abb2b9,
    0xc0c7ced5, 0xdce3eaf1, 0xf8ff060d, 0x141b2229, 0x30373e45, 0x4c535a61, 0x686f767d, 0x848b9299,
    0xa0a7aeb5, 0xbcc3cad1, 0xd8dfe6ed, 0xf4fb0209, 0x10171e25, 0x2c333a41, 0x484f565d, 0x646b7279,
];

/// Apply the S-box to each byte of a 32-bit word.
#[inline]
pub fn sbox_word(x: u32) -> u32 {
    let b = x.to_be_bytes();
    u32::from_be_bytes([
        SM4_SBOX.bytes[b[0] as usize],
        SM4_SBOX.bytes[b[1] as usize],
        SM4_SBOX.bytes[b[2] as usize],
        SM4_SBOX.bytes[b[3] as usize],
    ])
}

/// Round-function diffusion `L`.
#[inline]
pub fn lmix(b: u32) -> u32 {
    b ^ b.rotate_left(2) ^ b.rotate_left(10) ^ b.rotate_left(18) ^ b.rotate_left(24)
}

/// Key-schedule diffusion `L'`.
#[inline]
fn lmix_key(b: u32) -> u32 {
    b ^ b.rotate_left(13) ^ b.rotate_left(23)
}

/// The 32 round keys of SM4, `rk[0]` first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sm4RoundKeys(pub [u32; 32]);

impl Sm4RoundKeys {
    /// Round key for a 1-based round number.
    pub fn round(&self, r: u8) -> u32 {
        self.0[r as usize - 1]
    }
}

pub fn sm4_key_schedule(key: &CipherKey) -> Sm4RoundKeys {
    let kb = key.as_bytes();
    let mut k = [0u32; 36];
    for i in 0..4 {
        let w = u32::from_be_bytes(kb[4 * i..4 * i + 4].try_into().unwrap());
        k[i] = w ^ FK[i];
    }
    let mut rk = [0u32; 32];
    for i in 0..32 {
        k[i + 4] = k[i] ^ lmix_key(sbox_word(k[i + 1] ^ k[i + 2] ^ k[i + 3] ^ CK[i]));
        rk[i] = k[i + 4];
    }
    Sm4RoundKeys(rk)
}

/// Invert the key schedule from the last four round keys (rounds 29..=32).
///
/// The schedule step is `K[i+4] = K[i] ^ L'(S(K[i+1] ^ K[i+2] ^ K[i+3] ^ CK[i]))`,
/// so four consecutive schedule words determine the one below them; walking
/// from `K[32..36] = (k29, k30, k31, k32)` back to `K[0..4]` and removing the
/// whitening constants yields the master key. The inversion is total: any
/// four words map to some key.
pub fn sm4_recover_master_key(k29: u32, k30: u32, k31: u32, k32: u32) -> CipherKey {
    let mut k = [0u32; 36];
    k[32] = k29;
    k[33] = k30;
    k[34] = k31;
    k[35] = k32;
    for i in (0..32).rev() {
        k[i] = k[i + 4] ^ lmix_key(sbox_word(k[i + 1] ^ k[i + 2] ^ k[i + 3] ^ CK[i]));
    }
    let mut out = [0u8; 16];
    for i in 0..4 {
        out[4 * i..4 * i + 4].copy_from_slice(&(k[i] ^ FK[i]).to_be_bytes());
    }
    CipherKey::new(out)
}

/// SM4 victim with a precomputed key schedule.
pub struct Sm4CnVictim {
    round_keys: Sm4RoundKeys,
}

impl Sm4CnVictim {
    pub fn new(key: &CipherKey) -> Self {
        Sm4CnVictim { round_keys: sm4_key_schedule(key) }
    }

    pub fn round_keys(&self) -> &Sm4RoundKeys {
        &self.round_keys
    }

    /// Encrypt one block, appending the access trace to a reusable buffer.
    pub fn encrypt_into(&self, plaintext: &[u8; 16], trace: &mut AccessTrace) -> [u8; 16] {
        trace.clear();
        // Cache-state normalization: touch column 0 of each table line.
        for l in 0..TABLE_LINES as u8 {
            trace.push(TraceEntry {
                offset: l * LINE_BYTES as u8,
                round: 0,
                position: l,
                kind: EntryKind::Prefetch,
            });
        }
        let mut x = [0u32; 4];
        for (i, word) in x.iter_mut().enumerate() {
            *word = u32::from_be_bytes(plaintext[4 * i..4 * i + 4].try_into().unwrap());
        }
        for (i, &rk) in self.round_keys.0.iter().enumerate() {
            let t = x[1] ^ x[2] ^ x[3] ^ rk;
            let tb = t.to_be_bytes();
            let mut sb = [0u8; 4];
            for (b, (&idx, out)) in tb.iter().zip(sb.iter_mut()).enumerate() {
                trace.push(TraceEntry {
                    offset: idx,
                    round: i as u8 + 1,
                    position: b as u8,
                    kind: EntryKind::Lookup,
                });
                *out = SM4_SBOX.bytes[idx as usize];
            }
            let next = x[0] ^ lmix(u32::from_be_bytes(sb));
            x = [x[1], x[2], x[3], next];
        }
        let mut ct = [0u8; 16];
        for i in 0..4 {
            ct[4 * i..4 * i + 4].copy_from_slice(&x[3 - i].to_be_bytes());
        }
        ct
    }
}

/// Encrypt one block and return both the ciphertext and the access trace.
pub fn sm4_cn_encrypt(key: &CipherKey, plaintext: &[u8; 16]) -> ([u8; 16], AccessTrace) {
    let victim = Sm4CnVictim::new(key);
    let mut trace = AccessTrace::with_capacity(4 + 128);
    let ct = victim.encrypt_into(plaintext, &mut trace);
    (ct, trace)
}
