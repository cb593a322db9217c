//! AES-128 victim with the four-fetch constant-cache-profile S-box lookup.
//!
//! Every SubBytes lookup of index `i` pulls one byte from each of the four
//! table lines at column `i % 64` into a local buffer and then selects the
//! wanted entry from the buffer. The cache sees the same four lines touched
//! for every lookup; only the column (and therefore the 4-byte word) varies
//! with the data.

use super::{
    AccessTrace, CipherKey, EntryKind, SboxTable, TraceEntry, LINE_BYTES, TABLE_LINES,
};

pub const AES_SBOX: SboxTable = SboxTable::new([
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
]);

const fn invert_table(fwd: &[u8; 256]) -> [u8; 256] {
    let mut inv = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        inv[fwd[i] as usize] = i as u8;
        i += 1;
    }
    inv
}

pub const AES_INV_SBOX: SboxTable = SboxTable::new(invert_table(&AES_SBOX.bytes));

/// Inverse S-box lookup: `aes_inv_sbox(S(i)) == i` for every byte.
#[inline]
pub fn aes_inv_sbox(b: u8) -> u8 {
    AES_INV_SBOX.bytes[b as usize]
}

/// ShiftRows source map: output byte `j` comes from input byte `SHIFT_SRC[j]`.
const SHIFT_SRC: [usize; 16] = [0, 5, 10, 15, 4, 9, 14, 3, 8, 13, 2, 7, 12, 1, 6, 11];

/// State position whose round-10 S-box lookup ends up in ciphertext byte `j`.
pub fn last_round_source_position(ct_byte: usize) -> usize {
    SHIFT_SRC[ct_byte]
}

/// The 11 round keys of AES-128.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AesRoundKeys(pub [[u8; 16]; 11]);

const RCON: [u8; 10] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36];

pub fn aes_key_schedule(key: &CipherKey) -> AesRoundKeys {
    let mut w = [[0u8; 4]; 44];
    for (i, chunk) in key.as_bytes().chunks_exact(4).enumerate() {
        w[i].copy_from_slice(chunk);
    }
    for i in 4..44 {
        let mut t = w[i - 1];
        if i % 4 == 0 {
            t.rotate_left(1);
            for b in &mut t {
                *b = AES_SBOX.bytes[*b as usize];
            }
            t[0] ^= RCON[i / 4 - 1];
        }
        for j in 0..4 {
            w[i][j] = w[i - 4][j] ^ t[j];
        }
    }
    let mut rk = [[0u8; 16]; 11];
    for (r, round_key) in rk.iter_mut().enumerate() {
        for c in 0..4 {
            round_key[4 * c..4 * c + 4].copy_from_slice(&w[4 * r + c]);
        }
    }
    AesRoundKeys(rk)
}

#[inline]
fn xor16(state: &mut [u8; 16], rk: &[u8; 16]) {
    for (s, k) in state.iter_mut().zip(rk) {
        *s ^= k;
    }
}

fn shift_rows(state: &mut [u8; 16]) {
    let old = *state;
    for (j, src) in SHIFT_SRC.iter().enumerate() {
        state[j] = old[*src];
    }
}

#[inline]
fn xtime(b: u8) -> u8 {
    (b << 1) ^ (((b >> 7) & 1) * 0x1b)
}

fn mix_columns(state: &mut [u8; 16]) {
    for col in state.chunks_exact_mut(4) {
        let (s0, s1, s2, s3) = (col[0], col[1], col[2], col[3]);
        col[0] = xtime(s0) ^ xtime(s1) ^ s1 ^ s2 ^ s3;
        col[1] = s0 ^ xtime(s1) ^ xtime(s2) ^ s2 ^ s3;
        col[2] = s0 ^ s1 ^ xtime(s2) ^ xtime(s3) ^ s3;
        col[3] = xtime(s0) ^ s0 ^ s1 ^ s2 ^ xtime(s3);
    }
}

/// SubBytes via the constant-cache-profile lookup, recording all four fetches.
fn sub_bytes_traced(state: &mut [u8; 16], round: u8, trace: &mut AccessTrace) {
    for (p, byte) in state.iter_mut().enumerate() {
        let idx = *byte;
        let col = idx % LINE_BYTES as u8;
        let line = idx / LINE_BYTES as u8;
        let mut buf = [0u8; TABLE_LINES];
        for l in 0..TABLE_LINES as u8 {
            let offset = l * LINE_BYTES as u8 + col;
            buf[l as usize] = AES_SBOX.bytes[offset as usize];
            trace.push(TraceEntry {
                offset,
                round,
                position: p as u8,
                kind: if l == line { EntryKind::Lookup } else { EntryKind::Dummy },
            });
        }
        *byte = buf[line as usize];
    }
}

/// AES-128 victim with a precomputed key schedule.
pub struct AesCtVictim {
    round_keys: AesRoundKeys,
}

impl AesCtVictim {
    pub fn new(key: &CipherKey) -> Self {
        AesCtVictim { round_keys: aes_key_schedule(key) }
    }

    pub fn round_keys(&self) -> &AesRoundKeys {
        &self.round_keys
    }

    /// Encrypt one block, appending the access trace to a reusable buffer.
    pub fn encrypt_into(&self, plaintext: &[u8; 16], trace: &mut AccessTrace) -> [u8; 16] {
        trace.clear();
        let rk = &self.round_keys.0;
        let mut state = *plaintext;
        xor16(&mut state, &rk[0]);
        for round in 1..=9u8 {
            sub_bytes_traced(&mut state, round, trace);
            shift_rows(&mut state);
            mix_columns(&mut state);
            xor16(&mut state, &rk[round as usize]);
        }
        sub_bytes_traced(&mut state, 10, trace);
        shift_rows(&mut state);
        xor16(&mut state, &rk[10]);
        state
    }
}

/// Encrypt one block and return both the ciphertext and the access trace.
pub fn aes_ct_encrypt(key: &CipherKey, plaintext: &[u8; 16]) -> ([u8; 16], AccessTrace) {
    let victim = AesCtVictim::new(key);
    let mut trace = AccessTrace::with_capacity(640);
    let ct = victim.encrypt_into(plaintext, &mut trace);
    (ct, trace)
}
