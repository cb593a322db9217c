//! Independent reference implementations used as test oracles.
//!
//! Deliberately written along different lines than the library: the AES
//! S-box is derived algebraically instead of hard-coded, the state is a
//! 4x4 row-major grid instead of a flat block, and MixColumns goes through
//! a generic GF(2^8) multiply. SM4 follows the textbook 36-word buffer
//! formulation. Agreement between these and the instrumented victims pins
//! both down.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

// ---------------------------------------------------------------------------
// AES-128 reference

/// Forward S-box built from the GF(2^8) inverse and the affine transform.
pub fn ref_aes_sbox() -> [u8; 256] {
    let mut table = [0u8; 256];
    table[0] = 0x63;
    let (mut p, mut q) = (1u8, 1u8);
    loop {
        // p walks the multiplicative group via *3, q via /3.
        p = p ^ (p << 1) ^ (if p & 0x80 != 0 { 0x1b } else { 0 });
        q ^= q << 1;
        q ^= q << 2;
        q ^= q << 4;
        if q & 0x80 != 0 {
            q ^= 0x09;
        }
        let affine =
            q ^ q.rotate_left(1) ^ q.rotate_left(2) ^ q.rotate_left(3) ^ q.rotate_left(4);
        table[p as usize] = affine ^ 0x63;
        if p == 1 {
            break;
        }
    }
    table
}

fn gmul(mut a: u8, mut b: u8) -> u8 {
    let mut product = 0u8;
    for _ in 0..8 {
        if b & 1 != 0 {
            product ^= a;
        }
        let carry = a & 0x80;
        a <<= 1;
        if carry != 0 {
            a ^= 0x1b;
        }
        b >>= 1;
    }
    product
}

struct RefAes {
    sbox: [u8; 256],
    round_keys: [[[u8; 4]; 4]; 11],
}

impl RefAes {
    fn new(key: &[u8; 16]) -> Self {
        let sbox = ref_aes_sbox();
        let mut words = [[0u8; 4]; 44];
        for i in 0..4 {
            words[i].copy_from_slice(&key[4 * i..4 * i + 4]);
        }
        let rcon = [0x01u8, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36];
        for i in 4..44 {
            let mut t = words[i - 1];
            if i % 4 == 0 {
                t = [
                    sbox[t[1] as usize] ^ rcon[i / 4 - 1],
                    sbox[t[2] as usize],
                    sbox[t[3] as usize],
                    sbox[t[0] as usize],
                ];
            }
            for j in 0..4 {
                words[i][j] = words[i - 4][j] ^ t[j];
            }
        }
        // round_keys[r][row][col], matching the row-major state grid.
        let mut round_keys = [[[0u8; 4]; 4]; 11];
        for r in 0..11 {
            for col in 0..4 {
                for row in 0..4 {
                    round_keys[r][row][col] = words[4 * r + col][row];
                }
            }
        }
        RefAes { sbox, round_keys }
    }

    fn encrypt(&self, pt: &[u8; 16]) -> [u8; 16] {
        // state[row][col] = input[row + 4*col]
        let mut s = [[0u8; 4]; 4];
        for (i, &b) in pt.iter().enumerate() {
            s[i % 4][i / 4] = b;
        }
        self.add_round_key(&mut s, 0);
        for round in 1..=10 {
            for row in s.iter_mut() {
                for b in row.iter_mut() {
                    *b = self.sbox[*b as usize];
                }
            }
            for r in 1..4 {
                s[r].rotate_left(r);
            }
            if round != 10 {
                for col in 0..4 {
                    let column = [s[0][col], s[1][col], s[2][col], s[3][col]];
                    s[0][col] = gmul(column[0], 2) ^ gmul(column[1], 3) ^ column[2] ^ column[3];
                    s[1][col] = column[0] ^ gmul(column[1], 2) ^ gmul(column[2], 3) ^ column[3];
                    s[2][col] = column[0] ^ column[1] ^ gmul(column[2], 2) ^ gmul(column[3], 3);
                    s[3][col] = gmul(column[0], 3) ^ column[1] ^ column[2] ^ gmul(column[3], 2);
                }
            }
            self.add_round_key(&mut s, round);
        }
        let mut out = [0u8; 16];
        for (i, b) in out.iter_mut().enumerate() {
            *b = s[i % 4][i / 4];
        }
        out
    }

    fn add_round_key(&self, s: &mut [[u8; 4]; 4], round: usize) {
        for row in 0..4 {
            for col in 0..4 {
                s[row][col] ^= self.round_keys[round][row][col];
            }
        }
    }
}

pub fn ref_aes128_encrypt(key: &[u8; 16], pt: &[u8; 16]) -> [u8; 16] {
    RefAes::new(key).encrypt(pt)
}

/// Last round key of the reference schedule, as the flat 16-byte block.
pub fn ref_aes128_last_round_key(key: &[u8; 16]) -> [u8; 16] {
    let aes = RefAes::new(key);
    let mut out = [0u8; 16];
    for (i, b) in out.iter_mut().enumerate() {
        *b = aes.round_keys[10][i % 4][i / 4];
    }
    out
}

// ---------------------------------------------------------------------------
// SM4 reference

const REF_SM4_SBOX: [u8; 256] = [
    0xd6, 0x90, 0xe9, 0xfe, 0xcc, 0xe1, 0x3d, 0xb7, 0x16, 0xb6, 0x14, 0xc2, 0x28, 0xfb, 0x2c,
    0x05, 0x2b, 0x67, 0x9a, 0x76, 0x2a, 0xbe, 0x04, 0xc3, 0xaa, 0x44, 0x13, 0x26, 0x49, 0x86,
    0x06, 0x99, 0x9c, 0x42, 0x50, 0xf4, 0x91, 0xef, 0x98, 0x7a, 0x33, 0x54, 0x0b, 0x43, 0xed,
    0xcf, 0xac, 0x62, 0xe4, 0xb3, 0x1c, 0xa9, 0xc9, 0x08, 0xe8, 0x95, 0x80, 0xdf, 0x94, 0xfa,
    0x75, 0x8f, 0x3f, 0xa6, 0x47, 0x07, 0xa7, 0xfc, 0xf3, 0x73, 0x17, 0xba, 0x83, 0x59, 0x3c,
    0x19, 0xe6, 0x85, 0x4f, 0xa8, 0x68, 0x6b, 0x81, 0xb2, 0x71, 0x64, 0xda, 0x8b, 0xf8, 0xeb,
    0x0f, 0x4b, 0x70, 0x56, 0x9d, 0x35, 0x1e, 0x24, 0x0e, 0x5e, 0x63, 0x58, 0xd1, 0xa2, 0x25,
    0x22, 0x7c, 0x3b, 0x01, 0x21, 0x78, 0x87, 0xd4, 0x00, 0x46, 0x57, 0x9f, 0xd3, 0x27, 0x52,
    0x4c, 0x36, 0x02, 0xe7, 0xa0, 0xc4, 0xc8, 0x9e, 0xea, 0xbf, 0x8a, 0xd2, 0x40, 0xc7, 0x38,
    0xb5, 0xa3, 0xf7, 0xf2, 0xce, 0xf9, 0x61, 0x15, 0xa1, 0xe0, 0xae, 0x5d, 0xa4, 0x9b, 0x34,
    0x1a, 0x55, 0xad, 0x93, 0x32, 0x30, 0xf5, 0x8c, 0xb1, 0xe3, 0x1d, 0xf6, 0xe2, 0x2e, 0x82,
    0x66, 0xca, 0x60, 0xc0, 0x29, 0x23, 0xab, 0x0d, 0x53, 0x4e, 0x6f, 0xd5, 0xdb, 0x37, 0x45,
    0xde, 0xfd, 0x8e, 0x2f, 0x03, 0xff, 0x6a, 0x72, 0x6d, 0x6c, 0x5b, 0x51, 0x8d, 0x1b, 0xaf,
    0x92, 0xbb, 0xdd, 0xbc, 0x7f, 0x11, 0xd9, 0x5c, 0x41, 0x1f, 0x10, 0x5a, 0xd8, 0x0a, 0xc1,
    0x31, 0x88, 0xa5, 0xcd, 0x7b, 0xbd, 0x2d, 0x74, 0xd0, 0x12, 0xb8, 0xe5, 0xb4, 0xb0, 0x89,
    0x69, 0x97, 0x4a, 0x0c, 0x96, 0x77, 0x7e, 0x65, 0xb9, 0xf1, 0x09, 0xc5, 0x6e, 0xc6, 0x84,
    0x18, 0xf0, 0x7d, 0xec, 0x3a, 0xdc, 0x4d, 0x20, 0x79, 0xee, 0x5f, 0x3e, 0xd7, 0xcb, 0x39,
    0x48,
];

const REF_SM4_FK: [u32; 4] = [0xa3b1bac6, 0x56aa3350, 0x677d9197, 0xb27022dc];

const REF_SM4_CK: [u32; 32] = [
    0x00070e15, 0x1c232a31, 0x383f464d, 0x545b6269, 0x70777e85, 0x8c939aa1, 0xa8afb6bd,
    0xc4cbd2d9, 0xe0e7eef5, 0xfc030a11, 0x181f262d, 0x343b4249, 0x50575e65, 0x6c737a81,
    0x888f969d, 0xa4abb2b9, 0xc0c7ced5, 0xdce3eaf1, 0xf8ff060d, 0x141b2229, 0x30373e45,
    0x4c535a61, 0x686f767d, 0x848b9299, 0xa0a7aeb5, 0xbcc3cad1, 0xd8dfe6ed, 0xf4fb0209,
    0x10171e25, 0x2c333a41, 0x484f565d, 0x646b7279,
];

fn ref_sm4_tau(word: u32) -> u32 {
    let a = word.to_be_bytes();
    u32::from_be_bytes([
        REF_SM4_SBOX[a[0] as usize],
        REF_SM4_SBOX[a[1] as usize],
        REF_SM4_SBOX[a[2] as usize],
        REF_SM4_SBOX[a[3] as usize],
    ])
}

pub fn ref_sm4_key_schedule(key: &[u8; 16]) -> [u32; 32] {
    let mut k = vec![0u32; 36];
    for i in 0..4 {
        k[i] = u32::from_be_bytes(key[4 * i..4 * i + 4].try_into().unwrap()) ^ REF_SM4_FK[i];
    }
    let mut rk = [0u32; 32];
    for i in 0..32 {
        let b = ref_sm4_tau(k[i + 1] ^ k[i + 2] ^ k[i + 3] ^ REF_SM4_CK[i]);
        k[i + 4] = k[i] ^ b ^ b.rotate_left(13) ^ b.rotate_left(23);
        rk[i] = k[i + 4];
    }
    rk
}

pub fn ref_sm4_encrypt(key: &[u8; 16], pt: &[u8; 16]) -> [u8; 16] {
    let rk = ref_sm4_key_schedule(key);
    let mut buf = vec![0u32; 36];
    for i in 0..4 {
        buf[i] = u32::from_be_bytes(pt[4 * i..4 * i + 4].try_into().unwrap());
    }
    for i in 0..32 {
        let b = ref_sm4_tau(buf[i + 1] ^ buf[i + 2] ^ buf[i + 3] ^ rk[i]);
        let t = b
            ^ b.rotate_left(2)
            ^ b.rotate_left(10)
            ^ b.rotate_left(18)
            ^ b.rotate_left(24);
        buf[i + 4] = buf[i] ^ t;
    }
    let mut out = [0u8; 16];
    for i in 0..4 {
        out[4 * i..4 * i + 4].copy_from_slice(&buf[35 - i].to_be_bytes());
    }
    out
}

// ---------------------------------------------------------------------------
// Seeded input streams for equivalence sweeps

pub struct PairStream {
    rng: ChaCha12Rng,
}

impl PairStream {
    pub fn new(seed: u64) -> Self {
        PairStream { rng: ChaCha12Rng::seed_from_u64(seed) }
    }

    pub fn next_pair(&mut self) -> ([u8; 16], [u8; 16]) {
        (self.rng.random(), self.rng.random())
    }
}
