//! Key-recovery attacks driven purely by (ciphertext, time) observations.

pub mod aes;
pub mod sm4;
