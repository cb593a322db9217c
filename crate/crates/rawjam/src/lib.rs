//! Laboratory for intra-cache-line timing leakage.
//!
//! Cache-hardened table lookups keep their *cache line* access pattern
//! independent of secrets, but the 4-byte word touched inside a line still
//! depends on the data. A co-resident writer that hammers one 4-byte block
//! (matching the low 12 address bits) slows every victim read aliasing that
//! block, so the victim's total running time correlates with how often the
//! jammed word is touched.
//!
//! This crate models that channel end to end:
//!
//! * [`ciphers`]: bit-exact AES-128 and SM4 victims instrumented to emit
//!   the exact sequence of S-box byte offsets they touch.
//! * [`leakage`]: a parameterized timing simulator turning an access trace
//!   plus a jammed word offset into a victim time in cycles, trace-set
//!   generation, outlier filtering and jam-offset scanning.
//! * [`analysis`]: Pearson correlation machinery, candidate ranking and
//!   rank-versus-observations tracking.
//! * [`attack`]: last-round key recovery against the hardened AES victim
//!   and the recursive five-round attack against SM4.
//! * [`trace_file`]: the `MJT1` trace-set container and CSV export.
//! * `probe` (feature `probe`): optional hardware harness measuring the
//!   real read-after-write penalty on sibling hyper-threads.

pub mod analysis;
pub mod attack;
pub mod ciphers;
mod error;
pub mod leakage;
#[cfg(feature = "probe")]
pub mod probe;
pub mod trace_file;

pub use error::{Error, Result};
