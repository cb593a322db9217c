//! Binary trace-set container and CSV export.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "MJT1"
//! cipher_id  u8       0 = AES-CT, 1 = SM4-CN
//! flags      u8       bit 0: SGX profile, bit 1: outlier-filtered
//! count      u64      number of records
//! seed       u64      generation seed
//! records    count × (16 ciphertext bytes + f64 time)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::ciphers::CipherId;
use crate::leakage::TraceSet;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MJT1";

const RECORD_BYTES: usize = 16 + 8;

pub fn write<W: Write>(ts: &TraceSet, w: &mut W) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&[ts.cipher.as_u8(), ts.flags])?;
    w.write_all(&(ts.len() as u64).to_le_bytes())?;
    w.write_all(&ts.seed.to_le_bytes())?;
    for (ct, &t) in ts.ciphertexts.iter().zip(&ts.times) {
        w.write_all(ct)?;
        w.write_all(&t.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_path<P: AsRef<Path>>(ts: &TraceSet, path: P) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(ts, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read<R: Read>(r: &mut R) -> Result<TraceSet> {
    let mut header = [0u8; 4 + 1 + 1 + 8 + 8];
    read_fully(r, &mut header, "header")?;
    if header[..4] != MAGIC {
        return Err(Error::TraceFile("bad magic (not an MJT1 trace file)".into()));
    }
    let cipher = CipherId::from_u8(header[4])?;
    let flags = header[5];
    let count = u64::from_le_bytes(header[6..14].try_into().unwrap());
    let seed = u64::from_le_bytes(header[14..22].try_into().unwrap());

    let count: usize = count
        .try_into()
        .map_err(|_| Error::TraceFile(format!("record count {count} overflows this platform")))?;
    // Cap the preallocation so a corrupt header cannot ask for the moon;
    // growth past the cap is driven by actual file contents.
    let prealloc = count.min(1 << 20);
    let mut ciphertexts = Vec::with_capacity(prealloc);
    let mut times = Vec::with_capacity(prealloc);
    let mut record = [0u8; RECORD_BYTES];
    for _ in 0..count {
        read_fully(r, &mut record, "record")?;
        let ct: [u8; 16] = record[..16].try_into().unwrap();
        ciphertexts.push(ct);
        times.push(f64::from_le_bytes(record[16..].try_into().unwrap()));
    }
    Ok(TraceSet { cipher, flags, seed, ciphertexts, times, model: None })
}

pub fn read_path<P: AsRef<Path>>(path: P) -> Result<TraceSet> {
    read(&mut BufReader::new(File::open(path)?))
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::TraceFile(format!("truncated while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

/// Plot-ready CSV: `ciphertext_hex,time_cycles`, one row per record.
/// Times use Rust's shortest round-trip float formatting, so parsing the
/// column back yields the exact stored values.
pub fn export_csv<W: Write>(ts: &TraceSet, w: &mut W) -> Result<()> {
    writeln!(w, "ciphertext_hex,time_cycles")?;
    for (ct, t) in ts.ciphertexts.iter().zip(&ts.times) {
        writeln!(w, "{},{}", hex::encode(ct), t)?;
    }
    Ok(())
}
