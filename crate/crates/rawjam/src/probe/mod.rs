//! Machine-dependent hardware probes for the read-after-write channel.
//!
//! Reproduces the sibling-hyper-thread experiments behind the simulator's
//! parameters: a probing thread times batches of eight page-stride accesses
//! while the sibling logical processor introduces conflicts at a chosen
//! offset class, and a mixed-instruction stub measures how execution time
//! grows with the number of conflicting reads. Measured penalties feed
//! [`LeakModel`](crate::leakage::LeakModel) calibration, so the analysis
//! modules run identically on real or simulated data.
//!
//! Everything here needs x86_64 Linux, two logical processors on one
//! physical core, and OS-level quieting (isolated core, pinned frequency,
//! no interrupts) that the caller is responsible for. On other platforms
//! every entry point returns [`Error::ProbeUnavailable`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crate::{Error, Result};

/// Which dependency hazard to exercise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeMode {
    /// Both threads read; exposes cache-bank conflicts where they exist.
    RaR,
    /// Probe writes while the sibling reads.
    WaR,
    /// Probe reads while the sibling writes: the exploited channel.
    RaW,
    /// Probe reads while the sibling writes with gaps between stores.
    RawW,
    /// Mixed-instruction stub with a varying number of conflicting reads.
    ReadLatencyCurve,
}

impl FromStr for ProbeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rar" => Ok(ProbeMode::RaR),
            "war" => Ok(ProbeMode::WaR),
            "raw" => Ok(ProbeMode::RaW),
            "raww" => Ok(ProbeMode::RawW),
            "curve" => Ok(ProbeMode::ReadLatencyCurve),
            other => Err(Error::InvalidArgument(format!(
                "unknown probe mode {other:?} (rar|war|raw|raww|curve)"
            ))),
        }
    }
}

impl fmt::Display for ProbeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProbeMode::RaR => "rar",
            ProbeMode::WaR => "war",
            ProbeMode::RaW => "raw",
            ProbeMode::RawW => "raww",
            ProbeMode::ReadLatencyCurve => "curve",
        };
        f.write_str(s)
    }
}

/// Where the sibling's conflicting accesses land relative to the probe's.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OffsetClass {
    DifferentLine,
    SameLineDifferentWord,
    SameWord,
}

impl FromStr for OffsetClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "different-line" => Ok(OffsetClass::DifferentLine),
            "same-line" | "same-line-different-word" => Ok(OffsetClass::SameLineDifferentWord),
            "same-word" => Ok(OffsetClass::SameWord),
            other => Err(Error::InvalidArgument(format!(
                "unknown offset class {other:?} (different-line|same-line|same-word)"
            ))),
        }
    }
}

impl fmt::Display for OffsetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OffsetClass::DifferentLine => "different-line",
            OffsetClass::SameLineDifferentWord => "same-line",
            OffsetClass::SameWord => "same-word",
        };
        f.write_str(s)
    }
}

/// One probe experiment.
#[derive(Clone, Debug)]
pub struct ProbeConfig {
    pub mode: ProbeMode,
    pub offset_class: OffsetClass,
    /// Timed batches (8 accesses per batch).
    pub iterations: usize,
    /// (probing cpu, conflicting cpu); must be sibling logical processors
    /// of one physical core for the channel to exist.
    pub cpu_pair: (usize, usize),
}

/// Bucketed per-batch latencies plus summary statistics.
#[derive(Clone, Debug)]
pub struct LatencyHistogram {
    buckets: BTreeMap<u32, u64>,
    samples: u64,
}

impl LatencyHistogram {
    pub fn from_samples(deltas: &[u32]) -> Self {
        let mut buckets = BTreeMap::new();
        for &d in deltas {
            *buckets.entry(d).or_insert(0u64) += 1;
        }
        LatencyHistogram { buckets, samples: deltas.len() as u64 }
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn buckets(&self) -> &BTreeMap<u32, u64> {
        &self.buckets
    }

    pub fn median(&self) -> u32 {
        let mut seen = 0;
        for (&cycles, &count) in &self.buckets {
            seen += count;
            if seen * 2 >= self.samples {
                return cycles;
            }
        }
        0
    }

    pub fn mean(&self) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        let sum: f64 = self.buckets.iter().map(|(&c, &n)| c as f64 * n as f64).sum();
        sum / self.samples as f64
    }

    pub fn stddev(&self) -> f64 {
        if self.samples < 2 {
            return 0.0;
        }
        let mean = self.mean();
        let ss: f64 = self
            .buckets
            .iter()
            .map(|(&c, &n)| {
                let d = c as f64 - mean;
                d * d * n as f64
            })
            .sum();
        (ss / (self.samples - 1) as f64).sqrt()
    }

    /// `bucket_cycles,count` rows.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "bucket_cycles,count")?;
        for (&cycles, &count) in &self.buckets {
            writeln!(w, "{cycles},{count}")?;
        }
        Ok(())
    }
}

/// One point of the read-latency curve.
#[derive(Clone, Copy, Debug)]
pub struct CurvePoint {
    pub conflicting_reads: usize,
    pub mean_cycles: f64,
}

/// `conflicting_reads,mean_cycles` rows.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], w: &mut W) -> io::Result<()> {
    writeln!(w, "conflicting_reads,mean_cycles")?;
    for p in points {
        writeln!(w, "{},{}", p.conflicting_reads, p.mean_cycles)?;
    }
    Ok(())
}

/// Run a histogram-mode experiment (RaR, WaR, RaW or RawW).
pub fn run_histogram(cfg: &ProbeConfig) -> Result<LatencyHistogram> {
    if cfg.mode == ProbeMode::ReadLatencyCurve {
        return Err(Error::InvalidArgument("use run_latency_curve for curve mode".into()));
    }
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be >= 1".into()));
    }
    platform::run_histogram(cfg)
}

/// Run the mixed-instruction stub for 0..=64 conflicting reads.
pub fn run_latency_curve(iterations: usize, cpu_pair: (usize, usize)) -> Result<Vec<CurvePoint>> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be >= 1".into()));
    }
    platform::run_latency_curve(iterations, cpu_pair)
}

/// Best-effort check that the two logical processors share a physical core.
pub fn are_siblings(a: usize, b: usize) -> Option<bool> {
    let path = format!("/sys/devices/system/cpu/cpu{a}/topology/thread_siblings_list");
    let list = std::fs::read_to_string(path).ok()?;
    Some(parse_cpu_list(list.trim()).contains(&b))
}

fn parse_cpu_list(list: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for part in list.split(',') {
        if let Some((lo, hi)) = part.split_once('-') {
            if let (Ok(lo), Ok(hi)) = (lo.parse::<usize>(), hi.parse::<usize>()) {
                out.extend(lo..=hi);
            }
        } else if let Ok(v) = part.parse::<usize>() {
            out.push(v);
        }
    }
    out
}

/// Stop flag shared with a conflict-writer thread.
pub struct WriterHandle {
    stop: Arc<AtomicBool>,
    join: Option<std::thread::JoinHandle<()>>,
}

impl WriterHandle {
    pub fn cancel(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

impl Drop for WriterHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

#[cfg(all(target_arch = "x86_64", target_os = "linux"))]
mod platform {
    use super::*;
    use std::arch::asm;

    const PAGE: usize = 4096;
    /// Column within each page that the probe accesses. Away from the page
    /// start so next-line prefetch at the boundary does not pollute batches.
    const PROBE_COLUMN: usize = 0x140;

    /// Page-aligned buffer; `_raw` owns the allocation.
    struct AlignedBuffer {
        _raw: Vec<u8>,
        base: *mut u8,
        pages: usize,
    }

    unsafe impl Send for AlignedBuffer {}

    impl AlignedBuffer {
        fn new(pages: usize) -> Self {
            let mut raw = vec![0u8; (pages + 1) * PAGE];
            let addr = raw.as_mut_ptr() as usize;
            let aligned = (addr + PAGE - 1) & !(PAGE - 1);
            let base = aligned as *mut u8;
            // Fault the pages in so the timed loops never hit page faults.
            for i in 0..pages * PAGE {
                unsafe { base.add(i).write_volatile(0) };
            }
            AlignedBuffer { _raw: raw, base, pages }
        }

        fn at(&self, offset: usize) -> *mut u8 {
            assert!(offset < self.pages * PAGE);
            unsafe { self.base.add(offset) }
        }
    }

    fn pin_to_cpu(cpu: usize) -> Result<()> {
        unsafe {
            let mut set: libc::cpu_set_t = std::mem::zeroed();
            libc::CPU_ZERO(&mut set);
            libc::CPU_SET(cpu, &mut set);
            if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
                return Err(Error::ProbeUnavailable(format!(
                    "cannot pin to cpu {cpu}: {}",
                    std::io::Error::last_os_error()
                )));
            }
        }
        Ok(())
    }

    /// Timed batches of 8 page-stride byte reads; the cycle counter is
    /// stored before every batch, mirroring the read-probe loop.
    fn probe_reads(base: *const u8, count: usize, stamps: &mut Vec<u32>) {
        stamps.clear();
        stamps.resize(count + 1, 0);
        unsafe {
            asm!(
                "2:",
                "rdtscp",
                "mov dword ptr [{buf}], eax",
                "mov al, byte ptr [{base}]",
                "mov al, byte ptr [{base} + 0x1000]",
                "mov al, byte ptr [{base} + 0x2000]",
                "mov al, byte ptr [{base} + 0x3000]",
                "mov al, byte ptr [{base} + 0x4000]",
                "mov al, byte ptr [{base} + 0x5000]",
                "mov al, byte ptr [{base} + 0x6000]",
                "mov al, byte ptr [{base} + 0x7000]",
                "add {buf}, 4",
                "dec {cnt}",
                "jnz 2b",
                "rdtscp",
                "mov dword ptr [{buf}], eax",
                buf = inout(reg) stamps.as_mut_ptr() => _,
                base = in(reg) base,
                cnt = inout(reg) count => _,
                out("eax") _, out("ecx") _, out("edx") _,
                options(nostack),
            );
        }
    }

    /// As `probe_reads` with byte writes.
    fn probe_writes(base: *mut u8, count: usize, stamps: &mut Vec<u32>) {
        stamps.clear();
        stamps.resize(count + 1, 0);
        unsafe {
            asm!(
                "2:",
                "rdtscp",
                "mov dword ptr [{buf}], eax",
                "mov byte ptr [{base}], al",
                "mov byte ptr [{base} + 0x1000], al",
                "mov byte ptr [{base} + 0x2000], al",
                "mov byte ptr [{base} + 0x3000], al",
                "mov byte ptr [{base} + 0x4000], al",
                "mov byte ptr [{base} + 0x5000], al",
                "mov byte ptr [{base} + 0x6000], al",
                "mov byte ptr [{base} + 0x7000], al",
                "add {buf}, 4",
                "dec {cnt}",
                "jnz 2b",
                "rdtscp",
                "mov dword ptr [{buf}], eax",
                buf = inout(reg) stamps.as_mut_ptr() => _,
                base = in(reg) base,
                cnt = inout(reg) count => _,
                out("eax") _, out("ecx") _, out("edx") _,
                options(nostack),
            );
        }
    }

    /// Tight 100-fold-unrolled byte-store loop; nothing else competes for
    /// execution ports, which maximizes the conflict effect. Checks the
    /// cancellation flag once per 100 stores.
    fn conflict_writer(target: *mut u8, stop: &AtomicBool) {
        while !stop.load(Ordering::Relaxed) {
            unsafe {
                asm!(
                    ".rept 100",
                    "mov byte ptr [{t}], 0",
                    ".endr",
                    t = in(reg) target,
                    options(nostack),
                );
            }
        }
    }

    /// Store loop diluted with ALU work and a second memory access; the
    /// channel all but disappears under this variant.
    fn weak_conflict_writer(target: *mut u8, scratch: *mut u8, stop: &AtomicBool) {
        let mut x: u64 = 0;
        while !stop.load(Ordering::Relaxed) {
            unsafe {
                asm!(
                    ".rept 25",
                    "mov byte ptr [{t}], 0",
                    "add {x}, 1",
                    "xor {x}, 0x5a",
                    "mov byte ptr [{s}], 1",
                    "rol {x}, 7",
                    ".endr",
                    t = in(reg) target,
                    s = in(reg) scratch,
                    x = inout(reg) x,
                    options(nostack),
                );
            }
        }
    }

    /// Endless-read loop for the RaR / WaR sibling role.
    fn conflict_reader(target: *const u8, stop: &AtomicBool) {
        while !stop.load(Ordering::Relaxed) {
            unsafe {
                asm!(
                    ".rept 100",
                    "mov al, byte ptr [{t}]",
                    ".endr",
                    t = in(reg) target,
                    out("eax") _,
                    options(nostack),
                );
            }
        }
    }

    /// Offset of the sibling's conflict target within its own page, given
    /// the probe's column.
    fn sibling_offset(class: OffsetClass) -> usize {
        match class {
            OffsetClass::SameWord => PROBE_COLUMN,
            OffsetClass::SameLineDifferentWord => PROBE_COLUMN + 8,
            OffsetClass::DifferentLine => PROBE_COLUMN + 0x80,
        }
    }

    fn spawn_sibling(
        mode: ProbeMode,
        class: OffsetClass,
        cpu: usize,
    ) -> Result<super::WriterHandle> {
        let stop = Arc::new(AtomicBool::new(false));
        let stop_thread = stop.clone();
        let offset = sibling_offset(class);
        let join = std::thread::spawn(move || {
            if pin_to_cpu(cpu).is_err() {
                return;
            }
            let buffer = AlignedBuffer::new(2);
            let target = buffer.at(offset);
            match mode {
                ProbeMode::RaR | ProbeMode::WaR => conflict_reader(target, &stop_thread),
                ProbeMode::RaW => conflict_writer(target, &stop_thread),
                ProbeMode::RawW => {
                    let scratch = buffer.at(PAGE + 0x800);
                    weak_conflict_writer(target, scratch, &stop_thread)
                }
                ProbeMode::ReadLatencyCurve => conflict_writer(target, &stop_thread),
            }
        });
        Ok(super::WriterHandle { stop, join: Some(join) })
    }

    pub fn run_histogram(cfg: &ProbeConfig) -> Result<LatencyHistogram> {
        let sibling = spawn_sibling(cfg.mode, cfg.offset_class, cfg.cpu_pair.1)?;
        pin_to_cpu(cfg.cpu_pair.0)?;
        let buffer = AlignedBuffer::new(9);
        let probe_ptr = buffer.at(PROBE_COLUMN);
        let mut stamps = Vec::new();
        // Warm up, then measure.
        for _ in 0..3 {
            match cfg.mode {
                ProbeMode::WaR => probe_writes(probe_ptr, cfg.iterations, &mut stamps),
                _ => probe_reads(probe_ptr, cfg.iterations, &mut stamps),
            }
        }
        sibling.cancel();
        let deltas: Vec<u32> =
            stamps.windows(2).map(|w| w[1].wrapping_sub(w[0])).collect();
        Ok(LatencyHistogram::from_samples(&deltas))
    }

    /// The 64-read stub: eight blocks of eight independent reads with a
    /// fixed add/xor/rotate filler mix between them (chosen to keep ports
    /// busy without stalling the loads). The first `conflicting` addresses
    /// alias the sibling writer's low 12 bits; the rest sit in other lines.
    #[inline(never)]
    fn timed_stub(addrs: &[*const u8; 64], iterations: usize) -> f64 {
        let mut total = 0u64;
        let mut acc: u64 = 0;
        for _ in 0..iterations {
            let t0 = rdtscp();
            for block in addrs.chunks_exact(8) {
                let mut sum = 0u64;
                for &a in block {
                    sum = sum.wrapping_add(unsafe { a.read_volatile() } as u64);
                }
                acc = acc.wrapping_add(sum ^ (acc << 1)).rotate_left(7);
            }
            let t1 = rdtscp();
            total += (t1.wrapping_sub(t0)) as u64;
        }
        std::hint::black_box(acc);
        total as f64 / iterations as f64
    }

    fn rdtscp() -> u32 {
        let lo: u32;
        unsafe {
            asm!("rdtscp", out("eax") lo, out("ecx") _, out("edx") _, options(nostack));
        }
        lo
    }

    pub fn run_latency_curve(
        iterations: usize,
        cpu_pair: (usize, usize),
    ) -> Result<Vec<CurvePoint>> {
        let sibling = spawn_sibling(ProbeMode::RaW, OffsetClass::SameWord, cpu_pair.1)?;
        pin_to_cpu(cpu_pair.0)?;
        // 64 distinct pages; conflicting addresses use the writer's column,
        // the rest a different cache line.
        let buffer = AlignedBuffer::new(65);
        let mut points = Vec::with_capacity(65);
        for conflicting in 0..=64usize {
            let mut addrs = [std::ptr::null::<u8>(); 64];
            for (i, slot) in addrs.iter_mut().enumerate() {
                let column =
                    if i < conflicting { PROBE_COLUMN } else { PROBE_COLUMN + 0x80 };
                *slot = buffer.at(i * PAGE + column);
            }
            timed_stub(&addrs, iterations.min(64));
            let mean = timed_stub(&addrs, iterations);
            points.push(CurvePoint { conflicting_reads: conflicting, mean_cycles: mean });
        }
        sibling.cancel();
        Ok(points)
    }
}

#[cfg(not(all(target_arch = "x86_64", target_os = "linux")))]
mod platform {
    use super::*;

    pub fn run_histogram(_cfg: &ProbeConfig) -> Result<LatencyHistogram> {
        Err(Error::ProbeUnavailable("hardware probes need x86_64 Linux".into()))
    }

    pub fn run_latency_curve(
        _iterations: usize,
        _cpu_pair: (usize, usize),
    ) -> Result<Vec<CurvePoint>> {
        Err(Error::ProbeUnavailable("hardware probes need x86_64 Linux".into()))
    }
}
