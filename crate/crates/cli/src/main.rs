//! `rawjam`: generate simulated timing traces, recover keys from them, and
//! scan jam offsets. Exit codes: 0 success, 1 runtime/IO failure, 2 usage.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use rawjam::analysis::RankReport;
use rawjam::attack::aes::{attack as aes_attack, AesAttackConfig};
use rawjam::attack::sm4::{full_attack, Sm4AttackConfig};
use rawjam::ciphers::{CipherId, CipherKey};
use rawjam::leakage::{
    filter_outliers, generate_traceset, key_for_seed, scan_jam_offsets, LeakModel, Profile,
    TraceSet,
};
use rawjam::trace_file;

#[derive(Parser)]
#[command(name = "rawjam", version, about = "Intra-cache-line timing-leakage laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated trace set and write it as an MJT1 file.
    Gen(GenArgs),
    /// Last-round key recovery from AES-CT traces.
    AttackAes(AttackAesArgs),
    /// Five-round key recovery from SM4-CN traces.
    AttackSm4(AttackSm4Args),
    /// Scan all page word offsets for the S-box location.
    Scan(ScanArgs),
    /// Rank-versus-observations tracking for the AES attack.
    RankHistory(RankHistoryArgs),
    /// Hardware probe experiments on sibling hyper-threads.
    #[cfg(feature = "probe")]
    Probe(ProbeArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Victim environment: plain user-space or behind an SGX interface call.
    #[arg(long, default_value = "user", value_parser = parse_profile)]
    profile: Profile,
    /// Mean conflict-free victim time in cycles.
    #[arg(long)]
    base_cycles: Option<f64>,
    /// Gaussian noise standard deviation in cycles.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Cycles added per access hitting the jammed word.
    #[arg(long)]
    word_penalty: Option<f64>,
    /// Cycles added per access in the jammed line but another word.
    #[arg(long)]
    line_penalty: Option<f64>,
    /// Jammed 4-byte word of the table, 0..64.
    #[arg(long, default_value_t = 0)]
    jam_word: u8,
    /// Fraction of samples hit by heavy-tail disturbances.
    #[arg(long)]
    contamination_rate: Option<f64>,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    match s {
        "user" => Ok(Profile::User),
        "sgx" => Ok(Profile::Sgx),
        other => Err(format!("unknown profile {other:?} (user|sgx)")),
    }
}

impl ModelArgs {
    fn build(&self, cipher: CipherId) -> LeakModel {
        let mut model = LeakModel::for_cipher(cipher, self.profile);
        if let Some(v) = self.base_cycles {
            model.base_cycles = v;
        }
        if let Some(v) = self.noise_sigma {
            model.noise_sigma = v;
        }
        if let Some(v) = self.word_penalty {
            model.word_penalty = v;
        }
        if let Some(v) = self.line_penalty {
            model.line_penalty = v;
        }
        if let Some(v) = self.contamination_rate {
            model.contamination_rate = v;
        }
        model.jam_word = self.jam_word;
        model
    }
}

#[derive(Args)]
struct GenArgs {
    /// Victim cipher: aes-ct or sm4-cn.
    #[arg(long)]
    cipher: CipherId,
    /// Number of (ciphertext, time) observations.
    #[arg(long)]
    traces: usize,
    #[arg(long)]
    seed: u64,
    /// 32 hex digits; derived from the seed when omitted.
    #[arg(long)]
    key: Option<CipherKey>,
    #[command(flatten)]
    model: ModelArgs,
    /// Output trace file.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV export alongside the binary file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AttackAesArgs {
    /// Input trace file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    jam_word: u8,
    /// Known master key, to report true-candidate ranks.
    #[arg(long)]
    true_key: Option<CipherKey>,
    /// Observation counts for rank history (needs --true-key).
    #[arg(long, value_delimiter = ',')]
    checkpoints: Vec<usize>,
    /// Drop observations farther than this many cycles from the mean.
    #[arg(long)]
    filter_radius: Option<f64>,
    /// Rank report CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rank history CSV.
    #[arg(long)]
    history_out: Option<PathBuf>,
}

#[derive(Args)]
struct AttackSm4Args {
    /// Input trace file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    jam_word: u8,
    /// Observations used per round decision.
    #[arg(long, default_value_t = 40_000)]
    traces_per_round: usize,
    /// Completion candidates carried between rounds.
    #[arg(long, default_value_t = 1)]
    beam_width: usize,
    /// Prefix for per-round report CSVs
    /// (`<prefix>_round{R}.csv`, `<prefix>_round{R}_completion.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    cipher: CipherId,
    #[arg(long)]
    seed: u64,
    /// Simulated victim runs per candidate offset.
    #[arg(long, default_value_t = 256)]
    traces: usize,
    #[arg(long)]
    key: Option<CipherKey>,
    #[command(flatten)]
    model: ModelArgs,
    /// Per-offset mean-time CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RankHistoryArgs {
    /// Input AES-CT trace file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Known master key (required: history tracks the true candidates).
    #[arg(long)]
    true_key: CipherKey,
    /// Ascending observation counts to sample.
    #[arg(long, value_delimiter = ',', required = true)]
    checkpoints: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    jam_word: u8,
    #[arg(long)]
    filter_radius: Option<f64>,
    /// History CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Optional final rank report CSV.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[cfg(feature = "probe")]
#[derive(Args)]
struct ProbeArgs {
    /// rar | war | raw | raww | curve
    #[arg(long, default_value = "raw")]
    mode: rawjam::probe::ProbeMode,
    /// different-line | same-line | same-word
    #[arg(long, default_value = "same-word")]
    offset_class: rawjam::probe::OffsetClass,
    /// Timed batches (histogram modes) or stub repetitions (curve).
    #[arg(long, default_value_t = 100_000)]
    iterations: usize,
    /// Probing and conflicting logical CPUs, e.g. 0,4 for siblings.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0usize, 1usize])]
    cpus: Vec<usize>,
    /// Histogram or curve CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::AttackAes(args) => cmd_attack_aes(args),
        Command::AttackSm4(args) => cmd_attack_sm4(args),
        Command::Scan(args) => cmd_scan(args),
        Command::RankHistory(args) => cmd_rank_history(args),
        #[cfg(feature = "probe")]
        Command::Probe(args) => cmd_probe(args),
    }
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let model = args.model.build(args.cipher);
    let key = args.key.unwrap_or_else(|| key_for_seed(args.seed));
    let ts = generate_traceset(args.cipher, args.traces, &key, &model, args.seed)?;
    trace_file::write_path(&ts, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(csv) = &args.csv {
        let mut w = BufWriter::new(File::create(csv)?);
        trace_file::export_csv(&ts, &mut w)?;
        w.flush()?;
    }
    let n = ts.len() as f64;
    let mean = ts.times.iter().sum::<f64>() / n;
    let var = ts.times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    println!(
        "wrote {} {} traces to {} (key {}, seed {}, mean time {:.1} cycles, std {:.1})",
        ts.len(),
        ts.cipher,
        args.out.display(),
        key,
        args.seed,
        mean,
        var.sqrt()
    );
    Ok(())
}

fn load_filtered(path: &PathBuf, filter_radius: Option<f64>) -> Result<TraceSet> {
    let ts =
        trace_file::read_path(path).with_context(|| format!("reading {}", path.display()))?;
    match filter_radius {
        Some(radius) => {
            let (kept, fraction) = filter_outliers(&ts, radius)?;
            println!(
                "outlier filter (radius {radius}): kept {}/{} ({:.1}%)",
                kept.len(),
                ts.len(),
                fraction * 100.0
            );
            Ok(kept)
        }
        None => Ok(ts),
    }
}

fn write_report_csv(report: &RankReport, path: &PathBuf) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_attack_aes(args: AttackAesArgs) -> Result<()> {
    let ts = load_filtered(&args.input, args.filter_radius)?;
    let cfg = AesAttackConfig { jam_word: args.jam_word, checkpoints: args.checkpoints.clone() };
    let report = aes_attack(&ts, &cfg, args.true_key.as_ref())?;
    let top: Vec<String> =
        report.positions.iter().map(|p| format!("{:02x}", p.best().candidate)).collect();
    println!("top last-round key bytes: {}", top.join(""));
    if args.true_key.is_some() {
        let ranks = report.true_ranks().expect("true key given");
        println!(
            "true-byte ranks: {:?} ({}/16 at rank 1)",
            ranks,
            report.rank_one_count()
        );
    }
    if let Some(out) = &args.out {
        write_report_csv(&report, out)?;
        println!("rank report written to {}", out.display());
    }
    if let Some(history_out) = &args.history_out {
        let mut w = BufWriter::new(File::create(history_out)?);
        report.write_history_csv(&mut w)?;
        w.flush()?;
        println!("rank history written to {}", history_out.display());
    }
    Ok(())
}

fn cmd_attack_sm4(args: AttackSm4Args) -> Result<()> {
    let ts = trace_file::read_path(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let cfg = Sm4AttackConfig {
        jam_word: args.jam_word,
        traces_per_round: args.traces_per_round,
        beam_width: args.beam_width,
    };
    let report = full_attack(&ts, &cfg)?;
    println!("recovered master key: {}", report.key);
    println!(
        "round keys k29..k32: {:08x} {:08x} {:08x} {:08x}",
        report.round_keys[0], report.round_keys[1], report.round_keys[2], report.round_keys[3]
    );
    if !report.reencryption_checked {
        println!("note: filtered trace set; verified by schedule consistency only");
    }
    if let Some(prefix) = &args.out {
        let stem = prefix.to_string_lossy();
        for outcome in &report.rounds {
            let round_report =
                report.round_report(outcome.round).expect("round present");
            let path = PathBuf::from(format!("{stem}_round{}.csv", outcome.round));
            write_report_csv(&round_report, &path)?;
            if let Some(completion) = &outcome.completion {
                let completion_report =
                    RankReport { positions: vec![completion.clone()], history: Vec::new() };
                let path = PathBuf::from(format!("{stem}_round{}_completion.csv", outcome.round));
                write_report_csv(&completion_report, &path)?;
            }
        }
        println!("per-round reports written with prefix {stem}");
    }
    Ok(())
}

fn cmd_scan(args: ScanArgs) -> Result<()> {
    let model = args.model.build(args.cipher);
    let key = args.key.unwrap_or_else(|| key_for_seed(args.seed));
    let outcome = scan_jam_offsets(args.cipher, &key, &model, args.traces, args.seed)?;
    if outcome.flat {
        println!("warning: flat profile (every offset produced the same mean time)");
    }
    println!(
        "best page word: {} (mean {:.1} cycles)",
        outcome.best_word,
        outcome.points[outcome.best_word as usize].mean_time
    );
    if let Some(out) = &args.out {
        let mut w = BufWriter::new(File::create(out)?);
        writeln!(w, "page_word,mean_time_cycles")?;
        for p in &outcome.points {
            writeln!(w, "{},{}", p.page_word, p.mean_time)?;
        }
        w.flush()?;
        println!("scan profile written to {}", out.display());
    }
    Ok(())
}

fn cmd_rank_history(args: RankHistoryArgs) -> Result<()> {
    let ts = load_filtered(&args.input, args.filter_radius)?;
    let cfg = AesAttackConfig { jam_word: args.jam_word, checkpoints: args.checkpoints.clone() };
    let report = aes_attack(&ts, &cfg, Some(&args.true_key))?;
    let mut w = BufWriter::new(File::create(&args.out)?);
    report.write_history_csv(&mut w)?;
    w.flush()?;
    println!("rank history written to {}", args.out.display());
    for point in &report.history {
        let bits = rawjam::analysis::log2_rank_sum(&point.ranks);
        println!(
            "{} observations: {}/16 rank 1, {:.1} bits remaining",
            point.observations,
            point.ranks.iter().filter(|&&r| r == 1).count(),
            bits
        );
    }
    if let Some(report_out) = &args.report_out {
        write_report_csv(&report, report_out)?;
    }
    Ok(())
}

#[cfg(feature = "probe")]
fn cmd_probe(args: ProbeArgs) -> Result<()> {
    use rawjam::probe;

    let cpu_pair = (args.cpus[0], args.cpus[1]);
    match probe::are_siblings(cpu_pair.0, cpu_pair.1) {
        Some(true) => {}
        Some(false) => println!(
            "warning: cpus {} and {} do not report as thread siblings",
            cpu_pair.0, cpu_pair.1
        ),
        None => println!("warning: could not verify sibling topology"),
    }
    if args.mode == probe::ProbeMode::ReadLatencyCurve {
        let points = probe::run_latency_curve(args.iterations, cpu_pair)?;
        println!(
            "0 conflicts: {:.1} cycles; 64 conflicts: {:.1} cycles",
            points[0].mean_cycles, points[64].mean_cycles
        );
        if let Some(out) = &args.out {
            let mut w = BufWriter::new(File::create(out)?);
            probe::write_curve_csv(&points, &mut w)?;
            w.flush()?;
        }
        return Ok(());
    }
    let cfg = probe::ProbeConfig {
        mode: args.mode,
        offset_class: args.offset_class,
        iterations: args.iterations,
        cpu_pair,
    };
    let histogram = probe::run_histogram(&cfg)?;
    println!(
        "{} / {}: median {} cycles, mean {:.1}, std {:.1} over {} batches",
        cfg.mode,
        cfg.offset_class,
        histogram.median(),
        histogram.mean(),
        histogram.stddev(),
        histogram.samples()
    );
    if let Some(out) = &args.out {
        let mut w = BufWriter::new(File::create(out)?);
        histogram.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_with_2() {
        let err = match Cli::try_parse_from(["rawjam", "gen", "--cipher", "aes-ct"]) {
            Err(e) => e,
            Ok(_) => panic!("incomplete gen invocation parsed"),
        };
        assert_eq!(err.exit_code(), 2);
    }
}
