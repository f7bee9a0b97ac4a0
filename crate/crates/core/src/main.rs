//! bbkit: plan probes, match captures against probe ledgers, classify the
//! generators behind the responses, and analyze or replay the results.
//!
//! Every subcommand is a standalone file-to-file stage; `run` chains them
//! from a config file. Logging level comes from `BBKIT_LOG` (error, warn,
//! info, debug, trace). Exit codes: 0 success, 2 invalid request, 3
//! unusable input data, 4 internal failure.

use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use bbkit::classifier::DEFAULT_BLOWBACK_THRESHOLD;
use bbkit::analysis::DEFAULT_LOOP_THRESHOLD;
use bbkit::attack::AttackConfig;
use bbkit::error::{Error, Result};
use bbkit::matcher::MatchConfig;
use bbkit::model::{Cidr, ProbeProtocol, MICROS_PER_SEC};
use bbkit::pipeline::{
    attack_files, classify_files, concentration_files, loops_files, match_files, origins_files,
    read_pipeline_config, run_pipeline, stability_files, summarize_files, synthesize_rounds,
    timing_files, write_artifact, SynthSource,
};
use bbkit::probe::emit::{emit_probes, EmitConfig};
use bbkit::probe::{default_rate, generate_ledger, ScanKind, ScanPlan, TargetSource};
use bbkit::report::{file_digest, open_reader};

#[derive(Parser)]
#[command(
    name = "bbkit",
    version = bbkit::VERSION,
    about = "Measure blowback: multi-packet responses drawn by single probes",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a probe ledger for a scan plan; optionally emit lab probes
    Probe(ProbeArgs),
    /// Match a packet trace or capture against a probe ledger
    Match(MatchArgs),
    /// Build per-generator profiles from matched responses
    Classify(ClassifyArgs),
    /// Aggregate profiles into per-round, per-protocol summary rows
    Summarize(SummarizeArgs),
    /// Track the baseline round's blowback set across all rounds
    Stability(StabilityArgs),
    /// Cumulative activity curves ranked by one round
    Concentration(ConcentrationArgs),
    /// Attribute response traffic to ASNs and countries
    Origins(OriginsArgs),
    /// Count forwarding loops in a traceroute corpus
    Loops(LoopsArgs),
    /// Per-second histograms of the busiest responses
    Timing(TimingArgs),
    /// Project attack bandwidth from replaying the probed generators
    AttackSim(AttackSimArgs),
    /// Generate a synthetic campaign from a scenario file
    Synth(SynthArgs),
    /// Run the whole pipeline from a config file
    Run(RunArgs),
}

#[derive(Args)]
struct ProbeArgs {
    /// Probe protocol: DNS, ICMP, TCP443, TCP25, TCP80, or NTP
    #[arg(long)]
    protocol: ProbeProtocol,
    /// Target list file (one IPv4 address per line) or "full" for a sweep
    #[arg(long)]
    targets: String,
    /// Probes per second; defaults to the typical rate for the scan kind
    #[arg(long)]
    rate: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plan a rescan (needs --targets FILE, runs at rescan rates)
    #[arg(long)]
    rescan: bool,
    /// Send time of the first probe, microseconds since the epoch
    #[arg(long)]
    start_us: Option<i64>,
    /// Zone suffix for DNS query names
    #[arg(long)]
    zone: Option<String>,
    /// Ledger file to write
    #[arg(long)]
    out: PathBuf,
    /// Actually send the probes (lab use; targets must be allow-listed)
    #[arg(long)]
    emit: bool,
    /// CIDR prefix emitted targets must fall into; repeatable
    #[arg(long = "allow-prefix")]
    allow_prefix: Vec<Cidr>,
    /// Emit to this port instead of the protocol's service port
    #[arg(long)]
    port_override: Option<u16>,
}

#[derive(Args)]
struct MatchArgs {
    /// Probe ledger the packets are matched against
    #[arg(long)]
    probes: PathBuf,
    /// Packet trace: native text lines or a classic capture file
    #[arg(long)]
    packets: PathBuf,
    /// Seconds a probe stays live without traffic before it expires
    #[arg(long, default_value_t = 600)]
    window_secs: i64,
    /// TCP ack interpretation: seq-plus-one, seq-exact, or either
    #[arg(long, default_value = "either")]
    ack_mode: String,
    /// Source port our TCP/UDP probes were sent from
    #[arg(long, default_value_t = 55_000)]
    ephemeral_port: u16,
    /// Responses file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Responses file from `bbkit match`
    #[arg(long)]
    responses: PathBuf,
    /// The round's probe ledger, so silent targets are recorded too
    #[arg(long)]
    probes: PathBuf,
    /// Round id stamped on the records
    #[arg(long, default_value_t = 0)]
    round: u32,
    /// Packets at or above this count classify as blowback
    #[arg(long, default_value_t = DEFAULT_BLOWBACK_THRESHOLD)]
    threshold: u64,
    /// Profiles file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Profiles files, merged across rounds
    #[arg(long, num_args = 1.., required = true)]
    profiles: Vec<PathBuf>,
    /// One ledger per round in ascending round order (enables the
    /// probe-side and amplification columns)
    #[arg(long, num_args = 1..)]
    probes: Vec<PathBuf>,
    /// One responses file per round in ascending round order (enables the
    /// packet-kind share columns)
    #[arg(long, num_args = 1..)]
    responses: Vec<PathBuf>,
    /// Summary table to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StabilityArgs {
    #[arg(long, num_args = 1.., required = true)]
    profiles: Vec<PathBuf>,
    /// Round whose blowback generators form the tracked set
    #[arg(long, default_value_t = 0)]
    baseline_round: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConcentrationArgs {
    #[arg(long, num_args = 1.., required = true)]
    profiles: Vec<PathBuf>,
    /// Round whose activity fixes the generator ranking
    #[arg(long, default_value_t = 0)]
    rank_round: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OriginsArgs {
    #[arg(long, num_args = 1.., required = true)]
    profiles: Vec<PathBuf>,
    /// Prefix-to-ASN dataset, one "CIDR,value" per line
    #[arg(long)]
    asn: PathBuf,
    /// Prefix-to-country dataset, one "CIDR,value" per line
    #[arg(long)]
    geo: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LoopsArgs {
    /// Traceroute corpus: "target IP" lines followed by "TTL hop" lines
    #[arg(long)]
    paths: PathBuf,
    /// Flag a path when some hop appears this many times
    #[arg(long, default_value_t = DEFAULT_LOOP_THRESHOLD)]
    threshold: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TimingArgs {
    #[arg(long, num_args = 1.., required = true)]
    responses: Vec<PathBuf>,
    /// How many of the busiest responses to keep
    #[arg(long, default_value_t = 12)]
    top: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackSimArgs {
    #[arg(long, num_args = 1.., required = true)]
    responses: Vec<PathBuf>,
    /// Probe ledgers supplying the attacker-side cost totals
    #[arg(long, num_args = 1..)]
    probes: Vec<PathBuf>,
    /// Replays of the whole fleet, one per period
    #[arg(long, default_value_t = 1)]
    repeat: u32,
    /// Whole seconds between replays
    #[arg(long, default_value_t = 1)]
    period_secs: i64,
    /// Timeline table to write (second, pps, Bps)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario file describing the generator population
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's round count
    #[arg(long)]
    rounds: Option<u32>,
    /// Override the scenario's background noise rate
    #[arg(long)]
    noise_pps: Option<u32>,
    /// Override the scenario's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving the ledgers, traces, and ground truth
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config file
    #[arg(long)]
    config: PathBuf,
    /// Cap on worker parallelism, overriding the config
    #[arg(long)]
    jobs: Option<u32>,
}

fn read_target_list(path: &Path) -> Result<Vec<Ipv4Addr>> {
    let mut targets = Vec::new();
    for (number, line) in std::io::BufRead::lines(open_reader(path)?).enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let ip: Ipv4Addr = trimmed.parse().map_err(|_| {
            Error::data(format!(
                "{}: line {}: not an IPv4 address: {trimmed:?}",
                path.display(),
                number + 1
            ))
        })?;
        targets.push(ip);
    }
    if targets.is_empty() {
        return Err(Error::data(format!(
            "{}: no targets in file",
            path.display()
        )));
    }
    Ok(targets)
}

fn run_probe(args: ProbeArgs) -> Result<()> {
    let kind = if args.rescan {
        ScanKind::Rescan
    } else {
        ScanKind::Full
    };
    let targets = if args.targets == "full" {
        TargetSource::Sweep
    } else {
        TargetSource::List(read_target_list(Path::new(&args.targets))?)
    };
    let mut plan = ScanPlan::new(args.protocol, targets, kind, args.seed);
    if let Some(rate) = args.rate {
        plan.rate_pps = rate;
    } else {
        plan.rate_pps = default_rate(kind, args.protocol);
    }
    if let Some(start) = args.start_us {
        plan.start_time_us = start;
    }
    if let Some(zone) = args.zone {
        plan.zone = zone;
    }

    let mut emitted = if args.emit { Some(Vec::new()) } else { None };
    let mut count: u64 = 0;
    write_artifact(&args.out, |w| {
        use std::io::Write;
        for probe in generate_ledger(&plan)? {
            writeln!(w, "{}", bbkit::model::ledger::format_probe(&probe))?;
            count += 1;
            if let Some(buffer) = emitted.as_mut() {
                buffer.push(probe);
            }
        }
        Ok(())
    })?;
    println!("wrote {count} probes to {}", args.out.display());

    if let Some(probes) = emitted {
        let config = EmitConfig {
            allow: args.allow_prefix,
            port_override: args.port_override,
            ..EmitConfig::default()
        };
        let report = emit_probes(&probes, &config)?;
        println!("emitted {} probes", report.sent);
    }
    Ok(())
}

fn run_match(args: MatchArgs) -> Result<()> {
    if args.window_secs <= 0 {
        return Err(Error::validation("window_secs must be positive"));
    }
    let config = MatchConfig {
        expiry_window_us: args.window_secs.saturating_mul(MICROS_PER_SEC),
        tcp_ack_mode: args.ack_mode.parse()?,
        ephemeral_port: args.ephemeral_port,
        ..MatchConfig::default()
    };
    let stats = match_files(&args.probes, &args.packets, &config, &args.out)?;
    let total = stats.matched_packets + stats.unmatched_packets;
    let fraction = if total > 0 {
        stats.matched_packets as f64 / total as f64
    } else {
        0.0
    };
    println!(
        "probes={} matched={} unmatched={} matched_fraction={fraction:.6}",
        stats.probes_total, stats.matched_packets, stats.unmatched_packets
    );
    Ok(())
}

fn run_classify(args: ClassifyArgs) -> Result<()> {
    let profiles = classify_files(
        &args.probes,
        &args.responses,
        args.round,
        args.threshold,
        &args.out,
    )?;
    println!("wrote {profiles} profiles to {}", args.out.display());
    Ok(())
}

fn run_attack_sim(args: AttackSimArgs) -> Result<()> {
    let config = AttackConfig {
        repeat: args.repeat,
        period_us: args.period_secs.saturating_mul(MICROS_PER_SEC),
    };
    let timeline = attack_files(&args.responses, &args.probes, &config, &args.out)?;
    let peak = timeline.bins.iter().map(|b| b.packets).max().unwrap_or(0);
    println!(
        "bins={} total_packets={} peak_pps={peak} skewed={}",
        timeline.bins.len(),
        timeline.total_packets,
        timeline.skewed_packets
    );
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let source = SynthSource {
        scenario: args.scenario,
        rounds: args.rounds,
        noise_pps: args.noise_pps,
        seed: args.seed,
    };
    let (rounds, written) = synthesize_rounds(&source, &args.out_dir)?;
    println!(
        "wrote {} files for {} rounds to {}",
        written.len(),
        rounds.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn run_run(args: RunArgs) -> Result<()> {
    let mut config = read_pipeline_config(&args.config)?;
    if let Some(jobs) = args.jobs {
        config.jobs = jobs;
        config.validate()?;
    }
    let digest = file_digest(&args.config)?;
    let report = run_pipeline(&config, &[("config".to_string(), digest)])?;
    for entry in &report.entries {
        println!("{}\t{}\t{}", entry.name, entry.bytes, entry.sha256);
    }
    println!(
        "pipeline: {} rounds, {} artifacts, manifest {}",
        report.rounds.len(),
        report.entries.len(),
        report.manifest_path.display()
    );
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Probe(args) => run_probe(args),
        Command::Match(args) => run_match(args),
        Command::Classify(args) => run_classify(args),
        Command::Summarize(args) => {
            summarize_files(&args.profiles, &args.probes, &args.responses, &args.out)?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Command::Stability(args) => {
            match stability_files(&args.profiles, args.baseline_round, &args.out)? {
                Some(report) => println!(
                    "tracked {} generators over {} rounds",
                    report.bbg_count,
                    report.rounds.len()
                ),
                None => println!(
                    "no blowback generators in round {}; wrote an empty table",
                    args.baseline_round
                ),
            }
            Ok(())
        }
        Command::Concentration(args) => {
            concentration_files(&args.profiles, args.rank_round, &args.out)?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Command::Origins(args) => {
            let rounds = origins_files(&args.profiles, &args.asn, &args.geo, &args.out)?;
            println!("attributed {} rounds", rounds.len());
            Ok(())
        }
        Command::Loops(args) => {
            let report = loops_files(&args.paths, args.threshold, &args.out)?;
            println!(
                "paths={} looping={} prevalence={}",
                report.total_paths,
                report.looping_paths,
                report
                    .prevalence
                    .map(|p| format!("{p:.6}"))
                    .unwrap_or_else(|| "-".into())
            );
            Ok(())
        }
        Command::Timing(args) => {
            timing_files(&args.responses, args.top, &args.out)?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Command::AttackSim(args) => run_attack_sim(args),
        Command::Synth(args) => run_synth(args),
        Command::Run(args) => run_run(args),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BBKIT_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli.command) {
        eprintln!("bbkit: {err}");
        std::process::exit(err.exit_code());
    }
}
