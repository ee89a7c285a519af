use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use dcisniff::blindrnti::FilterOptions;
use dcisniff::iqio::{read_iq, sidecar_path, write_iq, MetaSource};
use dcisniff::load::{render_report, summarize, unique_ues, FrameLoad, LoadPolicy, LoadSummary, ReportFormat, ReportRow};
use dcisniff::pipeline::{decode_recording, DecodeOptions, SkippedSubframe};
use dcisniff::txgen::{generate_recording, Scenario, TxHooks};
use dcisniff::{CellSettings, DciFormat, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_NO_CELL: u8 = 3;
const EXIT_MIB_CRC: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "dcisniff", version, about = "Passive LTE PDCCH decoder and cell load estimator")]
struct Cli {
    /// Repeat for more log output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a recording and its ground-truth manifest from a scenario.
    Generate {
        #[arg(long)]
        scenario: PathBuf,
        /// Output stem; writes <out>.iq, <out>.json and <out>.manifest.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a recording into a DCI report and a load summary.
    Decode(DecodeArgs),
    /// Merge the load summaries of several decoded reports.
    Report {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in loopback checks.
    Selftest,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long = "in", required_unless_present = "device")]
    input: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    #[arg(long, default_value_t = FilterOptions::default().max_errors)]
    max_errors: usize,
    #[arg(long)]
    no_dedup: bool,
    #[arg(long)]
    include_uplink_load: bool,
    #[arg(long)]
    exclude_system_load: bool,
    /// Comma-separated DCI formats to search, e.g. 1,1A.
    #[arg(long, value_delimiter = ',')]
    formats: Vec<DciFormat>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    threads: u16,
    /// Sidecar with the sample rate, when it is not next to the recording.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Live SDR capture. Reserved; not implemented.
    #[arg(long, conflicts_with = "input")]
    device: Option<String>,
}

/// Sidecar written next to every decoded report.
#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct DecodeSummary {
    settings: CellSettings,
    frames: Vec<FrameLoad>,
    unique_ues: usize,
    summary: Option<LoadSummary>,
    #[serde(default)]
    skipped: Vec<SkippedSubframe>,
}

fn summary_path(report: &Path) -> PathBuf {
    report.with_extension("summary.json")
}

fn stem(out: &Path) -> PathBuf {
    match out.extension() {
        Some(e) if e == "iq" => out.with_extension(""),
        _ => out.to_path_buf(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_generate(scenario: &Path, out: &Path) -> Result<()> {
    let sc = Scenario::load(scenario).with_context(|| format!("scenario {}", scenario.display()))?;
    let (rec, manifest) = generate_recording(&sc.cell, &sc.schedule, &sc.impairments)?;
    let base = stem(out);
    let iq = base.with_extension("iq");
    write_iq(&rec, &iq).with_context(|| format!("writing {}", iq.display()))?;
    let rows: Vec<ReportRow> = manifest.iter().map(ReportRow::from_candidate).collect();
    let manifest_path = base.with_extension("manifest.json");
    fs::write(&manifest_path, render_report(&rows, ReportFormat::Json)?)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    println!("{}: {} samples, {} grants in manifest", iq.display(), rec.len(), rows.len());
    Ok(())
}

fn cmd_decode(args: &DecodeArgs) -> Result<()> {
    if let Some(dev) = &args.device {
        bail!("live capture from {dev:?} is not supported; record to a file and pass --in");
    }
    let input = args.input.as_deref().expect("clap enforces --in");
    let meta = match &args.meta {
        Some(p) => MetaSource::Path(p.clone()),
        None => MetaSource::Sidecar,
    };
    let protected = [input.to_path_buf(), sidecar_path(input)];
    for written in [args.report.clone(), summary_path(&args.report)] {
        if protected.contains(&written) {
            bail!("report output {} would overwrite the recording", written.display());
        }
    }
    let rec = read_iq(input, meta).with_context(|| format!("reading {}", input.display()))?;
    let opts = DecodeOptions {
        formats: if args.formats.is_empty() { DciFormat::ALL.to_vec() } else { args.formats.clone() },
        filter: FilterOptions { max_errors: args.max_errors, dedup: !args.no_dedup },
        load_policy: LoadPolicy {
            include_uplink: args.include_uplink_load,
            include_system: !args.exclude_system_load,
            ..LoadPolicy::default()
        },
        threads: args.threads as usize,
        ..DecodeOptions::default()
    };
    let out = decode_recording(&rec, &opts)?;
    let rows: Vec<ReportRow> = out.candidates.iter().map(ReportRow::from_candidate).collect();
    fs::write(&args.report, render_report(&rows, args.format)?)
        .with_context(|| format!("writing {}", args.report.display()))?;
    let summary = DecodeSummary {
        settings: out.settings,
        unique_ues: unique_ues(&out.candidates),
        summary: summarize(&out.frames).ok(),
        frames: out.frames,
        skipped: out.skipped,
    };
    write_json(&summary_path(&args.report), &summary)?;
    println!("{}", out.settings);
    for f in &summary.frames {
        println!("SFN {:4}: load {:6.2} %, {} UEs", f.sfn, f.percent(), f.unique_ues);
    }
    println!("{} grants written to {}", rows.len(), args.report.display());
    Ok(())
}

fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut frames = Vec::new();
    let mut cell: Option<(PathBuf, CellSettings)> = None;
    for report in inputs {
        let path = summary_path(report);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let s: DecodeSummary = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        match &cell {
            Some((first, c)) if c.cell.pci() != s.settings.cell.pci() => bail!(
                "{} is NCellID {}, {} is NCellID {}; refusing to merge different cells",
                first.display(),
                c.cell.pci(),
                report.display(),
                s.settings.cell.pci()
            ),
            Some(_) => {}
            None => cell = Some((report.clone(), s.settings)),
        }
        frames.extend(s.frames);
    }
    let summary = summarize(&frames)?;
    write_json(out, &summary)?;
    println!(
        "{} frames: mean {:.2} %, min {:.2} %, max {:.2} %",
        summary.frames_analyzed,
        summary.mean_load * 100.0,
        summary.min_load * 100.0,
        summary.max_load * 100.0
    );
    Ok(())
}

fn cmd_selftest() -> Result<bool> {
    let t0 = Instant::now();
    let report = dcisniff::selftest::run(TxHooks::default());
    for o in &report.outcomes {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("check {:2} {verdict} {}: {}", o.index, o.name, o.detail);
    }
    println!("selftest finished in {:.1} s", t0.elapsed().as_secs_f64());
    Ok(report.passed())
}

/// Join the cause chain, skipping causes already quoted by their parent.
fn render_error(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&msg)) {
            parts.push(msg);
        }
    }
    parts.join(": ")
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::NoPssFound { .. } | Error::NoSssFound(_)) => EXIT_NO_CELL,
        Some(Error::CrcFail) => EXIT_MIB_CRC,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        2 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();

    let result = match &cli.command {
        Command::Generate { scenario, out } => cmd_generate(scenario, out),
        Command::Decode(args) => cmd_decode(args),
        Command::Report { inputs, out } => cmd_report(inputs, out),
        Command::Selftest => match cmd_selftest() {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_FAILURE),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_failing_stage() {
        let no_cell = anyhow::Error::new(Error::NoPssFound { peak_to_mean: 1.0, metric: 0.1 });
        assert_eq!(exit_code(&no_cell.context("decoding")), EXIT_NO_CELL);
        assert_eq!(exit_code(&Error::NoSssFound(0.2).into()), EXIT_NO_CELL);
        assert_eq!(exit_code(&Error::CrcFail.into()), EXIT_MIB_CRC);
        assert_eq!(exit_code(&Error::EmptyInput.into()), EXIT_FAILURE);
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), EXIT_FAILURE);
    }

    #[test]
    fn repeated_causes_are_collapsed() {
        let e = anyhow::Error::new(Error::EmptyInput).context("merging");
        assert_eq!(render_error(&e), "merging: empty input");
    }

    #[test]
    fn report_stem_and_summary_paths() {
        assert_eq!(stem(Path::new("out/cap.iq")), PathBuf::from("out/cap"));
        assert_eq!(stem(Path::new("cap")), PathBuf::from("cap"));
        assert_eq!(summary_path(Path::new("r.csv")), PathBuf::from("r.summary.json"));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
