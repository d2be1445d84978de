use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use isac_sar::harness::{
    aggregate, read_records_csv, run_scenario, write_manifest, write_records_csv, write_summary_csv, Method,
    Prepared, RunRecord, Scenario, SeedSpec,
};
use isac_sar::iq::{write_iq, IqHeader};
use isac_sar::waveform::generate_ofdm_symbol;

#[derive(Parser)]
#[command(name = "isac-sar", version, about = "OFDM SAR simulation with multipath-robust path estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one echo cube and its ground-truth paths.
    Render(Single),
    /// Estimate paths on every pulse of one rendered cube.
    Estimate(Single),
    /// Form and score one SAR image.
    Image(Single),
    /// Monte-Carlo sweep over SNR and seeds.
    Sweep(Sweep),
    /// Re-aggregate an existing records.csv.
    Report(Report),
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace the scenario's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Single {
    #[command(flatten)]
    common: Common,
    /// SNR in dB; defaults to the scenario's first entry.
    #[arg(long)]
    snr: Option<f64>,
    /// raw, sage_only or omp_sage.
    #[arg(long, default_value = "omp_sage")]
    method: Method,
}

#[derive(Args)]
struct Sweep {
    /// One or more scenario TOML files.
    #[arg(long, required = true, num_args = 1..)]
    scenario: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to these methods (repeatable).
    #[arg(long)]
    method: Vec<Method>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Exit nonzero if any record is flagged invalid.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct Report {
    /// records.csv from a previous sweep.
    #[arg(long)]
    records: PathBuf,
    /// Where to write the summary; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario> {
    let mut sc = Scenario::load(path)?;
    if let Some(s) = seed {
        sc.seeds = SeedSpec::List(vec![s]);
    }
    Ok(sc)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn single_cell(args: &Single) -> Result<(Prepared, isac_sar::harness::Rendered)> {
    let sc = load(&args.common.scenario, args.common.seed)?;
    fs::create_dir_all(&args.common.out)?;
    let prep = Prepared::new(&sc)?;
    let snr = args.snr.unwrap_or(sc.snr_db[0]);
    let seed = sc.seeds.seeds()[0];
    let rendered = prep.render(snr, seed)?;
    Ok((prep, rendered))
}

fn render(args: &Single) -> Result<()> {
    let (prep, r) = single_cell(args)?;
    let out = &args.common.out;
    r.paths.write_csv(create(out, "paths.csv")?)?;
    write_iq(
        create(out, "cube.iq")?,
        &IqHeader::cube(&prep.cfg, &prep.trajectory, &r.cube),
        &r.cube.samples,
    )?;
    let sym = generate_ofdm_symbol(&prep.cfg, &prep.symbols)?;
    let data = ndarray_row(&sym.samples);
    write_iq(create(out, "waveform.iq")?, &IqHeader::waveform(&prep.cfg, &sym), &data)?;
    println!(
        "rendered {} pulses x {} samples, noise floor {:.3e}",
        r.cube.num_pulses(),
        r.cube.n_samples(),
        r.noise_floor
    );
    Ok(())
}

fn ndarray_row(v: &[isac_sar::C64]) -> ndarray::Array2<isac_sar::C64> {
    ndarray::Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("one row")
}

fn estimate(args: &Single) -> Result<()> {
    if args.method == Method::Raw {
        bail!("estimate needs sage_only or omp_sage");
    }
    let (prep, r) = single_cell(args)?;
    let est = prep.estimate(&r, args.method)?;
    let mut w = create(&args.common.out, "estimates.csv")?;
    writeln!(w, "pulse,tau_s,doppler_hz,re_alpha,im_alpha,paths,converged")?;
    for (i, p) in est.pulses.iter().enumerate() {
        let conv = p.sage.as_ref().is_some_and(|s| s.converged);
        match p.selected {
            Some(s) => writeln!(
                w,
                "{i},{},{},{},{},{},{conv}",
                s.delay,
                s.doppler,
                s.gain.re,
                s.gain.im,
                p.paths.len()
            )?,
            None => writeln!(w, "{i},NA,NA,NA,NA,0,{conv}")?,
        }
    }
    w.flush()?;
    let centre = &est.pulses[prep.trajectory.num_pulses / 2];
    if let Some(omp) = &centre.omp {
        omp.write_csv(create(&args.common.out, "omp_centre.csv")?, prep.dictionary.grid())?;
    }
    if let Some(s) = &centre.sage {
        s.write_history_csv(create(&args.common.out, "sage_centre.csv")?)?;
    }
    println!(
        "consensus cells {:?}, {} non-converged, {} non-interior, {} empty pulses",
        est.consensus,
        est.non_converged(),
        est.non_interior(),
        est.empty_pulses()
    );
    Ok(())
}

fn image(args: &Single) -> Result<()> {
    let (prep, r) = single_cell(args)?;
    let (img, _) = prep.process(&r, args.method)?;
    let m = prep.metrics(&img)?;
    img.write_magnitude_csv(create(&args.common.out, "image_db.csv")?)?;
    write_iq(create(&args.common.out, "image.iq")?, &IqHeader::image(&prep.cfg, &img), &img.pixels)?;
    println!(
        "{}: peak ({:.3} m, {:.3} m) rmse {:.4} m islr {:.2} dB peak/median {:.1} dB{}",
        args.method,
        m.peak_position.0,
        m.peak_position.1,
        m.rmse,
        m.islr,
        m.peak_to_median_db,
        if m.valid { "" } else { " [invalid]" }
    );
    Ok(())
}

fn flagged_count(records: &[RunRecord]) -> usize {
    records.iter().filter(|r| r.flagged()).count()
}

fn sweep(args: &Sweep) -> Result<bool> {
    let start = Instant::now();
    let mut scenarios = Vec::new();
    for p in &args.scenario {
        let mut sc = load(p, args.seed)?;
        if !args.method.is_empty() {
            sc.methods = args.method.clone();
        }
        scenarios.push(sc);
    }
    fs::create_dir_all(&args.out)?;
    let mut records = Vec::new();
    for sc in &scenarios {
        eprintln!("running {}", sc.id);
        records.extend(run_scenario(sc, args.jobs)?);
    }
    let summary = aggregate(&records);
    write_records_csv(create(&args.out, "records.csv")?, &records)?;
    write_summary_csv(create(&args.out, "summary.csv")?, &summary)?;
    write_manifest(
        &args.out,
        &scenarios,
        &records,
        args.jobs,
        &["records.csv", "summary.csv"],
        start.elapsed().as_secs_f64(),
    )?;
    let flagged = flagged_count(&records);
    println!("{} records, {} flagged, written to {}", records.len(), flagged, args.out.display());
    Ok(flagged == 0)
}

fn report(args: &Report) -> Result<bool> {
    let f = File::open(&args.records).with_context(|| format!("opening {}", args.records.display()))?;
    let records = read_records_csv(f)?;
    let summary = aggregate(&records);
    match &args.out {
        Some(p) => write_summary_csv(BufWriter::new(File::create(p)?), &summary)?,
        None => write_summary_csv(std::io::stdout().lock(), &summary)?,
    }
    Ok(flagged_count(&records) == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Render(a) => render(a).map(|_| true),
        Command::Estimate(a) => estimate(a).map(|_| true),
        Command::Image(a) => image(a).map(|_| true),
        Command::Sweep(a) => sweep(a).map(|ok| ok || !a.strict),
        Command::Report(a) => report(a).map(|ok| ok || !a.strict),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("flagged records present (--strict)");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
