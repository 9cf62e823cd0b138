mod config;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Parser, Subcommand};
use pqcan::bus::write_trace;
use pqcan::crypto::Kind;
use pqcan::experiment::{
    read_results_csv, render_markdown, run_campaign_with, write_results_csv, write_sessions_csv, Cell,
    ExperimentError, RunOptions,
};

use config::{env_profiles_path, load_profiles_from, Format, RunConfig};

#[derive(Parser)]
#[command(name = "pqcan", version, about = "Post-quantum handshakes over a simulated CAN bus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign and write results.csv, sessions.csv and results.md.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (default: all processors).
        #[arg(long)]
        jobs: Option<usize>,
        /// Master seed; overrides the config file and PQCAN_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides [output] dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a results CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
    /// List the available algorithm profiles.
    ListAlgorithms {
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
    /// Check a config file without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

type Failure = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, jobs, seed, out } => cmd_run(&config, jobs, seed, out),
        Command::Report { input, format } => cmd_report(&input, format),
        Command::ListAlgorithms { profiles } => cmd_list_algorithms(profiles),
        Command::ValidateConfig { config } => cmd_validate(&config),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| format!("cannot write {}: {e}", path.display()).into())
}

fn cmd_run(path: &Path, jobs: Option<usize>, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode, Failure> {
    let mut rc = RunConfig::load(path)?;
    if let Some(s) = seed {
        rc.spec.master_seed = s;
    }
    let out_dir = out.unwrap_or(rc.out_dir);
    fs::create_dir_all(&out_dir).map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;

    let total = rc.spec.algorithms.len() * rc.spec.configs.len();
    let done = AtomicUsize::new(0);
    let progress = |alg: &str, cfg: &str, r: &Result<Cell, ExperimentError>| {
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        match r {
            Ok(c) => eprintln!("[{k}/{total}] {alg} {cfg}: success {:.2}", c.metrics.success_rate),
            Err(e) => eprintln!("[{k}/{total}] {alg} {cfg}: error: {e}"),
        }
    };
    let opts = RunOptions {
        jobs,
        trace_first: rc.trace,
        progress: Some(&progress),
    };
    let cells = run_campaign_with(&rc.spec, &rc.profiles, &opts)?;

    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for c in cells {
        match c {
            Ok(c) => ok.push(c),
            Err(e) => errors.push(e),
        }
    }
    let metrics: Vec<_> = ok.iter().map(|c| c.metrics.clone()).collect();
    write_results_csv(&metrics, create(&out_dir.join("results.csv"))?)?;
    write_sessions_csv(ok.iter().flat_map(|c| &c.sessions), create(&out_dir.join("sessions.csv"))?)?;
    if rc.format.markdown() {
        let mut md = create(&out_dir.join("results.md"))?;
        md.write_all(render_markdown(&metrics).as_bytes())?;
        md.flush()?;
    }
    if rc.trace {
        let dir = out_dir.join("traces");
        fs::create_dir_all(&dir)?;
        for c in &ok {
            if let Some(t) = &c.trace {
                let name = format!("{}_{}.tsv", c.metrics.algorithm, c.metrics.config).replace(['/', '\\'], "_");
                let mut w = create(&dir.join(name))?;
                write_trace(t, &mut w)?;
                w.flush()?;
            }
        }
    }
    eprintln!("wrote {} cell(s) to {}", metrics.len(), out_dir.display());
    if errors.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for e in &errors {
            eprintln!("error: {e}");
        }
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_report(input: &Path, format: Format) -> Result<ExitCode, Failure> {
    let file = File::open(input).map_err(|e| format!("cannot read {}: {e}", input.display()))?;
    let metrics = read_results_csv(file).map_err(|e| format!("{}: {e}", input.display()))?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if format.csv() {
        write_results_csv(&metrics, &mut out)?;
    }
    if format.markdown() {
        if format.csv() {
            writeln!(out)?;
        }
        out.write_all(render_markdown(&metrics).as_bytes())?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_list_algorithms(path: Option<PathBuf>) -> Result<ExitCode, Failure> {
    let path = path.or_else(env_profiles_path);
    let profiles = load_profiles_from(path.as_deref())?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for p in &profiles {
        let second = match p.kind {
            Kind::Kem => "ct",
            Kind::Dsa => "sig",
        };
        writeln!(
            out,
            "{}\t{}\tlevel {}\tpk {} B\t{second} {} B",
            p.name,
            p.kind,
            p.security_level,
            p.sizes.public_key(),
            p.sizes.second_artifact()
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(path: &Path) -> Result<ExitCode, Failure> {
    let rc = RunConfig::load(path)?;
    let cells = rc.spec.algorithms.len() * rc.spec.configs.len();
    for name in &rc.spec.algorithms {
        let p = pqcan::crypto::find_profile(&rc.profiles, name).expect("checked on load");
        for c in &rc.spec.configs {
            pqcan::crypto::check_model(p, c, rc.spec.compute_model).map_err(|e| format!("{name} on {}: {e}", c.name))?;
        }
    }
    let source = rc.profiles_path.as_ref().map_or("bundled".into(), |p| p.display().to_string());
    println!(
        "ok: {} algorithm(s) x {} config(s) = {cells} cell(s), {} iteration(s) each; profiles: {source}",
        rc.spec.algorithms.len(),
        rc.spec.configs.len(),
        rc.spec.iterations
    );
    Ok(ExitCode::SUCCESS)
}
