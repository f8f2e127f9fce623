use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Parser, Subcommand};

use dcsim::error::RunError;
use dcsim::memory::CountingAlloc;
use dcsim::scenario::report::{profile_csv, write_files_atomically};
use dcsim::scenario::{emit_reports, load_scenario, profile_instantiation, run_scenario, Format};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

const EXIT_INVALID: u8 = 1;
const EXIT_ABORT: u8 = 2;

#[derive(Parser)]
#[command(name = "dcsim", version, about = "Simulate cloud data centers from scenario files")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run scenarios and write their reports.
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Output directory. With several scenarios each gets a subdirectory
        /// named after its file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "csv,json")]
        format: Vec<Format>,
        /// Also write trace.log.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Scenarios run at once, each in its own process.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Measure build time and memory of a canonical data center.
    Profile {
        #[arg(long, value_delimiter = ',', required = true)]
        hosts: Vec<u64>,
        #[arg(long, default_value = "profile-out")]
        out: PathBuf,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn run_error_code(e: &RunError) -> u8 {
    match e {
        RunError::Scenario(_) => EXIT_INVALID,
        _ => EXIT_ABORT,
    }
}

fn run_one(path: &Path, out: Option<&Path>, formats: &[Format], trace: bool, seed: Option<u64>) -> ExitCode {
    let mut spec = match load_scenario(path) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INVALID, e),
    };
    if trace {
        spec.run.trace = true;
    }
    if let Some(s) = seed {
        spec.run.seed = s;
    }
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| spec.run.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let report = match run_scenario(&spec) {
        Ok(r) => r,
        Err(e) => return fail(run_error_code(&e), e),
    };
    match emit_reports(&report, &dir, formats) {
        Ok(_) => {
            println!(
                "{}: {} cloudlets, avg turnaround {:.3} s, makespan {:.3} s -> {}",
                path.display(),
                report.rows.len(),
                report.avg_turnaround_s,
                report.makespan_s,
                dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_ABORT, e),
    }
}

fn out_dir_for(base: Option<&Path>, scenario: &Path, many: bool) -> Option<PathBuf> {
    match (base, many) {
        (Some(b), true) => Some(b.join(scenario.file_stem().unwrap_or_default())),
        (Some(b), false) => Some(b.to_path_buf()),
        (None, _) => None,
    }
}

/// Runs each scenario as a child invocation of this binary, `jobs` at a time.
fn run_parallel(scenarios: &[PathBuf], out: Option<&Path>, formats: &[Format], trace: bool, seed: Option<u64>, jobs: usize) -> ExitCode {
    let exe = match std::env::current_exe() {
        Ok(p) => p,
        Err(e) => return fail(EXIT_ABORT, e),
    };
    let fmt = formats
        .iter()
        .map(|f| match f {
            Format::Csv => "csv",
            Format::Json => "json",
        })
        .collect::<Vec<_>>()
        .join(",");
    let mut worst = 0u8;
    for chunk in scenarios.chunks(jobs.max(1)) {
        let mut children = Vec::new();
        for s in chunk {
            let mut cmd = Command::new(&exe);
            cmd.arg("run").arg(s).arg("--format").arg(&fmt);
            if let Some(dir) = out_dir_for(out, s, true) {
                cmd.arg("--out").arg(dir);
            }
            if trace {
                cmd.arg("--trace");
            }
            if let Some(seed) = seed {
                cmd.arg("--seed").arg(seed.to_string());
            }
            match cmd.spawn() {
                Ok(c) => children.push(c),
                Err(e) => return fail(EXIT_ABORT, e),
            }
        }
        for mut c in children {
            let code = match c.wait() {
                Ok(st) => st.code().map_or(EXIT_ABORT, |c| c as u8),
                Err(_) => EXIT_ABORT,
            };
            worst = worst.max(code);
        }
    }
    ExitCode::from(worst)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Run {
            scenarios,
            out,
            format,
            trace,
            seed,
            jobs,
        } => {
            if jobs > 1 && scenarios.len() > 1 {
                return run_parallel(&scenarios, out.as_deref(), &format, trace, seed, jobs);
            }
            let many = scenarios.len() > 1;
            let mut worst = ExitCode::SUCCESS;
            for s in &scenarios {
                let code = run_one(s, out_dir_for(out.as_deref(), s, many).as_deref(), &format, trace, seed);
                if code != ExitCode::SUCCESS {
                    worst = code;
                }
            }
            worst
        }
        Cmd::Profile { hosts, out } => {
            let rows = match profile_instantiation(&hosts) {
                Ok(r) => r,
                Err(e) => return fail(EXIT_INVALID, e),
            };
            for r in &rows {
                match &r.error {
                    None => println!(
                        "{:>8} hosts  {:>10.4} s  {:>12} bytes  ({})",
                        r.host_count, r.build_seconds, r.peak_resident_bytes, r.method
                    ),
                    Some(e) => println!("{:>8} hosts  failed: {e}", r.host_count),
                }
            }
            if let Err(e) = write_files_atomically(&out, &[("profile.csv", profile_csv(&rows))]) {
                return fail(EXIT_ABORT, e);
            }
            if rows.iter().any(|r| r.error.is_some()) {
                return ExitCode::from(EXIT_ABORT);
            }
            ExitCode::SUCCESS
        }
        Cmd::Validate { scenario } => match load_scenario(&scenario) {
            Ok(spec) => {
                let hosts: u64 = spec.datacenters.iter().map(|d| d.total_hosts()).sum();
                println!(
                    "{}: ok ({} data centers, {hosts} hosts, {} brokers)",
                    scenario.display(),
                    spec.datacenters.len(),
                    spec.brokers.len()
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_INVALID, e),
        },
    }
}
