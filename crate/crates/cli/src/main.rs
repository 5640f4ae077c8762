use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use energy_share::edge::{EdgeClient, EdgeServer};
use energy_share::scenario::{
    compare, load_run, parse_scenario, run_scenario, upload, write_run, RunOutcome,
};

#[derive(Parser)]
#[command(
    name = "energy-share",
    version,
    about = "Peer-to-peer energy sharing scenarios and edge service"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and write its run directory.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory; defaults to the scenario's `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Edge service to upload the session dataset to.
        #[arg(long, value_name = "HOST:PORT")]
        upload: Option<String>,
        /// Simulated seconds per real second.
        #[arg(long)]
        pace: Option<f64>,
    },
    /// Compare two or more run directories.
    Compare {
        /// Report CSV; level curves go to `<stem>-levels.csv` beside it.
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
    },
    /// Edge service commands.
    Edge {
        #[command(subcommand)]
        command: EdgeCommand,
    },
}

#[derive(Subcommand)]
enum EdgeCommand {
    /// Serve the edge store until killed.
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// List stored sessions in upload order.
    List {
        #[arg(long, value_name = "HOST:PORT")]
        addr: String,
    },
    /// Print a stored session (meta, then trace), or write it to a directory.
    Get {
        #[arg(long, value_name = "HOST:PORT")]
        addr: String,
        session_id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run {
            scenario,
            out,
            upload: upload_addr,
            pace,
        } => run(&scenario, out, upload_addr, pace),
        Command::Compare { out, runs } => compare_runs(&out, &runs),
        Command::Edge { command } => edge(command),
    }
}

fn run(
    path: &Path,
    out: Option<PathBuf>,
    upload_addr: Option<String>,
    pace: Option<f64>,
) -> Result<()> {
    let mut scenario =
        parse_scenario(path).with_context(|| format!("scenario {}", path.display()))?;
    if let Some(p) = pace {
        if !(p.is_finite() && p > 0.0) {
            bail!("--pace must be positive");
        }
        scenario.pace = Some(p);
    }
    let out = out.unwrap_or_else(|| scenario.output_dir.clone());
    let report = run_scenario(&scenario)?;
    let dir = write_run(&report, &out)?;
    println!("run {} -> {}", report.run_id, dir.display());
    match &report.outcome {
        RunOutcome::NoProviderAvailable => bail!("no provider available"),
        RunOutcome::Session {
            session_id,
            provider_id,
            terminal_reason,
        } => println!("session {session_id} with {provider_id}: {terminal_reason}"),
    }
    if let Some(d) = &report.dataset {
        let m = &d.metrics;
        println!(
            "records {} duration_s {} provider_loss_mah {} consumer_gain_mah {} energy_loss_mah {}",
            d.record_count(),
            m.duration_s,
            m.provider_loss_mah,
            m.consumer_gain_mah,
            m.energy_loss_mah
        );
    }
    if let Some(addr) = upload_addr.or(scenario.edge_upload) {
        let receipt = upload(&report, &addr).with_context(|| format!("upload to {addr}"))?;
        println!(
            "uploaded {} ({} records)",
            receipt.session_id, receipt.record_count
        );
    }
    Ok(())
}

fn compare_runs(out: &Path, dirs: &[PathBuf]) -> Result<()> {
    let runs = dirs
        .iter()
        .map(|d| load_run(d).with_context(|| format!("run {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    let comparison = compare(&runs)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, comparison.report_csv())?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let levels = out.with_file_name(format!("{stem}-levels.csv"));
    fs::write(&levels, comparison.levels_csv())?;
    println!("report {}", out.display());
    println!("levels {}", levels.display());
    Ok(())
}

fn edge(command: EdgeCommand) -> Result<()> {
    match command {
        EdgeCommand::Serve {
            port,
            data_dir,
            host,
        } => {
            let server = EdgeServer::bind(&format!("{host}:{port}"), &data_dir)?;
            println!("edge listening on {}", server.addr());
            std::io::stdout().flush()?;
            loop {
                std::thread::park();
            }
        }
        EdgeCommand::List { addr } => {
            let list = EdgeClient::connect(&addr)?.list()?;
            println!(
                "session_id,consumer_id,provider_id,technology,terminal_reason,energy_loss_mah"
            );
            for s in list {
                println!(
                    "{},{},{},{},{},{}",
                    s.session_id,
                    s.consumer_id,
                    s.provider_id,
                    s.technology,
                    s.terminal_reason,
                    s.energy_loss_mah
                );
            }
            Ok(())
        }
        EdgeCommand::Get {
            addr,
            session_id,
            out,
        } => {
            let (meta, trace) = EdgeClient::connect(&addr)?.get_raw(&session_id)?;
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    fs::write(dir.join("meta.txt"), meta)?;
                    fs::write(dir.join("trace.csv"), trace)?;
                    println!("wrote {}", dir.display());
                }
                None => print!("{meta}{trace}"),
            }
            Ok(())
        }
    }
}
