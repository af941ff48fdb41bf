use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use maglab_labd::{Executor, Lab, LabConfig};

#[derive(Parser)]
#[command(name = "labd", about = "Lab service for the magnet-stage digital twin")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP/WebSocket API.
    Serve {
        /// Config file; falls back to $MAGLAB_CONFIG, ./maglab.toml, then built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<IpAddr>,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print the effective config as TOML.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("labd: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Config { config } => {
            let cfg = LabConfig::load(config.as_deref())?;
            print!("{}", toml::to_string_pretty(&cfg)?);
            Ok(())
        }
        Command::Serve { config, port, bind, output_dir } => {
            let mut cfg = LabConfig::load(config.as_deref())?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let ip: IpAddr = match bind {
                Some(ip) => ip,
                None => cfg.server.bind.parse()?,
            };
            let addr = SocketAddr::new(ip, port.unwrap_or(cfg.server.port));
            let lab = Lab::open(cfg)?;
            let exec = Arc::new(Executor::start(lab));
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            eprintln!("labd: listening on http://{addr}");
            rt.block_on(maglab_labd::server::serve(exec, addr))?;
            Ok(())
        }
    }
}
