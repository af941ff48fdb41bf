use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use maglab_core::calibrate::Scenario;
use maglab_labd::plot::run_svg;
use maglab_labd::store::{export_csv, load_run};
use maglab_labd::{ApiRequest, ApiResponse, Lab, LabConfig};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "qcal", about = "Calibration scenarios, sweet-spot search, RB, export and plots")]
struct Cli {
    /// Config file; falls back to $MAGLAB_CONFIG, ./maglab.toml, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `output_dir` from the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario by name, or `all`.
    Scenario { name: String },
    /// List the scenarios enabled in the config.
    List,
    /// Search for the coherence sweet spot on the live stage.
    SweetSpot {
        /// Stage x range in mm, e.g. `-110,-20`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        range: Vec<f64>,
        #[arg(long)]
        budget: Option<usize>,
        /// Stage z held during the search, mm.
        #[arg(long, allow_hyphen_values = true)]
        z: Option<f64>,
    },
    /// Randomized benchmarking at the current position.
    Rb {
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
        #[arg(long)]
        randomizations: Option<usize>,
        #[arg(long)]
        shots: Option<u64>,
    },
    /// Write a run's trace as CSV.
    Export {
        #[arg(long)]
        run: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a run's trace as SVG.
    Plot {
        #[arg(long)]
        run: u64,
        /// Defaults to `<output_dir>/plots/<run>.svg`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("qcal: {e}");
            ExitCode::FAILURE
        }
    }
}

fn call(lab: &mut Lab, verb: &str, payload: Value) -> Result<Value, Box<dyn std::error::Error>> {
    let r: ApiResponse = lab.handle_request(&ApiRequest::new(0, verb, payload));
    match (r.result, r.error) {
        (Some(v), None) => Ok(v),
        (_, Some(e)) => Err(format!("{} ({}): {}", e.kind, e.status, e.message).into()),
        _ => Err("empty response".into()),
    }
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    let mut cfg = LabConfig::load(cli.config.as_deref())?;
    if let Some(dir) = cli.output_dir {
        cfg.output_dir = dir;
    }
    match cli.command {
        Command::List => {
            for s in cfg.scenarios() {
                println!("{:<12} {}", s.name(), s.description());
            }
            Ok(true)
        }
        Command::Scenario { name } => {
            let names: Vec<String> = if name == "all" {
                cfg.scenarios().iter().map(|s| s.name().to_string()).collect()
            } else {
                let s: Scenario = name.parse()?;
                vec![s.name().to_string()]
            };
            let mut lab = Lab::open(cfg)?;
            let mut all_passed = true;
            for n in names {
                let v = call(&mut lab, "run_scenario", json!({"name": n}))?;
                print!("{}", v["verdict"].as_str().unwrap_or_default());
                println!("bundle: {}", v["dir"].as_str().unwrap_or_default());
                println!();
                all_passed &= v["passed"].as_bool().unwrap_or(false);
            }
            Ok(all_passed)
        }
        Command::SweetSpot { range, budget, z } => {
            if range.len() != 2 {
                return Err("--range takes two values, e.g. --range=-110,-20".into());
            }
            let mut lab = Lab::open(cfg)?;
            let v = call(&mut lab, "find_sweet_spot", json!({"range": [range[0], range[1]], "budget": budget, "base": z.map(|z| [0.0, z])}))?;
            println!("x_star_mm        {}", v["x_star"]);
            println!("f_l_min_hz       {} ± {}", v["f_l_min"], v["f_l_min_sigma"]);
            println!("probes           {}", v["probes"].as_array().map_or(0, Vec::len));
            println!("converged        {}", v["converged"]);
            println!("truth_angle_deg  {}", v["truth_residual_angle_deg"]);
            println!("scenario_id      {}", v["scenario_id"].as_str().unwrap_or_default());
            Ok(true)
        }
        Command::Rb { lengths, randomizations, shots } => {
            let mut lab = Lab::open(cfg)?;
            let params = json!({"lengths": lengths, "randomizations": randomizations, "shots": shots});
            let v = call(&mut lab, "run_experiment", json!({"kind": "rb", "params": params, "wait": true}))?;
            println!("run_id {}", v["run_id"]);
            if let Some(est) = v["fit"]["estimates"].as_object() {
                for (k, e) in est {
                    println!("{k:<16} {} ± {}", e["value"], e["sigma"]);
                }
            }
            Ok(true)
        }
        Command::Export { run, out } => {
            let stored = export_csv(&cfg.output_dir, run, &out)?;
            println!("wrote {} points of run {} to {}", stored.record.len(), run, out.display());
            Ok(true)
        }
        Command::Plot { run, out } => {
            let stored = load_run(&cfg.output_dir, run)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("plots").join(format!("{run:06}.svg")));
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&out, run_svg(&stored))?;
            println!("wrote {}", out.display());
            Ok(true)
        }
    }
}
