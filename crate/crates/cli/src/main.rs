mod commands;
mod config;
mod error;

use std::path::Path;
use std::time::Instant;

use clap::{ArgMatches, Command};
use lyapunov_learning::exec::with_threads;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use commands::{
    BenchSettings, GenSettings, LyapSettings, Output, Settings, SweepSettings, SynthSettings,
    TrainSettings,
};
use error::CliError;

fn cli() -> Command {
    Command::new("lyapl")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Lyapunov-regularized learning experiments")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config::subcommand(
            "gen",
            "Generate a regime-shift Lorenz trajectory",
            &GenSettings::default(),
        ))
        .subcommand(config::subcommand(
            "train",
            "Train one network online over a trajectory",
            &TrainSettings::default(),
        ))
        .subcommand(config::subcommand(
            "bench",
            "Compare the Lyapunov regularizer with L1, L2 and dropout over matched seeds",
            &BenchSettings::default(),
        ))
        .subcommand(config::subcommand(
            "sweep",
            "Loss ratio of the Lyapunov regularizer across alphas",
            &SweepSettings::default(),
        ))
        .subcommand(config::subcommand(
            "synth",
            "Train a network into a chaotic attractor with a target exponent",
            &SynthSettings::default(),
        ))
        .subcommand(config::subcommand(
            "lyap",
            "Lyapunov spectrum of an oracle map or a saved network",
            &LyapSettings::default(),
        ))
}

fn write_all(dir: &Path, files: &[(String, String)]) -> Result<(), CliError> {
    let io = |e: std::io::Error, p: &Path| CliError::Io(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| io(e, &path))?;
    }
    Ok(())
}

fn execute<T>(
    name: &str,
    matches: &ArgMatches,
    defaults: T,
    run: fn(&T) -> Result<Output, CliError>,
) -> Result<(), CliError>
where
    T: Settings + Serialize + DeserializeOwned + Sync,
{
    let start = Instant::now();
    let resolved = config::resolve(matches, &defaults, T::problems)?;
    let settings = resolved.settings;
    let output = with_threads(settings.threads(), || run(&settings))?;

    let manifest = json!({
        "command": name,
        "config_path": resolved.config_path,
        "output_dir": settings.out(),
        "resolved_config": resolved.dump,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "wall_time": start.elapsed().as_secs_f64(),
    });
    let mut files = output.files;
    files.push((
        "manifest.json".into(),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    ));
    write_all(settings.out(), &files)?;
    println!("{}", output.summary.trim_end());
    Ok(())
}

fn run() -> Result<(), CliError> {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match name {
        "gen" => execute(name, sub, GenSettings::default(), commands::gen),
        "train" => execute(name, sub, TrainSettings::default(), commands::train),
        "bench" => execute(name, sub, BenchSettings::default(), commands::bench),
        "sweep" => execute(name, sub, SweepSettings::default(), commands::sweep),
        "synth" => execute(name, sub, SynthSettings::default(), commands::synth),
        "lyap" => execute(name, sub, LyapSettings::default(), commands::lyap),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("{}", e.line());
        std::process::exit(e.exit_code());
    }
}
