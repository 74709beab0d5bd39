//! `watermain` command-line entry point.
//!
//! Every run-config key is also a flag of the same name (`--seed 7`,
//! `--learning_rate 0.05` or `--learning-rate 0.05`). Flags override values
//! from `--config FILE`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use watermain::config::RunConfig;
use watermain::pipeline;
use watermain::Error;

const USAGE_EXIT: u8 = 2;
const RUNTIME_EXIT: u8 = 1;

fn key_args() -> Vec<Arg> {
    let mut args = vec![Arg::new("config")
        .long("config")
        .value_name("FILE")
        .value_parser(clap::value_parser!(PathBuf))
        .help("Flat key = value config file")];
    for key in RunConfig::KEYS {
        let mut arg = Arg::new(key).long(key).value_name("VALUE").action(ArgAction::Set);
        if key.contains('_') {
            arg = arg.visible_alias(key.replace('_', "-"));
        }
        args.push(arg);
    }
    args
}

fn cli() -> Command {
    let sub = |name: &'static str, about: &'static str| Command::new(name).about(about).args(key_args());
    Command::new("watermain")
        .about("Rank city blocks by water-main break risk")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(sub("synth", "Generate a synthetic city dataset"))
        .subcommand(sub("ingest", "Validate a dataset and emit block_table.csv"))
        .subcommand(sub("evaluate", "Temporal cross-validation against the baselines"))
        .subcommand(sub("rank", "Train on all history before as_of and rank every block"))
        .subcommand(sub("calibrate", "Write the pooled reliability curve"))
}

fn resolve(m: &ArgMatches) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<PathBuf>("config") {
        cfg.apply_file(path)?;
    }
    for key in RunConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(name: &str, cfg: &RunConfig) -> Result<(), Error> {
    match name {
        "synth" => {
            let city = pipeline::cmd_synth(cfg)?;
            println!(
                "wrote {} blocks, {} mains, {} work orders ({} main breaks) to {}",
                city.city.blocks.len(),
                city.city.mains.len(),
                city.city.work_orders.len(),
                city.break_count(),
                cfg.out.display()
            );
        }
        "ingest" => {
            let s = pipeline::cmd_ingest(cfg)?;
            for f in &s.files {
                println!("{:<20} accepted {:>7}  rejected {:>5}", f.file, f.accepted, f.rejected);
            }
            println!(
                "{} blocks ({} modeled), {} unmapped mains, {} main breaks, {} rejected rows",
                s.blocks, s.modeled_blocks, s.unmapped_mains, s.main_breaks, s.rejected_rows
            );
        }
        "evaluate" => {
            let ev = pipeline::cmd_evaluate(cfg)?;
            println!("{}", pipeline::comparison_table(&ev.run));
        }
        "rank" => {
            let r = pipeline::cmd_rank(cfg)?;
            println!("ranking as of {} (trained on reference years {:?})", r.as_of, r.train_years);
            println!("{:<36} {:>11} {:>10}", "Block", "Road rating", "Risk score");
            for row in r.rows.iter().take(10) {
                println!("{:<36} {:>11} {:>10}", row.label, row.road_rating, row.risk_score());
            }
        }
        "calibrate" => {
            let bins = pipeline::cmd_calibrate(cfg)?;
            for b in bins {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
                println!(
                    "[{:.1}, {:.1}{} n={:<6} predicted {:>6} empirical {:>6}",
                    b.lower,
                    b.upper,
                    if b.upper >= 1.0 { "]" } else { ")" },
                    b.count,
                    fmt(b.mean_predicted),
                    fmt(b.mean_empirical)
                );
            }
        }
        other => unreachable!("unknown subcommand {other}"),
    }
    Ok(())
}

fn report(e: &Error) {
    eprintln!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let result = resolve(sub).and_then(|cfg| run(name, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(if e.is_usage() { USAGE_EXIT } else { RUNTIME_EXIT })
        }
    }
}
