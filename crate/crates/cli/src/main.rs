//! `chmm-lab`: generate correlated tasks, run transfer protocols and replica
//! predictions, sweep grids and export the results.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use settings::{command_defaults, registry, Layer, GEN, GRID, REAL, SOURCE};

/// Subcommand name, scope and one-line description.
const SUBCOMMANDS: [(&str, u8, &str); 7] = [
    (
        "gen",
        GEN,
        "Sample a source task, derive its correlated target and write datasets",
    ),
    (
        "train-source",
        SOURCE,
        "Train the two-layer network on a sampled source task",
    ),
    (
        "transfer",
        GRID,
        "Simulate TF, RF, 2L and ftTF on the target and report test errors",
    ),
    (
        "theory",
        GRID,
        "Estimate feature covariances, solve the saddle point and report the predicted error",
    ),
    (
        "curve",
        GRID,
        "Learning curve against M/H for any mix of simulated and theory protocols",
    ),
    ("phase", GRID, "Two-axis phase diagram, one axis being M_target"),
    ("real", REAL, "Run TF, RF, 2L and ftTF on labeled IDX image files"),
];

fn key_args(command: &str, scope: u8) -> Vec<Arg> {
    let overrides = command_defaults(command);
    registry()
        .into_iter()
        .filter(|k| k.scope & scope != 0)
        .map(|k| {
            let shown: Vec<&str> = overrides
                .iter()
                .filter(|(n, _)| *n == k.name)
                .map(|(_, v)| *v)
                .collect();
            let default = match settings::shown_default(command, k.name) {
                Some(text) => text.to_string(),
                None if shown.is_empty() => k.default.to_string(),
                None => shown.join(" ; "),
            };
            let mut arg = Arg::new(k.name)
                .long(k.flag())
                .value_name(k.value)
                .help(format!("{} [default: {default}]", k.help))
                .action(if k.repeat { ArgAction::Append } else { ArgAction::Set })
                .allow_hyphen_values(true);
            for alias in k.aliases {
                arg = arg.visible_alias(*alias);
            }
            arg
        })
        .collect()
}

fn config_arg() -> Arg {
    Arg::new("config")
        .long("config")
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .help("flat `key = value` file; keys are the long flag names with `_` for `-`")
}

pub fn cli() -> Command {
    let mut root = Command::new("chmm-lab")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Transfer learning laboratory for the correlated hidden manifold model")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .action(ArgAction::Count)
                .global(true)
                .help("log progress to stderr (-vv for debug output)"),
        );
    for (name, scope, about) in SUBCOMMANDS {
        let mut sub = Command::new(name)
            .about(about)
            .arg(config_arg())
            .args(key_args(name, scope));
        if scope == GRID {
            sub = sub.arg(
                Arg::new("resume")
                    .long("resume")
                    .value_name("DIR")
                    .num_args(0..=1)
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("continue a stored run: the run in DIR (configuration from its manifest) or in --out"),
            );
        }
        root = root.subcommand(sub);
    }
    root.subcommand(
        Command::new("export")
            .about("Write CSV tables and gain heatmaps for a stored run")
            .arg(
                Arg::new("run")
                    .value_name("RUN_DIR")
                    .required(true)
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("directory holding manifest.json and cells/"),
            )
            .arg(
                Arg::new("format")
                    .long("format")
                    .value_name("LIST")
                    .default_value("csv")
                    .help("comma-separated subset of csv, heatmap"),
            )
            .arg(
                Arg::new("out")
                    .long("out")
                    .value_name("DIR")
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("write into DIR/export instead of RUN_DIR/export"),
            ),
    )
}

/// Flag values in registry order.
fn flag_layer(m: &ArgMatches) -> Layer {
    let mut layer = Layer::new();
    for key in registry() {
        if let Ok(Some(values)) = m.try_get_many::<String>(key.name) {
            layer.extend(values.map(|v| (key.name.to_string(), v.clone())));
        }
    }
    layer
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let level = match matches.get_count("verbose") {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    let (name, sub) = matches.subcommand().expect("subcommand required");
    let outcome = if name == "export" {
        commands::export(sub)
    } else {
        let scope = SUBCOMMANDS
            .iter()
            .find(|(n, _, _)| *n == name)
            .expect("known subcommand")
            .1;
        commands::load_config(name, scope, sub, &flag_layer(sub)).and_then(|cfg| commands::run(name, &cfg, sub))
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            e.exit_code()
        }
    }
}
