//! Run configuration: one registry of keys shared by config files and flags.
//!
//! Layers apply in order: built-in defaults, per-command defaults, the
//! `--config` file, then command-line flags. Each key is either accepted by
//! a command or rejected as unknown there.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chmm::experiments::{AxisName, ExperimentConfig, GridAxis, Protocol, SeedSchedule};

pub const GEN: u8 = 1;
pub const SOURCE: u8 = 2;
pub const GRID: u8 = 4;
pub const REAL: u8 = 8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RealPaths {
    pub source_images: Option<PathBuf>,
    pub source_labels: Option<PathBuf>,
    pub source_rule: Option<String>,
    pub target_images: Option<PathBuf>,
    pub target_labels: Option<PathBuf>,
    pub target_rule: Option<String>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

/// Everything a subcommand needs, after all layers are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub exp: ExperimentConfig,
    pub seed: u64,
    pub seed_count: usize,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    /// Target training samples written by `gen`.
    pub target_samples: usize,
    pub real: RealPaths,
    /// Keys set by a config file or a flag.
    pub explicit: BTreeSet<&'static str>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            exp: ExperimentConfig::default(),
            seed: 0,
            seed_count: 50,
            seeds: None,
            out: None,
            jobs: 0,
            target_samples: 500,
            real: RealPaths::default(),
            explicit: BTreeSet::new(),
        }
    }
}

impl RunConfig {
    /// Seed pool: the explicit list, else `seed_count` seeds starting at `seed`.
    pub fn seed_pool(&self) -> Vec<u64> {
        match &self.seeds {
            Some(list) => list.clone(),
            None => (0..self.seed_count as u64).map(|i| self.seed + i).collect(),
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let mut exp = self.exp.clone();
        exp.seeds = self.seed_pool();
        exp
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }
}

type Apply = fn(&mut RunConfig, &str) -> Result<(), String>;

fn set<T>(slot: &mut T, value: Result<T, String>) -> Result<(), String> {
    *slot = value?;
    Ok(())
}

pub struct Key {
    pub name: &'static str,
    pub aliases: &'static [&'static str],
    pub value: &'static str,
    pub help: &'static str,
    pub default: &'static str,
    pub scope: u8,
    /// Repeatable keys accumulate; others take a single value per layer.
    pub repeat: bool,
    pub apply: Apply,
}

impl Key {
    pub fn flag(&self) -> String {
        self.name.replace('_', "-")
    }
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.trim().parse().map_err(|_| format!("`{v}` is not a valid number"))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean (true/false)")),
    }
}

fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(num).collect()
}

fn optional_l2(v: &str) -> Result<Option<f64>, String> {
    if v.trim() == "auto" {
        Ok(None)
    } else {
        num(v).map(Some)
    }
}

fn path(v: &str) -> Result<Option<PathBuf>, String> {
    Ok(Some(PathBuf::from(v.trim())))
}

/// `NAME=v1,v2,…`, `NAME=log:lo:hi:n` or `NAME=lin:lo:hi:n`.
pub fn parse_axis(v: &str) -> Result<GridAxis, String> {
    let (name, values) = v.split_once('=').ok_or_else(|| format!("axis `{v}` lacks `NAME=`"))?;
    let name = AxisName::parse(name).map_err(|e| e.to_string())?;
    let values = values.trim();
    let range = |rest: &str| -> Result<(f64, f64, usize), String> {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("axis range `{rest}` must be lo:hi:n"));
        }
        let n: usize = num(parts[2])?;
        if n == 0 {
            return Err("axis range needs n >= 1".into());
        }
        Ok((num(parts[0])?, num(parts[1])?, n))
    };
    if let Some(rest) = values.strip_prefix("log:") {
        let (lo, hi, n) = range(rest)?;
        if !(lo > 0.0 && hi > 0.0) {
            return Err("log-spaced axis needs positive bounds".into());
        }
        Ok(GridAxis::log_spaced(name, lo, hi, n))
    } else if let Some(rest) = values.strip_prefix("lin:") {
        let (lo, hi, n) = range(rest)?;
        let vals = if n == 1 {
            vec![lo]
        } else {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        };
        Ok(GridAxis::linear(name, vals))
    } else {
        Ok(GridAxis::linear(name, list(values)?))
    }
}

fn protocols(v: &str) -> Result<Vec<Protocol>, String> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Protocol::parse(s.trim()).map_err(|e| e.to_string()))
        .collect()
}

/// `none`, or `n_low,n_mid,n_high@t1,t2`.
fn seed_schedule(v: &str) -> Result<Option<SeedSchedule>, String> {
    if v.trim() == "none" {
        return Ok(None);
    }
    let (counts, thresholds) = v
        .split_once('@')
        .ok_or_else(|| format!("seed schedule `{v}` must be `a,b,c@t1,t2` or `none`"))?;
    let counts: Vec<usize> = list(counts)?;
    let thresholds: Vec<f64> = list(thresholds)?;
    if counts.len() != 3 || thresholds.len() != 2 {
        return Err(format!("seed schedule `{v}` needs three counts and two thresholds"));
    }
    Ok(Some(SeedSchedule {
        counts: [counts[0], counts[1], counts[2]],
        thresholds: [thresholds[0], thresholds[1]],
    }))
}

fn solver_init(v: &str) -> Result<(f64, f64, f64), String> {
    let xs: Vec<f64> = list(v)?;
    match xs.as_slice() {
        &[q, vv, m] => Ok((q, vv, m)),
        _ => Err(format!("solver init `{v}` must be q,V,m")),
    }
}

macro_rules! schedule_keys {
    ($field:ident, $prefix:literal, $role:literal, $scope:expr, $lr:literal, $batch:literal, $epochs:literal, $l2:literal, $early:literal) => {
        [
            Key {
                name: concat!($prefix, "_lr"),
                aliases: &[],
                value: "RATE",
                help: concat!("Adam learning rate of ", $role),
                default: $lr,
                scope: $scope,
                repeat: false,
                apply: |c, v| set(&mut c.exp.$field.learning_rate, num(v)),
            },
            Key {
                name: concat!($prefix, "_batch"),
                aliases: &[],
                value: "N",
                help: concat!("mini-batch size of ", $role),
                default: $batch,
                scope: $scope,
                repeat: false,
                apply: |c, v| set(&mut c.exp.$field.batch_size, num(v)),
            },
            Key {
                name: concat!($prefix, "_epochs"),
                aliases: &[],
                value: "N",
                help: concat!("maximum epochs of ", $role),
                default: $epochs,
                scope: $scope,
                repeat: false,
                apply: |c, v| set(&mut c.exp.$field.max_epochs, num(v)),
            },
            Key {
                name: concat!($prefix, "_l2"),
                aliases: &[],
                value: "X|auto",
                help: concat!("L2 penalty on the readout of ", $role, "; auto means lambda/M"),
                default: $l2,
                scope: $scope,
                repeat: false,
                apply: |c, v| set(&mut c.exp.$field.l2_lambda, optional_l2(v)),
            },
            Key {
                name: concat!($prefix, "_early_stop"),
                aliases: &[],
                value: "BOOL",
                help: concat!("stop ", $role, " when the holdout loss rises"),
                default: $early,
                scope: $scope,
                repeat: false,
                apply: |c, v| set(&mut c.exp.$field.early_stop, boolean(v)),
            },
        ]
    };
}

const ALL: u8 = GEN | SOURCE | GRID | REAL;
const TRAINING: u8 = GRID | REAL;

pub fn registry() -> Vec<Key> {
    let mut keys = vec![
        Key {
            name: "seed",
            aliases: &[],
            value: "N",
            help: "base seed; the seed pool is seed, seed+1, … unless `seeds` is given",
            default: "0",
            scope: ALL,
            repeat: false,
            apply: |c, v| set(&mut c.seed, num(v)),
        },
        Key {
            name: "out",
            aliases: &[],
            value: "DIR",
            help: "output directory",
            default: "none",
            scope: ALL,
            repeat: false,
            apply: |c, v| set(&mut c.out, path(v)),
        },
        Key {
            name: "jobs",
            aliases: &[],
            value: "N",
            help: "worker threads, 0 = all cores (env CHMM_LAB_JOBS)",
            default: "0",
            scope: TRAINING,
            repeat: false,
            apply: |c, v| set(&mut c.jobs, num(v)),
        },
        Key {
            name: "input_dim",
            aliases: &["D"],
            value: "N",
            help: "input dimension D",
            default: "1000",
            scope: GEN | SOURCE | GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.input_dim, num(v)),
        },
        Key {
            name: "hidden_dim",
            aliases: &["H"],
            value: "N",
            help: "hidden units H",
            default: "500",
            scope: SOURCE | GRID | REAL,
            repeat: false,
            apply: |c, v| set(&mut c.exp.hidden_dim, num(v)),
        },
        Key {
            name: "source_latent",
            aliases: &["L", "L-s"],
            value: "N",
            help: "latent dimension of the source task",
            default: "150",
            scope: GEN | SOURCE | GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.source_latent, num(v)),
        },
        Key {
            name: "target_latent",
            aliases: &["L-t"],
            value: "N",
            help: "latent dimension of the target task",
            default: "150",
            scope: GEN | GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.target_latent, num(v)),
        },
        Key {
            name: "latent_sum",
            aliases: &[],
            value: "N|none",
            help: "couple the latent dimensions as L_s = latent_sum - L_t",
            default: "none",
            scope: GRID,
            repeat: false,
            apply: |c, v| {
                set(
                    &mut c.exp.latent_sum,
                    if v.trim() == "none" { Ok(None) } else { num(v).map(Some) },
                )
            },
        },
        Key {
            name: "eta",
            aliases: &[],
            value: "X",
            help: "feature overlap kept by the retained source features",
            default: "1",
            scope: GEN | GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.eta, num(v)),
        },
        Key {
            name: "rho_sub",
            aliases: &[],
            value: "X",
            help: "fraction of source features substituted by fresh ones",
            default: "0.3",
            scope: GEN | GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.rho_sub, num(v)),
        },
        Key {
            name: "q_teacher",
            aliases: &["q"],
            value: "X",
            help: "alignment between source and target teachers",
            default: "1",
            scope: GEN | GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.q_teacher, num(v)),
        },
        Key {
            name: "source_samples",
            aliases: &["M-source"],
            value: "N",
            help: "source training samples (real: caps the source set)",
            default: "51200",
            scope: GEN | SOURCE | GRID | REAL,
            repeat: false,
            apply: |c, v| set(&mut c.exp.source_samples, num(v)),
        },
        Key {
            name: "target_samples",
            aliases: &["M"],
            value: "N",
            help: "target training samples to write",
            default: "500",
            scope: GEN,
            repeat: false,
            apply: |c, v| set(&mut c.target_samples, num(v)),
        },
        Key {
            name: "target_alpha",
            aliases: &[],
            value: "X",
            help: "target samples per hidden unit when M_target is not an axis",
            default: "1",
            scope: GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.target_alpha, num(v)),
        },
        Key {
            name: "n_test",
            aliases: &[],
            value: "N",
            help: "test samples per seed",
            default: "10000",
            scope: GEN | GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.n_test, num(v)),
        },
        Key {
            name: "n_mc",
            aliases: &[],
            value: "N",
            help: "Monte Carlo samples for the feature covariances, 0 = 10 H",
            default: "0",
            scope: GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.n_mc, num(v)),
        },
        Key {
            name: "protocols",
            aliases: &[],
            value: "LIST",
            help: "comma-separated subset of TF, RF, 2L, ftTF, theoryTF, theoryRF",
            default: "TF,RF",
            scope: TRAINING,
            repeat: false,
            apply: |c, v| set(&mut c.exp.protocols, protocols(v)),
        },
        Key {
            name: "seed_count",
            aliases: &[],
            value: "N",
            help: "size of the seed pool",
            default: "50",
            scope: TRAINING,
            repeat: false,
            apply: |c, v| set(&mut c.seed_count, num(v)),
        },
        Key {
            name: "seeds",
            aliases: &[],
            value: "LIST",
            help: "explicit comma-separated seed pool",
            default: "none",
            scope: TRAINING,
            repeat: false,
            apply: |c, v| set(&mut c.seeds, list(v).map(Some)),
        },
        Key {
            name: "seed_schedule",
            aliases: &[],
            value: "SPEC",
            help: "seeds per cell by M/H as `low,mid,high@t1,t2`, or `none` for the whole pool",
            default: "50,20,10@1,10",
            scope: TRAINING,
            repeat: false,
            apply: |c, v| set(&mut c.exp.seed_schedule, seed_schedule(v)),
        },
        Key {
            name: "lambda",
            aliases: &[],
            value: "X",
            help: "ridge strength of the readout",
            default: "1e-7",
            scope: SOURCE | GRID | REAL,
            repeat: false,
            apply: |c, v| set(&mut c.exp.lambda, num(v)),
        },
        Key {
            name: "axis",
            aliases: &[],
            value: "SPEC",
            help: "grid axis `NAME=v1,v2`, `NAME=log:lo:hi:n` or `NAME=lin:lo:hi:n`; NAME is one of \
                   M_target (in units of H), q_teacher, eta, rho_sub, L_t, H, M_source; repeat for more axes",
            default: "M_target=log:0.1:100:8",
            scope: TRAINING,
            repeat: true,
            apply: |c, v| parse_axis(v).map(|axis| c.exp.axes.push(axis)),
        },
        Key {
            name: "readout_tol",
            aliases: &[],
            value: "X",
            help: "gradient max-norm at which the readout solver stops",
            default: "1e-7",
            scope: TRAINING,
            repeat: false,
            apply: |c, v| set(&mut c.exp.readout_tol, num(v)),
        },
        Key {
            name: "readout_max_iter",
            aliases: &[],
            value: "N",
            help: "iteration cap of the readout solver",
            default: "10000",
            scope: TRAINING,
            repeat: false,
            apply: |c, v| set(&mut c.exp.readout_max_iter, num(v)),
        },
        Key {
            name: "solver_damping",
            aliases: &[],
            value: "X",
            help: "weight of the previous iterate in the saddle-point iteration",
            default: "0.5",
            scope: GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.solver.damping, num(v)),
        },
        Key {
            name: "solver_tol",
            aliases: &[],
            value: "X",
            help: "saddle-point convergence tolerance on the overlaps",
            default: "1e-7",
            scope: GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.solver.tol, num(v)),
        },
        Key {
            name: "solver_max_iter",
            aliases: &[],
            value: "N",
            help: "saddle-point iteration cap",
            default: "10000",
            scope: GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.solver.max_iter, num(v)),
        },
        Key {
            name: "solver_nodes",
            aliases: &[],
            value: "N",
            help: "Gauss-Hermite nodes for the Gaussian integrals",
            default: "199",
            scope: GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.solver.quadrature_nodes, num(v)),
        },
        Key {
            name: "solver_init",
            aliases: &[],
            value: "Q,V,M",
            help: "initial overlaps of the saddle-point iteration",
            default: "0.5,0.5,0.01",
            scope: GRID,
            repeat: false,
            apply: |c, v| set(&mut c.exp.solver.init, solver_init(v)),
        },
    ];
    keys.extend(schedule_keys!(
        source_training,
        "source",
        "source training",
        SOURCE | TRAINING,
        "0.001",
        "50",
        "200",
        "0.02",
        "true"
    ));
    keys.extend(schedule_keys!(
        scratch_training,
        "scratch",
        "2L training",
        TRAINING,
        "0.1",
        "1000",
        "200",
        "0.02",
        "false"
    ));
    keys.extend(schedule_keys!(
        fine_tuning,
        "fine",
        "fine-tuning",
        TRAINING,
        "0.01",
        "1000",
        "200",
        "auto",
        "false"
    ));
    for (name, help, apply) in [
        (
            "source_images",
            "IDX images of the source task",
            (|c, v| set(&mut c.real.source_images, path(v))) as Apply,
        ),
        ("source_labels", "IDX labels of the source task", |c, v| {
            set(&mut c.real.source_labels, path(v))
        }),
        ("target_images", "IDX images of the target training pool", |c, v| {
            set(&mut c.real.target_images, path(v))
        }),
        ("target_labels", "IDX labels of the target training pool", |c, v| {
            set(&mut c.real.target_labels, path(v))
        }),
        ("test_images", "IDX images of the target test set", |c, v| {
            set(&mut c.real.test_images, path(v))
        }),
        ("test_labels", "IDX labels of the target test set", |c, v| {
            set(&mut c.real.test_labels, path(v))
        }),
    ] {
        keys.push(Key {
            name,
            aliases: &[],
            value: "PATH",
            help,
            default: "required",
            scope: REAL,
            repeat: false,
            apply,
        });
    }
    for (name, help, apply) in [
        (
            "source_rule",
            "labeling rule of the source task: even-odd, ge:K, groups:A,B/C,D or luminosity:LO..HI,…",
            (|c, v| set(&mut c.real.source_rule, Ok(Some(v.trim().to_string())))) as Apply,
        ),
        (
            "target_rule",
            "labeling rule of the target task, same syntax",
            |c, v| set(&mut c.real.target_rule, Ok(Some(v.trim().to_string()))),
        ),
    ] {
        keys.push(Key {
            name,
            aliases: &[],
            value: "RULE",
            help,
            default: "required",
            scope: REAL,
            repeat: false,
            apply,
        });
    }
    keys
}

/// Command-specific defaults, applied before the config file.
pub fn command_defaults(command: &str) -> &'static [(&'static str, &'static str)] {
    match command {
        "theory" => &[("protocols", "theoryTF,theoryRF")],
        "phase" => &[
            ("axis", "q_teacher=0,0.25,0.5,0.75,1"),
            ("axis", "M_target=log:0.1:100:8"),
        ],
        "gen" => &[("input_dim", "100"), ("source_latent", "20")],
        _ => &[],
    }
}

/// Default shown in `--help` where it is not a plain value.
pub fn shown_default(command: &str, key: &str) -> Option<&'static str> {
    match (command, key) {
        ("gen", "target_latent") => Some("source_latent"),
        ("gen", "n_test" | "source_samples") => Some("not written"),
        _ => None,
    }
}

/// Key/value pairs of one layer, in order of appearance.
pub type Layer = Vec<(String, String)>;

/// Parses flat `key = value` text. `#` and `;` start comments.
pub fn parse_config_text(text: &str, origin: &Path) -> (Layer, Vec<String>) {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        let at = format!("{}:{}", origin.display(), i + 1);
        if line.starts_with('[') {
            errors.push(format!("{at}: sections are not supported; use flat key = value lines"));
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => out.push((k.trim().to_string(), v.trim().to_string())),
            _ => errors.push(format!("{at}: expected `key = value`, found `{line}`")),
        }
    }
    (out, errors)
}

/// Applies a layer for `scope`, collecting every error instead of stopping.
pub fn apply_layer(
    cfg: &mut RunConfig,
    keys: &[Key],
    scope: u8,
    command: &str,
    layer: &Layer,
    origin: &str,
    errors: &mut Vec<String>,
) {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut cleared: BTreeSet<&str> = BTreeSet::new();
    for (name, value) in layer {
        let Some(key) = keys.iter().find(|k| k.name == name) else {
            errors.push(format!("{origin}: unknown key `{name}`"));
            continue;
        };
        if key.scope & scope == 0 {
            errors.push(format!("{origin}: key `{name}` does not apply to `{command}`"));
            continue;
        }
        let count = seen.entry(key.name).or_default();
        *count += 1;
        if !key.repeat && *count == 2 {
            errors.push(format!("{origin}: key `{name}` given more than once"));
            continue;
        }
        // A layer that mentions a repeatable key replaces the previous layers' values.
        if key.repeat && cleared.insert(key.name) && key.name == "axis" {
            cfg.exp.axes.clear();
        }
        match (key.apply)(cfg, value) {
            Ok(()) => {
                cfg.explicit.insert(key.name);
            }
            Err(e) => errors.push(format!("{origin}: {name}: {e}")),
        }
    }
}

/// Default, command defaults, then config-file text and flag layers. The
/// configuration is returned along with every error, so later validation can
/// add its own findings to the same report.
pub fn build(command: &str, scope: u8, config: Option<(&Path, &str)>, flags: &Layer) -> (RunConfig, Vec<String>) {
    let keys = registry();
    let mut cfg = RunConfig::default();
    let mut errors = Vec::new();
    let defaults: Layer = command_defaults(command)
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    apply_layer(&mut cfg, &keys, scope, command, &defaults, "defaults", &mut errors);
    cfg.explicit.clear();
    if let Some((path, text)) = config {
        let (layer, parse_errors) = parse_config_text(text, path);
        errors.extend(parse_errors);
        apply_layer(
            &mut cfg,
            &keys,
            scope,
            command,
            &layer,
            &path.display().to_string(),
            &mut errors,
        );
    }
    apply_layer(&mut cfg, &keys, scope, command, flags, "command line", &mut errors);
    (cfg, errors)
}
