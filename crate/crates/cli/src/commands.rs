use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::ArgMatches;

use chmm::container::write_json;
use chmm::experiments::{
    export as export_result, learning_curve, load_result, phase_diagram, real_curve, train_source, write_csv, AxisName,
    ExperimentConfig, ExportFormat, GridResult, Protocol, RealTask, RunOptions, RunStore,
};
use chmm::generator::{
    derive_target, sample_dataset, sample_generative_pair, Dataset, GenerativePair, PairMeta, TransformSpec,
};
use chmm::realdata::{apply_rule, load_idx, LabelRule};
use chmm::rng::{StreamKey, StreamTag};

use crate::settings::{self, Layer, RunConfig};

pub enum CliError {
    /// Invalid configuration, every problem listed. Exit code 2.
    Config(Vec<String>),
    /// The computation itself failed. Exit code 1.
    Run(chmm::Error),
}

impl CliError {
    pub fn report(&self) {
        match self {
            CliError::Config(problems) => {
                for p in problems {
                    eprintln!("error: {p}");
                }
                eprintln!("{} configuration error(s); nothing was run", problems.len());
            }
            CliError::Run(e) => eprintln!("error: {e}"),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Run(_) => ExitCode::from(1),
        }
    }
}

impl From<chmm::Error> for CliError {
    fn from(e: chmm::Error) -> Self {
        match e {
            chmm::Error::Config(msg) => CliError::Config(msg.split("; ").map(str::to_string).collect()),
            other => CliError::Run(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

type Outcome = Result<(), CliError>;

pub fn load_config(command: &str, scope: u8, m: &ArgMatches, flags: &Layer) -> Result<RunConfig, CliError> {
    let file = match m.get_one::<PathBuf>("config") {
        Some(p) => Some((
            p.clone(),
            std::fs::read_to_string(p).map_err(|e| CliError::Config(vec![format!("{}: {e}", p.display())]))?,
        )),
        None => None,
    };
    let (mut cfg, mut errors) = settings::build(
        command,
        scope,
        file.as_ref().map(|(p, t)| (p.as_path(), t.as_str())),
        flags,
    );
    if !cfg.is_set("jobs") {
        if let Ok(v) = std::env::var("CHMM_LAB_JOBS") {
            match v.trim().parse() {
                Ok(n) => cfg.jobs = n,
                Err(_) => errors.push(format!("CHMM_LAB_JOBS: `{v}` is not a valid number")),
            }
        }
    }
    errors.extend(problems(command, &cfg, m));
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Config(errors))
    }
}

/// Every configuration problem of `command`, found before any work starts.
fn problems(command: &str, cfg: &RunConfig, m: &ArgMatches) -> Vec<String> {
    match command {
        "gen" => gen_problems(cfg),
        "train-source" => {
            let mut out = source_experiment(cfg).problems();
            if cfg.out.is_none() {
                out.push("--out is required".into());
            }
            out
        }
        "real" => real_inputs(cfg).err().unwrap_or_default(),
        _ => match grid_setup(command, cfg, m) {
            Ok(_) => Vec::new(),
            Err(p) => p,
        },
    }
}

pub fn run(command: &str, cfg: &RunConfig, m: &ArgMatches) -> Outcome {
    match command {
        "gen" => gen(cfg),
        "train-source" => train_source_cmd(cfg),
        "real" => real(cfg),
        _ => grid(command, cfg, m),
    }
}

fn require_out(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.out
        .as_deref()
        .ok_or_else(|| CliError::Config(vec!["--out is required".into()]))
}

fn gen_target_spec(cfg: &RunConfig) -> TransformSpec {
    let exp = &cfg.exp;
    TransformSpec {
        eta: exp.eta,
        rho_sub: exp.rho_sub,
        q_teacher: exp.q_teacher,
        target_latent_dim: if cfg.is_set("target_latent") {
            exp.target_latent
        } else {
            exp.source_latent
        },
    }
}

fn gen_problems(cfg: &RunConfig) -> Vec<String> {
    let exp = &cfg.exp;
    let mut problems = Vec::new();
    if cfg.out.is_none() {
        problems.push("--out is required".to_string());
    }
    for (name, v) in [
        ("input_dim", exp.input_dim),
        ("source_latent", exp.source_latent),
        ("target_latent", exp.target_latent),
        ("target_samples", cfg.target_samples),
    ] {
        if v == 0 {
            problems.push(format!("{name} must be positive"));
        }
    }
    if let Err(e) = gen_target_spec(cfg).validate() {
        problems.push(e.to_string());
    }
    if cfg.is_set("n_test") && exp.n_test == 0 {
        problems.push("n_test must be positive".into());
    }
    if cfg.is_set("source_samples") && exp.source_samples == 0 {
        problems.push("source_samples must be positive".into());
    }
    problems
}

fn gen(cfg: &RunConfig) -> Outcome {
    let exp = &cfg.exp;
    let spec = gen_target_spec(cfg);
    let target_latent = spec.target_latent_dim;
    let out = require_out(cfg)?;
    let seed = cfg.seed;
    let source = sample_generative_pair(exp.source_latent, exp.input_dim, seed)?;
    let target = derive_target(&source, &spec, seed)?;
    let meta = |latent_dim, transform| PairMeta {
        seed,
        latent_dim,
        input_dim: exp.input_dim,
        transform,
    };
    let mut written = Vec::new();
    let mut save_pair = |name: &str, pair: &GenerativePair, m: PairMeta| -> Outcome {
        let dir = out.join(name);
        pair.save(&dir, &m)?;
        written.push(dir);
        Ok(())
    };
    save_pair("source", &source, meta(exp.source_latent, None))?;
    save_pair("target", &target, meta(target_latent, Some(spec)))?;
    let m = cfg.target_samples;
    let mut datasets = vec![(
        "target_train",
        sample_dataset(&target, m, StreamKey::new(seed, StreamTag::TargetData, m as u64))?,
    )];
    if cfg.is_set("n_test") {
        datasets.push((
            "target_test",
            sample_dataset(&target, exp.n_test, StreamKey::new(seed, StreamTag::TestData, 0))?,
        ));
    }
    if cfg.is_set("source_samples") {
        let ms = exp.source_samples;
        datasets.push((
            "source_train",
            sample_dataset(&source, ms, StreamKey::new(seed, StreamTag::SourceData, ms as u64))?,
        ));
    }
    for (name, data) in &datasets {
        let dir = out.join(name);
        data.save(&dir)?;
        written.push(dir);
    }
    let mut stdout = std::io::stdout().lock();
    for dir in written {
        writeln!(stdout, "{}", dir.display())?;
    }
    Ok(())
}

/// The experiment view of `train-source`: no axes, one cell.
fn source_experiment(cfg: &RunConfig) -> ExperimentConfig {
    let mut exp = cfg.experiment();
    exp.axes.clear();
    exp.protocols = vec![Protocol::Transferred];
    exp
}

fn train_source_cmd(cfg: &RunConfig) -> Outcome {
    let out = require_out(cfg)?.to_path_buf();
    let exp = source_experiment(cfg);
    let params = exp.cell_params(&[])?;
    let (pair, net, trace) = train_source(&exp, &params, cfg.seed)?;
    pair.save(
        &out.join("source"),
        &PairMeta {
            seed: cfg.seed,
            latent_dim: params.source_latent,
            input_dim: params.input_dim,
            transform: None,
        },
    )?;
    net.save(&out.join("network"))?;
    chmm::container::write_atomic(&out.join("trace.csv"), trace.to_csv().as_bytes())?;
    write_json(&out.join("training.json"), &exp.source_training)?;
    let last = trace.train_loss.get(trace.best_epoch).copied().unwrap_or(f64::NAN);
    println!(
        "best_epoch={} stop_epoch={} early_stopped={} train_loss={last:?}",
        trace.best_epoch, trace.stop_epoch, trace.early_stopped
    );
    Ok(())
}

fn write_result(result: &GridResult, out: Option<&Path>) -> Outcome {
    std::io::stdout().lock().write_all(&write_csv(result)?)?;
    if let Some(dir) = out {
        export_result(result, dir, &[ExportFormat::Csv])?;
        if result.axis_names.len() == 2 {
            if let Err(e) = export_result(result, dir, &[ExportFormat::Heatmap]) {
                log::warn!("no heatmap written: {e}");
            }
        }
    }
    log::info!("{:?}", result.counters);
    Ok(())
}

struct GridSetup {
    exp: ExperimentConfig,
    dir: Option<PathBuf>,
    resume: bool,
}

fn grid_setup(command: &str, cfg: &RunConfig, m: &ArgMatches) -> Result<GridSetup, Vec<String>> {
    let resume = m.get_many::<PathBuf>("resume").map(|v| v.cloned().collect::<Vec<_>>());
    let setup = match resume {
        Some(dirs) if !dirs.is_empty() => {
            let extra: Vec<String> = cfg
                .explicit
                .iter()
                .filter(|k| **k != "jobs")
                .map(|k| format!("--resume DIR takes its configuration from the manifest; drop `{k}`"))
                .collect();
            if !extra.is_empty() {
                return Err(extra);
            }
            let manifest = RunStore::load_manifest(&dirs[0])
                .map_err(|e| vec![format!("cannot resume {}: {e}", dirs[0].display())])?;
            GridSetup {
                exp: manifest.config,
                dir: Some(dirs[0].clone()),
                resume: true,
            }
        }
        Some(_) if cfg.out.is_none() => return Err(vec!["--resume without DIR needs --out".into()]),
        resume => GridSetup {
            exp: cfg.experiment(),
            dir: cfg.out.clone(),
            resume: resume.is_some(),
        },
    };
    let exp = &setup.exp;
    let mut problems = exp.problems();
    let curve = exp.axes.len() == 1 && exp.axes[0].name == AxisName::TargetSamples;
    let phase = exp.axes.len() == 2 && exp.axes.iter().any(|a| a.name == AxisName::TargetSamples);
    match command {
        "phase" if !phase => problems.push("`phase` needs exactly two axes, one of them M_target".into()),
        "transfer" | "theory" | "curve" if !curve => problems.push(format!(
            "`{command}` needs exactly one axis, M_target; use `phase` for two"
        )),
        _ => {}
    }
    match command {
        "transfer" => {
            if let Some(p) = exp.protocols.iter().find(|p| p.is_theory()) {
                problems.push(format!(
                    "`transfer` runs simulated protocols only; use `theory` or `curve` for {p}"
                ));
            }
        }
        "theory" => {
            if let Some(p) = exp.protocols.iter().find(|p| !p.is_theory()) {
                problems.push(format!(
                    "`theory` runs theoryTF and theoryRF only; use `transfer` or `curve` for {p}"
                ));
            }
        }
        _ => {}
    }
    if problems.is_empty() {
        Ok(setup)
    } else {
        Err(problems)
    }
}

fn grid(command: &str, cfg: &RunConfig, m: &ArgMatches) -> Outcome {
    let setup = grid_setup(command, cfg, m).map_err(CliError::Config)?;
    let opts = RunOptions {
        dir: setup.dir.clone(),
        resume: setup.resume,
        jobs: cfg.jobs,
    };
    let result = if command == "phase" {
        phase_diagram(&setup.exp, &opts)?
    } else {
        learning_curve(&setup.exp, &opts)?
    };
    write_result(&result, setup.dir.as_deref())
}

struct RealInputs {
    /// Images and labels of the source, target and test sets.
    files: [(PathBuf, PathBuf); 3],
    source_rule: LabelRule,
    target_rule: LabelRule,
}

fn real_inputs(cfg: &RunConfig) -> Result<RealInputs, Vec<String>> {
    let r = &cfg.real;
    let mut problems = Vec::new();
    let mut need = |value: &Option<PathBuf>, name: &str| -> PathBuf {
        if value.is_none() {
            problems.push(format!("--{} is required", name.replace('_', "-")));
        }
        value.clone().unwrap_or_default()
    };
    let files = [
        (
            need(&r.source_images, "source_images"),
            need(&r.source_labels, "source_labels"),
        ),
        (
            need(&r.target_images, "target_images"),
            need(&r.target_labels, "target_labels"),
        ),
        (need(&r.test_images, "test_images"), need(&r.test_labels, "test_labels")),
    ];
    let mut rule = |value: &Option<String>, name: &str| -> LabelRule {
        match value.as_deref().map(str::parse::<LabelRule>) {
            None => problems.push(format!("--{} is required", name.replace('_', "-"))),
            Some(Err(e)) => problems.push(format!("{name}: {e}")),
            Some(Ok(rule)) => return rule,
        }
        LabelRule::EvenOdd
    };
    let source_rule = rule(&r.source_rule, "source_rule");
    let target_rule = rule(&r.target_rule, "target_rule");
    let exp = cfg.experiment();
    problems.extend(exp.problems());
    if exp.axes.len() != 1 || exp.axes[0].name != AxisName::TargetSamples {
        problems.push("`real` needs exactly one axis, M_target".into());
    }
    if let Some(p) = exp.protocols.iter().find(|p| p.is_theory()) {
        problems.push(format!("{p} needs a generative model and is unavailable in `real`"));
    }
    if problems.is_empty() {
        Ok(RealInputs {
            files,
            source_rule,
            target_rule,
        })
    } else {
        Err(problems)
    }
}

fn real(cfg: &RunConfig) -> Outcome {
    let inputs = real_inputs(cfg).map_err(CliError::Config)?;
    let labeled = |(images, labels): &(PathBuf, PathBuf), rule: &LabelRule, role: &str| -> Result<Dataset, CliError> {
        let set = load_idx(images, labels)?;
        let (data, report) = apply_rule(&set, rule)?;
        log::info!(
            "{role}: kept {} of {} images ({} dropped)",
            report.rows_kept,
            report.rows_in,
            report.rows_dropped
        );
        Ok(data)
    };
    let [source, target, test] = &inputs.files;
    let task = RealTask {
        source: labeled(source, &inputs.source_rule, "source")?,
        target: labeled(target, &inputs.target_rule, "target")?,
        test: labeled(test, &inputs.target_rule, "test")?,
    };
    let opts = RunOptions {
        dir: None,
        resume: false,
        jobs: cfg.jobs,
    };
    let result = real_curve(&cfg.experiment(), &task, &opts)?;
    write_result(&result, cfg.out.as_deref())
}

pub fn export(m: &ArgMatches) -> Outcome {
    let run = m.get_one::<PathBuf>("run").expect("required");
    let mut formats = Vec::new();
    let mut problems = Vec::new();
    for f in m.get_one::<String>("format").expect("defaulted").split(',') {
        match f.trim() {
            "csv" => formats.push(ExportFormat::Csv),
            "heatmap" => formats.push(ExportFormat::Heatmap),
            other => problems.push(format!("unknown export format `{other}` (csv, heatmap)")),
        }
    }
    if !RunStore::manifest_path(run).exists() {
        problems.push(format!("{} holds no manifest.json", run.display()));
    }
    if !problems.is_empty() {
        return Err(CliError::Config(problems));
    }
    let result = load_result(run)?;
    let dest = m.get_one::<PathBuf>("out").unwrap_or(run);
    for path in export_result(&result, dest, &formats)? {
        println!("{}", path.display());
    }
    Ok(())
}
