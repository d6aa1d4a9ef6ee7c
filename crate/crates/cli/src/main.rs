//! `ascl`: train, attack and analyze adversarial supervised contrastive models.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use ascl_core::adversary::{accuracy, attack_dataset, AttackKind};
use ascl_core::data::{export_csv, save_dataset};
use ascl_core::divergence::{divergence_sweep, write_sweep_csv};
use ascl_core::loss::SelectionStrategy;
use ascl_core::model::load_checkpoint;
use ascl_trainer::run::final_eval_seed;
use ascl_trainer::sweep::{write_sweep_summary, GridCell};
use ascl_trainer::{evaluate, sweep, synthetic_selection_stats, train, write_metrics, RunConfig, SyntheticStats, TrainError, KEYS};

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<ascl_core::Error> for Failure {
    fn from(e: ascl_core::Error) -> Self {
        TrainError::from(e).into()
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// Short aliases used by the attack-oriented commands.
fn aliases(key: &str) -> &'static [&'static str] {
    match key {
        "epsilon" => &["eps"],
        _ => &[],
    }
}

/// `--config` plus one flag per configuration key, minus `skip`.
fn config_args(cmd: Command, skip: &[&str]) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value file; flags override it"),
    );
    KEYS.iter().filter(|(k, _)| !skip.contains(k)).fold(cmd, |cmd, (key, default)| {
        let long: &'static str = Box::leak(flag_name(key).into_boxed_str());
        let mut arg = Arg::new(*key)
            .long(long)
            .value_name("VALUE")
            .help(format!("config key `{key}` (default: {default:?})"));
        if long != *key {
            arg = arg.alias(*key);
        }
        cmd.arg(arg.visible_aliases(aliases(key)))
    })
}

fn build_cli() -> Command {
    let checkpoint = || {
        Arg::new("checkpoint")
            .long("checkpoint")
            .value_name("FILE")
            .required(true)
            .help("model checkpoint written by `train`")
    };
    let attack = || {
        Arg::new("attack")
            .long("attack")
            .value_name("KIND")
            .default_value("pgd")
            .help("none, pgd or mpgd")
    };
    let no_random_init = || {
        Arg::new("no-random-init")
            .long("no-random-init")
            .action(ArgAction::SetTrue)
            .help("start the attack at the clean input")
    };
    let out = |help: &'static str| Arg::new("out").long("out").value_name("FILE").help(help);
    Command::new("ascl")
        .about("Adversarial supervised contrastive learning experiments")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(
            Command::new("train").about("Train a model; writes metrics, checkpoint and summary to output_dir"),
            &[],
        ))
        .subcommand(
            config_args(
                Command::new("evaluate").about("Evaluate a checkpoint on the configured test split"),
                &[],
            )
            .arg(checkpoint())
            .arg(
                Arg::new("attacks")
                    .long("attacks")
                    .value_name("LIST")
                    .help("comma-separated subset of none,pgd,mpgd (default: eval_attacks)"),
            ),
        )
        .subcommand(
            config_args(Command::new("attack").about("Attack the test split and report robust accuracy"), &[])
                .arg(checkpoint())
                .arg(attack())
                .arg(no_random_init())
                .arg(out("write the adversarial dataset here")),
        )
        .subcommand(
            config_args(
                Command::new("divergence").about("Divergences and robust accuracy over a perturbation grid (CSV)"),
                &[],
            )
            .arg(checkpoint())
            .arg(attack())
            .arg(no_random_init())
            .arg(
                Arg::new("eps-grid")
                    .long("eps-grid")
                    .value_name("LIST")
                    .default_value("0,0.01,0.02,0.03,0.05,0.1"),
            )
            .arg(out("write the CSV here instead of stdout")),
        )
        .subcommand(
            Command::new("selection-stats")
                .about("Mean positive/negative set sizes on synthetic batches")
                .arg(Arg::new("strategy").long("strategy").default_value("global"))
                .arg(Arg::new("batch-size").long("batch-size").default_value("128"))
                .arg(Arg::new("classes").long("classes").default_value("10"))
                .arg(Arg::new("trials").long("trials").default_value("1000"))
                .arg(
                    Arg::new("pred-acc")
                        .long("pred-acc")
                        .default_value("1")
                        .help("probability that a natural prediction is correct"),
                )
                .arg(
                    Arg::new("adv-acc")
                        .long("adv-acc")
                        .default_value("1")
                        .help("probability that an adversarial prediction is correct"),
                )
                .arg(Arg::new("seed").long("seed").default_value("0")),
        )
        .subcommand(
            config_args(
                Command::new("sweep").about("Train one model per grid cell and seed; summary CSV"),
                &[],
            )
            .arg(Arg::new("lambda-scl-grid").long("lambda-scl-grid").value_name("LIST"))
            .arg(Arg::new("lambda-vat-grid").long("lambda-vat-grid").value_name("LIST"))
            .arg(Arg::new("strategies").long("strategies").value_name("LIST"))
            .arg(Arg::new("seeds").long("seeds").value_name("LIST"))
            .arg(out("write the summary CSV here instead of stdout")),
        )
        .subcommand(
            config_args(
                Command::new("make-data").about("Generate the configured dataset and write train/test files"),
                &[],
            )
            .arg(Arg::new("out").long("out").value_name("FILE").required(true).help("training split"))
            .arg(Arg::new("test-out").long("test-out").value_name("FILE").help("test split"))
            .arg(
                Arg::new("format")
                    .long("format")
                    .value_parser(["bin", "csv"])
                    .default_value("bin"),
            ),
        )
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse<T: std::str::FromStr>(m: &ArgMatches, name: &str) -> Result<T, Failure>
where
    T::Err: std::fmt::Display,
{
    let v = m.get_one::<String>(name).expect("has a default");
    v.parse().map_err(|e| usage(format!("--{name} {v}: {e}")))
}

fn parse_list<T: std::str::FromStr>(name: &str, v: &str) -> Result<Vec<T>, Failure>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| usage(format!("--{name} {v}: {e}"))))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(usage(format!("--{name} is empty")));
    }
    Ok(items)
}

/// Config file overlaid with the flags that were given.
fn run_config(m: &ArgMatches, extra: &[(&str, String)]) -> Result<RunConfig, Failure> {
    let mut pairs = match m.get_one::<String>("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("--config {path}: {e}")))?;
            RunConfig::parse_text(&text)?
        }
        None => Vec::new(),
    };
    for (key, _) in KEYS {
        if let Ok(Some(v)) = m.try_get_one::<String>(key) {
            pairs.push((key.to_string(), v.clone()));
        }
    }
    pairs.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    let cfg = RunConfig::from_pairs(pairs)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Attack flags that map onto both the training and evaluation attack keys.
fn attack_overrides(m: &ArgMatches) -> Vec<(&'static str, String)> {
    let mut extra = Vec::new();
    if m.get_flag("no-random-init") {
        extra.push(("random_init", "false".to_string()));
    }
    for (from, to) in [("epsilon", "eval_epsilon"), ("eta", "eval_eta"), ("steps", "eval_steps")] {
        let explicit_eval = matches!(m.try_get_one::<String>(to), Ok(Some(_)));
        if let (Ok(Some(v)), false) = (m.try_get_one::<String>(from), explicit_eval) {
            extra.push((to, v.clone()));
        }
    }
    extra
}

fn sink(path: Option<&String>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_train(m: &ArgMatches) -> CliResult {
    let cfg = run_config(m, &[])?;
    let out = train(&cfg)?;
    match &cfg.output_dir {
        Some(dir) => {
            let summary = serde_json::to_string_pretty(&out.summary).map_err(|e| Failure::Runtime(e.to_string()))?;
            println!("{summary}");
            eprintln!("wrote {}", dir.display());
        }
        None => write_metrics(&out.rows, io::stdout().lock())?,
    }
    Ok(())
}

fn load_model(m: &ArgMatches) -> Result<ascl_core::model::Model, Failure> {
    let path: PathBuf = m.get_one::<String>("checkpoint").expect("required").into();
    load_checkpoint(&path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_evaluate(m: &ArgMatches) -> CliResult {
    let cfg = run_config(m, &[])?;
    let kinds: Vec<AttackKind> = match m.get_one::<String>("attacks") {
        Some(v) => parse_list("attacks", v)?,
        None => cfg.eval_attacks.clone(),
    };
    let model = load_model(m)?;
    let (_, test) = cfg.datasets()?;
    let rows = evaluate(&model, &test, &cfg.eval_attack, &kinds, final_eval_seed(cfg.seed), cfg.epochs)?;
    write_metrics(&rows, io::stdout().lock())?;
    Ok(())
}

fn cmd_attack(m: &ArgMatches) -> CliResult {
    let cfg = run_config(m, &attack_overrides(m))?;
    let kind: AttackKind = parse(m, "attack")?;
    let model = load_model(m)?;
    let (_, test) = cfg.datasets()?;
    let x_adv = attack_dataset(&model, &test, kind, &cfg.eval_attack, final_eval_seed(cfg.seed))?;
    let nat = accuracy(&model, test.features(), test.labels())?;
    let rob = accuracy(&model, &x_adv, test.labels())?;
    if let Some(path) = m.get_one::<String>("out") {
        save_dataset(&test.with_features(x_adv)?, path)?;
    }
    println!("attack,epsilon,eta,steps,n_samples,nat_acc,rob_acc");
    println!(
        "{kind},{},{},{},{},{nat},{rob}",
        cfg.eval_attack.epsilon,
        cfg.eval_attack.eta,
        cfg.eval_attack.steps,
        test.len()
    );
    Ok(())
}

fn cmd_divergence(m: &ArgMatches) -> CliResult {
    let cfg = run_config(m, &attack_overrides(m))?;
    let kind: AttackKind = parse(m, "attack")?;
    let grid: Vec<f64> = parse_list("eps-grid", m.get_one::<String>("eps-grid").expect("default"))?;
    if grid.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
        return Err(usage("--eps-grid values must be finite and >= 0"));
    }
    let model = load_model(m)?;
    let (_, test) = cfg.datasets()?;
    let rows = divergence_sweep(&model, &test, kind, &cfg.eval_attack, &grid, final_eval_seed(cfg.seed))?;
    let mut w = sink(m.get_one::<String>("out"))?;
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_selection_stats(m: &ArgMatches) -> CliResult {
    let s = SyntheticStats {
        strategy: parse::<SelectionStrategy>(m, "strategy")?,
        batch_size: parse(m, "batch-size")?,
        classes: parse(m, "classes")?,
        trials: parse(m, "trials")?,
        pred_acc: parse(m, "pred-acc")?,
        adv_acc: parse(m, "adv-acc")?,
        seed: parse(m, "seed")?,
    };
    let c = synthetic_selection_stats(&s)?;
    println!("strategy,batch_size,classes,trials,mean_pos,mean_neg");
    println!(
        "{},{},{},{},{:.4},{:.4}",
        s.strategy, s.batch_size, s.classes, s.trials, c.positives, c.negatives
    );
    Ok(())
}

fn cmd_sweep(m: &ArgMatches) -> CliResult {
    let cfg = run_config(m, &[])?;
    let list_or = |name: &str, fallback: String| m.get_one::<String>(name).cloned().unwrap_or(fallback);
    let scl: Vec<f64> = parse_list("lambda-scl-grid", &list_or("lambda-scl-grid", cfg.weights.lambda_scl.to_string()))?;
    let vat: Vec<f64> = parse_list("lambda-vat-grid", &list_or("lambda-vat-grid", cfg.weights.lambda_vat.to_string()))?;
    let strategies: Vec<SelectionStrategy> = parse_list("strategies", &list_or("strategies", cfg.strategy.to_string()))?;
    let seeds: Vec<u64> = parse_list("seeds", &list_or("seeds", cfg.seed.to_string()))?;
    if scl.iter().chain(&vat).any(|v| !v.is_finite()) {
        return Err(usage("grid weights must be finite"));
    }
    let cells = GridCell::grid(&strategies, &scl, &vat);
    let rows = sweep(&cfg, &cells, &seeds)?;
    let mut w = sink(m.get_one::<String>("out"))?;
    write_sweep_summary(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_make_data(m: &ArgMatches) -> CliResult {
    let cfg = run_config(m, &[])?;
    let (train_set, test_set) = cfg.datasets()?;
    let csv = m.get_one::<String>("format").map(String::as_str) == Some("csv");
    let write = |d: &ascl_core::data::Dataset, path: &String| -> CliResult {
        if csv {
            export_csv(d, BufWriter::new(File::create(path)?))?;
        } else {
            save_dataset(d, path)?;
        }
        Ok(())
    };
    write(&train_set, m.get_one::<String>("out").expect("required"))?;
    if let Some(p) = m.get_one::<String>("test-out") {
        write(&test_set, p)?;
    }
    println!("train={} test={} dim={} classes={}", train_set.len(), test_set.len(), train_set.dim(), train_set.num_classes());
    Ok(())
}

fn run(argv: impl IntoIterator<Item = String>) -> Result<(), Failure> {
    let matches = match build_cli().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind::{DisplayHelp, DisplayVersion};
            return match e.kind() {
                DisplayHelp | DisplayVersion => {
                    print!("{e}");
                    Ok(())
                }
                _ => Err(Failure::Usage(e.render().to_string())),
            };
        }
    };
    match matches.subcommand() {
        Some(("train", m)) => cmd_train(m),
        Some(("evaluate", m)) => cmd_evaluate(m),
        Some(("attack", m)) => cmd_attack(m),
        Some(("divergence", m)) => cmd_divergence(m),
        Some(("selection-stats", m)) => cmd_selection_stats(m),
        Some(("sweep", m)) => cmd_sweep(m),
        Some(("make-data", m)) => cmd_make_data(m),
        _ => unreachable!("subcommand is required"),
    }
}

fn main() -> ExitCode {
    match run(std::env::args()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("{}", msg.trim_end());
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
