use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgMatches, Command};
use compcse_core::augment::SubsampleStrategy;
use compcse_core::evalkit::load_sts;
use compcse_core::pipeline::{self, Checkpoint, TrainConfig};
use compcse_core::synthetic::{self, SyntheticSpec};
use compcse_core::{Error, Result};

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .required(true)
        .value_parser(value_parser!(PathBuf))
        .help(help)
}

fn cli() -> Command {
    let mut train = Command::new("train")
        .about("Train an encoder; writes the best checkpoint, metrics.csv and charts to output_dir")
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .value_parser(value_parser!(PathBuf))
                .help("Flat `key = value` configuration file"),
        );
    for key in TrainConfig::KEYS {
        train = train.arg(Arg::new(key).long(key).value_name("VALUE").help("Overrides the configuration key"));
    }
    Command::new("compcse")
        .about("Contrastive sentence embeddings with latent composition of constituents")
        .subcommand_required(true)
        .subcommand(train)
        .subcommand(
            Command::new("eval")
                .about("Score a checkpoint on an STS file (Spearman, alignment, uniformity)")
                .arg(path_arg("checkpoint", "Checkpoint directory"))
                .arg(path_arg("sts", "Tab-separated sentence1, sentence2, score file")),
        )
        .subcommand(
            Command::new("embed")
                .about("Write one tab-separated embedding per input line")
                .arg(path_arg("checkpoint", "Checkpoint directory"))
                .arg(path_arg("input", "One text per line"))
                .arg(path_arg("output", "Embedding file to write")),
        )
        .subcommand(
            Command::new("expand")
                .about("Add span subsamples after each corpus line")
                .arg(path_arg("input", "Corpus, one sentence per line"))
                .arg(
                    Arg::new("strategy")
                        .long("strategy")
                        .required(true)
                        .value_parser(["none", "adjacent", "overlapping", "subsuming"]),
                )
                .arg(path_arg("output", "Expanded corpus to write"))
                .arg(Arg::new("min_clause_tokens").long("min_clause_tokens").value_parser(value_parser!(usize)))
                .arg(Arg::new("min_span_tokens").long("min_span_tokens").value_parser(value_parser!(usize))),
        )
        .subcommand(
            Command::new("synth")
                .about("Write the generated two-clause corpus (corpus.txt) and its dev set (dev.tsv)")
                .arg(path_arg("output_dir", "Directory to write into"))
                .arg(Arg::new("seed").long("seed").default_value("0").value_parser(value_parser!(u64))),
        )
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn path<'a>(m: &'a ArgMatches, name: &str) -> &'a Path {
    m.get_one::<PathBuf>(name).expect("required argument")
}

fn train(m: &ArgMatches) -> Result<()> {
    let mut config = match m.get_one::<PathBuf>("config") {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for key in TrainConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            config.set(key, v)?;
        }
    }
    let summary = pipeline::train(&config)?;
    let out = &summary.outcome;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    println!("examples={}", out.examples);
    println!("skipped={}", out.skipped);
    println!("best_step={}", out.best.step);
    println!(
        "best_spearman={}",
        out.best.dev_spearman.map(|s| s.to_string()).unwrap_or_default()
    );
    println!("checkpoint={}", summary.checkpoint_dir.display());
    println!("metrics={}", summary.metrics_path.display());
    Ok(())
}

fn eval(m: &ArgMatches) -> Result<()> {
    let checkpoint = Checkpoint::load(path(m, "checkpoint"))?;
    let pairs = load_sts(path(m, "sts"))?;
    print!("{}", pipeline::evaluate_checkpoint(&checkpoint, pairs)?);
    Ok(())
}

fn embed(m: &ArgMatches) -> Result<()> {
    let checkpoint = Checkpoint::load(path(m, "checkpoint"))?;
    let input = path(m, "input");
    let rows = pipeline::embed_lines(&checkpoint, &read(input)?, input)?;
    write(path(m, "output"), &rows)
}

fn expand(m: &ArgMatches) -> Result<()> {
    let defaults = TrainConfig::default();
    let strategy: SubsampleStrategy = m.get_one::<String>("strategy").expect("required").parse()?;
    let min_clause = m.get_one::<usize>("min_clause_tokens").copied().unwrap_or(defaults.min_clause_tokens);
    let min_span = m.get_one::<usize>("min_span_tokens").copied().unwrap_or(defaults.min_span_tokens);
    if min_clause == 0 || min_span == 0 {
        return Err(Error::Config("minimum token counts must be positive".into()));
    }
    let (text, counts) = pipeline::expand_text(&read(path(m, "input"))?, strategy, min_clause, min_span);
    write(path(m, "output"), &text)?;
    if strategy != SubsampleStrategy::None {
        eprintln!("note: expanding an already expanded file also subsamples its subsamples");
    }
    println!("adjacent={}", counts.adjacent);
    println!("overlapping={}", counts.overlapping);
    println!("subsuming={}", counts.subsuming);
    println!("added={}", counts.added());
    Ok(())
}

fn synth(m: &ArgMatches) -> Result<()> {
    let dir = path(m, "output_dir");
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let data = synthetic::generate(SyntheticSpec::default(), *m.get_one::<u64>("seed").expect("defaulted"));
    write(&dir.join("corpus.txt"), &data.corpus_text())?;
    write(&dir.join("dev.tsv"), &data.dev_text())?;
    println!("sentences={}", data.corpus.len());
    println!("dev_pairs={}", data.dev.len());
    Ok(())
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match matches.subcommand() {
        Some(("train", m)) => train(m),
        Some(("eval", m)) => eval(m),
        Some(("embed", m)) => embed(m),
        Some(("expand", m)) => expand(m),
        Some(("synth", m)) => synth(m),
        _ => unreachable!("subcommand is required"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
