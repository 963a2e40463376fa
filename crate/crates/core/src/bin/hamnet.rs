use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use hamnet::checkpoint;
use hamnet::config::{PipelineConfig, KEYS};
use hamnet::data::{load_dataset, load_meta, DatasetMeta, LabelSet, MultimodalExample, SyntheticConfig};
use hamnet::eval::{evaluate, predict_all, render_report, render_sweep, sweep_l};
use hamnet::spatial::{build_graph, BBox};
use hamnet::train::train;
use hamnet::{Error, Result};

#[derive(Parser)]
#[command(name = "hamnet", version, about = "Multimodal named entity recognition pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write synthetic train/val/test JSONL files and meta.json.
    GenFixtures(GenArgs),
    /// Train a model and save the best checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a checkpoint on a labelled dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Decode a dataset and write one JSON line of spans per sentence.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the spatial graph of one example.
    Graph {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, value_enum, default_value_t = GraphFormat::Json)]
        format: GraphFormat,
        /// Defaults to meta.json next to the data file.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Train and test one model per interaction depth.
    SweepL {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "l", value_delimiter = ',', required = true)]
        rounds: Vec<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphFormat {
    Json,
    Dot,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    train: usize,
    #[arg(long, default_value_t = 16)]
    val: usize,
    #[arg(long, default_value_t = 16)]
    test: usize,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long = "d_v", alias = "d-v", default_value_t = 16)]
    d_v: usize,
    #[arg(long = "concept_vocab", alias = "concept-vocab", default_value_t = 8)]
    concept_vocab: usize,
    #[arg(long = "min_tokens", alias = "min-tokens", default_value_t = 4)]
    min_tokens: usize,
    #[arg(long = "max_tokens", alias = "max-tokens", default_value_t = 12)]
    max_tokens: usize,
    #[arg(long = "min_objects", alias = "min-objects", default_value_t = 0)]
    min_objects: usize,
    #[arg(long = "max_objects", alias = "max-objects", default_value_t = 6)]
    max_objects: usize,
    #[arg(long = "relevance_rate", alias = "relevance-rate", default_value_t = 0.5)]
    relevance_rate: f64,
    #[arg(long = "entity_density", alias = "entity-density", default_value_t = 0.3)]
    entity_density: f64,
    #[arg(long = "type_ambiguity", alias = "type-ambiguity", default_value_t = 0.0)]
    type_ambiguity: f64,
    #[arg(long = "word_noise", alias = "word-noise", default_value_t = 0.3)]
    word_noise: f64,
    #[arg(long = "visual_noise", alias = "visual-noise", default_value_t = 0.3)]
    visual_noise: f64,
}

/// One optional `--key value` flag per configuration key.
struct Overrides(Vec<(&'static str, String)>);

impl FromArgMatches for Overrides {
    fn from_arg_matches(m: &ArgMatches) -> std::result::Result<Self, clap::Error> {
        Ok(Self(
            KEYS.iter()
                .filter_map(|k| m.get_one::<String>(k).map(|v| (*k, v.clone())))
                .collect(),
        ))
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> std::result::Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for Overrides {
    fn augment_args(mut cmd: Command) -> Command {
        for key in KEYS {
            cmd = cmd.arg(
                clap::Arg::new(*key)
                    .long(*key)
                    .value_name("VALUE")
                    .help_heading("Configuration overrides"),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for (k, v) in &overrides.0 {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn meta_beside(data: &Path) -> PathBuf {
    data.parent().unwrap_or(Path::new("")).join("meta.json")
}

struct Splits {
    meta: DatasetMeta,
    train: Vec<MultimodalExample>,
    val: Vec<MultimodalExample>,
    test: Vec<MultimodalExample>,
}

fn load_splits(cfg: &PipelineConfig, need_test: bool) -> Result<Splits> {
    let train_path = cfg
        .train_path
        .as_deref()
        .ok_or_else(|| Error::Config("train_path is not set".into()))?;
    if need_test && cfg.test_path.is_none() {
        return Err(Error::Config("test_path is not set".into()));
    }
    let meta_path = cfg.meta_path.clone().unwrap_or_else(|| meta_beside(train_path));
    let meta = load_meta(&meta_path)?;
    let load = |p: &Option<PathBuf>| -> Result<Vec<MultimodalExample>> {
        p.as_ref().map_or(Ok(Vec::new()), |p| load_dataset(p, &meta))
    };
    Ok(Splits {
        train: load_dataset(train_path, &meta)?,
        val: load(&cfg.val_path)?,
        test: load(&cfg.test_path)?,
        meta,
    })
}

fn gen_fixtures(a: &GenArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_sentences: a.train,
        m_range: (a.min_tokens, a.max_tokens),
        n_range: (a.min_objects, a.max_objects),
        d: a.d,
        d_v: a.d_v,
        concept_vocab: a.concept_vocab,
        relevance_rate: a.relevance_rate,
        entity_density: a.entity_density,
        type_ambiguity: a.type_ambiguity,
        word_noise: a.word_noise,
        visual_noise: a.visual_noise,
    };
    hamnet::data::write_fixtures(&a.out, a.seed, &cfg, a.val, a.test)?;
    println!("wrote fixtures to {}", a.out.display());
    Ok(())
}

fn run_train(config: Option<&Path>, overrides: &Overrides) -> Result<()> {
    let cfg = load_config(config, overrides)?;
    let dir = cfg
        .checkpoint_dir
        .clone()
        .ok_or_else(|| Error::Config("checkpoint_dir is not set".into()))?;
    let s = load_splits(&cfg, false)?;
    info!("training on {} examples ({} validation)", s.train.len(), s.val.len());
    let (model, report) = train(&cfg, &s.meta, &s.train, &s.val)?;
    checkpoint::save(&dir, &model)?;
    println!(
        "best epoch {} (validation F1 {:.4}); checkpoint saved to {}",
        report.best_epoch,
        report.best_val_f1,
        dir.display()
    );
    if !s.test.is_empty() {
        let r = evaluate(&model.model, &model.params, &s.test)?;
        print!("{}", render_report(&r));
    }
    Ok(())
}

fn run_eval(ckpt: &Path, data: &Path, as_json: bool) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    let examples = load_dataset(data, &model.meta)?;
    let r = evaluate(&model.model, &model.params, &examples)?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
    } else {
        print!("{}", render_report(&r));
    }
    Ok(())
}

fn run_predict(ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    let examples = load_dataset(data, &model.meta)?;
    let preds = predict_all(&model.model, &model.params, &examples)?;
    let file = File::create(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    for (i, (p, ex)) in preds.iter().zip(&examples).enumerate() {
        let line = json!({
            "index": i,
            "tokens": ex.sentence.tokens,
            "labels": p.labels.iter().map(|&l| LabelSet::name(l)).collect::<Vec<_>>(),
            "spans": p.spans,
            "score": p.score,
            "relevance": p.relevance,
        });
        writeln!(w, "{line}").map_err(|e| Error::Io {
            path: out.to_path_buf(),
            source: e,
        })?;
    }
    w.flush().map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    println!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

fn run_graph(data: &Path, index: usize, format: GraphFormat, meta: Option<&Path>) -> Result<()> {
    let meta = load_meta(meta.map_or_else(|| meta_beside(data), Path::to_path_buf))?;
    let examples = load_dataset(data, &meta)?;
    let ex = examples
        .get(index)
        .ok_or_else(|| Error::Data(format!("index {index} is out of range for {} examples", examples.len())))?;
    let boxes: Vec<BBox> = ex.objects.iter().map(|o| o.bbox).collect();
    let graph = build_graph(&boxes);
    match format {
        GraphFormat::Json => println!(
            "{}",
            serde_json::to_string_pretty(&graph.to_json()).expect("graph serializes")
        ),
        GraphFormat::Dot => print!("{}", graph.to_dot()),
    }
    Ok(())
}

fn run_sweep(config: Option<&Path>, rounds: &[usize], overrides: &Overrides) -> Result<()> {
    let cfg = load_config(config, overrides)?;
    let s = load_splits(&cfg, true)?;
    let rows = sweep_l(&cfg, &s.meta, &s.train, &s.val, &s.test, rounds)?;
    print!("{}", render_sweep(&rows));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::GenFixtures(a) => gen_fixtures(&a),
        Cmd::Train { config, overrides } => run_train(config.as_deref(), &overrides),
        Cmd::Eval { ckpt, data, json } => run_eval(&ckpt, &data, json),
        Cmd::Predict { ckpt, data, out } => run_predict(&ckpt, &data, &out),
        Cmd::Graph {
            data,
            index,
            format,
            meta,
        } => run_graph(&data, index, format, meta.as_deref()),
        Cmd::SweepL {
            config,
            rounds,
            overrides,
        } => run_sweep(config.as_deref(), &rounds, &overrides),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
