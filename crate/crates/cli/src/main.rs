//! `qreform`: build indexes, train reformulators, evaluate and inspect them.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::info;

use qreform::config::Config;
use qreform::corpus::convert::{convert_paragraphs, convert_queries};
use qreform::corpus::{
    load_corpus, load_dataset, tokenize, write_corpus, write_dataset, DatasetSplit, Split, SyntheticDataset,
};
use qreform::embeddings::{load_embeddings, EmbeddingTable};
use qreform::eval::{
    eval_prf, eval_rl, prf_grid_search, sweep_candidates, write_report_table, write_sweep_tsv, Method,
};
use qreform::index::InvertedIndex;
use qreform::metrics::EvalReport;
use qreform::neural::{load_checkpoint, save_checkpoint, ModelConfig, ModelKind, PolicyModel};
use qreform::oracle::rl_oracle;
use qreform::rl::{reformulate_rounds, write_probability_dump, ProbabilityRow, Trainer};
use qreform::supervised::{label_queries, positive_fraction, sl_classifier_eval, sl_oracle_eval, train_classifier, LabelCache};
use qreform::Error;

mod failure;

use failure::{Failure, Outcome};

#[derive(Parser, Debug)]
#[command(name = "qreform", version, about = "Query reformulation with a REINFORCE-trained term selector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus, dataset and word vectors.
    Generate(GenerateArgs),
    /// Convert TREC-CAR-style paragraph, topic and qrels files.
    Convert(ConvertArgs),
    /// Build and save a BM25 index.
    Index(IndexArgs),
    /// Train a supervised or reinforcement-learned reformulator.
    Train(TrainArgs),
    /// Evaluate one or more methods on a dataset split.
    Eval(EvalArgs),
    /// Reformulate queries with a trained model and show what changes.
    Reformulate(ReformulateArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random component.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory for corpus.jsonl, dataset.jsonl and embeddings.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    #[command(flatten)]
    common: Common,
    /// `paragraph_id<TAB>text` dump.
    #[arg(long)]
    paragraphs: PathBuf,
    /// `query_id<TAB>text` topics.
    #[arg(long)]
    topics: Option<PathBuf>,
    /// Four-column qrels.
    #[arg(long, requires = "topics")]
    qrels: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    split: String,
    /// Output directory for corpus.jsonl and dataset.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IndexArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus file.
    #[arg(long)]
    corpus: PathBuf,
    /// Index file to write.
    #[arg(long)]
    index: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Corpus the dataset refers to; defaults to corpus.jsonl next to the dataset.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Word vectors (word followed by its components per line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// sl-ff, sl-cnn, rl-ff, rl-cnn, rl-rnn or rl-rnn-seq.
    #[arg(long)]
    model: String,
    /// Directory receiving `<model>.ckpt` and `<model>.log.jsonl`.
    #[arg(long)]
    out: PathBuf,
    /// Label cache for supervised models.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Validate inputs and configuration without training or writing.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Methods, comma separated or repeated.
    #[arg(long = "model", value_delimiter = ',', required = true)]
    methods: Vec<String>,
    /// Directory holding `<method>.ckpt` for learned methods.
    #[arg(long, default_value = ".")]
    checkpoints: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Recall and MAP cutoff.
    #[arg(long)]
    k: Option<usize>,
    /// Reformulation rounds for learned methods.
    #[arg(long)]
    rounds: Option<usize>,
    /// Per-M recall curve of every RL method, e.g. 50,100,200,300.
    #[arg(long, value_delimiter = ',')]
    sweep_candidates: Vec<usize>,
    /// Tune PRF settings over the configured grid on the validation split.
    #[arg(long)]
    grid: bool,
    /// Label cache for the SL-Oracle.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Directory for per-query reports and sweep tables.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReformulateArgs {
    #[command(flatten)]
    common: Common,
    /// Method the checkpoint was trained as, e.g. rl-cnn.
    #[arg(long)]
    model: String,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Query strings.
    #[arg(long = "query", required = true)]
    queries: Vec<String>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Titles shown per ranking.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Write per-term probabilities of every round here.
    #[arg(long)]
    probs: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QREFORM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Convert(a) => cmd_convert(a),
        Command::Index(a) => cmd_index(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Reformulate(a) => cmd_reformulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("qreform: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn load_config(c: &Common) -> Outcome<Config> {
    let cfg = match &c.config {
        Some(p) => Config::load(require(p)?).map_err(Failure::usage)?,
        None => Config::default(),
    };
    Ok(match c.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

/// The path, or a usage failure when it does not exist.
fn require(p: &Path) -> Outcome<&Path> {
    if p.exists() {
        Ok(p)
    } else {
        Err(Failure::usage(format!("{}: no such file", p.display())))
    }
}

fn guard(p: &Path, force: bool) -> Outcome<()> {
    if p.exists() && !force {
        return Err(Failure::Overwrite(p.to_path_buf()));
    }
    Ok(())
}

fn create(p: &Path) -> Outcome<BufWriter<File>> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(p)?))
}

fn cmd_generate(a: GenerateArgs) -> Outcome<()> {
    let cfg = load_config(&a.common)?;
    let paths = ["corpus.jsonl", "dataset.jsonl", "embeddings.txt"].map(|f| a.out.join(f));
    for p in &paths {
        guard(p, a.common.force)?;
    }
    let ds = SyntheticDataset::generate(&cfg.synthetic).map_err(Failure::usage)?;
    let e = &cfg.embeddings;
    let table = ds.embeddings(e.dim, e.noise, e.oov_rate, e.seed)?;
    write_corpus(&ds.corpus, create(&paths[0])?)?;
    write_dataset(&ds.split, create(&paths[1])?)?;
    table.write_text(create(&paths[2])?)?;
    println!(
        "documents\t{}\ntrain\t{}\nvalid\t{}\ntest\t{}\nwords\t{}",
        ds.corpus.len(),
        ds.split.train.len(),
        ds.split.valid.len(),
        ds.split.test.len(),
        table.len()
    );
    Ok(())
}

fn cmd_convert(a: ConvertArgs) -> Outcome<()> {
    let split: Split = a.split.parse().map_err(Failure::usage)?;
    let corpus_path = a.out.join("corpus.jsonl");
    let dataset_path = a.out.join("dataset.jsonl");
    guard(&corpus_path, a.common.force)?;
    let reader = BufReader::new(File::open(require(&a.paragraphs)?)?);
    let ids = convert_paragraphs(reader, create(&corpus_path)?)?;
    println!("documents\t{}", ids.len());
    if let (Some(t), Some(q)) = (&a.topics, &a.qrels) {
        guard(&dataset_path, a.common.force)?;
        let topics = BufReader::new(File::open(require(t)?)?);
        let qrels = BufReader::new(File::open(require(q)?)?);
        let dropped = convert_queries(topics, qrels, &ids, split, create(&dataset_path)?)?;
        println!("dropped_queries\t{dropped}");
    }
    Ok(())
}

fn cmd_index(a: IndexArgs) -> Outcome<()> {
    guard(&a.index, a.common.force)?;
    let corpus = load_corpus(require(&a.corpus)?)?;
    let index = InvertedIndex::build(&corpus)?;
    if let Some(dir) = a.index.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    index.save(&a.index)?;
    println!("documents\t{}\nterms\t{}", index.n_docs(), index.n_terms());
    Ok(())
}

struct Data {
    index: InvertedIndex,
    split: DatasetSplit,
    table: Option<Arc<EmbeddingTable>>,
}

fn load_data(d: &DataArgs, seed: u64, need_table: bool) -> Outcome<Data> {
    let index = InvertedIndex::load(require(&d.index)?)?;
    let corpus_path = match &d.corpus {
        Some(p) => p.clone(),
        None => d.dataset.parent().unwrap_or(Path::new(".")).join("corpus.jsonl"),
    };
    require(&d.dataset)?;
    let corpus = load_corpus(require(&corpus_path)?)?;
    let split = load_dataset(&d.dataset, &corpus)?;
    let table = match &d.embeddings {
        Some(p) => Some(Arc::new(load_embeddings(require(p)?, seed)?)),
        None if need_table => return Err(Failure::usage("--embeddings is required here")),
        None => None,
    };
    Ok(Data { index, split, table })
}

fn learned_kind(model: &str) -> Outcome<Method> {
    match model.parse::<Method>() {
        Ok(m @ (Method::Sl(_) | Method::Rl(_))) => Ok(m),
        _ => Err(Failure::usage(format!(
            "unknown model {model:?}; expected sl-ff, sl-cnn, rl-ff, rl-cnn, rl-rnn or rl-rnn-seq"
        ))),
    }
}

fn load_labels(path: Option<&Path>) -> Outcome<Option<LabelCache>> {
    match path {
        Some(p) if p.exists() => Ok(Some(LabelCache::read_tsv(BufReader::new(File::open(p)?))?)),
        _ => Ok(None),
    }
}

fn store_labels(path: Option<&Path>, cache: &LabelCache) -> Outcome<()> {
    if let Some(p) = path {
        cache.write_tsv(create(p)?)?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Outcome<()> {
    let method = learned_kind(&a.model)?;
    let mut cfg = load_config(&a.common)?;
    let ckpt = a.out.join(format!("{method}.ckpt"));
    let log_path = a.out.join(format!("{method}.log.jsonl"));
    let data = load_data(&a.data, cfg.embeddings.seed, true)?;
    let table = data.table.clone().expect("embeddings loaded");
    if data.split.train.is_empty() || data.split.valid.is_empty() {
        return Err(Failure::usage("the dataset needs train and valid queries"));
    }
    let (Method::Sl(kind) | Method::Rl(kind)) = method else { unreachable!() };
    cfg.model.kind = kind;
    cfg.validate().map_err(Failure::usage)?;
    let mut mc = ModelConfig::new(kind, cfg.model.d, table.dim());
    mc.gated = cfg.model.gated;
    mc.validate().map_err(Failure::usage)?;
    if a.dry_run {
        println!("ok\t{method}\ttrain\t{}\tvalid\t{}", data.split.train.len(), data.split.valid.len());
        return Ok(());
    }
    guard(&ckpt, a.common.force)?;
    match method {
        Method::Rl(_) => {
            let rl = cfg.rl();
            let mut trainer = Trainer::from_config(rl, table, &data.index)?;
            let mut log = create(&log_path)?;
            let s = trainer.fit(&data.split.train, &data.split.valid, Some(&mut log as &mut dyn Write))?;
            log.flush()?;
            save_checkpoint(&trainer.model, &ckpt)?;
            println!(
                "model\t{method}\nbest_valid_reward\t{:.6}\nbest_epoch\t{}\nepochs\t{}\nepisodes\t{}",
                s.best_valid, s.best_epoch, s.epochs_run, s.episodes
            );
        }
        _ => {
            let cache = load_labels(a.labels.as_deref())?;
            let reward = qreform::metrics::RewardConfig { k: cfg.train.reward_k };
            let data_l =
                label_queries(&data.split.train, &data.index, cfg.pool.m, cfg.pool.k, reward, cache.as_ref())?;
            store_labels(a.labels.as_deref(), &LabelCache::from_pools(&data_l))?;
            let mut model = PolicyModel::new(mc, table, cfg.sl.seed)?;
            let s = train_classifier(&mut model, &data_l, &cfg.sl)?;
            save_checkpoint(&model, &ckpt)?;
            let mut log = create(&log_path)?;
            writeln!(
                log,
                "{}",
                serde_json::json!({"steps": s.steps, "initial_loss": s.initial_loss, "final_loss": s.final_loss})
            )?;
            println!(
                "model\t{method}\npositive_fraction\t{:.4}\nsteps\t{}\ninitial_loss\t{:.6}\nfinal_loss\t{:.6}",
                positive_fraction(&data_l),
                s.steps,
                s.initial_loss,
                s.final_loss
            );
        }
    }
    info!("checkpoint written to {}", ckpt.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Outcome<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(k) = a.k {
        if k == 0 {
            return Err(Failure::usage("--k must be at least 1"));
        }
        cfg.eval.recall = k;
        cfg.eval.map = k;
    }
    if let Some(r) = a.rounds {
        if r == 0 {
            return Err(Failure::usage("--rounds must be at least 1"));
        }
        cfg.train.rounds = r;
    }
    let split: Split = a.split.parse().map_err(Failure::usage)?;
    let methods: Vec<Method> =
        a.methods.iter().map(|m| m.parse::<Method>().map_err(Failure::usage)).collect::<Outcome<_>>()?;
    let need_table = methods.iter().any(|m| m.needs_embeddings());
    for m in methods.iter().filter(|m| m.needs_checkpoint()) {
        let p = a.checkpoints.join(format!("{m}.ckpt"));
        if !p.exists() {
            return Err(Failure::Runtime(format!("{m}: missing checkpoint {}", p.display())));
        }
    }
    let data = load_data(&a.data, cfg.embeddings.seed, need_table)?;
    let queries = data.split.get(split);
    if queries.is_empty() {
        return Err(Failure::usage(format!("the dataset has no {} queries", a.split)));
    }
    let table = data.table.as_deref();
    let cut = cfg.eval;
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut sweeps = Vec::new();
    for &m in &methods {
        let rep = match m {
            Method::Raw | Method::PrfTfidf | Method::PrfRm | Method::PrfEmb | Method::VocabEmb => {
                let mut p = cfg.prf;
                if a.grid && m != Method::Raw {
                    let (best, _) =
                        prf_grid_search(m, &data.split.valid, &data.index, table, cfg.prf, &cfg.prf_grid, cut)?;
                    println!("# {m} grid choice: n={} k={}", best.n, best.k);
                    p = best;
                }
                eval_prf(m, queries, &data.index, table, p, cut)?
            }
            Method::Rl(kind) => {
                let model = load_model(&a.checkpoints, m, data.table.clone(), kind)?;
                let rl = cfg.rl();
                if !a.sweep_candidates.is_empty() {
                    sweeps.push((m, sweep_candidates(&model, queries, &data.index, &rl, &a.sweep_candidates, cut)?));
                }
                eval_rl(&model, queries, &data.index, &rl, rl.train.rounds, cut)?
            }
            Method::Sl(kind) => {
                let model = load_model(&a.checkpoints, m, data.table.clone(), kind)?;
                sl_classifier_eval(&model, queries, &data.index, cfg.pool.m, cfg.pool.k, cfg.sl.threshold, cut)?
            }
            Method::SlOracle => {
                let cache = load_labels(a.labels.as_deref())?;
                let reward = qreform::metrics::RewardConfig { k: cfg.train.reward_k };
                let labelled = label_queries(queries, &data.index, cfg.pool.m, cfg.pool.k, reward, cache.as_ref())?;
                store_labels(a.labels.as_deref(), &LabelCache::from_pools(&labelled))?;
                println!("# sl-oracle positive fraction: {:.4}", positive_fraction(&labelled));
                sl_oracle_eval(&labelled, &data.index, cut)?
            }
            Method::RlOracle => {
                let table = data.table.clone().expect("embeddings loaded");
                let size = cfg.oracle.subset_size.min(queries.len());
                let oc = qreform::oracle::OracleConfig { subset_size: size, ..cfg.oracle.clone() };
                let rep = rl_oracle(queries, &data.index, table, &cfg.rl(), &oc, cut)?;
                println!("# rl-oracle R*: {:.4} over {} subsets", rep.r_star, rep.subsets.len());
                if let Some(dir) = &a.out {
                    let p = dir.join("rl-oracle.tsv");
                    guard(&p, a.common.force)?;
                    rep.write_tsv(create(&p)?)?;
                }
                rep.eval_report(cut)?
            }
        };
        reports.push(rep);
    }
    write_report_table(&reports, io::stdout().lock())?;
    for (m, rows) in &sweeps {
        println!("# candidate sweep for {m}");
        write_sweep_tsv(rows, io::stdout().lock())?;
    }
    if let Some(dir) = &a.out {
        for r in &reports {
            let p = dir.join(format!("{}.tsv", r.method));
            guard(&p, a.common.force)?;
            r.write_tsv(create(&p)?)?;
        }
        let p = dir.join("summary.json");
        guard(&p, a.common.force)?;
        let summary: Vec<_> = reports.iter().map(|r| r.summary_json()).collect();
        serde_json::to_writer_pretty(create(&p)?, &summary).map_err(Error::from)?;
        for (m, rows) in &sweeps {
            let p = dir.join(format!("sweep-{m}.tsv"));
            guard(&p, a.common.force)?;
            write_sweep_tsv(rows, create(&p)?)?;
        }
    }
    Ok(())
}

fn load_model(dir: &Path, m: Method, table: Option<Arc<EmbeddingTable>>, kind: ModelKind) -> Outcome<PolicyModel> {
    let table = table.ok_or_else(|| Failure::usage(format!("{m} needs --embeddings")))?;
    let model = load_checkpoint(dir.join(format!("{m}.ckpt")), table)?;
    if model.config().kind != kind {
        return Err(Failure::Runtime(format!("{m}: checkpoint holds a {} model", model.config().kind)));
    }
    Ok(model)
}

fn cmd_reformulate(a: ReformulateArgs) -> Outcome<()> {
    let (Method::Sl(kind) | Method::Rl(kind)) = learned_kind(&a.model)? else { unreachable!() };
    let mut cfg = load_config(&a.common)?;
    if let Some(r) = a.rounds {
        if r == 0 {
            return Err(Failure::usage("--rounds must be at least 1"));
        }
        cfg.train.rounds = r;
    }
    if a.model.starts_with("sl-") {
        cfg.train.epsilon = cfg.sl.threshold;
        cfg.train.rounds = a.rounds.unwrap_or(1);
    }
    if let Some(p) = &a.probs {
        guard(p, a.common.force)?;
    }
    let index = InvertedIndex::load(require(&a.index)?)?;
    let table = Arc::new(load_embeddings(require(&a.embeddings)?, cfg.embeddings.seed)?);
    let model = load_checkpoint(require(&a.checkpoint)?, table)?;
    if model.config().kind != kind {
        return Err(Failure::Runtime(format!("checkpoint holds a {} model, not {kind}", model.config().kind)));
    }
    let rl = cfg.rl();
    let mut rows = Vec::new();
    let mut out = io::stdout().lock();
    for (i, text) in a.queries.iter().enumerate() {
        let q0 = tokenize(text);
        if q0.is_empty() {
            return Err(Failure::usage(format!("query {text:?} has no tokens")));
        }
        let raw = index.search(&q0, a.k);
        let res = reformulate_rounds(&q0, &index, &model, &rl, rl.train.rounds, a.k)?;
        writeln!(out, "query {i}")?;
        writeln!(out, "  original:     {}", q0.join(" "))?;
        writeln!(out, "  reformulated: {}", res.final_query().unwrap_or(&q0).join(" "))?;
        for (label, hits) in [("original", &raw), ("reformulated", &res.result)] {
            writeln!(out, "  top-{} ({label}):", a.k)?;
            for (rank, (doc, score)) in hits.hits.iter().enumerate() {
                let title = index.doc_title(*doc)?.join(" ");
                writeln!(out, "    {}\t{doc}\t{score:.4}\t{title}", rank + 1)?;
            }
        }
        for r in &res.rounds {
            rows.extend(ProbabilityRow::from_reformulation(i as u32, r));
        }
    }
    if let Some(p) = &a.probs {
        write_probability_dump(&rows, create(p)?)?;
    }
    Ok(())
}
