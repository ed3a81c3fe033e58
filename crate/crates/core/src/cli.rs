//! Command-line interface. Exit codes: 0 success, 1 usage or configuration
//! error, 2 data error.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    encode_corpus, load_embedding_table, oov_stats, read_conllu_file, write_conllu, Corpus, EmbeddingTable,
    Normalization, TaggedSentence,
};
use crate::error::{Error, Result};
use crate::eval::attention::write_attention;
use crate::eval::{compare_strategies, evaluate, export_attention, tag_sentence};
use crate::synthetic::{generate, SyntheticConfig};
use crate::tagger::{natural_oov_mask, EmbedEnv, Model, OovStrategy};
use crate::training::{load_checkpoint, random_embeddings, save_checkpoint, train_corpus, Checkpoint, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "oovtag", version, about = "POS and morphological tagging with predicted OOV embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a tagger and write a checkpoint plus a per-epoch metrics log.
    Train(TrainArgs),
    /// Score a checkpoint on a gold corpus.
    Evaluate(EvalArgs),
    /// Tag a corpus and write CoNLL-U with UPOS and FEATS filled in.
    Predict(PredictArgs),
    /// Score one checkpoint under several OOV strategies.
    Compare(CompareArgs),
    /// Dump the predictor's attention weights as JSON and HTML.
    ExportAttention(ExportArgs),
    /// Report token- and type-level OOV rates of a corpus.
    AnalyzeOov(AnalyzeArgs),
    /// Write a synthetic suffix-morphology dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with training and model settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Metrics log path (JSON lines); defaults to the checkpoint path with
    /// `.metrics.jsonl` appended.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelInput {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelInput,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "predictor")]
    strategy: OovStrategy,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    model: ModelInput,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "predictor")]
    strategy: OovStrategy,
    /// Output file; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    model: ModelInput,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_delimiter = ',', default_values = ["predictor", "random", "unk_token"])]
    strategies: Vec<OovStrategy>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    model: ModelInput,
    #[arg(long)]
    input: PathBuf,
    /// Output path stem; `.json` and `.html` are written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Display temperature applied to the attention scores.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Treat these forms as OOV targets even when they have a table row.
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Match forms exactly, without the lowercase retry.
    #[arg(long)]
    no_lowercase: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5000)]
    train_sentences: usize,
    #[arg(long, default_value_t = 500)]
    dev_sentences: usize,
    #[arg(long, default_value_t = 1000)]
    test_sentences: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Compare(a) => cmd_compare(a),
        Command::ExportAttention(a) => cmd_export(a),
        Command::AnalyzeOov(a) => cmd_analyze(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Names the file in I/O errors, which otherwise only carry the OS message.
fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        e => e,
    })
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    let c = at(path, read_conllu_file(path))?;
    if c.num_tokens() == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(c)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => at(p, TrainConfig::load(p))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    config.validate()?;
    let train = read_corpus(&a.train)?;
    let dev = a.dev.as_deref().map(read_corpus).transpose()?;
    let table = at(&a.embeddings, load_embedding_table(&a.embeddings, Some(config.model.tagger.word_dim)))?;
    let outcome = train_corpus(&train, dev.as_ref(), &table, &config)?;

    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".metrics.jsonl");
        PathBuf::from(p)
    });
    let mut log = String::new();
    for entry in &outcome.log {
        log.push_str(&serde_json::to_string(entry)?);
        log.push('\n');
    }
    fs::write(&log_path, log)?;
    let best = outcome.best_epoch;
    save_checkpoint(&outcome.checkpoint(&config), &a.out)?;
    eprintln!(
        "wrote {} (best epoch {best}) and {}",
        a.out.display(),
        log_path.display()
    );
    Ok(())
}

struct Loaded {
    checkpoint: Checkpoint,
    model: Model,
    table: EmbeddingTable,
}

impl Loaded {
    fn new(input: &ModelInput) -> Result<Self> {
        let checkpoint = at(&input.model, load_checkpoint(&input.model))?;
        let model = checkpoint.model()?;
        let table = at(&input.embeddings, load_embedding_table(&input.embeddings, Some(model.word_dim())))?;
        Ok(Loaded {
            checkpoint,
            model,
            table,
        })
    }

    fn norm(&self) -> Normalization {
        self.checkpoint.config.normalization
    }

    fn encode(&self, corpus: &Corpus) -> Vec<TaggedSentence> {
        encode_corpus(corpus, &self.model.schema, &self.table, self.norm()).0
    }

    fn train_vocab(&self) -> HashSet<String> {
        self.checkpoint.train_vocab.iter().cloned().collect()
    }
}

fn cmd_evaluate(a: EvalArgs) -> Result<()> {
    let l = Loaded::new(&a.model)?;
    let test = l.encode(&read_corpus(&a.test)?);
    let random = random_embeddings(&l.checkpoint.config, &l.table);
    let env = EmbedEnv {
        table: &l.table,
        random: &random,
    };
    let report = evaluate(&l.model, &test, env, &l.train_vocab(), a.strategy)?;
    print!("{}", report.to_text());
    if let Some(p) = a.json {
        fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let l = Loaded::new(&a.model)?;
    let mut corpus = read_corpus(&a.input)?;
    let encoded = l.encode(&corpus);
    let random = random_embeddings(&l.checkpoint.config, &l.table);
    let env = EmbedEnv {
        table: &l.table,
        random: &random,
    };
    for (sentence, enc) in corpus.sentences.iter_mut().zip(&encoded) {
        let tags = tag_sentence(&l.model, enc, &natural_oov_mask(enc), env, a.strategy)?;
        for (w, t) in sentence.words.iter_mut().zip(tags) {
            w.upos = t.pos_tag(&l.model.schema).unwrap_or("_").to_string();
            w.feats = t.feats(&l.model.schema);
        }
    }
    match a.output {
        Some(p) => write_conllu(fs::File::create(p)?, &corpus)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_conllu(&mut lock, &corpus)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let l = Loaded::new(&a.model)?;
    let test = l.encode(&read_corpus(&a.test)?);
    let random = random_embeddings(&l.checkpoint.config, &l.table);
    let env = EmbedEnv {
        table: &l.table,
        random: &random,
    };
    let cmp = compare_strategies(&l.model, &test, env, &l.train_vocab(), &a.strategies)?;
    print!("{}", cmp.to_text());
    if let Some(p) = a.json {
        fs::write(p, cmp.to_json()?)?;
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let l = Loaded::new(&a.model)?;
    let sentences = l.encode(&read_corpus(&a.input)?);
    let random = random_embeddings(&l.checkpoint.config, &l.table);
    let env = EmbedEnv {
        table: &l.table,
        random: &random,
    };
    let extra: HashSet<&str> = a.targets.iter().map(String::as_str).collect();
    let masks: Vec<Vec<bool>> = sentences
        .iter()
        .map(|s| s.tokens.iter().map(|t| t.is_oov || extra.contains(t.form.as_str())).collect())
        .collect();
    let records = export_attention(&l.model, &sentences, env, a.temperature, Some(&masks))?;
    write_attention(&records, &a.out)?;
    eprintln!("wrote {} attention records", records.len());
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let table = at(&a.embeddings, load_embedding_table(&a.embeddings, None))?;
    let norm = Normalization {
        lowercase_fallback: !a.no_lowercase,
    };
    let s = oov_stats(&corpus, &table, norm);
    println!(
        "tokens: {} OOV of {} ({:.1}%)",
        s.oov_tokens,
        s.tokens,
        100.0 * s.token_rate()
    );
    println!("types: {} OOV of {} ({:.1}%)", s.oov_types, s.types, 100.0 * s.type_rate());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let data = generate(&SyntheticConfig {
        seed: a.seed,
        train_sentences: a.train_sentences,
        dev_sentences: a.dev_sentences,
        test_sentences: a.test_sentences,
        dim: a.dim,
        ..SyntheticConfig::default()
    });
    fs::create_dir_all(&a.out_dir)?;
    for (name, corpus) in [("train", &data.train), ("dev", &data.dev), ("test", &data.test)] {
        write_conllu(fs::File::create(a.out_dir.join(format!("{name}.conllu")))?, corpus)?;
    }
    crate::data::save_embedding_table(a.out_dir.join("embeddings.vec"), &data.table)?;
    eprintln!("wrote synthetic data to {}", a.out_dir.display());
    Ok(())
}
