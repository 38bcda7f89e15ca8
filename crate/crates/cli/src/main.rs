use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use newentry::corpus::io::{read_jsonl, write_jsonl};
use newentry::corpus::{generate_synthetic, Dataset, PipelineOptions, RawConversation, SyntheticConfig};
use newentry::eval::{analyze, evaluate, top_terms};
use newentry::model::ModelData;
use newentry::snp::{Ablation, AblationKind};
use newentry::tensor::Real;
use newentry::trainer::{Checkpoint, Phase, TrainConfig, Trainer};

const RUN_CONFIG: &str = "run.toml";
const MODEL_CKPT: &str = "model.ckpt";
const PRETRAIN_CKPT: &str = "pretrain.ckpt";

/// Everything a run reads. Unknown keys anywhere are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    /// When set, overrides the seed of every section.
    seed: Option<u64>,
    precision: Precision,
    synthetic: SyntheticConfig,
    pipeline: PipelineOptions,
    train: TrainConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
enum Precision {
    #[serde(rename = "32")]
    #[value(name = "32")]
    F32,
    #[default]
    #[serde(rename = "64")]
    #[value(name = "64")]
    F64,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow!("invalid config {}: {}", path.display(), e.message()))
    }

    fn resolve(mut self, common: &Common) -> Result<Self> {
        if let Some(seed) = common.seed {
            self.seed = Some(seed);
        }
        if let Some(seed) = self.seed {
            self.synthetic.seed = seed;
            self.pipeline.seed = seed;
            self.train.seed = seed;
        }
        if let Some(p) = common.precision {
            self.precision = p;
        }
        if let Some(lr) = common.lr {
            if !newentry::trainer::LR_GRID.contains(&lr) {
                bail!("--lr must be one of 1e-3, 1e-4, 1e-5, got {lr}");
            }
            self.train.lr = lr;
        }
        if let Some(kind) = common.ablate {
            self.train.model.snp.ablation = Ablation::only(kind.into());
        }
        self.synthetic.validate()?;
        self.train.validate()?;
        Ok(self)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serializing the resolved config")?;
        write_atomic(&dir.join(RUN_CONFIG), text.as_bytes())
    }

    fn read_run(dir: &Path) -> Result<Self> {
        RunConfig::load(Some(&dir.join(RUN_CONFIG)))
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AblateFlag {
    TopicInit,
    DiscConcat,
    DiscAtt,
}

impl From<AblateFlag> for AblationKind {
    fn from(f: AblateFlag) -> Self {
        match f {
            AblateFlag::TopicInit => AblationKind::TopicInit,
            AblateFlag::DiscConcat => AblationKind::DiscConcat,
            AblateFlag::DiscAtt => AblationKind::DiscAtt,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum SplitName {
    Train,
    Valid,
    #[default]
    Test,
}

#[derive(clap::Args, Debug, Default)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    precision: Option<Precision>,
    /// Predictor learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    ablate: Option<AblateFlag>,
}

#[derive(Parser, Debug)]
#[command(name = "newentry", version, about = "Predict whether a newcomer's first turn gets a reply")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus with its hidden annotations.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean, filter, split and encode a corpus; print its statistics.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its config, log and checkpoint.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report test metrics and analyses of a trained run. With `--ablate`,
    /// the ablated predictor is trained from the run's pretrained module.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        ablate: Option<AblateFlag>,
        /// Defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the top terms of every topic and discourse behavior.
    InspectTopics {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 5)]
        n: usize,
    },
    /// Write success probabilities for one split.
    Predict {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        /// Defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Writes through a temporary file so a failed run never leaves a partial artifact.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_dataset(input: &Path, pipeline: &PipelineOptions) -> Result<Dataset> {
    let raw: Vec<RawConversation> = read_jsonl(input)?;
    Ok(Dataset::prepare(&raw, pipeline)?)
}

fn generate(common: &Common, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?.resolve(common)?;
    ensure_dir(out)?;
    let corpus = generate_synthetic(&cfg.synthetic)?;
    write_jsonl(&out.join("corpus.jsonl"), &corpus.conversations)?;
    write_jsonl(&out.join("annotations.jsonl"), &corpus.annotations)?;
    let planted = serde_json::to_string_pretty(&corpus.planted)?;
    write_atomic(&out.join("planted.json"), planted.as_bytes())?;
    cfg.write(out)?;
    println!("conversations={} out={}", corpus.conversations.len(), out.display());
    Ok(())
}

/// One instance as written by `preprocess`.
#[derive(Serialize)]
struct InstanceRecord<'a> {
    split: &'static str,
    conversation_id: &'a str,
    query_turn_id: &'a str,
    newcomer_id: &'a str,
    label: bool,
    context_turns: usize,
    history_conversations: usize,
}

fn stats_kv(ds: &Dataset) -> String {
    let s = ds.stats();
    format!(
        "conversations={} turns={} successful_entries={} failed_entries={} avg_turns={:.4} history_ratio={:.4} vocab_size={} topic_vocab_size={}",
        s.conversations,
        s.turns,
        s.successful_entries,
        s.failed_entries,
        s.avg_turns,
        s.history_ratio,
        s.vocab_size,
        s.topic_vocab_size
    )
}

fn preprocess(input: &Path, common: &Common, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?.resolve(common)?;
    let ds = load_dataset(input, &cfg.pipeline)?;
    ensure_dir(out)?;
    if ds.cleaned.is_empty() {
        eprintln!("warning: no conversation passed the filters; writing empty outputs");
    }
    let records: Vec<InstanceRecord> = [("train", &ds.train), ("valid", &ds.valid), ("test", &ds.test)]
        .into_iter()
        .flat_map(|(split, xs)| {
            xs.iter().map(move |e| InstanceRecord {
                split,
                conversation_id: &e.instance.conversation_id,
                query_turn_id: &e.instance.query_turn_id,
                newcomer_id: &e.instance.newcomer_id,
                label: e.instance.label,
                context_turns: e.instance.context_len(),
                history_conversations: e.history.len(),
            })
        })
        .collect();
    write_jsonl(&out.join("instances.jsonl"), &records)?;
    write_jsonl(&out.join("conversations.jsonl"), &ds.cleaned)?;
    write_atomic(&out.join("vocab.tsv"), ds.vocab.to_tsv().as_bytes())?;
    write_atomic(&out.join("splits.json"), serde_json::to_string_pretty(&ds.split)?.as_bytes())?;
    let stats = stats_kv(&ds);
    write_atomic(&out.join("stats.txt"), format!("{stats}\n").as_bytes())?;
    cfg.write(out)?;
    println!("{stats}");
    Ok(())
}

fn train_typed<T: Real>(cfg: &RunConfig, data: &ModelData, out: &Path) -> Result<()> {
    let mut trainer = Trainer::<T>::new(cfg.train.clone(), data)?;
    trainer.run_while(|s| s.phase == Phase::PretrainTdm)?;
    trainer.checkpoint().save(&out.join(PRETRAIN_CKPT))?;
    let outcome = trainer.run()?;
    let mut log = trainer.log_lines().join("\n");
    log.push('\n');
    write_atomic(&out.join("train.log"), log.as_bytes())?;
    trainer.checkpoint().save(&out.join(MODEL_CKPT))?;
    let (report, _) = evaluate(&trainer.model, data, &data.valid, trainer.config.execution)?;
    write_atomic(&out.join("valid_metrics.txt"), format!("{report}\n").as_bytes())?;
    println!(
        "epochs={} best_epoch={} valid {report}",
        outcome.epochs,
        outcome.best_epoch.map_or("NA".to_string(), |e| e.to_string())
    );
    Ok(())
}

fn train(input: &Path, common: &Common, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?.resolve(common)?;
    let ds = load_dataset(input, &cfg.pipeline)?;
    let data = ModelData::from_dataset(&ds);
    if data.train.is_empty() {
        bail!("no training instances in {}", input.display());
    }
    ensure_dir(out)?;
    cfg.write(out)?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(&cfg, &data, out),
        Precision::F64 => train_typed::<f64>(&cfg, &data, out),
    }
}

/// Loads the run's final model, or trains the requested ablation from its
/// pretraining checkpoint when the run itself used different predictor flags.
fn model_for<'d, T: Real>(
    run: &Path,
    data: &'d ModelData,
    ablate: Option<AblateFlag>,
    out: &Path,
) -> Result<Trainer<'d, T>> {
    let trainer = Trainer::resume(Checkpoint::<T>::load(&run.join(MODEL_CKPT))?, data)?;
    let Some(kind) = ablate else {
        return Ok(trainer);
    };
    let wanted = Ablation::only(kind.into());
    if trainer.config.model.snp.ablation == wanted {
        return Ok(trainer);
    }
    let name = format!("ablate-{}.ckpt", AblationKind::from(kind).flag());
    let cached = out.join(&name);
    if cached.exists() {
        return Ok(Trainer::resume(Checkpoint::<T>::load(&cached)?, data)?);
    }
    let pretrained = Trainer::resume(Checkpoint::<T>::load(&run.join(PRETRAIN_CKPT))?, data)?;
    let mut config = pretrained.config.clone();
    config.model.snp.ablation = wanted;
    let mut forked = pretrained.fork(config)?;
    forked.run()?;
    forked.checkpoint().save(&cached)?;
    Ok(forked)
}

fn evaluate_typed<T: Real>(
    data: &ModelData,
    run: &Path,
    ablate: Option<AblateFlag>,
    out: &Path,
) -> Result<()> {
    let trainer = model_for::<T>(run, data, ablate, out)?;
    let model = &trainer.model;
    let mode = trainer.config.execution;
    let (report, _) = evaluate(model, data, &data.test, mode)?;
    let analysis = analyze(model, data, &data.test, mode)?;
    let label = model.config.snp.ablation.label();
    let text = format!("label=\"{label}\"\ntest {report}\n{}", analysis.to_kv());
    let file = match ablate {
        Some(k) => format!("metrics-{}.txt", AblationKind::from(k).flag()),
        None => "metrics.txt".to_string(),
    };
    write_atomic(&out.join(file), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn run_data(input: &Path, run: &Path) -> Result<(RunConfig, Dataset)> {
    let cfg = RunConfig::read_run(run)?;
    let ds = load_dataset(input, &cfg.pipeline)?;
    Ok((cfg, ds))
}

fn inspect_typed<T: Real>(ds: &Dataset, data: &ModelData, run: &Path, n: usize) -> Result<()> {
    let trainer = Trainer::resume(Checkpoint::<T>::load(&run.join(MODEL_CKPT))?, data)?;
    if n > data.topic_vocab_size {
        bail!("--n {n} exceeds the topic vocabulary of {} words", data.topic_vocab_size);
    }
    let (topics, discourse) = top_terms(&trainer.model, n)?;
    let mut s = String::new();
    for (label, rows) in [("topic", topics), ("discourse", discourse)] {
        for (k, row) in rows.iter().enumerate() {
            let words: Vec<&str> = row.iter().map(|&i| ds.vocab.token(i)).collect();
            let _ = writeln!(s, "{label}={k} {}", words.join(" "));
        }
    }
    print!("{s}");
    Ok(())
}

fn predict_typed<T: Real>(data: &ModelData, run: &Path, split: SplitName, out: &Path) -> Result<()> {
    let trainer = Trainer::resume(Checkpoint::<T>::load(&run.join(MODEL_CKPT))?, data)?;
    let (set, name) = match split {
        SplitName::Train => (&data.train, "train"),
        SplitName::Valid => (&data.valid, "valid"),
        SplitName::Test => (&data.test, "test"),
    };
    let preds = trainer.model.predict(data, set, trainer.config.execution)?;
    let mut s = String::from("id\thistory\tprobability\tpredicted\tgold\n");
    for (p, inst) in preds.iter().zip(set) {
        let _ = writeln!(
            s,
            "{}\t{}\t{:.6}\t{}\t{}",
            p.id,
            inst.history.len(),
            p.probability,
            u8::from(p.predicted),
            u8::from(p.gold)
        );
    }
    write_atomic(&out.join(format!("predictions-{name}.tsv")), s.as_bytes())?;
    println!("instances={} out={}", preds.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, out } => generate(&common, &out),
        Command::Preprocess { input, common, out } => preprocess(&input, &common, &out),
        Command::Train { input, common, out } => train(&input, &common, &out),
        Command::Evaluate {
            input,
            run,
            ablate,
            out,
        } => {
            let (cfg, ds) = run_data(&input, &run)?;
            let data = ModelData::from_dataset(&ds);
            let out = out.unwrap_or_else(|| run.clone());
            ensure_dir(&out)?;
            match cfg.precision {
                Precision::F32 => evaluate_typed::<f32>(&data, &run, ablate, &out),
                Precision::F64 => evaluate_typed::<f64>(&data, &run, ablate, &out),
            }
        }
        Command::InspectTopics { input, run, n } => {
            let (cfg, ds) = run_data(&input, &run)?;
            let data = ModelData::from_dataset(&ds);
            match cfg.precision {
                Precision::F32 => inspect_typed::<f32>(&ds, &data, &run, n),
                Precision::F64 => inspect_typed::<f64>(&ds, &data, &run, n),
            }
        }
        Command::Predict {
            input,
            run,
            split,
            out,
        } => {
            let (cfg, ds) = run_data(&input, &run)?;
            let data = ModelData::from_dataset(&ds);
            let out = out.unwrap_or_else(|| run.clone());
            ensure_dir(&out)?;
            match cfg.precision {
                Precision::F32 => predict_typed::<f32>(&data, &run, split, &out),
                Precision::F64 => predict_typed::<f64>(&data, &run, split, &out),
            }
        }
    }
}

fn main() -> ExitCode {
    newentry::exec::init_threads_from_env();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
