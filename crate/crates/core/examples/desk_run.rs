//! End-to-end run on the default synthetic corpus: planted-structure
//! recovery after pretraining, then test metrics against the BoW baseline.

use std::time::Instant;

use newentry::corpus::{generate_synthetic, Dataset, PipelineOptions, SyntheticConfig};
use newentry::eval::{analyze, bow_logistic_baseline, evaluate, top_terms, BaselineConfig};
use newentry::model::{ModelConfig, ModelData};
use newentry::snp::SnpConfig;
use newentry::tdm::TdmConfig;
use newentry::trainer::{Phase, TrainConfig, Trainer};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> newentry::Result<()> {
    newentry::exec::init_threads_from_env();
    let t0 = Instant::now();
    let corpus = generate_synthetic(&SyntheticConfig::default())?;
    let ds = Dataset::prepare(&corpus.conversations, &PipelineOptions::default())?;
    let data = ModelData::from_dataset(&ds);
    println!("data ready in {:.1}s: {:?}", t0.elapsed().as_secs_f64(), ds.stats());

    let config = TrainConfig {
        model: ModelConfig {
            tdm: TdmConfig {
                topics: env("TOPICS", 3),
                discourse: env("DISC", 6),
                encoder_hidden: env("ENC", 32),
                lambda_mi: env("LAMBDA", 0.01),
                ..TdmConfig::default()
            },
            snp: SnpConfig {
                embedding_dim: env("EMB", 16),
                hidden: env("HID", 16),
                ..SnpConfig::default()
            },
        },
        pretrain_tdm_epochs: env("N1", 100),
        pretrain_snp_epochs: env("N2", 5),
        max_cycles: env("CYCLES", 10),
        lr: env("LR", 1e-3),
        tdm_lr: env("TDM_LR", 1e-3),
        seed: env("SEED", 1),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::<f64>::new(config, &data)?;
    let t1 = Instant::now();
    trainer.run_while(|s| s.phase == Phase::PretrainTdm)?;
    println!("pretrain {:.1}s", t1.elapsed().as_secs_f64());
    for l in trainer.log_lines().iter().step_by(10) {
        println!("{l}");
    }
    let (topics, disc) = top_terms(&trainer.model, 10)?;
    let blocks: Vec<Vec<String>> = corpus.planted.topic_blocks.iter().map(|b| b.words.clone()).collect();
    for (k, words) in topics.iter().enumerate() {
        let w: Vec<&str> = words.iter().map(|&i| ds.vocab.token(i)).collect();
        let best = blocks
            .iter()
            .map(|b| w.iter().filter(|x| b.iter().any(|y| y == *x)).count())
            .max()
            .unwrap_or(0);
        println!("topic {k} purity {}/10: {w:?}", best);
    }
    let dblocks: Vec<Vec<String>> = corpus.planted.discourse_blocks.iter().map(|b| b.words.clone()).collect();
    for (k, words) in disc.iter().enumerate() {
        let w: Vec<&str> = words[..5].iter().map(|&i| ds.vocab.token(i)).collect();
        println!("discourse {k}: {w:?}");
    }
    for (b, block) in dblocks.iter().enumerate() {
        let best = disc
            .iter()
            .map(|words| words[..5].iter().filter(|&&i| block.iter().any(|y| y == ds.vocab.token(i))).count())
            .max()
            .unwrap_or(0);
        let owner = disc
            .iter()
            .map(|words| words[..5].iter().filter(|&&i| block.iter().any(|y| y == ds.vocab.token(i))).count())
            .enumerate()
            .max_by_key(|&(k, n)| (n, std::cmp::Reverse(k)))
            .map(|(k, _)| k);
        println!("planted discourse {b} member {best}/5 learned {owner:?}");
    }
    let t2 = Instant::now();
    let outcome = trainer.run()?;
    println!("joint {:.1}s {:?}", t2.elapsed().as_secs_f64(), outcome);
    for l in trainer.log_lines().iter().skip(trainer.config.pretrain_tdm_epochs) {
        println!("{l}");
    }
    let (report, _) = evaluate(&trainer.model, &data, &data.test, trainer.config.execution)?;
    println!("test {report}");
    let base = bow_logistic_baseline(&data.train, &data.test, data.vocab_size, &BaselineConfig::default())?;
    println!("baseline {}", base.report);
    let a = analyze(&trainer.model, &data, &data.test, trainer.config.execution)?;
    print!("{}", a.to_kv());
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
