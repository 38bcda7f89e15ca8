//! Acceptance run: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

use std::cell::Cell;
use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use newentry::corpus::synthetic::{SyntheticCorpus, QUESTION_BEHAVIOR};
use newentry::corpus::{
    clean_conversation, extract_instances, filter_conversations, generate_synthetic, split,
    Conversation, Dataset, PipelineOptions, SparseBow, SyntheticConfig, Turn, DEFAULT_RATIOS,
};
use newentry::eval::{analyze, auc, bow_logistic_baseline, evaluate, top_terms, BaselineConfig};
use newentry::model::{joint_terms, InstanceInput, JointNoise, ModelConfig, ModelData, NewEntryModel};
use newentry::snp::{class_weight, Ablation, AblationKind, SnpConfig};
use newentry::tdm::{discourse_kl_uniform, gaussian_kl, TdmConfig};
use newentry::tensor::{finite_diff_check, GradCheckTarget, Group, ParamGrads, ParamKey, Tape, Tensor};
use newentry::trainer::{Phase, TrainConfig, Trainer};

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
}

fn timed(id: usize, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Line {
    let t = Instant::now();
    let (pass, detail) = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let line = Line {
        id,
        name,
        pass,
        detail,
        secs: t.elapsed().as_secs_f64(),
    };
    eprintln!("[acceptance] criterion {id} finished in {:.1}s", line.secs);
    line
}

// ---------------------------------------------------------------- 1

/// Full joint objective with both stores. Gradients always come from
/// backward of the whole sum. Finite differences for predictor tables use
/// the predictor term alone, the only summand those tables reach; the other
/// summand is around 100 on the toy instance and its roundoff would swamp
/// predictor gradients near 1e-6. `tdm_moved` records any evidence against
/// that independence.
struct Joint {
    model: NewEntryModel<f64>,
    inst: InstanceInput,
    bows: Vec<SparseBow>,
    noise: JointNoise,
    focus: Group,
    tdm_base: f64,
    tdm_moved: Cell<bool>,
}

impl Joint {
    fn terms(&self, grads: bool) -> newentry::Result<(f64, f64, ParamGrads<f64>)> {
        let tape = Tape::new();
        let t = joint_terms(&self.model, &tape, &self.inst, &self.bows, &self.noise, 0.5, 1.7)?;
        let (tdm, snp) = (t.tdm.item(), t.snp.item());
        if !grads {
            return Ok((tdm, snp, ParamGrads::new()));
        }
        let total = t.tdm.add(&t.snp)?;
        Ok((tdm, snp, total.backward()?.into_params()))
    }
}

impl GradCheckTarget<f64> for Joint {
    fn tables(&self) -> Vec<(ParamKey, String)> {
        let m = &self.model;
        let store = if self.focus == Group::Tdm { &m.tdm_store } else { &m.snp_store };
        store.iter().map(|(k, n, _)| (k, n.to_string())).collect()
    }
    fn table_mut(&mut self, key: ParamKey) -> &mut Tensor<f64> {
        match key.group {
            Group::Tdm => self.model.tdm_store.get_mut(key),
            _ => self.model.snp_store.get_mut(key),
        }
    }
    fn loss(&self) -> newentry::Result<f64> {
        let (tdm, snp, _) = self.terms(false)?;
        if self.focus == Group::Tdm {
            return Ok(tdm + snp);
        }
        if tdm != self.tdm_base {
            self.tdm_moved.set(true);
        }
        Ok(snp)
    }
    fn loss_and_grads(&self) -> newentry::Result<(f64, ParamGrads<f64>)> {
        let (tdm, snp, g) = self.terms(true)?;
        Ok((if self.focus == Group::Tdm { tdm + snp } else { snp }, g))
    }
}

fn sparse(ids: &[usize]) -> SparseBow {
    let mut counts: std::collections::BTreeMap<usize, u32> = Default::default();
    for &i in ids {
        *counts.entry(i).or_default() += 1;
    }
    counts.into_iter().collect()
}

fn toy_instance(rng: &mut ChaCha8Rng, vocab: usize, topic_vocab: usize, history: Vec<usize>) -> InstanceInput {
    let turns: Vec<Vec<usize>> = [4, 5, 3]
        .iter()
        .map(|&n| (0..n).map(|_| rng.gen_range(3..vocab)).collect())
        .collect();
    let topic = |ids: &[usize]| -> Vec<usize> { ids.iter().copied().filter(|&i| i < topic_vocab).collect() };
    let context: Vec<usize> = turns[..2].iter().flat_map(|t| topic(t)).collect();
    InstanceInput {
        id: "toy".into(),
        turn_bows: turns.iter().map(|t| sparse(t)).collect(),
        context_bow: sparse(&context),
        turns,
        history,
        label: true,
    }
}

fn gradient_correctness() -> (bool, String) {
    let (vocab, topic_vocab) = (30, 20);
    let config = ModelConfig {
        tdm: TdmConfig {
            topics: 3,
            discourse: 3,
            encoder_hidden: 8,
            ..TdmConfig::default()
        },
        snp: SnpConfig {
            embedding_dim: 8,
            hidden: 8,
            ..SnpConfig::default()
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let bows: Vec<SparseBow> = (0..2)
        .map(|_| sparse(&(0..12).map(|_| rng.gen_range(3..topic_vocab)).collect::<Vec<_>>()))
        .collect();
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    let mut pass = true;
    for (case, history) in [("history", vec![0, 1]), ("no-history", vec![])] {
        let mut model = NewEntryModel::<f64>::new(&config, vocab, topic_vocab, 5).unwrap();
        // Seeded uniform parameters in both stores. Initialization leaves some
        // gate weights with gradients near 1e-8, below what central differences
        // resolve at this epsilon, and zeroes the default user vector.
        for store in [&mut model.tdm_store, &mut model.snp_store] {
            let keys: Vec<ParamKey> = store.keys().collect();
            for key in keys {
                for v in store.get_mut(key).data_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
        }
        let inst = toy_instance(&mut rng, vocab, topic_vocab, history);
        let noise = JointNoise::sample(&inst, 3, 3, &mut rng);
        let mut target = Joint {
            model,
            inst,
            bows: bows.clone(),
            noise,
            focus: Group::Tdm,
            tdm_base: 0.0,
            tdm_moved: Cell::new(false),
        };
        target.tdm_base = target.terms(false).unwrap().0;
        let mut report = finite_diff_check(&mut target, 1e-5, 1e-4).unwrap();
        target.focus = Group::Snp;
        let snp_report = finite_diff_check(&mut target, 1e-5, 1e-4).unwrap();
        report.pass &= snp_report.pass;
        report.max_rel_error = report.max_rel_error.max(snp_report.max_rel_error);
        report.params.extend(snp_report.params);
        let moved = target.tdm_moved.get();
        let tables = report.params.len();
        let kinks: usize = report.params.iter().map(|p| p.nondifferentiable.len()).sum();
        worst = worst.max(report.max_rel_error);
        pass &= !moved && report.pass && report.params.iter().all(|p| p.checked > 0 || !p.nondifferentiable.is_empty());
        let w = report.worst().map(|p| p.name.clone()).unwrap_or_default();
        detail.push(format!(
            "{case}: tables={tables} max_rel_err={:.2e} worst={w} kinks={kinks} tdm_term_moved={moved}",
            report.max_rel_error
        ));
    }
    (pass && worst <= 1e-4, format!("{} (tol 1e-4)", detail.join("; ")))
}

// ---------------------------------------------------------------- 2

fn kl_oracles() -> (bool, String) {
    let mu = [0.3, -0.8, 1.2];
    let log_sigma = [-0.5, 0.2, 0.1];
    let tape = Tape::<f64>::new();
    let closed = gaussian_kl(
        &tape.constant(Tensor::row(mu.to_vec())),
        &tape.constant(Tensor::row(log_sigma.to_vec())),
    )
    .unwrap()
    .item();

    // E_q[log q(z) - log p(z)] by sampling; constants cancel.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 100_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let mut lr = 0.0;
        for i in 0..3 {
            let e: f64 = StandardNormal.sample(&mut rng);
            let s = log_sigma[i].exp();
            let z = mu[i] + s * e;
            lr += -0.5 * e * e - log_sigma[i] + 0.5 * z * z;
        }
        acc += lr;
    }
    let mc = acc / n as f64;
    let rel = (closed - mc).abs() / mc.abs();

    let logits = [0.4, -1.3, 2.0, 0.0, 0.7];
    let kl_cat = discourse_kl_uniform(&tape.constant(Tensor::row(logits.to_vec()))).unwrap().item();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let direct: f64 = logits
        .iter()
        .map(|l| {
            let p = (l - m).exp() / z;
            p * (p * logits.len() as f64).ln()
        })
        .sum();
    let cat_err = (kl_cat - direct).abs();

    let zero_gauss = gaussian_kl(
        &tape.constant(Tensor::row(vec![0.0; 4])),
        &tape.constant(Tensor::row(vec![0.0; 4])),
    )
    .unwrap()
    .item();
    let zero_cat: Vec<f64> = [2usize, 4, 8]
        .iter()
        .map(|&d| discourse_kl_uniform(&tape.constant(Tensor::row(vec![0.3; d]))).unwrap().item())
        .collect();
    let pass = rel <= 0.01 && cat_err <= 1e-12 && zero_gauss == 0.0 && zero_cat.iter().all(|&v| v == 0.0);
    (
        pass,
        format!(
            "gauss closed={closed:.6} mc={mc:.6} rel={rel:.2e} (tol 1e-2); categorical |diff|={cat_err:.1e} (tol 1e-12); zero cases gauss={zero_gauss} cat={zero_cat:?}"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn class_weight_exactness() -> (bool, String) {
    let labels: Vec<bool> = std::iter::repeat(true)
        .take(12_199)
        .chain(std::iter::repeat(false).take(57_229))
        .collect();
    let w = class_weight(labels.iter().copied()).unwrap();
    let exact = w == 57_229.0 / 12_199.0;
    let corpus = generate_synthetic(&SyntheticConfig {
        conversations: 400,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let ds = Dataset::prepare(&corpus.conversations, &PipelineOptions::default()).unwrap();
    let mut splits_ok = true;
    for part in [&ds.train, &ds.valid, &ds.test] {
        let pos = part.iter().filter(|e| e.label()).count();
        let neg = part.len() - pos;
        let got = class_weight(part.iter().map(|e| e.label())).unwrap();
        splits_ok &= got == neg as f64 / pos as f64;
    }
    let data = ModelData::from_dataset(&ds);
    let pos = data.train.iter().filter(|i| i.label).count();
    splits_ok &= data.class_weight().unwrap() == (data.train.len() - pos) as f64 / pos as f64;
    let pass = exact && (w - 4.692).abs() < 1e-3 && splits_ok;
    (
        pass,
        format!("reddit counts -> {w:.6} (bit-exact {exact}); train/valid/test/model splits exact {splits_ok}"),
    )
}

// ---------------------------------------------------------------- 8

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            tdm: TdmConfig {
                topics: 3,
                discourse: 4,
                encoder_hidden: 8,
                ..TdmConfig::default()
            },
            snp: SnpConfig {
                embedding_dim: 6,
                hidden: 5,
                ..SnpConfig::default()
            },
        },
        pretrain_tdm_epochs: 3,
        pretrain_snp_epochs: 1,
        max_cycles: 2,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    }
}

fn run_once(data: &ModelData, config: TrainConfig) -> (Vec<String>, Vec<u8>, String, String) {
    let mut t = Trainer::<f64>::new(config, data).unwrap();
    t.run().unwrap();
    let (report, _) = evaluate(&t.model, data, &data.test, t.config.execution).unwrap();
    let analysis = analyze(&t.model, data, &data.test, t.config.execution).unwrap();
    (t.log_lines(), t.checkpoint().to_bytes(), report.to_string(), analysis.to_kv())
}

fn determinism() -> (bool, String) {
    let corpus = generate_synthetic(&SyntheticConfig {
        conversations: 150,
        users: 90,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let ds = Dataset::prepare(&corpus.conversations, &PipelineOptions::default()).unwrap();
    let data = ModelData::from_dataset(&ds);
    let a = run_once(&data, tiny_config(3));
    let b = run_once(&data, tiny_config(3));
    let mut seq = tiny_config(3);
    seq.execution = newentry::exec::Execution::Sequential;
    let c = run_once(&data, seq);
    let same = |x: &(Vec<String>, Vec<u8>, String, String), y: &(Vec<String>, Vec<u8>, String, String)| {
        [x.0 == y.0, x.1 == y.1, x.2 == y.2, x.3 == y.3]
    };
    let rerun = same(&a, &b);
    // The execution mode is part of the stored config, so compare everything but checkpoint bytes.
    let modes = same(&a, &c);
    let pass = rerun.iter().all(|&x| x) && modes[0] && modes[2] && modes[3];
    (
        pass,
        format!(
            "rerun [log, checkpoint, metrics, analysis] equal {rerun:?}; sequential vs parallel [log, -, metrics, analysis] equal [{}, {}, {}]; log lines {} checkpoint bytes {}",
            modes[0], modes[2], modes[3], a.0.len(), a.1.len()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn fixture(id: &str, spec: &[(&str, Option<usize>)]) -> Conversation {
    Conversation {
        id: id.into(),
        turns: spec
            .iter()
            .enumerate()
            .map(|(i, (a, r))| Turn {
                turn_id: format!("{i}"),
                author_id: a.to_string(),
                tokens: vec!["token".into()],
                reply_to: *r,
            })
            .collect(),
    }
}

fn pipeline_conformance() -> (bool, String) {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let kept = filter_conversations(vec![
        fixture("three-turns", &[("a", None), ("b", None), ("c", None)]),
        fixture("two-people", &[("a", None), ("b", None), ("a", None), ("b", None)]),
        fixture("boundary", &[("a", None), ("b", None), ("c", None), ("a", None)]),
    ]);
    let ids: Vec<&str> = kept.iter().map(|c| c.id.as_str()).collect();
    checks.push(("filter <4 turns / <3 participants", ids == ["boundary"]));

    let first = extract_instances(&fixture("m", &[("a", None), ("b", None), ("n", None), ("a", Some(2))]));
    checks.push((
        "newcomer at minimum index with reply",
        first.len() == 1 && first[0].query == 2 && first[0].context_start == 0 && first[0].label,
    ));
    let early = extract_instances(&fixture("e", &[("a", None), ("n", None), ("a", Some(1)), ("b", None)]));
    checks.push((
        "newcomer before minimum index skipped",
        early.iter().map(|i| i.newcomer_id.as_str()).collect::<Vec<_>>() == ["b"],
    ));
    let none = extract_instances(&fixture("x", &[("a", None), ("b", None), ("n", None), ("a", Some(0))]));
    checks.push(("no reply -> label 0", none.len() == 1 && !none[0].label));
    let selfish = extract_instances(&fixture("s", &[("a", None), ("b", None), ("n", None), ("n", Some(2))]));
    checks.push(("self reply -> label 0", selfish.len() == 1 && !selfish[0].label));
    let returning = extract_instances(&fixture("r", &[("a", None), ("b", None), ("a", None), ("c", None)]));
    checks.push((
        "returning author is not a newcomer",
        returning.iter().all(|i| i.newcomer_id == "c"),
    ));

    let items: Vec<usize> = (0..100).collect();
    let s = split(&items, DEFAULT_RATIOS, 11).unwrap();
    checks.push(("80/10/10 of 100", (s.train.len(), s.valid.len(), s.test.len()) == (80, 10, 10)));
    let corpus = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let cleaned: Vec<Conversation> = corpus.conversations.iter().map(clean_conversation).collect();
    let n_kept = filter_conversations(cleaned).len();
    let ds = Dataset::prepare(&corpus.conversations, &PipelineOptions::default()).unwrap();
    checks.push((
        "synthetic 2000 kept and split 1600/200/200",
        n_kept == 2000 && (ds.split.train.len(), ds.split.valid.len(), ds.split.test.len()) == (1600, 200, 200),
    ));
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    (
        failed.is_empty(),
        format!("{}/{} fixtures pass{}", checks.len() - failed.len(), checks.len(), if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {failed:?}")
        }),
    )
}

// ---------------------------------------------------------------- 3-6

const SEEDS: [u64; 3] = [1, 2, 3];
const PLANTED_DISCOURSE: usize = 4;

fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            tdm: TdmConfig {
                topics: 3,
                discourse: 6,
                encoder_hidden: 32,
                ..TdmConfig::default()
            },
            snp: SnpConfig {
                embedding_dim: 16,
                hidden: 16,
                ..SnpConfig::default()
            },
        },
        pretrain_tdm_epochs: 100,
        pretrain_snp_epochs: 5,
        max_cycles: 10,
        seed,
        ..TrainConfig::default()
    }
}

struct Desk {
    corpus: SyntheticCorpus,
    ds: Dataset,
    data: ModelData,
}

/// Overlap of each learned row's top words with `block`.
fn overlaps(rows: &[Vec<usize>], n: usize, block: &[String], ds: &Dataset) -> Vec<usize> {
    rows.iter()
        .map(|r| r[..n].iter().filter(|&&i| block.iter().any(|w| w == ds.vocab.token(i))).count())
        .collect()
}

fn best(v: &[usize]) -> (usize, usize) {
    v.iter()
        .copied()
        .enumerate()
        .fold((0, 0), |acc, (k, n)| if n > acc.1 { (k, n) } else { acc })
}

struct SeedRun {
    seed: u64,
    pretrain_secs: f64,
    topic_hits: Vec<usize>,
    discourse_hits: Vec<usize>,
    question_owner: usize,
    f1: HashMap<&'static str, f64>,
    full_auc: f64,
    full_secs: f64,
    question_rates: (f64, f64),
    similarity: (f64, f64),
}

fn run_seed(desk: &Desk, seed: u64) -> SeedRun {
    let t0 = Instant::now();
    let mut pre = Trainer::<f64>::new(desk_config(seed), &desk.data).unwrap();
    pre.run_while(|s| s.phase == Phase::PretrainTdm).unwrap();
    let pretrain_secs = t0.elapsed().as_secs_f64();

    let (topics, discourse) = top_terms(&pre.model, 10).unwrap();
    let topic_hits: Vec<usize> = desk
        .corpus
        .planted
        .topic_blocks
        .iter()
        .map(|b| best(&overlaps(&topics, 10, &b.words, &desk.ds)).1)
        .collect();
    let owners: Vec<(usize, usize)> = desk
        .corpus
        .planted
        .discourse_blocks
        .iter()
        .map(|b| best(&overlaps(&discourse, 5, &b.words, &desk.ds)))
        .collect();

    let mut f1 = HashMap::new();
    let mut full_auc = 0.0;
    let mut full_secs = 0.0;
    let mut question_rates = (0.0, 0.0);
    let mut similarity = (0.0, 0.0);
    let variants: [(&'static str, Ablation); 4] = [
        ("full", Ablation::full()),
        ("topic-init", Ablation::only(AblationKind::TopicInit)),
        ("disc-concat", Ablation::only(AblationKind::DiscConcat)),
        ("disc-att", Ablation::only(AblationKind::DiscAtt)),
    ];
    for (name, ablation) in variants {
        let t1 = Instant::now();
        let mut config = desk_config(seed);
        config.model.snp.ablation = ablation;
        let mut t = pre.fork(config).unwrap();
        t.run().unwrap();
        let (report, _) = evaluate(&t.model, &desk.data, &desk.data.test, t.config.execution).unwrap();
        eprintln!("[acceptance] seed {seed} {name}: {report}");
        f1.insert(name, report.f1);
        if name == "full" {
            full_secs = pretrain_secs + t1.elapsed().as_secs_f64();
            full_auc = report.auc.unwrap_or(0.0);
            let a = analyze(&t.model, &desk.data, &desk.data.test, t.config.execution).unwrap();
            let q = owners[QUESTION_BEHAVIOR].0;
            question_rates = (a.discourse.successful[q], a.discourse.failed[q]);
            similarity = (a.similarity.successful_mean, a.similarity.failed_mean);
        }
    }
    SeedRun {
        seed,
        pretrain_secs,
        topic_hits,
        discourse_hits: owners.iter().map(|o| o.1).collect(),
        question_owner: owners[QUESTION_BEHAVIOR].0,
        f1,
        full_auc,
        full_secs,
        question_rates,
        similarity,
    }
}

/// Planted success probabilities of the test instances.
fn bayes_auc(desk: &Desk) -> f64 {
    let mut probs: HashMap<(&str, &str), f64> = HashMap::new();
    for note in &desk.corpus.annotations {
        for t in &note.turns {
            if let Some(p) = t.success_prob {
                probs.insert((note.conversation_id.as_str(), t.turn_id.as_str()), p);
            }
        }
    }
    let (scores, labels): (Vec<f64>, Vec<bool>) = desk
        .ds
        .test
        .iter()
        .map(|e| {
            let i = &e.instance;
            (probs[&(i.conversation_id.as_str(), i.query_turn_id.as_str())], i.label)
        })
        .unzip();
    auc(&scores, &labels).unwrap()
}

fn desk_criteria() -> Vec<Line> {
    let t0 = Instant::now();
    let corpus = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let ds = Dataset::prepare(&corpus.conversations, &PipelineOptions::default()).unwrap();
    let data = ModelData::from_dataset(&ds);
    let desk = Desk { corpus, ds, data };
    let setup = t0.elapsed().as_secs_f64();
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(&desk, s)).collect();
    let first = &runs[0];
    let mut lines = Vec::new();

    let t3 = timed(3, "planted-structure-recovery", || {
        let topics_ok = first.topic_hits.iter().all(|&h| h >= 8);
        let good = first.discourse_hits.iter().filter(|&&h| h >= 4).count();
        let pass = topics_ok && good >= 3 && first.pretrain_secs < 15.0 * 60.0;
        (
            pass,
            format!(
                "seed {} topic top-10 hits {:?} (need >=8 each); discourse top-5 hits {:?} (need >=4 for 3 of {PLANTED_DISCOURSE}); pretrain {:.0}s",
                first.seed, first.topic_hits, first.discourse_hits, first.pretrain_secs
            ),
        )
    });
    lines.push(Line { secs: first.pretrain_secs + setup, ..t3 });

    let t4 = timed(4, "end-to-end-prediction", || {
        let bayes = bayes_auc(&desk);
        let base = bow_logistic_baseline(&desk.data.train, &desk.data.test, desk.data.vocab_size, &BaselineConfig::default())
            .unwrap();
        let base_auc = base.report.auc.unwrap_or(0.0);
        let pass = first.full_auc >= 0.85 && bayes >= 0.95 && first.full_auc >= base_auc + 0.05 && first.full_secs < 30.0 * 60.0;
        (
            pass,
            format!(
                "model auc {:.4} (>=0.85), bayes auc {bayes:.4} (>=0.95), baseline auc {base_auc:.4} (model must be >= baseline+0.05); {:.0}s",
                first.full_auc, first.full_secs
            ),
        )
    });
    lines.push(Line { secs: first.full_secs + t4.secs, ..t4 });

    lines.push(timed(5, "ablation-direction", || {
        let names = ["topic-init", "disc-concat", "disc-att"];
        let mean = |k: &str| runs.iter().map(|r| r.f1[k]).sum::<f64>() / runs.len() as f64;
        let full = mean("full");
        let below = names.iter().all(|n| mean(n) <= full);
        let worst = runs
            .iter()
            .filter(|r| names.iter().all(|n| r.f1["topic-init"] <= r.f1[n]))
            .count();
        let per_seed: Vec<String> = runs
            .iter()
            .map(|r| {
                format!(
                    "seed {}: full {:.3} topic-init {:.3} disc-concat {:.3} disc-att {:.3}",
                    r.seed, r.f1["full"], r.f1["topic-init"], r.f1["disc-concat"], r.f1["disc-att"]
                )
            })
            .collect();
        (
            below && worst >= 2,
            format!(
                "mean f1 full {full:.3} topic-init {:.3} disc-concat {:.3} disc-att {:.3}; w/o topic init worst in {worst}/3 seeds; {}",
                mean("topic-init"),
                mean("disc-concat"),
                mean("disc-att"),
                per_seed.join("; ")
            ),
        )
    }));

    lines.push(timed(6, "analysis-directions", || {
        let (qs, qf) = first.question_rates;
        let (ss, sf) = first.similarity;
        (
            qs > qf && ss < sf,
            format!(
                "seed {}: question-like behavior {} share successful {qs:.3} vs failed {qf:.3}; similarity successful {ss:.2} vs failed {sf:.2}",
                first.seed, first.question_owner
            ),
        )
    }));
    lines
}

fn main() {
    newentry::exec::init_threads_from_env();
    let mut lines = vec![
        timed(1, "gradient-correctness", gradient_correctness),
        timed(2, "kl-closed-forms", kl_oracles),
        timed(7, "class-weight-exactness", class_weight_exactness),
        timed(8, "determinism", determinism),
        timed(9, "pipeline-conformance", pipeline_conformance),
    ];
    lines.extend(desk_criteria());
    lines.sort_by_key(|l| l.id);
    let mut failed = 0;
    for l in &lines {
        println!(
            "criterion {} {}: {} [{:.1}s] {}",
            l.id,
            l.name,
            if l.pass { "PASS" } else { "FAIL" },
            l.secs,
            l.detail
        );
        failed += usize::from(!l.pass);
    }
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
