use super::*;
use crate::corpus::{generate_synthetic, Dataset, PipelineOptions, SyntheticConfig};
use crate::snp::SnpConfig;
use crate::tdm::TdmConfig;

fn data(conversations: usize) -> ModelData {
    let corpus = generate_synthetic(&SyntheticConfig {
        conversations,
        users: 60,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let ds = Dataset::prepare(&corpus.conversations, &PipelineOptions::default()).unwrap();
    ModelData::from_dataset(&ds)
}

fn config() -> TrainConfig {
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
        pretrain_tdm_epochs: 2,
        pretrain_snp_epochs: 1,
        max_cycles: 2,
        batch_size: 16,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn phases_of(c: &TrainConfig, epochs: usize) -> Vec<Phase> {
    let mut s = PhaseState::start();
    s.settle(c);
    let mut out = vec![s.phase];
    for _ in 0..epochs {
        if s.phase == Phase::Done {
            break;
        }
        s.epoch += 1;
        s.phase_epoch += 1;
        s.settle(c);
        out.push(s.phase);
    }
    out
}

#[test]
fn phase_machine_follows_the_transition_order() {
    use Phase::*;
    let c = TrainConfig {
        pretrain_tdm_epochs: 2,
        pretrain_snp_epochs: 1,
        joint_tdm_epochs: 1,
        joint_snp_epochs: 2,
        max_cycles: 2,
        ..TrainConfig::default()
    };
    assert_eq!(
        phases_of(&c, 20),
        vec![
            PretrainTdm, PretrainTdm, PretrainSnp, JointTdm, JointSnp, JointSnp, JointTdm,
            JointSnp, JointSnp, Done
        ]
    );
    let skip = TrainConfig {
        pretrain_tdm_epochs: 0,
        pretrain_snp_epochs: 0,
        ..c.clone()
    };
    assert_eq!(phases_of(&skip, 1)[0], JointTdm);
    let none = TrainConfig {
        max_cycles: 0,
        ..c
    };
    assert_eq!(phases_of(&none, 10), vec![PretrainTdm, PretrainTdm, PretrainSnp, Done]);
}

#[test]
fn invalid_configs_are_rejected() {
    let d = data(60);
    for bad in [
        TrainConfig { batch_size: 0, ..config() },
        TrainConfig { lr: 0.0, ..config() },
        TrainConfig { joint_tdm_epochs: 0, joint_snp_epochs: 0, ..config() },
        TrainConfig { patience: 0, ..config() },
    ] {
        assert!(Trainer::<f64>::new(bad, &d).is_err());
    }
}

#[test]
fn training_runs_each_phase_on_one_store_only() {
    let d = data(80);
    let c = TrainConfig {
        pretrain_tdm_epochs: 0,
        pretrain_snp_epochs: 0,
        ..config()
    };
    let mut t = Trainer::<f64>::new(c, &d).unwrap();
    assert_eq!(t.phase(), Phase::JointTdm);
    let mut previous = None;
    while t.phase() != Phase::Done {
        let before = t.model.clone();
        let phase = t.phase();
        let entry = t.step_epoch().unwrap().unwrap().clone();
        assert_eq!(entry.phase, phase);
        if let Some(p) = previous {
            assert!(Phase::may_precede(p, phase));
        }
        previous = Some(phase);
        if phase.trains_tdm() {
            assert_eq!(before.snp_store, t.model.snp_store);
            assert_ne!(before.tdm_store, t.model.tdm_store);
            assert!(entry.tdm.is_some() && entry.l_snp.is_none());
        } else {
            assert_eq!(before.tdm_store, t.model.tdm_store);
            assert_ne!(before.snp_store, t.model.snp_store);
            assert!(entry.l_snp.is_some());
        }
        assert!(entry.valid.is_some());
    }
    let log = t.log_lines();
    assert_eq!(log.len(), 4);
    assert!(log[0].starts_with("epoch=0 phase=JOINT_TDM cycle=0"));
    assert!(log.iter().all(|l| l.split(' ').all(|kv| kv.contains('='))));
    assert_eq!(t.outcome().stop, Some(StopReason::MaxCycles));
}

#[test]
fn class_weight_matches_training_counts() {
    let d = data(60);
    let t = Trainer::<f64>::new(config(), &d).unwrap();
    let pos = d.train.iter().filter(|i| i.label).count() as f64;
    let neg = d.train.len() as f64 - pos;
    assert_eq!(t.state.class_weight, neg / pos);
}

#[test]
fn identical_runs_are_bit_identical() {
    let d = data(80);
    let run = || {
        let mut t = Trainer::<f64>::new(config(), &d).unwrap();
        t.run().unwrap();
        (t.log_lines(), t.checkpoint().to_bytes())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert!(a.1 == b.1);
}

#[test]
fn sequential_and_parallel_execution_agree() {
    let d = data(80);
    let run = |execution| {
        let mut t = Trainer::<f64>::new(TrainConfig { execution, ..config() }, &d).unwrap();
        t.run_while(|s| s.epoch < 4).unwrap();
        t.model.snp_store.clone()
    };
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let d = data(60);
    let mut t = Trainer::<f64>::new(config(), &d).unwrap();
    t.run_while(|s| s.epoch < 4).unwrap();
    let bytes = t.checkpoint().to_bytes();
    let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    assert!(back.to_bytes() == bytes);
    assert_eq!(back.model.tdm_store, t.model.tdm_store);
    assert_eq!(back.state.log, t.state.log);

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 1;
    assert!(matches!(Checkpoint::<f64>::from_bytes(&flipped), Err(Error::Checkpoint(_))));
    assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 7]).is_err());
    assert!(Checkpoint::<f64>::from_bytes(&bytes[..10]).is_err());
    let mut version = bytes.clone();
    version[8] = 9;
    let e = Checkpoint::<f64>::from_bytes(&version).unwrap_err().to_string();
    assert!(e.contains("version"), "{e}");
    let e = Checkpoint::<f32>::from_bytes(&bytes).unwrap_err().to_string();
    assert!(e.contains("64-bit"), "{e}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    t.checkpoint().save(&path).unwrap();
    assert!(std::fs::read(&path).unwrap() == bytes);
    assert!(Checkpoint::<f64>::load(&path).unwrap().to_bytes() == bytes);
}

#[test]
fn saved_model_gives_identical_validation_metrics() {
    let d = data(60);
    let mut t = Trainer::<f64>::new(config(), &d).unwrap();
    t.run().unwrap();
    let back = Checkpoint::<f64>::from_bytes(&t.checkpoint().to_bytes()).unwrap();
    let a = crate::eval::evaluate(&t.model, &d, &d.valid, Execution::Sequential).unwrap();
    let b = crate::eval::evaluate(&back.model, &d, &d.valid, Execution::Sequential).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let d = data(60);
    let mut full = Trainer::<f64>::new(config(), &d).unwrap();
    full.run().unwrap();

    let mut first = Trainer::<f64>::new(config(), &d).unwrap();
    first.run_while(|s| !(s.phase == Phase::JointSnp)).unwrap();
    assert_eq!(first.phase(), Phase::JointSnp);
    let bytes = first.checkpoint().to_bytes();
    drop(first);
    let mut resumed = Trainer::resume(Checkpoint::<f64>::from_bytes(&bytes).unwrap(), &d).unwrap();
    resumed.run().unwrap();
    assert_eq!(resumed.log_lines(), full.log_lines());
    assert!(resumed.checkpoint().to_bytes() == full.checkpoint().to_bytes());
}

#[test]
fn fork_after_pretraining_equals_training_from_scratch() {
    let d = data(60);
    let mut base = Trainer::<f64>::new(config(), &d).unwrap();
    assert!(base.fork(config()).is_err());
    base.run_while(|s| s.phase == Phase::PretrainTdm).unwrap();
    let mut other = config();
    other.model.snp.ablation.no_disc_att = true;
    other.lr = 1e-4;
    let mut forked = base.fork(other.clone()).unwrap();
    forked.run().unwrap();
    let mut scratch = Trainer::<f64>::new(other, &d).unwrap();
    scratch.run().unwrap();
    assert_eq!(forked.log_lines(), scratch.log_lines());
    assert!(forked.checkpoint().to_bytes() == scratch.checkpoint().to_bytes());

    let mut changed = config();
    changed.tdm_lr = 5e-3;
    assert!(base.fork(changed).is_err());
}

#[test]
fn divergence_rolls_back_the_epoch() {
    let d = data(60);
    let mut t = Trainer::<f64>::new(config(), &d).unwrap();
    t.step_epoch().unwrap();
    let key = t.model.tdm.f_mu.bias;
    t.model.tdm_store.get_mut(key).data_mut()[0] = f64::NAN;
    let before = t.checkpoint().to_bytes();
    let err = t.step_epoch().unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
    assert!(t.checkpoint().to_bytes() == before);
}

#[test]
fn grid_search_keeps_the_best_rate() {
    let d = data(60);
    let c = TrainConfig { max_cycles: 1, ..config() };
    let g = grid_search::<f64>(&c, &d, &[1e-3, 1e-5]).unwrap();
    assert_eq!(g.scores.len(), 2);
    let best = g
        .scores
        .iter()
        .map(|(_, f)| f.unwrap_or(f64::NEG_INFINITY))
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(g.trainer.outcome().best_f1.unwrap_or(f64::NEG_INFINITY), best);
    assert!(g.scores.iter().any(|&(lr, _)| lr == g.best_lr));
}
