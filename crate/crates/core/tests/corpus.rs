use std::collections::{HashMap, HashSet};

use newentry::corpus::synthetic::{SyntheticConfig, QUESTION_BEHAVIOR};
use newentry::corpus::{
    clean_conversation, extract_instances, filter_conversations, generate_synthetic, split,
    Conversation, Dataset, PipelineOptions, RawConversation, RawTurn, Turn, DEFAULT_RATIOS,
};
use proptest::prelude::*;
use rand::distributions::Distribution;

/// All-pairs AUC, ties counted as one half.
fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn fixture(id: &str, spec: &[(&str, Option<usize>)]) -> Conversation {
    Conversation {
        id: id.into(),
        turns: spec
            .iter()
            .enumerate()
            .map(|(i, (a, r))| Turn {
                turn_id: format!("{id}-{i}"),
                author_id: a.to_string(),
                tokens: vec!["word".into()],
                reply_to: *r,
            })
            .collect(),
    }
}

#[test]
fn filter_fixture_boundaries() {
    let kept = filter_conversations(vec![
        fixture("three-turns", &[("a", None), ("b", None), ("c", None)]),
        fixture("two-people", &[("a", None), ("b", None), ("a", None), ("b", None)]),
        fixture("minimal", &[("a", None), ("b", None), ("c", None), ("a", None)]),
    ]);
    let ids: Vec<&str> = kept.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(ids, ["minimal"]);
}

#[test]
fn newcomer_at_minimum_index_is_extracted() {
    let c = fixture("m", &[("a", None), ("b", None), ("n", None), ("a", Some(2))]);
    let inst = extract_instances(&c);
    assert_eq!(inst.len(), 1);
    assert_eq!(inst[0].query, 2);
    assert!(inst[0].label);
    let early = fixture("e", &[("a", None), ("n", None), ("a", Some(1)), ("b", None)]);
    let inst = extract_instances(&early);
    assert_eq!(inst.iter().map(|i| i.newcomer_id.as_str()).collect::<Vec<_>>(), ["b"]);
}

#[test]
fn history_uses_training_conversations_only() {
    let cfg = SyntheticConfig {
        conversations: 300,
        ..Default::default()
    };
    let corpus = generate_synthetic(&cfg).unwrap();
    let ds = Dataset::prepare(&corpus.conversations, &PipelineOptions::default()).unwrap();
    assert_eq!(ds.split.train.len(), 240);
    assert_eq!(ds.split.valid.len(), 30);
    assert_eq!(ds.split.test.len(), 30);
    let n_train = ds.split.train.len();
    let mut test_with_history = 0;
    for (portion, examples) in [("train", &ds.train), ("valid", &ds.valid), ("test", &ds.test)] {
        for e in examples {
            let conv = &ds.cleaned[e.conversation];
            for h in &e.history {
                assert!(*h < n_train, "{portion} history outside training split");
                assert_ne!(*h, e.conversation);
                assert!(ds.cleaned[*h]
                    .turns
                    .iter()
                    .any(|t| t.author_id == e.instance.newcomer_id));
            }
            let context = &conv.turns[e.instance.context_start..e.instance.query];
            assert!(context.iter().all(|t| t.author_id != e.instance.newcomer_id));
            if portion == "test" && !e.history.is_empty() {
                test_with_history += 1;
            }
        }
    }
    assert!(test_with_history > 0);
    let train_tokens: HashSet<&str> = ds.cleaned[..n_train]
        .iter()
        .flat_map(|c| c.turns.iter().flat_map(|t| t.tokens.iter().map(String::as_str)))
        .collect();
    for tok in &ds.vocab.tokens()[3..] {
        assert!(train_tokens.contains(tok.as_str()));
    }
}

#[test]
fn instance_split_counts() {
    let items: Vec<usize> = (0..100).collect();
    let s = split(&items, DEFAULT_RATIOS, 11).unwrap();
    assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80, 10, 10));
}

#[test]
fn planted_bayes_scores_separate_labels() {
    let corpus = generate_synthetic(&SyntheticConfig::default()).unwrap();
    assert_eq!(corpus.conversations.len(), 2000);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut question = [0usize; 2];
    let mut totals = [0usize; 2];
    for (raw, note) in corpus.conversations.iter().zip(&corpus.annotations) {
        let by_turn: HashMap<&str, _> = note.turns.iter().map(|t| (t.turn_id.as_str(), t)).collect();
        for inst in extract_instances(&clean_conversation(raw)) {
            let t = by_turn[inst.query_turn_id.as_str()];
            scores.push(t.success_prob.unwrap());
            labels.push(inst.label);
            totals[inst.label as usize] += 1;
            question[inst.label as usize] += (t.discourse == QUESTION_BEHAVIOR) as usize;
        }
    }
    let auc = brute_auc(&scores, &labels);
    eprintln!(
        "instances={} positives={} bayes_auc={auc:.4} question_rate pos={:.3} neg={:.3}",
        labels.len(),
        totals[1],
        question[1] as f64 / totals[1] as f64,
        question[0] as f64 / totals[0] as f64
    );
    assert!(auc >= 0.95, "Bayes AUC {auc}");
}

#[test]
fn topic_word_histograms_converge_to_planted_distributions() {
    let corpus = generate_synthetic(&SyntheticConfig {
        conversations: 10,
        ..Default::default()
    })
    .unwrap();
    let mut rng = newentry::rng::stream_rng(3, newentry::rng::Stream::Sampling, &[]);
    for block in &corpus.planted.topic_blocks {
        let sampler = block.sampler();
        let mut counts = vec![0usize; block.words.len()];
        let n = 100_000;
        for _ in 0..n {
            counts[sampler.sample(&mut rng)] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&block.probs)
            .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.05, "total variation {tv}");
    }
}

#[test]
fn pipeline_is_deterministic_and_idempotent() {
    let corpus = generate_synthetic(&SyntheticConfig {
        conversations: 120,
        ..Default::default()
    })
    .unwrap();
    let opts = PipelineOptions::default();
    let a = Dataset::prepare(&corpus.conversations, &opts).unwrap();
    let b = Dataset::prepare(&corpus.conversations, &opts).unwrap();
    assert_eq!(a.split, b.split);
    assert_eq!(a.train, b.train);
    assert_eq!(a.vocab, b.vocab);
    let refiltered = filter_conversations(a.cleaned.clone());
    assert_eq!(refiltered, a.cleaned);
    let again = Dataset::from_filtered(a.cleaned.clone(), &opts).unwrap();
    assert_eq!(again.split, a.split);
    assert_eq!(again.test, a.test);
}

#[test]
fn empty_corpus_yields_empty_dataset() {
    let raw = vec![RawConversation {
        conversation_id: "x".into(),
        turns: vec![RawTurn {
            turn_id: "1".into(),
            author_id: "a".into(),
            text: "hello".into(),
            reply_to: None,
        }],
    }];
    let ds = Dataset::prepare(&raw, &PipelineOptions::default()).unwrap();
    assert!(ds.train.is_empty() && ds.cleaned.is_empty());
    assert_eq!(ds.stats().conversations, 0);
}

fn arb_conversation() -> impl Strategy<Value = Conversation> {
    prop::collection::vec((0u8..5, prop::option::of(0usize..12)), 1..12).prop_map(|spec| {
        let turns = spec
            .iter()
            .enumerate()
            .map(|(i, (a, r))| Turn {
                turn_id: i.to_string(),
                author_id: format!("u{a}"),
                tokens: vec!["w".into()],
                reply_to: r.filter(|&r| r < i),
            })
            .collect();
        Conversation {
            id: "p".into(),
            turns,
        }
    })
}

proptest! {
    #[test]
    fn filter_is_idempotent(convs in prop::collection::vec(arb_conversation(), 0..8)) {
        let once = filter_conversations(convs);
        prop_assert_eq!(filter_conversations(once.clone()), once);
    }

    #[test]
    fn query_author_never_in_context(c in arb_conversation()) {
        for inst in extract_instances(&c) {
            prop_assert!(inst.query >= 2);
            prop_assert!(c.turns[..inst.query].iter().all(|t| t.author_id != inst.newcomer_id));
            let expected = c.turns[inst.query + 1..]
                .iter()
                .any(|t| t.reply_to == Some(inst.query) && t.author_id != inst.newcomer_id);
            prop_assert_eq!(inst.label, expected);
        }
    }
}
