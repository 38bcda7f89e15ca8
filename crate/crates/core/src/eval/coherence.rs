use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::SparseBow;

/// Smoothing added to joint probabilities.
pub const NPMI_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicCoherence {
    pub top5: f64,
    pub top10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub topics: Vec<TopicCoherence>,
    pub mean_top5: f64,
    pub mean_top10: f64,
    /// Co-occurrence window: a whole document.
    pub window: String,
    pub documents: usize,
    /// Pairs skipped because a word never occurs in the reference corpus.
    pub skipped_pairs: usize,
}

/// Document-level co-occurrence counts for NPMI.
pub struct CooccurrenceIndex {
    docs: Vec<HashSet<usize>>,
}

impl CooccurrenceIndex {
    pub fn new(docs: &[SparseBow]) -> Self {
        CooccurrenceIndex {
            docs: docs
                .iter()
                .map(|d| d.iter().filter(|&&(_, n)| n > 0).map(|&(w, _)| w).collect())
                .collect(),
        }
    }

    fn df(&self, w: usize) -> usize {
        self.docs.iter().filter(|d| d.contains(&w)).count()
    }

    fn joint(&self, a: usize, b: usize) -> usize {
        self.docs.iter().filter(|d| d.contains(&a) && d.contains(&b)).count()
    }

    /// NPMI of a pair, or `None` when either word is absent.
    pub fn npmi(&self, a: usize, b: usize) -> Option<f64> {
        let n = self.docs.len() as f64;
        let (da, db) = (self.df(a), self.df(b));
        if da == 0 || db == 0 {
            return None;
        }
        let pa = da as f64 / n;
        let pb = db as f64 / n;
        let pab = self.joint(a, b) as f64 / n + NPMI_EPSILON;
        let denom = -pab.ln();
        if denom <= 0.0 {
            // Both words occur in every document.
            return Some(1.0);
        }
        Some(((pab / (pa * pb)).ln() / denom).clamp(-1.0, 1.0))
    }

    /// Mean NPMI over all pairs of `words`; also returns skipped pairs.
    pub fn mean_npmi(&self, words: &[usize]) -> (f64, usize) {
        let mut sum = 0.0;
        let mut count = 0;
        let mut skipped = 0;
        for i in 0..words.len() {
            for j in i + 1..words.len() {
                match self.npmi(words[i], words[j]) {
                    Some(v) => {
                        sum += v;
                        count += 1;
                    }
                    None => skipped += 1,
                }
            }
        }
        (if count == 0 { 0.0 } else { sum / count as f64 }, skipped)
    }
}

/// NPMI coherence of each topic's top 5 and top 10 words against `docs`.
pub fn npmi_coherence(top_words: &[Vec<usize>], docs: &[SparseBow]) -> CoherenceReport {
    let index = CooccurrenceIndex::new(docs);
    let mut skipped_pairs = 0;
    let topics: Vec<TopicCoherence> = top_words
        .iter()
        .map(|words| {
            let (top5, s5) = index.mean_npmi(&words[..words.len().min(5)]);
            let (top10, s10) = index.mean_npmi(&words[..words.len().min(10)]);
            skipped_pairs += s5 + s10;
            TopicCoherence { top5, top10 }
        })
        .collect();
    let mean = |f: fn(&TopicCoherence) -> f64| {
        if topics.is_empty() {
            0.0
        } else {
            topics.iter().map(f).sum::<f64>() / topics.len() as f64
        }
    };
    CoherenceReport {
        mean_top5: mean(|t| t.top5),
        mean_top10: mean(|t| t.top10),
        topics,
        window: "document".to_string(),
        documents: docs.len(),
        skipped_pairs,
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn always_together_is_one_and_never_together_is_minus_one() {
        let docs: Vec<SparseBow> = vec![
            vec![(1, 1), (2, 3)],
            vec![(3, 1)],
            vec![(1, 2), (2, 1), (3, 1)],
            vec![(4, 1)],
        ];
        let idx = CooccurrenceIndex::new(&docs);
        assert!((idx.npmi(1, 2).unwrap() - 1.0).abs() < 1e-9);
        assert!((idx.npmi(1, 4).unwrap() + 1.0).abs() < 0.1);
        assert_eq!(idx.npmi(1, 9), None);
        let r = npmi_coherence(&[vec![1, 2, 9]], &docs);
        assert_eq!(r.skipped_pairs, 4);
        assert!((r.mean_top5 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn independent_words_have_near_zero_npmi() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let docs: Vec<SparseBow> = (0..200_000)
            .map(|_| {
                let mut d = Vec::new();
                if rng.gen_bool(0.3) {
                    d.push((1, 1));
                }
                if rng.gen_bool(0.4) {
                    d.push((2, 1));
                }
                d
            })
            .collect();
        let v = CooccurrenceIndex::new(&docs).npmi(1, 2).unwrap();
        assert!(v.abs() < 0.05, "{v}");
    }
}
