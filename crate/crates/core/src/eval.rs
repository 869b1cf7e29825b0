//! Zero-shot metrics: prompt-based classification, thresholded link
//! prediction with AUC, and bidirectional retrieval.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// One prompt per class, covering `0..C` exactly once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<usize, String>", into = "BTreeMap<usize, String>")]
pub struct LabelPromptSet {
    prompts: Vec<String>,
}

impl TryFrom<BTreeMap<usize, String>> for LabelPromptSet {
    type Error = CoreError;

    fn try_from(map: BTreeMap<usize, String>) -> Result<Self> {
        if map.is_empty() {
            return Err(CoreError::EmptyPromptSet);
        }
        let mut prompts = Vec::with_capacity(map.len());
        for (expected, (class, prompt)) in map.into_iter().enumerate() {
            if class != expected {
                return Err(CoreError::InvalidPrompts(format!(
                    "class indices must be 0..C without gaps; missing {expected}"
                )));
            }
            if prompt.trim().is_empty() {
                return Err(CoreError::InvalidPrompts(format!("prompt for class {class} is empty")));
            }
            prompts.push(prompt);
        }
        Ok(Self { prompts })
    }
}

impl From<LabelPromptSet> for BTreeMap<usize, String> {
    fn from(set: LabelPromptSet) -> Self {
        set.prompts.into_iter().enumerate().collect()
    }
}

impl LabelPromptSet {
    pub fn new(map: BTreeMap<usize, String>) -> Result<Self> {
        Self::try_from(map)
    }

    /// Read `{"0": "prompt", "1": "prompt", ...}`.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let map: BTreeMap<usize, String> = serde_json::from_str(&text)
            .map_err(|e| CoreError::InvalidPrompts(format!("{}: {e}", path.display())))?;
        Self::new(map)
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Index of the most similar prompt embedding; ties go to the smaller index.
pub fn zero_shot_classify(graph_embedding: &[f64], prompt_embeddings: &[Vec<f64>]) -> Result<usize> {
    if prompt_embeddings.is_empty() {
        return Err(CoreError::EmptyPromptSet);
    }
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, p) in prompt_embeddings.iter().enumerate() {
        let s = cosine(graph_embedding, p);
        if s > best_sim {
            best = c;
            best_sim = s;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMap {
    /// `(1 + cos) / 2`, in `[0, 1]`.
    #[default]
    Affine,
    /// Raw cosine.
    Raw,
}

impl ScoreMap {
    pub fn apply(self, cos: f64) -> f64 {
        match self {
            ScoreMap::Affine => 0.5 * (1.0 + cos),
            ScoreMap::Raw => cos,
        }
    }
}

/// Link score and the strict `score > threshold` decision.
pub fn link_predict(z_u: &[f64], z_v: &[f64], threshold: f64, map: ScoreMap) -> (f64, bool) {
    let score = map.apply(cosine(z_u, z_v));
    (score, score > threshold)
}

/// ROC-AUC as the Mann-Whitney statistic with ties counted one half.
pub fn auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(CoreError::EmptyClass);
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the positive rank sum keeps mid-ranks integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let twice_mid = (i + 1 + j) as u64;
        let pos_in_run = all[i..j].iter().filter(|x| x.1).count() as u64;
        twice_rank_sum += twice_mid * pos_in_run;
        i = j;
    }
    let np = positive.len() as u64;
    let nn = negative.len() as u64;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * nn) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of `score > threshold` decisions.
pub fn threshold_metrics(positive: &[f64], negative: &[f64], threshold: f64) -> BinaryMetrics {
    let tp = positive.iter().filter(|&&s| s > threshold).count() as f64;
    let fp = negative.iter().filter(|&&s| s > threshold).count() as f64;
    let fneg = positive.len() as f64 - tp;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    BinaryMetrics {
        precision,
        recall,
        f1: ratio(2.0 * precision * recall, precision + recall),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub mrr: f64,
    pub recall_at: BTreeMap<usize, f64>,
}

/// 1-based rank of candidate `truth` in row `sims`, ordering by descending
/// similarity and breaking ties by candidate index.
pub fn rank_of(sims: &[f64], truth: usize) -> usize {
    let s = sims[truth];
    1 + sims
        .iter()
        .enumerate()
        .filter(|&(j, &x)| x > s || (x == s && j < truth))
        .count()
}

/// Query `i` is paired with candidate `i`.
pub fn retrieval_metrics(queries: &[Vec<f64>], candidates: &[Vec<f64>], ks: &[usize]) -> Result<RetrievalMetrics> {
    if queries.is_empty() || queries.len() != candidates.len() {
        return Err(CoreError::Validation(format!(
            "retrieval needs equal non-empty query and candidate sets, got {} and {}",
            queries.len(),
            candidates.len()
        )));
    }
    let ranks: Vec<usize> = queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let sims: Vec<f64> = candidates.iter().map(|c| cosine(q, c)).collect();
            rank_of(&sims, i)
        })
        .collect();
    Ok(metrics_from_ranks(&ranks, ks))
}

pub fn metrics_from_ranks(ranks: &[usize], ks: &[usize]) -> RetrievalMetrics {
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let recall_at = ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    RetrievalMetrics { mrr, recall_at }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
}

impl MetricSummary {
    pub fn from_values(per_seed: Vec<f64>) -> Self {
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n.max(1.0);
        let std = if per_seed.len() > 1 {
            (per_seed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { per_seed, mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub target: String,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl MetricsReport {
    pub fn from_runs(task: &str, target: &str, seeds: &[u64], runs: &[BTreeMap<String, f64>]) -> Self {
        let mut metrics = BTreeMap::new();
        if let Some(first) = runs.first() {
            for name in first.keys() {
                let values = runs.iter().map(|r| r[name]).collect();
                metrics.insert(name.clone(), MetricSummary::from_values(values));
            }
        }
        Self {
            task: task.to_owned(),
            target: target.to_owned(),
            seeds: seeds.to_vec(),
            metrics,
        }
    }
}

/// Plain-text table, one row per (report, metric).
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut out = format!("{:<12} {:<24} {:<16} {:>8} {:>8}\n", "task", "target", "metric", "mean", "std");
    for r in reports {
        for (name, m) in &r.metrics {
            out.push_str(&format!(
                "{:<12} {:<24} {:<16} {:>8.4} {:>8.4}\n",
                r.task, r.target, name, m.mean, m.std
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
        let mut wins = 0.0;
        for p in pos {
            for n in neg {
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
        wins / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn auc_landmarks() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3, 0.3], &[0.3]).unwrap(), 0.5);
        assert_eq!(auc(&[0.6], &[0.4, 0.7]).unwrap(), 0.5);
        assert_eq!(auc(&[0.6], &[0.4, 0.7]).unwrap(), brute_auc(&[0.6], &[0.4, 0.7]));
        assert!(matches!(auc(&[], &[0.1]), Err(CoreError::EmptyClass)));
    }

    #[test]
    fn classify_rules() {
        let p = vec![vec![1.0, 0.0]];
        assert_eq!(zero_shot_classify(&[-1.0, 0.3], &p).unwrap(), 0);
        let p = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, -1.0]];
        assert_eq!(zero_shot_classify(&[1.0, 0.0], &p).unwrap(), 1);
        let tie = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(zero_shot_classify(&[0.2, 0.9], &tie).unwrap(), 0);
        assert!(matches!(
            zero_shot_classify(&[1.0], &[]),
            Err(CoreError::EmptyPromptSet)
        ));
    }

    #[test]
    fn link_threshold_is_strict() {
        assert_eq!(link_predict(&[1.0, 0.0], &[1.0, 0.0], 0.5, ScoreMap::Affine), (1.0, true));
        assert_eq!(link_predict(&[1.0, 0.0], &[-1.0, 0.0], 0.5, ScoreMap::Affine), (0.0, false));
        assert_eq!(link_predict(&[1.0, 0.0], &[0.0, 1.0], 0.5, ScoreMap::Affine), (0.5, false));
    }

    #[test]
    fn retrieval_landmarks() {
        let q = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let m = retrieval_metrics(&q, &q, &[1, 5, 10]).unwrap();
        assert_eq!(m.mrr, 1.0);
        assert_eq!(m.recall_at[&1], 1.0);
        let m = metrics_from_ranks(&[2, 2, 2], &[1, 5]);
        assert_eq!((m.mrr, m.recall_at[&1], m.recall_at[&5]), (0.5, 0.0, 1.0));
        let m = metrics_from_ranks(&[1, 2, 3], &[1]);
        assert!((m.mrr - 0.611_111_111_111).abs() < 1e-9);
    }

    #[test]
    fn ties_rank_by_candidate_index() {
        assert_eq!(rank_of(&[0.5, 0.5, 0.5], 0), 1);
        assert_eq!(rank_of(&[0.5, 0.5, 0.5], 2), 3);
    }

    #[test]
    fn prompt_set_validation() {
        let ok: BTreeMap<usize, String> = [(0, "a".into()), (1, "b".into())].into();
        assert_eq!(LabelPromptSet::new(ok).unwrap().len(), 2);
        let gap: BTreeMap<usize, String> = [(0, "a".into()), (2, "b".into())].into();
        assert!(LabelPromptSet::new(gap).is_err());
        assert!(matches!(
            LabelPromptSet::new(BTreeMap::new()),
            Err(CoreError::EmptyPromptSet)
        ));
        let parsed: LabelPromptSet = serde_json::from_str(r#"{"0":"x","1":"y"}"#).unwrap();
        assert_eq!(parsed.prompts(), &["x", "y"]);
    }

    #[test]
    fn summary_std() {
        assert_eq!(MetricSummary::from_values(vec![0.4]).std, 0.0);
        let s = MetricSummary::from_values(vec![1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
    }
}
