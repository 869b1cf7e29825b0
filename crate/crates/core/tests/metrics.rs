use proptest::prelude::*;
use rand::Rng;

use s2align_core::config::RunConfig;
use s2align_core::eval::*;
use s2align_core::model::Model;
use s2align_core::pipeline::{evaluate_suite, load_corpus};
use s2align_core::seed;
use s2align_core::tag::GenConfig;

fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice = 0u64;
    for p in pos {
        for n in neg {
            twice += if p > n { 2 } else if p == n { 1 } else { 0 };
        }
    }
    twice as f64 / (2 * pos.len() * neg.len()) as f64
}

fn brute_ranks(queries: &[Vec<f64>], candidates: &[Vec<f64>]) -> Vec<usize> {
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut order: Vec<(usize, f64)> = candidates.iter().map(|c| cosine(q, c)).enumerate().collect();
            // Stable sort keeps lower candidate indices first among ties.
            order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            1 + order.iter().position(|&(j, _)| j == i).unwrap()
        })
        .collect()
}

fn coarse_vectors(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    // Few distinct coordinates, so exact similarity ties occur.
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-2i32..=2) as f64).collect::<Vec<_>>())
        .map(|mut v: Vec<f64>| {
            if v.iter().all(|x| *x == 0.0) {
                v[0] = 1.0;
            }
            v
        })
        .collect()
}

#[test]
fn metrics_match_brute_force_enumeration() {
    let mut rng = seed::rng(11);
    for _ in 0..100 {
        let np = rng.random_range(1..=25);
        let nn = rng.random_range(1..=25);
        let pos: Vec<f64> = (0..np).map(|_| rng.random_range(0..10) as f64 / 10.0).collect();
        let neg: Vec<f64> = (0..nn).map(|_| rng.random_range(0..10) as f64 / 10.0).collect();
        assert_eq!(auc(&pos, &neg).unwrap(), brute_auc(&pos, &neg));

        let n = rng.random_range(1..=50);
        let q = coarse_vectors(&mut rng, n, 3);
        let c = coarse_vectors(&mut rng, n, 3);
        let ranks = brute_ranks(&q, &c);
        let got = retrieval_metrics(&q, &c, &[1, 5, 10]).unwrap();
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n as f64;
        assert_eq!(got.mrr, mrr);
        for k in [1, 5, 10] {
            let rec = ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
            assert_eq!(got.recall_at[&k], rec);
        }
    }
}

#[test]
fn worked_examples() {
    assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
    assert_eq!(auc(&[0.6], &[0.4, 0.7]).unwrap(), 0.5);
    assert_eq!(auc(&[0.3, 0.3], &[0.3]).unwrap(), 0.5);
    let m = metrics_from_ranks(&[1, 2, 3], &[1]);
    assert!((m.mrr - 11.0 / 18.0).abs() < 1e-15);
    assert!(matches!(auc(&[], &[1.0]), Err(s2align_core::CoreError::EmptyClass)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auc_is_invariant_under_monotone_maps(
        pos in prop::collection::vec(-5.0f64..5.0, 1..30),
        neg in prop::collection::vec(-5.0f64..5.0, 1..30),
    ) {
        let f = |x: &f64| (0.7 * x).exp() * 3.0 + 1.0;
        let a = auc(&pos, &neg).unwrap();
        let b = auc(&pos.iter().map(f).collect::<Vec<_>>(), &neg.iter().map(f).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn recall_at_one_bounds_mrr(seed_value in 0u64..1000, n in 1usize..40) {
        let mut rng = seed::rng(seed_value);
        let q = coarse_vectors(&mut rng, n, 4);
        let c = coarse_vectors(&mut rng, n, 4);
        let m = retrieval_metrics(&q, &c, &[1, 5, 10]).unwrap();
        prop_assert!(m.recall_at[&1] <= m.mrr && m.mrr <= 1.0);
        prop_assert!(m.recall_at[&1] <= m.recall_at[&5] && m.recall_at[&5] <= m.recall_at[&10]);
    }

    #[test]
    fn retrieval_is_permutation_equivariant(seed_value in 0u64..1000, n in 2usize..30) {
        use rand::seq::SliceRandom;
        let mut rng = seed::rng(seed_value);
        let q: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let c: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let qp: Vec<_> = perm.iter().map(|&i| q[i].clone()).collect();
        let cp: Vec<_> = perm.iter().map(|&i| c[i].clone()).collect();
        let a = retrieval_metrics(&q, &c, &[1, 5]).unwrap();
        let b = retrieval_metrics(&qp, &cp, &[1, 5]).unwrap();
        prop_assert!((a.mrr - b.mrr).abs() < 1e-12);
        prop_assert_eq!(a.recall_at, b.recall_at);
    }

    #[test]
    fn classification_ignores_common_rescaling(
        g in prop::collection::vec(-1.0f64..1.0, 4),
        prompts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..6),
        scale in 0.01f64..100.0,
    ) {
        prop_assume!(g.iter().any(|x| x.abs() > 1e-3));
        prop_assume!(prompts.iter().all(|p| p.iter().any(|x| x.abs() > 1e-3)));
        let a = zero_shot_classify(&g, &prompts).unwrap();
        let scaled: Vec<Vec<f64>> = prompts.iter().map(|p| p.iter().map(|x| x * scale).collect()).collect();
        let gs: Vec<f64> = g.iter().map(|x| x * scale).collect();
        prop_assert_eq!(a, zero_shot_classify(&gs, &scaled).unwrap());
    }
}

fn eval_config(nodes: usize, class_signal: f64, p_intra: f64, p_inter: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.corpus.generate = GenConfig {
        num_domains: 1,
        num_target_domains: 1,
        nodes_per_domain: nodes,
        class_signal,
        p_intra,
        p_inter,
        ..GenConfig::default()
    };
    cfg.encoder.hidden_dim = 16;
    cfg.encoder.embed_dim = 16;
    cfg.encoder.hash_dim = 64;
    cfg.eval.retrieval_size = 50;
    cfg.eval.max_edges = 50;
    cfg
}

#[test]
fn untrained_model_without_label_signal_is_at_chance() {
    // Text and topology carry no class information, so predictions are
    // independent of labels: accuracy ~ 1/C with binomial spread.
    let cfg = eval_config(500, 0.0, 0.02, 0.02);
    let corpus = load_corpus(&cfg).unwrap();
    let n = corpus.targets[0].tag.num_nodes();
    assert_eq!(n, 500);
    let z = 2.576;
    let half_width = z * (0.25f64 * 0.75 / n as f64).sqrt();
    for s in 0..3 {
        let model = Model::init(&RunConfig { seed: s, ..cfg.clone() }, &[1]).unwrap();
        let reports = evaluate_suite(&model, &corpus.targets, &["classify".into()], &[s]).unwrap();
        let acc = reports[0].metrics["accuracy"].mean;
        assert!((acc - 0.25).abs() <= half_width, "seed {s}: {acc}");
    }
}

#[test]
fn suite_reports_are_bounded_and_seed_sensitive() {
    let cfg = eval_config(60, 0.5, 0.2, 0.02);
    let corpus = load_corpus(&cfg).unwrap();
    let model = Model::init(&cfg, &[1]).unwrap();
    let tasks: Vec<String> = ["classify", "link", "retrieval"].map(String::from).to_vec();
    let one = evaluate_suite(&model, &corpus.targets, &tasks, &[0]).unwrap();
    assert_eq!(one.len(), 3);
    for r in &one {
        for m in r.metrics.values() {
            assert_eq!(m.std, 0.0);
            assert!((0.0..=1.0).contains(&m.mean));
        }
    }
    let many = evaluate_suite(&model, &corpus.targets, &tasks, &[0, 1, 2, 3, 4]).unwrap();
    let link = many.iter().find(|r| r.task == "link").unwrap();
    assert!(link.metrics["auc"].std > 0.0);
    assert_eq!(many, evaluate_suite(&model, &corpus.targets, &tasks, &[0, 1, 2, 3, 4]).unwrap());
    assert!(matches!(
        evaluate_suite(&model, &corpus.targets, &["segment".into()], &[0]),
        Err(s2align_core::CoreError::UnknownTask { .. })
    ));
}
