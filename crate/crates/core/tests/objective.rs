use proptest::prelude::*;

use s2align_autodiff::{check_gradients, value_and_grad, GradCheckConfig, ParamVars, Tape, Tensor, Var};
use s2align_core::alignment::*;
use s2align_core::config::RunConfig;
use s2align_core::encoders::{graph_forward, text_forward};
use s2align_core::model::Model;
use s2align_core::scrb::*;
use s2align_core::tag::{generate_synthetic_corpus, GenConfig};
use s2align_core::train::{batch_objective, sparsify_sources, PreparedSample, TrainingSet, Variant};
use s2align_core::CoreError;

fn tiny_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.corpus.generate = GenConfig {
        num_domains: 2,
        num_target_domains: 0,
        nodes_per_domain: 24,
        vocab_size: 16,
        ..GenConfig::default()
    };
    cfg.keep_fraction = 0.5;
    cfg.encoder.hidden_dim = 6;
    cfg.encoder.embed_dim = 5;
    cfg.encoder.hash_dim = 16;
    cfg.sampler.max_nodes = 12;
    cfg.train.batch_size = 8;
    cfg
}

fn fixture(seed: u64) -> (RunConfig, Model, TrainingSet) {
    let cfg = tiny_config(seed);
    let corpus = generate_synthetic_corpus(&cfg.corpus.generate, seed).unwrap();
    let sparse = sparsify_sources(&corpus.sources, &cfg).unwrap();
    let set = TrainingSet::build(&sparse, &cfg).unwrap();
    let mut model = Model::init(&cfg, &set.domains).unwrap();
    // Move density models off their standard initialization so every term is generic.
    for (name, t) in model.params.iter_mut() {
        if name.starts_with("density") {
            for (k, x) in t.data_mut().iter_mut().enumerate() {
                *x += 0.05 * ((k as f64 + seed as f64) * 1.7).sin();
            }
        }
    }
    (cfg, model, set)
}

type Pick = for<'t> fn(&s2align_core::train::BatchObjective<'t>) -> s2align_core::Result<Var<'t>>;

fn components() -> Vec<(&'static str, Pick)> {
    vec![
        ("rec", |o| Ok(o.rec)),
        ("per_sample", |o| Ok(o.losses.select(3)?)),
        ("align", |o| Ok(o.align)),
        ("den", |o| Ok(o.den)),
        ("risk", |o| Ok(o.risk)),
        ("total", |o| Ok(o.total)),
    ]
}

#[test]
fn every_loss_passes_gradient_check() {
    for seed in 0..5 {
        let (cfg, model, set) = fixture(seed);
        let batch = set.stratified_batch(8, seed, 0).unwrap();
        for (name, pick) in components() {
            let report = check_gradients::<_, CoreError>(
                &model.params,
                |tape, vars| pick(&batch_objective(tape, vars, &batch, &cfg, Variant::Full)?),
                &GradCheckConfig {
                    seed,
                    ..GradCheckConfig::default()
                },
            )
            .unwrap();
            assert!(report.passed, "seed {seed} {name}: {report:?}");
            assert!(report.checked > 0);
        }
    }
}

#[test]
fn reconstruction_and_density_do_not_reach_the_graph_encoder() {
    for seed in 0..3 {
        let (cfg, model, set) = fixture(seed);
        let batch = set.stratified_batch(8, seed, 1).unwrap();
        for (name, pick) in [("rec", components()[0].1), ("den", components()[3].1)] {
            let (_, grads) = value_and_grad::<_, CoreError>(&model.params, |tape, vars| {
                pick(&batch_objective(tape, vars, &batch, &cfg, Variant::Full)?)
            })
            .unwrap();
            assert!(grads.all_zero_with_prefix("graph."), "{name}");
        }
        // The alignment loss does train the graph encoder.
        let (_, grads) = value_and_grad::<_, CoreError>(&model.params, |tape, vars| {
            Ok(batch_objective(tape, vars, &batch, &cfg, Variant::Full)?.align)
        })
        .unwrap();
        assert!(!grads.all_zero_with_prefix("graph."));
    }
}

/// Symmetric InfoNCE written out with plain loops.
fn reference_contrastive(g: &[Vec<f64>], t: &[Vec<f64>], tau: f64) -> f64 {
    let norm = |v: &Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let g: Vec<_> = g.iter().map(norm).collect();
    let t: Vec<_> = t.iter().map(norm).collect();
    let b = g.len();
    let s = |i: usize, j: usize| g[i].iter().zip(&t[j]).map(|(x, y)| x * y).sum::<f64>() / tau;
    let mut total = 0.0;
    for i in 0..b {
        let row: f64 = (0..b).map(|j| s(i, j).exp()).sum();
        let col: f64 = (0..b).map(|j| s(j, i).exp()).sum();
        let g2t = -(s(i, i).exp() / row).ln();
        let t2g = -(s(i, i).exp() / col).ln();
        total += 0.5 * (g2t + t2g);
    }
    total / b as f64
}

fn embeddings(cfg: &RunConfig, model: &Model, batch: &[&PreparedSample]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let tape = Tape::new();
    let vars = ParamVars::register(&tape, &model.params);
    batch
        .iter()
        .map(|s| {
            let (gc, _) = graph_forward(&tape, &vars, cfg.encoder.mp_layers, &s.inputs).unwrap();
            let (tc, _) = text_forward(&tape, &vars, &s.inputs.semantic, &s.inputs.structure).unwrap();
            (gc.value().into_data(), tc.value().into_data())
        })
        .unzip()
}

#[test]
fn closed_gate_and_unit_weights_reduce_to_plain_contrastive_loss() {
    for seed in 0..5 {
        let (cfg, model, set) = fixture(seed);
        for step in 0..4 {
            let batch = set.stratified_batch(8, seed, step).unwrap();
            let tape = Tape::new();
            let vars = ParamVars::register(&tape, &model.params);
            let obj = batch_objective(&tape, &vars, &batch, &cfg, Variant::NoRecNoScrb).unwrap();
            assert!(obj.state.omega.iter().all(|&w| w == 1.0));
            let (g, t) = embeddings(&cfg, &model, &batch);
            let expected = reference_contrastive(&g, &t, cfg.train.tau);
            assert!((obj.align.item() - expected).abs() < 1e-10, "{} vs {expected}", obj.align.item());
        }
    }
}

#[test]
fn zero_coefficients_leave_only_alignment() {
    let (mut cfg, model, set) = fixture(2);
    cfg.objective.alpha = 0.0;
    cfg.objective.mu = 0.0;
    cfg.objective.nu = 0.0;
    let batch = set.stratified_batch(8, 2, 0).unwrap();
    let tape = Tape::new();
    let vars = ParamVars::register(&tape, &model.params);
    let obj = batch_objective(&tape, &vars, &batch, &cfg, Variant::Full).unwrap();
    assert_eq!(obj.total.item(), obj.align.item());
}

#[test]
fn batch_weights_sum_to_domain_counts() {
    let (cfg, model, set) = fixture(1);
    for step in 0..20 {
        let batch = set.stratified_batch(8, 1, step).unwrap();
        let tape = Tape::new();
        let vars = ParamVars::register(&tape, &model.params);
        let obj = batch_objective(&tape, &vars, &batch, &cfg, Variant::Full).unwrap();
        for e in &set.domains {
            let (n, s) = obj
                .state
                .domain
                .iter()
                .zip(&obj.state.omega)
                .filter(|(d, _)| *d == e)
                .fold((0.0, 0.0), |acc, (_, w)| (acc.0 + 1.0, acc.1 + w));
            assert!((s - n).abs() < 1e-9);
        }
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn weights_sum_to_group_sizes(
        r_rho in prop::collection::vec(0.0f64..5.0, 2..40),
        k in 1u32..4,
    ) {
        let domains: Vec<u32> = (0..r_rho.len()).map(|i| i as u32 % k).collect();
        let w = sample_weights(&r_rho, &domains);
        for e in 0..k {
            let idx: Vec<usize> = (0..r_rho.len()).filter(|&i| domains[i] == e).collect();
            let s: f64 = idx.iter().map(|&i| w.weights[i]).sum();
            prop_assert!((s - idx.len() as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_follow_reliability_order_and_ignore_scale(
        r_rho in prop::collection::vec(0.01f64..5.0, 2..20),
        scale in 0.01f64..100.0,
    ) {
        let domains = vec![0u32; r_rho.len()];
        let w = sample_weights(&r_rho, &domains).weights;
        let scaled: Vec<f64> = r_rho.iter().map(|x| x * scale).collect();
        let ws = sample_weights(&scaled, &domains).weights;
        for i in 0..r_rho.len() {
            prop_assert!((w[i] - ws[i]).abs() < 1e-9 * (1.0 + w[i]));
            for j in 0..r_rho.len() {
                if r_rho[i] > r_rho[j] {
                    prop_assert!(w[i] > w[j]);
                }
            }
        }
    }

    #[test]
    fn scores_stay_in_range(
        a in prop::collection::vec(-3.0f64..3.0, 4),
        b in prop::collection::vec(-3.0f64..3.0, 4),
        p in prop::collection::vec(0.0f64..1.0, 1..30),
        cov in 0.0f64..=1.0,
    ) {
        prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
        let k = consistency_gate(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&k));
        let c = consistency_score(&a, &b).unwrap();
        let total: f64 = p.iter().sum();
        prop_assume!(total > 0.0);
        let p: Vec<f64> = p.iter().map(|x| x / total).collect();
        let d = structural_stability(&p, p.len()).unwrap();
        prop_assert!(d > 0.0 && d <= 1.0);
        let rho = reliability(d, cov, c, &ScrbConfig::default());
        prop_assert!((0.0..=1.0).contains(&rho));
    }

    #[test]
    fn gate_is_monotone_in_cosine(theta1 in 0.0f64..std::f64::consts::PI, theta2 in 0.0f64..std::f64::consts::PI) {
        let base = [1.0, 0.0];
        let k1 = consistency_gate(&base, &[theta1.cos(), theta1.sin()]).unwrap();
        let k2 = consistency_gate(&base, &[theta2.cos(), theta2.sin()]).unwrap();
        if theta1 < theta2 {
            prop_assert!(k1 >= k2);
        }
    }

    #[test]
    fn reliability_is_monotone_in_coverage(d in 0.0f64..=1.0, c in 0.0f64..=1.0, a1 in 0.0f64..=1.0, a2 in 0.0f64..=1.0) {
        let cfg = ScrbConfig::default();
        if a1 <= a2 {
            prop_assert!(reliability(d, a1, c, &cfg) <= reliability(d, a2, c, &cfg));
        }
    }

    #[test]
    fn risk_balance_is_nonnegative(risks in prop::collection::vec(0.0f64..10.0, 1..6)) {
        let tape = Tape::new();
        let vars: Vec<_> = risks.iter().map(|&r| tape.constant(Tensor::scalar(r))).collect();
        prop_assert!(risk_balance_loss(&vars).unwrap().item() >= 0.0);
    }

    #[test]
    fn enhancement_stays_unit_norm(
        t in prop::collection::vec(-1.0f64..1.0, 5),
        r in prop::collection::vec(-1.0f64..1.0, 5),
        z in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        prop_assume!([&t, &r, &z].iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-4));
        let out = enhance_text_values(&unit(t), &unit(r), &unit(z)).unwrap();
        let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-9);
    }
}

#[test]
fn uniform_and_one_hot_stability() {
    for n in 2..200 {
        let p = vec![1.0 / n as f64; n];
        assert!((structural_stability(&p, n).unwrap() - (-1.0f64).exp()).abs() < 1e-9);
        let mut one_hot = vec![0.0; n];
        one_hot[n / 2] = 1.0;
        assert_eq!(structural_stability(&one_hot, n).unwrap(), 1.0);
    }
}
