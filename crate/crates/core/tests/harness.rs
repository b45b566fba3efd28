//! Training determinism, the ablation sweep, heads and the lr schedule.

use cdt_core::harness::loss::{classification_loss, regression_loss, total_loss};
use cdt_core::harness::{run_ablation, split_by_id, train, AblationPlan, LossWeights, TrainConfig};
use cdt_core::heads::{class_loss, confidence_target, final_score, ModeProbs};
use cdt_core::ndiff::{Graph, LrSchedule, ParamStore, Tensor};
use cdt_core::scene::{generate_dataset, Behavior, DatasetConfig, Scenario};
use cdt_core::{ModelConfig, Variant};
use proptest::prelude::*;

fn tiny_cfg(variant: Variant) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 4,
        base_lr: 1e-3,
        warmup_steps: 2,
        diffusion_steps: 3,
        variant,
        seed: 5,
        eval_every: 1,
        eval_limit: 4,
        eval_k: 2,
        val_fraction: 0.3,
        model: ModelConfig { width: 8, heads: 2, blocks: 1, ff_mult: 2, ..Default::default() },
        ..Default::default()
    }
}

fn data(n: usize) -> Vec<Scenario> {
    generate_dataset(&DatasetConfig { n_scenarios: n, rng_seed: 12, class_mix: [0.5, 0.25, 0.25], ..Default::default() })
        .unwrap()
}

#[test]
fn equal_seeds_train_identically() {
    let d = data(16);
    for variant in [Variant::Baseline, Variant::EndpointControlled] {
        let a = train(&tiny_cfg(variant), &d).unwrap();
        let b = train(&tiny_cfg(variant), &d).unwrap();
        assert!(a.divergence.is_none());
        assert_eq!(a.log.len(), 2);
        for (x, y) in a.log.iter().zip(&b.log) {
            assert!((x.loss.total - y.loss.total).abs() < 1e-9);
            assert_eq!(x.val_min_ade, y.val_min_ade);
        }
        assert_eq!(a.model.store, b.model.store);
        assert!(a.best.is_some());
        let c = train(&TrainConfig { seed: 6, ..tiny_cfg(variant) }, &d).unwrap();
        assert_ne!(a.log[1].loss.total, c.log[1].loss.total);
    }
}

#[test]
fn split_is_disjoint_and_stable() {
    let d = data(300);
    let (tr, val) = split_by_id(&d, 0.1);
    assert_eq!(tr.len() + val.len(), d.len());
    assert!(val.iter().all(|v| !tr.iter().any(|t| t.id == v.id)));
    let (tr2, _) = split_by_id(&d[..150], 0.1);
    assert!(tr2.iter().all(|s| tr.iter().any(|t| t.id == s.id)));
}

#[test]
fn ablation_applies_the_epoch_rule_and_records_failures() {
    let d = data(16);
    let base = TrainConfig { epochs: 99, ..tiny_cfg(Variant::Baseline) };
    let plan = AblationPlan { steps_list: vec![1, 0, 2], epochs_per_step: 1 };
    let mut seen = Vec::new();
    let rows = run_ablation(&base, &plan, &d, |r| seen.push(r.steps)).unwrap();
    assert_eq!(seen, vec![1, 0, 2]);
    assert_eq!(rows.iter().map(|r| r.epochs).collect::<Vec<_>>(), vec![1, 0, 2]);
    assert!(rows[0].outcome.is_ok() && rows[2].outcome.is_ok());
    assert!(rows[1].outcome.is_err());
    assert_eq!(AblationPlan::default().steps_list, vec![5, 10, 20, 32, 50, 100]);
    assert_eq!(AblationPlan::default().epochs_per_step * 20, 140);
}

#[test]
fn total_loss_of_a_hand_batch() {
    let store = ParamStore::new();
    let mut g = Graph::inference(&store);
    let eps_hat = g.constant(Tensor::from_vec(1, 2, vec![3.0, 4.0]).unwrap());
    let eps = g.constant(Tensor::zeros(1, 2));
    let reg = regression_loss(&mut g, eps_hat, eps, &[0..1]).unwrap();
    let logits = g.constant(Tensor::zeros(1, 3));
    let class = classification_loss(&mut g, logits, &[Behavior::Left]).unwrap();
    let conf = g.constant(Tensor::from_vec(1, 1, vec![0.25]).unwrap());
    let terms = total_loss(&mut g, reg, class, conf, LossWeights { gamma1: 1.0, gamma2: 0.0 }).unwrap();
    let v = terms.values(&g);
    assert!((v.total - (5.0 + 3f64.ln())).abs() < 1e-12);
    let terms = total_loss(&mut g, reg, class, conf, LossWeights { gamma1: 0.0, gamma2: 0.0 }).unwrap();
    assert_eq!(terms.values(&g).total, 5.0);
}

#[test]
fn heads_examples() {
    assert_eq!(class_loss(&ModeProbs([1.0, 0.0, 0.0]), Behavior::Straight), 0.0);
    assert!((class_loss(&ModeProbs([1.0 / 3.0; 3]), Behavior::Right) - 1.0986122886681098).abs() < 1e-12);
    let gt: Vec<[f64; 2]> = (0..60).map(|i| [i as f64, 0.0]).collect();
    let shifted: Vec<[f64; 2]> = gt.iter().map(|p| [p[0], 2.0]).collect();
    assert_eq!(confidence_target(&gt, &gt).unwrap(), 1.0);
    assert!((confidence_target(&shifted, &gt).unwrap() - (-1f64).exp()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn mode_probs_form_a_distribution(logits in prop::array::uniform3(-50.0..50.0f64)) {
        let p = ModeProbs::from_logits(&logits);
        prop_assert!(p.0.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!((p.0.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(class_loss(&p, p.argmax()) >= 0.0);
    }

    #[test]
    fn class_loss_falls_as_true_class_gains(q in 0.01..0.98f64, dq in 0.001..0.01f64, split in 0.0..1.0f64) {
        let at = |t: f64| ModeProbs([t, (1.0 - t) * split, (1.0 - t) * (1.0 - split)]);
        prop_assert!(class_loss(&at(q + dq), Behavior::Straight) < class_loss(&at(q), Behavior::Straight));
    }

    #[test]
    fn final_score_stays_in_unit_interval(a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let s = final_score(a, b);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn lr_ramps_then_never_rises(base in 1e-5..1e-2f64, warmup in 1u64..200, extra in 1u64..2000) {
        let s = LrSchedule::new(base, warmup, warmup + extra);
        prop_assert!((s.lr_at(0) - base / warmup as f64).abs() < 1e-12 * base.max(1.0));
        let mut prev = s.lr_at(warmup - 1);
        for step in warmup..warmup + extra {
            let lr = s.lr_at(step);
            prop_assert!(lr <= prev + 1e-15);
            prev = lr;
        }
    }
}
