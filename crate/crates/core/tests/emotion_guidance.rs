mod common;

use common::*;
use empathy::config::Ablation;
use empathy::corpus::{Batch, NUM_EMOTIONS};
use empathy::model::emotion::{intensity, intensity_weights, raw_intensity};
use empathy::model::guidance::{cross_entropy, entropy, guidance_losses, pool, predict, soft_cross_entropy, Predictor};
use empathy::model::Model;
use empathy_nn::{Graph, ParameterStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_model(cfg: empathy::ModelConfig, seed: u64) -> (Model, Vec<empathy::corpus::Dialogue>) {
    let (d, v) = toy_corpus();
    (build_model(cfg, &d, &v, &toy_lexicon(), seed), d)
}

fn set(store: &mut ParameterStore, name: &str, values: &[f64]) {
    let t = store.value_mut(name).unwrap();
    t.fill(0.0);
    t.data_mut()[..values.len()].copy_from_slice(values);
}

#[test]
fn default_vad_intensity() {
    assert!((raw_intensity((0.0, 0.5, 0.0)) - 0.5590169943749475).abs() < 1e-15);
}

#[test]
fn row_without_lexicon_entries_pools_uniformly() {
    let (dialogues, vocab) = parse(&[record(&["the bus was late again"], "annoying", "annoyed")]);
    let model = build_model(tiny_config(), &dialogues, &vocab, &toy_lexicon(), 0);
    let batch = Batch::from_dialogues(&dialogues, &[0], &model.vocab, 16, 10);
    let kept = batch.pad_mask.iter().filter(|&&k| k).count();
    assert_eq!(kept, 6);
    assert!(intensity(&batch, &model.resources).iter().zip(&batch.pad_mask).all(|(&i, &k)| i == f64::from(u8::from(k))));
    let g = Graph::new(&model.store);
    let w = intensity_weights(&g, &batch, &model.resources).unwrap().value();
    for (x, &k) in w.data().iter().zip(&batch.pad_mask) {
        let expected = if k { 1.0 / kept as f64 } else { 0.0 };
        assert!((x - expected).abs() < 1e-12);
    }
}

#[test]
fn intensity_is_min_max_normalized_per_row() {
    let (model, d) = toy_model(tiny_config(), 1);
    let batch = Batch::from_dialogues(&d, &[0, 2, 6], &model.vocab, 16, 10);
    let i = intensity(&batch, &model.resources);
    for b in 0..3 {
        let row: Vec<f64> = (0..16).filter(|&p| batch.pad_mask[b * 16 + p]).map(|p| i[b * 16 + p]).collect();
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }
}

#[test]
fn uniform_weights_pool_to_the_mean() {
    let store = ParameterStore::new();
    let g = Graph::new(&store);
    let x = g.constant(Tensor::new(&[1, 4, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, -1.0, 0.5]).unwrap());
    let w = g.constant(Tensor::full(&[1, 4], 0.25));
    let pooled = pool(x, w).unwrap().value();
    assert_eq!(pooled.shape(), &[1, 2]);
    assert!((pooled.data()[0] - 2.0).abs() < 1e-12);
    assert!((pooled.data()[1] - 3.125).abs() < 1e-12);
}

fn dot_columns(x: &[f64], w: &[[f64; 2]; 2]) -> [f64; 2] {
    [x[0] * w[0][0] + x[1] * w[1][0], x[0] * w[0][1] + x[1] * w[1][1]]
}

#[test]
fn predictor_matches_hand_evaluation() {
    let p = Predictor::new("p", 2, 2);
    let mut store = ParameterStore::new();
    p.register(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let w3c = [[0.2, -0.1], [0.4, 0.3]];
    let b3 = [0.1, -0.2];
    let w3s = [[1.0, -0.5], [0.3, 0.8]];
    let w4 = [[0.7, 0.1], [-0.2, 0.5]];
    let b4 = [0.05, 0.0];
    let wout = [[1.5, -1.0], [0.5, 2.0]];
    let bout = [0.1, -0.1];
    set(&mut store, "p.attn_hidden.weight", &w3c.concat());
    set(&mut store, "p.attn_hidden.bias", &b3);
    set(&mut store, "p.attn_score.weight", &w3s.concat());
    set(&mut store, "p.gate.weight", &w4.concat());
    set(&mut store, "p.gate.bias", &b4);
    let out_w = store.value_mut("p.out.weight").unwrap();
    out_w.fill(0.0);
    for (i, row) in wout.iter().enumerate() {
        out_w.data_mut()[i * NUM_EMOTIONS..i * NUM_EMOTIONS + 2].copy_from_slice(row);
    }
    set(&mut store, "p.out.bias", &bout);

    let c = [0.5, -1.0];
    let h = dot_columns(&c, &w3c);
    let h = [(h[0] + b3[0]).tanh(), (h[1] + b3[1]).tanh()];
    let s = dot_columns(&h, &w3s);
    let z = s[0].exp() + s[1].exp();
    let s = [s[0].exp() / z, s[1].exp() / z];
    let gated = dot_columns(&[c[0] * s[0], c[1] * s[1]], &w4);
    let gated = [(gated[0] + b4[0]).tanh(), (gated[1] + b4[1]).tanh()];
    let logits = dot_columns(&gated, &wout);
    let logits = [logits[0] + bout[0], logits[1] + bout[1]];
    let z = logits[0].exp() + logits[1].exp() + (NUM_EMOTIONS - 2) as f64;

    let g = Graph::new(&store);
    let out = p.classify(&g, g.constant(Tensor::new(&[1, 2], c.to_vec()).unwrap())).unwrap();
    let attn = out.attention.value();
    let probs = out.probs.value();
    assert!((attn.data()[0] - s[0]).abs() < 1e-12);
    assert!((probs.data()[0] - logits[0].exp() / z).abs() < 1e-12);
    assert!((probs.data()[1] - logits[1].exp() / z).abs() < 1e-12);
    assert!((probs.data()[2] - 1.0 / z).abs() < 1e-12);
    assert!((probs.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn zero_output_layer_gives_uniform_prediction_and_class_zero() {
    let (mut model, d) = toy_model(tiny_config(), 2);
    for p in ["student", "teacher"] {
        model.store.value_mut(&format!("{p}.out.weight")).unwrap().fill(0.0);
        model.store.value_mut(&format!("{p}.out.bias")).unwrap().fill(0.0);
    }
    let batch = Batch::from_dialogues(&d, &[0, 5], &model.vocab, 16, 10);
    let g = Graph::new(&model.store);
    let enc = model.encode(&g, &batch).unwrap();
    for probs in [enc.student.probs.value(), enc.teacher.unwrap().probs.value()] {
        assert!(probs.data().iter().all(|&x| (x - 1.0 / 32.0).abs() < 1e-15));
        assert_eq!(predict(&probs), vec![0, 0]);
    }
}

#[test]
fn one_hot_prediction() {
    let mut p = vec![0.0; NUM_EMOTIONS];
    p[7] = 1.0;
    assert_eq!(predict(&Tensor::new(&[1, NUM_EMOTIONS], p).unwrap()), vec![7]);
}

#[test]
fn loss_values_for_extreme_teachers() {
    let store = ParameterStore::new();
    let g = Graph::new(&store);
    let mut one_hot = vec![0.0; 2 * NUM_EMOTIONS];
    one_hot[3] = 1.0;
    one_hot[NUM_EMOTIONS + 20] = 1.0;
    let labels = [3, 20];
    let teacher = g.constant(Tensor::new(&[2, NUM_EMOTIONS], one_hot).unwrap());
    assert_eq!(cross_entropy(teacher, &labels).unwrap().item(), 0.0);

    let uniform = g.constant(Tensor::full(&[2, NUM_EMOTIONS], 1.0 / 32.0));
    let (l_tchr, l_stu, l_e) = guidance_losses(uniform, uniform, &labels).unwrap();
    let ln32 = 32f64.ln();
    assert!((ln32 - 3.4657).abs() < 1e-4);
    assert!((l_tchr.item() - ln32).abs() < 1e-12);
    assert!((l_stu.item() - ln32).abs() < 1e-12);
    assert!((l_e.item() - 2.0 * ln32).abs() < 1e-12);
}

#[test]
fn student_loss_leaves_teacher_parameters_without_gradient() {
    let (model, d) = toy_model(tiny_config(), 3);
    let batch = Batch::from_dialogues(&d, &[0, 1, 2, 3, 4, 5], &model.vocab, 16, 10);
    let g = Graph::new(&model.store);
    let f = model.forward(&g, &batch).unwrap();
    let grads = g.backward(f.losses.l_stu.unwrap()).unwrap();
    let mut teacher_params = 0;
    for name in model.store.names() {
        if name.starts_with("teacher.") || name.starts_with("enrich.teacher.") {
            teacher_params += 1;
            assert!(grads.get(name).is_none_or(|t| t.data().iter().all(|&x| x == 0.0)), "{name}");
        }
    }
    assert!(teacher_params > 0);
    assert!(grads.get("student.out.weight").unwrap().norm() > 0.0);
}

#[test]
fn without_guidance_the_emotion_loss_is_plain_cross_entropy() {
    let cfg = empathy::ModelConfig {
        ablation: Ablation {
            enable_egm: false,
            ..Ablation::default()
        },
        ..tiny_config()
    };
    let (model, d) = toy_model(cfg, 4);
    assert!(!model.store.names().any(|n| n.contains("teacher")));
    let batch = Batch::from_dialogues(&d, &[0, 3, 6], &model.vocab, 16, 10);
    let g = Graph::new(&model.store);
    let f = model.forward(&g, &batch).unwrap();
    assert!(f.encoding.teacher.is_none() && f.losses.l_tchr.is_none() && f.losses.l_stu.is_none());
    let ce = cross_entropy(f.encoding.student.probs, &batch.emotion_labels).unwrap();
    assert_eq!(f.losses.l_e.item(), ce.item());
}

fn distribution(raw: &[f64]) -> Vec<f64> {
    let z: f64 = raw.iter().sum();
    raw.iter().map(|x| x / z).collect()
}

proptest! {
    #[test]
    fn soft_cross_entropy_is_bounded_by_entropy(
        p in prop::collection::vec(0.01f64..1.0, NUM_EMOTIONS),
        q in prop::collection::vec(0.01f64..1.0, NUM_EMOTIONS),
    ) {
        let (p, q) = (distribution(&p), distribution(&q));
        let store = ParameterStore::new();
        let g = Graph::new(&store);
        let tp = g.constant(Tensor::new(&[1, NUM_EMOTIONS], p.clone()).unwrap());
        let tq = g.constant(Tensor::new(&[1, NUM_EMOTIONS], q).unwrap());
        let h = entropy(&p);
        prop_assert!(soft_cross_entropy(tp, tq).unwrap().item() >= h - 1e-12);
        prop_assert!((soft_cross_entropy(tp, tp).unwrap().item() - h).abs() < 1e-12);
    }

    #[test]
    fn prediction_is_invariant_under_monotone_logit_maps(
        logits in prop::collection::vec(-5.0f64..5.0, NUM_EMOTIONS),
        a in 0.1f64..10.0,
        b in -3.0f64..3.0,
    ) {
        let store = ParameterStore::new();
        let g = Graph::new(&store);
        let probs = |z: Vec<f64>| g.constant(Tensor::new(&[1, NUM_EMOTIONS], z).unwrap()).softmax(None).unwrap().value();
        let base = predict(&probs(logits.clone()));
        prop_assert_eq!(&base, &predict(&Tensor::new(&[1, NUM_EMOTIONS], logits.clone()).unwrap()));
        prop_assert_eq!(&base, &predict(&probs(logits.iter().map(|x| a * x + b).collect())));
        prop_assert_eq!(&base, &predict(&probs(logits.iter().map(|x| x.powi(3)).collect())));
    }

    #[test]
    fn predicted_distributions_sum_to_one(seed in any::<u64>()) {
        let (model, d) = toy_model(tiny_config(), seed);
        let batch = Batch::from_dialogues(&d, &[0, 1, 2, 3, 4, 5, 6, 7], &model.vocab, 16, 10);
        let g = Graph::new(&model.store);
        let enc = model.encode(&g, &batch).unwrap();
        for probs in [enc.student.probs.value(), enc.teacher.unwrap().probs.value()] {
            for r in 0..probs.rows() {
                prop_assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
