mod common;

use common::*;
use empathy::config::Ablation;
use empathy::corpus::{Batch, VadLexicon, NUM_EMOTIONS};
use empathy::model::emotion::{build_state, state_inclination, COMPRESS, CONTEXT_PROJ, EMOTION_PROJ};
use empathy::model::Model;
use empathy_nn::layers::Linear;
use empathy_nn::{Graph, ParameterStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_model(cfg: empathy::ModelConfig, seed: u64) -> (Model, Vec<empathy::corpus::Dialogue>) {
    let (d, v) = toy_corpus();
    (build_model(cfg, &d, &v, &toy_lexicon(), seed), d)
}

#[test]
fn widths_follow_compressed_dimension() {
    let cfg = empathy::ModelConfig::default();
    assert_eq!(cfg.d_cs, 10);
    assert_eq!(cfg.d_trait(), 14);
    assert_eq!(cfg.d_state(), 43);
}

#[test]
fn trait_row_starts_with_lexicon_entry_and_idf() {
    let (dialogues, vocab) = parse(&[
        record(&["i feel joyful today"], "nice", "joyful"),
        record(&["i feel calm"], "good", "content"),
        record(&["rain again"], "oh no", "sad"),
        record(&["the bus was late"], "annoying", "annoyed"),
    ]);
    let mut lex = VadLexicon::new();
    lex.insert("joyful", (0.8, 0.5, 0.6)).unwrap();
    let model = build_model(tiny_config(), &dialogues, &vocab, &lex, 0);
    let batch = Batch::from_dialogues(&dialogues, &[0], &model.vocab, 16, 10);
    let g = Graph::new(&model.store);
    let v_t = model.encode(&g, &batch).unwrap().v_t.unwrap().value();
    let d_t = model.config.d_trait();
    assert_eq!(v_t.shape(), &[1, 16, d_t]);
    let pos = batch.context_ids.iter().position(|&id| id == vocab.id("joyful")).unwrap();
    let row = &v_t.data()[pos * d_t..pos * d_t + 4];
    let expected = [0.8, 0.5, 0.6, 4f64.ln()];
    for (a, b) in row.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12, "{row:?}");
    }
    // "today" has no lexicon entry.
    let pos = batch.context_ids.iter().position(|&id| id == vocab.id("today")).unwrap();
    assert_eq!(&v_t.data()[pos * d_t..pos * d_t + 3], &[0.0, 0.5, 0.0]);
    // Padding rows carry no IDF.
    assert_eq!(v_t.data()[15 * d_t + 3], 0.0);
}

#[test]
fn zero_compression_zeroes_the_tail_of_both_views() {
    let (mut model, d) = toy_model(tiny_config(), 1);
    model.store.value_mut(&format!("{COMPRESS}.weight")).unwrap().fill(0.0);
    let batch = Batch::from_dialogues(&d, &[0, 4], &model.vocab, 16, 10);
    let g = Graph::new(&model.store);
    let enc = model.encode(&g, &batch).unwrap();
    let d_cs = model.config.d_cs;
    for v in [enc.v_t.unwrap().value(), enc.v_s.unwrap().value()] {
        let w = v.last_dim();
        for r in 0..v.rows() {
            assert!(v.row(r)[w - d_cs..].iter().all(|&x| x == 0.0));
        }
    }
}

fn identity_linear(name: &str, store: &mut ParameterStore) -> Linear {
    let lin = Linear::new(name, 2, 2, true);
    lin.register_zeros(store).unwrap();
    store
        .value_mut(&format!("{name}.weight"))
        .unwrap()
        .data_mut()
        .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    lin
}

#[test]
fn inclination_is_cosine_of_projections() {
    let mut store = ParameterStore::new();
    let cp = identity_linear("cp", &mut store);
    let ep = identity_linear("ep", &mut store);
    let g = Graph::new(&store);
    let context = g.constant(Tensor::new(&[1, 3, 2], vec![1.0, 0.0, 3.0, 3.0, 0.0, 0.0]).unwrap());
    let emotions = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let cos = state_inclination(&g, context, emotions, &cp, &ep).unwrap().value();
    assert_eq!(cos.shape(), &[1, 3, 2]);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let expected = [1.0, 0.0, h, h, 0.0, 0.0];
    for (a, b) in cos.data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-12, "{:?}", cos.data());
    }
}

#[test]
fn inclination_of_a_matching_row_is_one() {
    let mut store = ParameterStore::new();
    let cp = identity_linear("cp", &mut store);
    let ep = identity_linear("ep", &mut store);
    let g = Graph::new(&store);
    let context = g.constant(Tensor::new(&[1, 1, 2], vec![0.3, -0.7]).unwrap());
    let emotions = g.constant(Tensor::new(&[3, 2], vec![2.0, 1.0, 0.3, -0.7, 0.7, 0.3]).unwrap());
    let cos = state_inclination(&g, context, emotions, &cp, &ep).unwrap().value();
    assert!((cos.data()[1] - 1.0).abs() < 1e-12);
    assert!(cos.data()[2].abs() < 1e-12);
}

#[test]
fn state_row_from_zero_inputs_is_idf_only() {
    let store = ParameterStore::new();
    let g = Graph::new(&store);
    let cos = g.constant(Tensor::zeros(&[1, 2, NUM_EMOTIONS]));
    let idf = g.constant(Tensor::new(&[1, 2, 1], vec![1.5, 0.25]).unwrap());
    let compressed = g.constant(Tensor::zeros(&[1, 2, 10]));
    let v = build_state(cos, idf, compressed).unwrap().value();
    assert_eq!(v.shape(), &[1, 2, 43]);
    for (r, idf) in [1.5, 0.25].into_iter().enumerate() {
        for (i, &x) in v.row(r).iter().enumerate() {
            assert_eq!(x, if i == NUM_EMOTIONS { idf } else { 0.0 });
        }
    }
}

#[test]
fn duplicated_batch_rows_give_identical_state_encodings() {
    let (model, d) = toy_model(tiny_config(), 2);
    let batch = Batch::from_dialogues(&d, &[3, 3, 5], &model.vocab, 16, 10);
    let g = Graph::new(&model.store);
    let h_s = model.encode(&g, &batch).unwrap().h_s.unwrap().value();
    let n = h_s.numel() / 3;
    assert_eq!(h_s.data()[..n], h_s.data()[n..2 * n]);
    assert_ne!(h_s.data()[..n], h_s.data()[2 * n..]);
}

#[test]
fn disabled_views_drop_out_of_the_guidance_input() {
    let full = tiny_config();
    let (model, d) = toy_model(full.clone(), 3);
    let batch = Batch::from_dialogues(&d, &[0, 1], &model.vocab, 16, 10);
    let width = |m: &Model| {
        let g = Graph::new(&m.store);
        let enc = m.encode(&g, &batch).unwrap();
        (enc.h_t.is_some(), enc.h_s.is_some(), enc.h_ts().unwrap().map(|v| v.shape()[2]))
    };
    assert_eq!(width(&model), (true, true, Some(full.d_trait() + full.d_state())));
    for (tee, see, expected) in [
        (false, true, (false, true, Some(full.d_state()))),
        (true, false, (true, false, Some(full.d_trait()))),
        (false, false, (false, false, None)),
    ] {
        let cfg = empathy::ModelConfig {
            ablation: Ablation {
                enable_tee: tee,
                enable_see: see,
                ..Ablation::default()
            },
            ..full.clone()
        };
        assert_eq!(cfg.d_guidance(), full.d_model + expected.2.unwrap_or(0));
        let (m, _) = toy_model(cfg, 3);
        assert_eq!(width(&m), expected);
        if !see {
            assert!(!m.store.contains(&format!("{EMOTION_PROJ}.weight")));
        }
        if !tee && !see {
            assert!(!m.store.contains(&format!("{COMPRESS}.weight")));
        }
    }
}

#[test]
fn emotion_loss_reaches_projections_and_compression() {
    let (model, d) = toy_model(tiny_config(), 4);
    let batch = Batch::from_dialogues(&d, &[0, 2, 4, 6], &model.vocab, 16, 10);
    let g = Graph::new(&model.store);
    let f = model.forward(&g, &batch).unwrap();
    let grads = g.backward(f.losses.l_e).unwrap();
    for name in [COMPRESS, EMOTION_PROJ, CONTEXT_PROJ] {
        let norm = grads.get(&format!("{name}.weight")).map_or(0.0, Tensor::norm);
        assert!(norm > 0.0, "{name} has no gradient from the emotion loss");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn feature_ranges_hold_under_random_parameters(seed in any::<u64>(), jitter in 0.0f64..2.0) {
        let (mut model, d) = toy_model(tiny_config(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, p) in model.store.iter_mut() {
            for x in p.value.data_mut() {
                *x += rng.gen_range(-jitter..=jitter);
            }
        }
        let batch = Batch::from_dialogues(&d, &[0, 1, 2, 3, 4, 5, 6, 7], &model.vocab, 16, 10);
        let g = Graph::new(&model.store);
        let enc = model.encode(&g, &batch).unwrap();
        let cos = enc.v_cos.unwrap().value();
        prop_assert_eq!(cos.last_dim(), NUM_EMOTIONS);
        prop_assert!(cos.data().iter().all(|x| (-1.0 - 1e-12..=1.0 + 1e-12).contains(x)));
        let v_t = enc.v_t.unwrap().value();
        for r in 0..v_t.rows() {
            prop_assert!(v_t.row(r)[..3].iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
