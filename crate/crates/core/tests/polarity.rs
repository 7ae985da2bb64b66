use empathy::corpus::{VadLexicon, WordVectors};
use empathy::polarity::{analyze, state_polarity, trait_polarity};
use proptest::prelude::*;

fn setup(valences: &[f64], vecs: &[(f64, f64)]) -> (VadLexicon, WordVectors, Vec<String>) {
    let mut lex = VadLexicon::new();
    let mut vs = WordVectors::new(2);
    let mut words = Vec::new();
    for (i, (&v, &(x, y))) in valences.iter().zip(vecs).enumerate() {
        let w = format!("w{i}");
        lex.insert(&w, (v, 0.5, 0.5)).unwrap();
        vs.insert(&w, vec![x, y]).unwrap();
        words.push(w);
    }
    (lex, vs, words)
}

#[test]
fn absent_words_are_trait_negative() {
    let mut lex = VadLexicon::new();
    lex.insert("glad", (0.62, 0.4, 0.5)).unwrap();
    lex.insert("meh", (0.5, 0.4, 0.5)).unwrap();
    let t = trait_polarity(&lex, &["glad", "meh", "zzz"]);
    assert_eq!(t.iter().map(|r| r.2).collect::<Vec<_>>(), [true, false, false]);
    assert_eq!(t[2].1, 0.0);
}

#[test]
fn words_without_vectors_are_skipped() {
    let (lex, mut vs, mut words) = setup(&[0.9, 0.1], &[(1.0, 0.0), (0.0, 1.0)]);
    words.push("novec".into());
    let r = analyze(&lex, &vs, &words).unwrap();
    assert_eq!(r.records.len(), 2);
    vs.insert("novec", vec![0.5, 0.5]).unwrap();
    assert_eq!(analyze(&lex, &vs, &words).unwrap().records.len(), 3);
}

fn scenario() -> impl Strategy<Value = (Vec<f64>, Vec<(f64, f64)>)> {
    (2usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![0.0f64..0.5, 0.51f64..1.0], n),
            prop::collection::vec((-4i32..5, -4i32..5).prop_map(|(x, y)| (f64::from(x), f64::from(y))), n),
        )
    })
}

proptest! {
    #[test]
    fn swapping_group_labels_keeps_the_discrepancy_set((valences, vecs) in scenario()) {
        let (lex, vs, words) = setup(&valences, &vecs);
        let traits = trait_polarity(&lex, &words);
        prop_assume!(traits.iter().any(|t| t.2) && traits.iter().any(|t| !t.2));
        let swapped: Vec<_> = traits.iter().map(|(w, v, p)| (w.clone(), *v, !p)).collect();
        let a = state_polarity(&vs, &traits).unwrap();
        let b = state_polarity(&vs, &swapped).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.discrepant(), y.discrepant(), "{}", x.word);
            if x.sim_pos != x.sim_neg {
                prop_assert_eq!(x.state_positive, !y.state_positive);
            }
        }
    }

    #[test]
    fn proportion_is_invariant_under_power_of_two_scaling((valences, vecs) in scenario(), k in -8i32..9) {
        let (lex, vs, words) = setup(&valences, &vecs);
        let traits = trait_polarity(&lex, &words);
        prop_assume!(traits.iter().any(|t| t.2) && traits.iter().any(|t| !t.2));
        let s = 2f64.powi(k);
        let scaled: Vec<(f64, f64)> = vecs.iter().map(|(x, y)| (x * s, y * s)).collect();
        let (_, vs2, _) = setup(&valences, &scaled);
        let a = analyze(&lex, &vs, &words).unwrap();
        let b = analyze(&lex, &vs2, &words).unwrap();
        prop_assert_eq!(a.count, b.count);
        prop_assert_eq!(a.proportion, b.proportion);
    }
}
