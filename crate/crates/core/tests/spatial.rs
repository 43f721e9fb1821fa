mod common;

use proptest::prelude::*;
use spatial_qa::autodiff::{Faults, Tensor};
use spatial_qa::datagen::question_universe;
use spatial_qa::geo::{Entity, GeoPoint};
use spatial_qa::spatial::{spatial_score, SpNetConfig, SpatialModel, Vocab};
use spatial_qa::train::{check_model_gradients, ModelKind};
use spatial_qa::Error;

fn model(seed: u64, ablation: bool) -> (spatial_qa::geo::Catalog, spatial_qa::datagen::Dataset, SpatialModel) {
    let (cat, ds) = common::small_world();
    let vocab = Vocab::build(&ds.train.questions);
    let m = SpatialModel::new(SpNetConfig::tiny(), vocab, seed, ablation).unwrap();
    (cat, ds, m)
}

fn zeroed(mut m: SpatialModel) -> SpatialModel {
    for (_, t) in m.params.iter_mut() {
        *t = Tensor::zeros(t.shape());
    }
    m
}

#[test]
fn score_is_the_dot_product_over_begin_positions() {
    assert!((spatial_score(&[0.5, -0.8], &[0.2, 0.4]) + 0.22).abs() < 1e-15);
    assert_eq!(spatial_score(&[0.3, 0.9], &[0.0, 0.0]), 0.0);
    let w = [0.25, -0.5, 0.75];
    let d = [0.3, 1.1, 0.7];
    let d2: Vec<f64> = d.iter().map(|x| 2.0 * x).collect();
    assert_eq!(spatial_score(&w, &d2), 2.0 * spatial_score(&w, &d));
}

#[test]
fn zero_parameters_score_zero() {
    for ablation in [false, true] {
        let (cat, ds, m) = model(1, ablation);
        let m = zeroed(m);
        for q in ds.test.questions.iter().take(10) {
            let universe = question_universe(&cat, q);
            let prep = m.prepare(q, &cat).unwrap();
            let pts: Vec<GeoPoint> = universe.iter().map(|e| e.location).collect();
            assert!(m.score_points(&prep, &pts).unwrap().iter().all(|s| *s == 0.0));
            if !ablation {
                let states = m.encode_question(q, universe[0], &cat).unwrap();
                assert!(m.drl_weights(&states).unwrap().iter().all(|w| *w == 0.0));
            }
        }
    }
}

#[test]
fn states_have_twice_the_hidden_width_and_shared_blocks() {
    let (cat, ds, m) = model(2, false);
    let q = &ds.test.questions[0];
    let c = question_universe(&cat, q)[0];
    let states = m.encode_question(q, c, &cat).unwrap();
    assert_eq!(states.len(), q.tokens.len());
    assert!(states.iter().all(|s| s.len() == 2 * m.config.gru_hidden));
    let w = m.drl_weights(&[states[1].clone(), states[1].clone()]).unwrap();
    assert_eq!(w[0], w[1]);
}

#[test]
fn untagged_question_encoding_ignores_candidate_position() {
    let (cat, ds, m) = model(3, false);
    let q = common::untagged(&ds.test.questions[4]);
    let universe = question_universe(&cat, &q);
    let a = m.encode_question(&q, universe[0], &cat).unwrap();
    let b = m.encode_question(&q, universe[universe.len() - 1], &cat).unwrap();
    assert_eq!(a, b);
    let prep = m.prepare(&q, &cat).unwrap();
    let pts: Vec<GeoPoint> = universe.iter().map(|e| e.location).collect();
    assert!(m.score_points(&prep, &pts).unwrap().iter().all(|s| *s == 0.0));
}

#[test]
fn batched_scores_equal_single_candidate_scores() {
    for ablation in [false, true] {
        let (cat, ds, m) = model(4, ablation);
        for q in ds.test.questions.iter().take(6) {
            let universe = question_universe(&cat, q);
            let prep = m.prepare(q, &cat).unwrap();
            let pts: Vec<GeoPoint> = universe.iter().map(|e| e.location).collect();
            let batch = m.score_points(&prep, &pts).unwrap();
            for (e, s) in universe.iter().zip(&batch).step_by(7) {
                assert_eq!(m.score_candidate(q, e, &cat).unwrap(), *s);
            }
        }
    }
}

#[test]
fn ranking_is_a_permutation_with_id_ties() {
    let (cat, ds, m) = model(5, false);
    let q = &ds.test.questions[1];
    let universe = question_universe(&cat, q);
    let ranked = m.rank_universe(q, &universe, &cat).unwrap();
    let mut ids: Vec<&str> = ranked.iter().map(|r| r.entity_id.as_str()).collect();
    ids.sort_unstable();
    let mut expected: Vec<&str> = universe.iter().map(|e| e.id.as_str()).collect();
    expected.sort_unstable();
    assert_eq!(ids, expected);
    for w in ranked.windows(2) {
        assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].entity_id < w[1].entity_id));
    }

    let zero = zeroed(m);
    let ranked = zero.rank_universe(q, &universe, &cat).unwrap();
    assert!(ranked.windows(2).all(|w| w[0].entity_id < w[1].entity_id));
}

#[test]
fn universe_preconditions() {
    let (cat, ds, m) = model(6, false);
    let q = &ds.test.questions[0];
    assert!(matches!(m.rank_universe(q, &[], &cat), Err(Error::EmptyUniverse(_))));
    let mention = cat.entity(&q.mentions[0].entity_id).unwrap();
    assert!(m.rank_universe(q, &[mention], &cat).is_err());
}

#[test]
fn ablation_score_only_on_ablation_models() {
    let (cat, ds, full) = model(7, false);
    let (_, _, abl) = model(7, true);
    let q = &ds.test.questions[0];
    let c = question_universe(&cat, q)[0];
    assert!(full.ablation_score(q, c, &cat).is_err());
    assert_eq!(abl.ablation_score(q, c, &cat).unwrap(), abl.score_candidate(q, c, &cat).unwrap());
    assert!(abl.drl_weights(&[vec![0.0; 6]]).is_err());
}

#[test]
fn full_model_and_ablation_pass_gradient_check() {
    for kind in [ModelKind::Spnet, ModelKind::SpnetAblation] {
        let r = check_model_gradients(kind, 17, Faults::default()).unwrap();
        assert!(r.max_rel_err < 1e-3, "{kind}: {r:?}");
    }
}

#[test]
fn unseen_tokens_map_to_unk() {
    let (cat, ds, m) = model(8, false);
    let mut q = ds.test.questions[0].clone();
    q.tokens[0] = "zzzz-never-seen".into();
    let c = question_universe(&cat, &q)[0];
    assert!(m.score_candidate(&q, c, &cat).unwrap().is_finite());
}

#[test]
fn with_vocab_keeps_shared_rows() {
    let (cat, ds, m) = model(9, false);
    let mut tokens: Vec<String> = m.vocab.tokens().to_vec();
    tokens.push("serving".into());
    let bigger = m.with_vocab(Vocab::from_tokens(tokens).unwrap()).unwrap();
    for q in ds.test.questions.iter().take(5) {
        let c = question_universe(&cat, q)[0];
        assert_eq!(m.score_candidate(q, c, &cat).unwrap(), bigger.score_candidate(q, c, &cat).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn weights_strictly_inside_unit_interval(seed in 0u64..10_000, qi in 0usize..60) {
        let (cat, ds, m) = model(seed, false);
        let q = &ds.test.questions[qi];
        let prep = m.prepare(q, &cat).unwrap();
        for e in question_universe(&cat, q).iter().step_by(25) {
            let states = m.encode_point(&prep, e.location).unwrap();
            for w in m.drl_weights(&states).unwrap() {
                prop_assert!(w > -1.0 && w < 1.0);
            }
        }
    }

    #[test]
    fn coordinates_alone_determine_the_score(seed in 0u64..10_000, qi in 0usize..60, ablation in any::<bool>()) {
        let (cat, ds, m) = model(seed, ablation);
        let q = &ds.test.questions[qi];
        let c = question_universe(&cat, q)[0];
        let twin = Entity { id: format!("{}-twin", c.id), name: "Other Name".into(), ..c.clone() };
        prop_assert_eq!(m.score_candidate(q, c, &cat).unwrap(), m.score_candidate(q, &twin, &cat).unwrap());
    }
}
