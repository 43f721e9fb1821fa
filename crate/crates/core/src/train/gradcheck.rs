use crate::autodiff::{grad_check, Faults, GradCheckReport, ParamStore, Tensor, DEFAULT_EPS};
use crate::datagen::{BioTag, ConstraintSign, Mention, QuestionInstance};
use crate::error::Result;
use crate::geo::{Catalog, Entity, GeoPoint, PoiType};
use crate::joint::{JointConfig, JointModel};
use crate::rng::derive_seed;
use crate::spatial::{SpNetConfig, SpatialModel, Vocab};
use crate::train::{ModelKind, JOINT_PREFIX, SPATIAL_PREFIX};

/// A five-token question with a two-token Near mention and a one-token Far
/// mention, plus three candidates, in a one-city catalog.
pub struct GradCheckFixture {
    pub catalog: Catalog,
    pub question: QuestionInstance,
    pub candidates: Vec<GeoPoint>,
}

impl GradCheckFixture {
    pub fn new() -> Result<Self> {
        let entity = |id: &str, name: &str, lat: f64, lon: f64| -> Result<Entity> {
            Ok(Entity {
                id: id.to_string(),
                name: name.to_string(),
                city_id: "c00".to_string(),
                poi_type: PoiType::R,
                location: GeoPoint::new(lat, lon)?,
            })
        };
        let catalog = Catalog::from_entities(
            vec![
                entity("c00-00000", "Pa Lo", 10.0, 20.0)?,
                entity("c00-00001", "Zo", 10.12, 20.05)?,
                entity("c00-00002", "Mira Cafe", 10.03, 20.01)?,
                entity("c00-00003", "Tavo Grill", 10.08, 19.96)?,
                entity("c00-00004", "Rena Bistro", 9.95, 20.1)?,
            ],
            None,
        )?;
        let question = QuestionInstance {
            qid: "gradcheck".into(),
            city_id: "c00".into(),
            poi_type: PoiType::R,
            template_id: 33,
            tokens: ["near", "pa", "lo", "far", "zo"].map(String::from).to_vec(),
            bio_tags: vec![BioTag::O, BioTag::B, BioTag::I, BioTag::O, BioTag::B],
            mentions: vec![
                Mention {
                    span: [1, 3],
                    entity_id: "c00-00000".into(),
                    sign: ConstraintSign::Near,
                },
                Mention {
                    span: [4, 5],
                    entity_id: "c00-00001".into(),
                    sign: ConstraintSign::Far,
                },
            ],
            gold_id: "c00-00002".into(),
            negatives: Vec::new(),
            keyword: None,
        };
        let candidates = ["c00-00002", "c00-00003", "c00-00004"]
            .iter()
            .map(|id| catalog.entity(id).map(|e| e.location))
            .collect::<Result<_>>()?;
        Ok(GradCheckFixture {
            catalog,
            question,
            candidates,
        })
    }
}

/// Weights of the scalar objective: a fixed signed combination of the
/// candidate scores, so every parameter that reaches a score is exercised.
const OBJECTIVE: [f64; 3] = [0.7, -1.1, 0.4];
const TEXT_SCORES: [f64; 3] = [0.5, -0.25, 0.0];

/// Finite-difference check of a freshly initialised tiny model of `kind`.
pub fn check_model_gradients(kind: ModelKind, seed: u64, faults: Faults) -> Result<GradCheckReport> {
    let fx = GradCheckFixture::new()?;
    let vocab = Vocab::build(std::slice::from_ref(&fx.question));
    let spatial = SpatialModel::new(
        SpNetConfig::tiny(),
        vocab,
        derive_seed(&[seed, 1]),
        kind == ModelKind::SpnetAblation,
    )?;
    let prep = spatial.prepare(&fx.question, &fx.catalog)?;
    let weights = Tensor::column(OBJECTIVE.to_vec());

    match kind {
        ModelKind::Spnet | ModelKind::SpnetAblation => grad_check(
            |tape, bound| {
                let s = spatial.score_on_tape(tape, bound, &prep, &fx.candidates)?;
                let w = tape.constant(weights.clone());
                tape.dot(s, w)
            },
            &spatial.params,
            DEFAULT_EPS,
            faults,
        ),
        ModelKind::Joint => {
            let joint = JointModel::new(JointConfig::tiny(), spatial, derive_seed(&[seed, 2]))?;
            let mut params = ParamStore::new();
            params.merge(joint.spatial.params.clone().prefixed(SPATIAL_PREFIX))?;
            params.merge(joint.params.clone().prefixed(JOINT_PREFIX))?;
            grad_check(
                |tape, bound| {
                    let vars = joint.score_on_tape(
                        tape,
                        &bound.strip(SPATIAL_PREFIX),
                        &bound.strip(JOINT_PREFIX),
                        &prep,
                        &fx.candidates,
                        &TEXT_SCORES,
                    )?;
                    let w = tape.constant(weights.clone());
                    tape.dot(vars.s, w)
                },
                &params,
                DEFAULT_EPS,
                faults,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_passes_and_the_mutation_is_caught() {
        for kind in ModelKind::ALL {
            let r = check_model_gradients(kind, 3, Faults::default()).unwrap();
            assert!(r.max_rel_err < 1e-3, "{kind}: {r:?}");
        }
        let bad = Faults {
            corrupt_tanh_backward: true,
        };
        let r = check_model_gradients(ModelKind::Spnet, 3, bad).unwrap();
        assert!(r.max_rel_err > 0.1, "{r:?}");
    }
}
