use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autodiff::layers::{init_gru, init_mlp, mlp, Gru};
use crate::autodiff::{Bound, ParamStore, Tape, Tensor, Var};
use crate::datagen::{BioTag, QuestionInstance};
use crate::error::{Error, Result};
use crate::geo::{manhattan_km, Catalog, Entity, GeoPoint};
use crate::rank::{rank_by_score, Ranked};
use crate::spatial::vocab::Vocab;

/// Candidates scored per tape during inference.
pub const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpNetConfig {
    pub emb_dim: usize,
    pub gru_hidden: usize,
    /// Output widths of the distance-reasoning blocks, also used by the
    /// no-DRL head; the last must be 1.
    pub drl_dims: Vec<usize>,
    /// Multiplier from kilometers to model input units.
    pub dist_scale: f64,
}

impl Default for SpNetConfig {
    fn default() -> Self {
        SpNetConfig {
            emb_dim: 50,
            gru_hidden: 32,
            drl_dims: vec![64, 32, 1],
            dist_scale: 0.1,
        }
    }
}

impl SpNetConfig {
    /// Small dimensions for gradient checks.
    pub fn tiny() -> Self {
        SpNetConfig {
            emb_dim: 4,
            gru_hidden: 3,
            drl_dims: vec![5, 4, 1],
            dist_scale: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.gru_hidden == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.drl_dims.last() != Some(&1) || self.drl_dims.contains(&0) {
            return Err(Error::Config(format!(
                "drl_dims must be positive and end in 1, got {:?}",
                self.drl_dims
            )));
        }
        if !(self.dist_scale.is_finite() && self.dist_scale > 0.0) {
            return Err(Error::Config(format!(
                "dist_scale must be positive, got {}",
                self.dist_scale
            )));
        }
        Ok(())
    }

    /// Per-token input width: embedding, BIO one-hot and distance.
    pub fn input_dim(&self) -> usize {
        self.emb_dim + 4
    }

    pub fn state_dim(&self) -> usize {
        2 * self.gru_hidden
    }
}

/// Adds the embedding and both GRU directions under `prefix`.
pub(crate) fn init_encoder(
    store: &mut ParamStore,
    prefix: &str,
    config: &SpNetConfig,
    vocab_len: usize,
    seed: u64,
) -> Result<()> {
    store.init_glorot(&format!("{prefix}emb"), &[vocab_len, config.emb_dim], seed)?;
    for dir in ["fwd", "bwd"] {
        init_gru(
            store,
            &format!("{prefix}enc.{dir}"),
            config.input_dim(),
            config.gru_hidden,
            seed,
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedMention {
    pub entity_id: String,
    pub tokens: Range<usize>,
    pub point: GeoPoint,
}

/// The candidate-independent part of a question.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedQuestion {
    pub token_ids: Vec<usize>,
    pub bio: Vec<BioTag>,
    pub mentions: Vec<PreparedMention>,
    /// Mention covering each token, if any.
    pub token_mention: Vec<Option<usize>>,
}

impl PreparedQuestion {
    pub fn new(vocab: &Vocab, q: &QuestionInstance, catalog: &Catalog) -> Result<Self> {
        if q.tokens.is_empty() {
            return Err(Error::schema(format!("question {}", q.qid), "tokens", "empty"));
        }
        let mut token_mention = vec![None; q.tokens.len()];
        let mut mentions = Vec::with_capacity(q.mentions.len());
        for (j, m) in q.mentions.iter().enumerate() {
            let [s, e] = m.span;
            for slot in &mut token_mention[s..e] {
                *slot = Some(j);
            }
            mentions.push(PreparedMention {
                entity_id: m.entity_id.clone(),
                tokens: s..e,
                point: catalog.entity(&m.entity_id)?.location,
            });
        }
        Ok(PreparedQuestion {
            token_ids: q.tokens.iter().map(|t| vocab.id(t)).collect(),
            bio: q.bio_tags.clone(),
            mentions,
            token_mention,
        })
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Scaled distance columns, one per mention, each `n x 1`.
    pub fn distance_columns(&self, points: &[GeoPoint], scale: f64) -> Vec<Tensor> {
        self.mentions
            .iter()
            .map(|m| {
                Tensor::column(
                    points
                        .iter()
                        .map(|p| scale * manhattan_km(p, &m.point))
                        .collect(),
                )
            })
            .collect()
    }

    fn bio_tensor(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.len(), 3]);
        for (i, tag) in self.bio.iter().enumerate() {
            t.data_mut()[i * 3 + tag.one_hot_index()] = 1.0;
        }
        t
    }
}

/// Per-position encoder states. Positions before any candidate-dependent
/// input hold a single row shared by every candidate.
pub(crate) struct Encoded {
    pub fwd: Vec<Var>,
    pub bwd: Vec<Var>,
}

impl Encoded {
    /// `q_i = [h_fwd_i ; h_bwd_i]`, broadcast to a common row count.
    pub fn state(&self, tape: &mut Tape, i: usize) -> Result<Var> {
        let (f, b) = (self.fwd[i], self.bwd[i]);
        let (rf, rb) = (tape.value(f).rows(), tape.value(b).rows());
        let f = if rf < rb { tape.broadcast_rows(f, rb)? } else { f };
        let b = if rb < rf { tape.broadcast_rows(b, rf)? } else { b };
        tape.concat_cols(&[f, b])
    }
}

/// Runs the bidirectional encoder. `dists` holds one `n x 1` column per
/// mention; pass an empty slice for a candidate-free encoding.
pub(crate) fn encode(
    tape: &mut Tape,
    bound: &Bound,
    prefix: &str,
    config: &SpNetConfig,
    prep: &PreparedQuestion,
    dists: &[Var],
) -> Result<Encoded> {
    let e = config.emb_dim;
    let emb = bound.get(&format!("{prefix}emb"))?;
    let words = tape.gather_rows(emb, &prep.token_ids)?;
    let bio = tape.constant(prep.bio_tensor());
    let base_in = tape.concat_cols(&[words, bio])?;

    let mut out = Encoded { fwd: vec![], bwd: vec![] };
    for dir in ["fwd", "bwd"] {
        let gru = Gru::bind(tape, bound, &format!("{prefix}enc.{dir}"))?;
        let w_base = tape.slice_rows(gru.w, 0..e + 3)?;
        let w_dist = tape.slice_rows(gru.w, e + 3..e + 4)?;
        let base = tape.matmul(base_in, w_base)?;
        let base = tape.add(base, gru.b)?;
        let dist_proj = dists
            .iter()
            .map(|d| tape.matmul(*d, w_dist))
            .collect::<Result<Vec<_>>>()?;

        let m = prep.len();
        let order: Vec<usize> = if dir == "fwd" {
            (0..m).collect()
        } else {
            (0..m).rev().collect()
        };
        let mut h = tape.constant(Tensor::zeros(&[1, config.gru_hidden]));
        let mut states = vec![h; m];
        for i in order {
            let mut xp = tape.slice_rows(base, i..i + 1)?;
            if let (Some(j), false) = (prep.token_mention[i], dist_proj.is_empty()) {
                xp = tape.add(dist_proj[j], xp)?;
            }
            h = gru.step_projected(tape, xp, h)?;
            states[i] = h;
        }
        if dir == "fwd" {
            out.fwd = states;
        } else {
            out.bwd = states;
        }
    }
    Ok(out)
}

/// `S_L = Σ w_i d'_i` over the positions of `d'`.
pub fn spatial_score(w: &[f64], d: &[f64]) -> f64 {
    w.iter().zip(d).map(|(a, b)| a * b).sum()
}

/// The learned spatial reasoner, or its no-DRL ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialModel {
    pub config: SpNetConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub ablation: bool,
}

impl SpatialModel {
    pub fn new(config: SpNetConfig, vocab: Vocab, seed: u64, ablation: bool) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        init_encoder(&mut params, "", &config, vocab.len(), seed)?;
        let mut dims = vec![config.state_dim()];
        dims.extend(&config.drl_dims);
        init_mlp(&mut params, if ablation { "abl" } else { "drl" }, &dims, seed)?;
        Ok(SpatialModel {
            config,
            vocab,
            params,
            ablation,
        })
    }

    /// Checks that `params` has exactly the shapes this configuration implies.
    pub fn from_parts(config: SpNetConfig, vocab: Vocab, params: ParamStore, ablation: bool) -> Result<Self> {
        let template = SpatialModel::new(config, vocab, 0, ablation)?;
        check_same_shapes(&template.params, &params)?;
        Ok(SpatialModel { params, ..template })
    }

    pub fn prepare(&self, q: &QuestionInstance, catalog: &Catalog) -> Result<PreparedQuestion> {
        PreparedQuestion::new(&self.vocab, q, catalog)
    }

    /// Records scores for every point in `points` as an `n x 1` column.
    pub fn score_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        prep: &PreparedQuestion,
        points: &[GeoPoint],
    ) -> Result<Var> {
        let n = points.len();
        let dists: Vec<Var> = prep
            .distance_columns(points, self.config.dist_scale)
            .into_iter()
            .map(|t| tape.constant(t))
            .collect();
        let enc = encode(tape, bound, "", &self.config, prep, &dists)?;

        if self.ablation {
            let last = prep.len() - 1;
            let f = enc.fwd[last];
            let b = enc.bwd[0];
            let fin = Encoded { fwd: vec![f], bwd: vec![b] }.state(tape, 0)?;
            let out = mlp(tape, bound, "abl", self.config.drl_dims.len(), fin)?;
            return if tape.value(out).rows() == n {
                Ok(out)
            } else {
                tape.broadcast_rows(out, n)
            };
        }

        if prep.mentions.is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[n, 1])));
        }
        let layers = self.config.drl_dims.len();
        let mut total: Option<Var> = None;
        for (j, m) in prep.mentions.iter().enumerate() {
            let q = enc.state(tape, m.tokens.start)?;
            let r = mlp(tape, bound, "drl", layers, q)?;
            let w = tape.tanh(r);
            let c = tape.mul(w, dists[j])?;
            total = Some(match total {
                None => c,
                Some(t) => tape.add(t, c)?,
            });
        }
        Ok(total.expect("at least one mention"))
    }

    /// Scores every point, batching candidates in chunks.
    pub fn score_points(&self, prep: &PreparedQuestion, points: &[GeoPoint]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape);
            let s = self.score_on_tape(&mut tape, &bound, prep, chunk)?;
            out.extend_from_slice(tape.value(s).data());
        }
        Ok(out)
    }

    pub fn score_candidate(&self, q: &QuestionInstance, candidate: &Entity, catalog: &Catalog) -> Result<f64> {
        let prep = self.prepare(q, catalog)?;
        Ok(self.score_points(&prep, &[candidate.location])?[0])
    }

    /// Ranks `universe`, which must not contain mention entities.
    pub fn rank_universe(&self, q: &QuestionInstance, universe: &[&Entity], catalog: &Catalog) -> Result<Vec<Ranked>> {
        if universe.is_empty() {
            return Err(Error::EmptyUniverse(q.qid.clone()));
        }
        if let Some(e) = universe.iter().find(|e| q.is_mention(&e.id)) {
            return Err(Error::Config(format!(
                "question {}: mention entity {} in the ranking universe",
                q.qid, e.id
            )));
        }
        let prep = self.prepare(q, catalog)?;
        let points: Vec<GeoPoint> = universe.iter().map(|e| e.location).collect();
        let scores = self.score_points(&prep, &points)?;
        Ok(rank_by_score(
            universe.iter().map(|e| e.id.clone()).zip(scores),
        ))
    }

    /// Encoder states `q_0..q_m` for one candidate, each of width `2 * gru_hidden`.
    pub fn encode_question(&self, q: &QuestionInstance, candidate: &Entity, catalog: &Catalog) -> Result<Vec<Vec<f64>>> {
        let prep = self.prepare(q, catalog)?;
        self.encode_point(&prep, candidate.location)
    }

    pub fn encode_point(&self, prep: &PreparedQuestion, point: GeoPoint) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let dists: Vec<Var> = prep
            .distance_columns(&[point], self.config.dist_scale)
            .into_iter()
            .map(|t| tape.constant(t))
            .collect();
        let enc = encode(&mut tape, &bound, "", &self.config, prep, &dists)?;
        let mut out = Vec::with_capacity(prep.len());
        for i in 0..prep.len() {
            let q = enc.state(&mut tape, i)?;
            out.push(tape.value(q).data().to_vec());
        }
        Ok(out)
    }

    /// Distance weights `w_i = tanh(r_i)` for every position.
    pub fn drl_weights(&self, states: &[Vec<f64>]) -> Result<Vec<f64>> {
        if self.ablation {
            return Err(Error::Config("the ablation model has no distance weights".into()));
        }
        if states.is_empty() {
            return Err(Error::Config("drl_weights needs at least one state".into()));
        }
        let width = self.config.state_dim();
        let mut flat = Vec::with_capacity(states.len() * width);
        for s in states {
            if s.len() != width {
                return Err(Error::Shape {
                    op: "drl_weights",
                    lhs: vec![width],
                    rhs: vec![s.len()],
                });
            }
            flat.extend_from_slice(s);
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_prefix(&mut tape, "drl.");
        let x = tape.constant(Tensor::new(vec![states.len(), width], flat)?);
        let r = mlp(&mut tape, &bound, "drl", self.config.drl_dims.len(), x)?;
        let w = tape.tanh(r);
        Ok(tape.value(w).data().to_vec())
    }

    /// Distance weight at each mention's first token, for one candidate.
    pub fn mention_weights(&self, prep: &PreparedQuestion, point: GeoPoint) -> Result<Vec<f64>> {
        let states = self.encode_point(prep, point)?;
        let all = self.drl_weights(&states)?;
        Ok(prep.mentions.iter().map(|m| all[m.tokens.start]).collect())
    }

    /// Same model over another vocabulary. Shared tokens keep their embedding
    /// rows; new tokens start from the UNK row.
    pub fn with_vocab(&self, vocab: Vocab) -> Result<SpatialModel> {
        let old = self.params.get("emb")?;
        let e = self.config.emb_dim;
        let mut data = Vec::with_capacity(vocab.len() * e);
        for t in vocab.tokens() {
            let row = self.vocab.id(t);
            data.extend_from_slice(&old.data()[row * e..(row + 1) * e]);
        }
        let mut params = self.params.clone();
        *params.get_mut("emb")? = Tensor::new(vec![vocab.len(), e], data)?;
        Ok(SpatialModel {
            config: self.config.clone(),
            vocab,
            params,
            ablation: self.ablation,
        })
    }

    /// Score of the no-DRL head; errors on a full model.
    pub fn ablation_score(&self, q: &QuestionInstance, candidate: &Entity, catalog: &Catalog) -> Result<f64> {
        if !self.ablation {
            return Err(Error::Config("not an ablation model".into()));
        }
        self.score_candidate(q, candidate, catalog)
    }
}

pub(crate) fn check_same_shapes(expected: &ParamStore, actual: &ParamStore) -> Result<()> {
    for (name, t) in expected.iter() {
        let got = actual
            .get(name)
            .map_err(|_| Error::Checkpoint(format!("missing parameter {name}")))?;
        if got.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                got.shape(),
                t.shape()
            )));
        }
    }
    if let Some(extra) = actual.names().find(|n| !expected.contains(n)) {
        return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
    }
    Ok(())
}
