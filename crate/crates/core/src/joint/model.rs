use serde::{Deserialize, Serialize};

use crate::autodiff::layers::{init_mlp, mlp};
use crate::autodiff::{sigmoid, Bound, ParamStore, Tape, Tensor, Var};
use crate::datagen::QuestionInstance;
use crate::error::{Error, Result};
use crate::geo::{Catalog, Entity, GeoPoint};
use crate::joint::lexical::TextualScorer;
use crate::rank::{rank_by_score, Ranked};
use crate::spatial::{check_same_shapes, encode, init_encoder, PreparedQuestion, SpatialModel, INFERENCE_CHUNK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointConfig {
    pub attn_dim: usize,
    pub head_hidden: usize,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            attn_dim: 32,
            head_hidden: 32,
        }
    }
}

impl JointConfig {
    pub fn tiny() -> Self {
        JointConfig {
            attn_dim: 3,
            head_hidden: 4,
        }
    }
}

/// `S = α·σ(w_T·S_T)·tanh(w_L·S_L) + β·σ(w_T·S_T)`.
pub fn joint_score(s_t: f64, s_l: f64, alpha: f64, beta: f64, w_t: f64, w_l: f64) -> f64 {
    let gate = sigmoid(s_t * w_t);
    alpha * gate * (s_l * w_l).tanh() + beta * gate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub s_t: f64,
    pub s_l: f64,
    pub alpha: f64,
    pub beta: f64,
    pub s: f64,
}

impl ScoreBreakdown {
    pub fn recompute(&self, w_t: f64, w_l: f64) -> f64 {
        joint_score(self.s_t, self.s_l, self.alpha, self.beta, w_t, w_l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedBreakdown {
    pub entity_id: String,
    #[serde(flatten)]
    pub scores: ScoreBreakdown,
}

/// Joint scoring layer on top of a spatial model and a textual scorer.
///
/// The combination weights come from a question encoder of the spatial
/// architecture with its own parameters. It sees no candidate distances, so
/// `α` and `β` are fixed per question.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub config: JointConfig,
    pub spatial: SpatialModel,
    pub params: ParamStore,
}

impl JointModel {
    pub fn new(config: JointConfig, spatial: SpatialModel, seed: u64) -> Result<Self> {
        if spatial.ablation {
            return Err(Error::Config("the joint model needs a spatial model with a DRL".into()));
        }
        if config.attn_dim == 0 || config.head_hidden == 0 {
            return Err(Error::Config("joint widths must be positive".into()));
        }
        let sc = &spatial.config;
        let mut params = ParamStore::new();
        init_encoder(&mut params, "", sc, spatial.vocab.len(), seed ^ 0x10)?;
        params.init_glorot("attn.w", &[sc.state_dim(), config.attn_dim], seed)?;
        params.init_glorot("attn.v", &[config.attn_dim, 1], seed)?;
        init_mlp(&mut params, "head", &[sc.state_dim(), config.head_hidden, 2], seed)?;
        params.insert("w_t", Tensor::scalar(1.0))?;
        params.insert("w_l", Tensor::scalar(1.0))?;
        Ok(JointModel {
            config,
            spatial,
            params,
        })
    }

    pub fn from_parts(config: JointConfig, spatial: SpatialModel, params: ParamStore) -> Result<Self> {
        let template = JointModel::new(config, spatial, 0)?;
        check_same_shapes(&template.params, &params)?;
        Ok(JointModel { params, ..template })
    }

    pub fn w_t(&self) -> f64 {
        self.params.get("w_t").ok().and_then(|t| t.item()).unwrap_or(f64::NAN)
    }

    pub fn w_l(&self) -> f64 {
        self.params.get("w_l").ok().and_then(|t| t.item()).unwrap_or(f64::NAN)
    }

    /// Records the additive attention pool over encoder states (`m x d`).
    /// Returns the pooled `1 x d` row and the `1 x m` attention weights.
    pub fn pool_on_tape(&self, tape: &mut Tape, bound: &Bound, states: Var) -> Result<(Var, Var)> {
        let w = bound.get("attn.w")?;
        let v = bound.get("attn.v")?;
        let proj = tape.matmul(states, w)?;
        let act = tape.tanh(proj);
        let e = tape.matmul(act, v)?;
        let e = tape.transpose(e);
        let a = tape.softmax_rows(e);
        let pooled = tape.matmul(a, states)?;
        Ok((pooled, a))
    }

    /// Records `[α, β]` as a `1 x 2` row for a prepared question.
    pub fn alpha_beta_on_tape(&self, tape: &mut Tape, bound: &Bound, prep: &PreparedQuestion) -> Result<Var> {
        let enc = encode(tape, bound, "", &self.spatial.config, prep, &[])?;
        let mut rows = Vec::with_capacity(prep.len());
        for i in 0..prep.len() {
            rows.push(enc.state(tape, i)?);
        }
        let states = tape.concat_rows(&rows)?;
        let (pooled, _) = self.pool_on_tape(tape, bound, states)?;
        mlp(tape, bound, "head", 2, pooled)
    }

    /// Attention pool of plain state rows: `(pooled, weights)`.
    pub fn attention_pool(&self, states: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        if states.is_empty() {
            return Err(Error::Config("attention_pool needs at least one state".into()));
        }
        let d = states[0].len();
        let flat: Vec<f64> = states.iter().flatten().copied().collect();
        let mut tape = Tape::new();
        let bound = self.params.bind_prefix(&mut tape, "attn.");
        let x = tape.constant(Tensor::new(vec![states.len(), d], flat)?);
        let (pooled, a) = self.pool_on_tape(&mut tape, &bound, x)?;
        Ok((tape.value(pooled).data().to_vec(), tape.value(a).data().to_vec()))
    }

    /// The `(α, β)` head applied to a pooled vector.
    pub fn alpha_beta(&self, pooled: &[f64]) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let bound = self.params.bind_prefix(&mut tape, "head.");
        let x = tape.constant(Tensor::new(vec![1, pooled.len()], pooled.to_vec())?);
        let out = mlp(&mut tape, &bound, "head", 2, x)?;
        let v = tape.value(out).data();
        Ok((v[0], v[1]))
    }

    /// Records joint scores (`n x 1`). `spatial` and `joint` are the bound
    /// parameters of the two parts; `s_t` holds one textual score per point.
    #[allow(clippy::too_many_arguments)]
    pub fn score_on_tape(
        &self,
        tape: &mut Tape,
        spatial: &Bound,
        joint: &Bound,
        prep: &PreparedQuestion,
        points: &[GeoPoint],
        s_t: &[f64],
    ) -> Result<JointVars> {
        let s_l = self.spatial.score_on_tape(tape, spatial, prep, points)?;
        let ab = self.alpha_beta_on_tape(tape, joint, prep)?;
        let alpha = tape.slice_cols(ab, 0..1)?;
        let beta = tape.slice_cols(ab, 1..2)?;
        let st = tape.constant(Tensor::column(s_t.to_vec()));
        let wt = joint.get("w_t")?;
        let wl = joint.get("w_l")?;
        let gate_in = tape.mul(st, wt)?;
        let gate = tape.sigmoid(gate_in);
        let sel_in = tape.mul(s_l, wl)?;
        let sel = tape.tanh(sel_in);
        let ag = tape.mul(alpha, gate)?;
        let first = tape.mul(ag, sel)?;
        let second = tape.mul(beta, gate)?;
        let s = tape.add(first, second)?;
        Ok(JointVars {
            s,
            s_l,
            alpha,
            beta,
        })
    }

    /// Full breakdowns for `universe`, in universe order.
    pub fn score_universe(
        &self,
        textual: &dyn TextualScorer,
        q: &QuestionInstance,
        universe: &[&Entity],
        catalog: &Catalog,
    ) -> Result<Vec<ScoreBreakdown>> {
        let prep = self.spatial.prepare(q, catalog)?;
        let mut out = Vec::with_capacity(universe.len());
        for chunk in universe.chunks(INFERENCE_CHUNK) {
            let points: Vec<GeoPoint> = chunk.iter().map(|e| e.location).collect();
            let s_t: Vec<f64> = chunk.iter().map(|e| textual.score_text(q, e)).collect();
            let mut tape = Tape::new();
            let sb = self.spatial.params.bind(&mut tape);
            let jb = self.params.bind(&mut tape);
            let vars = self.score_on_tape(&mut tape, &sb, &jb, &prep, &points, &s_t)?;
            let alpha = tape.value(vars.alpha).data()[0];
            let beta = tape.value(vars.beta).data()[0];
            for (i, st) in s_t.iter().enumerate() {
                out.push(ScoreBreakdown {
                    s_t: *st,
                    s_l: tape.value(vars.s_l).data()[i],
                    alpha,
                    beta,
                    s: tape.value(vars.s).data()[i],
                });
            }
        }
        Ok(out)
    }

    /// Ranks by joint score with the entity-id tie rule.
    pub fn joint_rank(
        &self,
        textual: &dyn TextualScorer,
        q: &QuestionInstance,
        universe: &[&Entity],
        catalog: &Catalog,
    ) -> Result<Vec<RankedBreakdown>> {
        if universe.is_empty() {
            return Err(Error::EmptyUniverse(q.qid.clone()));
        }
        let scores = self.score_universe(textual, q, universe, catalog)?;
        let ranked: Vec<Ranked> = rank_by_score(
            universe
                .iter()
                .zip(&scores)
                .map(|(e, b)| (e.id.clone(), b.s)),
        );
        let by_id: std::collections::HashMap<&str, &ScoreBreakdown> = universe
            .iter()
            .zip(&scores)
            .map(|(e, b)| (e.id.as_str(), b))
            .collect();
        Ok(ranked
            .into_iter()
            .map(|r| RankedBreakdown {
                scores: *by_id[r.entity_id.as_str()],
                entity_id: r.entity_id,
            })
            .collect())
    }
}

/// Tape handles produced by [`JointModel::score_on_tape`].
#[derive(Debug, Clone, Copy)]
pub struct JointVars {
    pub s: Var,
    pub s_l: Var,
    pub alpha: Var,
    pub beta: Var,
}
