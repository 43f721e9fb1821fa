//! The learned spatial reasoner.
//!
//! Each question token is encoded as its embedding, a B/I/O one-hot and the
//! candidate's scaled distance to the mention the token belongs to (zero
//! outside mentions). A bidirectional GRU reads the sequence; a position-wise
//! feed-forward stack turns each state into a weight `w_i = tanh(r_i)` and the
//! score is `Σ w_i d'_i` over mention starts.
//!
//! All candidates of one question are scored as rows of a single batch. Tokens
//! before the first mention do not depend on the candidate and are computed
//! once.

mod model;
mod vocab;

pub use model::{spatial_score, PreparedMention, PreparedQuestion, SpNetConfig, SpatialModel, INFERENCE_CHUNK};
pub(crate) use model::{check_same_shapes, encode, init_encoder};
pub use vocab::{Vocab, UNK};
