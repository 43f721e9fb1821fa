//! Joint spatio-textual scoring.
//!
//! ```
//! use spatial_qa::joint::joint_score;
//!
//! // With no location mentions the spatial score is zero and only the
//! // textual gate remains.
//! let s = joint_score(0.3, 0.0, 5.0, 2.0, 1.0, 1.0);
//! assert_eq!(s, 2.0 * spatial_qa::autodiff::sigmoid(0.3));
//! ```

mod lexical;
mod model;

pub use lexical::{type_noun, LexicalScorer, TextualScorer};
pub use model::{joint_score, JointConfig, JointModel, JointVars, RankedBreakdown, ScoreBreakdown};
