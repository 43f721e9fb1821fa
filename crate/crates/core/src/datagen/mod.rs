//! Template-driven generator for the artificial spatial-questions dataset.

mod generate;
mod io;
mod question;
mod stats;
pub mod templates;

pub use generate::{
    entity_keyword, generate_dataset, generate_question, gold_score, hard_region_size,
    question_universe, sample_negatives, Dataset, DatasetConfig, DatasetSplit, QuestionOptions,
    SplitName, GOLD_TIE_EPS, HARD_QUANTILE, KEYWORDS,
};
pub use io::{load_split, read_split, save_split, write_split};
pub use question::{check_bio, tokenize, BioTag, Hardness, Mention, Negative, QuestionInstance};
pub use stats::{dataset_stats, size_bucket, Count, DatasetStats, SplitStats, SIZE_BUCKETS};
pub use templates::{
    metonym, metonyms, template, template_bank, ConstraintSign, TemplateCategory, TemplateSpec,
};
