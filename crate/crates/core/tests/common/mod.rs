#![allow(dead_code)]

use spatial_qa::datagen::{generate_dataset, Dataset, DatasetConfig, QuestionInstance, QuestionOptions};
use spatial_qa::geo::{generate_catalog, Catalog, CatalogConfig};

/// A few small cities and a few hundred questions: enough structure for
/// behavioural checks while keeping every test fast.
pub fn small_world() -> (Catalog, Dataset) {
    let catalog = generate_catalog(&CatalogConfig {
        n_cities: 6,
        min_size: 40,
        max_size: 400,
        seed: 21,
    })
    .unwrap();
    let ds = generate_dataset(
        &catalog,
        &DatasetConfig {
            sizes: [240, 60, 60],
            seed: 5,
            question: QuestionOptions {
                negatives: 60,
                ..QuestionOptions::default()
            },
        },
    )
    .unwrap();
    (catalog, ds)
}

pub fn hybrid_world() -> (Catalog, Dataset) {
    let (catalog, _) = small_world();
    let ds = generate_dataset(
        &catalog,
        &DatasetConfig {
            sizes: [120, 40, 40],
            seed: 6,
            question: QuestionOptions {
                hybrid: true,
                negatives: 60,
                ..QuestionOptions::default()
            },
        },
    )
    .unwrap();
    (catalog, ds)
}

/// The same question with every location tag removed.
pub fn untagged(q: &QuestionInstance) -> QuestionInstance {
    let mut q = q.clone();
    q.mentions.clear();
    q.bio_tags = vec![spatial_qa::datagen::BioTag::O; q.tokens.len()];
    q
}
