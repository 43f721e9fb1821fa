//! Small end-to-end run: catalog, questions, a short SpNet training, and a
//! comparison against the sort-by-distance baseline.
//!
//! `cargo run --release -p spatial-qa --example pipeline`

use spatial_qa::datagen::{generate_dataset, DatasetConfig, QuestionOptions};
use spatial_qa::eval::{evaluate, SortByDistance};
use spatial_qa::geo::{generate_catalog, CatalogConfig};
use spatial_qa::spatial::{SpNetConfig, SpatialModel, Vocab};
use spatial_qa::train::{train, Model, TrainConfig};

fn main() -> spatial_qa::Result<()> {
    let catalog = generate_catalog(&CatalogConfig {
        n_cities: 8,
        min_size: 50,
        max_size: 800,
        seed: 7,
    })?;
    let data = generate_dataset(
        &catalog,
        &DatasetConfig {
            sizes: [1200, 200, 200],
            seed: 13,
            question: QuestionOptions {
                negatives: 100,
                ..QuestionOptions::default()
            },
        },
    )?;
    println!("{} entities, {} training questions", catalog.len(), data.train.questions.len());

    let vocab = Vocab::build(&data.train.questions);
    let model = Model::Spatial(SpatialModel::new(SpNetConfig::default(), vocab, 1, false)?);
    let config = TrainConfig {
        epochs: 4,
        dev_limit: None,
        ..TrainConfig::default()
    };
    let outcome = train(model, &data.train.questions, &data.dev.questions, &catalog, &config)?;
    for r in &outcome.history {
        println!("epoch {}: dev acc@3 {:.3}", r.epoch, r.dev_acc3);
    }

    let spnet = evaluate(&outcome.model, &data.test.questions, &catalog)?;
    let sd = evaluate(&SortByDistance, &data.test.questions, &catalog)?;
    println!("test acc@3: spnet {:.3}, sort-by-distance {:.3}", spnet.acc3, sd.acc3);
    print!("{}", spnet.to_table());
    Ok(())
}
