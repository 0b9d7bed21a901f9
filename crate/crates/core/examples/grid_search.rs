//! Sweep λ and the learning rate on the bundled fixture and keep the
//! setting with the best dev objective.
//!
//! cargo run --release --example grid_search -- [epochs]

use std::collections::BTreeMap;
use std::path::PathBuf;

use convo_td::corpus::{preprocess, read_posts, read_word_list, PreprocessOptions};
use convo_td::model::ModelConfig;
use convo_td::trainer::{grid_search, Dataset, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map_or(Ok(10), |s| s.parse())?;
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let pre = preprocess(
        &read_posts(&fixtures.join("posts.jsonl"))?,
        &PreprocessOptions {
            min_count: 2,
            stop_list: read_word_list(&fixtures.join("stop_list.txt"))?,
            ..Default::default()
        },
    )?;
    let data = Dataset::from_preprocessed(&pre, false);
    let grid = BTreeMap::from([
        ("lambda".to_string(), vec![0.0, 0.01, 0.1]),
        ("learning_rate".to_string(), vec![1e-3, 5e-4]),
    ]);
    let result = grid_search(
        &data,
        &ModelConfig::new(5, 4, pre.vocab.len()),
        &TrainConfig {
            max_epochs: epochs,
            ..Default::default()
        },
        &grid,
    )?;
    result.write_table(std::io::stdout().lock())?;
    println!("selected {:?}", result.cells[result.best].settings);
    Ok(())
}
