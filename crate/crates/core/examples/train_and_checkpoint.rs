//! Train the topic/discourse model on the bundled fixture, save a
//! checkpoint, and load it back against the vocabulary it was trained on.
//!
//! cargo run --release --example train_and_checkpoint -- [epochs] [checkpoint]

use std::path::PathBuf;

use convo_td::checkpoint::{load_checkpoint_for, save_checkpoint};
use convo_td::corpus::{preprocess, read_posts, read_word_list, PreprocessOptions};
use convo_td::model::ModelConfig;
use convo_td::trainer::{train, Dataset, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().map_or(Ok(30), |s| s.parse())?;
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
    let model = ModelConfig::new(5, 4, pre.vocab.len());
    let (params, history) = train(
        &data,
        &model,
        &TrainConfig {
            max_epochs: epochs,
            ..Default::default()
        },
    )?;
    history.write_csv(std::io::stdout().lock())?;
    println!("best epoch {} of {}", history.best_epoch, history.epochs.len());

    let dir = tempfile::tempdir()?;
    let path = args.get(1).map_or_else(|| dir.path().join("model.ckpt"), PathBuf::from);
    let fingerprint = pre.vocab.fingerprint();
    save_checkpoint(&path, &params, &model, Some(&fingerprint))?;
    let back = load_checkpoint_for(&path, &model, Some(&fingerprint))?;
    println!(
        "{} parameters saved to {} and verified ({} bytes)",
        back.params.parameter_count(),
        path.display(),
        std::fs::metadata(&path)?.len()
    );
    Ok(())
}
