//! Tag every word of a few messages as topic or discourse, by comparing
//! its probability under the message's topic mixture and its role.
//!
//! cargo run --release --example word_attribution -- [epochs]

use convo_td::eval::{word_attribution, Tag};
use convo_td::model::ModelConfig;
use convo_td::synthetic::{PlantedConfig, PlantedCorpus};
use convo_td::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map_or(Ok(100), |s| s.parse())?;
    let corpus = PlantedCorpus::generate(&PlantedConfig::default())?;
    let split = corpus.split([0.8, 0.1, 0.1], 0)?;
    let model = ModelConfig::new(5, 4, corpus.vocab.len());
    let (params, _) = train(
        &corpus.dataset(&split),
        &model,
        &TrainConfig {
            max_epochs: epochs,
            ..Default::default()
        },
    )?;

    // Agreement and count for topic-block and role-block words.
    let mut agree = [0usize; 2];
    let mut total = [0usize; 2];
    for &c in &split.test {
        let instance = &corpus.instances[c];
        for (tokens, example) in instance.messages.iter().zip(corpus.examples(&[c])) {
            let inferred = params.infer(&example.message, &example.context)?;
            let tags = word_attribution(tokens, &corpus.vocab, &inferred.theta.view(), &inferred.d_hard.view(), &params, model.stop_penalty);
            for t in &tags {
                let (block, planted) = if t.word.starts_with("role") {
                    (1, Tag::Discourse)
                } else if t.word.starts_with("topic") {
                    (0, Tag::Topic)
                } else {
                    continue;
                };
                agree[block] += usize::from(t.tag == planted);
                total[block] += 1;
            }
            if c == split.test[0] {
                let line: Vec<String> = tags.iter().map(|t| format!("{}/{:?}", t.word, t.tag)).collect();
                println!("{}", line.join(" "));
            }
        }
    }
    for (block, name) in ["topic", "role"].iter().enumerate() {
        println!("{name} words tagged as planted: {:.1}% of {}", 100.0 * agree[block] as f64 / total[block] as f64, total[block]);
    }
    Ok(())
}
