//! Hashtag-proxy classification on a planted corpus: a linear classifier
//! on `[θ; π]` against raw bag-of-words, then a convolutional classifier
//! fed frozen features against one trained jointly with the topic model.
//!
//! The corpus is [`PlantedConfig::short_messages`]: each hashtag names the
//! dominant topic of a thread of two to four word messages.
//!
//! cargo run --release --example hashtag_classification -- [seed] [topic_epochs] [cnn_epochs]

use convo_td::downstream::{
    bow_features, build_hashtag_labels, extract_features_batch, holdout_split, joint_train, labeled_messages,
    train_classifier, CnnConfig, CnnTask, HashtagOptions, LinearConfig, TopicModel,
};
use convo_td::model::ModelConfig;
use convo_td::synthetic::{PlantedConfig, PlantedCorpus};
use convo_td::trainer::{train, Dataset, TrainConfig};
use ndarray::Array2;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: u64| -> Result<u64, std::num::ParseIntError> { args.get(i).map_or(Ok(default), |s| s.parse()) };
    let seed = arg(0, 0)?;
    let topic_epochs = arg(1, 100)? as usize;
    let cnn_epochs = arg(2, 2)? as usize;

    let corpus = PlantedCorpus::generate(&PlantedConfig::short_messages(seed))?;
    let posts = corpus.to_posts(true);
    let texts: Vec<&str> = posts.iter().map(|p| p.text.as_str()).collect();
    let labeled = build_hashtag_labels(&texts, &HashtagOptions::new(50));
    println!("{} classes over {} messages", labeled.labels.len(), labeled.items.len());

    let per_conv = corpus.config.messages_per_conversation;
    let classes = labeled.classes();
    let messages = labeled_messages(&corpus.instances, &corpus.vocab, false, |c, m| Some(classes[c * per_conv + m]));
    let groups: Vec<usize> = (0..messages.len()).map(|i| i / per_conv).collect();
    let split = holdout_split(messages.len(), 0.1, seed, Some(&groups))?;

    // The topic model never sees the held-out conversations.
    let dev = holdout_split(split.train.len(), 0.1, seed + 1, Some(&split.train.iter().map(|&i| groups[i]).collect::<Vec<_>>()))?;
    let data = Dataset {
        train: dev.train.iter().map(|&i| messages[split.train[i]].example.clone()).collect(),
        dev: dev.test.iter().map(|&i| messages[split.train[i]].example.clone()).collect(),
        stop_flags: corpus.vocab.stop_flags().to_vec(),
    };
    let model = ModelConfig::new(corpus.config.topics, corpus.config.roles, corpus.vocab.len());
    let (params, history) = train(
        &data,
        &model,
        &TrainConfig {
            seed,
            max_epochs: topic_epochs,
            batch_size: 16,
            patience: 20,
            ..Default::default()
        },
    )?;

    println!("topic model: {} epochs, best {}", history.epochs.len(), history.best_epoch);
    let examples: Vec<_> = messages.iter().map(|m| m.example.clone()).collect();
    let labels: Vec<usize> = messages.iter().map(|m| m.label).collect();
    let n_classes = labeled.labels.len();
    let report = |name: &str, x: &Array2<f64>| -> Result<(), Box<dyn std::error::Error>> {
        let (_, m) = train_classifier(x, &labels, n_classes, &split, &LinearConfig::default(), seed)?;
        println!("linear {name:<6} accuracy {:.3} macro-F1 {:.3}", m.accuracy, m.macro_f1);
        Ok(())
    };
    report("[θ;π]", &extract_features_batch(&examples, &params)?)?;
    report("bow", &bow_features(&examples, corpus.vocab.len()))?;

    let task = CnnTask {
        messages: &messages,
        classes: n_classes,
        vocab_size: corpus.vocab.len(),
        split: &split,
    };
    let topic = TopicModel {
        params: &params,
        config: &model,
        stop_flags: corpus.vocab.stop_flags(),
    };
    let cnn = CnnConfig {
        epochs: cnn_epochs,
        ..Default::default()
    };
    let started = std::time::Instant::now();
    let joint = joint_train(&task, topic, &cnn, seed)?;
    for run in [&joint.separate, &joint.joint] {
        println!(
            "cnn {:<8?} accuracy {:.3} macro-F1 {:.3} (train loss {:.3?})",
            run.mode, run.metrics.accuracy, run.metrics.macro_f1, run.train_loss
        );
    }
    println!("cnn runs took {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
