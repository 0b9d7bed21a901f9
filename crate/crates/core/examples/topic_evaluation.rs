//! Evaluate a model trained on a planted corpus: top words, NPMI
//! coherence against the corpus itself, and how well the induced
//! discourse roles match the planted ones.
//!
//! cargo run --release --example topic_evaluation -- [epochs]

use convo_td::eval::{alignment_matrix, cluster_scores, npmi_coherence, top_n_words};
use convo_td::model::{infer_batch, ModelConfig};
use convo_td::nn::argmax;
use convo_td::objectives::Batch;
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

    let topics = top_n_words(&params.topic_word_matrix(), &corpus.vocab, 10, true)?;
    let roles = top_n_words(&params.discourse_word_matrix(), &corpus.vocab, 10, false)?;
    print!("topics\n{}roles\n{}", topics.to_tsv(), roles.to_tsv());

    let documents: Vec<&Vec<String>> = corpus.instances.iter().flat_map(|i| &i.messages).collect();
    let documents: Vec<Vec<String>> = documents.into_iter().cloned().collect();
    for n in [5, 10] {
        let lists: Vec<Vec<String>> = topics.word_lists().into_iter().map(|w| w[..n].to_vec()).collect();
        let coherence = npmi_coherence(&lists, &documents, 10)?;
        println!("NPMI coherence top-{n}: {:.3}", coherence.mean.unwrap_or(f64::NAN));
    }

    let test = corpus.examples(&split.test);
    let batch = Batch::from_examples(&test, corpus.vocab.len());
    let (_, pi) = infer_batch(&params, &batch.messages, &batch.contexts);
    let assigned: Vec<usize> = pi.rows().into_iter().map(|r| argmax(&r)).collect();
    let planted: Vec<String> = corpus.message_roles(&split.test).iter().map(|r| format!("act{r}")).collect();
    let scores = cluster_scores(&assigned, &planted)?;
    println!(
        "roles vs planted acts: purity {:.3}, homogeneity {:.3}, VI {:.3}",
        scores.purity, scores.homogeneity, scores.vi
    );
    print!("{}", alignment_matrix(&assigned, &planted, model.roles, &[])?.to_csv());
    Ok(())
}
