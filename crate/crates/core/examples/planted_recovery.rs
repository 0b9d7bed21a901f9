//! Train on a planted corpus and check how well the true topic and role
//! word distributions come back.
//!
//! cargo run --release --example planted_recovery -- [seed] [lambda] [max_epochs]

use convo_td::eval::{align_clusters, mean_cross_jsd, purity, top_n_words};
use convo_td::model::{infer_batch, ModelConfig};
use convo_td::nn::argmax;
use convo_td::objectives::Batch;
use convo_td::synthetic::{PlantedConfig, PlantedCorpus};
use convo_td::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().map_or(Ok(0), |s| s.parse())?;
    let lambda: f64 = args.get(1).map_or(Ok(0.01), |s| s.parse())?;
    let epochs: usize = args.get(2).map_or(Ok(100), |s| s.parse())?;

    let corpus = PlantedCorpus::generate(&PlantedConfig::default())?;
    let split = corpus.split([0.8, 0.1, 0.1], 0)?;
    let data = corpus.dataset(&split);

    let mut model = ModelConfig::new(5, 4, corpus.vocab.len());
    model.lambda = lambda;
    let config = TrainConfig {
        seed,
        max_epochs: epochs,
        ..Default::default()
    };
    let started = std::time::Instant::now();
    let (params, history) = train(&data, &model, &config)?;
    println!(
        "trained {} epochs (best {}, dev objective {:.3}) in {:.1}s",
        history.epochs.len(),
        history.best_epoch,
        history.best().map_or(f64::NAN, |e| e.dev.total),
        started.elapsed().as_secs_f64()
    );

    let phi_t = params.topic_word_matrix();
    let phi_d = params.discourse_word_matrix();
    print!("{}", top_n_words(&phi_t, &corpus.vocab, 8, false)?.to_tsv());
    let topics = align_clusters(&phi_t, &corpus.topic_word_matrix(), 10)?;
    let roles = align_clusters(&phi_d, &corpus.role_word_matrix(), 10)?;
    println!("topic top-10 overlap {:.3} {:?}", topics.mean_overlap, topics.overlaps);
    println!("role top-10 overlap {:.3} {:?}", roles.mean_overlap, roles.overlaps);

    let test = corpus.examples(&split.test);
    let batch = Batch::from_examples(&test, corpus.vocab.len());
    let (_, pi) = infer_batch(&params, &batch.messages, &batch.contexts);
    let assigned: Vec<usize> = pi.rows().into_iter().map(|r| argmax(&r)).collect();
    println!("role purity {:.3}", purity(&assigned, &corpus.message_roles(&split.test))?);
    println!("mean topic/role JSD {:.4}", mean_cross_jsd(&phi_t, &phi_d));
    Ok(())
}
