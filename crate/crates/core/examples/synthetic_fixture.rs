//! Write a planted corpus as a post dump (JSON lines) that the command
//! line tool can consume: reply chains, dialogue-act labels `act{r}`, and
//! a `#topic{k}` hashtag per post. Some posts spell the hashtag as the
//! alias `#t{k}` and some carry a non-topical `#fb`, so a merge map and a
//! block list have something to do.
//!
//! cargo run --release --example synthetic_fixture -- <out-dir> [conversations] [seed]

use std::fs;
use std::path::PathBuf;

use convo_td::corpus::write_jsonl;
use convo_td::synthetic::{PlantedConfig, PlantedCorpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().ok_or("usage: synthetic_fixture <out-dir> [conversations] [seed]")?);
    let conversations: usize = args.next().map_or(Ok(300), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(7), |s| s.parse())?;

    let config = PlantedConfig {
        conversations,
        vocab_size: 120,
        seed,
        ..Default::default()
    };
    let corpus = PlantedCorpus::generate(&config)?;
    let mut posts = corpus.to_posts(true);
    for (i, post) in posts.iter_mut().enumerate() {
        if i % 5 == 0 {
            post.text = post.text.replace("#topic", "#t");
        }
        if i % 7 == 0 {
            post.text.push_str(" #fb");
        }
    }
    fs::create_dir_all(&out)?;
    write_jsonl(&out.join("posts.jsonl"), &posts)?;

    let merge: String = (0..config.topics).map(|k| format!("#t{k} #topic{k}\n")).collect();
    fs::write(out.join("merge_map.txt"), merge)?;
    fs::write(out.join("block_list.txt"), "#fb\n")?;
    let stop: String = (0..config.roles)
        .flat_map(|r| (0..config.block).map(move |j| format!("{}\n", convo_td::synthetic::role_word(r, j))))
        .collect();
    fs::write(out.join("stop_list.txt"), stop)?;
    fs::write(
        out.join("fixture.conf"),
        "# settings sized for the bundled fixture\nmin-count = 2\ntopics = 5\ndiscourse = 4\nepochs = 30\ntop-k = 10\ncnn-epochs = 2\nembedding-dim = 32\nfeature-maps = 16\n",
    )?;
    println!("wrote {} posts to {}", posts.len(), out.display());
    Ok(())
}
