//! Reply trees to training data: flatten a small thread into root-to-leaf
//! paths, then preprocess a post dump into vocabulary and splits.
//!
//! cargo run --example thread_preprocessing -- [posts.jsonl] [out-dir] [min-count]
//!
//! Without arguments the bundled fixture is used and nothing is written.

use std::path::PathBuf;

use convo_td::corpus::{build_trees, flatten_to_paths, preprocess, read_posts, read_word_list, PreprocessOptions, RawPost};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let thread = [
        RawPost::new("a", None, "anyone tried the new #rust release?"),
        RawPost::new("b", Some("a"), "yes, compile times are better"),
        RawPost::new("c", Some("a"), "not yet. worth it?"),
        RawPost::new("d", Some("c"), "definitely"),
    ];
    for tree in build_trees(&thread)? {
        for path in flatten_to_paths(&tree) {
            println!("path: {}", path.join(" -> "));
        }
    }

    let args: Vec<String> = std::env::args().skip(1).collect();
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let input = args.first().map_or_else(|| fixtures.join("posts.jsonl"), PathBuf::from);
    let options = PreprocessOptions {
        min_count: args.get(2).map_or(Ok(2), |s| s.parse())?,
        stop_list: read_word_list(&fixtures.join("stop_list.txt"))?,
        ..Default::default()
    };
    let pre = preprocess(&read_posts(&input)?, &options)?;
    println!(
        "{} words ({} stop); {} / {} / {} train/dev/test instances",
        pre.vocab.len(),
        pre.vocab.stop_flags().iter().filter(|s| **s).count(),
        pre.split.train.len(),
        pre.split.dev.len(),
        pre.split.test.len()
    );
    if let Some(out) = args.get(1) {
        pre.write_to(&PathBuf::from(out))?;
        println!("wrote {out}");
    }
    Ok(())
}
