use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::extract_hashtags;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HashtagOptions {
    /// Hashtag → canonical hashtag, both lowercase with `#`.
    pub merge_map: HashMap<String, String>,
    /// Non-topical hashtags to ignore (after merging).
    pub block_list: HashSet<String>,
    pub top_k: usize,
}

impl HashtagOptions {
    pub fn new(top_k: usize) -> Self {
        Self {
            top_k,
            ..Default::default()
        }
    }
}

/// Messages labeled with a dense class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedCorpus {
    /// Class id → hashtag, most frequent first.
    pub labels: Vec<String>,
    /// `(message index in the input, class id)` for retained messages.
    pub items: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

impl ClassifiedCorpus {
    pub fn indices(&self) -> Vec<usize> {
        self.items.iter().map(|&(i, _)| i).collect()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.items.iter().map(|&(_, c)| c).collect()
    }
}

fn normalize(tag: &str) -> String {
    let lower = tag.to_lowercase();
    if lower.starts_with('#') {
        lower
    } else {
        format!("#{lower}")
    }
}

/// Label raw message texts by hashtag.
///
/// Hashtags are merged, block-listed tags dropped, and the `top_k` tags
/// occurring in the most messages kept (ties lexicographic). A message
/// takes its most frequent retained tag; messages without one are dropped.
pub fn build_hashtag_labels<S: AsRef<str>>(texts: &[S], options: &HashtagOptions) -> ClassifiedCorpus {
    let merge: HashMap<String, String> = options
        .merge_map
        .iter()
        .map(|(k, v)| (normalize(k), normalize(v)))
        .collect();
    let blocked: HashSet<String> = options.block_list.iter().map(|t| normalize(t)).collect();

    let tags_per_message: Vec<Vec<String>> = texts
        .iter()
        .map(|t| {
            let mut tags: Vec<String> = extract_hashtags(t.as_ref())
                .into_iter()
                .map(|tag| merge.get(&tag).cloned().unwrap_or(tag))
                .filter(|tag| !blocked.contains(tag))
                .collect();
            tags.sort();
            tags.dedup();
            tags
        })
        .collect();

    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for tags in &tags_per_message {
        for tag in tags {
            *freq.entry(tag.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let mut warnings = Vec::new();
    if ranked.len() < options.top_k {
        warnings.push(format!(
            "only {} distinct hashtags, fewer than top_k = {}; keeping all",
            ranked.len(),
            options.top_k
        ));
    }
    ranked.truncate(options.top_k);
    let class_of: HashMap<&str, usize> = ranked.iter().enumerate().map(|(i, (t, _))| (*t, i)).collect();

    let items = tags_per_message
        .iter()
        .enumerate()
        .filter_map(|(i, tags)| {
            // Lower class id means more frequent, then lexicographically first.
            tags.iter().filter_map(|t| class_of.get(t.as_str()).copied()).min().map(|c| (i, c))
        })
        .collect();
    ClassifiedCorpus {
        labels: ranked.into_iter().map(|(t, _)| t.to_string()).collect(),
        items,
        warnings,
    }
}
