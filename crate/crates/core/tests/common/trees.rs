//! Random reply trees for property tests.

use std::collections::HashSet;

use convo_td::corpus::{build_trees, flatten_to_paths, RawPost};
use proptest::prelude::*;
use proptest::sample::Index;

/// Parent of node `i + 1` for every non-root node; node 0 is the root.
pub fn parent_vectors(max_nodes: usize) -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(any::<Index>(), 0..max_nodes)
        .prop_map(|picks| picks.iter().enumerate().map(|(i, p)| p.index(i + 1)).collect())
}

pub fn posts(parents: &[usize]) -> Vec<RawPost> {
    let mut out = vec![RawPost::new("n0", None, "root")];
    for (i, &p) in parents.iter().enumerate() {
        out.push(RawPost::new(format!("n{}", i + 1), Some(&format!("n{p}")), "reply"));
    }
    out
}

/// Paths from flattening must be exactly the root-to-leaf chains.
pub fn check_flattening(parents: &[usize]) -> Result<(), TestCaseError> {
    let n = parents.len() + 1;
    let trees = build_trees(&posts(parents)).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(trees.len(), 1);
    let paths = flatten_to_paths(&trees[0]);

    let has_child: HashSet<usize> = parents.iter().copied().collect();
    let leaves: HashSet<String> = (0..n).filter(|i| !has_child.contains(i)).map(|i| format!("n{i}")).collect();
    let ends: HashSet<String> = paths.iter().map(|p| p.last().unwrap().clone()).collect();
    prop_assert_eq!(paths.len(), leaves.len());
    prop_assert_eq!(&ends, &leaves);

    let id = |s: &str| s[1..].parse::<usize>().unwrap();
    let mut seen = HashSet::new();
    for path in &paths {
        prop_assert_eq!(path[0].as_str(), "n0");
        for pair in path.windows(2) {
            prop_assert_eq!(parents[id(&pair[1]) - 1], id(&pair[0]));
        }
        seen.extend(path.iter().cloned());
    }
    prop_assert_eq!(seen.len(), n);
    Ok(())
}
