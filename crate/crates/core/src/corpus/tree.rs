use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// One post as read from a thread dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    #[serde(default)]
    pub parent_id: Option<String>,
    #[serde(default)]
    pub text: String,
    /// Dialogue act or class label; only used for evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl RawPost {
    pub fn new(id: impl Into<String>, parent_id: Option<&str>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            parent_id: parent_id.map(str::to_owned),
            text: text.into(),
            label: None,
        }
    }
}

/// A reply tree rooted at a single post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationTree {
    pub root: String,
    /// Children of each node in input order. Leaves have no entry.
    pub children: BTreeMap<String, Vec<String>>,
}

impl ConversationTree {
    pub fn single(root: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            children: BTreeMap::new(),
        }
    }

    pub fn children_of(&self, id: &str) -> &[String] {
        self.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All node ids in depth-first pre-order.
    pub fn nodes(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![self.root.clone()];
        while let Some(id) = stack.pop() {
            for child in self.children_of(&id).iter().rev() {
                stack.push(child.clone());
            }
            out.push(id);
        }
        out
    }

    pub fn leaves(&self) -> Vec<String> {
        self.nodes()
            .into_iter()
            .filter(|id| self.children_of(id).is_empty())
            .collect()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.values().map(Vec::len).sum::<usize>()
    }
}

/// Reconstruct reply trees from a flat list of posts.
///
/// Posts whose parent is not part of the input become roots of their own
/// trees. Trees are returned in the order their roots appear in the input.
pub fn build_trees(posts: &[RawPost]) -> Result<Vec<ConversationTree>, CorpusError> {
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(posts.len());
    for (i, post) in posts.iter().enumerate() {
        if post.id.is_empty() {
            return Err(CorpusError::EmptyId { line: i + 1 });
        }
        if index.insert(post.id.as_str(), i).is_some() {
            return Err(CorpusError::DuplicateId(post.id.clone()));
        }
    }

    let parent_of = |post: &RawPost| -> Option<usize> {
        post.parent_id
            .as_deref()
            .and_then(|p| index.get(p).copied())
    };

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); posts.len()];
    let mut roots = Vec::new();
    for (i, post) in posts.iter().enumerate() {
        match parent_of(post) {
            Some(p) => children[p].push(i),
            None => roots.push(i),
        }
    }

    let mut visited = vec![false; posts.len()];
    let mut trees = Vec::with_capacity(roots.len());
    for &root in &roots {
        let mut tree = ConversationTree::single(posts[root].id.clone());
        let mut stack = vec![root];
        while let Some(node) = stack.pop() {
            visited[node] = true;
            if !children[node].is_empty() {
                tree.children.insert(
                    posts[node].id.clone(),
                    children[node].iter().map(|&c| posts[c].id.clone()).collect(),
                );
            }
            stack.extend(children[node].iter().copied());
        }
        trees.push(tree);
    }

    // Anything unreachable from a root hangs off a parent cycle.
    if let Some(start) = visited.iter().position(|v| !v) {
        let mut seen = HashSet::new();
        let mut path = Vec::new();
        let mut node = start;
        while seen.insert(node) {
            path.push(node);
            node = parent_of(&posts[node]).expect("unvisited post has a parent in the input");
        }
        let cycle_start = path.iter().position(|&n| n == node).unwrap_or(0);
        let cycle = path[cycle_start..]
            .iter()
            .map(|&n| posts[n].id.clone())
            .collect();
        return Err(CorpusError::Cycle(cycle));
    }

    Ok(trees)
}

/// Every root-to-leaf path of `tree`, as post ids, one per leaf.
pub fn flatten_to_paths(tree: &ConversationTree) -> Vec<Vec<String>> {
    let mut paths = Vec::new();
    let mut stack = vec![vec![tree.root.clone()]];
    while let Some(path) = stack.pop() {
        let last = path.last().expect("paths are never empty");
        let kids = tree.children_of(last);
        if kids.is_empty() {
            paths.push(path);
            continue;
        }
        for child in kids.iter().rev() {
            let mut next = path.clone();
            next.push(child.clone());
            stack.push(next);
        }
    }
    paths
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(id: &str, parent: Option<&str>) -> RawPost {
        RawPost::new(id, parent, "")
    }

    #[test]
    fn builds_single_tree_with_two_leaves() {
        let posts = vec![
            post("A", None),
            post("B", Some("A")),
            post("C", Some("B")),
            post("D", Some("B")),
        ];
        let trees = build_trees(&posts).unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].root, "A");
        assert_eq!(trees[0].leaves(), vec!["C", "D"]);
    }

    #[test]
    fn orphan_becomes_root() {
        let trees = build_trees(&[post("E", Some("missing"))]).unwrap();
        assert_eq!(trees, vec![ConversationTree::single("E")]);
    }

    #[test]
    fn empty_input_is_empty_forest() {
        assert!(build_trees(&[]).unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let err = build_trees(&[post("A", None), post("A", None)]).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "A"));
    }

    #[test]
    fn parent_cycle_is_rejected_with_members() {
        let posts = vec![
            post("R", None),
            post("X", Some("Z")),
            post("Y", Some("X")),
            post("Z", Some("Y")),
            post("W", Some("Y")),
        ];
        match build_trees(&posts).unwrap_err() {
            CorpusError::Cycle(mut ids) => {
                ids.sort();
                assert_eq!(ids, vec!["X", "Y", "Z"]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let err = build_trees(&[post("S", Some("S"))]).unwrap_err();
        assert!(matches!(err, CorpusError::Cycle(ids) if ids == vec!["S".to_string()]));
    }

    #[test]
    fn flatten_examples() {
        let trees = build_trees(&[
            post("A", None),
            post("B", Some("A")),
            post("C", Some("B")),
            post("D", Some("B")),
        ])
        .unwrap();
        assert_eq!(
            flatten_to_paths(&trees[0]),
            vec![vec!["A", "B", "C"], vec!["A", "B", "D"]]
        );
        assert_eq!(
            flatten_to_paths(&ConversationTree::single("A")),
            vec![vec!["A"]]
        );
        let chain = build_trees(&[post("A", None), post("B", Some("A")), post("C", Some("B"))])
            .unwrap();
        assert_eq!(flatten_to_paths(&chain[0]), vec![vec!["A", "B", "C"]]);
    }
}
