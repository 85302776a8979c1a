//! Canonical labels for fragment trees.
//!
//! The code of a tree rooted at `v` is `[frag|child,child,..]` where each child
//! is prefixed by the attachment points of its edge and children are sorted.
//! Rooting at every node and keeping the smallest string gives a label that is
//! equal for two states exactly when they are isomorphic as fragment- and
//! attachment-labelled trees.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::state::LigandState;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalForm(pub String);

impl fmt::Display for CanonicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn rooted_code(s: &LigandState, v: usize, parent: Option<usize>, visited: &mut Vec<bool>) -> String {
    visited[v] = true;
    let mut children: Vec<String> = s
        .incident(v)
        .filter(|&(u, _, _)| Some(u) != parent && !visited[u])
        .collect::<Vec<_>>()
        .into_iter()
        .map(|(u, my_ap, their_ap)| format!("{my_ap}.{their_ap}{}", rooted_code(s, u, Some(v), visited)))
        .collect();
    children.sort();
    format!("[{}|{}]", s.nodes[v].fragment, children.join(","))
}

pub fn canonical_form(s: &LigandState) -> CanonicalForm {
    let n = s.nodes.len();
    let best = (0..n)
        .map(|root| rooted_code(s, root, None, &mut vec![false; n]))
        .min()
        .unwrap_or_default();
    CanonicalForm(best)
}
