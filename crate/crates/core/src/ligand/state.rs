use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::canonical::{canonical_form, CanonicalForm};
use super::fragment::FragmentLibrary;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_NODES: usize = 8;
pub const ENUMERATION_MAX_FRAGMENTS: usize = 4;
pub const ENUMERATION_MAX_NODES: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LigandNode {
    /// Position in the fragment library.
    pub fragment: usize,
    /// Bit `i` set when attachment point `i` is bonded.
    pub used_aps: u32,
}

impl LigandNode {
    pub fn is_used(&self, ap: usize) -> bool {
        self.used_aps & (1 << ap) != 0
    }
}

/// Undirected attachment `a.ap_a -- b.ap_b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LigandEdge {
    pub a: usize,
    pub ap_a: usize,
    pub b: usize,
    pub ap_b: usize,
}

/// A fragment graph. Graphs built by [`LigandEnv::apply`] are trees.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LigandState {
    pub nodes: Vec<LigandNode>,
    pub edges: Vec<LigandEdge>,
    pub terminal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttachSite {
    pub node: usize,
    pub ap: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LigandAction {
    Stop,
    /// `target` is `None` only for the first fragment.
    AddFragment {
        target: Option<AttachSite>,
        fragment: usize,
        fragment_ap: usize,
    },
}

impl LigandState {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|e| e.a == v || e.b == v).count()
    }

    /// `(neighbor, my_ap, their_ap)` for each edge at `v`.
    pub fn incident(&self, v: usize) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.edges.iter().filter_map(move |e| {
            if e.a == v {
                Some((e.b, e.ap_a, e.ap_b))
            } else if e.b == v {
                Some((e.a, e.ap_b, e.ap_a))
            } else {
                None
            }
        })
    }

    /// Nodes whose removal leaves a connected graph: the lone node of a
    /// one-node state, otherwise every degree-1 node.
    pub fn removable_leaves(&self) -> Vec<usize> {
        match self.nodes.len() {
            0 => vec![],
            1 => vec![0],
            n => (0..n).filter(|&v| self.degree(v) == 1).collect(),
        }
    }

    /// Removes node `v` and its edges, freeing the attachment points it used
    /// on its neighbours. Later nodes shift down by one.
    pub fn remove_node(&self, v: usize) -> LigandState {
        let mut nodes = self.nodes.clone();
        for e in &self.edges {
            if e.a == v {
                nodes[e.b].used_aps &= !(1 << e.ap_b);
            } else if e.b == v {
                nodes[e.a].used_aps &= !(1 << e.ap_a);
            }
        }
        nodes.remove(v);
        let shift = |x: usize| if x > v { x - 1 } else { x };
        let edges = self
            .edges
            .iter()
            .filter(|e| e.a != v && e.b != v)
            .map(|e| LigandEdge {
                a: shift(e.a),
                ap_a: e.ap_a,
                b: shift(e.b),
                ap_b: e.ap_b,
            })
            .collect();
        LigandState {
            nodes,
            edges,
            terminal: false,
        }
    }

    pub fn canonical(&self) -> CanonicalForm {
        canonical_form(self)
    }

    /// Checks every structural invariant against `library`.
    pub fn validate(&self, library: &FragmentLibrary) -> Result<()> {
        let n = self.nodes.len();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.fragment >= library.len() {
                return Err(Error::State(format!("node {i} references unknown fragment {}", node.fragment)));
            }
        }
        let mut used = vec![0u32; n];
        for e in &self.edges {
            if e.a >= n || e.b >= n || e.a == e.b {
                return Err(Error::State(format!("edge {e:?} has invalid endpoints")));
            }
            for (v, ap) in [(e.a, e.ap_a), (e.b, e.ap_b)] {
                if ap >= library.get(self.nodes[v].fragment).aps {
                    return Err(Error::State(format!("edge {e:?}: node {v} has no attachment point {ap}")));
                }
                if used[v] & (1 << ap) != 0 {
                    return Err(Error::State(format!("attachment point {ap} of node {v} used twice")));
                }
                used[v] |= 1 << ap;
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.used_aps != used[i] {
                return Err(Error::State(format!("node {i} used-AP set disagrees with its edges")));
            }
        }
        if n > 0 {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([0]);
            seen[0] = true;
            while let Some(v) = queue.pop_front() {
                for (u, _, _) in self.incident(v) {
                    if !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::State("graph is disconnected".into()));
            }
        }
        Ok(())
    }
}

/// One-hot neighbour matrix: entry 1 iff the two fragments share an edge.
pub fn adjacency_matrix(s: &LigandState) -> Tensor {
    let n = s.nodes.len();
    let mut t = Tensor::zeros(&[n, n]);
    for e in &s.edges {
        t.data[e.a * n + e.b] = 1.0;
        t.data[e.b * n + e.a] = 1.0;
    }
    t
}

/// Fragment library plus the node cap: the full action grammar.
#[derive(Clone, Debug)]
pub struct LigandEnv {
    pub library: FragmentLibrary,
    pub max_nodes: usize,
}

impl LigandEnv {
    pub fn new(library: FragmentLibrary, max_nodes: usize) -> Result<Self> {
        if max_nodes == 0 {
            return Err(Error::config("max_nodes", "must be at least 1"));
        }
        Ok(LigandEnv { library, max_nodes })
    }

    pub fn initial_state(&self) -> LigandState {
        LigandState::default()
    }

    fn free_aps<'a>(&'a self, s: &'a LigandState) -> impl Iterator<Item = AttachSite> + 'a {
        s.nodes.iter().enumerate().flat_map(move |(node, n)| {
            (0..self.library.get(n.fragment).aps)
                .filter(move |&ap| !n.is_used(ap))
                .map(move |ap| AttachSite { node, ap })
        })
    }

    fn new_fragment_choices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.library
            .fragments
            .iter()
            .enumerate()
            .flat_map(|(f, frag)| (0..frag.aps).map(move |ap| (f, ap)))
    }

    /// Stop first (when the graph is nonempty), then additions ordered by
    /// (node, ap, fragment, fragment ap). Terminal states have no actions.
    pub fn legal_actions(&self, s: &LigandState) -> Vec<LigandAction> {
        if s.terminal {
            return vec![];
        }
        let mut out = Vec::new();
        if !s.is_empty() {
            out.push(LigandAction::Stop);
        }
        if s.len() >= self.max_nodes {
            return out;
        }
        if s.is_empty() {
            out.extend(self.new_fragment_choices().map(|(fragment, fragment_ap)| LigandAction::AddFragment {
                target: None,
                fragment,
                fragment_ap,
            }));
        } else {
            for site in self.free_aps(s) {
                out.extend(self.new_fragment_choices().map(|(fragment, fragment_ap)| {
                    LigandAction::AddFragment {
                        target: Some(site),
                        fragment,
                        fragment_ap,
                    }
                }));
            }
        }
        out
    }

    pub fn apply(&self, s: &LigandState, a: &LigandAction) -> Result<LigandState> {
        if s.terminal {
            return Err(Error::IllegalAction("state is already terminal".into()));
        }
        match *a {
            LigandAction::Stop => {
                if s.is_empty() {
                    return Err(Error::IllegalAction("cannot stop on an empty ligand".into()));
                }
                let mut next = s.clone();
                next.terminal = true;
                Ok(next)
            }
            LigandAction::AddFragment {
                target,
                fragment,
                fragment_ap,
            } => {
                if s.len() >= self.max_nodes {
                    return Err(Error::IllegalAction(format!("node cap {} reached", self.max_nodes)));
                }
                if fragment >= self.library.len() {
                    return Err(Error::IllegalAction(format!("unknown fragment {fragment}")));
                }
                if fragment_ap >= self.library.get(fragment).aps {
                    return Err(Error::IllegalAction(format!(
                        "fragment {fragment} has no attachment point {fragment_ap}"
                    )));
                }
                let mut next = s.clone();
                match target {
                    None => {
                        if !s.is_empty() {
                            return Err(Error::IllegalAction("addition to a nonempty ligand needs a target".into()));
                        }
                        next.nodes.push(LigandNode { fragment, used_aps: 0 });
                    }
                    Some(AttachSite { node, ap }) => {
                        if s.is_empty() {
                            return Err(Error::IllegalAction("empty ligand has no attachment target".into()));
                        }
                        let t = s
                            .nodes
                            .get(node)
                            .ok_or_else(|| Error::IllegalAction(format!("target node {node} does not exist")))?;
                        if ap >= self.library.get(t.fragment).aps {
                            return Err(Error::IllegalAction(format!("node {node} has no attachment point {ap}")));
                        }
                        if t.is_used(ap) {
                            return Err(Error::IllegalAction(format!(
                                "attachment point {ap} of node {node} is already used"
                            )));
                        }
                        let new = next.nodes.len();
                        next.nodes[node].used_aps |= 1 << ap;
                        next.nodes.push(LigandNode {
                            fragment,
                            used_aps: 1 << fragment_ap,
                        });
                        next.edges.push(LigandEdge {
                            a: node,
                            ap_a: ap,
                            b: new,
                            ap_b: fragment_ap,
                        });
                    }
                }
                Ok(next)
            }
        }
    }

    /// Distinct parents of a non-terminal state (up to isomorphism) with the
    /// number of leaf removals producing each, and the total removal count.
    pub fn parents(&self, s: &LigandState) -> (Vec<(CanonicalForm, LigandState, usize)>, usize) {
        let leaves = s.removable_leaves();
        let mut groups: BTreeMap<CanonicalForm, (LigandState, usize)> = BTreeMap::new();
        for &v in &leaves {
            let p = s.remove_node(v);
            groups.entry(p.canonical()).or_insert((p, 0)).1 += 1;
        }
        let total = leaves.len();
        (groups.into_iter().map(|(k, (p, c))| (k, p, c)).collect(), total)
    }

    /// `log P_B(parent | child)` under the uniform leaf-removal backward policy,
    /// aggregated over removals that give isomorphic parents. A terminal child's
    /// only parent is its non-terminal copy.
    pub fn backward_log_prob(&self, parent: &LigandState, child: &LigandState) -> Result<f64> {
        if child.terminal {
            return if !parent.terminal && parent.canonical() == child.canonical() {
                Ok(0.0)
            } else {
                Err(Error::State("terminal state's parent must be its pre-stop copy".into()))
            };
        }
        let key = parent.canonical();
        let (groups, total) = self.parents(child);
        groups
            .iter()
            .find(|(k, _, _)| *k == key)
            .map(|(_, _, c)| (*c as f64 / total as f64).ln())
            .ok_or_else(|| Error::State("state is not a parent of the given child".into()))
    }

    /// Every terminal state up to isomorphism, keyed by canonical form.
    pub fn enumerate_terminal_states(&self) -> Result<BTreeMap<CanonicalForm, LigandState>> {
        if self.library.len() > ENUMERATION_MAX_FRAGMENTS || self.max_nodes > ENUMERATION_MAX_NODES {
            return Err(Error::Guard(format!(
                "enumeration needs ≤ {ENUMERATION_MAX_FRAGMENTS} fragments and max_nodes ≤ {ENUMERATION_MAX_NODES}, got {} and {}",
                self.library.len(),
                self.max_nodes
            )));
        }
        let mut seen: BTreeMap<CanonicalForm, LigandState> = BTreeMap::new();
        let mut queue = VecDeque::from([self.initial_state()]);
        while let Some(s) = queue.pop_front() {
            for a in self.legal_actions(&s) {
                if a == LigandAction::Stop {
                    continue;
                }
                let next = self.apply(&s, &a)?;
                let key = next.canonical();
                if !seen.contains_key(&key) {
                    seen.insert(key, next.clone());
                    queue.push_back(next);
                }
            }
        }
        Ok(seen
            .into_iter()
            .map(|(k, mut s)| {
                s.terminal = true;
                (k, s)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(max_nodes: usize) -> LigandEnv {
        LigandEnv::new(FragmentLibrary::toy(), max_nodes).unwrap()
    }

    fn add(target: Option<(usize, usize)>, fragment: usize, fragment_ap: usize) -> LigandAction {
        LigandAction::AddFragment {
            target: target.map(|(node, ap)| AttachSite { node, ap }),
            fragment,
            fragment_ap,
        }
    }

    #[test]
    fn initial_state_and_first_actions() {
        let env = toy(2);
        let s0 = env.initial_state();
        assert_eq!((s0.len(), s0.edges.len(), s0.terminal), (0, 0, false));
        let acts = env.legal_actions(&s0);
        assert_eq!(acts, vec![add(None, 0, 0), add(None, 1, 0)]);
        let s1 = env.apply(&s0, &acts[0]).unwrap();
        assert_eq!(s1.len(), 1);
    }

    #[test]
    fn desk_initial_actions_one_per_fragment_ap() {
        let env = LigandEnv::new(FragmentLibrary::desk(), 4).unwrap();
        let n: usize = env.library.fragments.iter().map(|f| f.aps).sum();
        let acts = env.legal_actions(&env.initial_state());
        assert_eq!(acts.len(), n);
        assert!(!acts.contains(&LigandAction::Stop));
    }

    #[test]
    fn saturated_node_only_stops() {
        let env = toy(3);
        let s = env.apply(&env.initial_state(), &add(None, 0, 0)).unwrap();
        let s = env.apply(&s, &add(Some((0, 0)), 0, 0)).unwrap();
        // both single APs are now used
        assert_eq!(env.legal_actions(&s), vec![LigandAction::Stop]);
    }

    #[test]
    fn node_cap_blocks_additions() {
        let env = LigandEnv::new(FragmentLibrary::desk(), 1).unwrap();
        let s = env.apply(&env.initial_state(), &add(None, 0, 0)).unwrap();
        assert_eq!(env.legal_actions(&s), vec![LigandAction::Stop]);
        assert!(env.apply(&s, &add(Some((0, 1)), 3, 0)).is_err());
    }

    #[test]
    fn stop_and_add_transitions() {
        let env = LigandEnv::new(FragmentLibrary::desk(), 4).unwrap();
        let s = env.apply(&env.initial_state(), &add(None, 0, 0)).unwrap();
        let t = env.apply(&s, &LigandAction::Stop).unwrap();
        assert!(t.terminal);
        assert_eq!(t.nodes, s.nodes);
        let s2 = env.apply(&s, &add(Some((0, 1)), 2, 1)).unwrap();
        assert_eq!((s2.len(), s2.edges.len()), (2, 1));
        let err = env.apply(&s2, &add(Some((0, 1)), 3, 0)).unwrap_err().to_string();
        assert!(err.contains("already used"), "{err}");
        assert!(env.apply(&t, &LigandAction::Stop).is_err());
        assert!(env.apply(&env.initial_state(), &LigandAction::Stop).is_err());
    }

    #[test]
    fn adjacency_examples() {
        let env = toy(1);
        let s = env.apply(&env.initial_state(), &add(None, 1, 0)).unwrap();
        assert_eq!(adjacency_matrix(&s).data, vec![0.0]);

        let env = LigandEnv::new(FragmentLibrary::desk(), 3).unwrap();
        let s = env.apply(&env.initial_state(), &add(None, 2, 0)).unwrap();
        let s = env.apply(&s, &add(Some((0, 1)), 2, 0)).unwrap();
        let s = env.apply(&s, &add(Some((1, 1)), 2, 0)).unwrap();
        let a = adjacency_matrix(&s);
        assert_eq!(a.data, vec![0., 1., 0., 1., 0., 1., 0., 1., 0.]);
    }

    #[test]
    fn toy_enumeration_has_five_states() {
        let states = toy(2).enumerate_terminal_states().unwrap();
        assert_eq!(states.len(), 5);
        assert_eq!(toy(1).enumerate_terminal_states().unwrap().len(), 2);
        let one = LigandEnv::new(
            FragmentLibrary::new(vec![FragmentLibrary::toy().fragments[0].clone()]).unwrap(),
            1,
        )
        .unwrap();
        assert_eq!(one.enumerate_terminal_states().unwrap().len(), 1);
    }

    #[test]
    fn enumeration_guard() {
        assert!(matches!(toy(5).enumerate_terminal_states(), Err(Error::Guard(_))));
    }

    #[test]
    fn backward_probability_of_symmetric_dimer() {
        let env = toy(2);
        let a = env.apply(&env.initial_state(), &add(None, 0, 0)).unwrap();
        let aa = env.apply(&a, &add(Some((0, 0)), 0, 0)).unwrap();
        let ab = env.apply(&a, &add(Some((0, 0)), 1, 0)).unwrap();
        // both leaves of A−A give A
        assert_eq!(env.backward_log_prob(&a, &aa).unwrap(), 0.0);
        assert!((env.backward_log_prob(&a, &ab).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(env.backward_log_prob(&env.initial_state(), &a).unwrap(), 0.0);
    }
}
