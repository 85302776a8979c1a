//! Forward policy over fragment-graph actions, conditioned on a pocket either
//! through a virtual node (baseline) or through the trioformer.

mod features;
mod transformer;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use features::{edge_feature_dim, featurize, node_feature_dim, with_virtual_node, GraphInput};
pub use transformer::{GraphTransformer, GraphTransformerLayer};

use crate::autodiff::{Init, Linear, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::ligand::{adjacency_matrix, FragmentLibrary, LigandAction, LigandEnv, LigandState};
use crate::pocket::{Pocket, PocketEncoder, PocketEncoderConfig, Residue, DEFAULT_K};
use crate::trioformer::{edge_embeddings, ligand_distance_features, pool_graph_embedding, Trioformer, TrioformerConfig};

/// Prefix of the frozen pocket-encoder parameters.
pub const POCKET_PREFIX: &str = "pocket";
pub const POLICY_PREFIX: &str = "policy";
pub const LOG_Z_PREFIX: &str = "log_z";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditioningMode {
    Baseline,
    Trioformer,
}

impl std::str::FromStr for ConditioningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ConditioningMode::Baseline),
            "trioformer" => Ok(ConditioningMode::Trioformer),
            other => Err(Error::config("mode", format!("expected baseline or trioformer, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            ConditioningMode::Baseline => "baseline",
            ConditioningMode::Trioformer => "trioformer",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub mode: ConditioningMode,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub fragment_embedding: usize,
    pub head_hidden: usize,
    pub log_z_hidden: usize,
    pub knn_k: usize,
    pub pocket: PocketEncoderConfig,
    pub trioformer: TrioformerConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: ConditioningMode::Baseline,
            width: 64,
            heads: 4,
            layers: 3,
            fragment_embedding: 16,
            head_hidden: 64,
            log_z_hidden: 32,
            knn_k: DEFAULT_K,
            pocket: PocketEncoderConfig::default(),
            trioformer: TrioformerConfig::default(),
        }
    }
}

impl ModelConfig {
    /// A narrow configuration that trains in seconds on one core.
    pub fn small(mode: ConditioningMode) -> Self {
        ModelConfig {
            mode,
            width: 16,
            heads: 2,
            layers: 1,
            fragment_embedding: 8,
            head_hidden: 32,
            log_z_hidden: 16,
            knn_k: DEFAULT_K,
            pocket: PocketEncoderConfig {
                width: 16,
                vector_channels: 4,
                layers: 2,
            },
            trioformer: TrioformerConfig {
                width: 16,
                pair_width: 8,
                heads: 2,
                head_dim: 8,
                layers: 1,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::config("model.heads", "heads must divide a positive width"));
        }
        if self.knn_k == 0 {
            return Err(Error::config("model.knn_k", "must be at least 1"));
        }
        if self.mode == ConditioningMode::Trioformer {
            self.trioformer.validate()?;
            if self.trioformer.width != self.width {
                return Err(Error::config(
                    "model.trioformer.width",
                    format!("must equal model width {}", self.width),
                ));
            }
        }
        Ok(())
    }

    /// Width of the graph-level embedding: node ⊕ virtual for the baseline.
    pub fn graph_embedding_width(&self) -> usize {
        match self.mode {
            ConditioningMode::Baseline => 2 * self.width,
            ConditioningMode::Trioformer => self.width,
        }
    }
}

#[derive(Clone, Debug)]
enum Conditioning {
    Baseline {
        virtual_proj: Linear,
    },
    Trioformer {
        protein_proj: Linear,
        stack: Box<Trioformer>,
    },
}

/// Policy and log-partition heads. Parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub config: ModelConfig,
    pub num_fragments: usize,
    pub max_aps: usize,
    pub pocket_encoder: PocketEncoder,
    node_embed: Linear,
    transformer: GraphTransformer,
    conditioning: Conditioning,
    fragment_table: ParamId,
    stop_head: Mlp,
    add_head: Mlp,
    log_z_head: Mlp,
}

/// Node, edge and graph embeddings for one state.
#[derive(Clone, Copy, Debug)]
pub struct PolicyEmbeddings<'t> {
    /// Ligand nodes only (the start token for an empty ligand).
    pub nodes: Var<'t>,
    /// `e_ij = h_i + h_j` per bond, `None` without bonds.
    pub edges: Option<Var<'t>>,
    pub graph: Var<'t>,
}

/// Categorical distribution over the action grid of one state.
#[derive(Clone, Debug)]
pub struct ActionDistribution<'t> {
    /// Stop first, then every addition for the state's shape; illegal entries are masked.
    pub actions: Vec<LigandAction>,
    pub legal: Vec<bool>,
    /// `[1, G]` raw logits.
    pub logits: Var<'t>,
    /// `[1, 1]` log normalizer over legal entries.
    pub log_norm: Var<'t>,
    /// Exactly zero on illegal entries.
    pub probs: Vec<f64>,
}

impl<'t> ActionDistribution<'t> {
    pub fn index_of(&self, a: &LigandAction) -> Option<usize> {
        self.actions.iter().position(|x| x == a)
    }

    pub fn prob(&self, a: &LigandAction) -> f64 {
        self.index_of(a).map_or(0.0, |i| self.probs[i])
    }

    /// Log probability of grid entry `i` as a `[1, 1]` node.
    pub fn log_prob_at(&self, i: usize) -> Result<Var<'t>> {
        if !self.legal.get(i).copied().unwrap_or(false) {
            return Err(Error::IllegalAction(format!("grid entry {i} is not legal")));
        }
        let g = self.actions.len();
        self.logits.reshape(&[g, 1])?.index_select(&[i])?.sub(self.log_norm)
    }

    /// Log of the total probability of the entries selected by `group`.
    pub fn log_prob_of_group(&self, group: &[bool]) -> Result<Var<'t>> {
        if group.iter().zip(&self.legal).any(|(&g, &l)| g && !l) {
            return Err(Error::IllegalAction("group contains an illegal action".into()));
        }
        self.logits.logsumexp(Some(group))?.sub(self.log_norm)
    }

    /// Differentiable probabilities with illegal entries masked.
    pub fn probs_var(&self) -> Result<Var<'t>> {
        self.logits.softmax(Some(&self.legal))
    }
}

/// Inverse-CDF draw from a categorical; zero-probability entries are never chosen.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) || probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(Error::Invalid(format!("not a distribution: {probs:?}")));
    }
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(last)
}

/// Samples a grid entry: returns `(index, action, probability)`.
pub fn sample_action<R: Rng + ?Sized>(dist: &ActionDistribution<'_>, rng: &mut R) -> Result<(usize, LigandAction, f64)> {
    let i = sample_categorical(&dist.probs, rng)?;
    Ok((i, dist.actions[i], dist.probs[i]))
}

/// Every action with the state's shape: Stop, then additions at each (node, ap, fragment, fragment ap).
pub fn action_grid(library: &FragmentLibrary, s: &LigandState) -> Vec<LigandAction> {
    let mut out = vec![LigandAction::Stop];
    let choices: Vec<(usize, usize)> = library
        .fragments
        .iter()
        .enumerate()
        .flat_map(|(f, frag)| (0..frag.aps).map(move |ap| (f, ap)))
        .collect();
    if s.is_empty() {
        out.extend(choices.iter().map(|&(fragment, fragment_ap)| LigandAction::AddFragment {
            target: None,
            fragment,
            fragment_ap,
        }));
    } else {
        for (node, n) in s.nodes.iter().enumerate() {
            for ap in 0..library.get(n.fragment).aps {
                out.extend(choices.iter().map(|&(fragment, fragment_ap)| LigandAction::AddFragment {
                    target: Some(crate::ligand::AttachSite { node, ap }),
                    fragment,
                    fragment_ap,
                }));
            }
        }
    }
    out
}

fn one_hot_rows(rows: &[Option<usize>], width: usize) -> Tensor {
    let mut t = Tensor::zeros(&[rows.len(), width]);
    for (r, idx) in rows.iter().enumerate() {
        if let Some(i) = idx {
            t.data[r * width + i] = 1.0;
        }
    }
    t
}

impl PolicyNet {
    pub fn new(store: &mut ParamStore, library: &FragmentLibrary, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let nf = node_feature_dim(library);
        let max_aps = library.max_aps();
        let pocket_encoder = PocketEncoder::new(store, POCKET_PREFIX, config.pocket.clone())?;
        store.freeze_prefix(&format!("{POCKET_PREFIX}."));
        let pw = config.pocket.width;
        let p = POLICY_PREFIX;
        let node_embed = Linear::new(store, &format!("{p}.node_embed"), nf, d, true)?;
        let transformer = GraphTransformer::new(
            store,
            &format!("{p}.gt"),
            d,
            config.heads,
            edge_feature_dim(max_aps),
            config.layers,
        )?;
        let conditioning = match config.mode {
            ConditioningMode::Baseline => Conditioning::Baseline {
                virtual_proj: Linear::new(store, &format!("{p}.virtual"), pw, d, true)?,
            },
            ConditioningMode::Trioformer => Conditioning::Trioformer {
                protein_proj: Linear::new(store, &format!("{p}.protein"), pw, d, true)?,
                stack: Box::new(Trioformer::new(store, &format!("{p}.trio"), config.trioformer.clone())?),
            },
        };
        let fragment_table = store.add(
            &format!("{p}.fragments"),
            &[library.len(), config.fragment_embedding],
            Init::Uniform { fan_in: 1 },
        )?;
        let gw = config.graph_embedding_width();
        let stop_head = Mlp::new(store, &format!("{p}.stop"), &[gw, config.head_hidden, 1])?;
        let add_in = d + max_aps + config.fragment_embedding + max_aps;
        let add_head = Mlp::new(store, &format!("{p}.add"), &[add_in, config.head_hidden, 1])?;
        let log_z_head = Mlp::new(store, LOG_Z_PREFIX, &[pw, config.log_z_hidden, 1])?;
        Ok(PolicyNet {
            config,
            num_fragments: library.len(),
            max_aps,
            pocket_encoder,
            node_embed,
            transformer,
            conditioning,
            fragment_table,
            stop_head,
            add_head,
            log_z_head,
        })
    }

    pub fn mode(&self) -> ConditioningMode {
        self.config.mode
    }

    /// Builds the KNN graph and runs the frozen encoder once.
    pub fn prepare_pocket(&self, store: &ParamStore, id: &str, residues: &[Residue]) -> Result<Pocket> {
        Pocket::new(id, residues, self.config.knn_k, &self.pocket_encoder, store)
    }

    fn check_library(&self, library: &FragmentLibrary) -> Result<()> {
        if library.len() != self.num_fragments || library.max_aps() != self.max_aps {
            return Err(Error::config(
                "library",
                format!(
                    "network built for {} fragments / {} aps, library has {} / {}",
                    self.num_fragments,
                    self.max_aps,
                    library.len(),
                    library.max_aps()
                ),
            ));
        }
        Ok(())
    }

    pub fn embed<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        library: &FragmentLibrary,
        pocket: &Pocket,
        s: &LigandState,
    ) -> Result<PolicyEmbeddings<'t>> {
        self.check_library(library)?;
        let input = featurize(s, library);
        let n = input.ligand_nodes;
        let x = self.node_embed.forward(tape, store, tape.constant(input.node_features.clone()))?;
        let pw = self.config.pocket.width;
        let (nodes, graph) = match &self.conditioning {
            Conditioning::Baseline { virtual_proj } => {
                let aug = with_virtual_node(&input);
                let pooled = tape.constant(Tensor::new(vec![1, pw], pocket.embedding.pooled.clone())?);
                let v = virtual_proj.forward(tape, store, pooled)?;
                let h0 = Var::concat(&[x, v], 0)?;
                let h = self.transformer.forward(tape, store, h0, &aug.edge_features, &aug.attend)?;
                let idx: Vec<usize> = (0..n).collect();
                let nodes = h.index_select(&idx)?;
                let virt = h.index_select(&[n])?;
                let graph = Var::concat(&[pool_graph_embedding(nodes)?, virt], 1)?;
                (nodes, graph)
            }
            Conditioning::Trioformer { protein_proj, stack } => {
                let h = self.transformer.forward(tape, store, x, &input.edge_features, &input.attend)?;
                let hp = protein_proj.forward(tape, store, tape.constant(pocket.embedding.node_embeddings.clone()))?;
                let adj = if s.is_empty() { Tensor::zeros(&[1, 1]) } else { adjacency_matrix(s) };
                let out = stack.forward(
                    tape,
                    store,
                    hp,
                    h,
                    tape.constant(pocket.distance_features.clone()),
                    tape.constant(ligand_distance_features(&adj)),
                )?;
                (out.ligand, pool_graph_embedding(out.ligand)?)
            }
        };
        Ok(PolicyEmbeddings {
            nodes,
            edges: edge_embeddings(nodes, &input.edges)?,
            graph,
        })
    }

    /// Masked categorical over [`action_grid`]; errors on terminal states.
    pub fn action_distribution<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        env: &LigandEnv,
        pocket: &Pocket,
        s: &LigandState,
    ) -> Result<ActionDistribution<'t>> {
        let legal_set = env.legal_actions(s);
        if legal_set.is_empty() {
            return Err(Error::IllegalAction("no legal actions from this state".into()));
        }
        let emb = self.embed(tape, store, &env.library, pocket, s)?;
        let actions = action_grid(&env.library, s);
        let legal: Vec<bool> = actions.iter().map(|a| legal_set.contains(a)).collect();

        let mut node_idx = Vec::with_capacity(actions.len() - 1);
        let mut aps = Vec::with_capacity(actions.len() - 1);
        let mut frags = Vec::with_capacity(actions.len() - 1);
        let mut frag_aps = Vec::with_capacity(actions.len() - 1);
        for a in &actions[1..] {
            if let LigandAction::AddFragment {
                target,
                fragment,
                fragment_ap,
            } = *a
            {
                node_idx.push(target.map_or(0, |t| t.node));
                aps.push(target.map(|t| t.ap));
                frags.push(fragment);
                frag_aps.push(Some(fragment_ap));
            }
        }
        let stop = self.stop_head.forward(tape, store, emb.graph)?;
        let g = actions.len();
        let logits = if node_idx.is_empty() {
            stop
        } else {
            let table = tape.param(store, self.fragment_table);
            let input = Var::concat(
                &[
                    emb.nodes.index_select(&node_idx)?,
                    tape.constant(one_hot_rows(&aps, self.max_aps)),
                    table.index_select(&frags)?,
                    tape.constant(one_hot_rows(&frag_aps, self.max_aps)),
                ],
                1,
            )?;
            let add = self.add_head.forward(tape, store, input)?.reshape(&[1, g - 1])?;
            Var::concat(&[stop, add], 1)?
        };
        let log_norm = logits.logsumexp(Some(&legal))?;
        let probs = logits.softmax(Some(&legal))?.value().data;
        Ok(ActionDistribution {
            actions,
            legal,
            logits,
            log_norm,
            probs,
        })
    }

    /// Pocket-conditioned `log Z`, `[1, 1]`.
    pub fn log_z<'t>(&self, tape: &'t Tape, store: &ParamStore, pocket: &Pocket) -> Result<Var<'t>> {
        let pw = self.config.pocket.width;
        let pooled = tape.constant(Tensor::new(vec![1, pw], pocket.embedding.pooled.clone())?);
        self.log_z_head.forward(tape, store, pooled)
    }

    /// Parameters of the log-partition head (for a separate learning rate).
    pub fn log_z_params(&self) -> Vec<ParamId> {
        self.log_z_head
            .layers
            .iter()
            .flat_map(|l| std::iter::once(l.weight).chain(l.bias))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn categorical_never_picks_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let i = sample_categorical(&[0.0, 0.3, 0.0, 0.7], &mut rng).unwrap();
            assert!(i == 1 || i == 3);
        }
        assert_eq!(sample_categorical(&[1.0], &mut rng).unwrap(), 0);
        assert!(sample_categorical(&[0.0, 0.0], &mut rng).is_err());
    }

    #[test]
    fn mode_parses() {
        assert_eq!("trioformer".parse::<ConditioningMode>().unwrap(), ConditioningMode::Trioformer);
        assert!("both".parse::<ConditioningMode>().is_err());
    }

    #[test]
    fn grid_for_empty_state_masks_stop() {
        let lib = FragmentLibrary::toy();
        let grid = action_grid(&lib, &LigandState::default());
        assert_eq!(grid.len(), 3);
        assert_eq!(grid[0], LigandAction::Stop);
    }
}
