//! Verification suites shared by the `selfcheck` command and the examples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{
    finite_diff_check, finite_diff_check_params, GradCheckReport, LayerNorm, Linear, ParamStore, Tape, Tensor, Var,
    LAYER_NORM_EPS,
};
use crate::error::Result;
use crate::geom::RigidMotion;
use crate::gfn::{rollout, tb_loss};
use crate::ligand::{FragmentLibrary, LigandAction, LigandEnv, LigandState};
use crate::pocket::{synthetic_residues, Residue};
use crate::policy::{ConditioningMode, ModelConfig, PolicyNet};
use crate::reward::{docking_proxy, pocket_targets, RewardFn};
use crate::trioformer::{
    protein_distance_features, Axis, BiasedCrossAttention, TriangleAttention, Trioformer, TrioformerConfig,
    LIGAND_DISTANCE_CLASSES, PROTEIN_RBF_BINS,
};

pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const COMPOSITE_TOL: f64 = 1e-3;
pub const INVARIANCE_TOL: f64 = 1e-6;
pub const ABLATION_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        SuiteResult {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    }
}

/// Weighted sum with a fixed random weight tensor, so every output entry matters.
fn probe<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random_tensor(&mut rng, &y.shape(), -1.0, 1.0));
    Ok(y.mul(w)?.sum())
}

/// Gradient checks of every tape primitive on random inputs.
pub fn primitive_gradients(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    macro_rules! check {
        ($name:expr, $shape:expr, $range:expr, |$t:ident, $x:ident| $body:expr) => {{
            let x = random_tensor(&mut rng, &$shape, $range.0, $range.1);
            let salt = out.len() as u64 + seed * 1000;
            let r = finite_diff_check(
                |$t, $x| {
                    let y: Result<Var> = $body;
                    probe($t, y?, salt)
                },
                &x,
                PRIMITIVE_TOL,
            )?;
            out.push(($name.to_string(), r));
        }};
    }
    let c23 = random_tensor(&mut rng, &[2, 3], -1.0, 1.0);
    let c13 = random_tensor(&mut rng, &[1, 3], -1.0, 1.0);
    let c34 = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let c243 = random_tensor(&mut rng, &[2, 4, 3], -1.0, 1.0);
    check!("add", [2, 3], (-1.0, 1.0), |t, x| x.add(t.constant(c13.clone())));
    check!("sub", [2, 3], (-1.0, 1.0), |t, x| t.constant(c23.clone()).sub(x));
    check!("mul", [2, 3], (-1.0, 1.0), |t, x| x.mul(t.constant(c13.clone())));
    check!("mul_self", [2, 3], (-1.0, 1.0), |t, x| x.mul(x));
    check!("square", [2, 3], (-1.0, 1.0), |t, x| x.square());
    check!("scale", [2, 3], (-1.0, 1.0), |t, x| Ok(x.scale(-2.5)));
    check!("add_scalar", [2, 3], (-1.0, 1.0), |t, x| Ok(x.add_scalar(0.7).square()?));
    check!("relu", [2, 3], (0.1, 1.0), |t, x| Ok(x.scale(-1.0).add_scalar(0.5).relu()));
    check!("sigmoid", [2, 3], (-2.0, 2.0), |t, x| Ok(x.sigmoid()));
    check!("exp", [2, 3], (-1.0, 1.0), |t, x| Ok(x.exp()));
    check!("ln", [2, 3], (0.5, 2.0), |t, x| Ok(x.ln()));
    check!("sqrt", [2, 3], (0.5, 2.0), |t, x| Ok(x.sqrt()));
    check!("sum", [2, 3], (-1.0, 1.0), |t, x| Ok(x.square()?.sum()));
    check!("sum_axis", [2, 3, 2], (-1.0, 1.0), |t, x| x.sum_axis(1));
    check!("mean_axis", [2, 3], (-1.0, 1.0), |t, x| x.mean_axis(0));
    check!("matmul_left", [2, 3], (-1.0, 1.0), |t, x| x.matmul(t.constant(c34.clone())));
    check!("matmul_right", [3, 4], (-1.0, 1.0), |t, x| t.constant(c23.clone()).matmul(x));
    check!("matmul_batched", [2, 3, 4], (-1.0, 1.0), |t, x| t.constant(c243.clone()).matmul(x));
    check!("matmul_t", [2, 5, 3], (-1.0, 1.0), |t, x| t.constant(c243.clone()).matmul_t(x));
    check!("permute", [2, 3, 4], (-1.0, 1.0), |t, x| x.permute(&[2, 0, 1]));
    check!("transpose", [3, 4], (-1.0, 1.0), |t, x| x.transpose());
    check!("reshape", [2, 3, 4], (-1.0, 1.0), |t, x| x.reshape(&[6, 4]));
    check!("softmax", [3, 5], (-2.0, 2.0), |t, x| x.softmax(None));
    check!("softmax_masked", [2, 4], (-2.0, 2.0), |t, x| x
        .softmax(Some(&[true, false, true, true, false, true, true, true])));
    check!("logsumexp", [3, 4], (-2.0, 2.0), |t, x| x.logsumexp(None));
    check!("logsumexp_masked", [1, 4], (-2.0, 2.0), |t, x| x
        .logsumexp(Some(&[true, false, true, true])));
    check!("layer_norm", [3, 6], (-2.0, 2.0), |t, x| x.layer_norm(LAYER_NORM_EPS));
    check!("concat", [2, 3], (-1.0, 1.0), |t, x| Var::concat(
        &[x, t.constant(c23.clone()), x.square()?],
        1
    ));
    check!("index_select", [4, 3], (-1.0, 1.0), |t, x| x.index_select(&[3, 0, 0, 2]));
    Ok(out)
}

fn small_trio_config() -> TrioformerConfig {
    TrioformerConfig {
        width: 8,
        pair_width: 6,
        heads: 2,
        head_dim: 4,
        layers: 1,
    }
}

/// One full trioformer layer at `n_P = 2`, `n_L = 2`, all parameters checked.
pub fn trioformer_layer_gradient(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new(seed);
    let cfg = small_trio_config();
    let stack = Trioformer::new(&mut store, "trio", cfg.clone())?;
    // perturb norm gains/shifts away from 1/0 so their gradients are generic
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.data_mut(id).iter_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    let hp = random_tensor(&mut rng, &[2, cfg.width], -1.0, 1.0);
    let hl = random_tensor(&mut rng, &[2, cfg.width], -1.0, 1.0);
    let dp = protein_distance_features(&Tensor::new(vec![2, 2], vec![0.0, 3.7, 3.7, 0.0])?);
    let dl = crate::trioformer::ligand_distance_features(&Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0])?);
    finite_diff_check_params(
        &store,
        |tape, store| {
            let out = stack.forward(
                tape,
                store,
                tape.constant(hp.clone()),
                tape.constant(hl.clone()),
                tape.constant(dp.clone()),
                tape.constant(dl.clone()),
            )?;
            let a = probe(tape, out.ligand, 1)?;
            let b = probe(tape, out.protein, 2)?;
            a.add(b)
        },
        COMPOSITE_TOL,
        1,
    )
}

/// Gradient of the trajectory-balance loss with respect to `log Z`.
pub fn tb_log_z_gradient(seed: u64) -> Result<GradCheckReport> {
    let library = FragmentLibrary::toy();
    let env = LigandEnv::new(library.clone(), 2)?;
    let mut store = ParamStore::new(seed);
    let policy = PolicyNet::new(&mut store, &library, ModelConfig::small(ConditioningMode::Baseline))?;
    let pocket = policy.prepare_pocket(&store, "p", &synthetic_residues(10, 2.0, seed))?;
    let reward = RewardFn::default();
    let targets = pocket_targets(&reward.config, pocket.residues());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tape = Tape::new();
    let (traj, sum_pf) = rollout(&tape, &policy, &store, &env, &pocket, &reward, targets, &mut rng)?;
    let log_pf = sum_pf.item();
    let log_pb: f64 = traj.log_pb.iter().sum();
    let r = traj.reward;
    let mut report = finite_diff_check(
        |tape, z| tb_loss(z, tape.constant(Tensor::new(vec![1, 1], vec![log_pf])?), r, log_pb),
        &Tensor::new(vec![1, 1], vec![0.3])?,
        COMPOSITE_TOL,
    )?;
    let params = finite_diff_check_params(
        &store,
        |tape, store| {
            let z = policy.log_z(tape, store, &pocket)?;
            tb_loss(z, tape.constant(Tensor::new(vec![1, 1], vec![log_pf])?), r, log_pb)
        },
        COMPOSITE_TOL,
        7,
    )?;
    report.merge(&params);
    Ok(report)
}

fn moved(residues: &[Residue], m: &RigidMotion) -> Vec<Residue> {
    residues
        .iter()
        .map(|r| Residue {
            ca: m.apply(r.ca),
            ..r.clone()
        })
        .collect()
}

/// Largest relative change of pocket embeddings, distances, docking proxy and
/// trioformer-mode policy embeddings over random rigid motions.
pub fn rigid_motion_invariance(seed: u64, motions: usize) -> Result<f64> {
    let library = FragmentLibrary::desk();
    let env = LigandEnv::new(library.clone(), 4)?;
    let mut store = ParamStore::new(seed);
    let policy = PolicyNet::new(&mut store, &library, ModelConfig::small(ConditioningMode::Trioformer))?;
    let residues = synthetic_residues(10, 3.0, seed);
    let reward = RewardFn::default();
    let mut s = env.initial_state();
    for a in [
        LigandAction::AddFragment {
            target: None,
            fragment: 0,
            fragment_ap: 0,
        },
        LigandAction::AddFragment {
            target: Some(crate::ligand::AttachSite { node: 0, ap: 1 }),
            fragment: 2,
            fragment_ap: 1,
        },
    ] {
        s = env.apply(&s, &a)?;
    }
    let mut terminal = s.clone();
    terminal.terminal = true;

    let snapshot = |res: &[Residue]| -> Result<Vec<Tensor>> {
        let pocket = policy.prepare_pocket(&store, "p", res)?;
        let tape = Tape::new();
        let emb = policy.embed(&tape, &store, &library, &pocket, &s)?;
        let q = docking_proxy(&reward.config, pocket_targets(&reward.config, res), &library, &terminal)?;
        Ok(vec![
            pocket.embedding.node_embeddings.clone(),
            pocket.graph.dist_matrix.clone(),
            Tensor::scalar(q),
            emb.nodes.value(),
            emb.graph.value(),
        ])
    };
    let base = snapshot(&residues)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..motions {
        let m = RigidMotion::random(&mut rng, 25.0);
        let other = snapshot(&moved(&residues, &m))?;
        for (a, b) in base.iter().zip(&other) {
            worst = worst.max(a.max_rel_diff(b, 1e-12));
        }
    }
    Ok(worst)
}

/// Plain-loop multi-head attention with residual: `x + Out(Attn(LN(x_q), LN(x_kv)))`.
#[allow(clippy::too_many_arguments)]
fn reference_attention(
    store: &ParamStore,
    xq: &[Vec<f64>],
    xkv: &[Vec<f64>],
    norm_q: &LayerNorm,
    norm_kv: &LayerNorm,
    q: &Linear,
    k: &Linear,
    v: &Linear,
    out: &Linear,
    heads: usize,
    head_dim: usize,
) -> Vec<Vec<f64>> {
    let ln = |x: &[f64], n: &LayerNorm| -> Vec<f64> {
        let c = x.len() as f64;
        let mean = x.iter().sum::<f64>() / c;
        let var = x.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / c;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let (g, b) = (store.data(n.gain), store.data(n.shift));
        x.iter().enumerate().map(|(i, a)| (a - mean) * s * g[i] + b[i]).collect()
    };
    let lin = |x: &[f64], l: &Linear| -> Vec<f64> {
        let w = store.data(l.weight);
        (0..l.out_dim)
            .map(|j| {
                let mut acc = l.bias.map_or(0.0, |b| store.data(b)[j]);
                for (i, xi) in x.iter().enumerate() {
                    acc += xi * w[i * l.out_dim + j];
                }
                acc
            })
            .collect()
    };
    let kv: Vec<Vec<f64>> = xkv.iter().map(|x| ln(x, norm_kv)).collect();
    let keys: Vec<Vec<f64>> = kv.iter().map(|x| lin(x, k)).collect();
    let vals: Vec<Vec<f64>> = kv.iter().map(|x| lin(x, v)).collect();
    xq.iter()
        .map(|x| {
            let qv = lin(&ln(x, norm_q), q);
            let mut o = vec![0.0; heads * head_dim];
            for h in 0..heads {
                let r = h * head_dim..(h + 1) * head_dim;
                let logits: Vec<f64> = keys
                    .iter()
                    .map(|kk| {
                        qv[r.clone()].iter().zip(&kk[r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (head_dim as f64).sqrt()
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for (j, ej) in e.iter().enumerate() {
                    for d in r.clone() {
                        o[d] += ej / z * vals[j][d];
                    }
                }
            }
            let y = lin(&o, out);
            x.iter().zip(&y).map(|(a, b)| a + b).collect()
        })
        .collect()
}

fn zero(store: &mut ParamStore, l: &Linear) {
    store.data_mut(l.weight).iter_mut().for_each(|w| *w = 0.0);
    if let Some(b) = l.bias {
        store.data_mut(b).iter_mut().for_each(|w| *w = 0.0);
    }
}

/// Max deviation of bias-ablated triangle updates and cross attention from
/// the unbiased reference.
pub fn bias_ablation(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_trio_config();
    let mut store = ParamStore::new(seed);
    let tri_p = TriangleAttention::new(&mut store, "tp", Axis::Protein, &cfg, PROTEIN_RBF_BINS)?;
    let tri_l = TriangleAttention::new(&mut store, "tl", Axis::Ligand, &cfg, LIGAND_DISTANCE_CLASSES)?;
    let cross = BiasedCrossAttention::new(&mut store, "x", &cfg)?;
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.data_mut(id).iter_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    for l in [&tri_p.pair_bias, &tri_p.dist_bias, &tri_l.pair_bias, &tri_l.dist_bias, &cross.ligand_bias, &cross.protein_bias] {
        zero(&mut store, l);
    }
    let (np, nl, cp, d) = (3, 4, cfg.pair_width, cfg.width);
    let pair = random_tensor(&mut rng, &[np, nl, cp], -1.0, 1.0);
    let hp = random_tensor(&mut rng, &[np, d], -1.0, 1.0);
    let hl = random_tensor(&mut rng, &[nl, d], -1.0, 1.0);
    let dp = random_tensor(&mut rng, &[np, np, PROTEIN_RBF_BINS], 0.0, 1.0);
    let dl = random_tensor(&mut rng, &[nl, nl, LIGAND_DISTANCE_CLASSES], 0.0, 1.0);

    let tape = Tape::new();
    let pv = tape.constant(pair.clone());
    let got_p = tri_p.forward(&tape, &store, pv, tape.constant(dp))?.value();
    let got_l = tri_l.forward(&tape, &store, pv, tape.constant(dl))?.value();
    let (got_hp, got_hl) = cross.forward(&tape, &store, tape.constant(hp.clone()), tape.constant(hl.clone()), pv)?;

    let at = |p: usize, l: usize| pair.data[(p * nl + l) * cp..(p * nl + l + 1) * cp].to_vec();
    let mut worst = 0.0f64;
    let tri = |t: &TriangleAttention, rows: Vec<Vec<f64>>| {
        reference_attention(&store, &rows, &rows, &t.norm, &t.norm, &t.query, &t.key, &t.value, &t.out, t.heads, t.head_dim)
    };
    for l in 0..nl {
        let want = tri(&tri_p, (0..np).map(|p| at(p, l)).collect());
        for (p, row) in want.iter().enumerate() {
            for (c, w) in row.iter().enumerate() {
                worst = worst.max((got_p.data[(p * nl + l) * cp + c] - w).abs());
            }
        }
    }
    for p in 0..np {
        let want = tri(&tri_l, (0..nl).map(|l| at(p, l)).collect());
        for (l, row) in want.iter().enumerate() {
            for (c, w) in row.iter().enumerate() {
                worst = worst.max((got_l.data[(p * nl + l) * cp + c] - w).abs());
            }
        }
    }
    let rows = |t: &Tensor| (0..t.shape[0]).map(|i| t.row(i).to_vec()).collect::<Vec<_>>();
    let (rp, rl) = (rows(&hp), rows(&hl));
    let a = &cross.ligand;
    let want_l = reference_attention(&store, &rl, &rp, &cross.norm_ligand, &cross.norm_protein, &a.query, &a.key, &a.value, &a.out, cfg.heads, cfg.head_dim);
    let b = &cross.protein;
    let want_p = reference_attention(&store, &rp, &rl, &cross.norm_protein, &cross.norm_ligand, &b.query, &b.key, &b.value, &b.out, cfg.heads, cfg.head_dim);
    for (got, want) in [(got_hl.value(), want_l), (got_hp.value(), want_p)] {
        for (i, row) in want.iter().enumerate() {
            for (c, w) in row.iter().enumerate() {
                worst = worst.max((got.row(i)[c] - w).abs());
            }
        }
    }
    Ok(worst)
}

/// Toy library has five terminal states, and backward probabilities of every
/// reachable desk-library state (up to four fragments) sum to one.
pub fn enumeration_consistency() -> Result<SuiteResult> {
    let toy = LigandEnv::new(FragmentLibrary::toy(), 2)?;
    let n_toy = toy.enumerate_terminal_states()?.len();
    let desk = LigandEnv::new(FragmentLibrary::desk(), 4)?;
    let mut frontier = vec![desk.initial_state()];
    let mut seen = std::collections::BTreeSet::new();
    let mut worst = 0.0f64;
    let mut states = 0usize;
    while let Some(s) = frontier.pop() {
        for a in desk.legal_actions(&s) {
            let c = desk.apply(&s, &a)?;
            if c.terminal || !seen.insert(c.canonical()) {
                continue;
            }
            let (groups, _) = desk.parents(&c);
            let total: f64 = groups
                .iter()
                .map(|(_, p, _)| desk.backward_log_prob(p, &c).map(f64::exp))
                .sum::<Result<f64>>()?;
            worst = worst.max((total - 1.0).abs());
            states += 1;
            frontier.push(c);
        }
    }
    let passed = n_toy == 5 && worst < 1e-12;
    Ok(SuiteResult::new(
        "enumeration oracle consistency",
        passed,
        format!("toy terminals = {n_toy} (expect 5); {states} desk states, max |Σ P_B − 1| = {worst:.2e}"),
    ))
}

/// Exact-recount check that an empty state cannot stop and a capped state must.
pub fn action_grammar() -> Result<SuiteResult> {
    let env = LigandEnv::new(FragmentLibrary::desk(), 1)?;
    let s0 = env.initial_state();
    let stop_on_empty = env.apply(&s0, &LigandAction::Stop).is_err();
    let first = env.legal_actions(&s0)[0];
    let s1 = env.apply(&s0, &first)?;
    let only_stop = env.legal_actions(&s1) == vec![LigandAction::Stop];
    let done: LigandState = env.apply(&s1, &LigandAction::Stop)?;
    let terminal_closed = env.legal_actions(&done).is_empty();
    Ok(SuiteResult::new(
        "action grammar",
        stop_on_empty && only_stop && terminal_closed,
        format!("stop-on-empty rejected: {stop_on_empty}, cap forces stop: {only_stop}, terminal closed: {terminal_closed}"),
    ))
}
