use std::collections::BTreeMap;

use pocketgfn::autodiff::{ParamStore, Tape, Tensor};
use pocketgfn::gfn::{
    rng_stream, sample_terminal, sample_trajectory, target_distribution, tb_loss, terminal_distribution,
    total_variation, train, trajectory_balance_loss, CachedSampler, Trajectory, TrainerConfig,
};
use pocketgfn::ligand::{FragmentLibrary, LigandAction, LigandEnv};
use pocketgfn::pocket::{load_pocket_jsonl, synthetic_residues, Pocket};
use pocketgfn::policy::{ConditioningMode, ModelConfig, PolicyNet};
use pocketgfn::reward::RewardFn;
use proptest::prelude::*;

fn toy(seed: u64, max_nodes: usize) -> (LigandEnv, ParamStore, PolicyNet, Pocket) {
    let library = FragmentLibrary::toy();
    let env = LigandEnv::new(library.clone(), max_nodes).unwrap();
    let mut store = ParamStore::new(seed);
    let policy = PolicyNet::new(&mut store, &library, ModelConfig::small(ConditioningMode::Baseline)).unwrap();
    let residues = load_pocket_jsonl(concat!(env!("CARGO_MANIFEST_DIR"), "/data/pockets/compact.jsonl")).unwrap();
    let pocket = policy.prepare_pocket(&store, "compact", &residues).unwrap();
    (env, store, policy, pocket)
}

fn one_step(log_pf: f64, reward: f64) -> Trajectory {
    Trajectory {
        pocket_id: "p".into(),
        states: vec![],
        actions: vec![],
        log_pf: vec![log_pf],
        log_pb: vec![0.0],
        reward,
    }
}

#[test]
fn tb_loss_vanishes_at_the_enumerated_optimum() {
    // Two terminals with rewards 1 and 3: Z = 4, π = [1/4, 3/4].
    let z = 4.0f64.ln();
    assert!(trajectory_balance_loss(&one_step(0.25f64.ln(), 1.0), z).unwrap() < 1e-30);
    assert!(trajectory_balance_loss(&one_step(0.75f64.ln(), 3.0), z).unwrap() < 1e-30);
    assert!(trajectory_balance_loss(&one_step(0.5f64.ln(), 3.0), z).unwrap() > 0.0);
}

proptest! {
    #[test]
    fn tb_loss_is_a_square_and_tape_agrees(log_z in -5.0f64..5.0, pf in -8.0f64..0.0, pb in -3.0f64..0.0, r in 1e-6f64..10.0) {
        let t = Trajectory { log_pb: vec![pb], ..one_step(pf, r) };
        let l = trajectory_balance_loss(&t, log_z).unwrap();
        prop_assert!(l >= 0.0);
        let tape = Tape::new();
        let z = tape.var(Tensor::scalar(log_z));
        let v = tb_loss(z, tape.constant(Tensor::scalar(pf)), r, pb).unwrap();
        prop_assert!((v.item() - l).abs() <= 1e-12 * l.max(1.0));
        tape.backward(v).unwrap();
        // d/dlogZ (logZ + ΣlogPF − logR − ΣlogPB)² = 2·residual
        let d = log_z + pf - r.ln() - pb;
        prop_assert!((z.grad().unwrap().data[0] - 2.0 * d).abs() <= 1e-9 * d.abs().max(1.0));
    }

    #[test]
    fn sampled_trajectories_are_consistent(seed in any::<u64>(), max_nodes in 1usize..4) {
        let library = FragmentLibrary::desk();
        let env = LigandEnv::new(library.clone(), max_nodes).unwrap();
        let mut store = ParamStore::new(seed % 16);
        let policy = PolicyNet::new(&mut store, &library, ModelConfig::small(ConditioningMode::Trioformer)).unwrap();
        let pocket = policy.prepare_pocket(&store, "p", &synthetic_residues(6, 2.0, seed)).unwrap();
        let reward = RewardFn::default();
        let mut rng = rng_stream(seed, &[9]);
        let t = sample_trajectory(&policy, &store, &env, &pocket, &reward, &mut rng).unwrap();
        prop_assert!(t.validate(&env).is_ok());
        for s in &t.states {
            prop_assert!(s.validate(&library).is_ok());
        }
        for (k, w) in t.states.windows(2).enumerate() {
            prop_assert_eq!(t.log_pb[k], env.backward_log_prob(&w[0], &w[1]).unwrap());
            prop_assert!(t.log_pf[k] <= 1e-12);
        }
        let again = sample_trajectory(&policy, &store, &env, &pocket, &reward, &mut rng_stream(seed, &[9])).unwrap();
        prop_assert_eq!(t, again);
    }
}

#[test]
fn tb_gradient_wrt_log_z() {
    let (log_z, pf, pb, r) = (0.3, -1.2, -0.4, 2.5);
    let tape = Tape::new();
    let z = tape.var(Tensor::scalar(log_z));
    let v = tb_loss(z, tape.constant(Tensor::scalar(pf)), r, pb).unwrap();
    tape.backward(v).unwrap();
    let analytic = z.grad().unwrap().data[0];
    let h = 1e-6;
    let f = |lz: f64| (lz + pf - f64::ln(r) - pb).powi(2);
    let numeric = (f(log_z + h) - f(log_z - h)) / (2.0 * h);
    assert!((analytic - numeric).abs() / numeric.abs() < 1e-6);
}

#[test]
fn one_node_cap_gives_add_then_stop() {
    let (env, store, policy, pocket) = toy(0, 1);
    for seed in 0..20 {
        let t = sample_trajectory(&policy, &store, &env, &pocket, &RewardFn::default(), &mut rng_stream(seed, &[])).unwrap();
        assert_eq!(t.actions.len(), 2);
        assert!(matches!(t.actions[0], LigandAction::AddFragment { target: None, .. }));
        assert_eq!(t.actions[1], LigandAction::Stop);
    }
}

#[test]
fn zero_steps_leave_parameters_at_initialization() {
    let (env, mut store, policy, pocket) = toy(3, 2);
    let before = store.checksum();
    let cfg = TrainerConfig { steps: 0, max_nodes: 2, ..TrainerConfig::default() };
    let log = train(&cfg, &policy, &mut store, &env, &[pocket], &RewardFn::default(), |_| Ok(())).unwrap();
    assert!(log.is_empty());
    assert_eq!(store.checksum(), before);
}

#[test]
fn training_is_reproducible_and_reduces_loss() {
    let run = || {
        let (env, mut store, policy, pocket) = toy(0, 2);
        let cfg = TrainerConfig { steps: 2000, batch_size: 16, max_nodes: 2, seed: 7, ..TrainerConfig::default() };
        let log = train(&cfg, &policy, &mut store, &env, &[pocket], &RewardFn::default(), |_| Ok(())).unwrap();
        (log, store.checksum())
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    let window = |xs: &[pocketgfn::gfn::StepMetrics]| xs.iter().map(|m| m.loss).sum::<f64>() / xs.len() as f64;
    let (first, last) = (window(&a[..100]), window(&a[a.len() - 100..]));
    assert!(first >= 10.0 * last, "loss went from {first} to {last}");
}

#[test]
fn exact_distribution_matches_both_samplers() {
    let (env, store, policy, pocket) = toy(1, 2);
    let exact = terminal_distribution(&policy, &store, &env, &pocket).unwrap();
    assert!((exact.values().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(exact.len(), 5);

    let n = 40_000;
    let mut cached = CachedSampler::new(&policy, &store, &env, &pocket);
    let mut rng = rng_stream(0, &[1]);
    let mut a: BTreeMap<_, f64> = BTreeMap::new();
    for _ in 0..n {
        *a.entry(cached.sample(&mut rng).unwrap().canonical()).or_default() += 1.0 / n as f64;
    }
    let mut rng = rng_stream(0, &[2]);
    let mut b: BTreeMap<_, f64> = BTreeMap::new();
    for _ in 0..n / 4 {
        *b.entry(sample_terminal(&policy, &store, &env, &pocket, &mut rng).unwrap().canonical()).or_default() += 4.0 / n as f64;
    }
    assert!(total_variation(&exact, &a) < 0.02, "cached sampler TV {}", total_variation(&exact, &a));
    assert!(total_variation(&exact, &b) < 0.04, "plain sampler TV {}", total_variation(&exact, &b));
}

#[test]
fn constant_reward_gives_uniform_target() {
    let (env, _, _, pocket) = toy(0, 2);
    let reward = RewardFn { floor: 1.0, ..RewardFn::default() };
    let t = target_distribution(&env, &pocket, &reward).unwrap();
    assert_eq!(t.len(), 5);
    assert!(t.values().all(|p| (p - 0.2).abs() < 1e-15));
}

#[test]
fn untrained_policy_is_far_from_target() {
    let (env, store, policy, pocket) = toy(0, 2);
    let exact = terminal_distribution(&policy, &store, &env, &pocket).unwrap();
    let target = target_distribution(&env, &pocket, &RewardFn::default()).unwrap();
    let tv = total_variation(&exact, &target);
    assert!(tv > 0.2, "untrained TV {tv}");
}
