use std::fs;
use std::time::Instant;

use super::checkpoint::{Checkpoint, CheckpointMeta};
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::gfn::{proportional_sampling_check, train, TrainerConfig};
use crate::ligand::{FragmentLibrary, LigandEnv};
use crate::pocket::synthetic_residues;
use crate::policy::{ConditioningMode, ModelConfig, PolicyNet};
use crate::reward::RewardFn;
use crate::verify::{self, SuiteResult, ABLATION_TOL, INVARIANCE_TOL, PRIMITIVE_TOL};

#[derive(Clone, Debug)]
pub struct SelfcheckOptions {
    pub seed: u64,
    pub train_steps: usize,
    pub samples: usize,
}

impl Default for SelfcheckOptions {
    fn default() -> Self {
        SelfcheckOptions {
            seed: 0,
            train_steps: 1500,
            samples: 100_000,
        }
    }
}

fn grad_suite(name: &str, r: &crate::autodiff::GradCheckReport) -> SuiteResult {
    SuiteResult::new(
        name,
        r.passed,
        format!(
            "{} entries, max rel err {:.2e} (tol {:.0e}) at {}",
            r.checked, r.max_rel_err, r.tol, r.worst
        ),
    )
}

fn checkpoint_integrity(seed: u64) -> Result<SuiteResult> {
    let library = FragmentLibrary::toy();
    let mut store = ParamStore::new(seed);
    let model = ModelConfig::small(ConditioningMode::Baseline);
    PolicyNet::new(&mut store, &library, model.clone())?;
    let meta = CheckpointMeta {
        model,
        max_nodes: 2,
        library,
        reward: RewardFn::default(),
        seed,
        steps: 0,
    };
    let dir = std::env::temp_dir().join(format!("pocketgfn-selfcheck-{}", std::process::id()));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("checkpoint.json");
    Checkpoint::new(meta, &store)?.save(&path)?;
    let roundtrip = Checkpoint::load(&path)?.restore()?.1.checksum() == store.checksum();

    let mut ck = Checkpoint::load(&path)?;
    let first = ck.params.values_mut().next().expect("network has parameters");
    first.data[0] += 1e-9;
    let corrupted = dir.join("corrupted.json");
    let mut text = serde_json::to_string(&ck)?;
    text.push('\n');
    fs::write(&corrupted, text).map_err(|e| Error::io(&corrupted, e))?;
    let rejected = matches!(Checkpoint::load(&corrupted), Err(Error::Checkpoint(_)));
    let _ = fs::remove_dir_all(&dir);
    Ok(SuiteResult::new(
        "checkpoint integrity",
        roundtrip && rejected,
        format!("round trip exact: {roundtrip}, corrupted checkpoint rejected: {rejected}"),
    ))
}

fn sampling_suite(opts: &SelfcheckOptions) -> Result<SuiteResult> {
    let library = FragmentLibrary::toy();
    let env = LigandEnv::new(library.clone(), 2)?;
    let mut store = ParamStore::new(opts.seed);
    let policy = PolicyNet::new(&mut store, &library, ModelConfig::small(ConditioningMode::Baseline))?;
    let pocket = policy.prepare_pocket(&store, "toy", &synthetic_residues(10, 2.0, opts.seed))?;
    let reward = RewardFn::default();
    let config = TrainerConfig {
        steps: opts.train_steps,
        batch_size: 16,
        max_nodes: 2,
        seed: opts.seed,
        ..TrainerConfig::default()
    };
    train(&config, &policy, &mut store, &env, std::slice::from_ref(&pocket), &reward, |_| Ok(()))?;
    let check = proportional_sampling_check(&policy, &store, &env, &pocket, &reward, opts.samples, opts.seed)?;
    Ok(SuiteResult::new(
        "proportional sampling (toy library)",
        check.tv < 0.05,
        format!(
            "TV = {:.4} over {} samples after {} steps (threshold 0.05)",
            check.tv, check.samples, opts.train_steps
        ),
    ))
}

/// Runs every suite; a suite that errors counts as failed.
pub fn cmd_selfcheck(opts: &SelfcheckOptions, mut report: impl FnMut(&SuiteResult)) -> Vec<SuiteResult> {
    let seed = opts.seed;
    let suites: Vec<(&str, Box<dyn Fn() -> Result<SuiteResult> + '_>)> = vec![
        (
            "primitive gradients",
            Box::new(move || {
                let all = verify::primitive_gradients(seed)?;
                let failed: Vec<&str> = all.iter().filter(|(_, r)| !r.passed).map(|(n, _)| n.as_str()).collect();
                let worst = all.iter().map(|(_, r)| r.max_rel_err).fold(0.0, f64::max);
                Ok(SuiteResult::new(
                    "primitive gradients",
                    failed.is_empty(),
                    format!(
                        "{} primitives, max rel err {worst:.2e} (tol {PRIMITIVE_TOL:.0e}); failed: {failed:?}",
                        all.len()
                    ),
                ))
            }),
        ),
        (
            "trioformer layer gradient",
            Box::new(move || Ok(grad_suite("trioformer layer gradient", &verify::trioformer_layer_gradient(seed)?))),
        ),
        (
            "trajectory-balance gradient",
            Box::new(move || Ok(grad_suite("trajectory-balance gradient", &verify::tb_log_z_gradient(seed)?))),
        ),
        (
            "rigid-motion invariance",
            Box::new(move || {
                let worst = verify::rigid_motion_invariance(seed, 20)?;
                Ok(SuiteResult::new(
                    "rigid-motion invariance",
                    worst < INVARIANCE_TOL,
                    format!("20 motions, max rel change {worst:.2e} (tol {INVARIANCE_TOL:.0e})"),
                ))
            }),
        ),
        (
            "bias ablation",
            Box::new(move || {
                let worst = verify::bias_ablation(seed)?;
                Ok(SuiteResult::new(
                    "bias ablation",
                    worst < ABLATION_TOL,
                    format!("max abs deviation from reference {worst:.2e} (tol {ABLATION_TOL:.0e})"),
                ))
            }),
        ),
        ("enumeration oracle consistency", Box::new(verify::enumeration_consistency)),
        ("action grammar", Box::new(verify::action_grammar)),
        ("checkpoint integrity", Box::new(move || checkpoint_integrity(seed))),
        ("proportional sampling (toy library)", Box::new(move || sampling_suite(opts))),
    ];
    suites
        .into_iter()
        .map(|(name, run)| {
            let t0 = Instant::now();
            let mut r = run().unwrap_or_else(|e| SuiteResult::new(name, false, format!("error: {e}")));
            r.detail = format!("{} [{:.1}s]", r.detail, t0.elapsed().as_secs_f64());
            report(&r);
            r
        })
        .collect()
}
