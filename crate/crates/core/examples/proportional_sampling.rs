//! Trains on the two-fragment toy library and compares sampled terminal
//! frequencies with exact `R/Z`.
//!
//! cargo run --release --example proportional_sampling -- [steps] [samples]

use std::time::Instant;

use pocketgfn::autodiff::ParamStore;
use pocketgfn::gfn::{proportional_sampling_check, terminal_distribution, total_variation, train, TrainerConfig};
use pocketgfn::ligand::{FragmentLibrary, LigandEnv};
use pocketgfn::pocket::load_pocket_jsonl;
use pocketgfn::policy::{ConditioningMode, ModelConfig, PolicyNet};
use pocketgfn::reward::RewardFn;

fn main() -> pocketgfn::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let steps = args.first().copied().unwrap_or(1500);
    let samples = args.get(1).copied().unwrap_or(100_000);

    let library = FragmentLibrary::toy();
    let env = LigandEnv::new(library.clone(), 2)?;
    let mut store = ParamStore::new(0);
    let policy = PolicyNet::new(&mut store, &library, ModelConfig::small(ConditioningMode::Baseline))?;
    let residues = load_pocket_jsonl(concat!(env!("CARGO_MANIFEST_DIR"), "/data/pockets/compact.jsonl"))?;
    let pocket = policy.prepare_pocket(&store, "compact", &residues)?;
    let reward = RewardFn::default();

    let config = TrainerConfig {
        steps,
        batch_size: 16,
        learning_rate: 1e-3,
        log_z_learning_rate: 1e-2,
        max_nodes: 2,
        seed: 0,
    };
    let t0 = Instant::now();
    train(&config, &policy, &mut store, &env, std::slice::from_ref(&pocket), &reward, |m| {
        if m.step % 250 == 0 {
            println!("step {:5}  loss {:.5}  log_Z {:.3}  reward {:.4}", m.step, m.loss, m.log_z_mean, m.mean_reward);
        }
        Ok(())
    })?;
    println!("trained {steps} steps in {:.1}s", t0.elapsed().as_secs_f64());

    let exact = terminal_distribution(&policy, &store, &env, &pocket)?;
    let t1 = Instant::now();
    let check = proportional_sampling_check(&policy, &store, &env, &pocket, &reward, samples, 1)?;
    println!("sampled {samples} in {:.1}s", t1.elapsed().as_secs_f64());
    for (k, target) in &check.target {
        println!(
            "{k:40} target {target:.4}  policy {:.4}  empirical {:.4}",
            exact.get(k).copied().unwrap_or(0.0),
            check.empirical.get(k).copied().unwrap_or(0.0)
        );
    }
    println!("exact TV {:.4}  empirical TV {:.4}", total_variation(&exact, &check.target), check.tv);
    Ok(())
}
