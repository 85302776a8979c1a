//! Trains baseline and trioformer policies on a compact and a wide pocket and
//! compares the exact terminal distributions they induce for each pocket.
//!
//! cargo run --release --example conditioning -- [steps]

use std::time::Instant;

use pocketgfn::autodiff::ParamStore;
use pocketgfn::gfn::{terminal_distribution, total_variation, train, TrainerConfig};
use pocketgfn::ligand::{FragmentLibrary, LigandEnv};
use pocketgfn::pocket::load_pocket_jsonl;
use pocketgfn::policy::{ConditioningMode, ModelConfig, PolicyNet};
use pocketgfn::reward::{pocket_targets, RewardFn};

fn main() -> pocketgfn::Result<()> {
    let steps = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1000);
    let library = FragmentLibrary::desk();
    let env = LigandEnv::new(library.clone(), 3)?;
    let reward = RewardFn::default();
    let pockets: Vec<_> = ["compact", "wide"]
        .iter()
        .map(|n| Ok((*n, load_pocket_jsonl(format!("{}/data/pockets/{n}.jsonl", env!("CARGO_MANIFEST_DIR")))?)))
        .collect::<pocketgfn::Result<_>>()?;
    let states = env.enumerate_terminal_states()?;

    for mode in [ConditioningMode::Baseline, ConditioningMode::Trioformer] {
        let mut store = ParamStore::new(0);
        let policy = PolicyNet::new(&mut store, &library, ModelConfig::small(mode))?;
        let prepared = pockets
            .iter()
            .map(|(n, r)| policy.prepare_pocket(&store, n, r))
            .collect::<pocketgfn::Result<Vec<_>>>()?;
        let config = TrainerConfig {
            steps,
            max_nodes: 3,
            ..TrainerConfig::default()
        };
        let t0 = Instant::now();
        train(&config, &policy, &mut store, &env, &prepared, &reward, |_| Ok(()))?;
        let elapsed = t0.elapsed().as_secs_f64();

        let mut dists = Vec::new();
        for (pocket, (name, residues)) in prepared.iter().zip(&pockets) {
            let p = terminal_distribution(&policy, &store, &env, pocket)?;
            let targets = pocket_targets(&reward.config, residues);
            let mut mean_ds = 0.0;
            for (k, prob) in &p {
                mean_ds += prob * reward.scores(targets, &library, &states[k])?.ds;
            }
            println!("{mode:10} {name:8} Rg {:5.2}  expected DS {mean_ds:7.3}", pocket.radius_of_gyration());
            dists.push(p);
        }
        println!(
            "{mode:10} trained {steps} steps in {elapsed:.1}s; TV(compact, wide) = {:.3}",
            total_variation(&dists[0], &dists[1])
        );
    }
    Ok(())
}
