//! Scores every two-node desk molecule against the three bundled pockets and
//! reports the evaluation metrics on the best few.
//!
//! cargo run --release --example metrics

use pocketgfn::ligand::{FragmentLibrary, LigandEnv};
use pocketgfn::pocket::load_pocket_jsonl;
use pocketgfn::reward::{diversity_of_states, pocket_targets, tanimoto_distance, fingerprint, top_k_mean, RewardFn, RewardWeights};

fn main() -> pocketgfn::Result<()> {
    let library = FragmentLibrary::desk();
    let env = LigandEnv::new(library.clone(), 2)?;
    let states: Vec<_> = env.enumerate_terminal_states()?.into_values().collect();
    let reward = RewardFn {
        weights: RewardWeights::new(0.6, 0.2, 0.2)?,
        ..RewardFn::default()
    };

    for name in ["compact", "medium", "wide"] {
        let residues = load_pocket_jsonl(format!("{}/data/pockets/{name}.jsonl", env!("CARGO_MANIFEST_DIR")))?;
        let targets = pocket_targets(&reward.config, &residues);
        let mut scored = states
            .iter()
            .map(|s| Ok((reward.scores(targets, &library, s)?, s)))
            .collect::<pocketgfn::Result<Vec<_>>>()?;
        scored.sort_by(|a, b| a.0.ds.total_cmp(&b.0.ds));
        let best = &scored[0];
        let ds: Vec<f64> = scored.iter().map(|(m, _)| m.ds).collect();
        let top: Vec<_> = scored.iter().take(5).map(|(_, s)| (*s).clone()).collect();
        println!(
            "{name:8} target size {:5.2} polarity {:.2}  best {} DS {:.2} QED {:.2} SA {:.2}  top-5 DS {:.2}  top-5 diversity {:.3}",
            targets.size,
            targets.polarity,
            best.1.canonical(),
            best.0.ds,
            best.0.qed,
            best.0.sa,
            top_k_mean(&ds, 5)?,
            diversity_of_states(&top)?
        );
    }

    let (a, b) = (&states[0], &states[states.len() - 1]);
    println!(
        "Tanimoto distance {} vs {}: {:.3}",
        a.canonical(),
        b.canonical(),
        tanimoto_distance(&fingerprint(a), &fingerprint(b))?
    );
    Ok(())
}
