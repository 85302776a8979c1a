//! The command-line workflow driven from code: train on the desk config,
//! draw five sampling sets and evaluate them.
//!
//! cargo run --release --example workflow -- [steps]

use pocketgfn::app::{cmd_evaluate, cmd_sample, cmd_train, Overrides, RunConfig};
use pocketgfn::reward::EvaluationReport;

fn main() -> pocketgfn::Result<()> {
    let steps = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(300);
    let mut cfg = RunConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/desk_config.json"))?;
    cfg.apply(&Overrides {
        steps: Some(steps),
        ..Overrides::default()
    });
    cfg.evaluation.molecules_per_pocket = 20;
    let out = std::env::temp_dir().join("pocketgfn-workflow");

    let trained = cmd_train(&cfg, &out, |m| {
        if (m.step + 1) % 100 == 0 {
            println!("step {:4}  loss {:8.4}  reward {:.3}", m.step + 1, m.loss, m.mean_reward);
        }
    })?;

    let mut files = Vec::new();
    for set in 0..5 {
        let path = out.join(format!("set{set}.jsonl"));
        let s = cmd_sample(&cfg, &trained.checkpoint, cfg.evaluation.molecules_per_pocket, set, None, &path)?;
        println!("set {set}: {} molecules, partial: {}", s.records.len(), s.is_partial());
        files.push(path);
    }
    let report = cmd_evaluate(&cfg, &files)?;
    println!("{}", EvaluationReport::table_header());
    println!("{}", report.table_row(&cfg.model.mode.to_string()));
    println!("artifacts in {}", out.display());
    Ok(())
}
