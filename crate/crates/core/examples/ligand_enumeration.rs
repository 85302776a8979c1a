//! Walks the fragment environment: legal actions from the empty state, one
//! short build, and the full terminal set of both bundled libraries.
//!
//! cargo run --release --example ligand_enumeration

use pocketgfn::ligand::{FragmentLibrary, LigandAction, LigandEnv};

fn main() -> pocketgfn::Result<()> {
    let desk = LigandEnv::new(FragmentLibrary::desk(), 4)?;
    let s0 = desk.initial_state();
    println!("empty state: {} legal actions", desk.legal_actions(&s0).len());

    let mut s = s0;
    for step in 0..3 {
        let actions = desk.legal_actions(&s);
        // Always take the first addition so the example is deterministic.
        let a = actions.iter().find(|a| **a != LigandAction::Stop).expect("room to grow");
        s = desk.apply(&s, a)?;
        let (parents, removable) = desk.parents(&s);
        println!(
            "after step {step}: {} ({} removable leaves, {} distinct parents)",
            s.canonical(),
            removable,
            parents.len()
        );
    }
    s = desk.apply(&s, &LigandAction::Stop)?;
    println!("terminal: {}", s.canonical());

    for (name, env) in [
        ("toy, max 2 nodes", LigandEnv::new(FragmentLibrary::toy(), 2)?),
        ("desk, max 2 nodes", LigandEnv::new(FragmentLibrary::desk(), 2)?),
        ("desk, max 3 nodes", LigandEnv::new(FragmentLibrary::desk(), 3)?),
        ("desk, max 4 nodes", LigandEnv::new(FragmentLibrary::desk(), 4)?),
    ] {
        let all = env.enumerate_terminal_states()?;
        println!("{name}: {} terminal states", all.len());
        if all.len() <= 5 {
            for k in all.keys() {
                println!("  {k}");
            }
        }
    }
    Ok(())
}
