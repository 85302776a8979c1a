//! Loads the bundled pockets, builds their KNN graphs and shows that the
//! frozen encoder ignores where the pocket sits in space.
//!
//! cargo run --release --example pocket_encoding

use pocketgfn::autodiff::ParamStore;
use pocketgfn::geom::RigidMotion;
use pocketgfn::pocket::{load_pocket_jsonl, Pocket, PocketEncoder, PocketEncoderConfig, Residue, DEFAULT_K};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pocketgfn::Result<()> {
    let mut store = ParamStore::new(7);
    let encoder = PocketEncoder::new(&mut store, "pocket", PocketEncoderConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    for name in ["compact", "medium", "wide"] {
        let path = format!("{}/data/pockets/{name}.jsonl", env!("CARGO_MANIFEST_DIR"));
        let residues = load_pocket_jsonl(&path)?;
        let pocket = Pocket::new(name, &residues, DEFAULT_K, &encoder, &store)?;
        let nearest = &pocket.graph.neighbors(0)[0];

        let motion = RigidMotion::random(&mut rng, 30.0);
        let moved: Vec<Residue> = residues.iter().map(|r| Residue { ca: motion.apply(r.ca), ..r.clone() }).collect();
        let again = Pocket::new(name, &moved, DEFAULT_K, &encoder, &store)?;

        println!(
            "{name:8} residues {:2}  Rg {:5.2} Å  k {}  nearest to 0: {} at {:.2} Å  embedding drift after rigid motion {:.1e}",
            pocket.len(),
            pocket.radius_of_gyration(),
            pocket.graph.degree(),
            nearest.dst,
            nearest.distance,
            pocket.embedding.node_embeddings.max_rel_diff(&again.embedding.node_embeddings, 1e-12)
        );
    }
    Ok(())
}
