//! One forward pass of a trioformer stack on a real pocket and a three-fragment
//! ligand, plus the pooled graph and edge embeddings built from its output.
//!
//! cargo run --release --example trioformer_forward

use pocketgfn::autodiff::{ParamStore, Tape, Tensor};
use pocketgfn::ligand::{adjacency_matrix, AttachSite, FragmentLibrary, LigandAction, LigandEnv};
use pocketgfn::pocket::{load_pocket_jsonl, Pocket, PocketEncoder, PocketEncoderConfig, DEFAULT_K};
use pocketgfn::trioformer::{
    edge_embeddings, ligand_distance_features, pool_graph_embedding, Trioformer, TrioformerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pocketgfn::Result<()> {
    let mut store = ParamStore::new(3);
    let encoder = PocketEncoder::new(&mut store, "pocket", PocketEncoderConfig::default())?;
    let cfg = TrioformerConfig::default();
    let stack = Trioformer::new(&mut store, "trio", cfg.clone())?;

    let residues = load_pocket_jsonl(concat!(env!("CARGO_MANIFEST_DIR"), "/data/pockets/medium.jsonl"))?;
    let pocket = Pocket::new("medium", &residues, DEFAULT_K, &encoder, &store)?;

    let env = LigandEnv::new(FragmentLibrary::desk(), 4)?;
    let mut s = env.initial_state();
    for (target, fragment) in [(None, 0), (Some((0, 0)), 1), (Some((0, 1)), 2)] {
        let a = LigandAction::AddFragment {
            target: target.map(|(node, ap)| AttachSite { node, ap }),
            fragment,
            fragment_ap: 0,
        };
        s = env.apply(&s, &a)?;
    }

    // Random stand-ins for the projected protein and ligand node features.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut random = |rows: usize| {
        let data = (0..rows * cfg.width).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(vec![rows, cfg.width], data)
    };
    let tape = Tape::new();
    let h_p = tape.constant(random(pocket.len())?);
    let h_l = tape.constant(random(s.len())?);
    let out = stack.forward(
        &tape,
        &store,
        h_p,
        h_l,
        tape.constant(pocket.distance_features.clone()),
        tape.constant(ligand_distance_features(&adjacency_matrix(&s))),
    )?;

    println!("ligand {}", s.canonical());
    println!("protein track {:?}", out.protein.shape());
    println!("ligand track  {:?}", out.ligand.shape());
    println!("pair tensor   {:?}", out.pair.map(|p| p.shape().to_vec()));
    let g = pool_graph_embedding(out.ligand)?;
    println!("graph embedding {:?}", g.shape());
    let edges: Vec<(usize, usize)> = s.edges.iter().flat_map(|e| [(e.a, e.b), (e.b, e.a)]).collect();
    let e = edge_embeddings(out.ligand, &edges)?.expect("ligand has bonds").value();
    let w = e.shape[1];
    for (k, pair) in edges.chunks(2).enumerate() {
        let fwd = &e.data[2 * k * w..(2 * k + 1) * w];
        let rev = &e.data[(2 * k + 1) * w..(2 * k + 2) * w];
        println!("edge {:?}: e_ij == e_ji {}", pair[0], fwd == rev);
    }
    Ok(())
}
