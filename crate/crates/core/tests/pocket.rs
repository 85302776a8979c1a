use pocketgfn::autodiff::ParamStore;
use pocketgfn::geom::{self, RigidMotion};
use pocketgfn::pocket::{
    build_knn_graph, node_features, parse_pocket_jsonl, synthetic_residues, Pocket, PocketEncoder,
    PocketEncoderConfig, Residue, NUM_RESIDUE_TYPES, SCALAR_FEATURES,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn residues(max: usize) -> impl Strategy<Value = Vec<Residue>> {
    prop::collection::vec(((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 0..NUM_RESIDUE_TYPES), 2..=max).prop_map(
        |v| {
            v.into_iter()
                .enumerate()
                .map(|(index, ((x, y, z), t))| Residue {
                    index,
                    residue_type: t,
                    ca: [x, y, z],
                })
                .collect()
        },
    )
}

fn encoder(seed: u64) -> (ParamStore, PocketEncoder) {
    let mut store = ParamStore::new(seed);
    let enc = PocketEncoder::new(&mut store, "pocket", PocketEncoderConfig::default()).unwrap();
    (store, enc)
}

fn moved(res: &[Residue], m: &RigidMotion) -> Vec<Residue> {
    res.iter().map(|r| Residue { ca: m.apply(r.ca), ..r.clone() }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_picks_nearest_with_index_ties(res in residues(12), k in 1usize..14) {
        let g = build_knn_graph(&res, k).unwrap();
        let n = res.len();
        for i in 0..n {
            let nb: Vec<usize> = g.neighbors(i).iter().map(|e| e.dst).collect();
            prop_assert_eq!(nb.len(), k.min(n - 1));
            prop_assert!(!nb.contains(&i));
            // Brute force: everything outside the neighbour set is no closer
            // than the farthest neighbour (and loses ties on index).
            let far = nb.iter().map(|&j| (geom::dist(res[i].ca, res[j].ca), j)).fold((0.0, 0), |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && b.1 > a.1) { b } else { a }
            });
            for j in (0..n).filter(|j| *j != i && !nb.contains(j)) {
                let d = geom::dist(res[i].ca, res[j].ca);
                prop_assert!(d > far.0 || (d == far.0 && j > far.1));
            }
            for e in g.neighbors(i) {
                prop_assert_eq!(e.src, i);
                prop_assert_eq!(g.dist_matrix.at2(i, e.dst), e.distance);
                prop_assert_eq!(e.backbone_sep, res[i].index.abs_diff(res[e.dst].index));
            }
        }
    }

    #[test]
    fn distance_matrix_is_a_metric(res in residues(8)) {
        let g = build_knn_graph(&res, 3).unwrap();
        let d = &g.dist_matrix;
        let n = res.len();
        for i in 0..n {
            prop_assert_eq!(d.at2(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(d.at2(i, j), d.at2(j, i));
                for k in 0..n {
                    prop_assert!(d.at2(i, k) <= d.at2(i, j) + d.at2(j, k) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn encoder_ignores_rigid_motion(res in residues(10), seed in 0u64..500) {
        let (store, enc) = encoder(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = RigidMotion::random(&mut rng, 50.0);
        let a = Pocket::new("a", &res, 4, &enc, &store).unwrap();
        let b = Pocket::new("b", &moved(&res, &m), 4, &enc, &store).unwrap();
        prop_assert!(a.features.scalars.max_abs_diff(&b.features.scalars) < 1e-9);
        prop_assert!(a.embedding.node_embeddings.max_rel_diff(&b.embedding.node_embeddings, 1e-12) < 1e-6);
        for (x, y) in a.embedding.pooled.iter().zip(&b.embedding.pooled) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12));
        }
        prop_assert!(a.distance_features.max_abs_diff(&b.distance_features) < 1e-9);
    }

    #[test]
    fn encoder_is_permutation_equivariant(res in residues(10), seed in 0u64..500) {
        let (store, enc) = encoder(seed);
        let mut perm: Vec<usize> = (0..res.len()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled: Vec<Residue> = perm.iter().map(|&p| res[p].clone()).collect();
        let a = Pocket::new("a", &res, 4, &enc, &store).unwrap();
        let b = Pocket::new("b", &shuffled, 4, &enc, &store).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for (x, y) in a.embedding.node_embeddings.row(old).iter().zip(b.embedding.node_embeddings.row(new)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
        for (x, y) in a.embedding.pooled.iter().zip(&b.embedding.pooled) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn collinear_k1_neighbours() {
    let res: Vec<Residue> = [0.0, 1.0, 3.0]
        .iter()
        .enumerate()
        .map(|(i, &x)| Residue { index: i, residue_type: 0, ca: [x, 0.0, 0.0] })
        .collect();
    let g = build_knn_graph(&res, 1).unwrap();
    let nb: Vec<usize> = (0..3).map(|i| g.neighbors(i)[0].dst).collect();
    assert_eq!(nb, vec![1, 0, 1]);
}

#[test]
fn translation_keeps_edges_and_distances() {
    let res = synthetic_residues(10, 3.0, 4);
    let shifted = moved(&res, &RigidMotion::translation([5.0, 5.0, 5.0]));
    let a = build_knn_graph(&res, 4).unwrap();
    let b = build_knn_graph(&shifted, 4).unwrap();
    let pairs = |g: &pocketgfn::pocket::PocketGraph| g.edges.iter().map(|e| (e.src, e.dst)).collect::<Vec<_>>();
    assert_eq!(pairs(&a), pairs(&b));
    assert!(a.dist_matrix.max_abs_diff(&b.dist_matrix) < 1e-12);
}

#[test]
fn zero_layers_is_the_input_projection() {
    let (store, enc) = encoder(2);
    let res = synthetic_residues(6, 2.0, 2);
    let g = build_knn_graph(&res, 3).unwrap();
    let f = node_features(&res, &g);
    let e = enc.encode_layers(&store, &g, &f, 0);
    let w = store.data(store.id("pocket.in.w").unwrap());
    let b = store.data(store.id("pocket.in.b").unwrap());
    let c = b.len();
    for i in 0..res.len() {
        for j in 0..c {
            let expect: f64 = b[j] + (0..SCALAR_FEATURES).map(|k| f.scalars.row(i)[k] * w[k * c + j]).sum::<f64>();
            assert!((e.node_embeddings.row(i)[j] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn malformed_pocket_line_is_reported_with_its_number() {
    let text = "{\"index\":0,\"res\":1,\"ca\":[0,0,0]}\n{\"index\":1,\"res\":2}\n";
    let err = parse_pocket_jsonl(text, std::path::Path::new("p.jsonl")).unwrap_err().to_string();
    assert!(err.contains("p.jsonl:2"), "{err}");
}
