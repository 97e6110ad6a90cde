use pdgsym::corpus::{random_programs, GenConfig};
use pdgsym::ir::{parse, CodeUnit};
use pdgsym::model::{read_checkpoint, write_checkpoint, Features, GaModel, ModelConfig};
use pdgsym::pdg::{build_pdg, DistanceMatrix};
use pdgsym::symmetry::{apply, is_linear_extension, sample_reordering, BlockPermutation};
use proptest::prelude::*;

fn program(seed: u64) -> CodeUnit {
    random_programs(&GenConfig::default(), 1, seed).pop().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn render_round_trips(seed in any::<u64>()) {
        let unit = program(seed);
        prop_assert_eq!(parse(&unit.render()).unwrap(), unit);
    }

    #[test]
    fn reorderings_are_linear_extensions(seed in any::<u64>(), perm_seed in any::<u64>(), percent in 0u32..=100) {
        let unit = program(seed);
        let g = build_pdg(&unit);
        let perm = sample_reordering(&g, percent, perm_seed).unwrap();
        prop_assert!(is_linear_extension(&g, &perm));
        if percent == 0 {
            prop_assert!(perm.is_identity());
        }
    }

    #[test]
    fn rebuilt_graph_is_the_relabelled_graph(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let unit = program(seed);
        let g = build_pdg(&unit);
        let perm = sample_reordering(&g, 100, perm_seed).unwrap();
        let moved = apply(&perm, &unit).unwrap();
        let h = build_pdg(&moved);
        prop_assert_eq!(&h, &g.relabel(perm.as_slice()));
        prop_assert_eq!(DistanceMatrix::build(&h), DistanceMatrix::build(&g).permuted(perm.as_slice()));
    }

    #[test]
    fn rebuilt_features_are_permuted_features(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let unit = program(seed);
        let vocab = ModelConfig::default().vocab();
        let perm = sample_reordering(&build_pdg(&unit), 100, perm_seed).unwrap();
        let tm = BlockPermutation::new(perm.clone(), &unit).unwrap();
        let moved = apply(&perm, &unit).unwrap();
        let want = Features::from_unit(&unit, &vocab).permuted(tm.tokens().as_slice());
        prop_assert_eq!(Features::from_unit(&moved, &vocab), want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn encoder_is_equivariant(seed in any::<u64>(), perm_seed in any::<u64>(), model_seed in 0u64..8) {
        let unit = program(seed);
        let model = GaModel::new(ModelConfig { seed: model_seed, ..ModelConfig::small() }).unwrap();
        let vocab = model.config().vocab();
        let perm = sample_reordering(&build_pdg(&unit), 100, perm_seed).unwrap();
        let tm = BlockPermutation::new(perm.clone(), &unit).unwrap();
        let moved = apply(&perm, &unit).unwrap();
        let e = model.encode(&Features::from_unit(&unit, &vocab)).unwrap();
        let e_moved = model.encode(&Features::from_unit(&moved, &vocab)).unwrap();
        prop_assert!(e.permute_rows(tm.tokens().as_slice()).max_abs_diff(&e_moved) < 1e-9);
        let a = model.predict_unit(&Features::from_unit(&unit, &vocab)).unwrap();
        let b = model.predict_unit(&Features::from_unit(&moved, &vocab)).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn checkpoints_round_trip_bitwise(model_seed in any::<u64>(), residual in any::<bool>()) {
        let model = GaModel::new(ModelConfig { seed: model_seed, residual, ..ModelConfig::small() }).unwrap();
        let meta = serde_json::json!({ "seed": model_seed });
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &model, &meta).unwrap();
        let (back, back_meta) = read_checkpoint(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back_meta, &meta);
        prop_assert_eq!(back.config(), model.config());
        for (a, b) in back.params().iter().zip(model.params()) {
            prop_assert_eq!(a.shape(), b.shape());
            prop_assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back, &meta).unwrap();
        prop_assert_eq!(again, bytes);
    }
}
