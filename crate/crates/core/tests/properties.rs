use std::collections::BTreeSet;

use proptest::prelude::*;

use matgraph::checkpoint::Checkpoint;
use matgraph::encoding::{blocks, FeatureSchema};
use matgraph::graph::{add_material_block, context_count, inject_context_labels, AssemblyGraph};
use matgraph::ingest::{filter_default_assemblies, parse_assembly, AssemblyRecords, ConnectionKind};
use matgraph::metrics::{accuracy, micro_f1, topk_score, PredictionSet};
use matgraph::model::{GraphInput, LayerKind, Model, ModelConfig};
use matgraph::split::{split_dataset, SplitManifest};
use matgraph::synth::{generate, SynthConfig, SynthKind};
use matgraph::training::{class_weights, WeightMode};

fn prediction_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, Vec<bool>)> {
    (2usize..6, 1usize..40).prop_flat_map(|(c, n)| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, c), n),
            prop::collection::vec(0..c, n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn line_graph(n: usize) -> AssemblyGraph {
    let schema = FeatureSchema::from_widths([(blocks::BODY_NAME, 2, true)]).unwrap();
    let mut g = AssemblyGraph {
        graph_id: format!("line{n}"),
        node_ids: (0..n).map(|i| format!("n{i}")).collect(),
        x: (0..2 * n).map(|i| i as f32).collect(),
        edge_src: vec![],
        edge_dst: vec![],
        edge_attr: vec![],
        y: (0..n).map(|i| i % 3).collect(),
        target_mask: vec![true; n],
        material_ids: (0..n).map(|i| format!("m{}", i % 3)).collect(),
        schema,
    };
    for i in 1..n {
        g.edge_src.extend([i - 1, i]);
        g.edge_dst.extend([i, i - 1]);
        g.edge_attr.extend([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn micro_f1_is_accuracy((rows, truth, mut mask) in prediction_case()) {
        mask[0] = true;
        let preds = PredictionSet::from_rows(rows).argmax();
        prop_assert_eq!(micro_f1(&preds, &truth, &mask).unwrap(), accuracy(&preds, &truth, &mask).unwrap());
    }

    #[test]
    fn topk_monotone_and_top1_is_argmax((rows, truth, mut mask) in prediction_case()) {
        mask[0] = true;
        let p = PredictionSet::from_rows(rows);
        let c = p.num_classes();
        let mut last = 0.0;
        for k in 1..=c {
            let s = topk_score(&p, &truth, &mask, k).unwrap();
            prop_assert!(s >= last);
            last = s;
        }
        prop_assert_eq!(last, 1.0);
        prop_assert_eq!(topk_score(&p, &truth, &mask, 1).unwrap(), micro_f1(&p.argmax(), &truth, &mask).unwrap());
    }

    #[test]
    fn splits_partition_ids(n in 1usize..200, frac in 0.0f64..0.5, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("a{i:03}")).collect();
        let test: Vec<String> = ids.iter().take((n as f64 * frac) as usize).cloned().collect();
        let s = split_dataset(&ids, &SplitManifest::new(seed, test.clone())).unwrap();
        prop_assert_eq!(&s.test, &test);
        let all: BTreeSet<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        let again = split_dataset(&ids, &SplitManifest::new(seed, test)).unwrap();
        prop_assert_eq!(s, again);
    }

    #[test]
    fn context_masks_partition_nodes(n in 2usize..30, ratio in 0.01f64..0.99, seed in any::<u64>()) {
        let g = add_material_block(&line_graph(n), 3).unwrap();
        let c = inject_context_labels(&g, ratio, seed).unwrap();
        let context = c.target_mask.iter().filter(|&&t| !t).count();
        prop_assert_eq!(context, context_count(ratio, n).min(n));
        let range = c.schema.block(blocks::MATERIAL_ONEHOT).unwrap();
        for i in 0..n {
            let row = &c.row(i)[range.offset..range.offset + range.width];
            let hot: f32 = row.iter().sum();
            if c.target_mask[i] {
                prop_assert_eq!(hot, 0.0);
            } else {
                prop_assert_eq!(row[c.y[i]], 1.0);
                prop_assert_eq!(hot, 1.0);
            }
        }
        prop_assert_eq!(c.width(), c.schema.node_width());
    }

    #[test]
    fn class_weights_positive(counts in prop::collection::vec(0u64..1000, 1..25)) {
        let w = class_weights(&counts, WeightMode::InverseFrequency);
        prop_assert_eq!(w.len(), counts.len());
        prop_assert!(w.iter().all(|&x| x > 0.0 && x.is_finite()));
        let same = vec![counts[0].max(1); counts.len()];
        prop_assert!(class_weights(&same, WeightMode::InverseFrequency).iter().all(|&x| x == 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthetic_documents_survive_reparsing(seed in any::<u64>(), kind in 0usize..3) {
        let kind = [SynthKind::Planted, SynthKind::Homophily, SynthKind::Taxonomy][kind];
        let s = generate(&SynthConfig::new(kind, 4, seed)).unwrap();
        for a in &s.assemblies {
            let once = parse_assembly(&serde_json::to_string(a).unwrap(), "x").unwrap();
            let twice = parse_assembly(&serde_json::to_string(&once).unwrap(), "x").unwrap();
            prop_assert_eq!(&once, &twice);
            let r = AssemblyRecords::from_raw(&once);
            prop_assert!(r.bodies.iter().all(|b| b.visible));
            // hierarchical records form one clique per occurrence
            let mut by_occ = std::collections::BTreeMap::<usize, usize>::new();
            for b in &r.bodies {
                if let Some(o) = b.occurrence {
                    *by_occ.entry(o).or_default() += 1;
                }
            }
            let expect: usize = by_occ.values().map(|m| m * (m - 1) / 2).sum();
            let hier = r.connections.iter().filter(|c| c.kind == ConnectionKind::Hierarchical).count();
            prop_assert_eq!(hier, expect);
        }
        let (kept, _) = filter_default_assemblies(s.records().unwrap(), &s.catalog);
        let (again, dropped) = filter_default_assemblies(kept.clone(), &s.catalog);
        prop_assert_eq!(again, kept);
        prop_assert!(dropped.is_empty());
    }

    #[test]
    fn checkpoint_bytes_roundtrip(seed in any::<u64>(), layers in 1usize..4, kind in 0usize..3) {
        let mut mc = ModelConfig::new(5, 4);
        mc.num_layers = layers;
        mc.hidden = 6;
        mc.seed = seed;
        mc.layer_kind = LayerKind::ALL[kind];
        let model = Model::<f32>::init(mc).unwrap();
        let g = line_graph(5);
        let g = AssemblyGraph {
            x: (0..25).map(|i| (i as f32 * 0.37).sin()).collect(),
            schema: FeatureSchema::from_widths([(blocks::BODY_NAME, 5, true)]).unwrap(),
            ..g
        };
        let fitted = serde_json::from_value(serde_json::json!({
            "norm": {"body": [], "occurrence": [], "global": []},
            "globals": {"categories": [], "industries": [], "products": []},
            "labels": {"classes": ["a", "b", "c", "OTHER"], "counts": [1, 1, 1, 0]},
            "tiers": {"tiers": [[], [], []]},
            "default_name_pattern": "^$",
            "semantic_seed": 0,
            "semantic_dim": 1,
            "visual_dim": 1
        })).unwrap();
        let ck = Checkpoint::from_model(&model, g.schema.clone(), fitted, None, None);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(&back, &ck);
        let input = GraphInput::<f32>::from_graph(&g).unwrap();
        let a = model.predict(&input).unwrap();
        let b = back.model().unwrap().predict(&input).unwrap();
        prop_assert_eq!(a.data(), b.data());
        for r in 0..a.rows() {
            let s: f32 = a.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-5);
        }
    }
}
