use std::collections::BTreeMap;
use std::path::PathBuf;

use matgraph::catalog::{resolve_material, MaterialCatalog};
use matgraph::corpus::{ingest_dir, BuildOptions, Corpus};
use matgraph::encoding::EmbeddingTable;
use matgraph::graph::{validate_graph, Validity};
use matgraph::ingest::{extract_bodies, extract_connections, parse_assembly, ConnectionKind};
use matgraph::split::SplitManifest;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn gearbox() -> matgraph::ingest::RawAssembly {
    let text = std::fs::read_to_string(fixture("gearbox.json")).unwrap();
    parse_assembly(&text, "fallback").unwrap()
}

fn catalog() -> MaterialCatalog {
    MaterialCatalog::load(fixture("catalog.json")).unwrap()
}

#[test]
fn gearbox_raw_counts() {
    let a = gearbox();
    assert_eq!(a.assembly_id, "gearbox");
    assert_eq!(a.bodies.len(), 7);
    assert_eq!(a.connection_count(), 5);
}

#[test]
fn gearbox_records_by_hand() {
    let a = gearbox();
    let bodies = extract_bodies(&a);
    let ids: Vec<&str> = bodies.iter().map(|b| b.uuid.as_str()).collect();
    assert_eq!(ids, ["b1", "b2", "b3", "b4", "b5", "b6"]);
    let depths: Vec<usize> = bodies.iter().map(|b| b.depth).collect();
    assert_eq!(depths, [0, 1, 1, 1, 2, 2]);
    assert_eq!(bodies[0].occurrence_name, "");
    assert_eq!(bodies[4].occurrence_name, "Output Stage");

    let conns = extract_connections(&a, &bodies);
    let count = |k| conns.iter().filter(|c| c.kind == k).count();
    // b5-b7 contact touches the invisible body
    assert_eq!(count(ConnectionKind::Contact), 2);
    assert_eq!(count(ConnectionKind::Joint), 2);
    // {b2,b3,b4} gives 3 pairs, {b5,b6} gives 1
    assert_eq!(count(ConnectionKind::Hierarchical), 4);
}

#[test]
fn gearbox_labels_resolve() {
    let a = gearbox();
    let c = catalog();
    let labels: Vec<(String, bool)> = extract_bodies(&a)
        .iter()
        .map(|b| {
            let r = resolve_material(b, &c);
            (r.material_id, r.is_default)
        })
        .collect();
    let expect = [
        ("PrismMaterial-002", false),
        ("PrismMaterial-018", true),
        ("Prism-Appearance-Chrome", false),
        ("Prism-Appearance-Chrome", false),
        ("PrismMaterial-007", false),
        ("PrismMaterial-007", false),
    ];
    for (got, want) in labels.iter().zip(expect) {
        assert_eq!((got.0.as_str(), got.1), want);
    }
}

#[test]
fn gearbox_corpus_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("assemblies");
    std::fs::create_dir_all(&src).unwrap();
    std::fs::copy(fixture("gearbox.json"), src.join("gearbox.json")).unwrap();
    let c = catalog();
    let (records, report) = ingest_dir(&src, &c).unwrap();
    assert_eq!(report.kept, ["gearbox"]);
    let mut vectors = BTreeMap::new();
    vectors.insert("gear".to_string(), vec![1.0, 0.0, 0.0, 0.0]);
    vectors.insert("shaft".to_string(), vec![0.0, 1.0, 0.0, 0.0]);
    let semantic = EmbeddingTable::new(4, vectors).unwrap();
    let options = BuildOptions {
        visual_dim: 8,
        ..BuildOptions::default()
    };
    let corpus = Corpus::build(&records, &c, &semantic, None, &SplitManifest::new(0, vec![]), &options).unwrap();
    let g = &corpus.graphs["gearbox"];
    assert_eq!(g.num_nodes(), 6);
    assert_eq!(g.num_connections(), 8);
    assert_eq!(g.num_edges(), 16);
    assert_eq!(g.width(), corpus.manifest.schema.node_width());
    assert_eq!(validate_graph(g), Validity::Keep);

    let out = dir.path().join("corpus");
    corpus.save(&out).unwrap();
    let back = Corpus::load(&out).unwrap();
    assert_eq!(back, corpus);
}

#[test]
fn dangling_reference_names_the_uuid() {
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fixture("gearbox.json")).unwrap()).unwrap();
    doc["contacts"][0]["body_two"] = "ghost".into();
    let err = parse_assembly(&doc.to_string(), "x").unwrap_err();
    assert!(err.to_string().contains("ghost"), "{err}");
}

#[test]
fn malformed_json_reports_offset() {
    let err = parse_assembly("{\"tree\": [", "x").unwrap_err();
    assert!(matches!(err, matgraph::Error::Parse { .. }), "{err}");
}
