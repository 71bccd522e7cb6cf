use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

const SUBCOMMANDS: [&str; 10] = [
    "ingest",
    "build-graphs",
    "stats",
    "train",
    "evaluate",
    "ablate",
    "experiment",
    "grid",
    "synth",
    "serve",
];

fn matgraph(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matgraph"))
        .env_remove("MATGRAPH_OUT")
        .arg("--out-dir")
        .arg(out)
        .arg("--log-level")
        .arg("warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = matgraph(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn help(sub: &str) -> String {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_matgraph"));
    cmd.env_remove("MATGRAPH_OUT");
    if !sub.is_empty() {
        cmd.arg(sub);
    }
    let o = cmd.arg("--help").output().unwrap();
    assert!(o.status.success());
    String::from_utf8(o.stdout).unwrap()
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

#[test]
fn help_matches_golden_files() {
    for sub in std::iter::once("").chain(SUBCOMMANDS) {
        let text = help(sub);
        let name = if sub.is_empty() { "matgraph" } else { sub };
        let path = golden_dir().join(format!("{name}.txt"));
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::write(&path, &text).unwrap();
        }
        let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert_eq!(text, want, "help for {name} drifted; rerun with UPDATE_GOLDEN=1 after checking");
    }
}

/// Splits long help into option entries (flag line plus description).
fn option_entries(text: &str) -> Vec<String> {
    let mut entries: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        let t = line.trim_start();
        let indented = line.starts_with("  ");
        if indented && t.starts_with('-') {
            entries.extend(current.take());
            current = Some(t.to_string());
        } else if !indented {
            entries.extend(current.take());
        } else if let Some(c) = current.as_mut() {
            c.push(' ');
            c.push_str(t);
        }
    }
    entries.extend(current);
    entries
}

#[test]
fn every_flag_documents_a_default() {
    for sub in std::iter::once("").chain(SUBCOMMANDS) {
        let entries = option_entries(&help(sub));
        assert!(entries.iter().any(|e| e.starts_with("--seed")), "{sub}: global flags missing");
        for e in entries {
            if e.starts_with("-h, --help") || e.starts_with("-V, --version") {
                continue;
            }
            assert!(e.contains("[default:"), "{sub}: no default in {e:?}");
        }
    }
}

#[test]
fn missing_input_is_a_usage_error_naming_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    for (args, flag) in [
        (vec!["train", "--corpus", "/no/such/corpus"], "--corpus"),
        (vec!["ingest", "--assemblies", "/no/such/dir"], "--assemblies"),
        (vec!["evaluate"], "--corpus"),
        (vec!["serve", "--checkpoint", "/no/such.ckpt"], "--checkpoint"),
    ] {
        let o = matgraph(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(flag), "{args:?}");
    }
    let o = matgraph(dir.path(), &["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_input_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let assemblies = dir.path().join("in");
    std::fs::create_dir_all(&assemblies).unwrap();
    let catalog = dir.path().join("bad_catalog.json");
    std::fs::write(&catalog, "{ not json").unwrap();
    let o = matgraph(
        dir.path(),
        &["ingest", "--assemblies", assemblies.to_str().unwrap(), "--catalog", catalog.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ingest_fixture_tally() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("fixtures");
    std::fs::create_dir_all(&src).unwrap();
    let text = std::fs::read_to_string(core_fixture("gearbox.json")).unwrap();
    std::fs::write(src.join("gearbox.json"), &text).unwrap();
    let mut plain: serde_json::Value = serde_json::from_str(&text).unwrap();
    plain["assembly_id"] = "gearbox-plain".into();
    for body in plain["bodies"].as_object_mut().unwrap().values_mut() {
        body["material_id"] = "PrismMaterial-018".into();
        body["appearance_id"] = "Prism-Appearance-Default".into();
    }
    std::fs::write(src.join("gearbox-plain.json"), plain.to_string()).unwrap();
    std::fs::write(src.join("broken.json"), "{\"tree\": [").unwrap();
    let out = dir.path().join("out");
    let stdout = ok(
        &out,
        &["ingest", "--assemblies", src.to_str().unwrap(), "--catalog", core_fixture("catalog.json").to_str().unwrap()],
    );
    assert!(stdout.contains("files 3, kept 1, dropped 1 (all default material), failed 1"), "{stdout}");
    assert!(out.join("records.json").exists());
}

fn chain_assembly(id: &str, n: usize) -> serde_json::Value {
    let ids: Vec<String> = (0..n).map(|i| format!("{id}-b{i}")).collect();
    let bodies: serde_json::Map<String, serde_json::Value> = ids
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let material = if i % 2 == 0 { "PrismMaterial-002" } else { "PrismMaterial-007" };
            (
                b.clone(),
                json!({"name": format!("Plate {i}"), "material_id": material, "appearance_id": "Prism-Appearance-Default",
                       "physical_properties": {"surface_area": 0.01 * (i + 1) as f64, "volume": 0.001}}),
            )
        })
        .collect();
    let contacts: Vec<serde_json::Value> = ids.windows(2).map(|w| json!({"body_one": w[0], "body_two": w[1]})).collect();
    json!({"assembly_id": id, "tree": {"bodies": ids}, "bodies": bodies, "contacts": contacts})
}

#[test]
fn stats_mean_node_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let src = out.join("assemblies");
    std::fs::create_dir_all(&src).unwrap();
    for (id, n) in [("a3", 3), ("a4", 4), ("a5", 5)] {
        std::fs::write(src.join(format!("{id}.json")), chain_assembly(id, n).to_string()).unwrap();
    }
    std::fs::copy(core_fixture("catalog.json"), out.join("catalog.json")).unwrap();
    std::fs::write(out.join("semantic.txt"), "DIM 4\nplate\t1 0 0 0\n").unwrap();
    std::fs::write(out.join("synth.json"), json!({"options": {"visual_dim": 4}}).to_string()).unwrap();
    ok(out, &["ingest"]);
    ok(out, &["build-graphs"]);
    let stdout = ok(out, &["stats"]);
    assert!(stdout.contains("3 graphs"), "{stdout}");
    assert!(stdout.contains("| nodes | 4.0 |"), "{stdout}");
    assert!(out.join("stats").join("report.json").exists());
}

fn top1(metrics: &str) -> f64 {
    metrics
        .lines()
        .find(|l| l.contains(",topk_micro_f1,1,"))
        .and_then(|l| l.rsplit(',').next())
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn planted_pipeline_end_to_end_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&out, &["--seed", "3", "synth", "--kind", "planted", "--graphs", "200"]);
        ok(&out, &["ingest"]);
        ok(&out, &["build-graphs"]);
        ok(&out, &["--seed", "3", "train"]);
        ok(&out, &["evaluate"]);
        out
    };
    let a = run("a");
    let b = run("b");
    let metrics = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(top1(&metrics) >= 0.9, "{metrics}");
    for f in ["records.json", "model.ckpt", "history.csv", "metrics.csv", "report.json", "corpus/manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn guided_training_round_trips_through_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["synth", "--kind", "taxonomy", "--graphs", "40"]);
    ok(out, &["ingest"]);
    ok(out, &["build-graphs"]);
    ok(out, &["train", "--epochs", "3", "--tier-depth", "2", "--context-ratio", "0.3"]);
    let stdout = ok(out, &["evaluate", "--k", "1,3"]);
    assert!(stdout.contains("top-3"), "{stdout}");
    let o = matgraph(out, &["train", "--tier-depth", "4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn experiment_writes_protocol_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["synth", "--kind", "homophily", "--graphs", "30"]);
    ok(out, &["ingest"]);
    ok(out, &["build-graphs"]);
    let stdout = ok(out, &["experiment", "partial", "--runs", "1", "--epochs", "2", "--ratios", "0.1,0.5"]);
    assert!(stdout.contains("| ratio |"), "{stdout}");
    for f in ["metrics.csv", "report.json", "report.md"] {
        assert!(out.join("partial").join(f).exists(), "{f}");
    }
    let md = std::fs::read_to_string(out.join("partial").join("report.md")).unwrap();
    assert!(md.contains("\"protocol\": \"partial\""));
}
