use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use matgraph::catalog::MaterialCatalog;
use matgraph::checkpoint::Checkpoint;
use matgraph::corpus::Corpus;
use matgraph::encoding::blocks;
use matgraph::graph::GraphBundle;
use matgraph::model::{Model, ModelConfig};
use matgraph::synth::{generate, SynthConfig, SynthCorpus, SynthKind};
use matgraph_serve::{router, AppState};

struct Fixture {
    _dir: tempfile::TempDir,
    synth: SynthCorpus,
    corpus: Corpus,
    plain: PathBuf,
    guided: PathBuf,
}

fn checkpoint(corpus: &Corpus, synth: &SynthCorpus, guided: bool, seed: u64) -> Checkpoint {
    let m = &corpus.manifest;
    let mut schema = m.schema.clone();
    if guided {
        schema = schema
            .with_block(blocks::MATERIAL_ONEHOT, m.fitted.labels.len(), false)
            .unwrap()
            .with_block(blocks::TIER_ONEHOT, m.fitted.tiers.width(2), false)
            .unwrap();
    }
    let mut mc = ModelConfig::new(schema.node_width(), m.fitted.labels.len());
    mc.num_layers = 2;
    mc.hidden = 16;
    mc.seed = seed;
    let model = Model::<f32>::init(mc).unwrap();
    Checkpoint::from_model(&model, schema, m.fitted.clone(), Some(synth.catalog.clone()), None).with_semantic(synth.semantic.clone())
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let synth = generate(&SynthConfig::new(SynthKind::Taxonomy, 60, 4)).unwrap();
    let records = synth.records().unwrap();
    let corpus = Corpus::build(&records, &synth.catalog, &synth.semantic, None, &synth.split, &synth.options).unwrap();
    let plain = dir.path().join("plain.ckpt");
    let guided = dir.path().join("guided.ckpt");
    checkpoint(&corpus, &synth, false, 1).save(&plain).unwrap();
    checkpoint(&corpus, &synth, true, 2).save(&guided).unwrap();
    Fixture {
        _dir: dir,
        synth,
        corpus,
        plain,
        guided,
    }
}

fn loaded(path: &Path) -> Arc<AppState> {
    Arc::new(AppState::from_paths(Some(path), None).unwrap())
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn parse(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn three_node_bundle(f: &Fixture) -> Value {
    let g = f.corpus.graphs.values().find(|g| g.num_nodes() == 3).or_else(|| f.corpus.graphs.values().next()).unwrap();
    serde_json::to_value(GraphBundle::from(g)).unwrap()
}

fn tier1(catalog: &MaterialCatalog, id: &str) -> Option<String> {
    catalog.get(id).map(|e| e.tiers()[0].to_string())
}

#[tokio::test]
async fn no_model_gives_503_with_reason() {
    let state = Arc::new(AppState::new(None));
    let (s, body) = call(&state, "GET", "/v1/model", None).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(parse(&body)["error"]["code"], "no_model_loaded");
    let (s, _) = call(&state, "POST", "/v1/predict", Some(json!({"graph": {"bundle_id": "x"}}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn load_missing_and_present_checkpoints() {
    let f = fixture();
    let state = Arc::new(AppState::new(None));
    let (s, body) = call(&state, "POST", "/v1/model", Some(json!({"path": "/nonexistent/x.ckpt"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(parse(&body)["error"]["code"], "checkpoint_not_found");
    let (s, body) = call(&state, "POST", "/v1/model", Some(json!({"path": f.guided}))).await;
    assert_eq!(s, StatusCode::OK);
    let info = parse(&body);
    assert_eq!(info["tier_depth"], 2);
    assert_eq!(info["accepts_assemblies"], true);
    let (s, again) = call(&state, "GET", "/v1/model", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(parse(&again)["checkpoint_id"], info["checkpoint_id"]);
}

#[tokio::test]
async fn known_nodes_are_echoed_not_predicted() {
    let f = fixture();
    let state = loaded(&f.guided);
    let bundle = three_node_bundle(&f);
    let first = bundle["node_ids"][0].as_str().unwrap().to_string();
    let material = f.corpus.manifest.fitted.labels.classes[0].clone();
    let req = json!({"graph": {"bundle": bundle}, "known_materials": {first.clone(): material}, "k": 2});
    let (s, body) = call(&state, "POST", "/v1/predict", Some(req)).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let resp = parse(&body);
    let nodes = resp["nodes"].as_array().unwrap();
    assert_eq!(nodes[0]["node_id"], first);
    assert_eq!(nodes[0]["known"]["material_id"], material);
    assert!(nodes[0]["candidates"].as_array().unwrap().is_empty());
    for n in &nodes[1..] {
        assert!(n["known"].is_null());
        assert_eq!(n["candidates"].as_array().unwrap().len(), 2);
    }
}

#[tokio::test]
async fn full_k_sums_to_one_and_descends() {
    let f = fixture();
    let state = loaded(&f.plain);
    let c = f.corpus.manifest.fitted.labels.len();
    let req = json!({"graph": {"bundle": three_node_bundle(&f)}, "k": c});
    let (s, body) = call(&state, "POST", "/v1/predict", Some(req)).await;
    assert_eq!(s, StatusCode::OK);
    for n in parse(&body)["nodes"].as_array().unwrap() {
        let p: Vec<f64> = n["candidates"].as_array().unwrap().iter().map(|x| x["probability"].as_f64().unwrap()).collect();
        assert_eq!(p.len(), c);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[tokio::test]
async fn tier_constraint_filters_and_renormalizes() {
    let f = fixture();
    let state = loaded(&f.guided);
    let bundle = three_node_bundle(&f);
    let node = bundle["node_ids"][1].as_str().unwrap().to_string();
    let c = f.corpus.manifest.fitted.labels.len();
    let req = json!({"graph": {"bundle": bundle}, "tier_constraints": {node.clone(): ["Metal"]}, "k": c});
    let (s, body) = call(&state, "POST", "/v1/predict", Some(req)).await;
    assert_eq!(s, StatusCode::OK);
    let resp = parse(&body);
    let n = resp["nodes"].as_array().unwrap().iter().find(|n| n["node_id"] == node).unwrap();
    let cands = n["candidates"].as_array().unwrap();
    assert!(!cands.is_empty());
    for x in cands {
        assert_eq!(tier1(&f.synth.catalog, x["material_id"].as_str().unwrap()).as_deref(), Some("Metal"));
    }
    let sum: f64 = cands.iter().map(|x| x["probability"].as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-6);

    // disabling the filter keeps the constraint as an input only
    let req = json!({"graph": {"bundle": three_node_bundle(&f)}, "tier_constraints": {node.clone(): ["Metal"]}, "k": c, "filter_tiers": false});
    let (_, body) = call(&state, "POST", "/v1/predict", Some(req)).await;
    let resp = parse(&body);
    let n = resp["nodes"].as_array().unwrap().iter().find(|n| n["node_id"] == node).unwrap();
    assert_eq!(n["candidates"].as_array().unwrap().len(), c);
}

#[tokio::test]
async fn zero_survivors_is_an_empty_list() {
    let f = fixture();
    let state = loaded(&f.plain);
    let bundle = three_node_bundle(&f);
    let node = bundle["node_ids"][0].as_str().unwrap().to_string();
    let req = json!({"graph": {"bundle": bundle}, "tier_constraints": {node.clone(): ["Metal", "Thermoset"]}});
    let (s, body) = call(&state, "POST", "/v1/predict", Some(req)).await;
    assert_eq!(s, StatusCode::OK);
    let resp = parse(&body);
    let n = &resp["nodes"][0];
    assert_eq!(n["no_survivors"], true);
    assert!(n["candidates"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn request_errors() {
    let f = fixture();
    let state = loaded(&f.guided);
    let bundle = three_node_bundle(&f);
    let node = bundle["node_ids"][0].as_str().unwrap().to_string();
    let cases = [
        (json!({"graph": {"bundle": bundle.clone()}, "known_materials": {node.clone(): "NOPE"}}), 422, "unknown_material"),
        (json!({"graph": {"bundle": bundle.clone()}, "tier_constraints": {node.clone(): ["Wood"]}}), 422, "unknown_tier"),
        (json!({"graph": {"bundle": bundle.clone()}, "known_materials": {"ghost": "SYN-M00"}}), 422, "unknown_node"),
        (json!({"graph": {"bundle": bundle.clone()}, "k": 0}), 400, "invalid_k"),
        (json!({"graph": {"bundle_id": "missing"}}), 404, "unknown_bundle"),
        (json!({"graf": {}}), 400, "invalid_json"),
    ];
    for (req, status, code) in cases {
        let (s, body) = call(&state, "POST", "/v1/predict", Some(req)).await;
        assert_eq!(s.as_u16(), status, "{}", String::from_utf8_lossy(&body));
        assert_eq!(parse(&body)["error"]["code"], code);
    }
    let mut narrow = bundle.clone();
    let n = narrow["node_ids"].as_array().unwrap().len();
    let mut g: GraphBundle = serde_json::from_value(narrow.clone()).unwrap();
    g.schema = g.schema.without(&[blocks::GLOBAL.to_string()]);
    let w = g.schema.node_width();
    g.x = matgraph::graph::MatrixJson {
        shape: [n, w],
        data: vec![0.0; n * w],
    };
    narrow = serde_json::to_value(g).unwrap();
    let (s, body) = call(&state, "POST", "/v1/predict", Some(json!({"graph": {"bundle": narrow}}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(parse(&body)["error"]["code"], "schema_mismatch");
}

#[tokio::test]
async fn uploads_and_predicts_raw_assemblies() {
    let f = fixture();
    let state = loaded(&f.guided);
    let records = f.synth.records().unwrap();
    let id = &records.iter().find(|r| r.bodies.len() == 2).expect("two-body assembly").assembly_id;
    let two = f.synth.assemblies.iter().find(|a| &a.assembly_id == id).unwrap();
    let (s, body) = call(&state, "POST", "/v1/graphs", Some(serde_json::to_value(two).unwrap())).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let up = parse(&body);
    assert_eq!(up["nodes"], 2);
    let req = json!({"graph": {"bundle_id": up["bundle_id"]}, "k": 1});
    let (s, body) = call(&state, "POST", "/v1/predict", Some(req)).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    assert_eq!(parse(&body)["nodes"].as_array().unwrap().len(), 2);

    let inline = json!({"graph": {"assembly": serde_json::to_value(&f.synth.assemblies[0]).unwrap()}});
    let (s, _) = call(&state, "POST", "/v1/predict", Some(inline)).await;
    assert_eq!(s, StatusCode::OK);

    let mut broken = three_node_bundle(&f);
    broken["edge_index"] = json!([[0, 1], [1]]);
    let (s, body) = call(&state, "POST", "/v1/graphs", Some(broken)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(parse(&body)["error"]["code"], "invalid_bundle");
    let (s, _) = call(&state, "POST", "/v1/graphs", Some(three_node_bundle(&f))).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn identical_requests_identical_bytes() {
    let f = fixture();
    let state = loaded(&f.guided);
    let bundle = three_node_bundle(&f);
    let node = bundle["node_ids"][2].as_str().unwrap().to_string();
    let req = json!({"graph": {"bundle": bundle}, "tier_constraints": {node: ["Plastic"]}, "k": 3});
    let (_, a) = call(&state, "POST", "/v1/predict", Some(req.clone())).await;
    let (_, b) = call(&state, "POST", "/v1/predict", Some(req)).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let f = fixture();
    let state = loaded(&f.plain);
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/v1/predict")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = router(state).oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn swaps_under_load_never_fail() {
    let f = fixture();
    let state = loaded(&f.plain);
    let ids = {
        let a = Checkpoint::load(&f.plain).unwrap().id();
        let b = Checkpoint::load(&f.guided).unwrap().id();
        [a, b]
    };
    let bundle = three_node_bundle(&f);
    let mut tasks = Vec::new();
    for _ in 0..8 {
        let state = state.clone();
        let bundle = bundle.clone();
        tasks.push(tokio::spawn(async move {
            let mut seen = Vec::new();
            for _ in 0..25 {
                let (s, body) = call(&state, "POST", "/v1/predict", Some(json!({"graph": {"bundle": bundle.clone()}}))).await;
                assert!(!s.is_server_error(), "{s}: {}", String::from_utf8_lossy(&body));
                assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
                seen.push(parse(&body)["model"]["checkpoint_id"].as_str().unwrap().to_string());
            }
            seen
        }));
    }
    let swapper = {
        let state = state.clone();
        let paths = [f.plain.clone(), f.guided.clone()];
        tokio::spawn(async move {
            for i in 0..20 {
                let (s, _) = call(&state, "POST", "/v1/model", Some(json!({"path": paths[i % 2]}))).await;
                assert_eq!(s, StatusCode::OK);
            }
        })
    };
    swapper.await.unwrap();
    for t in tasks {
        for id in t.await.unwrap() {
            assert!(ids.contains(&id));
        }
    }
}

#[test]
fn serves_over_tcp() {
    let f = fixture();
    let state = loaded(&f.plain);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(matgraph_serve::serve(listener, state));
    let mut stream = std::net::TcpStream::connect(addr).unwrap();
    stream
        .write_all(b"GET /v1/model HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .unwrap();
    let mut text = String::new();
    stream.read_to_string(&mut text).unwrap();
    assert!(text.starts_with("HTTP/1.1 200"), "{text}");
    assert!(text.contains("checkpoint_id"));
}
