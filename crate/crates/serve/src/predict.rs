//! Request decoding and inference over a loaded snapshot. Nothing here
//! touches shared state.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use matgraph::catalog::{MaterialCatalog, OTHER_LABEL};
use matgraph::checkpoint::Checkpoint;
use matgraph::encoding::{blocks, FeatureSchema};
use matgraph::graph::{add_material_block, base_schema, build_graph, set_material_rows, with_tier_rows, AssemblyGraph, Encoders, GraphBundle};
use matgraph::ingest::{AssemblyRecords, RawAssembly};
use matgraph::model::Model;

use crate::error::ApiError;

/// Immutable model state shared by in-flight requests.
#[derive(Debug)]
pub struct Snapshot {
    pub id: String,
    pub source: Option<String>,
    pub checkpoint: Checkpoint,
    pub model: Model<f32>,
    pub catalog: MaterialCatalog,
    /// Tier depth encoded in the input, 0 when the schema has no tier block.
    pub tier_depth: usize,
}

pub fn empty_catalog() -> MaterialCatalog {
    MaterialCatalog {
        default_material_id: String::new(),
        default_appearance_id: String::new(),
        materials: BTreeMap::new(),
    }
}

impl Snapshot {
    pub fn new(checkpoint: Checkpoint, catalog: Option<MaterialCatalog>, source: Option<&Path>) -> matgraph::Result<Self> {
        let model = checkpoint.model()?;
        let meta = &checkpoint.meta;
        if model.config.input_dim != meta.schema.node_width() {
            return Err(matgraph::Error::Checkpoint(format!(
                "model input {} does not match schema width {}",
                model.config.input_dim,
                meta.schema.node_width()
            )));
        }
        let tier_depth = match meta.schema.block(blocks::TIER_ONEHOT) {
            None => 0,
            Some(b) => (1..=3)
                .find(|&d| meta.fitted.tiers.width(d) == b.width)
                .ok_or_else(|| matgraph::Error::Checkpoint("tier block width matches no tier depth".into()))?,
        };
        let catalog = catalog.or_else(|| meta.catalog.clone()).unwrap_or_else(empty_catalog);
        Ok(Self {
            id: checkpoint.id(),
            source: source.map(|p| p.display().to_string()),
            model,
            catalog,
            tier_depth,
            checkpoint,
        })
    }

    pub fn info(&self) -> ModelInfo {
        let meta = &self.checkpoint.meta;
        ModelInfo {
            checkpoint_id: self.id.clone(),
            source: self.source.clone(),
            schema_hash: meta.schema.hash(),
            node_width: meta.schema.node_width(),
            blocks: meta.schema.blocks.iter().map(|b| b.name.clone()).collect(),
            layer_kind: meta.model.layer_kind.name().to_string(),
            num_layers: meta.model.num_layers,
            hidden: meta.model.hidden,
            classes: meta.labels.classes.clone(),
            tier_depth: self.tier_depth,
            accepts_assemblies: meta.semantic.is_some(),
            catalog_materials: self.catalog.materials.len(),
            best_val_micro_f1: meta.training.as_ref().map(|t| t.best_val_micro_f1),
        }
    }

    fn display_name(&self, id: &str) -> String {
        if id == OTHER_LABEL {
            "Other".to_string()
        } else {
            self.catalog.display_name(id).to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub checkpoint_id: String,
    pub source: Option<String>,
    pub schema_hash: String,
    pub node_width: usize,
    pub blocks: Vec<String>,
    pub layer_kind: String,
    pub num_layers: usize,
    pub hidden: usize,
    pub classes: Vec<String>,
    pub tier_depth: usize,
    pub accepts_assemblies: bool,
    pub catalog_materials: usize,
    pub best_val_micro_f1: Option<f64>,
}

/// A graph as the client sends it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphPayload {
    Assembly(serde_json::Value),
    Bundle(GraphBundle),
    BundleId(String),
}

/// An uploaded graph, kept until the process exits.
#[derive(Debug, Clone)]
pub enum StoredGraph {
    Assembly(RawAssembly),
    Bundle(AssemblyGraph),
}

fn default_filter() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub graph: GraphPayload,
    #[serde(default)]
    pub known_materials: BTreeMap<String, String>,
    #[serde(default)]
    pub tier_constraints: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub k: Option<usize>,
    /// Restrict outputs to materials consistent with tier constraints.
    #[serde(default = "default_filter")]
    pub filter_tiers: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub material_id: String,
    pub name: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePrediction {
    pub node_id: String,
    /// Set for nodes whose material the client supplied; they get no candidates.
    pub known: Option<Candidate>,
    pub candidates: Vec<Candidate>,
    pub constraint: Option<Vec<String>>,
    /// True when a constraint removed every class.
    pub no_survivors: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRef {
    pub checkpoint_id: String,
    pub schema_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub model: ModelRef,
    pub graph_id: String,
    pub k: usize,
    pub nodes: Vec<NodePrediction>,
}

pub fn assembly_to_graph(snap: &Snapshot, raw: &RawAssembly) -> Result<AssemblyGraph, ApiError> {
    let meta = &snap.checkpoint.meta;
    let semantic = meta.semantic.as_ref().ok_or_else(|| {
        ApiError::schema("checkpoint carries no name embeddings; send a prebuilt graph bundle instead")
    })?;
    let records = AssemblyRecords::from_raw(raw);
    if records.bodies.is_empty() {
        return Err(ApiError::bad_request("invalid_graph", "assembly has no visible bodies"));
    }
    let enc = Encoders::new(&meta.fitted, semantic, None, &snap.catalog).map_err(ApiError::schema)?;
    build_graph(&records, &enc, &base_schema(&meta.fitted, false)).map_err(ApiError::schema)
}

fn block_rows(g: &mut AssemblyGraph, schema: &FeatureSchema, name: &str, rows: &[Vec<f32>]) {
    let Some(b) = schema.block(name) else { return };
    let w = g.width();
    for (i, r) in rows.iter().enumerate() {
        g.x[i * w + b.offset..i * w + b.offset + b.width].copy_from_slice(r);
    }
}

/// Brings a base or complete graph to the checkpoint schema.
fn conform(snap: &Snapshot, mut g: AssemblyGraph) -> Result<AssemblyGraph, ApiError> {
    let schema = &snap.checkpoint.meta.schema;
    if schema.has_block(blocks::MATERIAL_ONEHOT) && !g.schema.has_block(blocks::MATERIAL_ONEHOT) && !g.schema.has_block(blocks::TIER_ONEHOT) {
        g = add_material_block(&g, snap.checkpoint.meta.labels.len()).map_err(ApiError::schema)?;
    }
    if let Some(b) = schema.block(blocks::TIER_ONEHOT) {
        if !g.schema.has_block(blocks::TIER_ONEHOT) {
            g = with_tier_rows(&g, &vec![vec![0.0; b.width]; g.num_nodes()]).map_err(ApiError::schema)?;
        }
    }
    if &g.schema != schema {
        return Err(ApiError::schema(format!(
            "graph schema {} (width {}) does not match checkpoint schema {} (width {})",
            g.schema.hash(),
            g.schema.node_width(),
            schema.hash(),
            schema.node_width()
        )));
    }
    Ok(g)
}

fn tier_matches(catalog: &MaterialCatalog, material_id: &str, constraint: &[String]) -> bool {
    catalog
        .get(material_id)
        .map(|e| {
            let tiers = e.tiers();
            constraint.iter().enumerate().all(|(i, t)| tiers.get(i) == Some(&t.as_str()))
        })
        .unwrap_or(false)
}

/// Ranks candidates by probability, then class index.
fn rank(snap: &Snapshot, probs: &[f32], allowed: Option<&[bool]>, k: usize) -> Vec<Candidate> {
    let classes = &snap.checkpoint.meta.labels.classes;
    let keep: Vec<usize> = (0..probs.len()).filter(|&c| allowed.is_none_or(|a| a[c])).collect();
    let total: f64 = keep.iter().map(|&c| probs[c] as f64).sum();
    let mut scored: Vec<(usize, f64)> = keep
        .iter()
        .map(|&c| {
            let p = if total > 0.0 { probs[c] as f64 / total } else { 1.0 / keep.len() as f64 };
            (c, p)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(k)
        .map(|(c, p)| Candidate {
            material_id: classes[c].clone(),
            name: snap.display_name(&classes[c]),
            probability: p,
        })
        .collect()
}

pub fn predict(snap: &Snapshot, req: &PredictRequest, graph: AssemblyGraph) -> Result<PredictResponse, ApiError> {
    let meta = &snap.checkpoint.meta;
    let labels = &meta.labels;
    let num_classes = labels.len();
    let k = req.k.unwrap_or(num_classes.min(3));
    if k == 0 || k > num_classes {
        return Err(ApiError::bad_request("invalid_k", format!("k must lie in 1..={num_classes}, got {k}")));
    }
    let mut g = conform(snap, graph)?;
    let index: BTreeMap<&str, usize> = g.node_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let node = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| ApiError::unprocessable("unknown_node", format!("node {id:?} is not in the graph")))
    };

    let mut known: Vec<Option<(usize, String)>> = vec![None; g.num_nodes()];
    for (id, material) in &req.known_materials {
        let i = node(id)?;
        let label = match labels.position(material) {
            Some(l) => l,
            None if snap.catalog.get(material).is_some() => labels.other_index(),
            None => {
                return Err(ApiError::unprocessable("unknown_material", format!("material {material:?} is not known to the model or catalog")))
            }
        };
        known[i] = Some((label, material.clone()));
    }

    let vocab = meta.fitted.tiers.tiers.clone();
    let catalog_vocab = snap.catalog.tier_vocabularies();
    let mut constraints: Vec<Option<Vec<String>>> = vec![None; g.num_nodes()];
    for (id, tiers) in &req.tier_constraints {
        let i = node(id)?;
        if tiers.is_empty() || tiers.len() > 3 {
            return Err(ApiError::bad_request("invalid_constraint", format!("node {id:?}: give one to three tiers")));
        }
        for (level, t) in tiers.iter().enumerate() {
            if !vocab[level].contains(t) && !catalog_vocab[level].contains(t) {
                return Err(ApiError::unprocessable("unknown_tier", format!("tier {} value {t:?} is unknown", level + 1)));
            }
        }
        constraints[i] = Some(tiers.clone());
    }

    if g.schema.has_block(blocks::MATERIAL_ONEHOT) {
        let rows: Vec<Option<usize>> = known.iter().map(|k| k.as_ref().map(|(l, _)| *l)).collect();
        g = set_material_rows(&g, &rows).map_err(ApiError::schema)?;
    }
    if snap.tier_depth > 0 {
        let rows: Vec<Vec<f32>> = (0..g.num_nodes())
            .map(|i| match (&constraints[i], &known[i]) {
                (Some(c), _) => {
                    let names: Vec<&str> = c.iter().map(String::as_str).collect();
                    meta.fitted.tiers.encode_names(&names, snap.tier_depth)
                }
                (None, Some((_, m))) => meta.fitted.tiers.encode(m, &snap.catalog, snap.tier_depth),
                (None, None) => meta.fitted.tiers.encode_names(&[], snap.tier_depth),
            })
            .collect();
        let schema = g.schema.clone();
        block_rows(&mut g, &schema, blocks::TIER_ONEHOT, &rows);
    }

    let probs = snap.model.predict_graph(&g).map_err(|e| ApiError::internal(e.to_string()))?;
    let mut nodes = Vec::with_capacity(g.num_nodes());
    for i in 0..g.num_nodes() {
        let node_id = g.node_ids[i].clone();
        if let Some((_, m)) = &known[i] {
            nodes.push(NodePrediction {
                node_id,
                known: Some(Candidate {
                    material_id: m.clone(),
                    name: snap.display_name(m),
                    probability: 1.0,
                }),
                candidates: Vec::new(),
                constraint: constraints[i].clone(),
                no_survivors: false,
            });
            continue;
        }
        let allowed: Option<Vec<bool>> = constraints[i]
            .as_ref()
            .filter(|_| req.filter_tiers)
            .map(|c| labels.classes.iter().map(|m| tier_matches(&snap.catalog, m, c)).collect());
        let survivors = allowed.as_ref().map_or(num_classes, |a| a.iter().filter(|&&x| x).count());
        nodes.push(NodePrediction {
            node_id,
            known: None,
            candidates: rank(snap, probs.row(i), allowed.as_deref(), k),
            constraint: constraints[i].clone(),
            no_survivors: survivors == 0,
        });
    }
    Ok(PredictResponse {
        model: ModelRef {
            checkpoint_id: snap.id.clone(),
            schema_hash: meta.schema.hash(),
        },
        graph_id: g.graph_id.clone(),
        k,
        nodes,
    })
}
