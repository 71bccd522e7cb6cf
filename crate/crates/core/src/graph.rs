//! Attributed assembly multigraphs: construction, the discard rule and the
//! protocol-specific augmentations.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{resolve_material, MaterialCatalog};
use crate::encoding::{
    blocks, encode_connection, encode_global, encode_material_onehot, normalize_physical, seed_from,
    visual_embedding, EmbeddingTable, FeatureSchema, FittedState, SemanticEncoder, TierEncoder,
    BODY_PHYSICAL_WIDTH, EDGE_WIDTH, OCCURRENCE_PHYSICAL_WIDTH,
};
use crate::error::{Error, Result};
use crate::ingest::{body_index, AssemblyRecords, ConnectionKind};

/// Minimum node count for a training graph.
pub const MIN_NODES: usize = 3;
/// Minimum undirected connection count for a training graph.
pub const MIN_CONNECTIONS: usize = 2;

/// One assembly as a directed multigraph with node/edge features and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyGraph {
    pub graph_id: String,
    pub node_ids: Vec<String>,
    /// Row-major `|V| × schema.node_width()`.
    pub x: Vec<f32>,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    /// Row-major `|E| × 3`.
    pub edge_attr: Vec<f32>,
    pub y: Vec<usize>,
    /// Nodes that are scored by the loss and the metrics.
    pub target_mask: Vec<bool>,
    /// Resolved ground-truth material id per node.
    pub material_ids: Vec<String>,
    pub schema: FeatureSchema,
}

impl AssemblyGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    /// Undirected connections; every connection is stored in both directions.
    pub fn num_connections(&self) -> usize {
        self.num_edges() / 2
    }

    pub fn width(&self) -> usize {
        self.schema.node_width()
    }

    pub fn row(&self, node: usize) -> &[f32] {
        let w = self.width();
        &self.x[node * w..(node + 1) * w]
    }

    pub fn edge_kind(&self, edge: usize) -> Option<ConnectionKind> {
        let row = &self.edge_attr[edge * EDGE_WIDTH..(edge + 1) * EDGE_WIDTH];
        row.iter().position(|&v| v == 1.0).and_then(ConnectionKind::from_index)
    }

    pub fn edge_kind_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for e in 0..self.num_edges() {
            if let Some(k) = self.edge_kind(e) {
                counts[k.index()] += 1;
            }
        }
        counts
    }

    pub fn num_targets(&self) -> usize {
        self.target_mask.iter().filter(|&&m| m).count()
    }

    fn check(&self) -> Result<()> {
        let n = self.num_nodes();
        let e = self.num_edges();
        let bad = |m: String| Err(Error::Schema(format!("graph {}: {m}", self.graph_id)));
        if self.x.len() != n * self.width() {
            return bad(format!("{} feature values for {n} nodes of width {}", self.x.len(), self.width()));
        }
        if self.edge_dst.len() != e || self.edge_attr.len() != e * EDGE_WIDTH {
            return bad("edge arrays disagree in length".into());
        }
        if self.y.len() != n || self.target_mask.len() != n || self.material_ids.len() != n {
            return bad("label arrays disagree with node count".into());
        }
        if let Some(&i) = self.edge_src.iter().chain(&self.edge_dst).find(|&&i| i >= n) {
            return bad(format!("edge endpoint {i} out of {n} nodes"));
        }
        if self.schema.edge_width != EDGE_WIDTH {
            return bad(format!("edge width {}", self.schema.edge_width));
        }
        Ok(())
    }

    fn block_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        self.schema.block(name).map(|b| b.offset..b.offset + b.width)
    }

    fn append_block(&self, name: &str, rows: &[Vec<f32>], ablatable: bool) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.len() != self.num_nodes() || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Schema(format!("block {name}: ragged rows")));
        }
        let schema = self.schema.clone().with_block(name, width, ablatable)?;
        let mut x = Vec::with_capacity(self.num_nodes() * schema.node_width());
        for (i, extra) in rows.iter().enumerate() {
            x.extend_from_slice(self.row(i));
            x.extend_from_slice(extra);
        }
        Ok(Self {
            x,
            schema,
            ..self.clone()
        })
    }
}

/// Read-only encoder state for graph construction.
#[derive(Debug, Clone)]
pub struct Encoders<'a> {
    pub fitted: &'a FittedState,
    pub semantic: &'a EmbeddingTable,
    pub visual: Option<&'a EmbeddingTable>,
    pub catalog: &'a MaterialCatalog,
    pub names: SemanticEncoder,
}

impl<'a> Encoders<'a> {
    pub fn new(
        fitted: &'a FittedState,
        semantic: &'a EmbeddingTable,
        visual: Option<&'a EmbeddingTable>,
        catalog: &'a MaterialCatalog,
    ) -> Result<Self> {
        Ok(Self {
            fitted,
            semantic,
            visual,
            catalog,
            names: SemanticEncoder::new(&fitted.default_name_pattern)?,
        })
    }
}

/// Schema of freshly built graphs.
pub fn base_schema(fitted: &FittedState, material_block: bool) -> FeatureSchema {
    let mut widths = vec![
        (blocks::BODY_NAME, fitted.semantic_dim, true),
        (blocks::OCCURRENCE_NAME, fitted.semantic_dim, true),
        (blocks::BODY_PHYSICAL, BODY_PHYSICAL_WIDTH, true),
        (blocks::OCCURRENCE_PHYSICAL, OCCURRENCE_PHYSICAL_WIDTH, true),
        (blocks::BODY_GEOMETRY, fitted.visual_dim, true),
        (blocks::GLOBAL, fitted.globals.width(), true),
    ];
    if material_block {
        widths.push((blocks::MATERIAL_ONEHOT, fitted.labels.len(), false));
    }
    FeatureSchema::from_widths(widths).expect("canonical block names are distinct")
}

/// Encodes one assembly. Every connection becomes two directed edges with
/// the same kind; parallel connections stay parallel. A `material_onehot`
/// block in `schema` is zero-filled.
pub fn build_graph(records: &AssemblyRecords, enc: &Encoders, schema: &FeatureSchema) -> Result<AssemblyGraph> {
    if records.bodies.is_empty() {
        return Err(Error::Schema(format!("assembly {} has no visible bodies", records.assembly_id)));
    }
    let fitted = enc.fitted;
    let expected = base_schema(fitted, schema.has_block(blocks::MATERIAL_ONEHOT));
    if &expected != schema {
        return Err(Error::Schema(format!(
            "schema of width {} does not match encoders (width {})",
            schema.node_width(),
            expected.node_width()
        )));
    }
    if enc.semantic.dim() != fitted.semantic_dim {
        return Err(Error::Schema(format!(
            "semantic table has dimension {}, encoders expect {}",
            enc.semantic.dim(),
            fitted.semantic_dim
        )));
    }
    if let Some(v) = enc.visual.filter(|v| v.dim() != fitted.visual_dim) {
        return Err(Error::Schema(format!(
            "visual table has dimension {}, encoders expect {}",
            v.dim(),
            fitted.visual_dim
        )));
    }
    let global = encode_global(&records.meta, &fitted.globals, &fitted.norm);
    let n = records.bodies.len();
    let mut x = Vec::with_capacity(n * schema.node_width());
    let mut y = Vec::with_capacity(n);
    let mut material_ids = Vec::with_capacity(n);
    for b in &records.bodies {
        let resolved = resolve_material(b, enc.catalog);
        let label = fitted.labels.index_of(&resolved.material_id);
        x.extend(enc.names.encode(&b.body_name, enc.semantic, fitted.semantic_seed));
        x.extend(enc.names.encode(&b.occurrence_name, enc.semantic, fitted.semantic_seed));
        let (bp, op) = normalize_physical(b, &fitted.norm);
        x.extend(bp);
        x.extend(op);
        x.extend(visual_embedding(&b.uuid, enc.visual, fitted.visual_dim));
        x.extend_from_slice(&global);
        if schema.has_block(blocks::MATERIAL_ONEHOT) {
            x.extend(std::iter::repeat_n(0.0, fitted.labels.len()));
        }
        y.push(label);
        material_ids.push(resolved.material_id);
    }
    let index = body_index(&records.bodies);
    let mut edge_src = Vec::new();
    let mut edge_dst = Vec::new();
    let mut edge_attr = Vec::new();
    for c in &records.connections {
        let (Some(&s), Some(&d)) = (index.get(c.src.as_str()), index.get(c.dst.as_str())) else {
            return Err(Error::Schema(format!(
                "assembly {}: connection {} -> {} references an unknown body",
                records.assembly_id, c.src, c.dst
            )));
        };
        let attr = encode_connection(c.kind);
        for (a, b) in [(s, d), (d, s)] {
            edge_src.push(a);
            edge_dst.push(b);
            edge_attr.extend_from_slice(&attr);
        }
    }
    let g = AssemblyGraph {
        graph_id: records.assembly_id.clone(),
        node_ids: records.bodies.iter().map(|b| b.uuid.clone()).collect(),
        x,
        edge_src,
        edge_dst,
        edge_attr,
        y,
        target_mask: vec![true; n],
        material_ids,
        schema: schema.clone(),
    };
    g.check()?;
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    TooFewNodes,
    TooFewEdges,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Keep,
    Drop(DropReason),
}

/// Discard rule for structural counts.
pub fn validity(nodes: usize, connections: usize) -> Validity {
    if nodes < MIN_NODES {
        Validity::Drop(DropReason::TooFewNodes)
    } else if connections < MIN_CONNECTIONS {
        Validity::Drop(DropReason::TooFewEdges)
    } else {
        Validity::Keep
    }
}

/// Keep iff at least three nodes and two undirected connections.
pub fn validate_graph(g: &AssemblyGraph) -> Validity {
    validity(g.num_nodes(), g.num_connections())
}

/// Removes the columns of one feature block (or the `SemanticNames` pair).
/// `"none"` returns the graph unchanged.
pub fn apply_node_ablation(g: &AssemblyGraph, block: &str) -> Result<AssemblyGraph> {
    if block.eq_ignore_ascii_case("none") {
        return Ok(g.clone());
    }
    let names = g.schema.resolve_ablation(block)?;
    let kept = g.schema.kept_columns(&names);
    let mut x = Vec::with_capacity(g.num_nodes() * kept.len());
    for i in 0..g.num_nodes() {
        let row = g.row(i);
        x.extend(kept.iter().map(|&c| row[c]));
    }
    Ok(AssemblyGraph {
        x,
        schema: g.schema.without(&names),
        ..g.clone()
    })
}

/// Removes every directed edge of `kind`, keeping the edge arrays in lockstep.
pub fn apply_edge_ablation(g: &AssemblyGraph, kind: ConnectionKind) -> AssemblyGraph {
    let mut out = AssemblyGraph {
        edge_src: Vec::new(),
        edge_dst: Vec::new(),
        edge_attr: Vec::new(),
        ..g.clone()
    };
    for e in 0..g.num_edges() {
        if g.edge_kind(e) == Some(kind) {
            continue;
        }
        out.edge_src.push(g.edge_src[e]);
        out.edge_dst.push(g.edge_dst[e]);
        out.edge_attr
            .extend_from_slice(&g.edge_attr[e * EDGE_WIDTH..(e + 1) * EDGE_WIDTH]);
    }
    out
}

/// `⌈ratio·n⌉`, robust to representation error in `ratio`.
pub fn context_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Appends an all-zero material block of `classes` columns.
pub fn add_material_block(g: &AssemblyGraph, classes: usize) -> Result<AssemblyGraph> {
    g.append_block(blocks::MATERIAL_ONEHOT, &vec![vec![0.0; classes]; g.num_nodes()], false)
}

/// Samples `⌈ratio·|V|⌉` context nodes (seeded by graph id and `seed`),
/// writes their ground-truth one-hot into the material block and marks the
/// rest as targets. Target rows of the block are zero.
pub fn inject_context_labels(g: &AssemblyGraph, ratio: f64, seed: u64) -> Result<AssemblyGraph> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("context ratio {ratio} outside (0, 1)")));
    }
    let range = g
        .block_range(blocks::MATERIAL_ONEHOT)
        .ok_or_else(|| Error::Config("graph has no material_onehot block".into()))?;
    let n = g.num_nodes();
    let k = context_count(ratio, n).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[b"context", g.graph_id.as_bytes(), &seed.to_le_bytes()]));
    let mut context = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, k) {
        context[i] = true;
    }
    let width = g.width();
    let classes = range.len();
    let mut out = g.clone();
    for i in 0..n {
        let row = &mut out.x[i * width + range.start..i * width + range.end];
        row.fill(0.0);
        if context[i] && g.y[i] < classes {
            row[g.y[i]] = 1.0;
        }
        out.target_mask[i] = !context[i];
    }
    Ok(out)
}

/// Zeroes the material block while keeping the target mask.
pub fn clear_context_labels(g: &AssemblyGraph) -> AssemblyGraph {
    let mut out = g.clone();
    if let Some(range) = g.block_range(blocks::MATERIAL_ONEHOT) {
        let width = g.width();
        for i in 0..g.num_nodes() {
            out.x[i * width + range.start..i * width + range.end].fill(0.0);
        }
    }
    out
}

/// Writes known labels into the material block (`None` rows stay zero).
pub fn set_material_rows(g: &AssemblyGraph, labels: &[Option<usize>]) -> Result<AssemblyGraph> {
    let range = g
        .block_range(blocks::MATERIAL_ONEHOT)
        .ok_or_else(|| Error::Schema("graph has no material_onehot block".into()))?;
    if labels.len() != g.num_nodes() {
        return Err(Error::Schema("one label slot per node expected".into()));
    }
    let width = g.width();
    let mut out = g.clone();
    for (i, l) in labels.iter().enumerate() {
        let row = &mut out.x[i * width + range.start..i * width + range.end];
        row.fill(0.0);
        if let Some(&l) = l.as_ref().filter(|&&l| l < range.len()) {
            row[l] = 1.0;
        }
    }
    Ok(out)
}

/// Appends a tier block built from each node's ground-truth material.
/// Depth 0 leaves the graph untouched.
pub fn inject_tier_features(
    g: &AssemblyGraph,
    depth: usize,
    tiers: &TierEncoder,
    catalog: &MaterialCatalog,
) -> Result<AssemblyGraph> {
    if depth == 0 {
        return Ok(g.clone());
    }
    if depth > 3 {
        return Err(Error::Config(format!("tier depth {depth} outside 0..=3")));
    }
    let rows: Vec<Vec<f32>> = g.material_ids.iter().map(|m| tiers.encode(m, catalog, depth)).collect();
    g.append_block(blocks::TIER_ONEHOT, &rows, false)
}

/// Appends a tier block from explicit rows (e.g. user constraints).
pub fn with_tier_rows(g: &AssemblyGraph, rows: &[Vec<f32>]) -> Result<AssemblyGraph> {
    g.append_block(blocks::TIER_ONEHOT, rows, false)
}

/// Input guidance a model was trained with: context labels on a fraction of
/// nodes, tier hints to a depth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Guidance {
    pub context_ratio: f64,
    pub tier_depth: usize,
}

impl Guidance {
    /// Material block with seeded context labels first, then the tier block.
    pub fn apply(&self, g: &AssemblyGraph, fitted: &FittedState, catalog: &MaterialCatalog, seed: u64) -> Result<AssemblyGraph> {
        if !(0.0..1.0).contains(&self.context_ratio) {
            return Err(Error::Config(format!("context ratio {} outside [0, 1)", self.context_ratio)));
        }
        let g = if self.context_ratio > 0.0 {
            inject_context_labels(&add_material_block(g, fitted.labels.len())?, self.context_ratio, seed)?
        } else {
            g.clone()
        };
        inject_tier_features(&g, self.tier_depth, &fitted.tiers, catalog)
    }
}

/// Zero material one-hot for a label index, used by callers that build
/// material rows by hand.
pub fn material_row(label: usize, fitted: &FittedState) -> Vec<f32> {
    encode_material_onehot(label, &fitted.labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub shape: [usize; 2],
    pub data: Vec<f32>,
}

/// On-disk form of one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBundle {
    pub graph_id: String,
    pub schema: FeatureSchema,
    pub x: MatrixJson,
    pub edge_index: [Vec<usize>; 2],
    pub edge_attr: MatrixJson,
    pub y: Vec<usize>,
    pub node_ids: Vec<String>,
    #[serde(default)]
    pub target_mask: Option<Vec<bool>>,
    #[serde(default)]
    pub material_ids: Option<Vec<String>>,
}

impl From<&AssemblyGraph> for GraphBundle {
    fn from(g: &AssemblyGraph) -> Self {
        Self {
            graph_id: g.graph_id.clone(),
            schema: g.schema.clone(),
            x: MatrixJson {
                shape: [g.num_nodes(), g.width()],
                data: g.x.clone(),
            },
            edge_index: [g.edge_src.clone(), g.edge_dst.clone()],
            edge_attr: MatrixJson {
                shape: [g.num_edges(), EDGE_WIDTH],
                data: g.edge_attr.clone(),
            },
            y: g.y.clone(),
            node_ids: g.node_ids.clone(),
            target_mask: Some(g.target_mask.clone()),
            material_ids: Some(g.material_ids.clone()),
        }
    }
}

impl TryFrom<GraphBundle> for AssemblyGraph {
    type Error = Error;

    fn try_from(b: GraphBundle) -> Result<Self> {
        let n = b.node_ids.len();
        if b.x.shape != [n, b.schema.node_width()] {
            return Err(Error::Schema(format!(
                "bundle {}: x shape {:?} does not match {n} nodes of width {}",
                b.graph_id,
                b.x.shape,
                b.schema.node_width()
            )));
        }
        if b.edge_attr.shape != [b.edge_index[0].len(), EDGE_WIDTH] {
            return Err(Error::Schema(format!("bundle {}: edge_attr shape {:?}", b.graph_id, b.edge_attr.shape)));
        }
        let [edge_src, edge_dst] = b.edge_index;
        let g = AssemblyGraph {
            graph_id: b.graph_id,
            node_ids: b.node_ids,
            x: b.x.data,
            edge_src,
            edge_dst,
            edge_attr: b.edge_attr.data,
            target_mask: b.target_mask.unwrap_or_else(|| vec![true; n]),
            material_ids: b.material_ids.unwrap_or_else(|| vec![String::new(); n]),
            y: b.y,
            schema: b.schema,
        };
        g.check()?;
        Ok(g)
    }
}

impl AssemblyGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&GraphBundle::from(self)).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bundle: GraphBundle = serde_json::from_str(text)?;
        bundle.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
