//! From assembly files to an encoded, split corpus of graphs, and back to
//! disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::catalog::{group_materials_top, resolve_material, MaterialCatalog, TOP_MATERIALS};
use crate::encoding::{
    EmbeddingTable, FittedState, GlobalVocabulary, NormStats, TierEncoder, DEFAULT_NAME_PATTERN, VISUAL_DIM,
};
use crate::error::{Error, Result};
use crate::graph::{base_schema, build_graph, validity, AssemblyGraph, DropReason, Encoders, Validity};
use crate::ingest::{filter_default_assemblies, parse_assembly, AssemblyRecords};
use crate::split::{split_dataset, Split, SplitManifest};

/// Outcome of reading an assembly directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files: usize,
    pub kept: Vec<String>,
    pub dropped_default: Vec<String>,
    /// `(file, error)` for documents that failed to parse or validate.
    pub failed: Vec<(String, String)>,
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Parses every `*.json` in `dir` (sorted by file name), extracts records
/// and drops all-default assemblies. Unreadable documents are reported, not
/// fatal.
pub fn ingest_dir(dir: &Path, catalog: &MaterialCatalog) -> Result<(Vec<AssemblyRecords>, IngestReport)> {
    let files = json_files(dir)?;
    let mut report = IngestReport {
        files: files.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for path in &files {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let parsed = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path, e))
            .and_then(|text| parse_assembly(&text, &stem));
        match parsed {
            Ok(raw) => records.push(AssemblyRecords::from_raw(&raw)),
            Err(e) => {
                warn!("{}: {e}", path.display());
                report.failed.push((path.display().to_string(), e.to_string()));
            }
        }
    }
    let (kept, dropped) = filter_default_assemblies(records, catalog);
    report.kept = kept.iter().map(|a| a.assembly_id.clone()).collect();
    report.dropped_default = dropped;
    Ok((kept, report))
}

pub fn save_records(path: &Path, records: &[AssemblyRecords]) -> Result<()> {
    let text = serde_json::to_string(records)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_records(path: &Path) -> Result<Vec<AssemblyRecords>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    pub top_materials: usize,
    /// Width of the stub geometry vectors when no visual table is given.
    pub visual_dim: usize,
    pub semantic_seed: u64,
    pub default_name_pattern: String,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            top_materials: TOP_MATERIALS,
            visual_dim: VISUAL_DIM,
            semantic_seed: 0,
            default_name_pattern: DEFAULT_NAME_PATTERN.to_string(),
        }
    }
}

/// Fits normalization, vocabularies and labels on training assemblies.
pub fn fit_state(
    train: &[&AssemblyRecords],
    catalog: &MaterialCatalog,
    semantic_dim: usize,
    visual_dim: usize,
    options: &BuildOptions,
) -> FittedState {
    let mut counts = BTreeMap::new();
    for a in train {
        for b in &a.bodies {
            *counts.entry(resolve_material(b, catalog).material_id).or_insert(0u64) += 1;
        }
    }
    FittedState {
        norm: NormStats::fit(train.iter().copied()),
        globals: GlobalVocabulary::fit(train.iter().map(|a| &a.meta)),
        labels: group_materials_top(&counts, options.top_materials),
        tiers: TierEncoder::from_catalog(catalog),
        default_name_pattern: options.default_name_pattern.clone(),
        semantic_seed: options.semantic_seed,
        semantic_dim,
        visual_dim,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEntry {
    pub graph_id: String,
    pub file: String,
    pub nodes: usize,
    pub edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedEntry {
    pub graph_id: String,
    pub reason: DropReason,
}

/// `manifest.json` of a corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema: crate::encoding::FeatureSchema,
    pub fitted: FittedState,
    pub catalog: MaterialCatalog,
    pub split: Split,
    pub split_seed: u64,
    pub graphs: Vec<GraphEntry>,
    pub dropped: Vec<DroppedEntry>,
}

/// Encoded graphs with their split and the state needed to encode more.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub graphs: BTreeMap<String, AssemblyGraph>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GRAPH_DIR: &str = "graphs";

impl Corpus {
    /// Discard rule, split, fit on train, encode. Test ids that fail the
    /// discard rule leave the test set with a warning.
    pub fn build(
        records: &[AssemblyRecords],
        catalog: &MaterialCatalog,
        semantic: &EmbeddingTable,
        visual: Option<&EmbeddingTable>,
        split: &SplitManifest,
        options: &BuildOptions,
    ) -> Result<Self> {
        let mut kept: Vec<&AssemblyRecords> = Vec::new();
        let mut dropped = Vec::new();
        for r in records {
            match validity(r.bodies.len(), r.connections.len()) {
                Validity::Keep => kept.push(r),
                Validity::Drop(reason) => dropped.push(DroppedEntry {
                    graph_id: r.assembly_id.clone(),
                    reason,
                }),
            }
        }
        let ids: Vec<String> = kept.iter().map(|r| r.assembly_id.clone()).collect();
        let restricted = split.restricted_to(&ids);
        if restricted.test_ids.len() != split.test_ids.len() {
            let known: Vec<&str> = records.iter().map(|r| r.assembly_id.as_str()).collect();
            if let Some(t) = split.test_ids.iter().find(|t| !known.contains(&t.as_str())) {
                return Err(Error::Manifest(format!("test id {t} is not among the assemblies")));
            }
            warn!(
                "{} test assemblies were discarded",
                split.test_ids.len() - restricted.test_ids.len()
            );
        }
        let parts = split_dataset(&ids, &restricted)?;
        let by_id: BTreeMap<&str, &AssemblyRecords> = kept.iter().map(|r| (r.assembly_id.as_str(), *r)).collect();
        let train: Vec<&AssemblyRecords> = parts.train.iter().map(|id| by_id[id.as_str()]).collect();
        let visual_dim = visual.map_or(options.visual_dim, EmbeddingTable::dim);
        let fitted = fit_state(&train, catalog, semantic.dim(), visual_dim, options);
        let schema = base_schema(&fitted, false);
        let encoders = Encoders::new(&fitted, semantic, visual, catalog)?;
        let mut graphs = BTreeMap::new();
        let mut entries = Vec::new();
        for r in &kept {
            let g = build_graph(r, &encoders, &schema)?;
            entries.push(GraphEntry {
                graph_id: g.graph_id.clone(),
                file: format!("{GRAPH_DIR}/{}.json", g.graph_id),
                nodes: g.num_nodes(),
                edges: g.num_edges(),
            });
            graphs.insert(g.graph_id.clone(), g);
        }
        Ok(Self {
            manifest: CorpusManifest {
                schema,
                fitted,
                catalog: catalog.clone(),
                split: parts,
                split_seed: split.seed,
                graphs: entries,
                dropped,
            },
            graphs,
        })
    }

    fn pick(&self, ids: &[String]) -> Vec<AssemblyGraph> {
        ids.iter().filter_map(|id| self.graphs.get(id).cloned()).collect()
    }

    pub fn train(&self) -> Vec<AssemblyGraph> {
        self.pick(&self.manifest.split.train)
    }

    pub fn val(&self) -> Vec<AssemblyGraph> {
        self.pick(&self.manifest.split.val)
    }

    pub fn test(&self) -> Vec<AssemblyGraph> {
        self.pick(&self.manifest.split.test)
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.fitted.labels.len()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let gdir = dir.join(GRAPH_DIR);
        std::fs::create_dir_all(&gdir).map_err(|e| Error::io(&gdir, e))?;
        for g in self.graphs.values() {
            g.save(gdir.join(format!("{}.json", g.graph_id)))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CorpusManifest = serde_json::from_str(&text)?;
        let mut graphs = BTreeMap::new();
        for e in &manifest.graphs {
            let g = AssemblyGraph::load(dir.join(&e.file))?;
            if g.schema != manifest.schema {
                return Err(Error::Schema(format!("graph {} does not match the corpus schema", e.graph_id)));
            }
            graphs.insert(e.graph_id.clone(), g);
        }
        Ok(Self { manifest, graphs })
    }
}
