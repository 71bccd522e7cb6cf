//! Assembly JSON ingestion: parsing, body/connection extraction and the
//! default-material filter.

use std::collections::{BTreeMap, HashMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::catalog::MaterialCatalog;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub y: f64,
    #[serde(default)]
    pub z: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BodyPhysical {
    #[serde(default)]
    pub surface_area: f64,
    #[serde(default)]
    pub volume: f64,
    #[serde(default)]
    pub center_of_mass: Vec3,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OccurrencePhysical {
    #[serde(default)]
    pub surface_area: f64,
    #[serde(default)]
    pub volume: f64,
}

fn visible_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBody {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub physical_properties: BodyPhysical,
    #[serde(default)]
    pub material_id: String,
    #[serde(default)]
    pub appearance_id: String,
    #[serde(default = "visible_default")]
    pub is_visible: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Occurrence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uuid: Option<String>,
    #[serde(default)]
    pub name: String,
    #[serde(default = "visible_default")]
    pub is_visible: bool,
    #[serde(default)]
    pub physical_properties: OccurrencePhysical,
    #[serde(default)]
    pub bodies: Vec<String>,
    #[serde(default)]
    pub occurrences: Vec<Occurrence>,
}

/// Root of the occurrence hierarchy. Bodies listed here sit at depth 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    #[serde(default)]
    pub bodies: Vec<String>,
    #[serde(default)]
    pub occurrences: Vec<Occurrence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BodyPair {
    pub body_one: String,
    pub body_two: String,
}

/// Connection lists appear either as arrays or as maps keyed by entity id.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum PairList {
    List(Vec<BodyPair>),
    Map(BTreeMap<String, BodyPair>),
}

fn pairs<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<BodyPair>, D::Error> {
    Ok(match Option::<PairList>::deserialize(d)? {
        None => Vec::new(),
        Some(PairList::List(v)) => v,
        Some(PairList::Map(m)) => m.into_values().collect(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyPhysical {
    #[serde(default)]
    pub volume: f64,
    #[serde(default)]
    pub center_of_mass: Vec3,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyGeometric {
    #[serde(default)]
    pub edges: f64,
    #[serde(default)]
    pub faces: f64,
    #[serde(default)]
    pub loops: f64,
    #[serde(default)]
    pub shells: f64,
    #[serde(default)]
    pub vertices: f64,
}

/// Assembly-level descriptors shared by all bodies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyMeta {
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub industry: Option<String>,
    #[serde(default)]
    pub products: Vec<String>,
    #[serde(default)]
    pub physical: AssemblyPhysical,
    #[serde(default)]
    pub geometric: AssemblyGeometric,
}

/// Flattened view of one occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatOccurrence {
    pub name: String,
    pub parent: Option<usize>,
    /// 1 for top-level occurrences.
    pub depth: usize,
    /// Own visibility combined with every ancestor's.
    pub visible: bool,
    pub physical: OccurrencePhysical,
    pub bodies: Vec<String>,
}

/// A parsed assembly document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAssembly {
    #[serde(default)]
    pub assembly_id: String,
    #[serde(default)]
    pub tree: Tree,
    #[serde(default)]
    pub bodies: BTreeMap<String, RawBody>,
    #[serde(default, deserialize_with = "pairs")]
    pub joints: Vec<BodyPair>,
    #[serde(default, deserialize_with = "pairs")]
    pub as_built_joints: Vec<BodyPair>,
    #[serde(default, deserialize_with = "pairs")]
    pub contacts: Vec<BodyPair>,
    #[serde(default)]
    pub meta: AssemblyMeta,
    #[serde(skip)]
    pub occurrences: Vec<FlatOccurrence>,
}

impl RawAssembly {
    /// Number of source connections (joints, as-built joints and contacts).
    pub fn connection_count(&self) -> usize {
        self.joints.len() + self.as_built_joints.len() + self.contacts.len()
    }

    fn flatten(&mut self) {
        fn walk(occ: &Occurrence, parent: Option<usize>, depth: usize, visible: bool, out: &mut Vec<FlatOccurrence>) {
            let idx = out.len();
            let visible = visible && occ.is_visible;
            out.push(FlatOccurrence {
                name: occ.name.clone(),
                parent,
                depth,
                visible,
                physical: occ.physical_properties.clone(),
                bodies: occ.bodies.clone(),
            });
            for child in &occ.occurrences {
                walk(child, Some(idx), depth + 1, visible, out);
            }
        }
        let mut out = Vec::new();
        for occ in &self.tree.occurrences {
            walk(occ, None, 1, true, &mut out);
        }
        self.occurrences = out;
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let tree_refs = self
            .tree
            .bodies
            .iter()
            .chain(self.occurrences.iter().flat_map(|o| o.bodies.iter()));
        for uuid in tree_refs {
            if !self.bodies.contains_key(uuid) {
                return Err(Error::Schema(format!(
                    "assembly {}: tree references unknown body {uuid}",
                    self.assembly_id
                )));
            }
            if !seen.insert(uuid) {
                return Err(Error::Schema(format!(
                    "assembly {}: body {uuid} appears twice in the tree",
                    self.assembly_id
                )));
            }
        }
        let lists = [("joint", &self.joints), ("as-built joint", &self.as_built_joints), ("contact", &self.contacts)];
        for (kind, list) in lists {
            for p in list {
                for uuid in [&p.body_one, &p.body_two] {
                    if !self.bodies.contains_key(uuid) {
                        return Err(Error::Schema(format!(
                            "assembly {}: {kind} references unknown body {uuid}",
                            self.assembly_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Parses one assembly document. `fallback_id` names the assembly when the
/// document carries no `assembly_id`.
pub fn parse_assembly(document: &str, fallback_id: &str) -> Result<RawAssembly> {
    let mut a: RawAssembly = serde_json::from_str(document).map_err(|e| Error::Parse {
        offset: byte_offset(document, e.line(), e.column()),
        message: e.to_string(),
    })?;
    if a.assembly_id.is_empty() {
        a.assembly_id = fallback_id.to_string();
    }
    a.flatten();
    a.validate()?;
    Ok(a)
}

/// Per-body attributes after hierarchy resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyRecord {
    pub uuid: String,
    pub body_name: String,
    pub occurrence_name: String,
    pub area: f64,
    pub volume: f64,
    pub center_of_mass: Vec3,
    pub occurrence_area: f64,
    pub occurrence_volume: f64,
    pub physical_material_id: String,
    pub appearance_id: String,
    pub visible: bool,
    pub depth: usize,
    /// Index of the immediate occurrence in the flattened hierarchy.
    #[serde(default)]
    pub occurrence: Option<usize>,
}

fn body_record(uuid: &str, raw: &RawBody, occ: Option<(usize, &FlatOccurrence)>) -> BodyRecord {
    let p = &raw.physical_properties;
    BodyRecord {
        uuid: uuid.to_string(),
        body_name: raw.name.clone(),
        occurrence_name: occ.map(|(_, o)| o.name.clone()).unwrap_or_default(),
        area: p.surface_area,
        volume: p.volume,
        center_of_mass: p.center_of_mass,
        occurrence_area: occ.map_or(0.0, |(_, o)| o.physical.surface_area),
        occurrence_volume: occ.map_or(0.0, |(_, o)| o.physical.volume),
        physical_material_id: raw.material_id.clone(),
        appearance_id: raw.appearance_id.clone(),
        visible: raw.is_visible && occ.is_none_or(|(_, o)| o.visible),
        depth: occ.map_or(0, |(_, o)| o.depth),
        occurrence: occ.map(|(i, _)| i),
    }
}

/// Visible bodies in hierarchy order: root bodies first, then occurrences
/// depth-first.
pub fn extract_bodies(a: &RawAssembly) -> Vec<BodyRecord> {
    let root = a.tree.bodies.iter().map(|u| body_record(u, &a.bodies[u], None));
    let nested = a.occurrences.iter().enumerate().flat_map(|(i, o)| {
        o.bodies
            .iter()
            .map(move |u| body_record(u, &a.bodies[u], Some((i, o))))
    });
    root.chain(nested).filter(|b| b.visible).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConnectionKind {
    Contact,
    Joint,
    Hierarchical,
}

impl ConnectionKind {
    pub const ALL: [ConnectionKind; 3] = [ConnectionKind::Contact, ConnectionKind::Joint, ConnectionKind::Hierarchical];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ConnectionKind::Contact => "contact",
            ConnectionKind::Joint => "joint",
            ConnectionKind::Hierarchical => "hierarchical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionRecord {
    pub src: String,
    pub dst: String,
    pub kind: ConnectionKind,
}

/// Typed body-pair relations among the visible `bodies`.
///
/// Contacts come first, then joints and as-built joints (both `Joint`), then
/// pairwise `Hierarchical` records for bodies sharing an immediate
/// occurrence. Parallel connections are kept.
pub fn extract_connections(a: &RawAssembly, bodies: &[BodyRecord]) -> Vec<ConnectionRecord> {
    let visible: HashSet<&str> = bodies.iter().map(|b| b.uuid.as_str()).collect();
    let mut out = Vec::new();
    let sources = [
        (ConnectionKind::Contact, &a.contacts),
        (ConnectionKind::Joint, &a.joints),
        (ConnectionKind::Joint, &a.as_built_joints),
    ];
    for (kind, list) in sources {
        for p in list {
            if p.body_one == p.body_two {
                warn!("{}: dropping self-connection on {}", a.assembly_id, p.body_one);
                continue;
            }
            if !visible.contains(p.body_one.as_str()) || !visible.contains(p.body_two.as_str()) {
                warn!(
                    "{}: dropping {} between {} and {} (endpoint not visible)",
                    a.assembly_id,
                    kind.name(),
                    p.body_one,
                    p.body_two
                );
                continue;
            }
            out.push(ConnectionRecord {
                src: p.body_one.clone(),
                dst: p.body_two.clone(),
                kind,
            });
        }
    }
    let mut groups: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for b in bodies {
        if let Some(o) = b.occurrence {
            groups.entry(o).or_default().push(&b.uuid);
        }
    }
    for members in groups.values() {
        for (i, u) in members.iter().enumerate() {
            for v in &members[i + 1..] {
                out.push(ConnectionRecord {
                    src: u.to_string(),
                    dst: v.to_string(),
                    kind: ConnectionKind::Hierarchical,
                });
            }
        }
    }
    out
}

/// Everything downstream stages need from one assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyRecords {
    pub assembly_id: String,
    pub bodies: Vec<BodyRecord>,
    pub connections: Vec<ConnectionRecord>,
    pub meta: AssemblyMeta,
}

impl AssemblyRecords {
    pub fn from_raw(a: &RawAssembly) -> Self {
        let bodies = extract_bodies(a);
        let connections = extract_connections(a, &bodies);
        Self {
            assembly_id: a.assembly_id.clone(),
            bodies,
            connections,
            meta: a.meta.clone(),
        }
    }
}

/// True when every visible body carries both the default material and the
/// default appearance.
pub fn is_all_default(bodies: &[BodyRecord], catalog: &MaterialCatalog) -> bool {
    bodies.iter().all(|b| {
        b.physical_material_id == catalog.default_material_id && b.appearance_id == catalog.default_appearance_id
    })
}

/// Drops assemblies with no deliberate material choice. Returns the kept
/// assemblies and the ids of the dropped ones.
pub fn filter_default_assemblies(
    assemblies: Vec<AssemblyRecords>,
    catalog: &MaterialCatalog,
) -> (Vec<AssemblyRecords>, Vec<String>) {
    let mut dropped = Vec::new();
    let kept = assemblies
        .into_iter()
        .filter(|a| {
            let drop = is_all_default(&a.bodies, catalog);
            if drop {
                dropped.push(a.assembly_id.clone());
            }
            !drop
        })
        .collect();
    (kept, dropped)
}

/// Index from body uuid to record position.
pub fn body_index(bodies: &[BodyRecord]) -> HashMap<&str, usize> {
    bodies.iter().enumerate().map(|(i, b)| (b.uuid.as_str(), i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(tree: &str, contacts: &str) -> String {
        format!(
            r#"{{
              "assembly_id": "t",
              "tree": {tree},
              "bodies": {{
                "A": {{"name": "a", "material_id": "m", "appearance_id": "x"}},
                "B": {{"name": "b"}},
                "C": {{"name": "c"}},
                "D": {{"name": "d", "is_visible": false}}
              }},
              "contacts": {contacts}
            }}"#
        )
    }

    #[test]
    fn single_body_document() {
        let a = parse_assembly(
            r#"{"tree": {"occurrences": [{"name": "o", "bodies": ["A"]}]}, "bodies": {"A": {"name": "x"}}}"#,
            "one",
        )
        .unwrap();
        assert_eq!(a.assembly_id, "one");
        assert_eq!(a.bodies.len(), 1);
        assert_eq!(a.connection_count(), 0);
        let b = extract_bodies(&a);
        assert!(extract_connections(&a, &b).is_empty());
    }

    #[test]
    fn dangling_contact_is_schema_error() {
        let text = doc(r#"{"bodies": ["A", "B"]}"#, r#"[{"body_one": "A", "body_two": "Z"}]"#);
        match parse_assembly(&text, "t") {
            Err(Error::Schema(msg)) => assert!(msg.contains('Z')),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_offset() {
        let text = "{\n  \"tree\": {,\n}";
        match parse_assembly(text, "t") {
            Err(Error::Parse { offset, .. }) => assert_eq!(&text[offset..offset + 1], ","),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn depths_and_root_bodies() {
        let tree = r#"{"bodies": ["A"], "occurrences": [
            {"name": "outer", "bodies": ["B"], "occurrences": [{"name": "inner", "bodies": ["C", "D"]}]}
        ]}"#;
        let a = parse_assembly(&doc(tree, "[]"), "t").unwrap();
        let b = extract_bodies(&a);
        assert_eq!(b.len(), 3);
        assert_eq!((b[0].depth, b[0].occurrence_name.as_str()), (0, ""));
        assert_eq!((b[1].depth, b[1].occurrence_name.as_str()), (1, "outer"));
        assert_eq!((b[2].depth, b[2].occurrence_name.as_str()), (2, "inner"));
    }

    #[test]
    fn invisible_occurrence_hides_its_bodies() {
        let tree = r#"{"occurrences": [{"name": "o", "is_visible": false, "bodies": ["A", "B"]}, {"name": "p", "bodies": ["C"]}]}"#;
        let a = parse_assembly(&doc(tree, "[]"), "t").unwrap();
        let b = extract_bodies(&a);
        assert_eq!(b.iter().map(|r| r.uuid.as_str()).collect::<Vec<_>>(), ["C"]);
    }

    #[test]
    fn hierarchical_clique_and_parallel_contacts() {
        let tree = r#"{"occurrences": [{"name": "o", "bodies": ["A", "B", "C"]}]}"#;
        let contacts = r#"[{"body_one": "A", "body_two": "B"}, {"body_one": "A", "body_two": "B"}, {"body_one": "A", "body_two": "D"}]"#;
        let a = parse_assembly(&doc(tree, contacts), "t").unwrap();
        let b = extract_bodies(&a);
        let c = extract_connections(&a, &b);
        let contacts: Vec<_> = c.iter().filter(|r| r.kind == ConnectionKind::Contact).collect();
        assert_eq!(contacts.len(), 2);
        let hier: Vec<_> = c
            .iter()
            .filter(|r| r.kind == ConnectionKind::Hierarchical)
            .map(|r| (r.src.as_str(), r.dst.as_str()))
            .collect();
        assert_eq!(hier, [("A", "B"), ("A", "C"), ("B", "C")]);
    }

    #[test]
    fn as_built_joint_maps_to_joint() {
        let text = r#"{"tree": {"bodies": ["A", "B"]}, "bodies": {"A": {}, "B": {}},
            "as_built_joints": {"j1": {"body_one": "A", "body_two": "B"}}}"#;
        let a = parse_assembly(text, "t").unwrap();
        let c = extract_connections(&a, &extract_bodies(&a));
        assert_eq!(c, [ConnectionRecord { src: "A".into(), dst: "B".into(), kind: ConnectionKind::Joint }]);
    }

    #[test]
    fn duplicate_tree_reference_rejected() {
        let tree = r#"{"bodies": ["A"], "occurrences": [{"bodies": ["A"]}]}"#;
        assert!(matches!(parse_assembly(&doc(tree, "[]"), "t"), Err(Error::Schema(_))));
    }
}
