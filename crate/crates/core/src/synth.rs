//! Synthetic assembly corpora with known label mechanisms.
//!
//! * `planted`: a body's material is a fixed function of the keyword in its
//!   name; bodies with default names take the strict majority material of
//!   their keyword-named neighbours.
//! * `homophily`: unnamed bodies in two or three densely connected
//!   communities, one material per community.
//! * `taxonomy`: twelve materials in four leaf categories of three; physical
//!   and global attributes are constant, so only tier hints help.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::catalog::{MaterialCatalog, MaterialEntry};
use crate::corpus::BuildOptions;
use crate::encoding::{seed_from, EmbeddingTable};
use crate::error::{Error, Result};
use crate::ingest::{
    parse_assembly, AssemblyGeometric, AssemblyMeta, AssemblyPhysical, AssemblyRecords, BodyPair, BodyPhysical,
    Occurrence, OccurrencePhysical, RawAssembly, RawBody, Tree, Vec3,
};
use crate::split::SplitManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Planted,
    Homophily,
    Taxonomy,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Planted => "planted",
            SynthKind::Homophily => "homophily",
            SynthKind::Taxonomy => "taxonomy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "planted" => Ok(SynthKind::Planted),
            "homophily" => Ok(SynthKind::Homophily),
            "taxonomy" => Ok(SynthKind::Taxonomy),
            _ => Err(Error::Config(format!("unknown corpus kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    /// Assemblies that survive filtering and the discard rule.
    pub graphs: usize,
    pub seed: u64,
    pub semantic_dim: usize,
    pub visual_dim: usize,
    pub test_fraction: f64,
}

impl SynthConfig {
    pub fn new(kind: SynthKind, graphs: usize, seed: u64) -> Self {
        Self {
            kind,
            graphs,
            seed,
            semantic_dim: 32,
            visual_dim: 32,
            test_fraction: 0.2,
        }
    }
}

pub const DEFAULT_MATERIAL: &str = "SYN-DEFAULT";
pub const DEFAULT_APPEARANCE: &str = "SYN-APPEARANCE-DEFAULT";

const KEYWORDS: [&str; 24] = [
    "gear", "shaft", "bolt", "nut", "washer", "bracket", "housing", "cover", "spring", "bearing", "pin", "plate",
    "frame", "handle", "wheel", "axle", "lever", "clamp", "hinge", "panel", "rod", "tube", "knob", "seal",
];
const DISTRACTORS: [&str; 8] = ["left", "right", "upper", "lower", "main", "drive", "unit", "assembly"];
const PLANTED_MATERIALS: usize = 6;
const HOMOPHILY_MATERIALS: usize = 5;
const CATEGORIES: [&str; 3] = ["Machinery", "Furniture", "Vehicles"];
const INDUSTRIES: [&str; 2] = ["Industrial Equipment", "Consumer Goods"];
const PRODUCTS: [&str; 4] = ["Fusion 360", "Inventor", "SolidWorks", "Onshape"];

/// Catalog id of synthetic material `i`.
pub fn material_id(i: usize) -> String {
    format!("SYN-M{i:02}")
}

/// Taxonomy materials: `(tier1, tier2, tier3)` of leaf group `g`.
fn taxonomy_tiers(group: usize) -> (&'static str, &'static str, &'static str) {
    [
        ("Metal", "Ferrous", "Carbon Steel"),
        ("Metal", "Non-Ferrous", "Aluminum Alloy"),
        ("Plastic", "Thermoplastic", "Polyamide"),
        ("Plastic", "Thermoset", "Epoxy"),
    ][group]
}

/// Label frequencies inside a taxonomy leaf group.
const GROUP_SKEW: [f64; 3] = [0.5, 0.3, 0.2];

fn catalog(kind: SynthKind) -> MaterialCatalog {
    let mut materials = BTreeMap::new();
    let entry = |name: String, t: (&str, &str, &str)| MaterialEntry {
        name,
        tier1: t.0.to_string(),
        tier2: t.1.to_string(),
        tier3: t.2.to_string(),
    };
    let count = match kind {
        SynthKind::Planted => PLANTED_MATERIALS,
        SynthKind::Homophily => HOMOPHILY_MATERIALS,
        SynthKind::Taxonomy => 12,
    };
    for i in 0..count {
        materials.insert(material_id(i), entry(format!("Material {i}"), taxonomy_tiers((i / 3) % 4)));
    }
    materials.insert(DEFAULT_MATERIAL.to_string(), entry("Steel".into(), taxonomy_tiers(0)));
    MaterialCatalog {
        default_material_id: DEFAULT_MATERIAL.to_string(),
        default_appearance_id: DEFAULT_APPEARANCE.to_string(),
        materials,
    }
}

fn semantic_table(dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[b"synth-semantic", &seed.to_le_bytes()]));
    let mut vectors = BTreeMap::new();
    for tok in KEYWORDS.iter().chain(&DISTRACTORS) {
        let v: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        vectors.insert(tok.to_string(), v);
    }
    EmbeddingTable::new(dim, vectors)
}

/// Undirected structure of one generated assembly.
struct Layout {
    n: usize,
    /// Occurrence membership; `None` for root bodies.
    occurrence: Vec<Option<usize>>,
    occurrences: usize,
    /// `(a, b, kind)` with kind 0 contact, 1 joint, 2 as-built joint.
    links: Vec<(usize, usize, u8)>,
}

impl Layout {
    fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b, _) in &self.links {
            adj[a].push(b);
            adj[b].push(a);
        }
        for a in 0..self.n {
            for b in a + 1..self.n {
                if self.occurrence[a].is_some() && self.occurrence[a] == self.occurrence[b] {
                    adj[a].push(b);
                    adj[b].push(a);
                }
            }
        }
        adj
    }
}

fn link_kind(rng: &mut ChaCha8Rng) -> u8 {
    match rng.random_range(0..10) {
        0..=5 => 0,
        6..=8 => 1,
        _ => 2,
    }
}

/// Random spanning tree plus extra links; small occurrences.
fn random_layout(rng: &mut ChaCha8Rng, n: usize, grouped: bool) -> Layout {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut links = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        links.push((order[i], order[j], link_kind(rng)));
    }
    for _ in 0..n / 4 {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            links.push((a, b, link_kind(rng)));
        }
    }
    let mut occurrence = vec![None; n];
    let mut occurrences = 0;
    if grouped {
        order.shuffle(rng);
        let mut i = rng.random_range(0..=n / 3);
        while i < n {
            let size = rng.random_range(2..=4).min(n - i);
            for &v in &order[i..i + size] {
                occurrence[v] = Some(occurrences);
            }
            occurrences += 1;
            i += size;
        }
    }
    Layout {
        n,
        occurrence,
        occurrences,
        links,
    }
}

/// Communities with dense internal links and one link between neighbours.
fn community_layout(rng: &mut ChaCha8Rng, n: usize, communities: usize) -> (Layout, Vec<usize>) {
    let mut member: Vec<usize> = (0..n).map(|i| i % communities).collect();
    member.shuffle(rng);
    let groups: Vec<Vec<usize>> = (0..communities)
        .map(|c| (0..n).filter(|&v| member[v] == c).collect())
        .collect();
    let mut links = Vec::new();
    for g in &groups {
        for i in 1..g.len() {
            links.push((g[i], g[rng.random_range(0..i)], 0));
        }
        for _ in 0..g.len() {
            let a = *g.choose(rng).expect("nonempty community");
            let b = *g.choose(rng).expect("nonempty community");
            if a != b {
                links.push((a, b, 0));
            }
        }
    }
    for c in 1..communities {
        let a = *groups[c - 1].choose(rng).expect("nonempty community");
        let b = *groups[c].choose(rng).expect("nonempty community");
        links.push((a, b, 1));
    }
    (
        Layout {
            n,
            occurrence: vec![None; n],
            occurrences: 0,
            links,
        },
        member,
    )
}

struct BodySpec {
    name: String,
    material: String,
    appearance: String,
    visible: bool,
}

fn physical(rng: &mut ChaCha8Rng) -> BodyPhysical {
    BodyPhysical {
        surface_area: rng.random_range(1e-4..1e-2),
        volume: rng.random_range(1e-7..1e-4),
        center_of_mass: Vec3 {
            x: rng.random_range(-0.2..0.2),
            y: rng.random_range(-0.2..0.2),
            z: rng.random_range(-0.2..0.2),
        },
    }
}

fn meta(rng: &mut ChaCha8Rng) -> AssemblyMeta {
    let mut products: Vec<String> = PRODUCTS
        .iter()
        .filter(|_| rng.random_bool(0.4))
        .map(|p| p.to_string())
        .collect();
    products.sort();
    AssemblyMeta {
        category: Some(CATEGORIES.choose(rng).expect("nonempty").to_string()),
        industry: Some(INDUSTRIES.choose(rng).expect("nonempty").to_string()),
        products,
        physical: AssemblyPhysical {
            volume: rng.random_range(1e-5..1e-2),
            center_of_mass: Vec3 {
                x: rng.random_range(-0.1..0.1),
                y: rng.random_range(-0.1..0.1),
                z: rng.random_range(-0.1..0.1),
            },
        },
        geometric: AssemblyGeometric {
            edges: rng.random_range(50..5000) as f64,
            faces: rng.random_range(20..2000) as f64,
            loops: rng.random_range(20..3000) as f64,
            shells: rng.random_range(1..40) as f64,
            vertices: rng.random_range(50..4000) as f64,
        },
    }
}

/// Writes the layout and bodies into an assembly document. Invisible
/// extra bodies are appended to the first occurrence or the root.
fn assemble(rng: &mut ChaCha8Rng, id: &str, layout: &Layout, specs: &[BodySpec], occurrence_names: &[String]) -> RawAssembly {
    let uuid = |i: usize| format!("{id}-b{i:03}");
    let mut bodies = BTreeMap::new();
    for (i, s) in specs.iter().enumerate() {
        bodies.insert(
            uuid(i),
            RawBody {
                name: s.name.clone(),
                physical_properties: physical(rng),
                material_id: s.material.clone(),
                appearance_id: s.appearance.clone(),
                is_visible: s.visible,
            },
        );
    }
    let mut occurrences: Vec<Occurrence> = (0..layout.occurrences)
        .map(|o| Occurrence {
            uuid: Some(format!("{id}-o{o:02}")),
            name: occurrence_names[o].clone(),
            is_visible: true,
            physical_properties: OccurrencePhysical {
                surface_area: rng.random_range(1e-3..1e-1),
                volume: rng.random_range(1e-6..1e-3),
            },
            bodies: Vec::new(),
            occurrences: Vec::new(),
        })
        .collect();
    let mut root = Vec::new();
    for i in 0..specs.len() {
        match layout.occurrence.get(i).copied().flatten() {
            Some(o) => occurrences[o].bodies.push(uuid(i)),
            None => root.push(uuid(i)),
        }
    }
    // nest the last occurrence inside the first now and then
    if occurrences.len() >= 3 && rng.random_bool(0.3) {
        let last = occurrences.pop().expect("nonempty");
        occurrences[0].occurrences.push(last);
    }
    let pair = |a: usize, b: usize| BodyPair {
        body_one: uuid(a),
        body_two: uuid(b),
    };
    let mut contacts = Vec::new();
    let mut joints = Vec::new();
    let mut as_built = Vec::new();
    for &(a, b, k) in &layout.links {
        match k {
            0 => contacts.push(pair(a, b)),
            1 => joints.push(pair(a, b)),
            _ => as_built.push(pair(a, b)),
        }
    }
    RawAssembly {
        assembly_id: id.to_string(),
        tree: Tree {
            bodies: root,
            occurrences,
        },
        bodies,
        joints,
        as_built_joints: as_built,
        contacts,
        meta: meta(rng),
        occurrences: Vec::new(),
    }
}

/// Physical material and appearance for a label; a tenth of bodies carry
/// it as appearance only.
fn material_fields(rng: &mut ChaCha8Rng, material: &str) -> (String, String) {
    if rng.random_bool(0.1) {
        (DEFAULT_MATERIAL.to_string(), material.to_string())
    } else {
        (material.to_string(), DEFAULT_APPEARANCE.to_string())
    }
}

fn keyword_name(rng: &mut ChaCha8Rng, word: &str) -> String {
    let k = rng.random_range(1..20);
    let mut cap = word.to_string();
    cap[..1].make_ascii_uppercase();
    match rng.random_range(0..4) {
        0 => word.to_string(),
        1 => format!("{cap} {k}"),
        2 => format!("{word}_{k}"),
        _ => format!("{} {word}", DISTRACTORS[rng.random_range(0..4)]),
    }
}

fn occurrence_names(rng: &mut ChaCha8Rng, count: usize) -> Vec<String> {
    (0..count)
        .map(|o| {
            if rng.random_bool(0.7) {
                format!("Component{}", o + 1)
            } else {
                format!("{} {}", DISTRACTORS[rng.random_range(4..8)], o + 1)
            }
        })
        .collect()
}

fn invisible_extra(rng: &mut ChaCha8Rng) -> Option<BodySpec> {
    rng.random_bool(0.3).then(|| BodySpec {
        name: "Hidden sketch body".into(),
        material: material_id(0),
        appearance: DEFAULT_APPEARANCE.into(),
        visible: false,
    })
}

fn planted(rng: &mut ChaCha8Rng, id: &str) -> RawAssembly {
    let n = rng.random_range(5..=12);
    let layout = random_layout(rng, n, true);
    let adj = layout.neighbours();
    let mut word: Vec<Option<usize>> = (0..n)
        .map(|_| (!rng.random_bool(0.15)).then(|| rng.random_range(0..KEYWORDS.len())))
        .collect();
    let mut label = vec![0; n];
    for v in 0..n {
        if let Some(w) = word[v] {
            label[v] = w % PLANTED_MATERIALS;
        }
    }
    for v in 0..n {
        if word[v].is_some() {
            continue;
        }
        let mut votes = [0usize; PLANTED_MATERIALS];
        for &u in &adj[v] {
            if let Some(w) = word[u] {
                votes[w % PLANTED_MATERIALS] += 1;
            }
        }
        let best = (0..PLANTED_MATERIALS).max_by_key(|&l| (votes[l], std::cmp::Reverse(l))).expect("nonempty");
        let tied = votes.iter().filter(|&&c| c == votes[best]).count() > 1;
        if votes[best] == 0 || tied {
            let w = rng.random_range(0..KEYWORDS.len());
            word[v] = Some(w);
            label[v] = w % PLANTED_MATERIALS;
        } else {
            label[v] = best;
        }
    }
    let mut specs: Vec<BodySpec> = (0..n)
        .map(|v| {
            let (material, appearance) = material_fields(rng, &material_id(label[v]));
            let name = match word[v] {
                Some(w) => keyword_name(rng, KEYWORDS[w]),
                None => format!("Body{}", v + 1),
            };
            BodySpec {
                name,
                material,
                appearance,
                visible: true,
            }
        })
        .collect();
    specs.extend(invisible_extra(rng));
    let names = occurrence_names(rng, layout.occurrences);
    assemble(rng, id, &layout, &specs, &names)
}

fn homophily(rng: &mut ChaCha8Rng, id: &str) -> RawAssembly {
    let n = rng.random_range(8..=16);
    let communities = rng.random_range(2..=3);
    let (layout, member) = community_layout(rng, n, communities);
    let mut palette: Vec<usize> = (0..HOMOPHILY_MATERIALS).collect();
    palette.shuffle(rng);
    let specs: Vec<BodySpec> = (0..n)
        .map(|v| {
            let (material, appearance) = material_fields(rng, &material_id(palette[member[v]]));
            BodySpec {
                name: format!("Body{}", v + 1),
                material,
                appearance,
                visible: true,
            }
        })
        .collect();
    assemble(rng, id, &layout, &specs, &[])
}

fn taxonomy(rng: &mut ChaCha8Rng, id: &str) -> RawAssembly {
    let n = rng.random_range(6..=12);
    let layout = random_layout(rng, n, true);
    let specs: Vec<BodySpec> = (0..n)
        .map(|v| {
            let group = rng.random_range(0..4);
            let u: f64 = rng.random();
            let member = if u < GROUP_SKEW[0] {
                0
            } else if u < GROUP_SKEW[0] + GROUP_SKEW[1] {
                1
            } else {
                2
            };
            let (material, appearance) = material_fields(rng, &material_id(3 * group + member));
            BodySpec {
                name: format!("Body{}", v + 1),
                material,
                appearance,
                visible: true,
            }
        })
        .collect();
    let names = (0..layout.occurrences).map(|o| format!("Component{}", o + 1)).collect::<Vec<_>>();
    let mut a = assemble(rng, id, &layout, &specs, &names);
    constant_attributes(&mut a);
    a
}

/// Identical physical and global attributes everywhere, so that nothing
/// but the graph structure and tier hints varies between bodies.
fn constant_attributes(a: &mut RawAssembly) {
    fn occurrences(list: &mut [Occurrence]) {
        for o in list {
            o.physical_properties = OccurrencePhysical {
                surface_area: 1e-2,
                volume: 1e-4,
            };
            occurrences(&mut o.occurrences);
        }
    }
    for b in a.bodies.values_mut() {
        b.physical_properties = BodyPhysical {
            surface_area: 1e-3,
            volume: 1e-5,
            center_of_mass: Vec3 { x: 0.0, y: 0.0, z: 0.0 },
        };
    }
    occurrences(&mut a.tree.occurrences);
    a.meta = AssemblyMeta {
        category: Some(CATEGORIES[0].to_string()),
        industry: Some(INDUSTRIES[0].to_string()),
        products: vec![PRODUCTS[0].to_string()],
        physical: AssemblyPhysical {
            volume: 1e-3,
            center_of_mass: Vec3 { x: 0.0, y: 0.0, z: 0.0 },
        },
        geometric: AssemblyGeometric {
            edges: 100.0,
            faces: 50.0,
            loops: 60.0,
            shells: 2.0,
            vertices: 80.0,
        },
    };
}

/// All bodies default/default: removed by the default-material filter.
fn all_default(rng: &mut ChaCha8Rng, id: &str) -> RawAssembly {
    let n = rng.random_range(3..=6);
    let layout = random_layout(rng, n, false);
    let specs: Vec<BodySpec> = (0..n)
        .map(|v| BodySpec {
            name: format!("Body{}", v + 1),
            material: DEFAULT_MATERIAL.into(),
            appearance: DEFAULT_APPEARANCE.into(),
            visible: true,
        })
        .collect();
    assemble(rng, id, &layout, &specs, &[])
}

/// Two bodies and one contact: removed by the discard rule.
fn too_small(rng: &mut ChaCha8Rng, id: &str) -> RawAssembly {
    let layout = Layout {
        n: 2,
        occurrence: vec![None; 2],
        occurrences: 0,
        links: vec![(0, 1, 0)],
    };
    let specs: Vec<BodySpec> = (0..2)
        .map(|v| BodySpec {
            name: format!("{} {}", KEYWORDS[v], v),
            material: material_id(v),
            appearance: DEFAULT_APPEARANCE.into(),
            visible: true,
        })
        .collect();
    assemble(rng, id, &layout, &specs, &[])
}

/// Generated corpus: assembly documents plus the side files a real corpus
/// would ship with.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub assemblies: Vec<RawAssembly>,
    pub catalog: MaterialCatalog,
    pub semantic: EmbeddingTable,
    pub split: SplitManifest,
    pub options: BuildOptions,
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.graphs < 2 {
        return Err(Error::Config("at least two graphs are needed".into()));
    }
    if !(0.0..1.0).contains(&config.test_fraction) {
        return Err(Error::Config(format!("test fraction {} outside [0, 1)", config.test_fraction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[b"synth", config.kind.name().as_bytes(), &config.seed.to_le_bytes()]));
    let prefix = config.kind.name();
    let mut assemblies = Vec::new();
    let mut valid_ids = Vec::new();
    for i in 0..config.graphs {
        let id = format!("{prefix}-{i:04}");
        let a = match config.kind {
            SynthKind::Planted => planted(&mut rng, &id),
            SynthKind::Homophily => homophily(&mut rng, &id),
            SynthKind::Taxonomy => taxonomy(&mut rng, &id),
        };
        valid_ids.push(id);
        assemblies.push(a);
    }
    for i in 0..config.graphs / 20 {
        assemblies.push(all_default(&mut rng, &format!("{prefix}-default-{i:03}")));
    }
    for i in 0..config.graphs / 50 {
        assemblies.push(too_small(&mut rng, &format!("{prefix}-small-{i:03}")));
    }
    let n_test = (config.graphs as f64 * config.test_fraction).round() as usize;
    let mut test_ids: Vec<String> = valid_ids.choose_multiple(&mut rng, n_test).cloned().collect();
    test_ids.sort();
    Ok(SynthCorpus {
        config: config.clone(),
        assemblies,
        catalog: catalog(config.kind),
        semantic: semantic_table(config.semantic_dim, config.seed)?,
        split: SplitManifest::new(config.seed, test_ids),
        options: BuildOptions {
            visual_dim: config.visual_dim,
            semantic_seed: config.seed,
            ..BuildOptions::default()
        },
    })
}

pub const ASSEMBLY_DIR: &str = "assemblies";
pub const CATALOG_FILE: &str = "catalog.json";
pub const SEMANTIC_FILE: &str = "semantic.txt";
pub const SPLIT_FILE: &str = "split.json";
pub const SYNTH_FILE: &str = "synth.json";

/// Contents of [`SYNTH_FILE`]: generator settings and the build options
/// the corpus expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFile {
    pub config: SynthConfig,
    pub options: BuildOptions,
}

impl SynthCorpus {
    /// Records as the ingest stage would produce them (through the JSON
    /// parser, so documents and records cannot drift apart).
    pub fn records(&self) -> Result<Vec<AssemblyRecords>> {
        self.assemblies
            .iter()
            .map(|a| {
                let text = serde_json::to_string(a)?;
                Ok(AssemblyRecords::from_raw(&parse_assembly(&text, &a.assembly_id)?))
            })
            .collect()
    }

    /// Writes `assemblies/*.json`, the catalog, the semantic table, the split
    /// manifest and the generator config.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let adir = dir.join(ASSEMBLY_DIR);
        std::fs::create_dir_all(&adir).map_err(|e| Error::io(&adir, e))?;
        let write = |path: &Path, text: String| std::fs::write(path, text).map_err(|e| Error::io(path, e));
        for a in &self.assemblies {
            write(&adir.join(format!("{}.json", a.assembly_id)), serde_json::to_string_pretty(a)?)?;
        }
        write(&dir.join(CATALOG_FILE), serde_json::to_string_pretty(&self.catalog)?)?;
        self.semantic.save(dir.join(SEMANTIC_FILE))?;
        write(&dir.join(SPLIT_FILE), serde_json::to_string_pretty(&self.split)?)?;
        write(&dir.join(SYNTH_FILE), serde_json::to_string_pretty(&SynthFile {
            config: self.config.clone(),
            options: self.options.clone(),
        })?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_documents() {
        let c = SynthConfig::new(SynthKind::Planted, 20, 4);
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a.assemblies, b.assemblies);
        assert_eq!(a.split, b.split);
        assert_eq!(a.split.test_ids.len(), 4);
    }

    #[test]
    fn every_kind_parses() {
        for kind in [SynthKind::Planted, SynthKind::Homophily, SynthKind::Taxonomy] {
            let s = generate(&SynthConfig::new(kind, 10, 1)).unwrap();
            let records = s.records().unwrap();
            assert_eq!(records.len(), 10);
            assert!(records.iter().all(|r| r.bodies.len() >= 2 && !r.connections.is_empty()));
        }
    }
}
