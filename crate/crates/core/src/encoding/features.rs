use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::catalog::{LabelVocabulary, MaterialCatalog};
use crate::ingest::{AssemblyMeta, AssemblyRecords, BodyRecord, ConnectionKind};

pub const BODY_PHYSICAL_WIDTH: usize = 5;
pub const OCCURRENCE_PHYSICAL_WIDTH: usize = 2;
/// Assembly center of mass (3), volume, then edge/face/loop/shell/vertex counts.
pub const GLOBAL_SCALAR_WIDTH: usize = 9;

const CONSTANT_STD: f64 = 1e-12;

/// Mean and population standard deviation of one scalar field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub mean: f64,
    pub std: f64,
}

impl FieldStats {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }

    pub fn is_constant(&self) -> bool {
        self.std <= CONSTANT_STD
    }

    /// z-score; constant fields map to 0.
    pub fn z(&self, x: f64) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            (x - self.mean) / self.std
        }
    }
}

fn body_fields(b: &BodyRecord) -> [f64; BODY_PHYSICAL_WIDTH] {
    [b.area, b.volume, b.center_of_mass.x, b.center_of_mass.y, b.center_of_mass.z]
}

fn occurrence_fields(b: &BodyRecord) -> [f64; OCCURRENCE_PHYSICAL_WIDTH] {
    [b.occurrence_area, b.occurrence_volume]
}

fn global_fields(m: &AssemblyMeta) -> [f64; GLOBAL_SCALAR_WIDTH] {
    let p = &m.physical;
    let g = &m.geometric;
    [
        p.center_of_mass.x,
        p.center_of_mass.y,
        p.center_of_mass.z,
        p.volume,
        g.edges,
        g.faces,
        g.loops,
        g.shells,
        g.vertices,
    ]
}

/// z-score statistics fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub body: Vec<FieldStats>,
    pub occurrence: Vec<FieldStats>,
    pub global: Vec<FieldStats>,
}

impl NormStats {
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a AssemblyRecords>) -> Self {
        let train: Vec<&AssemblyRecords> = train.into_iter().collect();
        let bodies: Vec<&BodyRecord> = train.iter().flat_map(|a| &a.bodies).collect();
        let body = (0..BODY_PHYSICAL_WIDTH)
            .map(|i| FieldStats::fit(bodies.iter().map(|b| body_fields(b)[i])))
            .collect();
        let occurrence = (0..OCCURRENCE_PHYSICAL_WIDTH)
            .map(|i| FieldStats::fit(bodies.iter().map(|b| occurrence_fields(b)[i])))
            .collect();
        let global = (0..GLOBAL_SCALAR_WIDTH)
            .map(|i| FieldStats::fit(train.iter().map(|a| global_fields(&a.meta)[i])))
            .collect();
        Self {
            body,
            occurrence,
            global,
        }
    }
}

/// z-scored body fields (area, volume, center of mass) and occurrence fields
/// (area, volume).
pub fn normalize_physical(b: &BodyRecord, stats: &NormStats) -> ([f32; 5], [f32; 2]) {
    let mut body = [0f32; BODY_PHYSICAL_WIDTH];
    for ((o, &x), s) in body.iter_mut().zip(&body_fields(b)).zip(&stats.body) {
        *o = s.z(x) as f32;
    }
    let mut occ = [0f32; OCCURRENCE_PHYSICAL_WIDTH];
    for ((o, &x), s) in occ.iter_mut().zip(&occurrence_fields(b)).zip(&stats.occurrence) {
        *o = s.z(x) as f32;
    }
    (body, occ)
}

/// One-hot in the order `[Contact, Joint, Hierarchical]`.
pub fn encode_connection(kind: ConnectionKind) -> [f32; 3] {
    let mut v = [0.0; 3];
    v[kind.index()] = 1.0;
    v
}

/// Category, industry and product vocabularies seen in training.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalVocabulary {
    pub categories: Vec<String>,
    pub industries: Vec<String>,
    pub products: Vec<String>,
}

impl GlobalVocabulary {
    pub fn fit<'a>(metas: impl IntoIterator<Item = &'a AssemblyMeta>) -> Self {
        let mut cat = BTreeSet::new();
        let mut ind = BTreeSet::new();
        let mut prod = BTreeSet::new();
        for m in metas {
            cat.extend(m.category.iter().cloned());
            ind.extend(m.industry.iter().cloned());
            prod.extend(m.products.iter().cloned());
        }
        Self {
            categories: cat.into_iter().collect(),
            industries: ind.into_iter().collect(),
            products: prod.into_iter().collect(),
        }
    }

    pub fn width(&self) -> usize {
        GLOBAL_SCALAR_WIDTH + self.categories.len() + self.industries.len() + self.products.len()
    }
}

fn one_hot(vocab: &[String], value: Option<&str>, out: &mut Vec<f32>) {
    let start = out.len();
    out.resize(start + vocab.len(), 0.0);
    if let Some(i) = value.and_then(|v| vocab.iter().position(|x| x == v)) {
        out[start + i] = 1.0;
    }
}

/// Scalars, then one-hot category, one-hot industry and multi-hot products.
/// Values outside the vocabulary leave their block at zero.
pub fn encode_global(meta: &AssemblyMeta, vocab: &GlobalVocabulary, stats: &NormStats) -> Vec<f32> {
    let mut out = Vec::with_capacity(vocab.width());
    for (&x, s) in global_fields(meta).iter().zip(&stats.global) {
        out.push(s.z(x) as f32);
    }
    one_hot(&vocab.categories, meta.category.as_deref(), &mut out);
    one_hot(&vocab.industries, meta.industry.as_deref(), &mut out);
    let start = out.len();
    out.resize(start + vocab.products.len(), 0.0);
    for p in &meta.products {
        if let Some(i) = vocab.products.iter().position(|x| x == p) {
            out[start + i] = 1.0;
        }
    }
    out
}

pub fn encode_material_onehot(label: usize, vocab: &LabelVocabulary) -> Vec<f32> {
    let mut v = vec![0.0; vocab.len()];
    if let Some(x) = v.get_mut(label) {
        *x = 1.0;
    }
    v
}

/// One-hot blocks over the catalog's tier vocabularies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierEncoder {
    pub tiers: [Vec<String>; 3],
}

impl TierEncoder {
    pub fn from_catalog(catalog: &MaterialCatalog) -> Self {
        Self {
            tiers: catalog.tier_vocabularies(),
        }
    }

    /// Width of the concatenated tiers `1..=depth`.
    pub fn width(&self, depth: usize) -> usize {
        self.tiers.iter().take(depth.min(3)).map(Vec::len).sum()
    }

    /// Concatenated one-hots of the given tier names; missing or unknown
    /// tiers give zero blocks.
    pub fn encode_names(&self, names: &[&str], depth: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.width(depth));
        for (i, vocab) in self.tiers.iter().take(depth.min(3)).enumerate() {
            one_hot(vocab, names.get(i).copied(), &mut out);
        }
        out
    }

    pub fn encode(&self, material_id: &str, catalog: &MaterialCatalog, depth: usize) -> Vec<f32> {
        let names = catalog.get(material_id).map(|e| e.tiers()).unwrap_or_default();
        self.encode_names(&names, depth)
    }
}

/// Everything fitted on the training split that graph construction needs,
/// serialized verbatim into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedState {
    pub norm: NormStats,
    pub globals: GlobalVocabulary,
    pub labels: LabelVocabulary,
    pub tiers: TierEncoder,
    pub default_name_pattern: String,
    pub semantic_seed: u64,
    pub semantic_dim: usize,
    pub visual_dim: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Vec3;

    fn meta(cat: &str, products: &[&str]) -> AssemblyMeta {
        AssemblyMeta {
            category: Some(cat.to_string()),
            industry: Some("Other Industries".to_string()),
            products: products.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn z_scores() {
        let s = FieldStats { mean: 2.0, std: 0.5 };
        assert_eq!(s.z(3.0), 2.0);
        assert_eq!(s.z(2.0), 0.0);
        assert_eq!(s.z(2.5), 1.0);
        assert_eq!(FieldStats { mean: 4.0, std: 0.0 }.z(9.0), 0.0);
    }

    #[test]
    fn connection_one_hots() {
        assert_eq!(encode_connection(ConnectionKind::Contact), [1.0, 0.0, 0.0]);
        assert_eq!(encode_connection(ConnectionKind::Joint), [0.0, 1.0, 0.0]);
        assert_eq!(encode_connection(ConnectionKind::Hierarchical), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn global_width_and_oov() {
        let vocab = GlobalVocabulary {
            categories: ["a", "b", "c", "d"].map(String::from).to_vec(),
            industries: ["i1", "i2", "i3", "i4", "Other Industries"].map(String::from).to_vec(),
            products: ["p1", "p2", "p3", "p4", "p5", "p6"].map(String::from).to_vec(),
        };
        let stats = NormStats {
            body: vec![],
            occurrence: vec![],
            global: vec![FieldStats { mean: 0.0, std: 1.0 }; GLOBAL_SCALAR_WIDTH],
        };
        let v = encode_global(&meta("b", &["p2", "p5"]), &vocab, &stats);
        assert_eq!(v.len(), GLOBAL_SCALAR_WIDTH + 4 + 5 + 6);
        let cat = &v[GLOBAL_SCALAR_WIDTH..GLOBAL_SCALAR_WIDTH + 4];
        assert_eq!(cat, [0.0, 1.0, 0.0, 0.0]);
        let prod = &v[GLOBAL_SCALAR_WIDTH + 9..];
        assert_eq!(prod.iter().filter(|&&x| x == 1.0).count(), 2);
        let unseen = encode_global(&meta("zzz", &[]), &vocab, &stats);
        assert!(unseen[GLOBAL_SCALAR_WIDTH..GLOBAL_SCALAR_WIDTH + 4].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tiers_by_depth() {
        let catalog = MaterialCatalog::from_json(
            r#"{"default_material_id": "d", "default_appearance_id": "a", "materials": {
                "mild": {"name": "Steel, Mild", "tier1": "Metal", "tier2": "Ferrous", "tier3": "Carbon Steel"},
                "abs": {"name": "ABS", "tier1": "Plastic", "tier2": "Thermoplastic", "tier3": "ABS"},
                "chrome": {"name": "Chrome", "tier1": "Metal"}
            }}"#,
        )
        .unwrap();
        let enc = TierEncoder::from_catalog(&catalog);
        assert_eq!(enc.width(0), 0);
        assert!(enc.encode("mild", &catalog, 0).is_empty());
        let v = enc.encode("mild", &catalog, 3);
        let t1 = &enc.tiers[0];
        let t2 = &enc.tiers[1];
        let t3 = &enc.tiers[2];
        assert_eq!(v.len(), t1.len() + t2.len() + t3.len());
        let hot: Vec<&str> = v
            .iter()
            .enumerate()
            .filter(|(_, &x)| x == 1.0)
            .map(|(i, _)| {
                if i < t1.len() {
                    t1[i].as_str()
                } else if i < t1.len() + t2.len() {
                    t2[i - t1.len()].as_str()
                } else {
                    t3[i - t1.len() - t2.len()].as_str()
                }
            })
            .collect();
        assert_eq!(hot, ["Metal", "Ferrous", "Carbon Steel"]);
        let v = enc.encode("chrome", &catalog, 2);
        assert_eq!(v.iter().sum::<f32>(), 1.0);
        assert_eq!(enc.width(2) - enc.width(1), t2.len());
        assert!(enc.encode("unknown", &catalog, 3).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn physical_normalization() {
        let rec = |a: f64| BodyRecord {
            uuid: String::new(),
            body_name: String::new(),
            occurrence_name: String::new(),
            area: a,
            volume: 2.0 * a,
            center_of_mass: Vec3 { x: a, y: 0.0, z: -a },
            occurrence_area: 1.0,
            occurrence_volume: a * a,
            physical_material_id: String::new(),
            appearance_id: String::new(),
            visible: true,
            depth: 0,
            occurrence: None,
        };
        let asm = AssemblyRecords {
            assembly_id: "x".into(),
            bodies: (1..=6).map(|i| rec(i as f64)).collect(),
            connections: vec![],
            meta: AssemblyMeta::default(),
        };
        let stats = NormStats::fit([&asm]);
        let rows: Vec<_> = asm.bodies.iter().map(|b| normalize_physical(b, &stats)).collect();
        let area: Vec<f64> = rows.iter().map(|r| r.0[0] as f64).collect();
        let mean = area.iter().sum::<f64>() / 6.0;
        let std = (area.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 6.0).sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-3);
        // constant fields (y, occurrence area) are zero
        assert!(rows.iter().all(|r| r.0[3] == 0.0 && r.1[0] == 0.0));
    }
}
