//! Material catalog, ground-truth resolution and label grouping.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::BodyRecord;

/// Label for every material outside the retained head of the distribution.
pub const OTHER_LABEL: &str = "OTHER";

/// Number of most frequent materials kept as their own class.
pub const TOP_MATERIALS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterialEntry {
    pub name: String,
    pub tier1: String,
    #[serde(default)]
    pub tier2: String,
    #[serde(default)]
    pub tier3: String,
}

impl MaterialEntry {
    /// Tier names from broad to specific, stopping at the first empty tier.
    pub fn tiers(&self) -> Vec<&str> {
        [&self.tier1, &self.tier2, &self.tier3]
            .into_iter()
            .take_while(|t| !t.is_empty())
            .map(String::as_str)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialCatalog {
    pub default_material_id: String,
    pub default_appearance_id: String,
    pub materials: BTreeMap<String, MaterialEntry>,
}

impl MaterialCatalog {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: MaterialCatalog = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for (id, e) in &self.materials {
            if e.tier1.is_empty() {
                return Err(Error::Schema(format!("material {id} has no tier1")));
            }
            if !e.tier3.is_empty() && e.tier2.is_empty() {
                return Err(Error::Schema(format!("material {id} has tier3 without tier2")));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&MaterialEntry> {
        self.materials.get(id)
    }

    /// Display name; falls back to the id itself.
    pub fn display_name<'a>(&'a self, id: &'a str) -> &'a str {
        self.materials.get(id).map_or(id, |e| e.name.as_str())
    }

    /// Sorted distinct names per tier (index 0 = tier 1).
    pub fn tier_vocabularies(&self) -> [Vec<String>; 3] {
        let mut sets: [std::collections::BTreeSet<&str>; 3] = Default::default();
        for e in self.materials.values() {
            for (i, t) in [&e.tier1, &e.tier2, &e.tier3].into_iter().enumerate() {
                if !t.is_empty() {
                    sets[i].insert(t);
                }
            }
        }
        sets.map(|s| s.into_iter().map(str::to_string).collect())
    }
}

/// Ground-truth material of one body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedMaterial {
    pub material_id: String,
    /// No deliberate choice was made: both labels are defaults.
    pub is_default: bool,
}

/// Picks the ground-truth material: a non-default physical material wins,
/// then a non-default appearance, else the default material (flagged).
/// Ids missing from the catalog resolve to [`OTHER_LABEL`].
pub fn resolve_material(b: &BodyRecord, catalog: &MaterialCatalog) -> ResolvedMaterial {
    let chosen = if b.physical_material_id != catalog.default_material_id && !b.physical_material_id.is_empty() {
        &b.physical_material_id
    } else if b.appearance_id != catalog.default_appearance_id && !b.appearance_id.is_empty() {
        &b.appearance_id
    } else {
        return ResolvedMaterial {
            material_id: catalog.default_material_id.clone(),
            is_default: true,
        };
    };
    if catalog.materials.contains_key(chosen) {
        ResolvedMaterial {
            material_id: chosen.clone(),
            is_default: false,
        }
    } else {
        warn!("body {}: material {chosen} not in catalog, mapped to {OTHER_LABEL}", b.uuid);
        ResolvedMaterial {
            material_id: OTHER_LABEL.to_string(),
            is_default: false,
        }
    }
}

/// Ordered class list: the retained materials followed by [`OTHER_LABEL`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    pub classes: Vec<String>,
    pub counts: Vec<u64>,
}

impl LabelVocabulary {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn other_index(&self) -> usize {
        self.classes.len() - 1
    }

    /// Class index of a material id; everything unknown falls into OTHER.
    pub fn index_of(&self, material_id: &str) -> usize {
        self.classes[..self.other_index()]
            .iter()
            .position(|c| c == material_id)
            .unwrap_or(self.other_index())
    }

    pub fn position(&self, material_id: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == material_id)
    }
}

/// Keeps the `TOP_MATERIALS` most frequent ids (ties broken by ascending id)
/// and folds the rest into OTHER.
pub fn group_materials(counts: &BTreeMap<String, u64>) -> LabelVocabulary {
    group_materials_top(counts, TOP_MATERIALS)
}

pub fn group_materials_top(counts: &BTreeMap<String, u64>, top: usize) -> LabelVocabulary {
    let mut ranked: Vec<(&String, u64)> = counts
        .iter()
        .filter(|(id, _)| id.as_str() != OTHER_LABEL)
        .map(|(id, &c)| (id, c))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let kept = ranked.len().min(top);
    let mut classes: Vec<String> = ranked[..kept].iter().map(|(id, _)| (*id).clone()).collect();
    let mut class_counts: Vec<u64> = ranked[..kept].iter().map(|(_, c)| *c).collect();
    let other: u64 = ranked[kept..].iter().map(|(_, c)| c).sum::<u64>() + counts.get(OTHER_LABEL).copied().unwrap_or(0);
    classes.push(OTHER_LABEL.to_string());
    class_counts.push(other);
    LabelVocabulary {
        classes,
        counts: class_counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Vec3;

    fn catalog() -> MaterialCatalog {
        MaterialCatalog::from_json(
            r#"{
            "default_material_id": "PrismMaterial-018",
            "default_appearance_id": "Default",
            "materials": {
                "PrismMaterial-018": {"name": "Steel", "tier1": "Metal", "tier2": "Ferrous", "tier3": "Carbon Steel"},
                "PrismMaterial-002": {"name": "Aluminum", "tier1": "Metal", "tier2": "Non-ferrous"},
                "Prism-047": {"name": "Chrome", "tier1": "Metal"}
            }}"#,
        )
        .unwrap()
    }

    fn body(physical: &str, appearance: &str) -> BodyRecord {
        BodyRecord {
            uuid: "b".into(),
            body_name: String::new(),
            occurrence_name: String::new(),
            area: 0.0,
            volume: 0.0,
            center_of_mass: Vec3::default(),
            occurrence_area: 0.0,
            occurrence_volume: 0.0,
            physical_material_id: physical.into(),
            appearance_id: appearance.into(),
            visible: true,
            depth: 0,
            occurrence: None,
        }
    }

    #[test]
    fn resolution_order() {
        let c = catalog();
        let r = resolve_material(&body("PrismMaterial-002", "Default"), &c);
        assert_eq!(r, ResolvedMaterial { material_id: "PrismMaterial-002".into(), is_default: false });
        let r = resolve_material(&body("PrismMaterial-018", "Prism-047"), &c);
        assert_eq!(r.material_id, "Prism-047");
        let r = resolve_material(&body("PrismMaterial-018", "Default"), &c);
        assert_eq!(r, ResolvedMaterial { material_id: "PrismMaterial-018".into(), is_default: true });
        let r = resolve_material(&body("Mystery", "Default"), &c);
        assert_eq!(r.material_id, OTHER_LABEL);
    }

    #[test]
    fn catalog_invariants() {
        let bad = r#"{"default_material_id": "a", "default_appearance_id": "b",
            "materials": {"x": {"name": "x", "tier1": "Metal", "tier3": "Deep"}}}"#;
        assert!(matches!(MaterialCatalog::from_json(bad), Err(Error::Schema(_))));
        let bad = r#"{"default_material_id": "a", "default_appearance_id": "b",
            "materials": {"x": {"name": "x", "tier1": ""}}}"#;
        assert!(MaterialCatalog::from_json(bad).is_err());
        let tiers = catalog().tier_vocabularies();
        assert_eq!(tiers[0], ["Metal"]);
        assert_eq!(tiers[1], ["Ferrous", "Non-ferrous"]);
        assert_eq!(tiers[2], ["Carbon Steel"]);
    }

    #[test]
    fn degenerate_grouping_keeps_all_plus_other() {
        let counts: BTreeMap<String, u64> = (0..5).map(|i| (format!("m{i}"), 10 - i)).collect();
        let v = group_materials(&counts);
        assert_eq!(v.len(), 6);
        assert_eq!(v.classes.last().unwrap(), OTHER_LABEL);
        assert_eq!(*v.counts.last().unwrap(), 0);
        assert_eq!(v.index_of("m2"), 2);
        assert_eq!(v.index_of("zzz"), 5);
    }

    #[test]
    fn tie_at_the_cut_keeps_smaller_id() {
        let mut counts: BTreeMap<String, u64> = (0..19).map(|i| (format!("a{i:02}"), 100 + i)).collect();
        counts.insert("zeta".into(), 7);
        counts.insert("beta".into(), 7);
        let v = group_materials(&counts);
        assert_eq!(v.len(), 21);
        assert!(v.classes.contains(&"beta".to_string()));
        assert!(!v.classes.contains(&"zeta".to_string()));
        assert_eq!(v.counts[20], 7);
        assert_eq!(v.classes[0], "a18");
    }

    #[test]
    fn published_head_ranks_steel_first() {
        let counts: BTreeMap<String, u64> = [
            ("PrismMaterial-018", 40054),
            ("PrismMaterial-022", 2657),
            ("PrismMaterial-002", 2622),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let v = group_materials(&counts);
        assert_eq!(v.classes[0], "PrismMaterial-018");
        assert_eq!(v.counts[0], 40054);
    }
}
