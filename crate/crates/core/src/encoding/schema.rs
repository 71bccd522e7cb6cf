use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Edge features: one-hot connection kind.
pub const EDGE_WIDTH: usize = 3;

/// Canonical block names.
pub mod blocks {
    pub const BODY_NAME: &str = "body_name";
    pub const OCCURRENCE_NAME: &str = "occurrence_name";
    pub const BODY_PHYSICAL: &str = "body_physical";
    pub const OCCURRENCE_PHYSICAL: &str = "occurrence_physical";
    pub const BODY_GEOMETRY: &str = "body_geometry";
    pub const GLOBAL: &str = "global";
    pub const MATERIAL_ONEHOT: &str = "material_onehot";
    pub const TIER_ONEHOT: &str = "tier_onehot";

    /// Ablation alias covering both name blocks.
    pub const SEMANTIC_NAMES: &str = "SemanticNames";

    pub const ABLATABLE: [&str; 6] = [BODY_NAME, OCCURRENCE_NAME, BODY_PHYSICAL, OCCURRENCE_PHYSICAL, BODY_GEOMETRY, GLOBAL];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub name: String,
    pub offset: usize,
    pub width: usize,
    pub ablatable: bool,
}

/// Ordered, contiguous node-feature blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub blocks: Vec<FeatureBlock>,
    pub edge_width: usize,
}

impl FeatureSchema {
    /// Builds contiguous blocks from `(name, width, ablatable)` triples.
    pub fn from_widths<'a>(widths: impl IntoIterator<Item = (&'a str, usize, bool)>) -> Result<Self> {
        let mut schema = Self {
            blocks: Vec::new(),
            edge_width: EDGE_WIDTH,
        };
        for (name, width, ablatable) in widths {
            schema = schema.with_block(name, width, ablatable)?;
        }
        Ok(schema)
    }

    pub fn node_width(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.width)
    }

    pub fn block(&self, name: &str) -> Option<&FeatureBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn has_block(&self, name: &str) -> bool {
        self.block(name).is_some()
    }

    /// Appends a block at the end.
    pub fn with_block(mut self, name: &str, width: usize, ablatable: bool) -> Result<Self> {
        if self.has_block(name) {
            return Err(Error::Schema(format!("duplicate feature block {name}")));
        }
        let offset = self.node_width();
        self.blocks.push(FeatureBlock {
            name: name.to_string(),
            offset,
            width,
            ablatable,
        });
        Ok(self)
    }

    /// Expands ablation aliases and checks every name is an ablatable block.
    pub fn resolve_ablation(&self, name: &str) -> Result<Vec<String>> {
        let names: Vec<&str> = if name.eq_ignore_ascii_case(blocks::SEMANTIC_NAMES) || name == "semantic_names" {
            vec![blocks::BODY_NAME, blocks::OCCURRENCE_NAME]
        } else {
            vec![name]
        };
        names
            .into_iter()
            .map(|n| match self.block(n) {
                Some(b) if b.ablatable => Ok(b.name.clone()),
                Some(_) => Err(Error::Config(format!("feature block {n} cannot be ablated"))),
                None => Err(Error::Config(format!("unknown feature block {n}"))),
            })
            .collect()
    }

    /// Schema without the named blocks, offsets recomputed.
    pub fn without(&self, names: &[String]) -> Self {
        let mut out = Self {
            blocks: Vec::new(),
            edge_width: self.edge_width,
        };
        for b in self.blocks.iter().filter(|b| !names.contains(&b.name)) {
            let offset = out.node_width();
            out.blocks.push(FeatureBlock {
                offset,
                ..b.clone()
            });
        }
        out
    }

    /// Column indices kept when `names` are removed.
    pub fn kept_columns(&self, names: &[String]) -> Vec<usize> {
        self.blocks
            .iter()
            .filter(|b| !names.contains(&b.name))
            .flat_map(|b| b.offset..b.offset + b.width)
            .collect()
    }

    /// Short content hash used to match requests against checkpoints.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::from_widths([
            (blocks::BODY_NAME, 600, true),
            (blocks::OCCURRENCE_NAME, 600, true),
            (blocks::BODY_PHYSICAL, 5, true),
            (blocks::OCCURRENCE_PHYSICAL, 2, true),
            (blocks::BODY_GEOMETRY, 512, true),
            (blocks::GLOBAL, 20, true),
            (blocks::MATERIAL_ONEHOT, 21, false),
        ])
        .unwrap()
    }

    #[test]
    fn blocks_are_contiguous() {
        let s = schema();
        assert_eq!(s.node_width(), 600 + 600 + 5 + 2 + 512 + 20 + 21);
        for pair in s.blocks.windows(2) {
            assert_eq!(pair[0].offset + pair[0].width, pair[1].offset);
        }
    }

    #[test]
    fn ablation_resolution() {
        let s = schema();
        let names = s.resolve_ablation("SemanticNames").unwrap();
        assert_eq!(s.without(&names).node_width(), s.node_width() - 1200);
        assert!(matches!(s.resolve_ablation("nope"), Err(Error::Config(_))));
        assert!(matches!(s.resolve_ablation(blocks::MATERIAL_ONEHOT), Err(Error::Config(_))));
        let kept = s.kept_columns(&[blocks::BODY_GEOMETRY.to_string()]);
        assert_eq!(kept.len(), s.node_width() - 512);
        assert_eq!(kept[1206], 1206);
        assert_eq!(kept[1207], 1207 + 512);
    }

    #[test]
    fn hash_tracks_content() {
        let s = schema();
        assert_eq!(s.hash(), schema().hash());
        assert_ne!(s.hash(), s.without(&[blocks::GLOBAL.to_string()]).hash());
        assert!(s.clone().with_block(blocks::GLOBAL, 1, true).is_err());
    }
}
