use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SEMANTIC_DIM: usize = 600;
pub const VISUAL_DIM: usize = 512;

/// Names matching this pattern were never set by a designer.
pub const DEFAULT_NAME_PATTERN: &str = r"(?i)^(body|component|occurrence)\s*\d*$";

/// Stable 64-bit seed derived from byte strings.
pub fn seed_from(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Token → vector lookup with per-dimension statistics over all vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
    stats: Vec<(f32, f32)>,
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl TryFrom<TableRepr> for EmbeddingTable {
    type Error = Error;

    fn try_from(r: TableRepr) -> Result<Self> {
        Self::new(r.dim, r.vectors)
    }
}

impl From<EmbeddingTable> for TableRepr {
    fn from(t: EmbeddingTable) -> Self {
        Self {
            dim: t.dim,
            vectors: t.vectors,
        }
    }
}

impl EmbeddingTable {
    pub fn new(dim: usize, vectors: BTreeMap<String, Vec<f32>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Schema("embedding dimension must be positive".into()));
        }
        if let Some((tok, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Schema(format!(
                "embedding for {tok:?} has {} values, expected {dim}",
                v.len()
            )));
        }
        let n = vectors.len().max(1) as f64;
        let mut mean = vec![0f64; dim];
        for v in vectors.values() {
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0f64; dim];
        for v in vectors.values() {
            for ((s, &x), &m) in var.iter_mut().zip(v).zip(&mean) {
                *s += (x as f64 - m).powi(2);
            }
        }
        let stats = mean
            .iter()
            .zip(&var)
            .map(|(&m, &s)| (m as f32, (s / n).sqrt() as f32))
            .collect();
        Ok(Self { dim, vectors, stats })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Per-dimension `(mean, std)`.
    pub fn stats(&self) -> &[(f32, f32)] {
        &self.stats
    }

    /// Parses `DIM <n>` followed by `token<TAB>f1 f2 … fn` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Schema("empty embedding table".into()))?;
        let dim: usize = header
            .strip_prefix("DIM")
            .and_then(|d| d.trim().parse().ok())
            .ok_or_else(|| Error::Schema(format!("bad embedding header {header:?}")))?;
        let mut vectors = BTreeMap::new();
        for (no, line) in lines {
            let (token, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::Schema(format!("line {}: missing tab", no + 1)))?;
            let v = values
                .split_ascii_whitespace()
                .map(|x| x.parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Schema(format!("line {}: {e}", no + 1)))?;
            vectors.insert(token.to_string(), v);
        }
        Self::new(dim, vectors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("DIM {}\n", self.dim);
        for (tok, v) in &self.vectors {
            out.push_str(tok);
            out.push('\t');
            for (i, x) in v.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Turns free-text body and occurrence names into semantic vectors.
#[derive(Debug, Clone)]
pub struct SemanticEncoder {
    default_name: Regex,
}

impl Default for SemanticEncoder {
    fn default() -> Self {
        Self::new(DEFAULT_NAME_PATTERN).expect("default pattern compiles")
    }
}

impl SemanticEncoder {
    pub fn new(default_name_pattern: &str) -> Result<Self> {
        let default_name = Regex::new(default_name_pattern)
            .map_err(|e| Error::Config(format!("default-name pattern: {e}")))?;
        Ok(Self { default_name })
    }

    pub fn pattern(&self) -> &str {
        self.default_name.as_str()
    }

    pub fn is_default_name(&self, name: &str) -> bool {
        let name = name.trim();
        name.is_empty() || self.default_name.is_match(name)
    }

    /// Lowercased alphanumeric tokens with default-name tokens removed.
    pub fn keywords(&self, name: &str) -> Vec<String> {
        name.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty() && !self.default_name.is_match(t))
            .map(str::to_string)
            .collect()
    }

    /// Default or empty names give zeros; otherwise the mean of the matched
    /// keyword vectors. Names with no matched keyword get a per-dimension
    /// Gaussian draw from the table statistics, seeded by `(name, seed)`.
    pub fn encode(&self, name: &str, table: &EmbeddingTable, seed: u64) -> Vec<f32> {
        let dim = table.dim();
        if self.is_default_name(name) {
            return vec![0.0; dim];
        }
        let mut tokens = self.keywords(name);
        if tokens.is_empty() {
            return vec![0.0; dim];
        }
        // sorted so the average is exactly independent of keyword order
        tokens.sort();
        let matched: Vec<&[f32]> = tokens.iter().filter_map(|t| table.get(t)).collect();
        if matched.is_empty() {
            let key = tokens.join(" ");
            let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[b"semantic", key.as_bytes(), &seed.to_le_bytes()]));
            return table
                .stats()
                .iter()
                .map(|&(m, s)| match Normal::new(m as f64, s as f64) {
                    Ok(d) => d.sample(&mut rng) as f32,
                    Err(_) => m,
                })
                .collect();
        }
        let mut acc = vec![0f64; dim];
        for v in &matched {
            for (a, &x) in acc.iter_mut().zip(*v) {
                *a += x as f64;
            }
        }
        let n = matched.len() as f64;
        acc.into_iter().map(|a| (a / n) as f32).collect()
    }
}

/// Stored vector when `table` has the uuid; otherwise a unit-norm Gaussian
/// vector seeded from the uuid (stand-in for the external geometry encoder).
pub fn visual_embedding(uuid: &str, table: Option<&EmbeddingTable>, dim: usize) -> Vec<f32> {
    if let Some(v) = table.and_then(|t| t.get(uuid)) {
        return v.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[b"visual", uuid.as_bytes()]));
    let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    raw.into_iter().map(|x| (x / norm) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EmbeddingTable {
        let mut v = BTreeMap::new();
        v.insert("gear".to_string(), vec![1.0, 2.0, 3.0]);
        v.insert("shaft".to_string(), vec![3.0, 0.0, -1.0]);
        v.insert("bolt".to_string(), vec![0.5, 0.5, 0.5]);
        EmbeddingTable::new(3, v).unwrap()
    }

    #[test]
    fn default_names_are_zero() {
        let enc = SemanticEncoder::default();
        let t = table();
        for name in ["Body1", "body 12", "Component7", "Occurrence", "", "   "] {
            assert_eq!(enc.encode(name, &t, 0), vec![0.0; 3], "{name}");
        }
        assert!(!enc.is_default_name("Body Panel"));
    }

    #[test]
    fn matched_keywords_are_averaged() {
        let enc = SemanticEncoder::default();
        let t = table();
        assert_eq!(enc.encode("Gear_Shaft", &t, 0), vec![2.0, 1.0, 1.0]);
        assert_eq!(enc.encode("gear shaft", &t, 0), enc.encode("shaft-gear", &t, 0));
        // unmatched and default tokens are ignored when something matched
        assert_eq!(enc.encode("gear Body3 xyz", &t, 0), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn unmatched_names_are_imputed_deterministically() {
        let enc = SemanticEncoder::default();
        let t = table();
        let a = enc.encode("xqzzt", &t, 7);
        assert_eq!(a, enc.encode("xqzzt", &t, 7));
        assert_ne!(a, enc.encode("xqzzt", &t, 8));
        assert_ne!(a, vec![0.0; 3]);
    }

    #[test]
    fn table_text_round_trip_and_stats() {
        let t = table();
        let back = EmbeddingTable::parse(&t.to_text()).unwrap();
        assert_eq!(back, t);
        let (m, s) = t.stats()[1];
        assert!((m - 2.5 / 3.0).abs() < 1e-6);
        assert!(s > 0.0);
        assert!(EmbeddingTable::parse("DIM 2\nx\t1 2 3\n").is_err());
        assert!(EmbeddingTable::parse("2\n").is_err());
    }

    #[test]
    fn visual_stub_is_unit_norm_and_stable() {
        let a = visual_embedding("A", None, VISUAL_DIM);
        assert_eq!(a, visual_embedding("A", None, VISUAL_DIM));
        let norm: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        let mut v = BTreeMap::new();
        v.insert("A".to_string(), vec![0.25; 4]);
        let t = EmbeddingTable::new(4, v).unwrap();
        assert_eq!(visual_embedding("A", Some(&t), 4), vec![0.25; 4]);
        assert_ne!(visual_embedding("B", Some(&t), 4), vec![0.25; 4]);
    }
}
