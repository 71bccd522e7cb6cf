//! Fixed-width numeric encodings of bodies, connections and assembly
//! metadata.

mod embedding;
mod features;
mod schema;

pub use embedding::{
    seed_from, visual_embedding, EmbeddingTable, SemanticEncoder, DEFAULT_NAME_PATTERN, SEMANTIC_DIM, VISUAL_DIM,
};
pub use features::{
    encode_connection, encode_global, encode_material_onehot, normalize_physical, FieldStats, FittedState,
    GlobalVocabulary, NormStats, TierEncoder, BODY_PHYSICAL_WIDTH, GLOBAL_SCALAR_WIDTH, OCCURRENCE_PHYSICAL_WIDTH,
};
pub use schema::{blocks, FeatureBlock, FeatureSchema, EDGE_WIDTH};
