//! Dataset schema, BIO2 labels, entity metrics and synthetic fixtures.

pub mod dataset;
pub mod labels;
pub mod metrics;
pub mod synthetic;

pub use dataset::{
    load_dataset, load_meta, parse_dataset, save_dataset, save_meta, DatasetMeta, MultimodalExample, ObjectDetection,
    TaggedSentence, MAX_OBJECTS, MAX_TOKENS,
};
pub use labels::{repair_bio2, spans_from_bio2, spans_to_bio2, EntityType, LabelSet, Span, Tag, NUM_LABELS};
pub use metrics::{entity_f1, EntityScores, Prf};
pub use synthetic::{gen_synthetic, write_fixtures, SyntheticConfig, SyntheticCorpus, SyntheticWorld};
