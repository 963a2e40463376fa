//! Spatial scene graph over detections and the gated relational GCN.

mod geometry;
mod graph;
mod rgcn;

pub use geometry::{iou, relate, relative_angle, BBox, SpatialRelation, UNIT_DIAGONAL};
pub use graph::{build_graph, Edge, SpatialGraph};
pub use rgcn::{Rgcn, RgcnLayer, GATE_PROBE, NUM_EDGE_WEIGHTS};
