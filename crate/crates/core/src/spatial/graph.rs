use std::fmt::Write as _;

use serde_json::{json, Value};

use super::geometry::{relate, BBox, SpatialRelation, UNIT_DIAGONAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub rel: SpatialRelation,
}

/// Node 0 is the whole image; nodes `1..=N` are the detections in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    pub boxes: Vec<BBox>,
    /// Sorted by `(src, dst, rel)`.
    pub edges: Vec<Edge>,
}

impl SpatialGraph {
    pub fn num_nodes(&self) -> usize {
        self.boxes.len()
    }

    pub fn num_objects(&self) -> usize {
        self.boxes.len() - 1
    }

    pub fn to_json(&self) -> Value {
        let nodes: Vec<Value> = self
            .boxes
            .iter()
            .enumerate()
            .map(|(i, b)| {
                json!({
                    "id": i,
                    "kind": if i == 0 { "image" } else { "object" },
                    "bbox": b.as_array(),
                })
            })
            .collect();
        let edges: Vec<Value> = self.edges.iter().map(|e| json!([e.src, e.dst, e.rel.name()])).collect();
        json!({ "nodes": nodes, "edges": edges })
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph spatial {\n");
        for (i, b) in self.boxes.iter().enumerate() {
            let name = if i == 0 { "image".to_string() } else { format!("obj{i}") };
            let _ = writeln!(
                s,
                "  n{i} [label=\"{name}\\n({:.3}, {:.3}) {:.3}x{:.3}\"];",
                b.xc, b.yc, b.h, b.w
            );
        }
        for e in &self.edges {
            let _ = writeln!(s, "  n{} -> n{} [label=\"{}\"];", e.src, e.dst, e.rel);
        }
        s.push_str("}\n");
        s
    }
}

/// Super node with an inside edge to every object, plus one directed edge
/// per ordered object pair that [`relate`] labels.
pub fn build_graph(objects: &[BBox]) -> SpatialGraph {
    let mut boxes = Vec::with_capacity(objects.len() + 1);
    boxes.push(BBox::IMAGE);
    boxes.extend_from_slice(objects);

    let mut edges: Vec<Edge> = (1..boxes.len())
        .map(|dst| Edge {
            src: 0,
            dst,
            rel: SpatialRelation::Inside,
        })
        .collect();
    for a in 1..boxes.len() {
        for b in 1..boxes.len() {
            if a == b {
                continue;
            }
            if let Some(rel) = relate(&boxes[a], &boxes[b], UNIT_DIAGONAL) {
                edges.push(Edge { src: a, dst: b, rel });
            }
        }
    }
    edges.sort();
    SpatialGraph { boxes, edges }
}
