use std::fmt;

use serde::{Deserialize, Serialize};

pub const NUM_LABELS: usize = 9;

const NAMES: [&str; NUM_LABELS] = [
    "O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG", "B-MISC", "I-MISC",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityType {
    #[serde(rename = "PER")]
    Per,
    #[serde(rename = "LOC")]
    Loc,
    #[serde(rename = "ORG")]
    Org,
    #[serde(rename = "MISC")]
    Misc,
}

impl EntityType {
    pub const ALL: [EntityType; 4] = [EntityType::Per, EntityType::Loc, EntityType::Org, EntityType::Misc];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityType::Per => "PER",
            EntityType::Loc => "LOC",
            EntityType::Org => "ORG",
            EntityType::Misc => "MISC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Outside,
    Begin(EntityType),
    Inside(EntityType),
}

/// The fixed BIO2 label inventory. Index 0 is `O`; `B-X` is `1 + 2k` and
/// `I-X` is `2 + 2k` for entity type `k`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelSet;

impl LabelSet {
    pub const OUTSIDE: usize = 0;

    pub fn len(&self) -> usize {
        NUM_LABELS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        NAMES.iter().map(|s| s.to_string()).collect()
    }

    pub fn name(idx: usize) -> &'static str {
        NAMES[idx]
    }

    pub fn index_of(name: &str) -> Option<usize> {
        NAMES.iter().position(|&n| n == name)
    }

    pub fn tag(idx: usize) -> Tag {
        match idx {
            0 => Tag::Outside,
            i => {
                let ty = EntityType::ALL[(i - 1) / 2];
                if i % 2 == 1 {
                    Tag::Begin(ty)
                } else {
                    Tag::Inside(ty)
                }
            }
        }
    }

    pub fn index(tag: Tag) -> usize {
        match tag {
            Tag::Outside => 0,
            Tag::Begin(t) => 1 + 2 * t.index(),
            Tag::Inside(t) => 2 + 2 * t.index(),
        }
    }
}

/// A typed entity mention over token positions `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub ty: EntityType,
}

/// Rewrites every `I-X` that does not continue an `X` entity as `B-X`.
pub fn repair_bio2(labels: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(labels.len());
    let mut prev = Tag::Outside;
    for &l in labels {
        let tag = match LabelSet::tag(l) {
            Tag::Inside(t) => match prev {
                Tag::Begin(p) | Tag::Inside(p) if p == t => Tag::Inside(t),
                _ => Tag::Begin(t),
            },
            other => other,
        };
        out.push(LabelSet::index(tag));
        prev = tag;
    }
    out
}

/// Maximal entity spans of a (repaired) BIO2 sequence.
pub fn spans_from_bio2(labels: &[usize]) -> Vec<Span> {
    let repaired = repair_bio2(labels);
    let mut spans = Vec::new();
    let mut open: Option<(usize, EntityType)> = None;
    for (i, &l) in repaired.iter().enumerate() {
        match LabelSet::tag(l) {
            Tag::Inside(_) => {}
            tag => {
                if let Some((start, ty)) = open.take() {
                    spans.push(Span { start, end: i, ty });
                }
                if let Tag::Begin(ty) = tag {
                    open = Some((i, ty));
                }
            }
        }
    }
    if let Some((start, ty)) = open {
        spans.push(Span {
            start,
            end: repaired.len(),
            ty,
        });
    }
    spans
}

/// Encodes non-overlapping spans as BIO2 over `len` tokens.
pub fn spans_to_bio2(spans: &[Span], len: usize) -> Vec<usize> {
    let mut labels = vec![LabelSet::OUTSIDE; len];
    for s in spans {
        for (k, slot) in labels[s.start..s.end].iter_mut().enumerate() {
            *slot = if k == 0 {
                LabelSet::index(Tag::Begin(s.ty))
            } else {
                LabelSet::index(Tag::Inside(s.ty))
            };
        }
    }
    labels
}

/// Label-pair transitions forbidden under BIO2: `I-X` may only follow `B-X`
/// or `I-X`.
pub fn bio2_transition_allowed(from: usize, to: usize) -> bool {
    match LabelSet::tag(to) {
        Tag::Inside(t) => matches!(LabelSet::tag(from), Tag::Begin(p) | Tag::Inside(p) if p == t),
        _ => true,
    }
}

/// Whether a sequence may start with this label under BIO2.
pub fn bio2_start_allowed(label: usize) -> bool {
    !matches!(LabelSet::tag(label), Tag::Inside(_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn idx(names: &[&str]) -> Vec<usize> {
        names.iter().map(|n| LabelSet::index_of(n).unwrap()).collect()
    }

    #[test]
    fn label_indices_are_stable() {
        assert_eq!(LabelSet.len(), 9);
        assert_eq!(LabelSet::name(0), "O");
        for (i, n) in NAMES.iter().enumerate() {
            assert_eq!(LabelSet::index_of(n), Some(i));
            assert_eq!(LabelSet::index(LabelSet::tag(i)), i);
        }
    }

    #[test]
    fn simple_span() {
        assert_eq!(
            spans_from_bio2(&idx(&["B-PER", "I-PER", "O"])),
            vec![Span {
                start: 0,
                end: 2,
                ty: EntityType::Per
            }]
        );
        assert!(spans_from_bio2(&idx(&["O", "O", "O"])).is_empty());
    }

    #[test]
    fn stray_inside_tags_open_new_spans() {
        let spans = spans_from_bio2(&idx(&["I-LOC", "B-ORG", "I-PER"]));
        assert_eq!(
            spans,
            vec![
                Span {
                    start: 0,
                    end: 1,
                    ty: EntityType::Loc
                },
                Span {
                    start: 1,
                    end: 2,
                    ty: EntityType::Org
                },
                Span {
                    start: 2,
                    end: 3,
                    ty: EntityType::Per
                },
            ]
        );
    }

    #[test]
    fn adjacent_begins_split() {
        let spans = spans_from_bio2(&idx(&["B-PER", "B-PER", "I-PER"]));
        assert_eq!(spans.len(), 2);
        assert_eq!(
            spans[1],
            Span {
                start: 1,
                end: 3,
                ty: EntityType::Per
            }
        );
    }

    proptest! {
        #[test]
        fn spans_round_trip_to_repaired_labels(labels in prop::collection::vec(0usize..NUM_LABELS, 0..40)) {
            let spans = spans_from_bio2(&labels);
            prop_assert_eq!(spans_to_bio2(&spans, labels.len()), repair_bio2(&labels));
        }

        #[test]
        fn repaired_sequences_satisfy_bio2(labels in prop::collection::vec(0usize..NUM_LABELS, 1..40)) {
            let r = repair_bio2(&labels);
            prop_assert!(bio2_start_allowed(r[0]));
            for w in r.windows(2) {
                prop_assert!(bio2_transition_allowed(w[0], w[1]));
            }
        }
    }
}
