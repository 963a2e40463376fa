use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::labels::{repair_bio2, LabelSet, NUM_LABELS};
use crate::error::{Error, Result};
use crate::spatial::BBox;
use crate::tensor::Tensor;

/// Detections kept per image, highest score first.
pub const MAX_OBJECTS: usize = 15;
/// Longest accepted sentence.
pub const MAX_TOKENS: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub labels: Vec<usize>,
    /// `M x d`
    pub word_feats: Tensor,
    /// length `d`
    pub cls_feat: Tensor,
}

impl TaggedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectDetection {
    pub bbox: BBox,
    pub feat: Tensor,
    pub concept_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalExample {
    pub sentence: TaggedSentence,
    pub image_feat: Tensor,
    pub objects: Vec<ObjectDetection>,
}

impl MultimodalExample {
    /// Stable sort by descending score, then keep the first [`MAX_OBJECTS`].
    pub fn rank_objects(&mut self) {
        self.objects.sort_by(|a, b| b.score.total_cmp(&a.score));
        self.objects.truncate(MAX_OBJECTS);
    }

    /// Same example with no detections and a zero image feature.
    pub fn text_only(&self) -> Self {
        Self {
            sentence: self.sentence.clone(),
            image_feat: Tensor::zeros(self.image_feat.shape()),
            objects: Vec::new(),
        }
    }
}

/// Sidecar describing the feature dimensions of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub d: usize,
    pub d_v: usize,
    pub concept_vocab: usize,
    pub label_set: Vec<String>,
}

impl DatasetMeta {
    pub fn new(d: usize, d_v: usize, concept_vocab: usize) -> Self {
        Self {
            d,
            d_v,
            concept_vocab,
            label_set: LabelSet.names(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Error::Data(format!("meta: field `{field}`: {msg}"));
        if self.d == 0 {
            return Err(bad("d", "must be positive"));
        }
        if self.d_v == 0 {
            return Err(bad("d_v", "must be positive"));
        }
        if self.concept_vocab == 0 {
            return Err(bad("concept_vocab", "must be positive"));
        }
        if self.label_set != LabelSet.names() {
            return Err(bad("label_set", &format!("expected {:?}", LabelSet.names())));
        }
        Ok(())
    }
}

pub fn load_meta(path: impl AsRef<Path>) -> Result<DatasetMeta> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    meta.validate()?;
    Ok(meta)
}

pub fn save_meta(path: impl AsRef<Path>, meta: &DatasetMeta) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(meta).expect("meta serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>, meta: &DatasetMeta) -> Result<Vec<MultimodalExample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::new(file), meta)
}

/// Parses JSONL, one example per non-blank line. Errors carry the 1-based
/// line number and the offending field.
pub fn parse_dataset(reader: impl BufRead, meta: &DatasetMeta) -> Result<Vec<MultimodalExample>> {
    meta.validate()?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Data(format!("line {line_no}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: line_no,
            field: "<json>".into(),
            msg: e.to_string(),
        })?;
        out.push(parse_example(&value, meta).map_err(|(field, msg)| Error::Schema {
            line: line_no,
            field,
            msg,
        })?);
    }
    Ok(out)
}

pub fn save_dataset(path: impl AsRef<Path>, examples: &[MultimodalExample]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let line = serde_json::to_string(&example_to_json(ex)).expect("example serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn example_to_json(ex: &MultimodalExample) -> Value {
    let s = &ex.sentence;
    let labels: Vec<&str> = s.labels.iter().map(|&l| LabelSet::name(l)).collect();
    let word_feats: Vec<&[f64]> = (0..s.word_feats.rows()).map(|r| s.word_feats.row(r)).collect();
    let objects: Vec<Value> = ex
        .objects
        .iter()
        .map(|o| {
            json!({
                "bbox": o.bbox.as_array(),
                "feat": o.feat.data(),
                "concept_id": o.concept_id,
                "score": o.score,
            })
        })
        .collect();
    json!({
        "tokens": s.tokens,
        "labels": labels,
        "cls_feat": s.cls_feat.data(),
        "word_feats": word_feats,
        "image_feat": ex.image_feat.data(),
        "objects": objects,
    })
}

type FieldError = (String, String);

fn err<T>(field: impl Into<String>, msg: impl Into<String>) -> std::result::Result<T, FieldError> {
    Err((field.into(), msg.into()))
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, prefix: &str) -> std::result::Result<&'a Value, FieldError> {
    match obj.get(name) {
        Some(v) => Ok(v),
        None => err(format!("{prefix}{name}"), "missing"),
    }
}

fn float_vec(v: &Value, name: &str, len: usize) -> std::result::Result<Vec<f64>, FieldError> {
    let Some(arr) = v.as_array() else {
        return err(name, "expected an array of numbers");
    };
    if arr.len() != len {
        return err(name, format!("expected {len} values, got {}", arr.len()));
    }
    arr.iter()
        .enumerate()
        .map(|(k, x)| match x.as_f64() {
            Some(f) if f.is_finite() => Ok(f),
            _ => err(format!("{name}[{k}]"), "expected a finite number"),
        })
        .collect()
}

fn parse_label(v: &Value, k: usize) -> std::result::Result<usize, FieldError> {
    let name = format!("labels[{k}]");
    if let Some(s) = v.as_str() {
        return match LabelSet::index_of(s) {
            Some(i) => Ok(i),
            None => err(name, format!("unknown label {s:?}")),
        };
    }
    match v.as_u64() {
        Some(i) if (i as usize) < NUM_LABELS => Ok(i as usize),
        _ => err(name, format!("expected a label name or an index below {NUM_LABELS}")),
    }
}

fn parse_example(v: &Value, meta: &DatasetMeta) -> std::result::Result<MultimodalExample, FieldError> {
    let Some(obj) = v.as_object() else {
        return err("<root>", "expected a JSON object");
    };

    let tokens: Vec<String> = match field(obj, "tokens", "")?.as_array() {
        Some(arr) => arr
            .iter()
            .enumerate()
            .map(|(k, t)| match t.as_str() {
                Some(s) => Ok(s.to_string()),
                None => err(format!("tokens[{k}]"), "expected a string"),
            })
            .collect::<std::result::Result<_, _>>()?,
        None => return err("tokens", "expected an array of strings"),
    };
    let m = tokens.len();
    if m == 0 {
        return err("tokens", "sentence is empty");
    }
    if m > MAX_TOKENS {
        return err("tokens", format!("{m} tokens exceeds the limit of {MAX_TOKENS}"));
    }

    let labels: Vec<usize> = match field(obj, "labels", "")?.as_array() {
        Some(arr) => {
            if arr.len() != m {
                return err("labels", format!("length {} does not match {m} tokens", arr.len()));
            }
            arr.iter()
                .enumerate()
                .map(|(k, l)| parse_label(l, k))
                .collect::<std::result::Result<_, _>>()?
        }
        None => return err("labels", "expected an array"),
    };

    let cls_feat = float_vec(field(obj, "cls_feat", "")?, "cls_feat", meta.d)?;

    let rows = match field(obj, "word_feats", "")?.as_array() {
        Some(arr) => arr,
        None => return err("word_feats", "expected an array of rows"),
    };
    if rows.len() != m {
        return err("word_feats", format!("{} rows does not match {m} tokens", rows.len()));
    }
    let mut word_data = Vec::with_capacity(m * meta.d);
    for (r, row) in rows.iter().enumerate() {
        word_data.extend(float_vec(row, &format!("word_feats[{r}]"), meta.d)?);
    }

    let image_feat = float_vec(field(obj, "image_feat", "")?, "image_feat", meta.d_v)?;

    let raw_objects = match field(obj, "objects", "")?.as_array() {
        Some(arr) => arr,
        None => return err("objects", "expected an array"),
    };
    let mut objects = Vec::with_capacity(raw_objects.len());
    for (k, o) in raw_objects.iter().enumerate() {
        objects.push(parse_object(o, k, meta)?);
    }

    let mut ex = MultimodalExample {
        sentence: TaggedSentence {
            tokens,
            labels: repair_bio2(&labels),
            word_feats: Tensor::matrix(m, meta.d, word_data).expect("row lengths checked"),
            cls_feat: Tensor::vector(cls_feat),
        },
        image_feat: Tensor::vector(image_feat),
        objects,
    };
    ex.rank_objects();
    Ok(ex)
}

fn parse_object(v: &Value, k: usize, meta: &DatasetMeta) -> std::result::Result<ObjectDetection, FieldError> {
    let prefix = format!("objects[{k}].");
    let Some(obj) = v.as_object() else {
        return err(format!("objects[{k}]"), "expected an object");
    };
    let b = float_vec(field(obj, "bbox", &prefix)?, &format!("{prefix}bbox"), 4)?;
    let raw = BBox::new(b[0], b[1], b[2], b[3]);
    if !(raw.h > 0.0 && raw.w > 0.0) {
        return err(format!("{prefix}bbox"), "height and width must be positive");
    }
    let Some(bbox) = raw.clamp_to_unit() else {
        return err(format!("{prefix}bbox"), "box lies outside the image");
    };
    let feat = float_vec(field(obj, "feat", &prefix)?, &format!("{prefix}feat"), meta.d_v)?;
    let concept_id = match field(obj, "concept_id", &prefix)?.as_u64() {
        Some(c) if (c as usize) < meta.concept_vocab => c as usize,
        _ => {
            return err(
                format!("{prefix}concept_id"),
                format!("expected an integer below {}", meta.concept_vocab),
            )
        }
    };
    let score = match field(obj, "score", &prefix)?.as_f64() {
        Some(s) if (0.0..=1.0).contains(&s) => s,
        _ => return err(format!("{prefix}score"), "expected a number in [0, 1]"),
    };
    Ok(ObjectDetection {
        bbox,
        feat: Tensor::vector(feat),
        concept_id,
        score,
    })
}
