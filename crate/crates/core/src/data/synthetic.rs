//! Deterministic synthetic corpora with planted signal.
//!
//! Word features are noisy type prototypes plus a begin/inside marker, so
//! labels are learnable from text. A configurable share of each prototype is
//! common to all entity types, which leaves the type partly ambiguous from
//! text alone. Examples flagged relevant carry an image whose global feature
//! and detections encode the entity types in the sentence; irrelevant
//! examples get pure noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dataset::{save_dataset, save_meta, DatasetMeta, MultimodalExample, ObjectDetection, TaggedSentence};
use super::dataset::{MAX_OBJECTS, MAX_TOKENS};
use super::labels::{EntityType, LabelSet, Span, Tag};
use crate::error::{Error, Result};
use crate::spatial::BBox;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_sentences: usize,
    /// Inclusive sentence-length range.
    pub m_range: (usize, usize),
    /// Inclusive detection-count range.
    pub n_range: (usize, usize),
    pub d: usize,
    pub d_v: usize,
    pub concept_vocab: usize,
    pub relevance_rate: f64,
    /// Target fraction of tokens inside entities.
    pub entity_density: f64,
    /// Fraction of each type prototype shared by all types, in `[0, 1]`.
    pub type_ambiguity: f64,
    pub word_noise: f64,
    pub visual_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_sentences: 32,
            m_range: (4, 12),
            n_range: (0, 6),
            d: 32,
            d_v: 16,
            concept_vocab: 8,
            relevance_rate: 0.5,
            entity_density: 0.3,
            type_ambiguity: 0.0,
            word_noise: 0.3,
            visual_noise: 0.3,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let (m0, m1) = self.m_range;
        let (n0, n1) = self.n_range;
        if m0 == 0 || m0 > m1 {
            return Err(Error::config(format!("sentence length range {m0}..={m1} is empty")));
        }
        if m1 > MAX_TOKENS {
            return Err(Error::config(format!("sentence length {m1} exceeds {MAX_TOKENS}")));
        }
        if n0 > n1 {
            return Err(Error::config(format!("object count range {n0}..={n1} is empty")));
        }
        if n1 > MAX_OBJECTS {
            return Err(Error::config(format!("object count {n1} exceeds {MAX_OBJECTS}")));
        }
        if self.d == 0 || self.d_v == 0 || self.concept_vocab == 0 {
            return Err(Error::config("d, d_v and concept_vocab must be positive"));
        }
        for (name, v) in [
            ("relevance_rate", self.relevance_rate),
            ("type_ambiguity", self.type_ambiguity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.entity_density) {
            return Err(Error::config(format!(
                "entity_density must lie in [0, 1), got {}",
                self.entity_density
            )));
        }
        if !(self.word_noise >= 0.0 && self.visual_noise >= 0.0) {
            return Err(Error::config("noise levels must be nonnegative"));
        }
        Ok(())
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta::new(self.d, self.d_v, self.concept_vocab)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub examples: Vec<MultimodalExample>,
    /// Whether each example's image was drawn from the relevant distribution.
    pub relevant: Vec<bool>,
    pub meta: DatasetMeta,
}

/// Prototypes shared by every split drawn from one seed.
pub struct SyntheticWorld {
    cfg: SyntheticConfig,
    rng: ChaCha8Rng,
    text_proto: Vec<Vec<f64>>,
    outside_proto: Vec<f64>,
    begin_marker: Vec<f64>,
    inside_marker: Vec<f64>,
    visual_proto: Vec<Vec<f64>>,
    next_token: usize,
}

fn normal_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

impl SyntheticWorld {
    pub fn new(seed: u64, cfg: SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d;
        let shared = normal_vec(&mut rng, d, 1.0);
        let a = cfg.type_ambiguity;
        let text_proto = EntityType::ALL
            .iter()
            .map(|_| {
                let own = normal_vec(&mut rng, d, 1.0);
                own.iter().zip(&shared).map(|(o, s)| (1.0 - a) * o + a * s).collect()
            })
            .collect();
        let outside_proto = normal_vec(&mut rng, d, 1.0);
        let begin_marker = normal_vec(&mut rng, d, 0.5);
        let inside_marker = normal_vec(&mut rng, d, 0.5);
        let visual_proto = EntityType::ALL
            .iter()
            .map(|_| normal_vec(&mut rng, cfg.d_v, 1.0))
            .collect();
        Ok(Self {
            cfg,
            rng,
            text_proto,
            outside_proto,
            begin_marker,
            inside_marker,
            visual_proto,
            next_token: 0,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.cfg
    }

    fn labels(&mut self, m: usize) -> Vec<usize> {
        // Each free position opens an entity with probability q; entity
        // lengths are 1 or 2, so the covered share is 1.5q / (1 + 0.5q).
        let f = self.cfg.entity_density;
        let q = f / (1.5 - 0.5 * f);
        let mut labels = vec![LabelSet::OUTSIDE; m];
        let mut i = 0;
        while i < m {
            if self.rng.random::<f64>() < q {
                let ty = EntityType::ALL[self.rng.random_range(0..4)];
                let len = self.rng.random_range(1..=2).min(m - i);
                labels[i] = LabelSet::index(Tag::Begin(ty));
                for slot in &mut labels[i + 1..i + len] {
                    *slot = LabelSet::index(Tag::Inside(ty));
                }
                i += len;
            } else {
                i += 1;
            }
        }
        labels
    }

    fn word_row(&mut self, label: usize) -> Vec<f64> {
        let noise = normal_vec(&mut self.rng, self.cfg.d, self.cfg.word_noise);
        let (base, marker): (&[f64], Option<&[f64]>) = match LabelSet::tag(label) {
            Tag::Outside => (&self.outside_proto, None),
            Tag::Begin(t) => (&self.text_proto[t.index()], Some(&self.begin_marker)),
            Tag::Inside(t) => (&self.text_proto[t.index()], Some(&self.inside_marker)),
        };
        (0..self.cfg.d)
            .map(|k| base[k] + marker.map_or(0.0, |m| m[k]) + noise[k])
            .collect()
    }

    fn random_box(&mut self) -> BBox {
        let xc = self.rng.random_range(0.1..0.9);
        let yc = self.rng.random_range(0.1..0.9);
        let h = self.rng.random_range(0.05..0.5);
        let w = self.rng.random_range(0.05..0.5);
        BBox::new(xc, yc, h, w)
            .clamp_to_unit()
            .expect("center inside the image")
    }

    fn example(&mut self) -> (MultimodalExample, bool) {
        let cfg = self.cfg.clone();
        let m = self.rng.random_range(cfg.m_range.0..=cfg.m_range.1);
        let labels = self.labels(m);
        let tokens: Vec<String> = (0..m)
            .map(|_| {
                self.next_token += 1;
                format!("w{}", self.next_token)
            })
            .collect();
        let mut word_data = Vec::with_capacity(m * cfg.d);
        for &l in &labels {
            word_data.extend(self.word_row(l));
        }
        let mut cls: Vec<f64> = (0..cfg.d)
            .map(|k| (0..m).map(|r| word_data[r * cfg.d + k]).sum::<f64>() / m as f64)
            .collect();
        for (c, n) in cls.iter_mut().zip(normal_vec(&mut self.rng, cfg.d, cfg.word_noise)) {
            *c += n;
        }

        let mut present: Vec<EntityType> = super::labels::spans_from_bio2(&labels)
            .iter()
            .map(|s: &Span| s.ty)
            .collect();
        present.sort();
        present.dedup();

        let relevant = self.rng.random::<f64>() < cfg.relevance_rate;
        let n = self.rng.random_range(cfg.n_range.0..=cfg.n_range.1);
        let (image_feat, objects) = if relevant {
            let mut img = normal_vec(&mut self.rng, cfg.d_v, cfg.visual_noise);
            for t in &present {
                for (x, p) in img.iter_mut().zip(&self.visual_proto[t.index()]) {
                    *x += p;
                }
            }
            let mut objects = Vec::with_capacity(n);
            for k in 0..n {
                let bbox = self.random_box();
                let score = self.rng.random::<f64>();
                let (feat, concept_id) = match present.get(k) {
                    Some(t) => {
                        let mut f = normal_vec(&mut self.rng, cfg.d_v, cfg.visual_noise);
                        for (x, p) in f.iter_mut().zip(&self.visual_proto[t.index()]) {
                            *x += p;
                        }
                        (f, t.index() % cfg.concept_vocab)
                    }
                    None => {
                        let c = if cfg.concept_vocab > 4 {
                            self.rng.random_range(4..cfg.concept_vocab)
                        } else {
                            self.rng.random_range(0..cfg.concept_vocab)
                        };
                        (normal_vec(&mut self.rng, cfg.d_v, 1.0), c)
                    }
                };
                objects.push(ObjectDetection {
                    bbox,
                    feat: Tensor::vector(feat),
                    concept_id,
                    score,
                });
            }
            (img, objects)
        } else {
            let img = normal_vec(&mut self.rng, cfg.d_v, 1.0);
            let objects = (0..n)
                .map(|_| {
                    let bbox = self.random_box();
                    let score = self.rng.random::<f64>();
                    let feat = normal_vec(&mut self.rng, cfg.d_v, 1.0);
                    let concept_id = self.rng.random_range(0..cfg.concept_vocab);
                    ObjectDetection {
                        bbox,
                        feat: Tensor::vector(feat),
                        concept_id,
                        score,
                    }
                })
                .collect();
            (img, objects)
        };

        let mut ex = MultimodalExample {
            sentence: TaggedSentence {
                tokens,
                labels,
                word_feats: Tensor::matrix(m, cfg.d, word_data).expect("sized above"),
                cls_feat: Tensor::vector(cls),
            },
            image_feat: Tensor::vector(image_feat),
            objects,
        };
        ex.rank_objects();
        (ex, relevant)
    }

    /// Draws `n` further examples.
    pub fn sample(&mut self, n: usize) -> SyntheticCorpus {
        let (examples, relevant) = (0..n).map(|_| self.example()).unzip();
        SyntheticCorpus {
            examples,
            relevant,
            meta: self.cfg.meta(),
        }
    }
}

/// One corpus of `cfg.n_sentences` examples.
pub fn gen_synthetic(seed: u64, cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let mut world = SyntheticWorld::new(seed, cfg.clone())?;
    Ok(world.sample(cfg.n_sentences))
}

/// Writes `train.jsonl` (`cfg.n_sentences` examples), `val.jsonl`,
/// `test.jsonl` and `meta.json` into `dir`. All splits share prototypes.
pub fn write_fixtures(
    dir: impl AsRef<Path>,
    seed: u64,
    cfg: &SyntheticConfig,
    n_val: usize,
    n_test: usize,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut world = SyntheticWorld::new(seed, cfg.clone())?;
    let train = world.sample(cfg.n_sentences);
    let val = world.sample(n_val);
    let test = world.sample(n_test);
    save_dataset(dir.join("train.jsonl"), &train.examples)?;
    save_dataset(dir.join("val.jsonl"), &val.examples)?;
    save_dataset(dir.join("test.jsonl"), &test.examples)?;
    save_meta(dir.join("meta.json"), &cfg.meta())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::load_dataset;

    #[test]
    fn same_seed_same_files() {
        let cfg = SyntheticConfig::default();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_fixtures(a.path(), 3, &cfg, 4, 4).unwrap();
        write_fixtures(b.path(), 3, &cfg, 4, 4).unwrap();
        for f in ["train.jsonl", "val.jsonl", "test.jsonl", "meta.json"] {
            let x = std::fs::read(a.path().join(f)).unwrap();
            let y = std::fs::read(b.path().join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
    }

    #[test]
    fn written_fixtures_load_back_equal() {
        let cfg = SyntheticConfig::default();
        let dir = tempfile::tempdir().unwrap();
        write_fixtures(dir.path(), 11, &cfg, 0, 0).unwrap();
        let loaded = load_dataset(dir.path().join("train.jsonl"), &cfg.meta()).unwrap();
        assert_eq!(loaded, gen_synthetic(11, &cfg).unwrap().examples);
    }

    #[test]
    fn empty_length_range_is_config_error() {
        let cfg = SyntheticConfig {
            m_range: (5, 4),
            ..Default::default()
        };
        assert!(matches!(gen_synthetic(0, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn zero_relevance_means_no_relevant_examples() {
        let cfg = SyntheticConfig {
            relevance_rate: 0.0,
            ..Default::default()
        };
        let c = gen_synthetic(5, &cfg).unwrap();
        assert!(c.relevant.iter().all(|&r| !r));
    }

    #[test]
    fn entity_density_near_target() {
        let cfg = SyntheticConfig::default();
        let c = gen_synthetic(7, &cfg).unwrap();
        let (inside, total) = c.examples.iter().fold((0, 0), |(i, t), ex| {
            let l = &ex.sentence.labels;
            (i + l.iter().filter(|&&x| x != LabelSet::OUTSIDE).count(), t + l.len())
        });
        let share = inside as f64 / total as f64;
        assert!((share - 0.3).abs() <= 0.2 * 0.3, "share {share}");
    }
}
