//! In-memory corpora: samples, the canonical-target atlas, split
//! construction, and batching for the training loop.

use std::sync::Arc;

use crate::data::corrupt::{synth_scene, CorruptionSpec};
use crate::data::font::SynthFont;
use crate::data::ppm::Image;
use crate::data::render::render_canonical;
use crate::error::{Error, Result};
use crate::rng::{mix, Rng};
use crate::tensor::Tensor;
use crate::train::{Batch, BatchSource};

/// Canonical renders of every class in each of the m target fonts,
/// shared across samples.
pub struct TargetAtlas {
    pub font_ids: Vec<u32>,
    /// `images[class][font_slot]`
    images: Vec<Vec<Arc<Image>>>,
}

impl TargetAtlas {
    pub fn build(fonts: &[SynthFont], num_classes: usize, size: usize) -> Result<Self> {
        let mut images = Vec::with_capacity(num_classes);
        for class in 0..num_classes {
            let row = fonts
                .iter()
                .map(|f| render_canonical(class, f, size).map(Arc::new))
                .collect::<Result<Vec<_>>>()?;
            images.push(row);
        }
        Ok(TargetAtlas { font_ids: fonts.iter().map(|f| f.id).collect(), images })
    }

    /// Assemble an atlas from already-rendered images, e.g. a corpus read
    /// back from disk. `images[class][font_slot]`.
    pub fn from_images(font_ids: Vec<u32>, images: Vec<Vec<Arc<Image>>>) -> Result<Self> {
        for row in &images {
            if row.len() != font_ids.len() {
                return Err(Error::Data("target atlas rows must cover every font".into()));
            }
        }
        Ok(TargetAtlas { font_ids, images })
    }

    /// Number of target fonts (the paper's m).
    pub fn m(&self) -> usize {
        self.font_ids.len()
    }

    pub fn num_classes(&self) -> usize {
        self.images.len()
    }

    /// Canonical target for `class` in target-font slot `font_slot`
    /// (0-based position in the configured font list).
    pub fn get(&self, class: usize, font_slot: usize) -> Result<Arc<Image>> {
        self.images
            .get(class)
            .and_then(|row| row.get(font_slot))
            .cloned()
            .ok_or_else(|| {
                Error::Data(format!("no target for class {class}, font slot {font_slot}"))
            })
    }
}

/// One training or evaluation sample.
#[derive(Clone)]
pub struct Sample {
    pub x: Image,
    /// Class index in `0..num_classes`.
    pub y: usize,
    /// Canonical targets for the m generator slots, already permuted.
    pub targets: Vec<Arc<Image>>,
    /// 1-based font-embedding index fed to each generator slot; permuted
    /// jointly with `targets` so slot j always pairs index and image.
    pub font_perm: Vec<usize>,
}

/// Apply a fresh uniform permutation jointly to the target list and the
/// embedding indices, in place.
pub fn shuffle_fonts(sample: &mut Sample, rng: &mut Rng) {
    let m = sample.targets.len();
    let perm = rng.permutation(m);
    let targets = std::mem::take(&mut sample.targets);
    let fonts = std::mem::take(&mut sample.font_perm);
    let mut t_new = Vec::with_capacity(m);
    let mut f_new = Vec::with_capacity(m);
    for &p in &perm {
        t_new.push(targets[p].clone());
        f_new.push(fonts[p]);
    }
    sample.targets = t_new;
    sample.font_perm = f_new;
}

pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub num_fonts: usize,
}

impl Dataset {
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.num_classes];
        for s in &self.samples {
            hist[s.y] += 1;
        }
        hist
    }
}

impl BatchSource for Dataset {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn make_batch(&self, indices: &[usize]) -> Result<Batch> {
        let b = indices.len();
        let m = self.num_fonts;
        let mut x = Vec::with_capacity(b * 3 * 64 * 64);
        let mut labels = Vec::with_capacity(b);
        let mut targets: Vec<Vec<f64>> = vec![Vec::with_capacity(b * 3 * 64 * 64); m];
        let mut slot_fonts: Vec<Vec<usize>> = vec![Vec::with_capacity(b); m];
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::Data(format!("batch index {i} out of range")))?;
            if s.targets.len() != m {
                return Err(Error::Data(format!(
                    "sample {i} carries {} targets, dataset expects {m}",
                    s.targets.len()
                )));
            }
            x.extend_from_slice(s.x.to_tensor().data());
            labels.push(s.y);
            for j in 0..m {
                targets[j].extend_from_slice(s.targets[j].to_tensor().data());
                slot_fonts[j].push(s.font_perm[j]);
            }
        }
        let (h, w) = (64, 64);
        Ok(Batch {
            x: Tensor::new(vec![b, 3, h, w], x)?,
            labels,
            targets: targets
                .into_iter()
                .map(|t| Tensor::new(vec![b, 3, h, w], t))
                .collect::<Result<Vec<_>>>()?,
            slot_fonts,
        })
    }
}

/// Corpus recipe: which classes and fonts, how many corrupted variants,
/// and how large the held-out splits are.
#[derive(Clone, Debug)]
pub struct DataConfig {
    pub num_classes: usize,
    /// Scene fonts used to draw training (and iid-test) inputs.
    pub train_fonts: Vec<usize>,
    /// Scene fonts reserved for the novel-font split; disjoint from
    /// `train_fonts`.
    pub novel_fonts: Vec<usize>,
    /// The m target fonts the generator must emit.
    pub target_fonts: Vec<usize>,
    /// Corrupted variants per (class, train font) pair.
    pub corruptions_per: usize,
    pub test_iid: usize,
    pub test_novel: usize,
    pub corruption: CorruptionSpec,
    pub seed: u64,
}

impl DataConfig {
    pub fn default_corpus(seed: u64) -> Self {
        DataConfig {
            num_classes: 36,
            train_fonts: vec![0, 1, 2],
            novel_fonts: vec![4, 5],
            target_fonts: vec![0, 1, 2, 3],
            corruptions_per: 50,
            test_iid: 720,
            test_novel: 720,
            corruption: CorruptionSpec::default_ranges(),
            seed,
        }
    }

    pub fn validate(&self, font_bank: &[SynthFont]) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > crate::data::glyphs::NUM_GLYPHS {
            return Err(Error::Data(format!(
                "num_classes {} outside 1..={}",
                self.num_classes,
                crate::data::glyphs::NUM_GLYPHS
            )));
        }
        if self.train_fonts.is_empty() || self.target_fonts.is_empty() {
            return Err(Error::Data("train_fonts and target_fonts must be non-empty".into()));
        }
        for &f in self
            .train_fonts
            .iter()
            .chain(&self.novel_fonts)
            .chain(&self.target_fonts)
        {
            if f >= font_bank.len() {
                return Err(Error::Data(format!(
                    "font index {f} outside the bank of {}",
                    font_bank.len()
                )));
            }
        }
        for &f in &self.novel_fonts {
            if self.train_fonts.contains(&f) {
                return Err(Error::Data(format!(
                    "font {f} appears in both train_fonts and novel_fonts"
                )));
            }
        }
        Ok(())
    }
}

pub struct Splits {
    pub train: Dataset,
    pub test_iid: Dataset,
    pub test_novel_font: Dataset,
    pub atlas: TargetAtlas,
}

fn pick<'a>(bank: &'a [SynthFont], ids: &[usize]) -> Vec<SynthFont> {
    ids.iter().map(|&i| bank[i]).collect()
}

/// Build the three splits. Every sample owns a seed derived from the
/// corpus seed, a split tag, and its index, so splits are disjoint
/// streams and generation order never matters.
pub fn make_splits(cfg: &DataConfig, font_bank: &[SynthFont]) -> Result<Splits> {
    cfg.validate(font_bank)?;
    let atlas = TargetAtlas::build(&pick(font_bank, &cfg.target_fonts), cfg.num_classes, 64)?;
    let m = atlas.m();

    let scene = |fonts: &[usize], tag: u64, count: usize| -> Result<Dataset> {
        let mut samples = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % cfg.num_classes;
            let font = &font_bank[fonts[(i / cfg.num_classes) % fonts.len()]];
            let seed = mix(cfg.seed, mix(tag, i as u64));
            samples.push(synth_scene(class, font, &cfg.corruption, seed, &atlas)?);
        }
        Ok(Dataset { samples, num_classes: cfg.num_classes, num_fonts: m })
    };

    let train_count = cfg.num_classes * cfg.train_fonts.len() * cfg.corruptions_per;
    let splits = Splits {
        train: scene(&cfg.train_fonts, 1, train_count)?,
        test_iid: scene(&cfg.train_fonts, 2, cfg.test_iid)?,
        test_novel_font: if cfg.novel_fonts.is_empty() {
            Dataset { samples: Vec::new(), num_classes: cfg.num_classes, num_fonts: m }
        } else {
            scene(&cfg.novel_fonts, 3, cfg.test_novel)?
        },
        atlas,
    };
    Ok(splits)
}
