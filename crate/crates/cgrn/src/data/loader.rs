//! On-disk corpus layout:
//!
//! ```text
//! <root>/manifest.txt              key=value lines
//! <root>/targets/<font_id>/<class_label>.ppm
//! <root>/<split>/<class_label>/<id>.ppm
//! ```
//!
//! Class indices are assigned by sorting the class labels found under
//! `targets/`; every split directory must use labels from that set.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::data::dataset::{Dataset, Sample, Splits, TargetAtlas};
use crate::data::glyphs::class_label;
use crate::data::ppm::{read_ppm, resize_bilinear, write_ppm, Image};
use crate::error::{Error, Result};

const SIZE: usize = 64;

fn label_of(class: usize) -> Result<char> {
    class_label(class).ok_or_else(|| Error::Data(format!("class {class} has no label")))
}

/// Write the three splits, the target atlas, and a manifest under `dir`.
pub fn export_corpus(splits: &Splits, dir: &Path) -> Result<()> {
    let atlas = &splits.atlas;
    let num_classes = atlas.num_classes();
    for (slot, &font_id) in atlas.font_ids.iter().enumerate() {
        let fdir = dir.join("targets").join(font_id.to_string());
        fs::create_dir_all(&fdir)?;
        for class in 0..num_classes {
            let img = atlas.get(class, slot)?;
            write_ppm(&fdir.join(format!("{}.ppm", label_of(class)?)), &img)?;
        }
    }
    let mut counts = Vec::new();
    for (name, ds) in [
        ("train", &splits.train),
        ("test_iid", &splits.test_iid),
        ("test_novel_font", &splits.test_novel_font),
    ] {
        let mut per_class = vec![0usize; num_classes];
        for s in &ds.samples {
            let cdir = dir.join(name).join(label_of(s.y)?.to_string());
            fs::create_dir_all(&cdir)?;
            write_ppm(&cdir.join(format!("{:05}.ppm", per_class[s.y])), &s.x)?;
            per_class[s.y] += 1;
        }
        // an empty split still gets its directory so loaders see it
        fs::create_dir_all(dir.join(name))?;
        counts.push((name, ds.samples.len()));
    }
    let mut manifest = format!("classes={num_classes}\nm={}\n", atlas.m());
    let ids: Vec<String> = atlas.font_ids.iter().map(|f| f.to_string()).collect();
    manifest.push_str(&format!("fonts={}\n", ids.join(",")));
    for (name, n) in counts {
        manifest.push_str(&format!("count_{name}={n}\n"));
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// A corpus read back from disk. Samples carry identity font
/// permutations; shuffle at training time if desired.
pub struct Corpus {
    /// Split name -> dataset, e.g. "train", "test_iid".
    pub splits: BTreeMap<String, Dataset>,
    /// Class labels in index order.
    pub labels: Vec<String>,
    pub atlas: TargetAtlas,
}

fn parse_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("manifest line {}: not key=value", lineno + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn manifest_usize(map: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    map.get(key)
        .ok_or_else(|| Error::Data(format!("manifest is missing `{key}`")))?
        .parse()
        .map_err(|_| Error::Data(format!("manifest `{key}` is not a number")))
}

fn sorted_dir_names(path: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(path)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn load_image(path: &Path) -> Result<Image> {
    let img = read_ppm(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if img.w == SIZE && img.h == SIZE {
        Ok(img)
    } else {
        Ok(resize_bilinear(&img, SIZE, SIZE))
    }
}

/// Load a corpus from the on-disk layout; images are resized to the
/// network's 64x64 input if needed.
pub fn load_directory(dir: &Path) -> Result<Corpus> {
    let manifest = parse_manifest(&dir.join("manifest.txt"))?;
    let num_classes = manifest_usize(&manifest, "classes")?;
    let m = manifest_usize(&manifest, "m")?;

    // targets establish the class set
    let targets_dir = dir.join("targets");
    let mut font_dirs = sorted_dir_names(&targets_dir)
        .map_err(|_| Error::Data(format!("no targets/ directory under {}", dir.display())))?;
    font_dirs.sort_by_key(|n| n.parse::<u64>().unwrap_or(u64::MAX));
    if font_dirs.len() != m {
        return Err(Error::Data(format!(
            "manifest says m={m} target fonts, targets/ holds {}",
            font_dirs.len()
        )));
    }
    let font_ids: Vec<u32> = font_dirs
        .iter()
        .map(|n| {
            n.parse()
                .map_err(|_| Error::Data(format!("target font directory `{n}` is not an id")))
        })
        .collect::<Result<_>>()?;

    let mut labels: Vec<String> = Vec::new();
    for entry in fs::read_dir(targets_dir.join(&font_dirs[0]))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".ppm") {
            labels.push(stem.to_string());
        }
    }
    labels.sort();
    if labels.len() != num_classes {
        return Err(Error::Data(format!(
            "manifest says {num_classes} classes, targets/ holds {}",
            labels.len()
        )));
    }

    let mut images: Vec<Vec<Arc<Image>>> = vec![Vec::with_capacity(m); num_classes];
    for fdir in &font_dirs {
        for (class, label) in labels.iter().enumerate() {
            let path = targets_dir.join(fdir).join(format!("{label}.ppm"));
            if !path.is_file() {
                return Err(Error::Data(format!(
                    "missing target for font {fdir}, class {label}"
                )));
            }
            images[class].push(Arc::new(load_image(&path)?));
        }
    }
    let atlas = TargetAtlas::from_images(font_ids, images)?;

    let class_of = |label: &str| -> Result<usize> {
        labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_err(|_| Error::Data(format!("class directory `{label}` is not in targets/")))
    };

    let mut splits = BTreeMap::new();
    for split in sorted_dir_names(dir)? {
        if split == "targets" {
            continue;
        }
        let mut samples = Vec::new();
        for label in sorted_dir_names(&dir.join(&split))? {
            let class = class_of(&label)?;
            let mut files = Vec::new();
            for entry in fs::read_dir(dir.join(&split).join(&label))? {
                let name = entry?.file_name().to_string_lossy().into_owned();
                if name.ends_with(".ppm") {
                    files.push(name);
                }
            }
            files.sort();
            for name in files {
                samples.push(Sample {
                    x: load_image(&dir.join(&split).join(&label).join(name))?,
                    y: class,
                    targets: (0..m).map(|j| atlas.get(class, j)).collect::<Result<_>>()?,
                    font_perm: (1..=m).collect(),
                });
            }
        }
        if let Some(expected) = manifest.get(&format!("count_{split}")) {
            let expected: usize = expected
                .parse()
                .map_err(|_| Error::Data(format!("manifest count_{split} is not a number")))?;
            if expected != samples.len() {
                return Err(Error::Data(format!(
                    "manifest says {expected} samples in {split}, found {}",
                    samples.len()
                )));
            }
        }
        splits.insert(split, Dataset { samples, num_classes, num_fonts: m });
    }
    Ok(Corpus { splits, labels, atlas })
}
