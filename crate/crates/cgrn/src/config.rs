//! Flat key=value run configuration.
//!
//! Sources, lowest precedence first: built-in defaults, `CGRN_SEED`
//! (seed only), a config file, then command-line overrides. Unknown keys
//! are rejected. `to_text` serializes the fully-resolved state in a form
//! that parses back to the identical configuration.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{CorruptionSpec, DataConfig};
use crate::error::{Error, Result};
use crate::model::{FinalActivation, GanMode, NetworkConfig, PixelNorm, PoolKind};
use crate::train::{MetricsFormat, TrainConfig};

#[derive(Clone, Debug)]
pub struct IoConfig {
    pub out_dir: String,
    /// Checkpoint to resume from (train) or evaluate (eval / generate).
    pub checkpoint: Option<String>,
    /// Save a checkpoint every this many epochs.
    pub checkpoint_every: usize,
    pub metrics_format: MetricsFormat,
    /// Include wallclock_ms in metric lines. Off by default so metrics
    /// files are byte-comparable across runs.
    pub metrics_wallclock: bool,
    /// Load the corpus from this directory instead of synthesizing it.
    pub data_dir: Option<String>,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            out_dir: "runs/cgrn".into(),
            checkpoint: None,
            checkpoint_every: 1,
            metrics_format: MetricsFormat::KeyValue,
            metrics_wallclock: false,
            data_dir: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub single_font: bool,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: NetworkConfig::desk(),
            train: TrainConfig::default(),
            data: DataConfig::default_corpus(0),
            single_font: false,
            io: IoConfig::default(),
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("key `{key}`: cannot parse `{value}` as {want}"))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, v, "an integer"))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| bad(key, v, "an integer"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| bad(key, v, "a number"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(bad(key, v, "a boolean (true/false)")),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_usize(key, p.trim())).collect()
}

fn parse_fraction(key: &str, v: &str) -> Result<(usize, usize)> {
    let (num, den) = match v.split_once('/') {
        Some((n, d)) => (parse_usize(key, n.trim())?, parse_usize(key, d.trim())?),
        None => (parse_usize(key, v)?, 1),
    };
    if den == 0 {
        return Err(bad(key, v, "a fraction with nonzero denominator"));
    }
    Ok((num, den))
}

fn list_str(l: &[usize]) -> String {
    l.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Seed every stream from one value.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.data.seed = seed;
    }

    /// Assign one configuration key. Later assignments override earlier
    /// ones; unknown keys or unparseable values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.preset" => {
                self.model = match value {
                    "paper" => NetworkConfig::paper(),
                    "desk" => NetworkConfig::desk(),
                    _ => return Err(bad(key, value, "`paper` or `desk`")),
                }
            }
            "model.width_mult" => {
                (self.model.width_num, self.model.width_den) = parse_fraction(key, value)?;
            }
            "model.L" => {
                self.model.num_classes = parse_usize(key, value)?;
                self.data.num_classes = self.model.num_classes;
            }
            "model.m" => {
                let m = parse_usize(key, value)?;
                if m == 0 || m > self.data.target_fonts.len() {
                    return Err(Error::Config(format!(
                        "model.m={m} needs 1..={} configured target fonts",
                        self.data.target_fonts.len()
                    )));
                }
                self.data.target_fonts.truncate(m);
            }
            "model.font_embed_dim" => self.model.font_embed_dim = parse_usize(key, value)?,
            "model.gan_mode" => {
                self.model.gan_mode = match value {
                    "minimax" => GanMode::Minimax,
                    "nonsaturating" => GanMode::NonSaturating,
                    _ => return Err(bad(key, value, "`minimax` or `nonsaturating`")),
                }
            }
            "model.final_activation" => {
                self.model.final_activation = match value {
                    "sigmoid" => FinalActivation::Sigmoid,
                    "relu" => FinalActivation::Relu,
                    _ => return Err(bad(key, value, "`sigmoid` or `relu`")),
                }
            }
            "model.ccn_pool" => {
                self.model.ccn_pool = match value {
                    "avg" => PoolKind::Avg,
                    "max" => PoolKind::Max,
                    _ => return Err(bad(key, value, "`avg` or `max`")),
                }
            }
            "model.pixel_norm" => {
                self.model.pixel_norm = match value {
                    "l1" => PixelNorm::L1,
                    "l2" => PixelNorm::L2,
                    _ => return Err(bad(key, value, "`l1` or `l2`")),
                }
            }
            "train.lambda" => self.train.lambda = parse_f64(key, value)?,
            "train.lr" => self.train.lr = parse_f64(key, value)?,
            "train.beta1" => self.train.beta1 = parse_f64(key, value)?,
            "train.beta2" => self.train.beta2 = parse_f64(key, value)?,
            "train.adam_eps" => self.train.eps = parse_f64(key, value)?,
            "train.batch" => self.train.batch = parse_usize(key, value)?,
            "train.epochs" => self.train.epochs = parse_usize(key, value)?,
            "train.seed" => self.set_seed(parse_u64(key, value)?),
            "data.classes" => {
                self.data.num_classes = parse_usize(key, value)?;
                self.model.num_classes = self.data.num_classes;
            }
            "data.train_fonts" => self.data.train_fonts = parse_list(key, value)?,
            "data.novel_fonts" => self.data.novel_fonts = parse_list(key, value)?,
            "data.target_fonts" => self.data.target_fonts = parse_list(key, value)?,
            "data.corruptions_per" => self.data.corruptions_per = parse_usize(key, value)?,
            "data.test_iid" => self.data.test_iid = parse_usize(key, value)?,
            "data.test_novel" => self.data.test_novel = parse_usize(key, value)?,
            "data.corruption" => {
                let floor = self.data.corruption.contrast_floor;
                self.data.corruption = match value {
                    "identity" => CorruptionSpec::identity(),
                    "default" => CorruptionSpec::default_ranges(),
                    _ => return Err(bad(key, value, "`identity` or `default`")),
                };
                self.data.corruption.contrast_floor = floor;
            }
            "data.blur" => self.data.corruption.blur_radius = parse_f64(key, value)?,
            "data.brightness" => self.data.corruption.brightness = parse_f64(key, value)?,
            "data.contrast" => self.data.corruption.contrast = parse_f64(key, value)?,
            "data.rotation" => self.data.corruption.rotation_deg = parse_f64(key, value)?,
            "data.translation" => self.data.corruption.translation_px = parse_f64(key, value)?,
            "data.occlusion" => self.data.corruption.occlusion_prob = parse_f64(key, value)?,
            "data.contrast_floor" => {
                self.data.corruption.contrast_floor = parse_f64(key, value)?
            }
            "ablation.no_ggn" => self.train.no_ggn = parse_bool(key, value)?,
            "ablation.no_gdn" => self.train.no_gdn = parse_bool(key, value)?,
            "ablation.single_font" => self.single_font = parse_bool(key, value)?,
            "io.out_dir" => self.io.out_dir = value.to_string(),
            "io.checkpoint" => self.io.checkpoint = Some(value.to_string()),
            "io.checkpoint_every" => self.io.checkpoint_every = parse_usize(key, value)?,
            "io.metrics_format" => {
                self.io.metrics_format = match value {
                    "kv" => MetricsFormat::KeyValue,
                    "jsonl" => MetricsFormat::JsonLines,
                    _ => return Err(bad(key, value, "`kv` or `jsonl`")),
                }
            }
            "io.metrics_wallclock" => self.io.metrics_wallclock = parse_bool(key, value)?,
            "io.data_dir" => self.io.data_dir = Some(value.to_string()),
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Parse key=value lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key=value", lineno + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Assemble a configuration from all sources in precedence order.
    pub fn from_sources(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Ok(seed) = std::env::var("CGRN_SEED") {
            cfg.set_seed(
                seed.parse().map_err(|_| Error::Config("CGRN_SEED is not an integer".into()))?,
            );
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Resolve derived fields and validate. Call once after all sources
    /// are applied, before using the configuration.
    pub fn resolve(&mut self) -> Result<()> {
        if self.single_font {
            self.data.target_fonts.truncate(1);
        }
        self.model.num_fonts = self.data.target_fonts.len();
        self.model.num_classes = self.data.num_classes;
        self.model.validate()?;
        if self.train.batch == 0 || self.train.epochs == 0 {
            return Err(Error::Config("train.batch and train.epochs must be positive".into()));
        }
        if self.io.checkpoint_every == 0 {
            return Err(Error::Config("io.checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    /// Serialize the full state; parsing the result reproduces it.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "model.width_mult={}/{}", self.model.width_num, self.model.width_den);
        let _ = writeln!(w, "model.font_embed_dim={}", self.model.font_embed_dim);
        let _ = writeln!(
            w,
            "model.gan_mode={}",
            match self.model.gan_mode {
                GanMode::Minimax => "minimax",
                GanMode::NonSaturating => "nonsaturating",
            }
        );
        let _ = writeln!(
            w,
            "model.final_activation={}",
            match self.model.final_activation {
                FinalActivation::Sigmoid => "sigmoid",
                FinalActivation::Relu => "relu",
            }
        );
        let _ = writeln!(
            w,
            "model.ccn_pool={}",
            match self.model.ccn_pool {
                PoolKind::Avg => "avg",
                PoolKind::Max => "max",
            }
        );
        let _ = writeln!(
            w,
            "model.pixel_norm={}",
            match self.model.pixel_norm {
                PixelNorm::L1 => "l1",
                PixelNorm::L2 => "l2",
            }
        );
        let _ = writeln!(w, "train.lambda={}", self.train.lambda);
        let _ = writeln!(w, "train.lr={}", self.train.lr);
        let _ = writeln!(w, "train.beta1={}", self.train.beta1);
        let _ = writeln!(w, "train.beta2={}", self.train.beta2);
        let _ = writeln!(w, "train.adam_eps={}", self.train.eps);
        let _ = writeln!(w, "train.batch={}", self.train.batch);
        let _ = writeln!(w, "train.epochs={}", self.train.epochs);
        let _ = writeln!(w, "train.seed={}", self.train.seed);
        let _ = writeln!(w, "data.classes={}", self.data.num_classes);
        let _ = writeln!(w, "data.train_fonts={}", list_str(&self.data.train_fonts));
        let _ = writeln!(w, "data.novel_fonts={}", list_str(&self.data.novel_fonts));
        let _ = writeln!(w, "data.target_fonts={}", list_str(&self.data.target_fonts));
        let _ = writeln!(w, "data.corruptions_per={}", self.data.corruptions_per);
        let _ = writeln!(w, "data.test_iid={}", self.data.test_iid);
        let _ = writeln!(w, "data.test_novel={}", self.data.test_novel);
        let c = &self.data.corruption;
        let _ = writeln!(w, "data.blur={}", c.blur_radius);
        let _ = writeln!(w, "data.brightness={}", c.brightness);
        let _ = writeln!(w, "data.contrast={}", c.contrast);
        let _ = writeln!(w, "data.rotation={}", c.rotation_deg);
        let _ = writeln!(w, "data.translation={}", c.translation_px);
        let _ = writeln!(w, "data.occlusion={}", c.occlusion_prob);
        let _ = writeln!(w, "data.contrast_floor={}", c.contrast_floor);
        let _ = writeln!(w, "ablation.no_ggn={}", self.train.no_ggn);
        let _ = writeln!(w, "ablation.no_gdn={}", self.train.no_gdn);
        let _ = writeln!(w, "ablation.single_font={}", self.single_font);
        let _ = writeln!(w, "io.out_dir={}", self.io.out_dir);
        if let Some(ck) = &self.io.checkpoint {
            let _ = writeln!(w, "io.checkpoint={ck}");
        }
        let _ = writeln!(w, "io.checkpoint_every={}", self.io.checkpoint_every);
        let _ = writeln!(
            w,
            "io.metrics_format={}",
            match self.io.metrics_format {
                MetricsFormat::KeyValue => "kv",
                MetricsFormat::JsonLines => "jsonl",
            }
        );
        let _ = writeln!(w, "io.metrics_wallclock={}", self.io.metrics_wallclock);
        if let Some(d) = &self.io.data_dir {
            let _ = writeln!(w, "io.data_dir={d}");
        }
        s
    }
}
