//! Synthetic scene-character corpus: procedural fonts, glyph rendering,
//! scene corruption, dataset assembly and PPM import/export.

pub mod corrupt;
pub mod dataset;
pub mod font;
pub mod glyphs;
pub mod loader;
pub mod ppm;
pub mod render;

pub use corrupt::{synth_scene, BgMode, CorruptionSpec};
pub use dataset::{make_splits, shuffle_fonts, DataConfig, Dataset, Sample, Splits, TargetAtlas};
pub use font::{builtin_fonts, SynthFont};
pub use loader::{export_corpus, load_directory, Corpus};
pub use ppm::{read_ppm, resize_bilinear, write_ppm, Image};
pub use render::render_canonical;
