//! Build a small synthetic scene-character corpus, export it to the PPM
//! directory layout, and read it back.
//!
//!     cargo run --example synth_corpus

use cgrn::data::{builtin_fonts, export_corpus, load_directory, make_splits, DataConfig};

fn main() -> cgrn::Result<()> {
    let mut cfg = DataConfig::default_corpus(42);
    cfg.num_classes = 10; // digits only, to keep this quick
    cfg.corruptions_per = 4;
    cfg.test_iid = 40;
    cfg.test_novel = 40;

    let splits = make_splits(&cfg, &builtin_fonts())?;
    println!(
        "synthesized {} train / {} iid / {} novel-font samples ({} classes, m={})",
        splits.train.samples.len(),
        splits.test_iid.samples.len(),
        splits.test_novel_font.samples.len(),
        splits.train.num_classes,
        splits.atlas.m(),
    );

    let dir = std::env::temp_dir().join("cgrn-example-corpus");
    export_corpus(&splits, &dir)?;
    let corpus = load_directory(&dir)?;
    println!("round-trip from {}:", dir.display());
    for (name, ds) in &corpus.splits {
        println!("  {name}: {} samples", ds.samples.len());
    }
    println!("  class labels: {}", corpus.labels.join(" "));
    Ok(())
}
