//! Save a checkpoint mid-training, reload it, and confirm the resumed
//! run continues bit-for-bit where the original left off.
//!
//!     cargo run --example checkpoint_roundtrip

use cgrn::checkpoint::{load_checkpoint, save_checkpoint};
use cgrn::data::{builtin_fonts, make_splits, CorruptionSpec, DataConfig};
use cgrn::model::{init_params, NetworkConfig};
use cgrn::train::{train_loop, LoopSignal, TrainConfig, TrainState};

fn main() -> cgrn::Result<()> {
    let mut net = NetworkConfig::desk();
    net.width_den = 32;
    net.num_classes = 4;
    net.num_fonts = 2;
    net.font_embed_dim = 8;
    let data = DataConfig {
        num_classes: 4,
        train_fonts: vec![0],
        novel_fonts: vec![],
        target_fonts: vec![0, 3],
        corruptions_per: 8,
        test_iid: 0,
        test_novel: 0,
        corruption: CorruptionSpec::default_ranges(),
        seed: 21,
    };
    let splits = make_splits(&data, &builtin_fonts())?;
    let tcfg = TrainConfig { batch: 8, epochs: 1, seed: 21, ..TrainConfig::default() };

    // train one epoch, checkpoint, then one more
    let mut store = init_params(&net, tcfg.seed)?;
    let mut state = TrainState::new(&tcfg);
    train_loop(&mut store, &mut state, &net, &tcfg, &splits.train, |_, _, _, _| {
        Ok(LoopSignal::Continue)
    })?;
    let path = std::env::temp_dir().join("cgrn-example.cgrn");
    save_checkpoint(&path, &store, &state)?;

    let mut direct = Vec::new();
    train_loop(&mut store, &mut state, &net, &tcfg, &splits.train, |_, _, r, _| {
        direct.push(r.composite);
        Ok(LoopSignal::Continue)
    })?;

    // reload and replay the second epoch
    let (mut store2, mut state2) = load_checkpoint(&path, &tcfg)?;
    let mut resumed = Vec::new();
    train_loop(&mut store2, &mut state2, &net, &tcfg, &splits.train, |_, _, r, _| {
        resumed.push(r.composite);
        Ok(LoopSignal::Continue)
    })?;

    assert_eq!(direct.len(), resumed.len());
    for (a, b) in direct.iter().zip(&resumed) {
        assert_eq!(a.to_bits(), b.to_bits(), "resumed run diverged");
    }
    println!(
        "resumed epoch matches the uninterrupted run bit-for-bit across {} steps",
        direct.len()
    );
    Ok(())
}
