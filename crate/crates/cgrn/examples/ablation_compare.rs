//! Compare the full CGRN against the plain-classifier ablation
//! (`-GGN, -GDN`) on the same small task and seed. Mirrors the paper's
//! ablation rows at toy scale.
//!
//!     cargo run --example ablation_compare

use cgrn::data::{builtin_fonts, make_splits, CorruptionSpec, DataConfig};
use cgrn::eval::evaluate;
use cgrn::model::{init_params, NetworkConfig};
use cgrn::train::{train_loop, LoopSignal, TrainConfig, TrainState};

fn run(net: &NetworkConfig, tcfg: &TrainConfig, data: &DataConfig) -> cgrn::Result<(f64, f64)> {
    let splits = make_splits(data, &builtin_fonts())?;
    let mut store = init_params(net, tcfg.seed)?;
    let mut state = TrainState::new(tcfg);
    train_loop(&mut store, &mut state, net, tcfg, &splits.train, |_, _, _, _| {
        Ok(LoopSignal::Continue)
    })?;
    let iid = evaluate(&mut store, net, &splits.test_iid, "iid", &[], false)?;
    let novel = evaluate(&mut store, net, &splits.test_novel_font, "novel", &[], false)?;
    Ok((iid.accuracy(), novel.accuracy()))
}

fn main() -> cgrn::Result<()> {
    let mut net = NetworkConfig::desk();
    net.width_den = 16;
    net.num_classes = 6;
    net.num_fonts = 2;
    net.font_embed_dim = 16;
    let data = DataConfig {
        num_classes: 6,
        train_fonts: vec![0, 1],
        novel_fonts: vec![4, 5],
        target_fonts: vec![0, 3],
        corruptions_per: 8,
        test_iid: 36,
        test_novel: 36,
        corruption: CorruptionSpec::default_ranges(),
        seed: 13,
    };
    let base = TrainConfig { batch: 8, epochs: 3, seed: 13, ..TrainConfig::default() };

    let full = run(&net, &base, &data)?;
    let plain = run(
        &net,
        &TrainConfig { no_ggn: true, no_gdn: true, ..base.clone() },
        &data,
    )?;

    println!("variant           test_iid  test_novel_font");
    println!("full CGRN         {:.3}     {:.3}", full.0, full.1);
    println!("-GGN,-GDN         {:.3}     {:.3}", plain.0, plain.1);
    println!("(single short run at toy scale; expect noise across seeds)");
    Ok(())
}
