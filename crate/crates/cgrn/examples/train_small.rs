//! Train a narrow CGRN on a few classes for a couple of epochs and watch
//! the loss terms move. Runs in well under a minute on one CPU core.
//!
//!     cargo run --example train_small

use cgrn::data::{builtin_fonts, make_splits, DataConfig};
use cgrn::model::{init_params, NetworkConfig};
use cgrn::train::{format_metrics, train_loop, LoopSignal, MetricsFormat, TrainConfig, TrainState};

fn main() -> cgrn::Result<()> {
    // 1/16-width network over 6 classes with two target fonts
    let mut net = NetworkConfig::desk();
    net.width_den = 16;
    net.num_classes = 6;
    net.num_fonts = 2;
    net.font_embed_dim = 16;

    let data = DataConfig {
        num_classes: 6,
        train_fonts: vec![0, 1],
        novel_fonts: vec![4],
        target_fonts: vec![0, 3],
        corruptions_per: 4,
        test_iid: 24,
        test_novel: 0,
        corruption: cgrn::data::CorruptionSpec::default_ranges(),
        seed: 7,
    };
    let splits = make_splits(&data, &builtin_fonts())?;

    let tcfg = TrainConfig { batch: 8, epochs: 2, seed: 7, ..TrainConfig::default() };
    let mut store = init_params(&net, tcfg.seed)?;
    let mut state = TrainState::new(&tcfg);
    println!("training on {} samples...", splits.train.samples.len());
    train_loop(&mut store, &mut state, &net, &tcfg, &splits.train, |step, epoch, report, _| {
        println!("{}", format_metrics(MetricsFormat::KeyValue, step, epoch, report, None));
        Ok(LoopSignal::Continue)
    })?;

    let labels: Vec<String> = (0..6).map(|c| c.to_string()).collect();
    let rep = cgrn::eval::evaluate(&mut store, &net, &splits.test_iid, "test_iid", &labels, true)?;
    println!(
        "test_iid accuracy after {} steps: {:.3} (chance {:.3}), mean L_pixel {:.4}",
        state.step,
        rep.accuracy(),
        1.0 / 6.0,
        rep.mean_l_pixel.unwrap_or(f64::NAN),
    );
    Ok(())
}
