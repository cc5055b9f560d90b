//! Render what the generator currently produces: for a handful of scene
//! images, write a PPM grid of [input | generated glyphs | canonical
//! targets]. With an untrained model the middle columns are noise; point
//! `io.checkpoint` at a trained run (via the `cgrn` binary) for real
//! output. This example trains for one short epoch first so the glyphs
//! show some structure.
//!
//!     cargo run --example generate_glyphs

use cgrn::data::{builtin_fonts, make_splits, write_ppm, Image, DataConfig};
use cgrn::graph::Graph;
use cgrn::model::{fen_forward, ggn_forward_slots, init_params, Mode, NetworkConfig};
use cgrn::train::{train_loop, BatchSource, LoopSignal, TrainConfig, TrainState};

fn main() -> cgrn::Result<()> {
    let mut net = NetworkConfig::desk();
    net.width_den = 16;
    net.num_classes = 6;
    net.num_fonts = 2;
    net.font_embed_dim = 16;
    let data = DataConfig {
        num_classes: 6,
        train_fonts: vec![0, 1],
        novel_fonts: vec![],
        target_fonts: vec![0, 3],
        corruptions_per: 6,
        test_iid: 6,
        test_novel: 0,
        corruption: cgrn::data::CorruptionSpec::default_ranges(),
        seed: 3,
    };
    let splits = make_splits(&data, &builtin_fonts())?;

    let tcfg = TrainConfig { batch: 8, epochs: 1, seed: 3, ..TrainConfig::default() };
    let mut store = init_params(&net, tcfg.seed)?;
    let mut state = TrainState::new(&tcfg);
    train_loop(&mut store, &mut state, &net, &tcfg, &splits.train, |_, _, _, _| {
        Ok(LoopSignal::Continue)
    })?;

    // columns: scene input, generated glyph per target font, canonical
    // targets
    let batch = splits.test_iid.make_batch(&[0, 1, 2, 3])?;
    let mut g = Graph::inference();
    let x = g.constant(&batch.x);
    let pyr = fen_forward(&mut g, &mut store, &net, x, Mode::EVAL)?;
    let fakes = ggn_forward_slots(&mut g, &mut store, &net, &pyr, &batch.slot_fonts, Mode::EVAL)?;

    const T: usize = 64;
    let cols = 1 + 2 * fakes.len();
    let mut grid = Image::new(cols * (T + 2) - 2, 4 * (T + 2) - 2);
    let mut put = |img: &Image, row: usize, col: usize| {
        for y in 0..T {
            for x in 0..T {
                grid.set(col * (T + 2) + x, row * (T + 2) + y, img.get(x, y));
            }
        }
    };
    let row_img = |vals: &[f64], r: usize| Image::from_planes(T, T, &vals[r * 3 * T * T..(r + 1) * 3 * T * T]);
    for r in 0..4 {
        put(&row_img(batch.x.data(), r)?, r, 0);
        for (j, &f) in fakes.iter().enumerate() {
            put(&row_img(g.value(f), r)?, r, 1 + j);
            put(&row_img(batch.targets[j].data(), r)?, r, 1 + fakes.len() + j);
        }
    }
    let path = std::env::temp_dir().join("cgrn-glyph-grid.ppm");
    write_ppm(&path, &grid)?;
    println!("wrote {} ({} columns: input, {} generated, {} targets)", path.display(), cols, fakes.len(), fakes.len());
    Ok(())
}
