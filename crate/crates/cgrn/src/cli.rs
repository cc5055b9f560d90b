//! Command-line front end:
//! `cgrn <train|eval|generate|verify|synth-data> [--config FILE] [--key value]...`
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric abort,
//! 4 verification failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::data::{
    builtin_fonts, export_corpus, load_directory, make_splits, write_ppm, Dataset, Image,
};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::graph::Graph;
use crate::model::{fen_forward, ggn_forward_slots, init_params, Mode};
use crate::optim::ParameterStore;
use crate::train::{
    format_metrics, train_loop, BatchSource, LoopSignal, TrainState,
};

const USAGE: &str = "usage: cgrn <train|eval|generate|verify|synth-data> [--config FILE] [--key value]...";

/// Parse arguments, dispatch, and map errors to exit codes.
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArg(_) => 2,
                Error::NumericAbort { .. } => 3,
                Error::Verify(_) => 4,
                _ => 1,
            }
        }
    }
}

fn is_flag_key(key: &str) -> bool {
    key.starts_with("ablation.") || key == "io.metrics_wallclock"
}

fn alias(key: &str) -> &str {
    match key {
        "preset" => "model.preset",
        "seed" => "train.seed",
        _ => key,
    }
}

fn parse_args(args: &[String]) -> Result<(Option<PathBuf>, Vec<(String, String)>)> {
    let mut config = None;
    let mut overrides = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let key = args[i]
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected --key, got `{}`\n{USAGE}", args[i])))?;
        if key == "config" {
            let v = args
                .get(i + 1)
                .ok_or_else(|| Error::Config("--config needs a file path".into()))?;
            config = Some(PathBuf::from(v));
            i += 2;
            continue;
        }
        let key = alias(key).to_string();
        match args.get(i + 1) {
            Some(v) if !v.starts_with("--") => {
                overrides.push((key, v.clone()));
                i += 2;
            }
            _ if is_flag_key(&key) => {
                overrides.push((key, "true".into()));
                i += 1;
            }
            _ => return Err(Error::Config(format!("--{key} needs a value"))),
        }
    }
    Ok((config, overrides))
}

fn dispatch(args: &[String]) -> Result<()> {
    let cmd = args.first().ok_or_else(|| Error::Config(USAGE.into()))?;
    let (config_path, overrides) = parse_args(&args[1..])?;
    let mut cfg = RunConfig::from_sources(config_path.as_deref(), &overrides)?;
    cfg.resolve()?;
    match cmd.as_str() {
        "train" => cmd_train(&cfg),
        "eval" => cmd_eval(&cfg),
        "generate" => cmd_generate(&cfg),
        "verify" => cmd_verify(&cfg),
        "synth-data" => cmd_synth_data(&cfg),
        _ => Err(Error::Config(format!("unknown command `{cmd}`\n{USAGE}"))),
    }
}

// ---------------------------------------------------------------------------
// corpus plumbing

struct LoadedCorpus {
    train: Dataset,
    evals: Vec<(String, Dataset)>,
    labels: Vec<String>,
}

fn obtain_corpus(cfg: &RunConfig, need_train: bool) -> Result<LoadedCorpus> {
    if let Some(dir) = &cfg.io.data_dir {
        let corpus = load_directory(Path::new(dir))?;
        if let Some(ds) = corpus.splits.values().next() {
            if ds.num_classes != cfg.model.num_classes {
                return Err(Error::Config(format!(
                    "corpus in {dir} has {} classes, configuration says {}",
                    ds.num_classes, cfg.model.num_classes
                )));
            }
        }
        let mut train = None;
        let mut evals = Vec::new();
        for (name, ds) in corpus.splits {
            if name == "train" {
                train = Some(ds);
            } else {
                evals.push((name, ds));
            }
        }
        let train = match train {
            Some(t) => t,
            None if need_train => {
                return Err(Error::Data(format!("corpus in {dir} has no train split")))
            }
            None => Dataset {
                samples: Vec::new(),
                num_classes: cfg.model.num_classes,
                num_fonts: cfg.model.num_fonts,
            },
        };
        Ok(LoadedCorpus { train, evals, labels: corpus.labels })
    } else {
        let splits = make_splits(&cfg.data, &builtin_fonts())?;
        let labels = (0..cfg.data.num_classes)
            .map(|c| {
                crate::data::glyphs::class_label(c)
                    .map(|l| l.to_string())
                    .ok_or_else(|| Error::Data(format!("class {c} has no label")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LoadedCorpus {
            train: splits.train,
            evals: vec![
                ("test_iid".into(), splits.test_iid),
                ("test_novel_font".into(), splits.test_novel_font),
            ],
            labels,
        })
    }
}

fn load_or_init(cfg: &RunConfig) -> Result<(ParameterStore, TrainState)> {
    match &cfg.io.checkpoint {
        Some(path) => load_checkpoint(Path::new(path), &cfg.train),
        None => Ok((init_params(&cfg.model, cfg.train.seed)?, TrainState::new(&cfg.train))),
    }
}

fn require_checkpoint(cfg: &RunConfig) -> Result<()> {
    if cfg.io.checkpoint.is_none() {
        return Err(Error::Config("this command needs io.checkpoint".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// glyph grids

const TILE: usize = 64;
const GUTTER: usize = 2;

fn blit(dst: &mut Image, img: &Image, x0: usize, y0: usize) {
    for y in 0..img.h {
        for x in 0..img.w {
            dst.set(x0 + x, y0 + y, img.get(x, y));
        }
    }
}

fn tile_grid(rows: &[Vec<Image>]) -> Result<Image> {
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    if cols == 0 {
        return Err(Error::InvalidArg("empty glyph grid".into()));
    }
    let w = cols * TILE + (cols - 1) * GUTTER;
    let h = rows.len() * TILE + (rows.len() - 1) * GUTTER;
    let mut out = Image::new(w, h);
    for p in out.data.iter_mut() {
        *p = 128; // mid-gray gutters
    }
    for (ri, row) in rows.iter().enumerate() {
        for (ci, img) in row.iter().enumerate() {
            blit(&mut out, img, ci * (TILE + GUTTER), ri * (TILE + GUTTER));
        }
    }
    Ok(out)
}

fn tensor_row_image(values: &[f64], row: usize) -> Result<Image> {
    let plane = 3 * TILE * TILE;
    Image::from_planes(TILE, TILE, &values[row * plane..(row + 1) * plane])
}

/// Rows of [input, generated t̂_1..m, optionally targets t_1..m] for the
/// first `n` samples of a split, rendered in inference mode.
fn sample_grid(
    store: &mut ParameterStore,
    cfg: &RunConfig,
    ds: &Dataset,
    n: usize,
    include_targets: bool,
) -> Result<Image> {
    let n = n.min(ds.len());
    if n == 0 {
        return Err(Error::InvalidArg("no samples to draw".into()));
    }
    let indices: Vec<usize> = (0..n).collect();
    let batch = ds.make_batch(&indices)?;
    let mut g = Graph::inference();
    let x = g.constant(&batch.x);
    let pyramid = fen_forward(&mut g, store, &cfg.model, x, Mode::EVAL)?;
    let fakes = if cfg.train.use_ggn() {
        ggn_forward_slots(&mut g, store, &cfg.model, &pyramid, &batch.slot_fonts, Mode::EVAL)?
    } else {
        Vec::new()
    };
    let mut rows = Vec::with_capacity(n);
    for r in 0..n {
        let mut row = vec![tensor_row_image(batch.x.data(), r)?];
        for &f in &fakes {
            row.push(tensor_row_image(g.value(f), r)?);
        }
        if include_targets {
            for t in &batch.targets {
                row.push(tensor_row_image(t.data(), r)?);
            }
        }
        rows.push(row);
    }
    tile_grid(&rows)
}

// ---------------------------------------------------------------------------
// commands

fn write_resolved_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.txt"), cfg.to_text())?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let out = PathBuf::from(&cfg.io.out_dir);
    write_resolved_config(cfg, &out)?;
    let corpus = obtain_corpus(cfg, true)?;
    let (mut store, mut state) = load_or_init(cfg)?;
    let started = Instant::now();
    let mut metrics = String::new();

    let mut one_epoch = cfg.train.clone();
    one_epoch.epochs = 1;
    while state.epoch < cfg.train.epochs as u64 {
        let result = train_loop(
            &mut store,
            &mut state,
            &cfg.model,
            &one_epoch,
            &corpus.train,
            |step, epoch, report, _| {
                let wall = cfg.io.metrics_wallclock.then(|| started.elapsed().as_millis());
                let line = format_metrics(cfg.io.metrics_format, step, epoch, report, wall);
                println!("{line}");
                metrics.push_str(&line);
                metrics.push('\n');
                Ok(LoopSignal::Continue)
            },
        );
        // a numeric abort still leaves the metrics so far on disk
        std::fs::write(out.join("metrics.txt"), &metrics)?;
        result?;
        let epoch = state.epoch;
        if epoch % cfg.io.checkpoint_every as u64 == 0 || epoch == cfg.train.epochs as u64 {
            save_checkpoint(&out.join(format!("ckpt_epoch{epoch}.cgrn")), &store, &state)?;
            let grid = sample_grid(&mut store, cfg, &corpus.train, 4, true)?;
            write_ppm(&out.join(format!("samples_epoch{epoch}.ppm")), &grid)?;
        }
    }
    save_checkpoint(&out.join("ckpt_final.cgrn"), &store, &state)?;
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    require_checkpoint(cfg)?;
    let out = PathBuf::from(&cfg.io.out_dir);
    write_resolved_config(cfg, &out)?;
    let corpus = obtain_corpus(cfg, false)?;
    let (mut store, _) = load_or_init(cfg)?;
    let mut evals = corpus.evals;
    if corpus.train.len() > 0 {
        evals.insert(0, ("train".into(), corpus.train));
    }
    for (name, ds) in &evals {
        if ds.len() == 0 {
            continue;
        }
        let with_pixel = cfg.train.use_ggn() && ds.num_fonts == cfg.model.num_fonts;
        let rep = evaluate(&mut store, &cfg.model, ds, name, &corpus.labels, with_pixel)?;
        std::fs::write(out.join(format!("eval_{name}.csv")), rep.to_csv())?;
        std::fs::write(out.join(format!("predictions_{name}.csv")), rep.predictions_csv())?;
        match rep.mean_l_pixel {
            Some(lp) => println!(
                "split={name} n={} accuracy={:.6} mean_l_pixel={lp:.9}",
                rep.n,
                rep.accuracy()
            ),
            None => println!("split={name} n={} accuracy={:.6}", rep.n, rep.accuracy()),
        }
    }
    Ok(())
}

fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    require_checkpoint(cfg)?;
    if !cfg.train.use_ggn() {
        return Err(Error::Config("generate needs the generator branch enabled".into()));
    }
    let out = PathBuf::from(&cfg.io.out_dir);
    write_resolved_config(cfg, &out)?;
    let corpus = obtain_corpus(cfg, false)?;
    let (mut store, _) = load_or_init(cfg)?;
    let ds = corpus
        .evals
        .iter()
        .map(|(_, d)| d)
        .find(|d| d.len() > 0)
        .or(Some(&corpus.train))
        .filter(|d| d.len() > 0)
        .ok_or_else(|| Error::Data("no samples available to generate from".into()))?;
    for i in 0..8.min(ds.len()) {
        let one = Dataset {
            samples: vec![ds.samples[i].clone()],
            num_classes: ds.num_classes,
            num_fonts: ds.num_fonts,
        };
        let grid = sample_grid(&mut store, cfg, &one, 1, false)?;
        write_ppm(&out.join(format!("grid_{i:02}.ppm")), &grid)?;
    }
    Ok(())
}

fn cmd_verify(cfg: &RunConfig) -> Result<()> {
    let summary = crate::verify::run_all(cfg.train.seed);
    print!("{}", summary.to_text());
    if summary.all_passed() {
        Ok(())
    } else {
        Err(Error::Verify("verification suite reported failures".into()))
    }
}

fn cmd_synth_data(cfg: &RunConfig) -> Result<()> {
    let out = PathBuf::from(&cfg.io.out_dir);
    std::fs::create_dir_all(&out)?;
    let splits = make_splits(&cfg.data, &builtin_fonts())?;
    export_corpus(&splits, &out)?;
    println!(
        "wrote {} train / {} test_iid / {} test_novel_font samples to {}",
        splits.train.len(),
        splits.test_iid.len(),
        splits.test_novel_font.len(),
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn flag_parsing_and_aliases() {
        let (cfgp, ov) =
            parse_args(&s(&["--preset", "desk", "--ablation.no_ggn", "--train.lr", "0.01"]))
                .unwrap();
        assert!(cfgp.is_none());
        assert_eq!(ov, vec![
            ("model.preset".to_string(), "desk".to_string()),
            ("ablation.no_ggn".to_string(), "true".to_string()),
            ("train.lr".to_string(), "0.01".to_string()),
        ]);
        assert!(parse_args(&s(&["stray"])).is_err());
        assert!(parse_args(&s(&["--train.lr"])).is_err());
    }

    #[test]
    fn bad_command_and_bad_key_map_to_config_errors() {
        assert_eq!(run(&s(&["frobnicate"])), 2);
        assert_eq!(run(&s(&["train", "--train.lrr", "1"])), 2);
        assert_eq!(run(&[]), 2);
    }

    #[test]
    fn grid_layout_has_gutters() {
        let a = Image::new(TILE, TILE);
        let mut b = Image::new(TILE, TILE);
        for p in b.data.iter_mut() {
            *p = 255;
        }
        let grid = tile_grid(&[vec![a, b.clone()], vec![b.clone(), b]]).unwrap();
        assert_eq!(grid.w, 2 * TILE + GUTTER);
        assert_eq!(grid.h, 2 * TILE + GUTTER);
        assert_eq!(grid.get(TILE, 0), [128, 128, 128]);
        assert_eq!(grid.get(TILE + GUTTER, 0), [255, 255, 255]);
    }
}
