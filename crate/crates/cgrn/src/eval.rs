//! Evaluation: accuracy, per-class breakdown, confusion counts, and mean
//! pixel loss of the generated glyphs, all computed in inference mode.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{ccn_forward, fen_forward, ggn_forward_slots, Mode, NetworkConfig};
use crate::optim::ParameterStore;
use crate::train::{loss_pixel, predictions, BatchSource};

const EVAL_BATCH: usize = 16;

#[derive(Clone, Debug)]
pub struct ClassStat {
    pub label: String,
    pub n: usize,
    pub correct: usize,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub split: String,
    pub n: usize,
    pub correct: usize,
    /// (true class, predicted class) per sample, in dataset order.
    pub predictions: Vec<(usize, usize)>,
    pub per_class: Vec<ClassStat>,
    /// `confusion[true][pred]` counts.
    pub confusion: Vec<Vec<usize>>,
    /// Mean pixel loss of generated glyphs vs canonical targets; absent
    /// when the generator branch is disabled.
    pub mean_l_pixel: Option<f64>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.correct as f64 / self.n as f64
        }
    }

    /// Per-class table as CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,label,n,correct,accuracy\n");
        for (c, st) in self.per_class.iter().enumerate() {
            let acc = if st.n == 0 { 0.0 } else { st.correct as f64 / st.n as f64 };
            let _ = writeln!(s, "{c},{},{},{},{:.6}", st.label, st.n, st.correct, acc);
        }
        let _ = writeln!(s, "total,,{},{},{:.6}", self.n, self.correct, self.accuracy());
        s
    }

    /// One line per sample: index, true class, predicted class, hit flag.
    pub fn predictions_csv(&self) -> String {
        let mut s = String::from("index,true,pred,correct\n");
        for (i, &(t, p)) in self.predictions.iter().enumerate() {
            let _ = writeln!(s, "{i},{t},{p},{}", (t == p) as u8);
        }
        s
    }
}

/// Evaluate a parameter set on one split. `with_pixel` additionally runs
/// the generator and reports its mean pixel loss.
pub fn evaluate(
    store: &mut ParameterStore,
    cfg: &NetworkConfig,
    ds: &Dataset,
    split: &str,
    labels: &[String],
    with_pixel: bool,
) -> Result<EvalReport> {
    if ds.num_classes != cfg.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model was built for {}",
            ds.num_classes, cfg.num_classes
        )));
    }
    if with_pixel && ds.num_fonts != cfg.num_fonts {
        return Err(Error::Config(format!(
            "dataset carries {} target fonts but the model was built for {}",
            ds.num_fonts, cfg.num_fonts
        )));
    }
    let mut report = EvalReport {
        split: split.to_string(),
        n: ds.len(),
        correct: 0,
        predictions: Vec::with_capacity(ds.len()),
        per_class: (0..cfg.num_classes)
            .map(|c| ClassStat {
                label: labels.get(c).cloned().unwrap_or_else(|| c.to_string()),
                n: 0,
                correct: 0,
            })
            .collect(),
        confusion: vec![vec![0; cfg.num_classes]; cfg.num_classes],
        mean_l_pixel: None,
    };
    let mut pixel_sum = 0.0;
    let mut pixel_batches = 0usize;
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let batch = ds.make_batch(chunk)?;
        let mut g = Graph::inference();
        let x = g.constant(&batch.x);
        let pyramid = fen_forward(&mut g, store, cfg, x, Mode::EVAL)?;
        let logits = ccn_forward(&mut g, store, cfg, &pyramid)?;
        let preds =
            predictions(g.value(logits), chunk.len(), cfg.num_classes);
        for (&t, &p) in batch.labels.iter().zip(&preds) {
            report.predictions.push((t, p));
            report.per_class[t].n += 1;
            report.confusion[t][p] += 1;
            if t == p {
                report.correct += 1;
                report.per_class[t].correct += 1;
            }
        }
        if with_pixel {
            let fakes =
                ggn_forward_slots(&mut g, store, cfg, &pyramid, &batch.slot_fonts, Mode::EVAL)?;
            let targets: Vec<_> = batch.targets.iter().map(|t| g.constant(t)).collect();
            let lp = loss_pixel(&mut g, &fakes, &targets, crate::model::PixelNorm::L1)?;
            pixel_sum += g.scalar_value(lp) * chunk.len() as f64;
            pixel_batches += chunk.len();
        }
    }
    if with_pixel && pixel_batches > 0 {
        report.mean_l_pixel = Some(pixel_sum / pixel_batches as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_splits, builtin_fonts, CorruptionSpec, DataConfig};
    use crate::model::init_params;

    fn tiny() -> (NetworkConfig, DataConfig) {
        let mut net = NetworkConfig::desk();
        net.width_num = 1;
        net.width_den = 32;
        net.num_classes = 3;
        net.num_fonts = 2;
        net.font_embed_dim = 8;
        let data = DataConfig {
            num_classes: 3,
            train_fonts: vec![0],
            novel_fonts: vec![4],
            target_fonts: vec![0, 3],
            corruptions_per: 2,
            test_iid: 6,
            test_novel: 3,
            corruption: CorruptionSpec::identity(),
            seed: 3,
        };
        (net, data)
    }

    #[test]
    fn counts_are_consistent_and_csv_well_formed() {
        let (net, data) = tiny();
        let splits = make_splits(&data, &builtin_fonts()).unwrap();
        let mut store = init_params(&net, 1).unwrap();
        let labels: Vec<String> = vec!["0".into(), "1".into(), "2".into()];
        let rep =
            evaluate(&mut store, &net, &splits.test_iid, "test_iid", &labels, true).unwrap();
        assert_eq!(rep.n, 6);
        assert_eq!(rep.predictions.len(), 6);
        let class_total: usize = rep.per_class.iter().map(|c| c.n).sum();
        assert_eq!(class_total, 6);
        let conf_total: usize = rep.confusion.iter().flatten().sum();
        assert_eq!(conf_total, 6);
        let diag: usize = (0..3).map(|c| rep.confusion[c][c]).sum();
        assert_eq!(diag, rep.correct);
        assert!(rep.mean_l_pixel.unwrap() > 0.0);
        assert_eq!(rep.to_csv().lines().count(), 1 + 3 + 1);
        assert_eq!(rep.predictions_csv().lines().count(), 1 + 6);
    }

    #[test]
    fn evaluation_is_deterministic_and_leaves_stats_untouched() {
        let (net, data) = tiny();
        let splits = make_splits(&data, &builtin_fonts()).unwrap();
        let mut store = init_params(&net, 1).unwrap();
        let before: Vec<f64> =
            store.get("θe/s1c1/bn_rm").unwrap().data().to_vec();
        let a = evaluate(&mut store, &net, &splits.test_iid, "x", &[], true).unwrap();
        let b = evaluate(&mut store, &net, &splits.test_iid, "x", &[], true).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.mean_l_pixel, b.mean_l_pixel);
        assert_eq!(store.get("θe/s1c1/bn_rm").unwrap().data(), &before[..]);
    }

    #[test]
    fn class_count_mismatch_rejected() {
        let (net, data) = tiny();
        let splits = make_splits(&data, &builtin_fonts()).unwrap();
        let mut wrong = net.clone();
        wrong.num_classes = 4;
        let mut store = init_params(&wrong, 1).unwrap();
        assert!(evaluate(&mut store, &wrong, &splits.test_iid, "x", &[], false).is_err());
    }
}
