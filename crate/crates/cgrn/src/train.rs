//! Losses and the alternating adversarial training schedule.
//!
//! Each mini-batch takes two phases. Phase 1 updates only the
//! discriminator on real (scene, glyph) pairs against generated pairs
//! whose values are detached from the generator. Phase 2 rebuilds the
//! forward pass, forms the composite objective
//! `λ·L_CR + λ·L_pixel + adv` with the discriminator frozen, runs one
//! backward, and commits the encoder, classifier, generator and
//! font-embedding updates in a single optimizer step — so every slice's
//! gradient is evaluated at the pre-update values of all the others.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{
    ccn_forward, fen_forward, gdn_forward, ggn_forward_slots, Mode, NetworkConfig,
    GanMode, PixelNorm,
};
use crate::optim::{
    AdamState, ParameterStore, SLICE_CLASSIFIER, SLICE_DISCRIMINATOR, SLICE_ENCODER,
    SLICE_FONT_EMBED, SLICE_GENERATOR,
};
use crate::rng::{mix, Rng};
use crate::tensor::Tensor;

/// One training mini-batch, already rendered to tensors.
///
/// `targets[j]` holds the canonical glyphs for output slot `j`;
/// `slot_fonts[j][b]` is the 1-based font drawn in that image, so the
/// per-sample font permutation stays jointly applied to embeddings and
/// targets.
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub targets: Vec<Tensor>,
    pub slot_fonts: Vec<Vec<usize>>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossReport {
    pub l_pixel: Option<f64>,
    pub l_cr: f64,
    pub l_d: Option<f64>,
    pub composite: f64,
    pub batch_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub no_ggn: bool,
    pub no_gdn: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 100.0,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            batch: 16,
            epochs: 20,
            seed: 0,
            no_ggn: false,
            no_gdn: false,
        }
    }
}

impl TrainConfig {
    /// The generator branch runs at all.
    pub fn use_ggn(&self) -> bool {
        !self.no_ggn
    }

    /// The adversarial branch runs (it needs generated glyphs to exist).
    pub fn use_gdn(&self) -> bool {
        !self.no_gdn && self.use_ggn()
    }
}

pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    pub adam_joint: AdamState,
    pub adam_d: AdamState,
    pub rng_shuffle: Rng,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        TrainState {
            step: 0,
            epoch: 0,
            adam_joint: AdamState::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps),
            adam_d: AdamState::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps),
            rng_shuffle: Rng::new(mix(cfg.seed, 0x73687566666c65)), // "shuffle"
        }
    }
}

// ---------------------------------------------------------------------------
// losses

/// Mean per-pixel reconstruction distance averaged over the m font slots.
pub fn loss_pixel(
    g: &mut Graph,
    generated: &[NodeId],
    targets: &[NodeId],
    norm: PixelNorm,
) -> Result<NodeId> {
    if generated.len() != targets.len() || generated.is_empty() {
        return Err(Error::InvalidArg(format!(
            "pixel loss needs matching non-empty lists, got {} vs {}",
            generated.len(),
            targets.len()
        )));
    }
    let mut acc: Option<NodeId> = None;
    for (&a, &b) in generated.iter().zip(targets) {
        let term = match norm {
            PixelNorm::L1 => g.l1_loss(a, b)?,
            PixelNorm::L2 => g.l2_loss(a, b)?,
        };
        acc = Some(match acc {
            Some(s) => g.add(s, term)?,
            None => term,
        });
    }
    Ok(g.scale(acc.unwrap(), 1.0 / generated.len() as f64))
}

/// Classification loss: softmax cross-entropy over negated logits.
pub fn loss_cr(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    g.softmax_xent(logits, labels)
}

/// Discriminator loss: real pairs scored toward 1, fake pairs toward 0.
pub fn loss_d(g: &mut Graph, real_logits: NodeId, fake_logits: NodeId) -> Result<NodeId> {
    let real = g.bce_logits(real_logits, 1.0);
    let fake = g.bce_logits(fake_logits, 0.0);
    g.add(real, fake)
}

/// Class prediction per the negated-logit convention: the most probable
/// class carries the lowest raw logit.
pub fn predictions(logits: &[f64], bsz: usize, l: usize) -> Vec<usize> {
    (0..bsz)
        .map(|b| {
            let row = &logits[b * l..(b + 1) * l];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v < row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn finite(v: f64, term: &'static str, step: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericAbort { step, term: term.to_string() })
    }
}

// ---------------------------------------------------------------------------
// the step

/// Concatenate the m per-slot target tensors of a batch along the batch
/// axis, matching the tiled layout of `ggn_forward_slots`.
fn stacked_targets(g: &mut Graph, batch: &Batch) -> Result<Vec<NodeId>> {
    batch.targets.iter().map(|t| Ok(g.constant(t))).collect()
}

pub fn train_step(
    store: &mut ParameterStore,
    state: &mut TrainState,
    mcfg: &NetworkConfig,
    tcfg: &TrainConfig,
    batch: &Batch,
) -> Result<LossReport> {
    train_step_observed(store, state, mcfg, tcfg, batch, |_| {})
}

/// `train_step` with a probe invoked between the two phases (used by the
/// verification suite to pin down which phase may touch which slice).
pub fn train_step_observed(
    store: &mut ParameterStore,
    state: &mut TrainState,
    mcfg: &NetworkConfig,
    tcfg: &TrainConfig,
    batch: &Batch,
    mut after_phase1: impl FnMut(&ParameterStore),
) -> Result<LossReport> {
    let bsz = batch.size();
    if bsz == 0 {
        return Err(Error::InvalidArg("empty batch".into()));
    }
    if tcfg.use_ggn() && batch.targets.len() != batch.slot_fonts.len() {
        return Err(Error::InvalidArg("target/font slot count mismatch".into()));
    }
    let step = state.step + 1;

    // ---- phase 1: discriminator update on detached generator output ----
    if tcfg.use_gdn() {
        // values-only forward for the fakes; batch statistics, but no
        // running-stat writes (those belong to the phase-2 pass)
        let fakes: Vec<Tensor> = {
            let mut gi = Graph::inference();
            let x = gi.constant(&batch.x);
            let pyr = fen_forward(&mut gi, store, mcfg, x, Mode::TRAIN_FROZEN)?;
            let nodes =
                ggn_forward_slots(&mut gi, store, mcfg, &pyr, &batch.slot_fonts, Mode::TRAIN_FROZEN)?;
            nodes.iter().map(|&n| gi.to_tensor(n)).collect()
        };

        let mut g = Graph::new();
        let x = g.constant(&batch.x);
        let x_all = g.repeat_batch(x, batch.targets.len());
        let reals = stacked_targets(&mut g, batch)?;
        let real_all = g.concat(&reals, 0)?;
        let fake_nodes: Vec<NodeId> = fakes.iter().map(|t| g.constant(t)).collect();
        let fake_all = g.concat(&fake_nodes, 0)?;
        let real_logits = gdn_forward(&mut g, store, mcfg, x_all, real_all, Mode::TRAIN)?;
        let fake_logits = gdn_forward(&mut g, store, mcfg, x_all, fake_all, Mode::TRAIN)?;
        let ld = loss_d(&mut g, real_logits, fake_logits)?;
        finite(g.scalar_value(ld), "L_D (discriminator phase)", step)?;
        g.backward(ld)?;
        g.harvest(store)?;
        state.adam_d.step(store, &[SLICE_DISCRIMINATOR])?;
    }
    after_phase1(store);

    // ---- phase 2: joint encoder/classifier/generator update ----
    let mut g = Graph::new();
    g.freeze_prefix(SLICE_DISCRIMINATOR);
    let x = g.constant(&batch.x);
    let pyr = fen_forward(&mut g, store, mcfg, x, Mode::TRAIN)?;
    let logits = ccn_forward(&mut g, store, mcfg, &pyr)?;
    let l_cr = loss_cr(&mut g, logits, &batch.labels)?;
    let l_cr_v = finite(g.scalar_value(l_cr), "L_CR", step)?;

    let mut objective = g.scale(l_cr, tcfg.lambda);
    let mut l_pixel_v = None;
    let mut l_d_v = None;

    if tcfg.use_ggn() {
        let gen = ggn_forward_slots(&mut g, store, mcfg, &pyr, &batch.slot_fonts, Mode::TRAIN)?;
        let tgt = stacked_targets(&mut g, batch)?;
        let l_pix = loss_pixel(&mut g, &gen, &tgt, mcfg.pixel_norm)?;
        l_pixel_v = Some(finite(g.scalar_value(l_pix), "L_pixel", step)?);
        let weighted = g.scale(l_pix, tcfg.lambda);
        objective = g.add(objective, weighted)?;

        if tcfg.use_gdn() {
            let m = gen.len();
            let x_all = g.repeat_batch(x, m);
            let gen_all = g.concat(&gen, 0)?;
            let real_all = g.concat(&tgt, 0)?;
            // discriminator weights are frozen in this graph; batch
            // statistics without running-stat writes
            let fake_logits = gdn_forward(&mut g, store, mcfg, x_all, gen_all, Mode::TRAIN_FROZEN)?;
            let real_logits = gdn_forward(&mut g, store, mcfg, x_all, real_all, Mode::TRAIN_FROZEN)?;
            let ld = loss_d(&mut g, real_logits, fake_logits)?;
            l_d_v = Some(finite(g.scalar_value(ld), "L_D", step)?);
            let adv = match mcfg.gan_mode {
                // Eq. 15 literally: the generator ascends L_D
                GanMode::Minimax => g.scale(ld, -1.0),
                // non-saturating surrogate: descend the fake-as-real loss
                GanMode::NonSaturating => g.bce_logits(fake_logits, 1.0),
            };
            objective = g.add(objective, adv)?;
        }
    }

    finite(g.scalar_value(objective), "composite", step)?;
    g.backward(objective)?;
    g.harvest(store)?;

    let mut slices = vec![SLICE_ENCODER, SLICE_CLASSIFIER];
    if tcfg.use_ggn() {
        slices.push(SLICE_GENERATOR);
        slices.push(SLICE_FONT_EMBED);
    }
    state.adam_joint.step(store, &slices)?;
    state.step = step;

    let preds = predictions(g.value(logits), bsz, mcfg.num_classes);
    let correct = preds.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
    let composite = tcfg.lambda * l_cr_v + tcfg.lambda * l_pixel_v.unwrap_or(0.0)
        - l_d_v.unwrap_or(0.0);
    Ok(LossReport {
        l_pixel: l_pixel_v,
        l_cr: l_cr_v,
        l_d: l_d_v,
        composite,
        batch_acc: correct as f64 / bsz as f64,
    })
}

// ---------------------------------------------------------------------------
// the loop

/// Deterministic source of mini-batches; index order is decided by the
/// loop's shuffle stream.
pub trait BatchSource {
    fn len(&self) -> usize;
    fn make_batch(&self, indices: &[usize]) -> Result<Batch>;
}

pub enum LoopSignal {
    Continue,
    Stop,
}

/// Run `tcfg.epochs` epochs. The observer sees every step's report and
/// can stop early; partial trailing batches are dropped so batch
/// statistics stay well-defined.
pub fn train_loop(
    store: &mut ParameterStore,
    state: &mut TrainState,
    mcfg: &NetworkConfig,
    tcfg: &TrainConfig,
    source: &dyn BatchSource,
    mut observer: impl FnMut(u64, u64, &LossReport, &mut ParameterStore) -> Result<LoopSignal>,
) -> Result<()> {
    let n = source.len();
    if n < tcfg.batch {
        return Err(Error::InvalidArg(format!(
            "dataset of {n} samples cannot fill a batch of {}",
            tcfg.batch
        )));
    }
    for _ in 0..tcfg.epochs {
        state.epoch += 1;
        let order = state.rng_shuffle.permutation(n);
        for chunk in order.chunks_exact(tcfg.batch) {
            let batch = source.make_batch(chunk)?;
            let report = train_step(store, state, mcfg, tcfg, &batch)?;
            match observer(state.step, state.epoch, &report, store)? {
                LoopSignal::Continue => {}
                LoopSignal::Stop => return Ok(()),
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// metrics formatting

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MetricsFormat {
    KeyValue,
    JsonLines,
}

/// One metrics line with a stable field order. Absent losses (ablations)
/// are omitted; `wallclock_ms` is optional so byte-compare workflows can
/// disable the only nondeterministic field.
pub fn format_metrics(
    fmt: MetricsFormat,
    step: u64,
    epoch: u64,
    report: &LossReport,
    wallclock_ms: Option<u128>,
) -> String {
    let mut fields: Vec<(&str, String)> = vec![
        ("step", step.to_string()),
        ("epoch", epoch.to_string()),
    ];
    if let Some(v) = report.l_pixel {
        fields.push(("L_pixel", format!("{v:.9}")));
    }
    fields.push(("L_CR", format!("{:.9}", report.l_cr)));
    if let Some(v) = report.l_d {
        fields.push(("L_D", format!("{v:.9}")));
    }
    fields.push(("composite", format!("{:.9}", report.composite)));
    fields.push(("batch_acc", format!("{:.6}", report.batch_acc)));
    if let Some(ms) = wallclock_ms {
        fields.push(("wallclock_ms", ms.to_string()));
    }
    match fmt {
        MetricsFormat::KeyValue => fields
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" "),
        MetricsFormat::JsonLines => {
            let body = fields
                .iter()
                .map(|(k, v)| format!("\"{k}\":{v}"))
                .collect::<Vec<_>>()
                .join(",");
            format!("{{{body}}}")
        }
    }
}
