//! The four CGRN subnetworks.
//!
//! FEN — a VGG16-style feature extractor producing a five-level pyramid.
//! CCN — pools every pyramid level to 1x1, concatenates and classifies.
//! GGN — decodes the bottleneck plus a font embedding back to a 64x64
//!       glyph image through six stride-2 deconvolutions with skip
//!       connections from the matching-resolution pyramid levels.
//! GDN — a conditional discriminator over (scene, glyph) channel pairs.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::optim::{ParameterStore, SLICE_FONT_EMBED};
use crate::rng::{mix, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GanMode {
    Minimax,
    NonSaturating,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FinalActivation {
    Sigmoid,
    Relu,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PixelNorm {
    L1,
    L2,
}

/// Encoder stages: (number of 3x3 convs, output channels), each followed
/// by a pooling layer. Pool kernels are 2,2,2,2 then a final 4.
const FEN_STAGES: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];
const FEN_POOLS: [usize; 5] = [2, 2, 2, 2, 4];
/// Generator deconv output channels; the last is RGB and never
/// width-scaled.
const GGN_CHANNELS: [usize; 6] = [512, 512, 256, 128, 64, 3];
/// Discriminator convs: (output channels, stride).
const GDN_CONVS: [(usize, usize); 4] = [(64, 2), (128, 2), (256, 2), (512, 1)];

pub const IMAGE_SIZE: usize = 64;

#[derive(Clone, Debug)]
pub struct NetworkConfig {
    /// Channel multiplier applied to every width in the layer tables,
    /// as an exact rational.
    pub width_num: usize,
    pub width_den: usize,
    pub num_classes: usize,
    pub num_fonts: usize,
    pub font_embed_dim: usize,
    pub image_size: usize,
    pub gan_mode: GanMode,
    pub final_activation: FinalActivation,
    pub ccn_pool: PoolKind,
    pub pixel_norm: PixelNorm,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl NetworkConfig {
    /// Full-width configuration.
    pub fn paper() -> Self {
        NetworkConfig {
            width_num: 1,
            width_den: 1,
            num_classes: 36,
            num_fonts: 4,
            font_embed_dim: 64,
            image_size: IMAGE_SIZE,
            gan_mode: GanMode::Minimax,
            final_activation: FinalActivation::Sigmoid,
            ccn_pool: PoolKind::Avg,
            pixel_norm: PixelNorm::L1,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }

    /// Eighth-width configuration sized for a single CPU core.
    pub fn desk() -> Self {
        NetworkConfig { width_num: 1, width_den: 8, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_num == 0 || self.width_den == 0 || self.width_num > self.width_den {
            return Err(Error::Config(format!(
                "width multiplier {}/{} must lie in (0, 1]",
                self.width_num, self.width_den
            )));
        }
        // every table width is a multiple of 64, so 64 divisibility is
        // necessary and sufficient for integer channel counts
        if (64 * self.width_num) % self.width_den != 0 {
            return Err(Error::Config(format!(
                "width multiplier {}/{} does not divide the channel table evenly",
                self.width_num, self.width_den
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if self.num_fonts == 0 {
            return Err(Error::Config("num_fonts must be positive".into()));
        }
        if self.font_embed_dim == 0 {
            return Err(Error::Config("font_embed_dim must be positive".into()));
        }
        if self.image_size != IMAGE_SIZE {
            return Err(Error::Config(format!("image_size must be {IMAGE_SIZE}")));
        }
        Ok(())
    }

    /// A table width scaled by the multiplier.
    pub fn ch(&self, base: usize) -> usize {
        base * self.width_num / self.width_den
    }

    /// Channels of the five pyramid levels.
    pub fn pyramid_channels(&self) -> [usize; 5] {
        [self.ch(64), self.ch(128), self.ch(256), self.ch(512), self.ch(512)]
    }

    /// Classifier FC input width (1472 at full width).
    pub fn ccn_fc_in(&self) -> usize {
        self.pyramid_channels().iter().sum()
    }

    /// Discriminator FC input width (32768 at full width).
    pub fn gdn_fc_in(&self) -> usize {
        8 * 8 * self.ch(512)
    }

    fn ggn_has_final_bn(&self) -> bool {
        self.final_activation == FinalActivation::Relu
    }
}

/// Forward-pass regime for batch normalization.
#[derive(Clone, Copy, Debug)]
pub struct Mode {
    pub train: bool,
    pub update_stats: bool,
}

impl Mode {
    /// Batch statistics, running stats updated.
    pub const TRAIN: Mode = Mode { train: true, update_stats: true };
    /// Batch statistics without touching running stats.
    pub const TRAIN_FROZEN: Mode = Mode { train: true, update_stats: false };
    /// Running statistics only.
    pub const EVAL: Mode = Mode { train: false, update_stats: false };
}

/// The five pooled encoder taps at spatial sizes 32, 16, 8, 4, 1.
pub struct FeaturePyramid {
    pub taps: [NodeId; 5],
}

// ---------------------------------------------------------------------------
// initialization

fn insert_conv(
    store: &mut ParameterStore,
    prefix: &str,
    cout: usize,
    cin: usize,
    k: usize,
    bn: bool,
    rng: &mut Rng,
) -> Result<()> {
    let n = cout * cin * k * k;
    let w: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 0.02)).collect();
    store.insert(&format!("{prefix}/w"), Tensor::new(vec![cout, cin, k, k], w)?)?;
    store.insert(&format!("{prefix}/b"), Tensor::zeros(vec![cout]))?;
    if bn {
        insert_bn(store, prefix, cout)?;
    }
    Ok(())
}

fn insert_deconv(
    store: &mut ParameterStore,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: usize,
    bn: bool,
    rng: &mut Rng,
) -> Result<()> {
    let n = cin * cout * k * k;
    let w: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 0.02)).collect();
    store.insert(&format!("{prefix}/w"), Tensor::new(vec![cin, cout, k, k], w)?)?;
    store.insert(&format!("{prefix}/b"), Tensor::zeros(vec![cout]))?;
    if bn {
        insert_bn(store, prefix, cout)?;
    }
    Ok(())
}

fn insert_bn(store: &mut ParameterStore, prefix: &str, c: usize) -> Result<()> {
    store.insert(&format!("{prefix}/bn_g"), Tensor::full(vec![c], 1.0))?;
    store.insert(&format!("{prefix}/bn_b"), Tensor::zeros(vec![c]))?;
    store.insert_buffer(&format!("{prefix}/bn_rm"), Tensor::zeros(vec![c]))?;
    store.insert_buffer(&format!("{prefix}/bn_rv"), Tensor::full(vec![c], 1.0))?;
    Ok(())
}

fn insert_linear(
    store: &mut ParameterStore,
    prefix: &str,
    n_in: usize,
    n_out: usize,
    rng: &mut Rng,
) -> Result<()> {
    let w: Vec<f64> = (0..n_in * n_out).map(|_| rng.normal(0.0, 0.02)).collect();
    store.insert(&format!("{prefix}/w"), Tensor::new(vec![n_in, n_out], w)?)?;
    store.insert(&format!("{prefix}/b"), Tensor::zeros(vec![n_out]))?;
    Ok(())
}

/// Channels entering each generator deconv (after the skip concat).
fn ggn_input_channels(cfg: &NetworkConfig) -> [usize; 6] {
    let p = cfg.pyramid_channels();
    let g: Vec<usize> = GGN_CHANNELS
        .iter()
        .enumerate()
        .map(|(i, &c)| if i == 5 { c } else { cfg.ch(c) })
        .collect();
    [
        p[4] + cfg.font_embed_dim, // bottleneck + font embedding
        g[0],
        g[1] + p[3], // skip from E_pool4 (4x4)
        g[2] + p[2], // skip from E_pool3 (8x8)
        g[3] + p[1], // skip from E_pool2 (16x16)
        g[4] + p[0], // skip from E_pool1 (32x32)
    ]
}

/// Fresh parameters: weights ~ N(0, 0.02^2), biases 0, BN scale 1 shift 0.
pub fn init_params(cfg: &NetworkConfig, seed: u64) -> Result<ParameterStore> {
    cfg.validate()?;
    let mut rng = Rng::new(mix(seed, 0x706172616d73)); // "params"
    let mut store = ParameterStore::new();

    // FEN
    let mut cin = 3;
    for (si, &(n_convs, base)) in FEN_STAGES.iter().enumerate() {
        let cout = cfg.ch(base);
        for ci in 0..n_convs {
            insert_conv(&mut store, &format!("θe/s{}c{}", si + 1, ci + 1), cout, cin, 3, true, &mut rng)?;
            cin = cout;
        }
    }

    // CCN
    insert_linear(&mut store, "θc/fc", cfg.ccn_fc_in(), cfg.num_classes, &mut rng)?;

    // GGN + font embeddings
    let gin = ggn_input_channels(cfg);
    for (i, &base) in GGN_CHANNELS.iter().enumerate() {
        let cout = if i == 5 { base } else { cfg.ch(base) };
        let bn = i < 5 || cfg.ggn_has_final_bn();
        insert_deconv(&mut store, &format!("θg/d{}", i + 1), gin[i], cout, 5, bn, &mut rng)?;
    }
    let emb: Vec<f64> = (0..cfg.num_fonts * cfg.font_embed_dim)
        .map(|_| rng.normal(0.0, 0.02))
        .collect();
    store.insert(
        &format!("{SLICE_FONT_EMBED}table"),
        Tensor::new(vec![cfg.num_fonts, cfg.font_embed_dim], emb)?,
    )?;

    // GDN
    let mut cin = 6;
    for (i, &(base, _)) in GDN_CONVS.iter().enumerate() {
        let cout = cfg.ch(base);
        insert_conv(&mut store, &format!("θd/c{}", i + 1), cout, cin, 5, true, &mut rng)?;
        cin = cout;
    }
    insert_linear(&mut store, "θd/fc", cfg.gdn_fc_in(), 1, &mut rng)?;

    Ok(store)
}

// ---------------------------------------------------------------------------
// forward passes

/// Batch-norm layer reading scale/shift parameters and running statistics
/// from the store; running stats are written back when the mode says so.
#[allow(clippy::too_many_arguments)]
fn bn_layer(
    g: &mut Graph,
    store: &mut ParameterStore,
    cfg: &NetworkConfig,
    prefix: &str,
    x: NodeId,
    mode: Mode,
    groups: usize,
) -> Result<NodeId> {
    let gamma = g.param(store, &format!("{prefix}/bn_g"))?;
    let beta = g.param(store, &format!("{prefix}/bn_b"))?;
    let rm_name = format!("{prefix}/bn_rm");
    let rv_name = format!("{prefix}/bn_rv");
    let mut rm = store.get(&rm_name)?.data().to_vec();
    let mut rv = store.get(&rv_name)?.data().to_vec();
    let y = g.batchnorm(
        x,
        gamma,
        beta,
        &mut rm,
        &mut rv,
        cfg.bn_momentum,
        cfg.bn_eps,
        mode.train,
        mode.update_stats,
        groups,
    )?;
    if mode.train && mode.update_stats {
        store.get_mut(&rm_name)?.data_mut().copy_from_slice(&rm);
        store.get_mut(&rv_name)?.data_mut().copy_from_slice(&rv);
    }
    Ok(y)
}

#[allow(clippy::too_many_arguments)]
fn conv_bn_relu(
    g: &mut Graph,
    store: &mut ParameterStore,
    cfg: &NetworkConfig,
    prefix: &str,
    x: NodeId,
    stride: usize,
    pad: usize,
    mode: Mode,
    groups: usize,
) -> Result<NodeId> {
    let w = g.param(store, &format!("{prefix}/w"))?;
    let b = g.param(store, &format!("{prefix}/b"))?;
    let y = g.conv2d(x, w, b, stride, pad)?;
    let y = bn_layer(g, store, cfg, prefix, y, mode, groups)?;
    Ok(g.relu(y))
}

/// Encoder. Input must be `[B, 3, 64, 64]` in `[0, 1]`.
pub fn fen_forward(
    g: &mut Graph,
    store: &mut ParameterStore,
    cfg: &NetworkConfig,
    x: NodeId,
    mode: Mode,
) -> Result<FeaturePyramid> {
    let s = g.shape(x);
    if s.len() != 4 || s[1] != 3 || s[2] != cfg.image_size || s[3] != cfg.image_size {
        return Err(Error::ShapeMismatch(format!(
            "encoder input must be [B,3,{0},{0}], got {s:?}",
            cfg.image_size
        )));
    }
    let mut taps = [0; 5];
    let mut h = x;
    for (si, &(n_convs, _)) in FEN_STAGES.iter().enumerate() {
        for ci in 0..n_convs {
            h = conv_bn_relu(g, store, cfg, &format!("θe/s{}c{}", si + 1, ci + 1), h, 1, 1, mode, 1)?;
        }
        let k = FEN_POOLS[si];
        h = g.maxpool2d(h, k, k)?;
        taps[si] = h;
    }
    Ok(FeaturePyramid { taps })
}

/// Classifier head: global-pool each tap, concatenate, one FC to logits.
pub fn ccn_forward(
    g: &mut Graph,
    store: &ParameterStore,
    cfg: &NetworkConfig,
    pyramid: &FeaturePyramid,
) -> Result<NodeId> {
    let mut pooled = Vec::with_capacity(5);
    for &tap in &pyramid.taps {
        let k = g.shape(tap)[2];
        let p = match cfg.ccn_pool {
            PoolKind::Avg => g.avgpool2d(tap, k, k)?,
            PoolKind::Max => g.maxpool2d(tap, k, k)?,
        };
        pooled.push(p);
    }
    let cat = g.concat(&pooled, 1)?;
    let bsz = g.shape(cat)[0];
    let flat = g.reshape(cat, vec![bsz, cfg.ccn_fc_in()])?;
    let w = g.param(store, "θc/fc/w")?;
    let b = g.param(store, "θc/fc/b")?;
    g.linear(flat, w, b)
}

/// Generator trunk shared by the single-font and all-fonts entry points.
/// `taps` are the (possibly batch-tiled) pyramid levels, `emb` the per-row
/// font embedding `[B, d]`, `groups` the BN group count.
fn ggn_decode(
    g: &mut Graph,
    store: &mut ParameterStore,
    cfg: &NetworkConfig,
    taps: &[NodeId; 5],
    emb: NodeId,
    mode: Mode,
    groups: usize,
) -> Result<NodeId> {
    let emb4 = g.broadcast_hw(emb, 1, 1)?;
    let mut h = g.concat(&[taps[4], emb4], 1)?;
    for i in 0..6 {
        // skips join where spatial sizes match: E_pool4 at 4x4 before d3,
        // E_pool3 before d4, E_pool2 before d5, E_pool1 before d6
        if i >= 2 {
            h = g.concat(&[h, taps[5 - i]], 1)?;
        }
        let prefix = format!("θg/d{}", i + 1);
        let w = g.param(store, &format!("{prefix}/w"))?;
        let b = g.param(store, &format!("{prefix}/b"))?;
        h = g.deconv2d(h, w, b, 2, 2, 1)?;
        if i < 5 {
            h = bn_layer(g, store, cfg, &prefix, h, mode, groups)?;
            h = g.relu(h);
        } else {
            match cfg.final_activation {
                FinalActivation::Sigmoid => h = g.sigmoid(h),
                FinalActivation::Relu => {
                    h = bn_layer(g, store, cfg, &prefix, h, mode, groups)?;
                    h = g.relu(h);
                }
            }
        }
    }
    Ok(h)
}

/// Generate the glyph image for one font. `font_index` is 1-based.
pub fn ggn_forward(
    g: &mut Graph,
    store: &mut ParameterStore,
    cfg: &NetworkConfig,
    pyramid: &FeaturePyramid,
    font_index: usize,
    mode: Mode,
) -> Result<NodeId> {
    if font_index == 0 || font_index > cfg.num_fonts {
        return Err(Error::FontIndex { got: font_index, m: cfg.num_fonts });
    }
    let bsz = g.shape(pyramid.taps[0])[0];
    let table = g.param(store, &format!("{SLICE_FONT_EMBED}table"))?;
    let emb = g.embed(table, &vec![font_index - 1; bsz])?;
    ggn_decode(g, store, cfg, &pyramid.taps, emb, mode, 1)
}

/// Generate all m font glyphs at once by tiling the batch axis m times
/// with per-block embeddings and per-block (grouped) batch statistics.
/// Bit-identical to m separate `ggn_forward` calls.
pub fn ggn_forward_all(
    g: &mut Graph,
    store: &mut ParameterStore,
    cfg: &NetworkConfig,
    pyramid: &FeaturePyramid,
    mode: Mode,
) -> Result<Vec<NodeId>> {
    let bsz = g.shape(pyramid.taps[0])[0];
    let slots: Vec<Vec<usize>> = (1..=cfg.num_fonts).map(|f| vec![f; bsz]).collect();
    ggn_forward_slots(g, store, cfg, pyramid, &slots, mode)
}

/// Like `ggn_forward_all` but with an explicit 1-based font index per
/// output slot and batch row, so per-sample font permutations can be
/// applied jointly with the matching targets.
pub fn ggn_forward_slots(
    g: &mut Graph,
    store: &mut ParameterStore,
    cfg: &NetworkConfig,
    pyramid: &FeaturePyramid,
    slots: &[Vec<usize>],
    mode: Mode,
) -> Result<Vec<NodeId>> {
    let m = slots.len();
    if m == 0 {
        return Err(Error::InvalidArg("generator needs at least one font slot".into()));
    }
    let bsz = g.shape(pyramid.taps[0])[0];
    let mut indices = Vec::with_capacity(m * bsz);
    for slot in slots {
        if slot.len() != bsz {
            return Err(Error::InvalidArg(format!(
                "font slot has {} indices for batch {bsz}",
                slot.len()
            )));
        }
        for &f in slot {
            if f == 0 || f > cfg.num_fonts {
                return Err(Error::FontIndex { got: f, m: cfg.num_fonts });
            }
            indices.push(f - 1);
        }
    }
    let mut tiled = [0; 5];
    for (t, &tap) in tiled.iter_mut().zip(&pyramid.taps) {
        *t = g.repeat_batch(tap, m);
    }
    let table = g.param(store, &format!("{SLICE_FONT_EMBED}table"))?;
    let emb = g.embed(table, &indices)?;
    let y = ggn_decode(g, store, cfg, &tiled, emb, mode, m)?;
    (0..m).map(|f| g.slice_batch(y, f * bsz, bsz)).collect()
}

/// Discriminator over a (scene image, glyph image) pair. Returns one raw
/// logit per batch row; P(real) = sigmoid(logit).
pub fn gdn_forward(
    g: &mut Graph,
    store: &mut ParameterStore,
    cfg: &NetworkConfig,
    x: NodeId,
    t: NodeId,
    mode: Mode,
) -> Result<NodeId> {
    if g.shape(x) != g.shape(t) {
        return Err(Error::ShapeMismatch(format!(
            "discriminator pair {:?} vs {:?}",
            g.shape(x),
            g.shape(t)
        )));
    }
    let s = g.shape(x);
    if s.len() != 4 || s[1] != 3 || s[2] != cfg.image_size || s[3] != cfg.image_size {
        return Err(Error::ShapeMismatch(format!(
            "discriminator input must be [B,3,{0},{0}], got {s:?}",
            cfg.image_size
        )));
    }
    let mut h = g.concat(&[x, t], 1)?;
    for (i, &(_, stride)) in GDN_CONVS.iter().enumerate() {
        h = conv_bn_relu(g, store, cfg, &format!("θd/c{}", i + 1), h, stride, 2, mode, 1)?;
    }
    let bsz = g.shape(h)[0];
    let flat = g.reshape(h, vec![bsz, cfg.gdn_fc_in()])?;
    let w = g.param(store, "θd/fc/w")?;
    let b = g.param(store, "θd/fc/b")?;
    g.linear(flat, w, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    fn random_image(bsz: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        let n = bsz * 3 * IMAGE_SIZE * IMAGE_SIZE;
        Tensor::new(vec![bsz, 3, IMAGE_SIZE, IMAGE_SIZE], (0..n).map(|_| rng.uniform()).collect())
            .unwrap()
    }

    #[test]
    fn width_multiplier_validation() {
        let mut cfg = NetworkConfig::paper();
        assert!(cfg.validate().is_ok());
        cfg.width_num = 1;
        cfg.width_den = 64;
        assert!(cfg.validate().is_ok(), "1/64 divides every table width");
        cfg.width_den = 96;
        assert!(cfg.validate().is_err());
        cfg.width_den = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fc_input_widths_match_layer_table() {
        let cfg = NetworkConfig::paper();
        assert_eq!(cfg.ccn_fc_in(), 1472);
        assert_eq!(cfg.gdn_fc_in(), 32768);
        let desk = NetworkConfig::desk();
        assert_eq!(desk.pyramid_channels(), [8, 16, 32, 64, 64]);
        assert_eq!(desk.ccn_fc_in(), 184);
        assert_eq!(desk.gdn_fc_in(), 4096);
    }

    #[test]
    fn init_is_deterministic_and_calibrated() {
        let cfg = NetworkConfig::desk();
        let a = init_params(&cfg, 7).unwrap();
        let b = init_params(&cfg, 7).unwrap();
        for (name, t) in a.iter() {
            assert_eq!(t.data(), b.get(name).unwrap().data(), "{name}");
        }
        // pooled sample std of all conv weights, enough elements to be tight
        let mut vals = Vec::new();
        for (name, t) in a.iter() {
            if name.ends_with("/w") && t.shape().len() == 4 {
                vals.extend_from_slice(t.data());
            }
        }
        assert!(vals.len() > 100_000, "sample size {}", vals.len());
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        let std = var.sqrt();
        assert!((0.0195..=0.0205).contains(&std), "std = {std}");
        for (name, t) in a.iter() {
            if name.ends_with("/bn_g") {
                assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
            }
        }
    }

    #[test]
    fn pyramid_shapes_full_width() {
        let cfg = NetworkConfig::paper();
        let mut store = init_params(&cfg, 1).unwrap();
        let mut g = Graph::inference();
        let x = g.constant(&random_image(1, 3));
        let pyr = fen_forward(&mut g, &mut store, &cfg, x, Mode::EVAL).unwrap();
        let want = [
            [1, 64, 32, 32],
            [1, 128, 16, 16],
            [1, 256, 8, 8],
            [1, 512, 4, 4],
            [1, 512, 1, 1],
        ];
        for (tap, w) in pyr.taps.iter().zip(&want) {
            assert_eq!(g.shape(*tap), w);
        }
    }

    #[test]
    fn pyramid_shapes_desk_width_batch2() {
        let cfg = NetworkConfig::desk();
        let mut store = init_params(&cfg, 1).unwrap();
        let mut g = Graph::inference();
        let x = g.constant(&random_image(2, 4));
        let pyr = fen_forward(&mut g, &mut store, &cfg, x, Mode::TRAIN).unwrap();
        let want = [
            [2, 8, 32, 32],
            [2, 16, 16, 16],
            [2, 32, 8, 8],
            [2, 64, 4, 4],
            [2, 64, 1, 1],
        ];
        for (tap, w) in pyr.taps.iter().zip(&want) {
            assert_eq!(g.shape(*tap), w);
            assert!(g.value(*tap).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn encoder_rejects_wrong_input_size() {
        let cfg = NetworkConfig::desk();
        let mut store = init_params(&cfg, 1).unwrap();
        let mut g = Graph::inference();
        let x = g.constant(&Tensor::zeros(vec![1, 3, 32, 32]));
        assert!(fen_forward(&mut g, &mut store, &cfg, x, Mode::EVAL).is_err());
    }

    #[test]
    fn zero_image_stays_finite_in_train_mode() {
        let cfg = NetworkConfig::desk();
        let mut store = init_params(&cfg, 1).unwrap();
        let mut g = Graph::inference();
        let x = g.constant(&Tensor::zeros(vec![2, 3, 64, 64]));
        let pyr = fen_forward(&mut g, &mut store, &cfg, x, Mode::TRAIN).unwrap();
        for tap in pyr.taps {
            assert!(g.value(tap).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn classifier_zero_weights_give_uniform_probabilities() {
        let cfg = NetworkConfig::desk();
        let mut store = init_params(&cfg, 1).unwrap();
        store.get_mut("θc/fc/w").unwrap().data_mut().fill(0.0);
        let mut g = Graph::inference();
        let x = g.constant(&random_image(1, 5));
        let pyr = fen_forward(&mut g, &mut store, &cfg, x, Mode::EVAL).unwrap();
        let logits = ccn_forward(&mut g, &store, &cfg, &pyr).unwrap();
        assert_eq!(g.shape(logits), &[1, cfg.num_classes]);
        assert!(g.value(logits).iter().all(|&v| v == 0.0));
        let (loss, probs) =
            ops::softmax_xent_forward(g.value(logits), 1, cfg.num_classes, &[0]).unwrap();
        assert!((loss - (cfg.num_classes as f64).ln()).abs() < 1e-12);
        for &p in &probs {
            assert!((p - 1.0 / cfg.num_classes as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_output_shape_and_range() {
        let cfg = NetworkConfig::desk();
        let mut store = init_params(&cfg, 2).unwrap();
        let mut g = Graph::inference();
        let x = g.constant(&random_image(2, 6));
        let pyr = fen_forward(&mut g, &mut store, &cfg, x, Mode::EVAL).unwrap();
        let t1 = ggn_forward(&mut g, &mut store, &cfg, &pyr, 1, Mode::EVAL).unwrap();
        assert_eq!(g.shape(t1), &[2, 3, 64, 64]);
        assert!(g.value(t1).iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(ggn_forward(&mut g, &mut store, &cfg, &pyr, 0, Mode::EVAL).is_err());
        assert!(ggn_forward(&mut g, &mut store, &cfg, &pyr, cfg.num_fonts + 1, Mode::EVAL).is_err());
    }

    #[test]
    fn all_fonts_matches_individual_calls_bit_exactly() {
        let cfg = NetworkConfig::desk();
        let image = random_image(2, 9);
        for mode in [Mode::TRAIN, Mode::EVAL] {
            // separate stores so running-stat updates stay comparable
            let mut store_a = init_params(&cfg, 3).unwrap();
            let mut store_b = init_params(&cfg, 3).unwrap();

            let mut ga = Graph::inference();
            let xa = ga.constant(&image);
            let pa = fen_forward(&mut ga, &mut store_a, &cfg, xa, mode).unwrap();
            let all = ggn_forward_all(&mut ga, &mut store_a, &cfg, &pa, mode).unwrap();

            let mut gb = Graph::inference();
            let xb = gb.constant(&image);
            let pb = fen_forward(&mut gb, &mut store_b, &cfg, xb, mode).unwrap();
            for (f, &node) in all.iter().enumerate() {
                let single = ggn_forward(&mut gb, &mut store_b, &cfg, &pb, f + 1, mode).unwrap();
                assert_eq!(ga.value(node), gb.value(single), "font {} mode {mode:?}", f + 1);
            }
            // sequential running-stat updates must agree too
            for (name, t) in store_a.iter() {
                if name.contains("bn_r") {
                    assert_eq!(t.data(), store_b.get(name).unwrap().data(), "{name}");
                }
            }
        }
    }

    #[test]
    fn discriminator_shape_and_zero_map() {
        let cfg = NetworkConfig::desk();
        let mut store = init_params(&cfg, 4).unwrap();
        // zero all discriminator weights: logit must be exactly 0
        for name in store.names().map(str::to_string).collect::<Vec<_>>() {
            if name.starts_with("θd/") && (name.ends_with("/w") || name.ends_with("/bn_b")) {
                store.get_mut(&name).unwrap().data_mut().fill(0.0);
            }
        }
        let mut g = Graph::inference();
        let x = g.constant(&random_image(2, 11));
        let t = g.constant(&random_image(2, 12));
        let d = gdn_forward(&mut g, &mut store, &cfg, x, t, Mode::EVAL).unwrap();
        assert_eq!(g.shape(d), &[2, 1]);
        for &logit in g.value(d) {
            assert_eq!(logit, 0.0);
            let p_real = ops::sigmoid(logit);
            assert_eq!(p_real, 0.5);
            // Eq. complement identity, exact for any logit
            assert_eq!(p_real + ops::sigmoid(-logit), 1.0);
        }
        let bad = g.constant(&Tensor::zeros(vec![1, 3, 64, 64]));
        assert!(gdn_forward(&mut g, &mut store, &cfg, x, bad, Mode::EVAL).is_err());
    }

    #[test]
    fn parameter_slices_partition_the_store() {
        use crate::optim::*;
        let cfg = NetworkConfig::desk();
        let store = init_params(&cfg, 5).unwrap();
        let slices =
            [SLICE_ENCODER, SLICE_CLASSIFIER, SLICE_GENERATOR, SLICE_FONT_EMBED, SLICE_DISCRIMINATOR];
        for name in store.names() {
            let hits = slices.iter().filter(|p| name.starts_with(*p)).count();
            assert_eq!(hits, 1, "{name} must belong to exactly one slice");
        }
    }
}
