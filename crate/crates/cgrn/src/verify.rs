//! The verification suite: finite-difference gradient checks for every
//! differentiable op, naive-loop forward oracles, a shape table for the
//! full network chain, and gradient-routing invariants of the training
//! step. Produces a machine-readable pass/fail summary.

use std::fmt::Write as _;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::model::{
    ccn_forward, fen_forward, gdn_forward, ggn_forward_slots, init_params, Mode, NetworkConfig,
};
use crate::optim::{SLICE_DISCRIMINATOR, SLICE_FONT_EMBED, SLICE_GENERATOR};
use crate::rng::{mix, Rng};
use crate::tensor::Tensor;
use crate::train::{train_step, Batch, TrainConfig, TrainState};

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct VerifySummary {
    pub checks: Vec<CheckResult>,
}

impl VerifySummary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckResult { name: name.to_string(), passed, detail });
    }

    fn run(&mut self, name: &str, f: impl FnOnce() -> Result<()>) {
        match f() {
            Ok(()) => self.push(name, true, String::new()),
            Err(e) => self.push(name, false, e.to_string()),
        }
    }

    /// One line per check plus a trailing tally, parseable by scripts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            if c.passed {
                let _ = writeln!(s, "ok {}", c.name);
            } else {
                let _ = writeln!(s, "FAIL {} {}", c.name, c.detail);
            }
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(s, "passed={} failed={failed}", self.checks.len() - failed);
        s
    }
}

// ---------------------------------------------------------------------------
// finite-difference gradient checking

type Builder<'a> = dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + 'a;

fn rand_in(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| lo + rng.uniform() * (hi - lo)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduce an arbitrary output to a scalar through a fixed random weight
/// vector so every output element carries an independent coefficient.
fn weighted_scalar(
    g: &mut Graph,
    out: NodeId,
    weights: &Tensor,
) -> Result<NodeId> {
    let w = g.constant(weights);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn eval_loss(inputs: &[Tensor], build: &Builder, weights: &Tensor) -> Result<f64> {
    let mut g = Graph::inference();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t)).collect();
    let out = build(&mut g, &ids)?;
    let loss = weighted_scalar(&mut g, out, weights)?;
    Ok(g.scalar_value(loss))
}

/// Compare the analytic gradient of `build` against central differences,
/// for every element of every input. `sabotage`, when set, perturbs one
/// analytic gradient component before comparison (checker self-test).
fn gradcheck_inner(
    name: &str,
    inputs: &[Tensor],
    build: &Builder,
    sabotage: bool,
) -> Result<()> {
    // analytic pass
    let (grads, weights) = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t)).collect();
        let out = build(&mut g, &ids)?;
        let mut wrng = Rng::new(mix(0x77656967687473, inputs[0].numel() as u64));
        let weights = rand_in(&mut wrng, g.shape(out), 0.5, 1.5);
        let loss = weighted_scalar(&mut g, out, &weights)?;
        g.backward(loss)?;
        let grads: Vec<Vec<f64>> = ids
            .iter()
            .map(|&id| g.grad(id).map(|v| v.to_vec()).unwrap_or_default())
            .collect();
        (grads, weights)
    };
    for (i, input) in inputs.iter().enumerate() {
        let mut analytic = if grads[i].is_empty() {
            vec![0.0; input.numel()]
        } else {
            grads[i].clone()
        };
        if sabotage && i == 0 {
            analytic[0] += 0.5;
        }
        for e in 0..input.numel() {
            let mut probe: Vec<Tensor> = inputs.to_vec();
            probe[i].data_mut()[e] = input.data()[e] + H;
            let up = eval_loss(&probe, build, &weights)?;
            probe[i].data_mut()[e] = input.data()[e] - H;
            let down = eval_loss(&probe, build, &weights)?;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if rel > REL_TOL {
                return Err(crate::error::Error::Verify(format!(
                    "{name}: input {i} element {e}: analytic {a:.8e} vs numeric {numeric:.8e} (rel {rel:.2e})"
                )));
            }
        }
    }
    Ok(())
}

fn gradcheck(s: &mut VerifySummary, name: &str, inputs: &[Tensor], build: &Builder) {
    s.run(name, || gradcheck_inner(name, inputs, build, false));
}

fn gradient_checks(s: &mut VerifySummary, seed: u64) {
    let mut rng = Rng::new(mix(seed, 0x67726164)); // "grad"
    let r = &mut rng;

    // conv2d over three geometries: unit stride, stride 2, 5x5 kernel
    for (i, (b, cin, h, w, cout, k, st, p)) in
        [(1, 2, 6, 6, 3, 3, 1, 1), (2, 3, 5, 5, 2, 3, 2, 1), (1, 1, 8, 8, 2, 5, 2, 2)]
            .into_iter()
            .enumerate()
    {
        let inputs = [
            rand_in(r, &[b, cin, h, w], -1.0, 1.0),
            rand_in(r, &[cout, cin, k, k], -0.5, 0.5),
            rand_in(r, &[cout], -0.2, 0.2),
        ];
        gradcheck(s, &format!("grad/conv2d/{i}"), &inputs, &|g, ids| {
            g.conv2d(ids[0], ids[1], ids[2], st, p)
        });
    }

    // deconv2d in the generator's k=5, stride-2 configuration
    for (i, (b, cin, h, cout)) in
        [(1, 2, 3, 2), (2, 3, 2, 1), (1, 4, 4, 3)].into_iter().enumerate()
    {
        let inputs = [
            rand_in(r, &[b, cin, h, h], -1.0, 1.0),
            rand_in(r, &[cin, cout, 5, 5], -0.5, 0.5),
            rand_in(r, &[cout], -0.2, 0.2),
        ];
        gradcheck(s, &format!("grad/deconv2d/{i}"), &inputs, &|g, ids| {
            g.deconv2d(ids[0], ids[1], ids[2], 2, 2, 1)
        });
    }

    for (i, (b, c, h, k, st)) in
        [(1, 2, 6, 2, 2), (2, 1, 9, 3, 3), (1, 3, 8, 4, 4)].into_iter().enumerate()
    {
        let x = [rand_in(r, &[b, c, h, h], -1.0, 1.0)];
        gradcheck(s, &format!("grad/maxpool2d/{i}"), &x, &|g, ids| g.maxpool2d(ids[0], k, st));
        gradcheck(s, &format!("grad/avgpool2d/{i}"), &x, &|g, ids| g.avgpool2d(ids[0], k, st));
    }

    // batchnorm (training statistics); groups=2 mirrors the tiled
    // generator pass
    for (i, (b, c, h, groups)) in
        [(4, 3, 2, 1), (2, 2, 3, 1), (4, 2, 3, 2)].into_iter().enumerate()
    {
        let inputs = [
            rand_in(r, &[b, c, h, h], -1.0, 1.0),
            rand_in(r, &[c], 0.5, 1.5),
            rand_in(r, &[c], -0.3, 0.3),
        ];
        gradcheck(s, &format!("grad/batchnorm/{i}"), &inputs, &move |g, ids| {
            let mut rm = vec![0.0; c];
            let mut rv = vec![1.0; c];
            g.batchnorm(ids[0], ids[1], ids[2], &mut rm, &mut rv, 0.9, 1e-5, true, false, groups)
        });
    }

    for (i, shape) in [vec![3, 4], vec![2, 2, 3], vec![5]].into_iter().enumerate() {
        // keep activations away from the relu kink
        let mut x = rand_in(r, &shape, 0.1, 1.0);
        for (j, v) in x.data_mut().iter_mut().enumerate() {
            if j % 2 == 0 {
                *v = -*v;
            }
        }
        gradcheck(s, &format!("grad/relu/{i}"), &[x.clone()], &|g, ids| Ok(g.relu(ids[0])));
        gradcheck(s, &format!("grad/sigmoid/{i}"), &[x], &|g, ids| Ok(g.sigmoid(ids[0])));
    }

    for (i, (b, n, o)) in [(2, 5, 3), (1, 4, 4), (3, 7, 2)].into_iter().enumerate() {
        let inputs = [
            rand_in(r, &[b, n], -1.0, 1.0),
            rand_in(r, &[n, o], -0.5, 0.5),
            rand_in(r, &[o], -0.2, 0.2),
        ];
        gradcheck(s, &format!("grad/linear/{i}"), &inputs, &|g, ids| {
            g.linear(ids[0], ids[1], ids[2])
        });
    }

    for (i, (axis, sa, sb)) in [
        (1, vec![2, 3, 2, 2], vec![2, 2, 2, 2]),
        (0, vec![2, 3], vec![1, 3]),
        (1, vec![1, 2, 4, 4], vec![1, 5, 4, 4]),
    ]
    .into_iter()
    .enumerate()
    {
        let inputs = [rand_in(r, &sa, -1.0, 1.0), rand_in(r, &sb, -1.0, 1.0)];
        gradcheck(s, &format!("grad/concat/{i}"), &inputs, &move |g, ids| {
            g.concat(&[ids[0], ids[1]], axis)
        });
    }

    for (i, (shape, to)) in [
        (vec![2, 6], vec![2, 2, 3]),
        (vec![4], vec![2, 2]),
        (vec![1, 2, 2, 2], vec![2, 4]),
    ]
    .into_iter()
    .enumerate()
    {
        let x = [rand_in(r, &shape, -1.0, 1.0)];
        gradcheck(s, &format!("grad/reshape/{i}"), &x, &move |g, ids| {
            g.reshape(ids[0], to.clone())
        });
    }

    for (i, (shape, times)) in
        [(vec![1, 3], 4), (vec![2, 2, 2, 2], 2), (vec![3, 2], 3)].into_iter().enumerate()
    {
        let x = [rand_in(r, &shape, -1.0, 1.0)];
        gradcheck(s, &format!("grad/repeat_batch/{i}"), &x, &move |g, ids| {
            Ok(g.repeat_batch(ids[0], times))
        });
    }

    for (i, (b, start, len)) in [(4, 1, 2), (3, 0, 3), (5, 4, 1)].into_iter().enumerate() {
        let x = [rand_in(r, &[b, 2, 2], -1.0, 1.0)];
        gradcheck(s, &format!("grad/slice_batch/{i}"), &x, &move |g, ids| {
            g.slice_batch(ids[0], start, len)
        });
    }

    for (i, (b, c, h)) in [(2, 3, 2), (1, 4, 3), (3, 2, 1)].into_iter().enumerate() {
        let x = [rand_in(r, &[b, c], -1.0, 1.0)];
        gradcheck(s, &format!("grad/broadcast_hw/{i}"), &x, &move |g, ids| {
            g.broadcast_hw(ids[0], h, h)
        });
    }

    for (i, indices) in
        [vec![0, 2, 1], vec![3, 3, 0, 1], vec![1]].into_iter().enumerate()
    {
        let table = [rand_in(r, &[4, 3], -1.0, 1.0)];
        gradcheck(s, &format!("grad/embed/{i}"), &table, &move |g, ids| {
            g.embed(ids[0], &indices)
        });
    }

    for (i, shape) in [vec![2, 3], vec![4], vec![1, 2, 2]].into_iter().enumerate() {
        let a = rand_in(r, &shape, -1.0, 1.0);
        let b = rand_in(r, &shape, 1.5, 2.5); // bounded away from a: |a-b| smooth
        let pair = [a.clone(), b.clone()];
        gradcheck(s, &format!("grad/add/{i}"), &pair, &|g, ids| g.add(ids[0], ids[1]));
        gradcheck(s, &format!("grad/sub/{i}"), &pair, &|g, ids| g.sub(ids[0], ids[1]));
        gradcheck(s, &format!("grad/mul/{i}"), &pair, &|g, ids| g.mul(ids[0], ids[1]));
        gradcheck(s, &format!("grad/scale/{i}"), &[a.clone()], &|g, ids| {
            Ok(g.scale(ids[0], -2.5))
        });
        gradcheck(s, &format!("grad/sum/{i}"), &[a.clone()], &|g, ids| Ok(g.sum(ids[0])));
        gradcheck(s, &format!("grad/l1_loss/{i}"), &pair, &|g, ids| g.l1_loss(ids[0], ids[1]));
        gradcheck(s, &format!("grad/l2_loss/{i}"), &pair, &|g, ids| g.l2_loss(ids[0], ids[1]));
    }

    for (i, (b, l, target)) in
        [(2, 4, 1.0), (3, 5, 0.0), (1, 3, 1.0)].into_iter().enumerate()
    {
        let logits = [rand_in(r, &[b, l], -2.0, 2.0)];
        let labels: Vec<usize> = (0..b).map(|j| j % l).collect();
        gradcheck(s, &format!("grad/softmax_xent/{i}"), &logits, &move |g, ids| {
            g.softmax_xent(ids[0], &labels)
        });
        let z = [rand_in(r, &[b, 1], -2.0, 2.0)];
        gradcheck(s, &format!("grad/bce_logits/{i}"), &z, &move |g, ids| {
            Ok(g.bce_logits(ids[0], target))
        });
    }

    // checker self-test: a corrupted analytic gradient must be caught
    // and named
    s.run("grad/self_test_detects_corruption", || {
        let x = [rand_in(r, &[2, 3], -1.0, 1.0)];
        match gradcheck_inner("conv2d(sabotaged)", &x, &|g, ids| Ok(g.relu(ids[0])), true) {
            Err(e) if e.to_string().contains("conv2d(sabotaged)") => Ok(()),
            Err(e) => Err(crate::error::Error::Verify(format!(
                "failure did not name the op: {e}"
            ))),
            Ok(()) => Err(crate::error::Error::Verify(
                "corrupted gradient went undetected".into(),
            )),
        }
    });
}

// ---------------------------------------------------------------------------
// naive-loop forward oracles

fn naive_conv(
    x: &[f64],
    (b, cin, h, w): (usize, usize, usize, usize),
    wgt: &[f64],
    bias: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; b * cout * oh * ow];
    for bi in 0..b {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((bi * cin + ci) * h + iy as usize) * w + ix as usize]
                                    * wgt[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    y[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    y
}

fn oracle_checks(s: &mut VerifySummary, seed: u64) {
    let mut rng = Rng::new(mix(seed, 0x6f7261636c65)); // "oracle"
    let r = &mut rng;

    s.run("oracle/conv2d", || {
        for (b, cin, h, w, cout, k, st, p) in
            [(2, 3, 7, 6, 4, 3, 1, 1), (1, 2, 8, 8, 3, 5, 2, 2), (3, 1, 5, 5, 2, 3, 2, 0)]
        {
            let x = rand_in(r, &[b, cin, h, w], -1.0, 1.0);
            let wgt = rand_in(r, &[cout, cin, k, k], -0.5, 0.5);
            let bias = rand_in(r, &[cout], -0.2, 0.2);
            let want =
                naive_conv(x.data(), (b, cin, h, w), wgt.data(), bias.data(), cout, k, st, p);
            let mut g = Graph::inference();
            let (xi, wi, bi) = (g.constant(&x), g.constant(&wgt), g.constant(&bias));
            let y = g.conv2d(xi, wi, bi, st, p)?;
            for (a, b) in g.value(y).iter().zip(&want) {
                if (a - b).abs() > 1e-10 {
                    return Err(crate::error::Error::Verify(format!(
                        "conv2d disagrees with the loop oracle: {a} vs {b}"
                    )));
                }
            }
        }
        Ok(())
    });

    s.run("oracle/deconv2d", || {
        for (b, cin, h, w, cout, k, st, p, op) in
            [(2, 3, 4, 5, 2, 3, 2, 1, 0), (1, 2, 6, 6, 3, 4, 2, 1, 1), (2, 1, 5, 5, 2, 3, 1, 0, 0)]
        {
            let x = rand_in(r, &[b, cin, h, w], -1.0, 1.0);
            let wgt = rand_in(r, &[cin, cout, k, k], -0.5, 0.5);
            let bias = rand_in(r, &[cout], -0.2, 0.2);
            // transposed convolution as a scatter loop
            let oh = (h - 1) * st + k + op - 2 * p;
            let ow = (w - 1) * st + k + op - 2 * p;
            let mut want = vec![0.0; b * cout * oh * ow];
            for bi in 0..b {
                for co in 0..cout {
                    for v in &mut want[(bi * cout + co) * oh * ow..(bi * cout + co + 1) * oh * ow] {
                        *v = bias.data()[co];
                    }
                }
            }
            for bi in 0..b {
                for ci in 0..cin {
                    for iy in 0..h {
                        for ix in 0..w {
                            let xv = x.data()[((bi * cin + ci) * h + iy) * w + ix];
                            for co in 0..cout {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let oy = (iy * st + ky) as isize - p as isize;
                                        let ox = (ix * st + kx) as isize - p as isize;
                                        if oy < 0
                                            || ox < 0
                                            || oy >= oh as isize
                                            || ox >= ow as isize
                                        {
                                            continue;
                                        }
                                        want[((bi * cout + co) * oh + oy as usize) * ow
                                            + ox as usize] += xv
                                            * wgt.data()[((ci * cout + co) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let mut g = Graph::inference();
            let (xi, wi, bi) = (g.constant(&x), g.constant(&wgt), g.constant(&bias));
            let y = g.deconv2d(xi, wi, bi, st, p, op)?;
            if g.shape(y) != [b, cout, oh, ow] {
                return Err(crate::error::Error::Verify(format!(
                    "deconv2d shape {:?}, expected {:?}",
                    g.shape(y),
                    [b, cout, oh, ow]
                )));
            }
            for (a, b) in g.value(y).iter().zip(&want) {
                if (a - b).abs() > 1e-10 {
                    return Err(crate::error::Error::Verify(format!(
                        "deconv2d disagrees with the scatter oracle: {a} vs {b}"
                    )));
                }
            }
        }
        Ok(())
    });

    s.run("oracle/conv_deconv_adjoint", || {
        // <conv(x; w), u> must equal <x, deconv(u; w)> with the same kernel
        // buffer: conv's [cout, cin, k, k] reads as deconv's [cin', cout', k, k]
        for (b, cin, h, cout, k, st, p) in
            [(2, 3, 7, 4, 3, 2, 1), (1, 2, 8, 3, 4, 2, 1), (2, 2, 6, 2, 3, 1, 1)]
        {
            let x = rand_in(r, &[b, cin, h, h], -1.0, 1.0);
            let wgt = rand_in(r, &[cout, cin, k, k], -0.5, 0.5);
            let oh = (h + 2 * p - k) / st + 1;
            let u = rand_in(r, &[b, cout, oh, oh], -1.0, 1.0);
            let out_pad = (h + 2 * p - k) % st;
            let zc = Tensor::new(vec![cout], vec![0.0; cout])?;
            let zi = Tensor::new(vec![cin], vec![0.0; cin])?;
            let mut g = Graph::inference();
            let (xi, wi, ui) = (g.constant(&x), g.constant(&wgt), g.constant(&u));
            let (bc, bi) = (g.constant(&zc), g.constant(&zi));
            let y = g.conv2d(xi, wi, bc, st, p)?;
            let xt = g.deconv2d(ui, wi, bi, st, p, out_pad)?;
            let lhs: f64 = g.value(y).iter().zip(u.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = g.value(xt).iter().zip(x.data()).map(|(a, b)| a * b).sum();
            if (lhs - rhs).abs() > 1e-9 {
                return Err(crate::error::Error::Verify(format!(
                    "adjointness violated: <conv x, u>={lhs} vs <x, deconv u>={rhs}"
                )));
            }
        }
        Ok(())
    });

    s.run("oracle/linear", || {
        let (b, n, o) = (3, 5, 4);
        let x = rand_in(r, &[b, n], -1.0, 1.0);
        let w = rand_in(r, &[n, o], -0.5, 0.5);
        let bias = rand_in(r, &[o], -0.2, 0.2);
        let mut g = Graph::inference();
        let (xi, wi, bi) = (g.constant(&x), g.constant(&w), g.constant(&bias));
        let y = g.linear(xi, wi, bi)?;
        for bi_ in 0..b {
            for oi in 0..o {
                let mut acc = bias.data()[oi];
                for ni in 0..n {
                    acc += x.data()[bi_ * n + ni] * w.data()[ni * o + oi];
                }
                if (g.value(y)[bi_ * o + oi] - acc).abs() > 1e-12 {
                    return Err(crate::error::Error::Verify("linear oracle mismatch".into()));
                }
            }
        }
        Ok(())
    });

    s.run("oracle/avgpool_maxpool", || {
        let (b, c, h) = (2, 3, 8);
        let x = rand_in(r, &[b, c, h, h], -1.0, 1.0);
        let mut g = Graph::inference();
        let xi = g.constant(&x);
        let ya = g.avgpool2d(xi, 2, 2)?;
        let ym = g.maxpool2d(xi, 2, 2)?;
        for bi in 0..b {
            for ci in 0..c {
                for oy in 0..4 {
                    for ox in 0..4 {
                        let mut sum = 0.0;
                        let mut max = f64::MIN;
                        for ky in 0..2 {
                            for kx in 0..2 {
                                let v = x.data()
                                    [((bi * c + ci) * h + oy * 2 + ky) * h + ox * 2 + kx];
                                sum += v;
                                max = max.max(v);
                            }
                        }
                        let o = ((bi * c + ci) * 4 + oy) * 4 + ox;
                        if (g.value(ya)[o] - sum / 4.0).abs() > 1e-12
                            || (g.value(ym)[o] - max).abs() > 1e-12
                        {
                            return Err(crate::error::Error::Verify("pool oracle mismatch".into()));
                        }
                    }
                }
            }
        }
        Ok(())
    });

    s.run("oracle/softmax_xent", || {
        let (b, l) = (3, 5);
        let x = rand_in(r, &[b, l], -2.0, 2.0);
        let labels = [0usize, 3, 4];
        let mut g = Graph::inference();
        let xi = g.constant(&x);
        let loss = g.softmax_xent(xi, &labels)?;
        let mut want = 0.0;
        for bi in 0..b {
            // the classifier treats the smallest logit as the winner, so
            // the softmax runs over negated logits
            let row: Vec<f64> = x.data()[bi * l..(bi + 1) * l].iter().map(|v| -v).collect();
            let mx = row.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            want += -(row[labels[bi]] - mx) + z.ln();
        }
        want /= b as f64;
        if (g.scalar_value(loss) - want).abs() > 1e-10 {
            return Err(crate::error::Error::Verify(format!(
                "softmax_xent oracle mismatch: {} vs {want}",
                g.scalar_value(loss)
            )));
        }
        Ok(())
    });

    s.run("oracle/batchnorm", || {
        let (b, c, h) = (4, 2, 3);
        let x = rand_in(r, &[b, c, h, h], -1.0, 1.0);
        let gamma = rand_in(r, &[c], 0.5, 1.5);
        let beta = rand_in(r, &[c], -0.3, 0.3);
        let mut g = Graph::inference();
        let (xi, gi, bi) = (g.constant(&x), g.constant(&gamma), g.constant(&beta));
        let (mut rm, mut rv) = (vec![0.0; c], vec![1.0; c]);
        let y = g.batchnorm(xi, gi, bi, &mut rm, &mut rv, 0.9, 1e-5, true, false, 1)?;
        let plane = h * h;
        for ci in 0..c {
            let vals: Vec<f64> = (0..b)
                .flat_map(|bi_| {
                    x.data()[((bi_ * c + ci) * plane)..((bi_ * c + ci) + 1) * plane].to_vec()
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            for bi_ in 0..b {
                for i in 0..plane {
                    let idx = (bi_ * c + ci) * plane + i;
                    let want = (x.data()[idx] - mean) / (var + 1e-5).sqrt() * gamma.data()[ci]
                        + beta.data()[ci];
                    if (g.value(y)[idx] - want).abs() > 1e-10 {
                        return Err(crate::error::Error::Verify(
                            "batchnorm oracle mismatch".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// shape table and routing invariants

fn tiny_cfg() -> NetworkConfig {
    let mut cfg = NetworkConfig::desk();
    cfg.width_num = 1;
    cfg.width_den = 32;
    cfg.num_classes = 3;
    cfg.num_fonts = 2;
    cfg.font_embed_dim = 8;
    cfg
}

fn toy_batch(cfg: &NetworkConfig, bsz: usize, seed: u64) -> Result<Batch> {
    let mut rng = Rng::new(seed);
    let n = bsz * 3 * 64 * 64;
    let x = Tensor::new(vec![bsz, 3, 64, 64], (0..n).map(|_| rng.uniform()).collect())?;
    let labels = (0..bsz).map(|_| rng.below(cfg.num_classes)).collect();
    let targets = (0..cfg.num_fonts)
        .map(|_| Tensor::new(vec![bsz, 3, 64, 64], (0..n).map(|_| rng.uniform()).collect()))
        .collect::<Result<Vec<_>>>()?;
    let slot_fonts = (0..cfg.num_fonts)
        .map(|_| (0..bsz).map(|_| 1 + rng.below(cfg.num_fonts)).collect())
        .collect();
    Ok(Batch { x, labels, targets, slot_fonts })
}

fn shape_checks(s: &mut VerifySummary, seed: u64) {
    s.run("shape/full_chain", || {
        let cfg = tiny_cfg();
        let mut store = init_params(&cfg, seed)?;
        let batch = toy_batch(&cfg, 2, mix(seed, 1))?;
        let mut g = Graph::inference();
        let x = g.constant(&batch.x);
        let pyr = fen_forward(&mut g, &mut store, &cfg, x, Mode::EVAL)?;
        let pc = cfg.pyramid_channels();
        for (i, (&tap, spatial)) in pyr.taps.iter().zip([32, 16, 8, 4, 1]).enumerate() {
            let want = vec![2, pc[i], spatial, spatial];
            if g.shape(tap) != want {
                return Err(crate::error::Error::Verify(format!(
                    "pyramid level {}: {:?}, expected {want:?}",
                    i + 1,
                    g.shape(tap)
                )));
            }
        }
        let logits = ccn_forward(&mut g, &store, &cfg, &pyr)?;
        if g.shape(logits) != [2, cfg.num_classes] {
            return Err(crate::error::Error::Verify(format!(
                "classifier logits {:?}",
                g.shape(logits)
            )));
        }
        let fakes = ggn_forward_slots(&mut g, &mut store, &cfg, &pyr, &batch.slot_fonts, Mode::EVAL)?;
        for &f in &fakes {
            if g.shape(f) != [2, 3, 64, 64] {
                return Err(crate::error::Error::Verify(format!(
                    "generator output {:?}",
                    g.shape(f)
                )));
            }
        }
        let t = g.constant(&batch.targets[0]);
        let d = gdn_forward(&mut g, &mut store, &cfg, x, t, Mode::EVAL)?;
        if g.shape(d) != [2, 1] {
            return Err(crate::error::Error::Verify(format!(
                "discriminator logits {:?}",
                g.shape(d)
            )));
        }
        Ok(())
    });
}

fn routing_checks(s: &mut VerifySummary, seed: u64) {
    s.run("routing/composite_identity_and_clean_grads", || {
        let cfg = tiny_cfg();
        let tcfg = TrainConfig { batch: 2, seed, ..TrainConfig::default() };
        let mut store = init_params(&cfg, seed)?;
        let mut state = TrainState::new(&tcfg);
        let batch = toy_batch(&cfg, 2, mix(seed, 2))?;
        let rep = train_step(&mut store, &mut state, &cfg, &tcfg, &batch)?;
        let want =
            tcfg.lambda * rep.l_cr + tcfg.lambda * rep.l_pixel.unwrap() - rep.l_d.unwrap();
        if (rep.composite - want).abs() > 1e-9 {
            return Err(crate::error::Error::Verify(format!(
                "composite {} does not match its parts {want}",
                rep.composite
            )));
        }
        for name in store.names() {
            if store.get(name)?.grad().is_some() {
                return Err(crate::error::Error::Verify(format!(
                    "gradient left behind on {name} after the step"
                )));
            }
        }
        Ok(())
    });

    s.run("routing/ablations_freeze_their_slices", || {
        let cfg = tiny_cfg();
        let tcfg = TrainConfig {
            batch: 2,
            seed,
            no_ggn: true,
            no_gdn: true,
            ..TrainConfig::default()
        };
        let mut store = init_params(&cfg, seed)?;
        let mut state = TrainState::new(&tcfg);
        let batch = toy_batch(&cfg, 2, mix(seed, 3))?;
        let frozen: Vec<(String, Vec<f64>)> = store
            .names()
            .filter(|n| {
                n.starts_with(SLICE_GENERATOR)
                    || n.starts_with(SLICE_FONT_EMBED)
                    || n.starts_with(SLICE_DISCRIMINATOR)
            })
            .map(|n| (n.to_string(), store.get(n).unwrap().data().to_vec()))
            .collect();
        let rep = train_step(&mut store, &mut state, &cfg, &tcfg, &batch)?;
        if rep.l_pixel.is_some() || rep.l_d.is_some() {
            return Err(crate::error::Error::Verify(
                "ablated run still reports generator/discriminator losses".into(),
            ));
        }
        for (name, before) in &frozen {
            if store.get(name)?.data() != &before[..] {
                return Err(crate::error::Error::Verify(format!(
                    "ablated slice moved: {name}"
                )));
            }
        }
        Ok(())
    });
}

/// Run the whole suite.
pub fn run_all(seed: u64) -> VerifySummary {
    let mut s = VerifySummary::default();
    gradient_checks(&mut s, seed);
    oracle_checks(&mut s, seed);
    shape_checks(&mut s, seed);
    routing_checks(&mut s, seed);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_full_suite_passes() {
        let summary = run_all(7);
        assert!(summary.all_passed(), "{}", summary.to_text());
        assert!(summary.checks.len() > 60, "suite too small: {}", summary.checks.len());
        let text = summary.to_text();
        assert!(text.ends_with(&format!("passed={} failed=0\n", summary.checks.len())));
    }
}
