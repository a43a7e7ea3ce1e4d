use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AccidentInput, ModelConfig};
use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::CollisionGraph;

fn p(t: &mut Tape<'_>, name: &str) -> Var {
    let id = t
        .params()
        .find(name)
        .unwrap_or_else(|| panic!("missing parameter {name}"));
    t.param(id)
}

fn check_cols(t: &Tape<'_>, v: Var, cols: usize, what: &str) -> Result<()> {
    let (_, c) = t.shape(v);
    if c != cols {
        return Err(Error::Shape(format!(
            "{what}: expected {cols} columns, found {c}"
        )));
    }
    Ok(())
}

/// Multi-head causal self-attention over per-frame context tokens.
///
/// Head `g` attends with queries and keys of width `D/h`, scaled by
/// `√(D/h)`, over frames `≤ t`, and has its own value projection to `H_c`.
/// Head outputs are summed.
pub fn context_attention(t: &mut Tape<'_>, h: Var, heads: usize) -> Result<Var> {
    let wq = p(t, "ctx.wq");
    let d = t.shape(wq).0;
    check_cols(t, h, d, "context features")?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::Shape(format!(
            "feature dim {d} not divisible by {heads} heads"
        )));
    }
    let wk = p(t, "ctx.wk");
    let wv = p(t, "ctx.wv");
    let hc = t.shape(wv).1 / heads;
    let frames = t.shape(h).0;
    let dg = d / heads;

    let q = t.matmul(h, wq);
    let k = t.matmul(h, wk);
    let v = t.matmul(h, wv);
    let causal: Vec<bool> = (0..frames * frames)
        .map(|i| i % frames <= i / frames)
        .collect();
    let scale = 1.0 / (dg as f64).sqrt();

    let mut out: Option<Var> = None;
    for g in 0..heads {
        let qg = t.slice_cols(q, g * dg, (g + 1) * dg);
        let kg = t.slice_cols(k, g * dg, (g + 1) * dg);
        let vg = t.slice_cols(v, g * hc, (g + 1) * hc);
        let kt = t.transpose(kg);
        let logits = t.matmul(qg, kt);
        let logits = t.scale(logits, scale);
        let a = t.softmax_rows(logits, Some(causal.clone()));
        let head = t.matmul(a, vg);
        out = Some(match out {
            Some(acc) => t.add(acc, head),
            None => head,
        });
    }
    Ok(out.expect("at least one head"))
}

/// Attention-weighted sum of projected object features per frame.
///
/// `objects` is `(T·N)×D`; `mask[t·N + n]` marks present objects. Returns
/// `(I_O, weights)` with shapes `T×O_o` and `T×N`. Absent objects get zero
/// weight and an all-absent frame yields a zero row.
pub fn object_attention(
    t: &mut Tape<'_>,
    objects: Var,
    mask: &[bool],
    frames: usize,
) -> Result<(Var, Var)> {
    let proj = p(t, "obj.proj");
    check_cols(t, objects, t.shape(proj).0, "object features")?;
    let rows = t.shape(objects).0;
    if frames == 0 || rows % frames != 0 || mask.len() != rows {
        return Err(Error::Shape(format!(
            "object block of {rows} rows does not split into {frames} frames with a matching mask"
        )));
    }
    let slots = rows / frames;
    let w_theta = p(t, "obj.w_theta");
    let w_b = p(t, "obj.w_b");
    let w_beta = p(t, "obj.w_beta");

    let o = t.matmul(objects, proj);
    let hidden = t.matmul(o, w_theta);
    let hidden = t.add_row(hidden, w_b);
    let hidden = t.tanh(hidden);
    let logits = t.matmul(hidden, w_beta);
    let logits = t.reshape(logits, frames, slots);
    let weights = t.softmax_rows(logits, Some(mask.to_vec()));
    let pooled = t.block_weighted_sum(weights, o);
    Ok((pooled, weights))
}

/// Per-sample constants for the graph encoder, batched over frames.
///
/// Nodes of all frames are stacked; `w_block` is block-diagonal with each
/// frame's `n×n` weights and `omega` maps node outputs to frame vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInputs {
    pub frames: usize,
    /// `Σn × 2D` node features.
    pub x: Matrix,
    pub w_block: Matrix,
    /// `w_block · x`
    pub wx: Matrix,
    /// `T × Σn`; row `t` holds `(row sum + column sum)/2` of frame `t`'s
    /// weights, or zeros when the frame has fewer than two nodes.
    pub omega: Matrix,
}

impl GraphInputs {
    pub fn from_graphs(graphs: &[CollisionGraph], node_dim: usize) -> Self {
        let total: usize = graphs.iter().map(|g| g.nodes.len()).sum();
        let mut x = Matrix::zeros(total, node_dim);
        let mut w_block = Matrix::zeros(total, total);
        let mut omega = Matrix::zeros(graphs.len(), total);
        let mut base = 0;
        for (f, g) in graphs.iter().enumerate() {
            let n = g.nodes.len();
            for r in 0..n {
                let src = g.node_features.row(r);
                x.data[(base + r) * node_dim..(base + r + 1) * node_dim].copy_from_slice(src);
            }
            if !g.is_empty() {
                let w = g.node_weights();
                for a in 0..n {
                    let mut row_sum = 0.0;
                    let mut col_sum = 0.0;
                    for b in 0..n {
                        w_block.set(base + a, base + b, w.get(a, b));
                        row_sum += w.get(a, b);
                        col_sum += w.get(b, a);
                    }
                    omega.set(f, base + a, 0.5 * (row_sum + col_sum));
                }
            }
            base += n;
        }
        let wx = w_block.matmul(&x);
        GraphInputs {
            frames: graphs.len(),
            x,
            w_block,
            wx,
            omega,
        }
    }
}

/// Weighted message passing over each frame's collision graph.
///
/// Layer `l` computes `H' = tanh(H·A_l + (W·H)·B_l + b_l)`; the frame vector
/// is the node outputs averaged with weights `ω`. Frames without edges give
/// a zero vector.
pub fn graph_encode(t: &mut Tape<'_>, g: &GraphInputs, layers: usize) -> Result<Var> {
    let first = p(t, "graph.self0");
    let fd = t.shape(first).1;
    if g.x.rows == 0 {
        return Ok(t.constant(Matrix::zeros(g.frames, fd)));
    }
    if g.x.cols != t.shape(first).0 {
        return Err(Error::Shape(format!(
            "graph node features have {} columns, expected {}",
            g.x.cols,
            t.shape(first).0
        )));
    }
    let mut h = t.constant(g.x.clone());
    let mut wh = t.constant(g.wx.clone());
    let w_block = t.constant(g.w_block.clone());
    for l in 0..layers {
        if l > 0 {
            wh = t.matmul(w_block, h);
        }
        let a = p(t, &format!("graph.self{l}"));
        let b = p(t, &format!("graph.msg{l}"));
        let bias = p(t, &format!("graph.bias{l}"));
        let own = t.matmul(h, a);
        let msg = t.matmul(wh, b);
        let z = t.add(own, msg);
        let z = t.add_row(z, bias);
        h = t.tanh(z);
    }
    let omega = t.constant(g.omega.clone());
    Ok(t.matmul(omega, h))
}

/// Gated recurrent unit over the rows of `x`, starting from a zero state.
/// Parameters `{prefix}.wx`, `{prefix}.wh`, `{prefix}.b` hold the update,
/// reset and candidate blocks in that order. Returns all hidden states.
pub fn gru(t: &mut Tape<'_>, x: Var, prefix: &str) -> Result<Var> {
    let wx = p(t, &format!("{prefix}.wx"));
    let wh = p(t, &format!("{prefix}.wh"));
    let b = p(t, &format!("{prefix}.b"));
    check_cols(t, x, t.shape(wx).0, "recurrent input")?;
    let hidden = t.shape(wh).0;
    let frames = t.shape(x).0;
    let xw = t.matmul(x, wx);
    let xw = t.add_row(xw, b);

    let mut h = t.constant(Matrix::zeros(1, hidden));
    let mut states = Vec::with_capacity(frames);
    for step in 0..frames {
        let xt = t.slice_rows(xw, step, step + 1);
        let hu = t.matmul(h, wh);
        let x_zr = t.slice_cols(xt, 0, 2 * hidden);
        let h_zr = t.slice_cols(hu, 0, 2 * hidden);
        let zr = t.add(x_zr, h_zr);
        let zr = t.sigmoid(zr);
        let z = t.slice_cols(zr, 0, hidden);
        let r = t.slice_cols(zr, hidden, 2 * hidden);
        let x_n = t.slice_cols(xt, 2 * hidden, 3 * hidden);
        let h_n = t.slice_cols(hu, 2 * hidden, 3 * hidden);
        let gated = t.mul(r, h_n);
        let n = t.add(x_n, gated);
        let n = t.tanh(n);
        let diff = t.sub(h, n);
        let keep = t.mul(z, diff);
        h = t.add(n, keep);
        states.push(h);
    }
    Ok(t.concat_rows(&states))
}

/// Lower-triangular `T×T` averaging operator for receptive field `k`:
/// frame `t` in block `b = ⌊t/k⌋` takes the mean of frames `bk..=t`.
pub fn smoothing_operator(frames: usize, k: usize) -> Matrix {
    let mut m = Matrix::zeros(frames, frames);
    for i in 0..frames {
        let start = (i / k) * k;
        let w = 1.0 / (i - start + 1) as f64;
        for j in start..=i {
            m.set(i, j, w);
        }
    }
    m
}

/// Multi-scale temporal smoothing with a residual mix.
///
/// Each field `k` pools causally within blocks of `k` frames and applies a
/// learnable pointwise mixer; the output is `x + mix · mean_k(·)`.
pub fn smooth(t: &mut Tape<'_>, x: Var, cfg: &ModelConfig) -> Result<Var> {
    if !cfg.toggles.smooth {
        return Ok(x);
    }
    let frames = t.shape(x).0;
    let largest = cfg.max_smooth_field();
    if frames < largest {
        return Err(Error::Config(format!(
            "sequence of {frames} frames is shorter than the receptive field {largest}; use smaller smooth_fields"
        )));
    }
    let mut acc: Option<Var> = None;
    for &k in &cfg.smooth_fields {
        let op = t.constant(smoothing_operator(frames, k));
        let pooled = t.matmul(op, x);
        let mix = p(t, &format!("smooth.mix{k}"));
        let bias = p(t, &format!("smooth.bias{k}"));
        let y = t.matmul(pooled, mix);
        let y = t.add_row(y, bias);
        acc = Some(match acc {
            Some(a) => t.add(a, y),
            None => y,
        });
    }
    let scaled = t.scale(
        acc.expect("non-empty fields"),
        cfg.smooth_mix / cfg.smooth_fields.len() as f64,
    );
    Ok(t.add(x, scaled))
}

fn dropout(t: &mut Tape<'_>, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    let Some(rng) = rng else { return x };
    if rate == 0.0 {
        return x;
    }
    let (r, c) = t.shape(x);
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..r * c)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    t.mul_const(x, Matrix::from_vec(r, c, mask))
}

/// Intermediate values of the temporal stage.
#[derive(Debug, Clone, Copy)]
pub struct TemporalOut {
    /// Feature attention `W_a`, absent when temporal attention is off.
    pub attention: Option<Var>,
    /// `W_f`, the input to the recurrence.
    pub fused: Var,
    pub hidden: Var,
    pub smoothed: Var,
    /// `T×1` accident-class probabilities.
    pub scores: Var,
}

/// Feature attention over `I_C ⊕ I_O ⊕ G`, recurrence, smoothing and the
/// two-layer frame head.
pub fn temporal_fuse(
    t: &mut Tape<'_>,
    ic: Var,
    io: Var,
    g: Var,
    cfg: &ModelConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<TemporalOut> {
    let frames = t.shape(ic).0;
    if t.shape(io).0 != frames || t.shape(g).0 != frames {
        return Err(Error::Shape(format!(
            "sequence lengths differ: context {frames}, object {}, graph {}",
            t.shape(io).0,
            t.shape(g).0
        )));
    }
    let fm = t.concat_cols(&[ic, io, g]);
    let (attention, fused) = if cfg.toggles.temporal_attn {
        let w_m = p(t, "fuse.w_m");
        let a = t.tanh(fm);
        let a = t.mul_row(a, w_m);
        let a = t.softmax_rows(a, None);
        (Some(a), t.mul(fm, a))
    } else {
        (None, fm)
    };
    let hidden = gru(t, fused, "gru")?;
    let smoothed = smooth(t, hidden, cfg)?;

    let x = dropout(t, smoothed, cfg.dropout.0, rng.as_deref_mut());
    let w1 = p(t, "head.w1");
    let b1 = p(t, "head.b1");
    let x = t.matmul(x, w1);
    let x = t.add_row(x, b1);
    let x = t.tanh(x);
    let x = dropout(t, x, cfg.dropout.1, rng.as_deref_mut());
    let w2 = p(t, "head.w2");
    let b2 = p(t, "head.b2");
    let logits = t.matmul(x, w2);
    let logits = t.add_row(logits, b2);
    let probs = t.softmax_rows(logits, None);
    let scores = t.slice_cols(probs, 1, 2);
    Ok(TemporalOut {
        attention,
        fused,
        hidden,
        smoothed,
        scores,
    })
}

/// Time-axis statistics of a `T×1` score sequence: columns are the mean,
/// population variance, maximum (broadcast over frames) and the deviation
/// `s_t − mean`.
pub fn score_statistics(t: &mut Tape<'_>, s: Var) -> Var {
    let frames = t.shape(s).0;
    let inv = 1.0 / frames as f64;
    let ones = t.constant(Matrix::filled(frames, 1, 1.0));
    let total = t.sum_rows(s);
    let mean = t.scale(total, inv);
    let mean_b = t.matmul(ones, mean);
    let dev = t.sub(s, mean_b);
    let sq = t.mul(dev, dev);
    let var = t.sum_rows(sq);
    let var = t.scale(var, inv);
    let var_b = t.matmul(ones, var);
    let mx = t.max_rows(s);
    let max_b = t.matmul(ones, mx);
    t.concat_cols(&[mean_b, var_b, max_b, dev])
}

/// Statistics of each frame's feature vector: mean, population variance and
/// maximum over features, plus the frame mean's deviation from its time
/// average.
fn feature_statistics(t: &mut Tape<'_>, x: Var) -> Var {
    let (frames, width) = t.shape(x);
    let inv = 1.0 / width as f64;
    let total = t.sum_cols(x);
    let mean = t.scale(total, inv);
    let spread = t.constant(Matrix::filled(1, width, 1.0));
    let mean_wide = t.matmul(mean, spread);
    let dev = t.sub(x, mean_wide);
    let sq = t.mul(dev, dev);
    let var = t.sum_cols(sq);
    let var = t.scale(var, inv);
    let mx = t.max_cols(x);
    let ones = t.constant(Matrix::filled(frames, 1, 1.0));
    let time_total = t.sum_rows(mean);
    let time_mean = t.scale(time_total, 1.0 / frames as f64);
    let time_mean = t.matmul(ones, time_mean);
    let delta = t.sub(mean, time_mean);
    t.concat_cols(&[mean, var, mx, delta])
}

/// Video-level probability `l_p` from pooled statistics, statistical
/// attention and a small recurrence. With the head disabled, `l_p` is the
/// maximum frame score.
pub fn accident_head(
    t: &mut Tape<'_>,
    scores: Var,
    features: Var,
    cfg: &ModelConfig,
) -> Result<Var> {
    if t.shape(scores).0 == 0 {
        return Err(Error::Shape(
            "accident head needs a non-empty sequence".into(),
        ));
    }
    if !cfg.toggles.accident_head {
        return Ok(t.max_rows(scores));
    }
    let stats = match cfg.accident_input {
        AccidentInput::Scores => score_statistics(t, scores),
        AccidentInput::Features => feature_statistics(t, features),
    };
    let w_s = p(t, "acc.w_s");
    let b_s = p(t, "acc.b_s");
    let att = t.matmul(stats, w_s);
    let att = t.add_row(att, b_s);
    let att = t.softmax_rows(att, None);
    let x = t.mul(stats, att);
    let w1 = p(t, "acc.w1");
    let b1 = p(t, "acc.b1");
    let x = t.matmul(x, w1);
    let x = t.add_row(x, b1);
    let x = t.tanh(x);
    let states = gru(t, x, "acc.gru")?;
    let frames = t.shape(states).0;
    let last = t.slice_rows(states, frames - 1, frames);
    let w2 = p(t, "acc.w2");
    let b2 = p(t, "acc.b2");
    let logits = t.matmul(last, w2);
    let logits = t.add_row(logits, b2);
    let probs = t.softmax_rows(logits, None);
    Ok(t.slice_cols(probs, 1, 2))
}
