//! Real-valued encoder pieces over stacked token rows: layer norm, linear
//! maps, multi-head self-attention within per-sample segments.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::layout::{BlockSlots, Slot};
use super::Activation;

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    rstd: Vec<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, g: ArrayView2<f64>, b: ArrayView2<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let r = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * r);
        rstd.push(r);
    }
    let y = &xhat * &g + &b;
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_back(
    c: &LnCache,
    g: ArrayView2<f64>,
    gy: &Array2<f64>,
    gg: &mut [f64],
    gb: &mut [f64],
) -> Array2<f64> {
    let d = gy.ncols() as f64;
    for (row_gy, row_xh) in gy.rows().into_iter().zip(c.xhat.rows()) {
        for j in 0..row_gy.len() {
            gg[j] += row_gy[j] * row_xh[j];
            gb[j] += row_gy[j];
        }
    }
    let mut gx = gy * &g;
    for ((mut row, xh), &r) in gx.rows_mut().into_iter().zip(c.xhat.rows()).zip(&c.rstd) {
        let m1 = row.sum() / d;
        let m2 = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        Zip::from(&mut row).and(&xh).for_each(|v, &h| *v = r * (*v - m1 - h * m2));
    }
    gx
}

/// `x W + b`
pub(crate) fn linear(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    x.dot(&w) + &b
}

/// Accumulates `dW`, `db` and returns `dx`.
pub(crate) fn linear_back(
    x: &Array2<f64>,
    w: ArrayView2<f64>,
    gy: &Array2<f64>,
    grads: &mut [f64],
    ws: Slot,
    bs: Slot,
) -> Array2<f64> {
    ws.view_mut(grads).scaled_add(1.0, &x.t().dot(gy));
    let gb = gy.sum_axis(Axis(0));
    bs.view_mut(grads).row_mut(0).scaled_add(1.0, &gb);
    gy.dot(&w.t())
}

pub(crate) struct BlockCache {
    x: Array2<f64>,
    ln1: LnCache,
    h1: Array2<f64>,
    qkv: Array2<f64>,
    /// Attention weights per (segment, head).
    attn: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln2: LnCache,
    h2: Array2<f64>,
    z: Array2<f64>,
    gz: Array2<f64>,
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

pub(crate) fn block_forward(
    bs: &BlockSlots,
    p: &[f64],
    heads: usize,
    act: Activation,
    segments: &[(usize, usize)],
    x: Array2<f64>,
) -> (Array2<f64>, BlockCache) {
    let d = x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (h1, ln1) = layer_norm(&x, bs.ln1_g.view(p), bs.ln1_b.view(p));
    let qkv = linear(&h1, bs.qkv_w.view(p), bs.qkv_b.view(p));
    let mut ctx = Array2::zeros(x.dim());
    let mut attn = Vec::with_capacity(segments.len() * heads);
    for &(st, len) in segments {
        for h in 0..heads {
            let q = qkv.slice(s![st..st + len, h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![st..st + len, d + h * dh..d + (h + 1) * dh]);
            let v = qkv.slice(s![st..st + len, 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let mut a = q.dot(&k.t()) * scale;
            softmax_rows(&mut a);
            ctx.slice_mut(s![st..st + len, h * dh..(h + 1) * dh]).assign(&a.dot(&v));
            attn.push(a);
        }
    }
    let x2 = &x + &linear(&ctx, bs.o_w.view(p), bs.o_b.view(p));
    let (h2, ln2) = layer_norm(&x2, bs.ln2_g.view(p), bs.ln2_b.view(p));
    let z = linear(&h2, bs.f1_w.view(p), bs.f1_b.view(p));
    let gz = z.mapv(|v| act.f(v));
    let out = &x2 + &linear(&gz, bs.f2_w.view(p), bs.f2_b.view(p));
    let cache = BlockCache {
        x,
        ln1,
        h1,
        qkv,
        attn,
        ctx,
        ln2,
        h2,
        z,
        gz,
    };
    (out, cache)
}

pub(crate) fn block_backward(
    bs: &BlockSlots,
    p: &[f64],
    heads: usize,
    act: Activation,
    segments: &[(usize, usize)],
    c: &BlockCache,
    gout: Array2<f64>,
    grads: &mut [f64],
) -> Array2<f64> {
    let d = c.x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // feed-forward branch
    let ggz = linear_back(&c.gz, bs.f2_w.view(p), &gout, grads, bs.f2_w, bs.f2_b);
    let mut gzpre = ggz;
    gzpre.zip_mut_with(&c.z, |g, &z| *g *= act.df(z));
    let gh2 = linear_back(&c.h2, bs.f1_w.view(p), &gzpre, grads, bs.f1_w, bs.f1_b);
    let (gg, gb) = split_two(grads, bs.ln2_g, bs.ln2_b);
    let mut gx2 = layer_norm_back(&c.ln2, bs.ln2_g.view(p), &gh2, gg, gb);
    gx2 += &gout;

    // attention branch
    let gctx = linear_back(&c.ctx, bs.o_w.view(p), &gx2, grads, bs.o_w, bs.o_b);
    let mut gqkv = Array2::<f64>::zeros(c.qkv.dim());
    let mut ai = 0;
    for &(st, len) in segments {
        for h in 0..heads {
            let a = &c.attn[ai];
            ai += 1;
            let (qc, kc, vc) = (h * dh, d + h * dh, 2 * d + h * dh);
            let q = c.qkv.slice(s![st..st + len, qc..qc + dh]);
            let k = c.qkv.slice(s![st..st + len, kc..kc + dh]);
            let v = c.qkv.slice(s![st..st + len, vc..vc + dh]);
            let go = gctx.slice(s![st..st + len, h * dh..(h + 1) * dh]);
            let ga = go.dot(&v.t());
            gqkv.slice_mut(s![st..st + len, vc..vc + dh]).assign(&a.t().dot(&go));
            let mut gs = a * &ga;
            for (mut row, arow) in gs.rows_mut().into_iter().zip(a.rows()) {
                let dot = row.sum();
                Zip::from(&mut row).and(&arow).for_each(|g, &av| *g -= av * dot);
            }
            gs *= scale;
            gqkv.slice_mut(s![st..st + len, qc..qc + dh]).assign(&gs.dot(&k));
            gqkv.slice_mut(s![st..st + len, kc..kc + dh]).assign(&gs.t().dot(&q));
        }
    }
    let gh1 = linear_back(&c.h1, bs.qkv_w.view(p), &gqkv, grads, bs.qkv_w, bs.qkv_b);
    let (gg, gb) = split_two(grads, bs.ln1_g, bs.ln1_b);
    let mut gx = layer_norm_back(&c.ln1, bs.ln1_g.view(p), &gh1, gg, gb);
    gx += &gx2;
    gx
}

/// Mutable slices for two disjoint slots, `a` placed before `b`.
pub(crate) fn split_two(buf: &mut [f64], a: Slot, b: Slot) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.off + a.len() <= b.off);
    let (lo, hi) = buf.split_at_mut(b.off);
    (&mut lo[a.range()], &mut hi[..b.len()])
}
