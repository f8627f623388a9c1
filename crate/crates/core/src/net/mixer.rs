//! Complex mixer layers.
//!
//! A residual layer maps `X -> U = X + s(W X + b 1^T)` along the antenna axis,
//! then `U -> Z = U + s(U V^T + 1 c^T)` along the subcarrier axis, with `s`
//! applied separately to real and imaginary parts. The lifting layer drops
//! the residuals and the activations: `Z = (W X + b 1^T) V^T + 1 c^T`.

use super::cmat::{mm, mm_hn, mm_nc, mm_nh, mm_nt, CMat};
use super::layout::MixerSlots;
use super::Activation;

pub(crate) struct MixerCache {
    x: CMat,
    p1: CMat,
    u: CMat,
    p2: CMat,
}

fn add_col(m: &mut CMat, b: &CMat) {
    m.re += &b.re;
    m.im += &b.im;
}

fn act(a: Activation, p: &CMat) -> CMat {
    CMat {
        re: p.re.mapv(|x| a.f(x)),
        im: p.im.mapv(|x| a.f(x)),
    }
}

fn act_back(a: Activation, p: &CMat, g: &CMat) -> CMat {
    let mut out = g.clone();
    out.re.zip_mut_with(&p.re, |g, &x| *g *= a.df(x));
    out.im.zip_mut_with(&p.im, |g, &x| *g *= a.df(x));
    out
}

pub(crate) fn forward(
    s: &MixerSlots,
    params: &[f64],
    a: Activation,
    x: CMat,
) -> (CMat, MixerCache) {
    let (w, b, v, c) = (s.w.get(params), s.b.get(params), s.v.get(params), s.c.get(params));
    let mut p1 = mm(&w, &x);
    add_col(&mut p1, &b);
    let u = if s.lift {
        p1.clone()
    } else {
        let mut u = x.clone();
        u.add_assign(&act(a, &p1));
        u
    };
    let mut p2 = mm_nt(&u, &v);
    add_col(&mut p2, &c);
    let z = if s.lift {
        p2.clone()
    } else {
        let mut z = u.clone();
        z.add_assign(&act(a, &p2));
        z
    };
    (z, MixerCache { x, p1, u, p2 })
}

/// Accumulates parameter gradients into `grads` and returns the input gradient.
pub(crate) fn backward(
    s: &MixerSlots,
    params: &[f64],
    a: Activation,
    cache: &MixerCache,
    gz: CMat,
    grads: &mut [f64],
) -> CMat {
    let (w, v) = (s.w.get(params), s.v.get(params));
    let gp2 = if s.lift { gz.clone() } else { act_back(a, &cache.p2, &gz) };
    let mut gu = mm_nc(&gp2, &v);
    if !s.lift {
        gu.add_assign(&gz);
    }
    s.v.accumulate(grads, &mm_hn(&cache.u, &gp2).t());
    s.c.accumulate(grads, &gp2.col_sums());
    let gp1 = if s.lift { gu.clone() } else { act_back(a, &cache.p1, &gu) };
    let mut gx = mm_hn(&w, &gp1);
    if !s.lift {
        gx.add_assign(&gu);
    }
    s.w.accumulate(grads, &mm_nh(&gp1, &cache.x));
    s.b.accumulate(grads, &gp1.row_sums());
    gx
}
