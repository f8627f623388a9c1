//! Flat parameter layout. Every tensor is a row-major slice of one `Vec<f64>`;
//! complex tensors are a pair of real slices.

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;

use super::cmat::CMat;
use super::{ModelConfig, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.off..self.off + self.len()
    }

    pub fn view<'a>(&self, buf: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &buf[self.range()]).expect("slot shape")
    }

    pub fn view_mut<'a>(&self, buf: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut buf[self.range()])
            .expect("slot shape")
    }

    /// Row `r` of the tensor as a plain slice.
    pub fn row<'a>(&self, buf: &'a [f64], r: usize) -> &'a [f64] {
        let s = self.off + r * self.cols;
        &buf[s..s + self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CSlot {
    pub re: Slot,
    pub im: Slot,
}

impl CSlot {
    pub fn get(&self, buf: &[f64]) -> CMat {
        CMat::from_views(self.re.view(buf), self.im.view(buf))
    }

    pub fn accumulate(&self, buf: &mut [f64], g: &CMat) {
        self.re.view_mut(buf).zip_mut_with(&g.re, |a, b| *a += b);
        self.im.view_mut(buf).zip_mut_with(&g.im, |a, b| *a += b);
    }
}

/// One mixer layer: `w` (antenna map), `b` (antenna bias, column), `v`
/// (subcarrier map), `c` (subcarrier bias, row).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixerSlots {
    pub w: CSlot,
    pub b: CSlot,
    pub v: CSlot,
    pub c: CSlot,
    pub lift: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSlots {
    pub ln1_g: Slot,
    pub ln1_b: Slot,
    pub qkv_w: Slot,
    pub qkv_b: Slot,
    pub o_w: Slot,
    pub o_b: Slot,
    pub ln2_g: Slot,
    pub ln2_b: Slot,
    pub f1_w: Slot,
    pub f1_b: Slot,
    pub f2_w: Slot,
    pub f2_b: Slot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderIo {
    pub in_w: Slot,
    pub in_b: Slot,
    pub typ: Slot,
    pub nf_g: Slot,
    pub nf_b: Slot,
    pub out_w: Slot,
    pub out_b: Slot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub front: Vec<MixerSlots>,
    pub io: Option<EncoderIo>,
    pub blocks: Vec<BlockSlots>,
    pub back: Vec<MixerSlots>,
    pub total: usize,
    /// Slots that start at 1 (layer-norm gains).
    gains: Vec<Slot>,
    /// Weight slots with their fan-in.
    weights: Vec<(Slot, usize)>,
}

struct Alloc {
    next: usize,
}

impl Alloc {
    fn slot(&mut self, rows: usize, cols: usize) -> Slot {
        let s = Slot {
            off: self.next,
            rows,
            cols,
        };
        self.next += rows * cols;
        s
    }

    fn cslot(&mut self, rows: usize, cols: usize) -> CSlot {
        CSlot {
            re: self.slot(rows, cols),
            im: self.slot(rows, cols),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut a = Alloc { next: 0 };
        let mut gains = Vec::new();
        let mut weights = Vec::new();
        let (nt, nc) = (cfg.n_t, cfg.n_c);
        let mixer = |a: &mut Alloc, weights: &mut Vec<(Slot, usize)>, lift: bool| {
            let (ti, ci) = if lift { (cfg.n_t0, cfg.n_c0) } else { (nt, nc) };
            let m = MixerSlots {
                w: a.cslot(nt, ti),
                b: a.cslot(nt, 1),
                v: a.cslot(nc, ci),
                c: a.cslot(1, nc),
                lift,
            };
            for s in [m.w.re, m.w.im] {
                weights.push((s, ti));
            }
            for s in [m.v.re, m.v.im] {
                weights.push((s, ci));
            }
            m
        };
        let front: Vec<_> = (0..cfg.k)
            .map(|i| mixer(&mut a, &mut weights, i == 0))
            .collect();
        let (mut io, mut blocks, mut back) = (None, Vec::new(), Vec::new());
        if cfg.kind == ModelKind::Gcd {
            let (tok, d, f) = (2 * nt * nc, cfg.hidden, cfg.ffn_mult * cfg.hidden);
            let in_w = a.slot(tok, d);
            weights.push((in_w, tok));
            let in_b = a.slot(1, d);
            let typ = a.slot(2, d);
            for _ in 0..cfg.l {
                let b = BlockSlots {
                    ln1_g: a.slot(1, d),
                    ln1_b: a.slot(1, d),
                    qkv_w: a.slot(d, 3 * d),
                    qkv_b: a.slot(1, 3 * d),
                    o_w: a.slot(d, d),
                    o_b: a.slot(1, d),
                    ln2_g: a.slot(1, d),
                    ln2_b: a.slot(1, d),
                    f1_w: a.slot(d, f),
                    f1_b: a.slot(1, f),
                    f2_w: a.slot(f, d),
                    f2_b: a.slot(1, d),
                };
                gains.extend([b.ln1_g, b.ln2_g]);
                weights.extend([(b.qkv_w, d), (b.o_w, d), (b.f1_w, d), (b.f2_w, f)]);
                blocks.push(b);
            }
            let nf_g = a.slot(1, d);
            let nf_b = a.slot(1, d);
            gains.push(nf_g);
            let out_w = a.slot(d, tok);
            weights.push((out_w, d));
            let out_b = a.slot(1, tok);
            io = Some(EncoderIo {
                in_w,
                in_b,
                typ,
                nf_g,
                nf_b,
                out_w,
                out_b,
            });
            back = (0..cfg.k).map(|_| mixer(&mut a, &mut weights, false)).collect();
        }
        Layout {
            front,
            io,
            blocks,
            back,
            total: a.next,
            gains,
            weights,
        }
    }

    /// Uniform fan-in initialization of weights, unit norm gains, zero biases.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        for s in &self.gains {
            p[s.range()].fill(1.0);
        }
        for (s, fan_in) in &self.weights {
            let bound = 1.0 / (*fan_in as f64).sqrt();
            for x in &mut p[s.range()] {
                *x = rng.random_range(-bound..bound);
            }
        }
        p
    }

    /// All-zero weights with unit norm gains.
    pub fn zero_init(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        for s in &self.gains {
            p[s.range()].fill(1.0);
        }
        p
    }
}
