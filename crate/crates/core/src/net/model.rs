use ndarray::{s, Array2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cmat::CMat;
use super::encoder::{self, split_two, BlockCache, LnCache};
use super::layout::Layout;
use super::mixer::{self, MixerCache};
use super::{ModelConfig, ModelKind};
use crate::channel::ChannelMatrix;
use crate::error::{Error, Result};

/// One network input in the normalized domain.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    pub partial: CMat,
    pub pseudos: Vec<CMat>,
}

/// `||H - H_hat||_F^2 / (N_t N_c)`
pub fn loss(h_true: &CMat, h_out: &CMat) -> f64 {
    let n = h_true.re.len() as f64;
    let dr = &h_true.re - &h_out.re;
    let di = &h_true.im - &h_out.im;
    (dr.iter().map(|x| x * x).sum::<f64>() + di.iter().map(|x| x * x).sum::<f64>()) / n
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: Vec<f64>,
    layout: Layout,
}

struct EncTape {
    segments: Vec<(usize, usize)>,
    types: Vec<usize>,
    tokens: Array2<f64>,
    blocks: Vec<BlockCache>,
    slots_out: Array2<f64>,
    nf: LnCache,
    normed: Array2<f64>,
}

struct Tape {
    front: Vec<Vec<MixerCache>>,
    enc: Option<EncTape>,
    back: Vec<Vec<MixerCache>>,
}

impl Model {
    /// Seeded fan-in initialization.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let params = layout.init(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        Ok(Self { cfg, params, layout })
    }

    /// All weights and biases zero, layer-norm gains one.
    pub fn zeroed(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let params = layout.zero_init();
        Ok(Self { cfg, params, layout })
    }

    pub fn from_params(cfg: ModelConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch {
                expected: (layout.total, 1),
                got: (params.len(), 1),
            });
        }
        Ok(Self { cfg, params, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check(&self, x: &NetInput) -> Result<()> {
        let c = &self.cfg;
        let want = (c.n_t0, c.n_c0);
        if x.partial.dim() != want {
            return Err(Error::ShapeMismatch {
                expected: want,
                got: x.partial.dim(),
            });
        }
        if c.kind == ModelKind::Gcd {
            for p in &x.pseudos {
                if p.dim() != (c.n_t, c.n_c) {
                    return Err(Error::ShapeMismatch {
                        expected: (c.n_t, c.n_c),
                        got: p.dim(),
                    });
                }
            }
        }
        Ok(())
    }

    fn flatten(&self, m: &CMat, row: &mut ndarray::ArrayViewMut1<f64>) {
        let half = self.cfg.n_t * self.cfg.n_c;
        for (i, (r, im)) in m.re.iter().zip(m.im.iter()).enumerate() {
            row[i] = *r;
            row[half + i] = *im;
        }
    }

    fn run(&self, inputs: &[NetInput]) -> Result<(Vec<CMat>, Tape)> {
        for x in inputs {
            self.check(x)?;
        }
        let (p, c, lay) = (&self.params, &self.cfg, &self.layout);
        let mut front = Vec::with_capacity(inputs.len());
        let mut lifted = Vec::with_capacity(inputs.len());
        for x in inputs {
            let mut h = x.partial.clone();
            let mut caches = Vec::with_capacity(lay.front.len());
            for m in &lay.front {
                let (z, cache) = mixer::forward(m, p, c.activation, h);
                caches.push(cache);
                h = z;
            }
            front.push(caches);
            lifted.push(h);
        }
        let Some(io) = lay.io else {
            let tape = Tape {
                front,
                enc: None,
                back: Vec::new(),
            };
            return Ok((lifted, tape));
        };

        let tok = 2 * c.n_t * c.n_c;
        let mut segments = Vec::with_capacity(inputs.len());
        let mut types = Vec::new();
        let mut start = 0;
        for x in inputs {
            let len = 1 + x.pseudos.len();
            segments.push((start, len));
            types.push(0);
            types.extend(std::iter::repeat_n(1, x.pseudos.len()));
            start += len;
        }
        let mut tokens = Array2::zeros((start, tok));
        for ((x, l), &(st, _)) in inputs.iter().zip(&lifted).zip(&segments) {
            self.flatten(l, &mut tokens.row_mut(st));
            for (j, ps) in x.pseudos.iter().enumerate() {
                self.flatten(ps, &mut tokens.row_mut(st + 1 + j));
            }
        }
        let mut h = encoder::linear(&tokens, io.in_w.view(p), io.in_b.view(p));
        for (mut row, &t) in h.rows_mut().into_iter().zip(&types) {
            row += &ndarray::ArrayView1::from(io.typ.row(p, t));
        }
        let mut blocks = Vec::with_capacity(lay.blocks.len());
        for b in &lay.blocks {
            let (out, cache) = encoder::block_forward(b, p, c.heads, c.activation, &segments, h);
            blocks.push(cache);
            h = out;
        }
        let mut slots_out = Array2::zeros((inputs.len(), c.hidden));
        for (i, &(st, _)) in segments.iter().enumerate() {
            slots_out.row_mut(i).assign(&h.row(st));
        }
        let (normed, nf) = encoder::layer_norm(&slots_out, io.nf_g.view(p), io.nf_b.view(p));
        let o = encoder::linear(&normed, io.out_w.view(p), io.out_b.view(p));
        let half = c.n_t * c.n_c;
        let mut back = Vec::with_capacity(inputs.len());
        let mut outs = Vec::with_capacity(inputs.len());
        for i in 0..inputs.len() {
            let re = o.slice(s![i, ..half]).to_owned().into_shape_with_order((c.n_t, c.n_c));
            let im = o.slice(s![i, half..]).to_owned().into_shape_with_order((c.n_t, c.n_c));
            let mut hb = CMat {
                re: re.expect("token width"),
                im: im.expect("token width"),
            };
            let mut caches = Vec::with_capacity(lay.back.len());
            for m in &lay.back {
                let (z, cache) = mixer::forward(m, p, c.activation, hb);
                caches.push(cache);
                hb = z;
            }
            back.push(caches);
            outs.push(hb);
        }
        let tape = Tape {
            front,
            enc: Some(EncTape {
                segments,
                types,
                tokens,
                blocks,
                slots_out,
                nf,
                normed,
            }),
            back,
        };
        Ok((outs, tape))
    }

    fn unwind(&self, tape: &Tape, upstream: &[CMat]) -> Vec<f64> {
        let (p, c, lay) = (&self.params, &self.cfg, &self.layout);
        let mut g = vec![0.0; p.len()];
        let mut g_lifted: Vec<CMat> = Vec::with_capacity(upstream.len());
        if let (Some(io), Some(enc)) = (lay.io, tape.enc.as_ref()) {
            let half = c.n_t * c.n_c;
            let mut go = Array2::zeros((upstream.len(), 2 * half));
            for (i, (gu, caches)) in upstream.iter().zip(&tape.back).enumerate() {
                let mut gh = gu.clone();
                for (m, cache) in lay.back.iter().zip(caches).rev() {
                    gh = mixer::backward(m, p, c.activation, cache, gh, &mut g);
                }
                let mut row = go.row_mut(i);
                for (j, (r, im)) in gh.re.iter().zip(gh.im.iter()).enumerate() {
                    row[j] = *r;
                    row[half + j] = *im;
                }
            }
            let gn = encoder::linear_back(&enc.normed, io.out_w.view(p), &go, &mut g, io.out_w, io.out_b);
            let (gg, gb) = split_two(&mut g, io.nf_g, io.nf_b);
            let gs = encoder::layer_norm_back(&enc.nf, io.nf_g.view(p), &gn, gg, gb);
            debug_assert_eq!(gs.dim(), enc.slots_out.dim());
            let n_tok = enc.tokens.nrows();
            let mut gh = Array2::zeros((n_tok, c.hidden));
            for (i, &(st, _)) in enc.segments.iter().enumerate() {
                gh.row_mut(st).assign(&gs.row(i));
            }
            for (b, cache) in lay.blocks.iter().zip(&enc.blocks).rev() {
                gh = encoder::block_backward(b, p, c.heads, c.activation, &enc.segments, cache, gh, &mut g);
            }
            for (row, &t) in gh.rows().into_iter().zip(&enc.types) {
                let s = io.typ.off + t * io.typ.cols;
                for (a, b) in g[s..s + io.typ.cols].iter_mut().zip(row.iter()) {
                    *a += b;
                }
            }
            let gt = encoder::linear_back(&enc.tokens, io.in_w.view(p), &gh, &mut g, io.in_w, io.in_b);
            for &(st, _) in &enc.segments {
                let row = gt.row(st);
                let re = row.slice(s![..half]).to_owned().into_shape_with_order((c.n_t, c.n_c));
                let im = row.slice(s![half..]).to_owned().into_shape_with_order((c.n_t, c.n_c));
                g_lifted.push(CMat {
                    re: re.expect("token width"),
                    im: im.expect("token width"),
                });
            }
        } else {
            g_lifted = upstream.to_vec();
        }
        for (gl, caches) in g_lifted.into_iter().zip(&tape.front) {
            let mut gh = gl;
            for (m, cache) in lay.front.iter().zip(caches).rev() {
                gh = mixer::backward(m, p, c.activation, cache, gh, &mut g);
            }
        }
        g
    }

    /// Normalized-domain estimate for each input.
    pub fn forward_batch(&self, inputs: &[NetInput]) -> Result<Vec<CMat>> {
        Ok(self.run(inputs)?.0)
    }

    /// Single-sample forward pass on complex matrices.
    pub fn forward(
        &self,
        partial: &Array2<Complex64>,
        pseudos: &[Array2<Complex64>],
    ) -> Result<ChannelMatrix> {
        let input = NetInput {
            partial: CMat::from_complex(partial),
            pseudos: pseudos.iter().map(CMat::from_complex).collect(),
        };
        let out = self.run(std::slice::from_ref(&input))?.0;
        Ok(ChannelMatrix(out[0].to_complex()))
    }

    /// Gradient of `sum_i Re<upstream_i, output_i>` with respect to every
    /// parameter; `upstream_i` holds `dL/dRe + j dL/dIm` of each output.
    pub fn backward(&self, inputs: &[NetInput], upstream: &[CMat]) -> Result<Vec<f64>> {
        if upstream.len() != inputs.len() {
            return Err(Error::ShapeMismatch {
                expected: (inputs.len(), 1),
                got: (upstream.len(), 1),
            });
        }
        let (_, tape) = self.run(inputs)?;
        Ok(self.unwind(&tape, upstream))
    }

    /// Mean per-sample loss over the batch and its parameter gradient.
    pub fn loss_and_grad(&self, inputs: &[NetInput], targets: &[CMat]) -> Result<(f64, Vec<f64>)> {
        let (outs, tape) = self.run(inputs)?;
        let b = inputs.len().max(1) as f64;
        let mut total = 0.0;
        let mut up = Vec::with_capacity(outs.len());
        for (o, t) in outs.iter().zip(targets) {
            total += loss(t, o);
            let s = 2.0 / (t.re.len() as f64 * b);
            up.push(CMat {
                re: (&o.re - &t.re) * s,
                im: (&o.im - &t.im) * s,
            });
        }
        Ok((total / b, self.unwind(&tape, &up)))
    }

    /// Mean per-sample loss over the batch.
    pub fn batch_loss(&self, inputs: &[NetInput], targets: &[CMat]) -> Result<f64> {
        let outs = self.forward_batch(inputs)?;
        let b = inputs.len().max(1) as f64;
        Ok(outs.iter().zip(targets).map(|(o, t)| loss(t, o)).sum::<f64>() / b)
    }
}
