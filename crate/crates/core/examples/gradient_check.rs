//! Compares the hand-written backward pass of a tiny network with central
//! finite differences on random coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gcd::net::{Activation, CMat, Model, ModelConfig, ModelKind, NetInput};

fn main() -> gcd::Result<()> {
    let cfg = ModelConfig {
        kind: ModelKind::Gcd,
        k: 1,
        l: 1,
        hidden: 8,
        heads: 2,
        ffn_mult: 2,
        n_t: 2,
        n_c: 4,
        n_t0: 1,
        n_c0: 2,
        activation: Activation::Gelu,
        seed: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cm = |r: usize, c: usize| CMat {
        re: ndarray::Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0)),
        im: ndarray::Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0)),
    };
    let inputs = vec![
        NetInput { partial: cm(1, 2), pseudos: vec![cm(2, 4), cm(2, 4)] },
        NetInput { partial: cm(1, 2), pseudos: vec![] },
    ];
    let targets = vec![cm(2, 4), cm(2, 4)];

    let model = Model::new(cfg)?;
    let (l, g) = model.loss_and_grad(&inputs, &targets)?;
    println!("{} parameters, loss {l:.6}", model.param_count());
    let mut pick = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let i = pick.random_range(0..model.param_count());
        let h = 1e-5;
        let mut m = model.clone();
        m.params[i] += h;
        let up = m.batch_loss(&inputs, &targets)?;
        m.params[i] -= 2.0 * h;
        let down = m.batch_loss(&inputs, &targets)?;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-7);
        worst = worst.max(rel);
        println!("  param {i:>4}: analytic {:+.6e}  numeric {fd:+.6e}", g[i]);
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
