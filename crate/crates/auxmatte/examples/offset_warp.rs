//! The differentiable offset warp on its own: identity under zero offsets,
//! translation under constant offsets, and gradients that reach the offset
//! field through the bilinear taps.

use auxmatte::autodiff::{Graph, Shape};

fn main() {
    let (h, w) = (6usize, 8usize);
    let ramp: Vec<f64> = (0..h * w).map(|p| (p % w) as f64 * 0.1).collect();

    // zero offsets reproduce the input bit for bit
    let mut g: Graph<f64> = Graph::new();
    let ma = g.leaf(Shape::chw(1, h, w), ramp.clone());
    let zero = g.leaf(Shape::chw(2, h, w), vec![0.0; 2 * h * w]);
    let se = g.warp_with_offsets(ma, zero);
    let identical = g
        .data(se)
        .iter()
        .zip(ramp.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!("zero-offset warp is bit-exact identity: {identical}");

    // constant +1 px x-offset samples one column to the right
    let mut g: Graph<f64> = Graph::new();
    let ma = g.leaf(Shape::chw(1, h, w), ramp.clone());
    let mut dd = vec![0.0; 2 * h * w];
    dd[..h * w].fill(1.0);
    let delta = g.leaf(Shape::chw(2, h, w), dd);
    let se = g.warp_with_offsets(ma, delta);
    let interior_shift = (0..h)
        .flat_map(|y| (0..w - 1).map(move |x| (y, x)))
        .map(|(y, x)| (g.data(se)[y * w + x] - ramp[y * w + x + 1]).abs())
        .fold(0.0f64, f64::max);
    println!("constant +1 px offset: max interior error vs shifted input {interior_shift:.2e}");

    // L1 between warped and original pulls gradient into the offsets
    let mut g: Graph<f64> = Graph::new();
    let ma = g.leaf(Shape::chw(1, h, w), ramp.clone());
    let dd = vec![0.37; 2 * h * w];
    let delta = g.leaf(Shape::chw(2, h, w), dd);
    let se = g.warp_with_offsets(ma, delta);
    let target = g.leaf(Shape::chw(1, h, w), ramp);
    let loss = g.l1_loss(se, target);
    g.backward(loss);
    let gmax = g.grad(delta).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let gnonzero = g.grad(delta).iter().filter(|&&v| v != 0.0).count();
    println!(
        "offset gradient: {gnonzero} of {} entries nonzero, max |g| {gmax:.3e}",
        2 * h * w
    );
}
