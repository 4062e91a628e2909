//! Laplacian pyramid loss, assembled from graph primitives so it is
//! differentiable end to end.

use super::graph::{Graph, Real, Shape, Tensor};

/// Binomial (1,4,6,4,1)/16 blur as a 5x5 outer-product kernel.
fn pyramid_kernel<F: Real>() -> Vec<F> {
    let taps = [1.0f64, 4.0, 6.0, 4.0, 1.0];
    let mut k = Vec::with_capacity(25);
    for &a in &taps {
        for &b in &taps {
            k.push(F::from(a * b / 256.0).unwrap());
        }
    }
    k
}

/// Gaussian pyramid by blur + stride-2 decimation; one entry per level,
/// stopping once a side would fall below 2 pixels.
pub(crate) fn gaussian_pyramid<F: Real>(g: &mut Graph<F>, x: Tensor, levels: usize) -> Vec<Tensor> {
    assert_eq!(g.shape(x).ch(), 1, "pyramid expects a single channel");
    let kernel = g.leaf(Shape::oikk(1, 1, 5, 5), pyramid_kernel());
    let mut out = vec![x];
    for _ in 0..levels {
        let top = *out.last().unwrap();
        if g.shape(top).h() < 2 || g.shape(top).w() < 2 {
            break;
        }
        let next = g.conv2d(top, kernel, None, 2, 2);
        out.push(next);
    }
    out
}

/// Per-level band-pass maps `G_l - upsample(G_{l+1})`, cropped back when the
/// upsampled grid overshoots an odd dimension.
pub(crate) fn laplacian_levels<F: Real>(g: &mut Graph<F>, pyramid: &[Tensor]) -> Vec<Tensor> {
    let mut laps = Vec::new();
    for win in pyramid.windows(2) {
        let (fine, coarse) = (win[0], win[1]);
        let up = g.upsample_bilinear_2x(coarse);
        let (h, w) = (g.shape(fine).h(), g.shape(fine).w());
        let up = g.crop(up, h, w);
        laps.push(g.sub(fine, up));
    }
    laps
}

/// Multi-scale L1: `sum_l 2^l * L1(lap_l(pred), lap_l(gt))`. The level count
/// adapts downward on inputs too small for the requested depth.
pub fn laplacian_loss<F: Real>(
    g: &mut Graph<F>,
    pred: Tensor,
    gt: Tensor,
    levels: usize,
) -> Tensor {
    assert!(levels >= 1, "need at least one pyramid level");
    assert_eq!(g.shape(pred), g.shape(gt), "laplacian loss shapes differ");
    let pp = gaussian_pyramid(g, pred, levels);
    let pg = gaussian_pyramid(g, gt, levels);
    let lp = laplacian_levels(g, &pp);
    let lg = laplacian_levels(g, &pg);
    let mut total: Option<Tensor> = None;
    for (l, (&a, &b)) in lp.iter().zip(lg.iter()).enumerate() {
        let term = g.l1_loss(a, b);
        let weighted = g.scale(term, F::from((1u64 << l) as f64).unwrap());
        total = Some(match total {
            Some(t) => g.add(t, weighted),
            None => weighted,
        });
    }
    total.expect("inputs too small for any pyramid level")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn zero_at_equality() {
        let data = rand_vec(64 * 64, 5);
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(Shape::chw(1, 64, 64), data.clone());
        let b = g.leaf(Shape::chw(1, 64, 64), data);
        let loss = laplacian_loss(&mut g, a, b, 5);
        assert_eq!(g.scalar_value(loss), 0.0);
    }

    #[test]
    fn symmetric_in_arguments() {
        let da = rand_vec(32 * 32, 6);
        let db = rand_vec(32 * 32, 7);
        let run = |x: &[f64], y: &[f64]| -> f64 {
            let mut g: Graph<f64> = Graph::new();
            let a = g.leaf(Shape::chw(1, 32, 32), x.to_vec());
            let b = g.leaf(Shape::chw(1, 32, 32), y.to_vec());
            let loss = laplacian_loss(&mut g, a, b, 5);
            g.scalar_value(loss)
        };
        assert!((run(&da, &db) - run(&db, &da)).abs() < 1e-9);
    }

    #[test]
    fn kernel_is_normalized() {
        let k: Vec<f64> = pyramid_kernel();
        let sum: f64 = k.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((k[12] - 36.0 / 256.0).abs() < 1e-12);
    }

    #[test]
    fn pyramid_halves_and_caps() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Shape::chw(1, 64, 64), rand_vec(64 * 64, 8));
        let p = gaussian_pyramid(&mut g, x, 5);
        let sizes: Vec<usize> = p.iter().map(|&t| g.shape(t).h()).collect();
        assert_eq!(sizes, vec![64, 32, 16, 8, 4, 2]);

        let mut g2: Graph<f64> = Graph::new();
        let small = g2.leaf(Shape::chw(1, 8, 8), rand_vec(64, 9));
        let p2 = gaussian_pyramid(&mut g2, small, 5);
        let sizes2: Vec<usize> = p2.iter().map(|&t| g2.shape(t).h()).collect();
        // depth adapts: 8 -> 4 -> 2, then a side would drop below 2
        assert_eq!(sizes2, vec![8, 4, 2, 1]);
    }

    #[test]
    fn odd_sizes_crop_cleanly() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(Shape::chw(1, 7, 9), rand_vec(63, 10));
        let b = g.leaf(Shape::chw(1, 7, 9), rand_vec(63, 11));
        let loss = laplacian_loss(&mut g, a, b, 5);
        assert!(g.scalar_value(loss).is_finite());
        g.backward(loss);
        assert!(g.grad(a).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn deeper_levels_weigh_more() {
        // two errors with the same mean magnitude 0.1: a constant offset
        // (survives blurring, lands in the 2^l-weighted coarse levels) and a
        // checkerboard (killed by the first blur, lands only in level 0)
        let flat = vec![0.5f64; 32 * 32];
        let shifted = vec![0.6f64; 32 * 32];
        let checker: Vec<f64> = (0..32 * 32)
            .map(|i| 0.5 + if (i / 32 + i % 32) % 2 == 0 { 0.1 } else { -0.1 })
            .collect();
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(Shape::chw(1, 32, 32), flat.clone());
        let b_low = g.leaf(Shape::chw(1, 32, 32), shifted);
        let low = laplacian_loss(&mut g, a, b_low, 5);
        let a2 = g.leaf(Shape::chw(1, 32, 32), flat);
        let b_high = g.leaf(Shape::chw(1, 32, 32), checker);
        let high = laplacian_loss(&mut g, a2, b_high, 5);
        let (vl, vh) = (g.scalar_value(low), g.scalar_value(high));
        assert!(vl > 0.0 && vh > 0.0);
        assert!(vl > 2.0 * vh, "low-freq {vl} should outweigh high-freq {vh}");
    }
}
