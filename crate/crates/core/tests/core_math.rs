use proptest::collection::vec;
use proptest::prelude::*;
use twostream::rng::{seeded_init, Init};
use twostream::tensor::{affine, argmax, cross_entropy, softmax, softmax_cross_entropy_grad};
use twostream::{Error, Rng, Tensor};

fn loss_of_logits(z: &[f64], y: usize) -> f64 {
    cross_entropy(softmax(z).unwrap().values(), y).unwrap()
}

/// Fourth-order central difference of the logit loss along coordinate `i`.
fn fd_logit_grad(z: &[f64], y: usize, i: usize) -> f64 {
    let h = 1e-3;
    let at = |d: f64| {
        let mut w = z.to_vec();
        w[i] += d;
        loss_of_logits(&w, y)
    };
    (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h)
}

proptest! {
    #[test]
    fn softmax_sums_to_one(z in vec(-100.0f64..100.0, 1..20)) {
        let p = softmax(&z).unwrap();
        prop_assert!((p.values().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn softmax_shift_invariant(z in vec(-100.0f64..100.0, 1..20), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let a = softmax(&z).unwrap();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn logit_gradient_is_p_minus_onehot(z in vec(-5.0f64..5.0, 2..12), pick in 0usize..1000) {
        let y = pick % z.len();
        let p = softmax(&z).unwrap();
        let closed: Vec<f64> = p.values().iter().enumerate().map(|(i, &v)| v - f64::from(u8::from(i == y))).collect();
        let prod = softmax_cross_entropy_grad(p.values(), y).unwrap();
        // The probability floor adds exactly (floor / (p_y + floor)) * (p - onehot).
        let floor_term = 1e-12 / (p.values()[y] + 1e-12);
        for (i, (&want, &exact)) in closed.iter().zip(prod.values()).enumerate() {
            let fd = fd_logit_grad(&z, y, i);
            prop_assert!((fd - exact).abs() <= 1e-10, "fd {} analytic {}", fd, exact);
            prop_assert!((fd - want).abs() <= 1e-10 + floor_term * want.abs(), "fd {} closed {}", fd, want);
        }
    }

    #[test]
    fn affine_is_linear(
        rows in 1usize..8,
        cols in 1usize..8,
        seed in 0u64..1000,
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let mut rng = Rng::new(seed);
        let mut draw = |n: usize| (0..n).map(|_| rng.normal()).collect::<Vec<f64>>();
        let w = Tensor::new(vec![rows, cols], draw(rows * cols)).unwrap();
        let b = Tensor::vector(draw(rows));
        let x = draw(cols);
        let y = draw(cols);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(a, c)| alpha * a + beta * c).collect();
        let lhs = affine(&mix, &w, &b).unwrap();
        let ax = affine(&x, &w, &b).unwrap();
        let ay = affine(&y, &w, &b).unwrap();
        for r in 0..rows {
            let rhs = alpha * ax.values()[r] + beta * ay.values()[r] - (alpha + beta - 1.0) * b.values()[r];
            prop_assert!((lhs.values()[r] - rhs).abs() <= 1e-10);
        }
    }

    #[test]
    fn glorot_within_bound(rows in 1usize..30, cols in 1usize..30, seed in 0u64..1000) {
        let t = seeded_init(&[rows, cols], Init::GlorotUniform, &mut Rng::new(seed));
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        prop_assert!(t.values().iter().all(|v| v.abs() <= bound));
        let again = seeded_init(&[rows, cols], Init::GlorotUniform, &mut Rng::new(seed));
        prop_assert_eq!(t, again);
    }
}

#[test]
fn init_schemes() {
    let z = seeded_init(&[4, 5], Init::Zeros, &mut Rng::new(1));
    assert!(z.values().iter().all(|&v| v == 0.0));
    let c = seeded_init(&[3], Init::Constant(2.5), &mut Rng::new(1));
    assert_eq!(c.values(), &[2.5, 2.5, 2.5]);
    let g = seeded_init(&[3, 3], Init::GlorotUniform, &mut Rng::new(1));
    assert!(g.values().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn affine_shape_error_names_both_shapes() {
    let w = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[2]);
    let err = affine(&[1.0, 2.0], &w, &b).unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }));
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
}

#[test]
fn hand_examples() {
    let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
    for (a, b) in p.values().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((cross_entropy(&[0.25, 0.75], 0).unwrap() - 4f64.ln()).abs() < 1e-10);
    assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
    assert_eq!(argmax(&[0.5, 0.5]), 0);
    assert!(softmax(&[]).is_err());
}
