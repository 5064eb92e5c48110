use proptest::prelude::*;

use super::*;

fn tensor(shape: Vec<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

/// Input, kernel and output-gradient shapes of a valid convolution.
fn conv_triple() -> impl Strategy<Value = (Tensor, Tensor, Tensor)> {
    (1usize..4, 1usize..4, 1usize..4, 1usize..4, 0usize..5, 0usize..5).prop_flat_map(|(ci, co, kh, kw, eh, ew)| {
        let (h, w) = (kh + eh, kw + ew);
        (
            tensor(vec![ci, h, w], -2.0, 2.0),
            tensor(vec![co, ci, kh, kw], -2.0, 2.0),
            tensor(vec![co, eh + 1, ew + 1], -2.0, 2.0),
        )
    })
}

/// Non-negative pooled values with one random switch per window.
fn pooled_and_switches() -> impl Strategy<Value = (Tensor, SwitchMask)> {
    (1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(c, ph, pw)| {
        (tensor(vec![c, ph, pw], 0.0, 3.0), prop::collection::vec(0usize..4, c * ph * pw)).prop_map(
            move |(s, picks)| {
                let (h, w) = (2 * ph, 2 * pw);
                let mut flags = vec![false; c * h * w];
                for (k, p) in picks.iter().enumerate() {
                    let (ch, py, px) = (k / (ph * pw), (k / pw) % ph, k % pw);
                    flags[(ch * h + 2 * py + p / 2) * w + 2 * px + p % 2] = true;
                }
                (s, SwitchMask::new([c, h, w], flags).unwrap())
            },
        )
    })
}

proptest! {
    #[test]
    fn conv_transpose_is_the_adjoint((x, k, y) in conv_triple()) {
        let lhs = conv2d(&x, &k).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&conv2d_transpose(&y, &k).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn pooling_undoes_unpooling((s, sw) in pooled_and_switches()) {
        let up = unpool2d(&s, &sw).unwrap();
        prop_assert_eq!(maxpool2d(&up).unwrap().0, s);
        for (v, f) in up.data().iter().zip(sw.flags()) {
            prop_assert!(*f || *v == 0.0);
        }
    }

    #[test]
    fn pooling_a_relu_map_round_trips(x in tensor(vec![2, 6, 4], -1.0, 1.0)) {
        let (p, sw) = maxpool2d(&x.relu()).unwrap();
        let (again, sw2) = maxpool2d(&unpool2d(&p, &sw).unwrap()).unwrap();
        prop_assert_eq!(again, p);
        let positive = sw.flags().iter().zip(x.data()).all(|(f, v)| !f || *v > 0.0);
        if positive {
            prop_assert_eq!(sw2, sw);
        }
    }

    #[test]
    fn spd_solve_residual(a in tensor(vec![6, 6], -1.0, 1.0), rhs in tensor(vec![6, 3], -5.0, 5.0)) {
        let m = matmul(&a, &a.transpose2().unwrap()).unwrap().add(&Tensor::eye(6)).unwrap();
        let x = solve_spd(&m, &rhs, "test").unwrap();
        let r = matmul(&m, &x).unwrap().sub(&rhs).unwrap().norm() / rhs.norm().max(1e-300);
        prop_assert!(r <= 1e-8);
    }
}
