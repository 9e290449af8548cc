//! Central finite differences against the reverse pass, and the conv /
//! transposed-conv adjoint identity.

use mmdr_core::gridnet::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const LAYER_TOL: f64 = 1e-4;
const INSTANCES: usize = 20;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Compares analytic gradients of `build` w.r.t. every input against central
/// differences. Returns the worst relative error.
fn check<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &vars);
    assert!(g.value(loss).all_finite());
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
        .collect();
    for a in &analytic {
        assert!(a.all_finite());
    }

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.input(t.clone())).collect();
        let l = build(&mut g, &vars);
        g.value(l).item()
    };

    let mut worst: f64 = 0.0;
    for (ti, t) in inputs.iter().enumerate() {
        for e in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[e] += STEP;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[e] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[ti].data()[e], numeric));
        }
    }
    worst
}

/// Scalar head giving every output element a distinct upstream gradient.
fn project(g: &mut Graph, y: Var, target: &Tensor) -> Var {
    let p = g.sigmoid(y);
    g.bce(p, target.clone(), None).unwrap()
}

fn small_dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    (
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(3..=6),
        rng.random_range(3..=6),
    )
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..INSTANCES {
        let (b, ci, h, w) = small_dims(&mut rng);
        let co = rng.random_range(1..=3);
        let k = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=k / 2 + 1).min(k);
        let x = rand_tensor(&mut rng, [b, ci, h, w], -1.0, 1.0);
        let wt = rand_tensor(&mut rng, [co, ci, k, k], -1.0, 1.0);
        let bias = rand_tensor(&mut rng, [1, co, 1, 1], -0.5, 0.5);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let target = rand_tensor(&mut rng, [b, co, ho, wo], 0.0, 1.0);
        let err = check(&[x, wt, bias], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
            project(g, y, &target)
        });
        assert!(err < LAYER_TOL, "conv2d rel err {err}");
    }
}

#[test]
fn conv_weight_gradient_on_4x4() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let x = rand_tensor(&mut rng, [1, 1, 4, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, [2, 1, 3, 3], -1.0, 1.0);
    let target = rand_tensor(&mut rng, [1, 2, 4, 4], 0.0, 1.0);
    let err = check(&[x, w], |g, v| {
        let y = g.conv2d(v[0], v[1], None, 1, 1).unwrap();
        project(g, y, &target)
    });
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn transposed_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..INSTANCES {
        let (b, ci, h, w) = small_dims(&mut rng);
        let (h, w) = (h.min(4), w.min(4));
        let co = rng.random_range(1..=3);
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        let pad = if k > 2 { rng.random_range(0..=1) } else { 0 };
        let x = rand_tensor(&mut rng, [b, ci, h, w], -1.0, 1.0);
        let wt = rand_tensor(&mut rng, [ci, co, k, k], -1.0, 1.0);
        let bias = rand_tensor(&mut rng, [1, co, 1, 1], -0.5, 0.5);
        let ho = (h - 1) * stride + k - 2 * pad;
        let wo = (w - 1) * stride + k - 2 * pad;
        let target = rand_tensor(&mut rng, [b, co, ho, wo], 0.0, 1.0);
        let err = check(&[x, wt, bias], |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
            project(g, y, &target)
        });
        assert!(err < LAYER_TOL, "conv_transpose2d rel err {err}");
    }
}

#[test]
fn pointwise_concat_slice_add_scale_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..INSTANCES {
        let (b, ci, h, w) = small_dims(&mut rng);
        let c2 = rng.random_range(1..=3);
        let co = rng.random_range(1..=3);
        let x1 = rand_tensor(&mut rng, [b, ci, h, w], -1.0, 1.0);
        let x2 = rand_tensor(&mut rng, [b, c2, h, w], -1.0, 1.0);
        let x3 = rand_tensor(&mut rng, [b, co, h, w], -1.0, 1.0);
        let wt = rand_tensor(&mut rng, [co, ci + c2, 1, 1], -1.0, 1.0);
        let target = rand_tensor(&mut rng, [b, co - co / 2, h, w], 0.0, 1.0);
        let err = check(&[x1, x2, x3, wt], |g, v| {
            let cat = g.concat_channels(&[v[0], v[1]]).unwrap();
            let y = g.pointwise_conv(cat, v[3], None).unwrap();
            let y = g.add(y, v[2]).unwrap();
            let y = g.scale(y, -0.7);
            let y = g.slice_channels(y, co / 2, co).unwrap();
            project(g, y, &target)
        });
        assert!(err < LAYER_TOL, "rel err {err}");
    }
}

#[test]
fn activation_and_reduction_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..INSTANCES {
        let (b, c, h, w) = small_dims(&mut rng);
        // keep leaky-relu inputs away from the kink
        let mut x = rand_tensor(&mut rng, [b, c, h, w], 0.05, 1.5);
        for v in x.data_mut() {
            if rng.random_bool(0.5) {
                *v = -*v;
            }
        }
        let target = rand_tensor(&mut rng, [b, c, h, w], 0.0, 1.0);
        let err = check(&[x.clone()], |g, v| {
            let y = g.leaky_relu(v[0], 0.1);
            project(g, y, &target)
        });
        assert!(err < LAYER_TOL, "leaky_relu {err}");
        let err = check(&[x.clone()], |g, v| {
            let s = g.sigmoid(v[0]);
            let s = g.scale(s, 3.0);
            let a = g.sum(s);
            let m = g.mean(v[0]);
            let m = g.scale(m, 2.0);
            let t = g.add(a, m).unwrap();
            project(g, t, &Tensor::scalar(0.3))
        });
        assert!(err < LAYER_TOL, "sigmoid/sum/mean {err}");
    }
}

#[test]
fn sigmoid_gradient_at_zero() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(0.0), true);
    let y = g.sigmoid(x);
    let l = g.sum(y);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 0.25);
    let fd = (mmdr_core::math::sigmoid(STEP) - mmdr_core::math::sigmoid(-STEP)) / (2.0 * STEP);
    assert!((fd - 0.25).abs() < 1e-10);
}

#[test]
fn bce_gradients_with_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..INSTANCES {
        let (b, c, h, w) = small_dims(&mut rng);
        let p = rand_tensor(&mut rng, [b, c, h, w], 0.05, 0.95);
        let target = rand_tensor(&mut rng, [b, c, h, w], 0.0, 1.0);
        let mut mask = Tensor::zeros([b, c, h, w]);
        for v in mask.data_mut() {
            *v = if rng.random_bool(0.6) { 1.0 } else { 0.0 };
        }
        mask.data_mut()[0] = 1.0;
        let err = check(&[p], |g, v| g.bce(v[0], target.clone(), Some(mask.clone())).unwrap());
        assert!(err < LAYER_TOL, "bce {err}");
    }
}

/// Random reg values whose decoded boxes overlap the target clearly.
fn box_instance(rng: &mut ChaCha8Rng, b: usize, gx: usize, gy: usize) -> (Tensor, Tensor, Tensor) {
    let reg = rand_tensor(rng, [b, 4, gx, gy], -0.3, 0.3);
    let mut target = Tensor::zeros([b, 4, gx, gy]);
    let mut mask = Tensor::zeros([b, 1, gx, gy]);
    for bi in 0..b {
        for i in 0..gx {
            for j in 0..gy {
                if !rng.random_bool(0.5) {
                    continue;
                }
                mask.set(bi, 0, i, j, 1.0);
                let cx = (i as f64 + 0.5 + rng.random_range(-0.25..0.25)) / gx as f64;
                let cy = (j as f64 + 0.5 + rng.random_range(-0.25..0.25)) / gy as f64;
                let hw = rng.random_range(0.7..1.6) / (2.0 * gx as f64);
                let hh = rng.random_range(0.7..1.6) / (2.0 * gy as f64);
                target.set(bi, 0, i, j, cx - hw);
                target.set(bi, 1, i, j, cy - hh);
                target.set(bi, 2, i, j, cx + hw);
                target.set(bi, 3, i, j, cy + hh);
            }
        }
        mask.set(bi, 0, 0, 0, 1.0);
        target.set(bi, 0, 0, 0, 0.1 / gx as f64);
        target.set(bi, 1, 0, 0, 0.2 / gy as f64);
        target.set(bi, 2, 0, 0, 0.9 / gx as f64);
        target.set(bi, 3, 0, 0, 1.3 / gy as f64);
    }
    (reg, target, mask)
}

fn boxes_are_nondegenerate(reg: &Tensor, target: &Tensor, mask: &Tensor) -> bool {
    // edges must not coincide within the FD step (the IoU kink)
    let mut g = Graph::new();
    let r = g.input(reg.clone());
    let d = g.decode_boxes(r).unwrap();
    let p = g.value(d);
    let [b, _, gx, gy] = p.shape();
    for bi in 0..b {
        for i in 0..gx {
            for j in 0..gy {
                if mask.get(bi, 0, i, j) == 0.0 {
                    continue;
                }
                for c in 0..4 {
                    if (p.get(bi, c, i, j) - target.get(bi, c, i, j)).abs() < 1e-3 {
                        return false;
                    }
                }
            }
        }
    }
    true
}

#[test]
fn decode_and_iou_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checked = 0;
    while checked < INSTANCES {
        let b = rng.random_range(1..=2);
        let gx = rng.random_range(2..=5);
        let gy = rng.random_range(2..=5);
        let (reg, target, mask) = box_instance(&mut rng, b, gx, gy);
        if !boxes_are_nondegenerate(&reg, &target, &mask) {
            continue;
        }
        let err = check(&[reg], |g, v| {
            let boxes = g.decode_boxes(v[0]).unwrap();
            g.iou_loss(boxes, target.clone(), mask.clone()).unwrap()
        });
        assert!(err < LAYER_TOL, "iou_loss {err}");
        checked += 1;
    }
}

#[test]
fn smooth_l1_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..INSTANCES {
        let (b, c, h, w) = small_dims(&mut rng);
        let p = rand_tensor(&mut rng, [b, c, h, w], -2.0, 2.0);
        let mut target = p.clone();
        for v in target.data_mut() {
            // offsets away from the |d| = 1 switch point
            let d = rng.random_range(0.1..0.8) * if rng.random_bool(0.5) { 1.0 } else { 2.5 };
            *v += if rng.random_bool(0.5) { d } else { -d };
        }
        let mut mask = Tensor::full([b, 1, h, w], 1.0);
        mask.data_mut()[h * w - 1] = 0.0;
        let err = check(&[p], |g, v| g.smooth_l1(v[0], target.clone(), mask.clone()).unwrap());
        assert!(err < LAYER_TOL, "smooth_l1 {err}");
    }
}

#[test]
fn conv_and_transposed_conv_are_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..INSTANCES {
        let b = rng.random_range(1..=2);
        let ci = rng.random_range(1..=4);
        let co = rng.random_range(1..=4);
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        let pad = rng.random_range(0..=(k - 1) / 2);
        // choose sizes where the transposed output shape equals the conv input
        let ho = rng.random_range(1..=5);
        let wo = rng.random_range(1..=5);
        let h = (ho - 1) * stride + k - 2 * pad;
        let w = (wo - 1) * stride + k - 2 * pad;
        let x = rand_tensor(&mut rng, [b, ci, h, w], -1.0, 1.0);
        let y = rand_tensor(&mut rng, [b, co, ho, wo], -1.0, 1.0);
        let wt = rand_tensor(&mut rng, [co, ci, k, k], -1.0, 1.0);

        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let yv = g.input(y.clone());
        let wv = g.input(wt);
        let cx = g.conv2d(xv, wv, None, stride, pad).unwrap();
        let ty = g.conv_transpose2d(yv, wv, None, stride, pad).unwrap();
        assert_eq!(g.value(cx).shape(), y.shape());
        assert_eq!(g.value(ty).shape(), x.shape());
        let lhs = g.value(cx).dot(&y);
        let rhs = x.dot(g.value(ty));
        assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
    }
}

#[test]
fn transposed_k1_equals_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, [1, 3, 4, 5], -1.0, 1.0);
    let w = rand_tensor(&mut rng, [3, 2, 1, 1], -1.0, 1.0);
    // pointwise weight is (out, in, 1, 1): transpose channels
    let mut wp = Tensor::zeros([2, 3, 1, 1]);
    for i in 0..3 {
        for o in 0..2 {
            wp.set(o, i, 0, 0, w.get(i, o, 0, 0));
        }
    }
    let mut g = Graph::new();
    let xv = g.input(x);
    let wv = g.input(w);
    let wpv = g.input(wp);
    let a = g.conv_transpose2d(xv, wv, None, 1, 0).unwrap();
    let b = g.pointwise_conv(xv, wpv, None).unwrap();
    let c = g.conv2d(xv, wpv, None, 1, 0).unwrap();
    assert_eq!(g.value(a), g.value(b));
    assert_eq!(g.value(b), g.value(c));
}

#[test]
fn pointwise_identity_and_concat_single() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = rand_tensor(&mut rng, [1, 3, 4, 4], -1.0, 1.0);
    let mut eye = Tensor::zeros([3, 3, 1, 1]);
    for c in 0..3 {
        eye.set(c, c, 0, 0, 1.0);
    }
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let e = g.input(eye);
    let zero = g.input(Tensor::zeros([1, 3, 1, 1]));
    let y = g.pointwise_conv(xv, e, Some(zero)).unwrap();
    assert_eq!(g.value(y), &x);
    let same = g.concat_channels(&[xv]).unwrap();
    assert_eq!(same, xv);
}

#[test]
fn concat_gradient_is_ones_per_input() {
    let mut g = Graph::new();
    let parts: Vec<Var> = (0..3).map(|_| g.leaf(Tensor::full([1, 1, 6, 6], 0.2), true)).collect();
    let cat = g.concat_channels(&parts).unwrap();
    assert_eq!(g.value(cat).shape(), [1, 3, 6, 6]);
    let s = g.sum(cat);
    g.backward(s).unwrap();
    for p in parts {
        assert!(g.grad(p).unwrap().data().iter().all(|&v| v == 1.0));
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, [2, 3, 6, 6], -1.0, 1.0);
        let w = rand_tensor(&mut rng, [4, 3, 3, 3], -1.0, 1.0);
        let wt = rand_tensor(&mut rng, [4, 2, 2, 2], -1.0, 1.0);
        let mut g = Graph::new();
        let xv = g.input(x);
        let wv = g.input(w);
        let wtv = g.input(wt);
        let y = g.conv2d(xv, wv, None, 2, 1).unwrap();
        let y = g.leaky_relu(y, 0.1);
        let y = g.conv_transpose2d(y, wtv, None, 2, 0).unwrap();
        g.value(y).clone()
    };
    let a = run();
    let b = run();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn full_scale_shapes() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros([1, 256, 160, 160]));
    let w = g.input(Tensor::zeros([32, 256, 3, 3]));
    let y = g.conv2d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.value(y).shape(), [1, 32, 80, 80]);
}
