use super::testutil::*;
use super::*;
use crate::error::Error;
use proptest::prelude::*;
use rand::Rng;

fn var(tape: &Tape, shape: &[usize], data: Vec<f32>) -> Tensor {
    tape.var(shape, data).unwrap()
}

#[test]
fn elementwise_values_and_grads() {
    let tape = Tape::new();
    let a = var(&tape, &[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let b = var(&tape, &[2, 2], vec![0.5, 1.0, 1.5, 2.0]);
    let d = sub(&a, &b).unwrap();
    let loss = mean(&mul(&d, &d).unwrap()).unwrap();
    let want = (0.25 + 1.0 + 2.25 + 4.0) / 4.0;
    assert!((loss.item() - want).abs() < 1e-6);
    backward(&loss).unwrap();
    let ga = a.grad().unwrap();
    // d mean((a-b)^2) / da = 2(a-b)/n
    for (g, d) in ga.iter().zip([0.5, 1.0, 1.5, 2.0]) {
        assert!((g - 2.0 * d / 4.0).abs() < 1e-6);
    }
    let gb = b.grad().unwrap();
    for (ga, gb) in ga.iter().zip(&gb) {
        assert!((ga + gb).abs() < 1e-7);
    }
}

#[test]
fn mul_same_input_accumulates_both_sides() {
    let tape = Tape::new();
    let x = var(&tape, &[3], vec![1.5, -2.0, 0.25]);
    let y = sum(&mul(&x, &x).unwrap()).unwrap();
    backward(&y).unwrap();
    for (g, x) in y_grad(&x).iter().zip([1.5f32, -2.0, 0.25]) {
        assert!((g - 2.0 * x).abs() < 1e-6);
    }
}

fn y_grad(t: &Tensor) -> Vec<f32> {
    t.grad().expect("grad missing")
}

#[test]
fn scalar_ops_and_relu_sqrt() {
    let tape = Tape::new();
    let x = var(&tape, &[4], vec![4.0, 0.0, -3.0, 9.0]);
    let r = relu(&x).unwrap();
    assert_eq!(r.data(), &[4.0, 0.0, 0.0, 9.0]);
    let s = sqrt(&relu(&x).unwrap()).unwrap();
    assert_eq!(s.data(), &[2.0, 0.0, 0.0, 3.0]);
    let y = sum(&mul_scalar(&add_scalar(&s, 1.0).unwrap(), 2.0).unwrap()).unwrap();
    assert!((y.item() - 2.0 * (3.0 + 1.0 + 1.0 + 4.0)).abs() < 1e-6);
    backward(&y).unwrap();
    let g = y_grad(&x);
    assert!((g[0] - 2.0 * 0.5 / 2.0).abs() < 1e-6);
    assert_eq!(g[2], 0.0);
    assert!((g[3] - 2.0 * 0.5 / 3.0).abs() < 1e-6);

    assert!(matches!(
        sqrt(&Tensor::constant(&[1], vec![-1.0]).unwrap()),
        Err(Error::NonFinite(_))
    ));
}

#[test]
fn mean_of_empty_like_shapes_rejected() {
    assert!(Tensor::constant(&[0], vec![]).is_ok());
    // shape/len mismatch is the error we care about
    assert!(Tensor::constant(&[3], vec![1.0]).is_err());
    assert!(matches!(
        add(
            &Tensor::constant(&[2], vec![1.0, 2.0]).unwrap(),
            &Tensor::constant(&[3], vec![1.0, 2.0, 3.0]).unwrap()
        ),
        Err(Error::Shape(_))
    ));
}

#[test]
fn backward_rules() {
    let tape = Tape::new();
    let x = var(&tape, &[2], vec![1.0, 2.0]);
    let y = mul(&x, &x).unwrap();
    assert!(matches!(backward(&y), Err(Error::Tape(_))), "non-scalar root");

    let other = Tape::new();
    let a = var(&tape, &[2], vec![1.0, 2.0]);
    let b = var(&other, &[2], vec![1.0, 2.0]);
    assert!(matches!(add(&a, &b), Err(Error::Tape(_))), "two tapes");

    // constants mix freely and receive no grad
    let c = Tensor::constant(&[2], vec![3.0, 4.0]).unwrap();
    let z = sum(&mul(&a, &c).unwrap()).unwrap();
    backward(&z).unwrap();
    assert_eq!(y_grad(&a), vec![3.0, 4.0]);
    assert!(c.grad().is_none());

    // dropped tape: ops run eagerly, backward has nothing to walk
    let orphan = {
        let t = Tape::new();
        let v = var(&t, &[1], vec![2.0]);
        drop(t);
        mul_scalar(&v, 3.0).unwrap()
    };
    assert_eq!(orphan.data(), &[6.0]);
    assert!(backward(&orphan).is_err());
}

#[test]
fn backward_accumulates_across_calls() {
    let tape = Tape::new();
    let x = var(&tape, &[2], vec![1.0, -1.0]);
    let y = sum(&mul(&x, &x).unwrap()).unwrap();
    backward(&y).unwrap();
    backward(&y).unwrap();
    assert_eq!(y_grad(&x), vec![4.0, -4.0]);
    x.clear_grad();
    assert!(x.grad().is_none());
}

#[test]
fn backward_deterministic_bitwise() {
    let run = || {
        let mut r = rng(7);
        let tape = Tape::new();
        let x = var(&tape, &[1, 3, 8, 8], rand_vec(&mut r, 192, -1.0, 1.0));
        let k = var(&tape, &[4, 3, 3, 3], rand_vec(&mut r, 108, -0.5, 0.5));
        let br = var(&tape, &[4], rand_vec(&mut r, 4, 0.5, 1.5));
        let gr = var(&tape, &[4, 4], rand_vec(&mut r, 16, -0.3, 0.3));
        let c = conv2d(&x, &k, 2, 1).unwrap();
        let g = gdn(&c, &br, &gr, false).unwrap();
        let loss = mean(&mul(&g, &g).unwrap()).unwrap();
        backward(&loss).unwrap();
        (y_grad(&x), y_grad(&k), y_grad(&br), y_grad(&gr))
    };
    let a = run();
    let b = run();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_eq!(a.3, b.3);
}

#[test]
fn conv2d_output_dims() {
    assert_eq!(conv2d_out_dim(224, 5, 2, 2), Some(112));
    assert_eq!(conv2d_out_dim(112, 5, 2, 2), Some(56));
    assert_eq!(conv2d_out_dim(5, 5, 1, 0), Some(1));
    assert_eq!(conv2d_out_dim(4, 5, 1, 0), None);
    assert_eq!(deconv2d_out_dim(28, 5, 2, 2), Some(55));
    assert_eq!(deconv2d_out_dim(28, 5, 2, 1), Some(57));
    assert_eq!(deconv2d_out_dim(1, 3, 2, 1), Some(1));
}

#[test]
fn conv2d_matches_direct_reference() {
    let mut r = rng(11);
    for trial in 0..50 {
        let n = r.gen_range(1..3usize);
        let ci = r.gen_range(1..4usize);
        let co = r.gen_range(1..5usize);
        let k = [1, 3, 5][r.gen_range(0..3usize)];
        let s = r.gen_range(1..4usize);
        let p = r.gen_range(0..3usize);
        let h = r.gen_range(k.max(3)..14usize);
        let w = r.gen_range(k.max(3)..14usize);
        let x = rand_vec(&mut r, n * ci * h * w, -2.0, 2.0);
        let kern = rand_vec(&mut r, co * ci * k * k, -1.0, 1.0);
        let xt = Tensor::constant(&[n, ci, h, w], x.clone()).unwrap();
        let kt = Tensor::constant(&[co, ci, k, k], kern.clone()).unwrap();
        let got = conv2d(&xt, &kt, s, p).unwrap();
        let want = conv2d_ref64(&to64(&x), n, ci, h, w, &to64(&kern), co, k, s, p);
        assert_eq!(got.numel(), want.len(), "trial {}", trial);
        let err = scaled_err(got.data(), &want);
        assert!(err < 1e-5, "trial {}: err {}", trial, err);
    }
}

#[test]
fn deconv2d_matches_direct_reference() {
    let mut r = rng(13);
    for trial in 0..50 {
        let n = r.gen_range(1..3usize);
        let co = r.gen_range(1..4usize);
        let ci = r.gen_range(1..4usize);
        let k = [1, 3, 5][r.gen_range(0..3usize)];
        let s = r.gen_range(1..3usize);
        let p = r.gen_range(0..k.min(2) + 1);
        let h = r.gen_range(2..9usize);
        let w = r.gen_range(2..9usize);
        if (h - 1) * s + k <= 2 * p || (w - 1) * s + k <= 2 * p {
            continue;
        }
        let x = rand_vec(&mut r, n * co * h * w, -2.0, 2.0);
        let kern = rand_vec(&mut r, co * ci * k * k, -1.0, 1.0);
        let xt = Tensor::constant(&[n, co, h, w], x.clone()).unwrap();
        let kt = Tensor::constant(&[co, ci, k, k], kern.clone()).unwrap();
        let got = deconv2d(&xt, &kt, s, p).unwrap();
        let want = deconv2d_ref64(&to64(&x), n, co, h, w, &to64(&kern), ci, k, s, p);
        let err = scaled_err(got.data(), &want);
        assert!(err < 1e-5, "trial {}: err {}", trial, err);
    }
}

#[test]
fn deconv_is_adjoint_of_conv() {
    let mut r = rng(17);
    for _ in 0..20 {
        let (ci, co, k, s) = (2, 3, 5, 2);
        let p = r.gen_range(0..3usize);
        // pick h so the conv tiling is exact and shapes match round trip
        let oh = r.gen_range(2..6usize);
        let h = (oh - 1) * s + k - 2 * p;
        let a = rand_vec(&mut r, ci * h * h, -1.0, 1.0);
        let kern = rand_vec(&mut r, co * ci * k * k, -1.0, 1.0);
        let at = Tensor::constant(&[1, ci, h, h], a.clone()).unwrap();
        let kt = Tensor::constant(&[co, ci, k, k], kern).unwrap();
        let ca = conv2d(&at, &kt, s, p).unwrap();
        assert_eq!(ca.shape(), &[1, co, oh, oh]);
        let b = rand_vec(&mut r, co * oh * oh, -1.0, 1.0);
        let bt = Tensor::constant(&[1, co, oh, oh], b.clone()).unwrap();
        let db = deconv2d(&bt, &kt, s, p).unwrap();
        assert_eq!(db.shape(), &[1, ci, h, h]);
        let lhs: f64 = ca.data().iter().zip(&b).map(|(&x, &y)| x as f64 * y as f64).sum();
        let rhs: f64 = db.data().iter().zip(&a).map(|(&x, &y)| x as f64 * y as f64).sum();
        assert!(
            rel_err(lhs, rhs) < 5e-4,
            "adjoint identity broke: {} vs {}",
            lhs,
            rhs
        );
    }
}

#[test]
fn conv2d_grad_matches_fd() {
    let mut r = rng(19);
    for _ in 0..50 {
        let (n, ci, co, k) = (1, 2, 2, 3);
        let s = r.gen_range(1..3usize);
        let p = r.gen_range(0..2usize);
        let h = r.gen_range(4..8usize);
        let x = rand_vec(&mut r, n * ci * h * h, -1.0, 1.0);
        let kern = rand_vec(&mut r, co * ci * k * k, -1.0, 1.0);
        let oh = conv2d_out_dim(h, k, s, p).unwrap();
        let proj = rand_vec(&mut r, n * co * oh * oh, -1.0, 1.0);

        let tape = Tape::new();
        let xt = var(&tape, &[n, ci, h, h], x.clone());
        let kt = var(&tape, &[co, ci, k, k], kern.clone());
        let pt = Tensor::constant(&[n, co, oh, oh], proj.clone()).unwrap();
        let loss = sum(&mul(&conv2d(&xt, &kt, s, p).unwrap(), &pt).unwrap()).unwrap();
        backward(&loss).unwrap();

        let proj64 = to64(&proj);
        let mut f = |params: &[Vec<f64>]| -> f64 {
            let out = conv2d_ref64(&params[0], n, ci, h, h, &params[1], co, k, s, p);
            out.iter().zip(&proj64).map(|(a, b)| a * b).sum()
        };
        let fd = fd_grad64(&mut f, &[to64(&x), to64(&kern)], 1e-3);
        assert!(max_rel_err(&y_grad(&xt), &fd[0]) < 1e-3);
        assert!(max_rel_err(&y_grad(&kt), &fd[1]) < 1e-3);
    }
}

#[test]
fn deconv2d_grad_matches_fd() {
    let mut r = rng(23);
    for _ in 0..50 {
        let (n, co, ci, k) = (1, 2, 2, 3);
        let s = r.gen_range(1..3usize);
        let p = r.gen_range(0..2usize);
        let h = r.gen_range(3..6usize);
        let x = rand_vec(&mut r, n * co * h * h, -1.0, 1.0);
        let kern = rand_vec(&mut r, co * ci * k * k, -1.0, 1.0);
        let oh = deconv2d_out_dim(h, k, s, p).unwrap();
        let proj = rand_vec(&mut r, n * ci * oh * oh, -1.0, 1.0);

        let tape = Tape::new();
        let xt = var(&tape, &[n, co, h, h], x.clone());
        let kt = var(&tape, &[co, ci, k, k], kern.clone());
        let pt = Tensor::constant(&[n, ci, oh, oh], proj.clone()).unwrap();
        let loss = sum(&mul(&deconv2d(&xt, &kt, s, p).unwrap(), &pt).unwrap()).unwrap();
        backward(&loss).unwrap();

        let proj64 = to64(&proj);
        let mut f = |params: &[Vec<f64>]| -> f64 {
            let out = deconv2d_ref64(&params[0], n, co, h, h, &params[1], ci, k, s, p);
            out.iter().zip(&proj64).map(|(a, b)| a * b).sum()
        };
        let fd = fd_grad64(&mut f, &[to64(&x), to64(&kern)], 1e-3);
        assert!(max_rel_err(&y_grad(&xt), &fd[0]) < 1e-3);
        assert!(max_rel_err(&y_grad(&kt), &fd[1]) < 1e-3);
    }
}

#[test]
fn gdn_identity_configs() {
    let mut r = rng(29);
    let x = rand_vec(&mut r, 2 * 3 * 4 * 4, -2.0, 2.0);
    let xt = Tensor::constant(&[2, 3, 4, 4], x.clone()).unwrap();
    // beta == 1 (raw 1 -> 1 + 1e-6), gamma == 0: y == x
    let ones = Tensor::constant(&[3], vec![1.0; 3]).unwrap();
    let zeros = Tensor::constant(&[3, 3], vec![0.0; 9]).unwrap();
    let y = gdn(&xt, &ones, &zeros, false).unwrap();
    for (a, b) in y.data().iter().zip(&x) {
        assert!((a - b).abs() < 1e-5);
    }
    // beta == 4: y == x/2
    let twos = Tensor::constant(&[3], vec![2.0; 3]).unwrap();
    let y = gdn(&xt, &twos, &zeros, false).unwrap();
    for (a, b) in y.data().iter().zip(&x) {
        assert!((a - b / 2.0).abs() < 1e-5);
    }
    // igdn with beta == 4: y == 2x
    let y = gdn(&xt, &twos, &zeros, true).unwrap();
    for (a, b) in y.data().iter().zip(&x) {
        assert!((a - b * 2.0).abs() < 1e-5);
    }
}

#[test]
fn gdn_matches_reference_and_fd() {
    let mut r = rng(31);
    for trial in 0..50 {
        let inverse = trial % 2 == 1;
        let (n, c, h, w) = (1, 3, 4, 3);
        let x = rand_vec(&mut r, n * c * h * w, -2.0, 2.0);
        let br = rand_vec(&mut r, c, 0.3, 1.5);
        let gr = rand_vec(&mut r, c * c, -0.5, 0.5);
        let xt = Tensor::constant(&[n, c, h, w], x.clone()).unwrap();
        let brt = Tensor::constant(&[c], br.clone()).unwrap();
        let grt = Tensor::constant(&[c, c], gr.clone()).unwrap();
        let got = gdn(&xt, &brt, &grt, inverse).unwrap();
        let want = gdn_ref64(&to64(&x), n, c, h * w, &to64(&br), &to64(&gr), inverse);
        assert!(scaled_err(got.data(), &want) < 1e-5);

        let proj = rand_vec(&mut r, x.len(), -1.0, 1.0);
        let tape = Tape::new();
        let xv = var(&tape, &[n, c, h, w], x.clone());
        let brv = var(&tape, &[c], br.clone());
        let grv = var(&tape, &[c, c], gr.clone());
        let pt = Tensor::constant(&[n, c, h, w], proj.clone()).unwrap();
        let loss = sum(&mul(&gdn(&xv, &brv, &grv, inverse).unwrap(), &pt).unwrap()).unwrap();
        backward(&loss).unwrap();

        let proj64 = to64(&proj);
        let mut f = |params: &[Vec<f64>]| -> f64 {
            let out = gdn_ref64(&params[0], n, c, h * w, &params[1], &params[2], inverse);
            out.iter().zip(&proj64).map(|(a, b)| a * b).sum()
        };
        let fd = fd_grad64(&mut f, &[to64(&x), to64(&br), to64(&gr)], 1e-3);
        assert!(max_rel_err(&y_grad(&xv), &fd[0]) < 1e-3, "x grad, trial {}", trial);
        assert!(max_rel_err(&y_grad(&brv), &fd[1]) < 1e-3, "beta grad, trial {}", trial);
        assert!(max_rel_err(&y_grad(&grv), &fd[2]) < 1e-3, "gamma grad, trial {}", trial);
    }
}

#[test]
fn reflect_pad_values_and_grad() {
    let xt = Tensor::constant(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = reflect_pad2d(&xt, 1).unwrap();
    #[rustfmt::skip]
    let want = [
        4.0, 3.0, 4.0, 3.0,
        2.0, 1.0, 2.0, 1.0,
        4.0, 3.0, 4.0, 3.0,
        2.0, 1.0, 2.0, 1.0,
    ];
    assert_eq!(y.data(), &want);

    // grad of sum counts how often each source cell is referenced
    let tape = Tape::new();
    let xv = var(&tape, &[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let loss = sum(&reflect_pad2d(&xv, 1).unwrap()).unwrap();
    backward(&loss).unwrap();
    assert_eq!(y_grad(&xv), vec![4.0, 4.0, 4.0, 4.0]);

    // 3x3, pad 1: row/col 1 is the mirror target, so counts are [1,3,1] per axis
    let tape = Tape::new();
    let xv = var(&tape, &[1, 1, 3, 3], vec![0.0; 9]);
    let loss = sum(&reflect_pad2d(&xv, 1).unwrap()).unwrap();
    backward(&loss).unwrap();
    let g = y_grad(&xv);
    let total: f32 = g.iter().sum();
    assert_eq!(total, 25.0);
    assert_eq!(g[0], 1.0);
    assert_eq!(g[1], 3.0);
    assert_eq!(g[4], 9.0);

    assert!(reflect_pad2d(&xt, 2).is_err());
}

#[test]
fn crop_and_pad_invert() {
    let mut r = rng(37);
    let x = rand_vec(&mut r, 1 * 2 * 5 * 4, -1.0, 1.0);
    let xt = Tensor::constant(&[1, 2, 5, 4], x.clone()).unwrap();
    let padded = reflect_pad2d(&xt, 2).unwrap();
    let back = crop2d(&padded, 5, 4).unwrap();
    // crop keeps top-left, so this is not the inverse; check explicit window
    assert_eq!(back.shape(), &[1, 2, 5, 4]);
    let y = crop2d(&xt, 3, 2).unwrap();
    for ci in 0..2 {
        for yy in 0..3 {
            for xx in 0..2 {
                assert_eq!(
                    y.data()[(ci * 3 + yy) * 2 + xx],
                    x[(ci * 5 + yy) * 4 + xx]
                );
            }
        }
    }
    let tape = Tape::new();
    let xv = var(&tape, &[1, 1, 3, 3], vec![1.0; 9]);
    let loss = sum(&crop2d(&xv, 2, 2).unwrap()).unwrap();
    backward(&loss).unwrap();
    assert_eq!(y_grad(&xv), vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn bias_and_pool() {
    let tape = Tape::new();
    let x = var(&tape, &[1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    let b = var(&tape, &[2], vec![10.0, 20.0]);
    let y = bias_add(&x, &b).unwrap();
    assert_eq!(y.data(), &[11.0, 12.0, 13.0, 14.0, 25.0, 26.0, 27.0, 28.0]);
    let p = global_avg_pool(&y).unwrap();
    assert_eq!(p.shape(), &[1, 2]);
    assert!((p.data()[0] - 12.5).abs() < 1e-6);
    assert!((p.data()[1] - 26.5).abs() < 1e-6);
    let loss = sum(&p).unwrap();
    backward(&loss).unwrap();
    assert_eq!(y_grad(&b), vec![1.0, 1.0]);
    for g in y_grad(&x) {
        assert!((g - 0.25).abs() < 1e-7);
    }
}

#[test]
fn l2_rows_mean_value_and_grad() {
    let mut r = rng(41);
    let (n, c) = (3, 5);
    let a = rand_vec(&mut r, n * c, -1.0, 1.0);
    let b = rand_vec(&mut r, n * c, -1.0, 1.0);
    let tape = Tape::new();
    let at = var(&tape, &[n, c], a.clone());
    let bt = var(&tape, &[n, c], b.clone());
    let d = l2_rows_mean(&at, &bt).unwrap();
    let want = l2_rows_ref64(&to64(&a), &to64(&b), n, c);
    assert!(rel_err(d.item() as f64, want) < 1e-5);
    backward(&d).unwrap();
    let mut f = |p: &[Vec<f64>]| l2_rows_ref64(&p[0], &p[1], n, c);
    let fd = fd_grad64(&mut f, &[to64(&a), to64(&b)], 1e-4);
    assert!(max_rel_err(&y_grad(&at), &fd[0]) < 1e-3);
    assert!(max_rel_err(&y_grad(&bt), &fd[1]) < 1e-3);

    // identical rows: distance 0, gradient finite (0), no NaN
    let tape = Tape::new();
    let at = var(&tape, &[2, 3], vec![1.0; 6]);
    let bt = var(&tape, &[2, 3], vec![1.0; 6]);
    let d = l2_rows_mean(&at, &bt).unwrap();
    assert_eq!(d.item(), 0.0);
    backward(&d).unwrap();
    assert!(y_grad(&at).iter().all(|g| g.is_finite()));
}

#[test]
fn rate_bits_closed_form_and_symmetry() {
    // mass of the centered unit bin of a standard logistic
    let p = ops::logistic_bin_mass(0.0, 0.0, 1.0);
    assert!((p - 0.24491866240370913).abs() < 1e-14);
    let yt = Tensor::constant(&[1, 1, 1, 1], vec![0.0]).unwrap();
    let mu = Tensor::constant(&[1], vec![0.0]).unwrap();
    let ls = Tensor::constant(&[1], vec![0.0]).unwrap();
    let bits = logistic_rate_bits(&yt, &mu, &ls).unwrap();
    assert!((bits.item() as f64 + p.log2()).abs() < 1e-6);
    assert!((bits.item() - 2.0296).abs() < 1e-3);

    // bit-exact symmetry around mu, several scales
    for ls in [-1.0f64, -0.25, 0.0, 0.5, 2.0] {
        let inv = (-ls).exp();
        for q in 0..40 {
            let v = q as f64 * 0.5;
            let a = ops::logistic_bin_mass(v, 0.0, inv);
            let b = ops::logistic_bin_mass(-v, 0.0, inv);
            assert_eq!(a.to_bits(), b.to_bits(), "asymmetry at {} scale {}", v, ls);
        }
    }
}

#[test]
fn rate_bits_saturation_is_finite_with_zero_grad() {
    let tape = Tape::new();
    let y = var(&tape, &[1, 1, 1, 2], vec![1e4, -1e4]);
    let mu = var(&tape, &[1], vec![0.0]);
    let ls = var(&tape, &[1], vec![0.0]);
    let bits = logistic_rate_bits(&y, &mu, &ls).unwrap();
    assert!(bits.item().is_finite());
    assert!((bits.item() - 2.0 * 15.0).abs() < 1e-3); // two floored bins
    backward(&bits).unwrap();
    assert_eq!(y_grad(&y), vec![0.0, 0.0]);
    assert_eq!(y_grad(&mu), vec![0.0]);
}

#[test]
fn rate_bits_matches_sigmoid_reference_and_fd() {
    let mut r = rng(43);
    for _ in 0..30 {
        let (n, c, h, w) = (1, 2, 3, 3);
        let y = rand_vec(&mut r, n * c * h * w, -3.0, 3.0);
        let mu = rand_vec(&mut r, c, -1.0, 1.0);
        let ls = rand_vec(&mut r, c, -1.0, 1.0);
        let tape = Tape::new();
        let yt = var(&tape, &[n, c, h, w], y.clone());
        let mt = var(&tape, &[c], mu.clone());
        let st = var(&tape, &[c], ls.clone());
        let bits = logistic_rate_bits(&yt, &mt, &st).unwrap();
        let want = logistic_rate_ref64(&to64(&y), c, h * w, &to64(&mu), &to64(&ls));
        assert!(rel_err(bits.item() as f64, want) < 1e-5);
        backward(&bits).unwrap();
        let mut f =
            |p: &[Vec<f64>]| logistic_rate_ref64(&p[0], c, h * w, &p[1], &p[2]);
        let fd = fd_grad64(&mut f, &[to64(&y), to64(&mu), to64(&ls)], 1e-3);
        assert!(max_rel_err(&y_grad(&yt), &fd[0]) < 1e-3);
        assert!(max_rel_err(&y_grad(&mt), &fd[1]) < 1e-3);
        assert!(max_rel_err(&y_grad(&st), &fd[2]) < 1e-3);
    }
}

#[test]
fn adam_first_step_is_signed_lr() {
    let cfg = AdamConfig {
        lr: 0.01,
        ..AdamConfig::default()
    };
    let mut opt = Adam::new(cfg, &[2]);
    let mut p = vec![1.0f32, -1.0];
    let g = vec![3.0f32, -0.5];
    opt.step(&mut [&mut p], &[&g]);
    assert!((p[0] - (1.0 - 0.01)).abs() < 1e-4);
    assert!((p[1] - (-1.0 + 0.01)).abs() < 1e-4);
    assert_eq!(opt.steps_taken(), 1);
}

#[test]
fn adam_minimizes_quadratic() {
    let target = [3.0f32, -2.0, 0.5];
    let mut p = vec![0.0f32; 3];
    let mut opt = Adam::new(
        AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        },
        &[3],
    );
    for _ in 0..500 {
        let g: Vec<f32> = p.iter().zip(target).map(|(p, t)| 2.0 * (p - t)).collect();
        opt.step(&mut [&mut p], &[&g]);
    }
    for (p, t) in p.iter().zip(target) {
        assert!((p - t).abs() < 1e-2, "{} vs {}", p, t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn conv2d_equals_reference_all_small_shapes(
        n in 1usize..3,
        ci in 1usize..4,
        co in 1usize..4,
        ks in 0usize..3,
        s in 1usize..3,
        p in 0usize..3,
        ho in 0usize..12,
        wo in 0usize..12,
        seed in 0u64..1000,
    ) {
        let k = [1, 3, 5][ks];
        let h = (k + ho).min(16);
        let w = (k + wo).min(16);
        let mut r = rng(seed);
        let x = rand_vec(&mut r, n * ci * h * w, -2.0, 2.0);
        let kern = rand_vec(&mut r, co * ci * k * k, -1.0, 1.0);
        let xt = Tensor::constant(&[n, ci, h, w], x.clone()).unwrap();
        let kt = Tensor::constant(&[co, ci, k, k], kern.clone()).unwrap();
        let got = conv2d(&xt, &kt, s, p).unwrap();
        let want = conv2d_ref64(&to64(&x), n, ci, h, w, &to64(&kern), co, k, s, p);
        prop_assert!(scaled_err(got.data(), &want) < 1e-5);
    }
}
