use super::*;
use drstage::kernels::{self, Mode, Padding, BN_EPSILON, BN_MOMENTUM};
use drstage::losses::{self, LossKind};
use drstage::models::GraphBuilder;
use drstage::Tensor;
use rand::Rng;

const INSTANCES: u64 = 24;
const LAYER_TOL: f64 = 1e-3;
const LOSS_TOL: f64 = 1e-4;
const STEP: f64 = 1e-3;

fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, to32(data)).unwrap()
}

/// Rounds through f32 so the oracle sees exactly what the kernel sees.
fn quantize(v: Vec<f64>) -> Vec<f64> {
    to64(&to32(&v))
}

fn random_dims(r: &mut rand_chacha::ChaCha8Rng, min_hw: usize) -> Dims {
    Dims {
        n: r.gen_range(1..=2),
        h: r.gen_range(min_hw..=6),
        w: r.gen_range(min_hw..=6),
        c: r.gen_range(1..=3),
    }
}

fn check(name: &str, seed: u64, analytic: &[f32], numeric: &[f64], tol: f64) {
    let e = rel_err(analytic, numeric);
    assert!(e <= tol, "{name} instance {seed}: relative error {e:.3e}");
}

pub fn conv2d_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let k = if r.gen_bool(0.5) { 3 } else { 1 };
        let d = random_dims(&mut r, k.max(2));
        let f = r.gen_range(1..=3);
        let stride = r.gen_range(1..=2);
        let same = r.gen_bool(0.5);
        let padding = if same { Padding::Same } else { Padding::Valid };
        let x = quantize(uniform(&mut r, d.len(), -1.0, 1.0));
        let kern = quantize(uniform(&mut r, k * k * d.c * f, -1.0, 1.0));
        let bias = quantize(uniform(&mut r, f, -0.5, 0.5));

        let (ref_out, od) = conv2d(&x, d, &kern, &bias, k, f, stride, same);
        let got = kernels::conv2d(
            &tensor(&d.shape(), &x),
            &tensor(&[k, k, d.c, f], &kern),
            &tensor(&[f], &bias),
            stride,
            padding,
        )
        .unwrap();
        assert_eq!(got.shape(), &od.shape());
        check("conv2d forward", seed, got.data(), &ref_out, 1e-5);

        let up = quantize(uniform(&mut r, od.len(), -1.0, 1.0));
        let g = kernels::conv2d_backward(
            &tensor(&d.shape(), &x),
            &tensor(&[k, k, d.c, f], &kern),
            &tensor(&od.shape(), &up),
            stride,
            padding,
        )
        .unwrap();
        let wrt_x = |v: &[f64]| dot(&conv2d(v, d, &kern, &bias, k, f, stride, same).0, &up);
        let wrt_k = |v: &[f64]| dot(&conv2d(&x, d, v, &bias, k, f, stride, same).0, &up);
        let wrt_b = |v: &[f64]| dot(&conv2d(&x, d, &kern, v, k, f, stride, same).0, &up);
        check("conv2d input", seed, g.input_grad.data(), &numeric_grad(&wrt_x, &x, STEP), LAYER_TOL);
        check("conv2d kernel", seed, g.param_grads["kernel"].data(), &numeric_grad(&wrt_k, &kern, STEP), LAYER_TOL);
        check("conv2d bias", seed, g.param_grads["bias"].data(), &numeric_grad(&wrt_b, &bias, STEP), LAYER_TOL);
    }
}

pub fn maxpool_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut r = rng(100 + seed);
        let d = random_dims(&mut r, 3);
        let window = r.gen_range(2..=3);
        let stride = r.gen_range(1..=2);
        let same = r.gen_bool(0.5);
        let padding = if same { Padding::Same } else { Padding::Valid };
        let x = quantize(distinct(&mut r, d.len(), 0.05));
        let (ref_out, od) = maxpool(&x, d, window, stride, same);
        let xt = tensor(&d.shape(), &x);
        let got = kernels::maxpool2d(&xt, window, stride, padding).unwrap();
        check("maxpool forward", seed, got.data(), &ref_out, 1e-6);

        let up = quantize(uniform(&mut r, od.len(), -1.0, 1.0));
        let g = kernels::maxpool2d_backward(&xt, &tensor(&od.shape(), &up), window, stride, padding).unwrap();
        let f = |v: &[f64]| dot(&maxpool(v, d, window, stride, same).0, &up);
        check("maxpool input", seed, g.input_grad.data(), &numeric_grad(&f, &x, STEP), LAYER_TOL);
    }
}

pub fn global_avg_pool_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut r = rng(200 + seed);
        let d = random_dims(&mut r, 1);
        let x = quantize(uniform(&mut r, d.len(), -1.0, 1.0));
        let xt = tensor(&d.shape(), &x);
        check("gap forward", seed, kernels::global_avg_pool(&xt).unwrap().data(), &global_avg_pool(&x, d), 1e-6);
        let up = quantize(uniform(&mut r, d.n * d.c, -1.0, 1.0));
        let g = kernels::global_avg_pool_backward(&xt, &tensor(&[d.n, d.c], &up)).unwrap();
        let f = |v: &[f64]| dot(&global_avg_pool(v, d), &up);
        check("gap input", seed, g.input_grad.data(), &numeric_grad(&f, &x, STEP), LAYER_TOL);
    }
}

pub fn dense_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut r = rng(300 + seed);
        let (n, din, dout) = (r.gen_range(1..=4), r.gen_range(1..=6), r.gen_range(1..=5));
        let x = quantize(uniform(&mut r, n * din, -1.0, 1.0));
        let w = quantize(uniform(&mut r, din * dout, -1.0, 1.0));
        let b = quantize(uniform(&mut r, dout, -1.0, 1.0));
        let (xt, wt) = (tensor(&[n, din], &x), tensor(&[din, dout], &w));
        let got = kernels::dense(&xt, &wt, &tensor(&[dout], &b)).unwrap();
        check("dense forward", seed, got.data(), &dense(&x, n, din, &w, &b), 1e-6);
        let up = quantize(uniform(&mut r, n * dout, -1.0, 1.0));
        let g = kernels::dense_backward(&xt, &wt, &tensor(&[n, dout], &up)).unwrap();
        let fx = |v: &[f64]| dot(&dense(v, n, din, &w, &b), &up);
        let fw = |v: &[f64]| dot(&dense(&x, n, din, v, &b), &up);
        let fb = |v: &[f64]| dot(&dense(&x, n, din, &w, v), &up);
        check("dense input", seed, g.input_grad.data(), &numeric_grad(&fx, &x, STEP), LAYER_TOL);
        check("dense weights", seed, g.param_grads["weights"].data(), &numeric_grad(&fw, &w, STEP), LAYER_TOL);
        check("dense bias", seed, g.param_grads["bias"].data(), &numeric_grad(&fb, &b, STEP), LAYER_TOL);
    }
}

pub fn relu_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut r = rng(400 + seed);
        let n = r.gen_range(1..=30);
        let x = quantize(away_from_zero(&mut r, n, 0.05));
        let up = quantize(uniform(&mut r, n, -1.0, 1.0));
        let xt = tensor(&[n], &x);
        check("relu forward", seed, kernels::relu(&xt).data(), &relu(&x), 0.0);
        let g = kernels::relu_backward(&xt, &tensor(&[n], &up)).unwrap();
        let f = |v: &[f64]| dot(&relu(v), &up);
        check("relu input", seed, g.input_grad.data(), &numeric_grad(&f, &x, STEP), LAYER_TOL);
    }
}

pub fn softmax_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut r = rng(500 + seed);
        let (n, k) = (r.gen_range(1..=3), r.gen_range(2..=6));
        let x = quantize(uniform(&mut r, n * k, -3.0, 3.0));
        let out = kernels::softmax(&tensor(&[n, k], &x)).unwrap();
        check("softmax forward", seed, out.data(), &softmax(&x, k), 1e-6);
        let up = quantize(uniform(&mut r, n * k, -1.0, 1.0));
        let g = kernels::softmax_backward(&out, &tensor(&[n, k], &up)).unwrap();
        let f = |v: &[f64]| dot(&softmax(v, k), &up);
        check("softmax input", seed, g.input_grad.data(), &numeric_grad(&f, &x, STEP), LAYER_TOL);
    }
}

pub fn batchnorm_train_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut r = rng(600 + seed);
        let d = Dims {
            n: r.gen_range(2..=3),
            h: r.gen_range(1..=4),
            w: r.gen_range(1..=4),
            c: r.gen_range(1..=3),
        };
        let x = quantize(uniform(&mut r, d.len(), -2.0, 2.0));
        let gamma = quantize(uniform(&mut r, d.c, 0.5, 1.5));
        let beta = quantize(uniform(&mut r, d.c, -0.5, 0.5));
        let eps = BN_EPSILON as f64;
        let (mut rm, mut rv) = (Tensor::zeros(&[d.c]), Tensor::full(&[d.c], 1.0));
        let (out, cache) = kernels::batchnorm(
            &tensor(&d.shape(), &x),
            &tensor(&[d.c], &gamma),
            &tensor(&[d.c], &beta),
            &mut rm,
            &mut rv,
            Mode::Train,
            BN_MOMENTUM,
            BN_EPSILON,
        )
        .unwrap();
        check("batchnorm forward", seed, out.data(), &batchnorm_train(&x, d.c, &gamma, &beta, eps), 1e-5);
        let up = quantize(uniform(&mut r, d.len(), -1.0, 1.0));
        let g = kernels::batchnorm_backward(&cache, &tensor(&[d.c], &gamma), &tensor(&d.shape(), &up)).unwrap();
        let fx = |v: &[f64]| dot(&batchnorm_train(v, d.c, &gamma, &beta, eps), &up);
        let fg = |v: &[f64]| dot(&batchnorm_train(&x, d.c, v, &beta, eps), &up);
        let fb = |v: &[f64]| dot(&batchnorm_train(&x, d.c, &gamma, v, eps), &up);
        check("batchnorm input", seed, g.input_grad.data(), &numeric_grad(&fx, &x, STEP), LAYER_TOL);
        check("batchnorm gamma", seed, g.param_grads["gamma"].data(), &numeric_grad(&fg, &gamma, STEP), LAYER_TOL);
        check("batchnorm beta", seed, g.param_grads["beta"].data(), &numeric_grad(&fb, &beta, STEP), LAYER_TOL);
    }
}

pub fn batchnorm_infer_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut r = rng(700 + seed);
        let (n, c) = (r.gen_range(1..=4), r.gen_range(1..=4));
        let x = quantize(uniform(&mut r, n * c, -2.0, 2.0));
        let gamma = quantize(uniform(&mut r, c, 0.5, 1.5));
        let beta = quantize(uniform(&mut r, c, -0.5, 0.5));
        let mean = quantize(uniform(&mut r, c, -0.5, 0.5));
        let var = quantize(uniform(&mut r, c, 0.5, 2.0));
        let eps = BN_EPSILON as f64;
        let (mut rm, mut rv) = (tensor(&[c], &mean), tensor(&[c], &var));
        let (out, cache) = kernels::batchnorm(
            &tensor(&[n, c], &x),
            &tensor(&[c], &gamma),
            &tensor(&[c], &beta),
            &mut rm,
            &mut rv,
            Mode::Infer,
            BN_MOMENTUM,
            BN_EPSILON,
        )
        .unwrap();
        let reference = |v: &[f64]| batchnorm_infer(v, c, &gamma, &beta, &mean, &var, eps);
        check("batchnorm infer forward", seed, out.data(), &reference(&x), 1e-5);
        let up = quantize(uniform(&mut r, n * c, -1.0, 1.0));
        let g = kernels::batchnorm_backward(&cache, &tensor(&[c], &gamma), &tensor(&[n, c], &up)).unwrap();
        let f = |v: &[f64]| dot(&reference(v), &up);
        check("batchnorm infer input", seed, g.input_grad.data(), &numeric_grad(&f, &x, STEP), LAYER_TOL);
    }
}

pub fn dropout_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let mut r = rng(800 + seed);
        let n = r.gen_range(2..=40);
        let x = quantize(away_from_zero(&mut r, n, 0.1));
        let xt = tensor(&[n], &x);
        let (out, mask) = kernels::dropout(&xt, 0.4, Mode::Train, &mut rng(seed)).unwrap();
        let scale: Vec<f64> = out.data().iter().zip(&x).map(|(&o, &xi)| o as f64 / xi).collect();
        for &s in &scale {
            assert!(s == 0.0 || (s - 1.0 / 0.6).abs() < 1e-5, "dropout scale {s}");
        }
        let up = quantize(uniform(&mut r, n, -1.0, 1.0));
        let g = kernels::dropout_backward(&mask, &tensor(&[n], &up)).unwrap();
        let f = |v: &[f64]| v.iter().zip(&scale).zip(&up).map(|((a, s), u)| a * s * u).sum();
        check("dropout input", seed, g.input_grad.data(), &numeric_grad(&f, &x, STEP), LAYER_TOL);
    }
}

pub fn concat_routes_gradients() {
    for seed in 0..INSTANCES {
        let mut r = rng(900 + seed);
        let widths: Vec<usize> = (0..r.gen_range(2..=4)).map(|_| r.gen_range(1..=3)).collect();
        let rows = r.gen_range(1..=5);
        let parts: Vec<Vec<f64>> = widths.iter().map(|&w| quantize(uniform(&mut r, rows * w, -1.0, 1.0))).collect();
        let tensors: Vec<Tensor> = parts.iter().zip(&widths).map(|(p, &w)| tensor(&[rows, w], p)).collect();
        let refs: Vec<&Tensor> = tensors.iter().collect();
        let cat = kernels::concat_channels(&refs).unwrap();
        let total: usize = widths.iter().sum();
        let up = quantize(uniform(&mut r, rows * total, -1.0, 1.0));
        let split = kernels::split_channels(&tensor(&[rows, total], &up), &widths).unwrap();
        let mut offset = 0;
        for (i, &w) in widths.iter().enumerate() {
            for row in 0..rows {
                for j in 0..w {
                    assert_eq!(cat.data()[row * total + offset + j] as f64, parts[i][row * w + j]);
                }
            }
            let f = |v: &[f64]| {
                (0..rows)
                    .flat_map(|row| (0..w).map(move |j| (row, j)))
                    .map(|(row, j)| v[row * w + j] * up[row * total + offset + j])
                    .sum()
            };
            check("concat part", seed, split[i].data(), &numeric_grad(&f, &parts[i], STEP), LAYER_TOL);
            offset += w;
        }
    }
}

type LossFn = fn(&[f32], &[f32]) -> drstage::Result<losses::LossValue>;
type PairGen = dyn Fn(&mut rand_chacha::ChaCha8Rng, usize) -> (Vec<f64>, Vec<f64>);

fn loss_check(name: &str, seed_base: u64, kernel: LossFn, oracle: fn(&[f64], &[f64]) -> f64, gen: &PairGen) {
    for seed in 0..INSTANCES {
        let mut r = rng(seed_base + seed);
        let k = r.gen_range(2..=6);
        let (x, y) = gen(&mut r, k);
        let (x, y) = (quantize(x), quantize(y));
        let lv = kernel(&to32(&x), &to32(&y)).unwrap();
        let want = oracle(&x, &y);
        assert!((lv.value - want).abs() <= 1e-6 * want.abs().max(1.0), "{name} value {} vs {want}", lv.value);
        let f = |v: &[f64]| oracle(v, &y);
        check(name, seed, lv.grad.data(), &numeric_grad(&f, &x, 1e-5), LOSS_TOL);
    }
}

fn one_hot_target(r: &mut rand_chacha::ChaCha8Rng, k: usize) -> Vec<f64> {
    one_hot(r.gen_range(0..k), k)
}

pub fn mse_loss_gradient() {
    loss_check("mse", 1000, losses::mse_loss, mse, &|r, k| (uniform(r, k, 0.0, 1.0), one_hot_target(r, k)));
}

pub fn cross_entropy_loss_gradient() {
    loss_check("cross_entropy", 1100, losses::cross_entropy_loss, cross_entropy, &|r, k| {
        (uniform(r, k, -3.0, 3.0), one_hot_target(r, k))
    });
}

pub fn multilabel_loss_gradient() {
    loss_check("multilabel", 1200, losses::multilabel_loss, multilabel, &|r, k| {
        let y = (0..k).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        (uniform(r, k, -3.0, 3.0), y)
    });
}

pub fn hinge_loss_gradient() {
    loss_check("hinge", 1300, losses::hinge_loss, hinge, &|r, k| {
        let y = one_hot_target(r, k);
        // keep every margin at least 0.05 away from the kink at 1 - t p = 0
        let x = (0..k)
            .map(|_| loop {
                let p: f64 = r.gen_range(-2.0..2.0);
                if (p.abs() - 1.0).abs() > 0.05 {
                    break p;
                }
            })
            .collect();
        (x, y)
    });
}

pub fn cosine_loss_gradient() {
    loss_check("cosine", 1400, losses::cosine_loss, cosine, &|r, k| (uniform(r, k, 0.05, 1.0), one_hot_target(r, k)));
}

pub fn batch_loss_is_mean_of_rows() {
    for seed in 0..INSTANCES {
        let mut r = rng(1500 + seed);
        let (n, k) = (r.gen_range(1..=5), r.gen_range(2..=4));
        let x = quantize(uniform(&mut r, n * k, 0.05, 1.0));
        let y: Vec<f64> = (0..n).flat_map(|_| one_hot_target(&mut r, k)).collect();
        let (value, grad) = LossKind::Mse.batch(&tensor(&[n, k], &x), &tensor(&[n, k], &y)).unwrap();
        let f = |v: &[f64]| v.chunks(k).zip(y.chunks(k)).map(|(a, b)| mse(a, b)).sum::<f64>() / n as f64;
        assert!((value - f(&x)).abs() < 1e-9);
        check("batch mse", seed, grad.data(), &numeric_grad(&f, &x, 1e-5), LOSS_TOL);
    }
}

/// conv -> relu -> batch norm -> max pool -> global average -> dense ->
/// softmax, with mean-squared error over the batch, entirely in f64.
struct MiniNet {
    d: Dims,
    filters: usize,
    classes: usize,
}

impl MiniNet {
    fn sizes(&self) -> [usize; 6] {
        let f = self.filters;
        [9 * self.d.c * f, f, f, f, f * self.classes, self.classes]
    }

    fn loss(&self, x: &[f64], params: &[f64], targets: &[f64]) -> f64 {
        let mut chunks = Vec::new();
        let mut rest = params;
        for s in self.sizes() {
            let (a, b) = rest.split_at(s);
            chunks.push(a);
            rest = b;
        }
        let f = self.filters;
        let (h, hd) = conv2d(x, self.d, chunks[0], chunks[1], 3, f, 1, true);
        let h = relu(&h);
        let h = batchnorm_train(&h, f, chunks[2], chunks[3], BN_EPSILON as f64);
        let (h, pd) = maxpool(&h, hd, 2, 2, true);
        let h = global_avg_pool(&h, pd);
        let h = dense(&h, self.d.n, f, chunks[4], chunks[5]);
        let p = softmax(&h, self.classes);
        p.chunks(self.classes)
            .zip(targets.chunks(self.classes))
            .map(|(a, b)| mse(a, b))
            .sum::<f64>()
            / self.d.n as f64
    }
}

pub fn end_to_end_miniature_net() {
    const NAMES: [&str; 6] = ["conv/kernel", "conv/bias", "bn/gamma", "bn/beta", "dense/weights", "dense/bias"];
    let mut worst = 0.0f64;
    for seed in 0..8u64 {
        let net = MiniNet {
            d: Dims { n: 3, h: 8, w: 8, c: 2 },
            filters: 4,
            classes: 3,
        };
        let mut g = GraphBuilder::new();
        let x = g.input("input", &[8, 8, 2]).unwrap();
        let x = g.conv2d("conv", x, 4, 3, 1).unwrap();
        let x = g.relu("relu", x).unwrap();
        let x = g.batch_norm("bn", x).unwrap();
        let x = g.max_pool("pool", x, 2, 2).unwrap();
        let x = g.global_avg_pool("gap", x).unwrap();
        let x = g.dense("dense", x, 3).unwrap();
        let out = g.softmax("softmax", x).unwrap();
        let mut model = g.build(out).unwrap();
        model.init_weights(seed);

        let mut r = rng(2000 + seed);
        let gamma = quantize(uniform(&mut r, 4, 0.5, 1.5));
        let beta = quantize(uniform(&mut r, 4, -0.5, 0.5));
        model.set_param("bn/gamma", tensor(&[4], &gamma)).unwrap();
        model.set_param("bn/beta", tensor(&[4], &beta)).unwrap();
        let input = quantize(uniform(&mut r, net.d.len(), -1.0, 1.0));
        let labels: Vec<usize> = (0..net.d.n).map(|_| r.gen_range(0..3)).collect();
        let targets: Vec<f64> = labels.iter().flat_map(|&l| one_hot(l, 3)).collect();

        let xt = tensor(&net.d.shape(), &input);
        let trace = model.forward_trace(&xt, Mode::Train, &mut rng(0)).unwrap();
        let (_, upstream) = LossKind::Mse.batch(trace.output(), &tensor(&[3, 3], &targets)).unwrap();
        let grads = model.backward(&trace, &upstream).unwrap();

        let params: Vec<f64> = NAMES
            .iter()
            .flat_map(|n| to64(model.weights().get(n).unwrap().data()))
            .collect();
        let analytic: Vec<f32> = NAMES.iter().flat_map(|n| grads[*n].data().to_vec()).collect();
        let f = |p: &[f64]| net.loss(&input, p, &targets);
        let e = rel_err(&analytic, &numeric_grad(&f, &params, 1e-6));
        worst = worst.max(e);
    }
    assert!(worst < 1e-2, "end-to-end relative error {worst:.3e}");
}
