//! Finite-difference gradient verification across every differentiable
//! operation and through the full layer, over many seeds.

use trl3d::geometry::make_patch_grid;
use trl3d::layer::{self, LayerConfig, LayerParams};
use trl3d::tensor::{backward, Tensor};
use trl3d::Rng;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_in(-1.5, 1.5)).collect();
    Tensor::from_vec(data, shape).unwrap()
}

/// Central finite differences of a rebuilt forward pass.
fn numeric_grad(base: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Vec<f64> {
    let data = base.to_vec();
    let shape = base.shape();
    (0..data.len())
        .map(|i| {
            let mut plus = data.clone();
            plus[i] += EPS;
            let mut minus = data.clone();
            minus[i] -= EPS;
            let fp = f(&Tensor::from_vec(plus, &shape).unwrap());
            let fm = f(&Tensor::from_vec(minus, &shape).unwrap());
            (fp - fm) / (2.0 * EPS)
        })
        .collect()
}

fn check(analytic: &[f64], numeric: &[f64], what: &str) {
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1.0);
        assert!(rel < TOL, "{what}[{i}]: analytic {a} vs numeric {n}");
    }
}

/// Every differentiable op against central differences on 20 seeds.
#[test]
fn every_op_matches_finite_differences_on_20_seeds() {
    for seed in 0..20u64 {
        let mut rng = Rng::new(seed);
        let probe2 = random_tensor(&[2, 3], &mut rng);
        let probe_b = random_tensor(&[3], &mut rng);

        // elementwise binary ops with broadcasting
        type BinOp = fn(&Tensor, &Tensor) -> Tensor;
        let bin_ops: Vec<(&str, BinOp)> = vec![
            ("add", |a, b| a.add(b).unwrap()),
            ("sub", |a, b| a.sub(b).unwrap()),
            ("mul", |a, b| a.mul(b).unwrap()),
        ];
        for (name, op) in &bin_ops {
            let a = random_tensor(&[2, 3], &mut rng).with_grad();
            let b = random_tensor(&[3], &mut rng).with_grad();
            let w = random_tensor(&[2, 3], &mut rng);
            let loss = op(&a, &b).mul(&w).unwrap().sum(None).unwrap();
            backward(&loss).unwrap();
            let wa = w.clone();
            let bb = b.detach();
            let fa = move |x: &Tensor| op(x, &bb).mul(&wa).unwrap().sum(None).unwrap().item();
            check(&a.grad().unwrap(), &numeric_grad(&a, &fa), name);
            let wb = w.clone();
            let aa = a.detach();
            let fb = move |x: &Tensor| op(&aa, x).mul(&wb).unwrap().sum(None).unwrap().item();
            check(&b.grad().unwrap(), &numeric_grad(&b, &fb), name);
        }

        // div with a denominator bounded away from zero
        {
            let a = random_tensor(&[2, 3], &mut rng).with_grad();
            let braw = random_tensor(&[2, 3], &mut rng);
            let b = braw.relu().add_scalar(0.5).with_grad();
            let loss = a.div(&b).unwrap().sum(None).unwrap();
            backward(&loss).unwrap();
            let bd = b.detach();
            let f = move |x: &Tensor| x.div(&bd).unwrap().sum(None).unwrap().item();
            check(&a.grad().unwrap(), &numeric_grad(&a, &f), "div");
        }

        // unary chain: relu, softplus, sin, cos, scale, add_scalar
        {
            let x = random_tensor(&[2, 3], &mut rng).with_grad();
            let w = probe2.clone();
            let loss = x
                .relu()
                .add(&x.softplus())
                .unwrap()
                .add(&x.sin())
                .unwrap()
                .add(&x.cos())
                .unwrap()
                .scale(0.7)
                .add_scalar(0.1)
                .mul(&w)
                .unwrap()
                .sum(None)
                .unwrap();
            backward(&loss).unwrap();
            let f = move |v: &Tensor| {
                v.relu()
                    .add(&v.softplus())
                    .unwrap()
                    .add(&v.sin())
                    .unwrap()
                    .add(&v.cos())
                    .unwrap()
                    .scale(0.7)
                    .add_scalar(0.1)
                    .mul(&probe2)
                    .unwrap()
                    .sum(None)
                    .unwrap()
                    .item()
            };
            check(&x.grad().unwrap(), &numeric_grad(&x, &f), "unary-chain");
        }

        // exp/log/sqrt on positive inputs
        {
            let raw = random_tensor(&[5], &mut rng);
            let x = raw.relu().add_scalar(0.3).with_grad();
            let loss = x
                .exp()
                .unwrap()
                .add(&x.log().unwrap())
                .unwrap()
                .add(&x.sqrt().unwrap())
                .unwrap()
                .sum(None)
                .unwrap();
            backward(&loss).unwrap();
            let f = |v: &Tensor| {
                v.exp()
                    .unwrap()
                    .add(&v.log().unwrap())
                    .unwrap()
                    .add(&v.sqrt().unwrap())
                    .unwrap()
                    .sum(None)
                    .unwrap()
                    .item()
            };
            check(&x.grad().unwrap(), &numeric_grad(&x, &f), "exp-log-sqrt");
        }

        // batched matmul with broadcast
        {
            let a = random_tensor(&[2, 3, 4], &mut rng).with_grad();
            let b = random_tensor(&[4, 2], &mut rng).with_grad();
            let loss = a.matmul(&b).unwrap().relu().sum(None).unwrap();
            backward(&loss).unwrap();
            let bd = b.detach();
            let fa = move |x: &Tensor| x.matmul(&bd).unwrap().relu().sum(None).unwrap().item();
            check(&a.grad().unwrap(), &numeric_grad(&a, &fa), "matmul-a");
            let ad = a.detach();
            let fb = move |x: &Tensor| ad.matmul(x).unwrap().relu().sum(None).unwrap().item();
            check(&b.grad().unwrap(), &numeric_grad(&b, &fb), "matmul-b");
        }

        // reductions: sum/mean/max over an axis, through extra ops
        {
            let x = random_tensor(&[3, 4], &mut rng).with_grad();
            let w = random_tensor(&[3], &mut rng);
            let loss = x
                .sum(Some(1))
                .unwrap()
                .add(&x.mean(Some(1)).unwrap())
                .unwrap()
                .add(&x.max(Some(1)).unwrap())
                .unwrap()
                .mul(&w)
                .unwrap()
                .sum(None)
                .unwrap();
            backward(&loss).unwrap();
            let f = move |v: &Tensor| {
                v.sum(Some(1))
                    .unwrap()
                    .add(&v.mean(Some(1)).unwrap())
                    .unwrap()
                    .add(&v.max(Some(1)).unwrap())
                    .unwrap()
                    .mul(&w)
                    .unwrap()
                    .sum(None)
                    .unwrap()
                    .item()
            };
            check(&x.grad().unwrap(), &numeric_grad(&x, &f), "reductions");
        }

        // softmax + layernorm + linear
        {
            let x = random_tensor(&[2, 4], &mut rng).with_grad();
            let w = random_tensor(&[4, 3], &mut rng).with_grad();
            let loss = x
                .softmax(1)
                .unwrap()
                .layernorm()
                .unwrap()
                .linear(&w, &probe_b)
                .unwrap()
                .sum(None)
                .unwrap();
            backward(&loss).unwrap();
            let wd = w.detach();
            let pb = probe_b.clone();
            let f = move |v: &Tensor| {
                v.softmax(1)
                    .unwrap()
                    .layernorm()
                    .unwrap()
                    .linear(&wd, &pb)
                    .unwrap()
                    .sum(None)
                    .unwrap()
                    .item()
            };
            check(&x.grad().unwrap(), &numeric_grad(&x, &f), "softmax-ln-linear");
        }

        // shape surgery: permute + narrow + concat + reshape
        {
            let x = random_tensor(&[2, 3, 2], &mut rng).with_grad();
            let f_build = |v: &Tensor| -> Tensor {
                let p = v.permute(&[1, 0, 2]).unwrap(); // [3,2,2]
                let a = p.narrow(0, 0, 2).unwrap();
                let b = p.narrow(0, 1, 2).unwrap();
                Tensor::concat(&[a, b], 2)
                    .unwrap()
                    .reshape(&[2, 8])
                    .unwrap()
            };
            let w = random_tensor(&[2, 8], &mut rng);
            let loss = f_build(&x).mul(&w).unwrap().sum(None).unwrap();
            backward(&loss).unwrap();
            let f = move |v: &Tensor| f_build(v).mul(&w).unwrap().sum(None).unwrap().item();
            check(&x.grad().unwrap(), &numeric_grad(&x, &f), "shape-ops");
        }
    }
}

/// End-to-end through the geometric layer: loss = weighted sum of
/// forward_image tokens, gradients checked for the input tokens and every
/// parameter tensor.
#[test]
fn layer_end_to_end_gradients() {
    let mut cfg = LayerConfig::new(8);
    cfg.stem_hidden = 4;
    let mut rng = Rng::new(123);
    let params = LayerParams::init(&cfg, &mut rng).unwrap();
    // make the fusion path live (default second layer is zero-initialized)
    let w1 = random_tensor(&[8, 8], &mut rng);
    params.embed_mlp[1].w.set_data(&w1.to_vec()).unwrap();
    let grid = make_patch_grid(2, 2).unwrap();
    let tokens = random_tensor(&[5, 8], &mut rng).with_grad();
    let probe = random_tensor(&[5, 8], &mut rng);

    let fwd = |t: &Tensor| {
        layer::forward_image(t, true, &grid, &cfg, &params)
            .unwrap()
            .tokens
    };
    let loss = fwd(&tokens).mul(&probe).unwrap().sum(None).unwrap();
    backward(&loss).unwrap();

    // input tokens
    let probe2 = probe.clone();
    let f = move |t: &Tensor| fwd(t).mul(&probe2).unwrap().sum(None).unwrap().item();
    check(&tokens.grad().unwrap(), &numeric_grad(&tokens, &f), "tokens");

    // every named parameter via rebuild-with-perturbed-data
    for (name, p) in params.named("layer.") {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let base = p.to_vec();
        let mut numeric = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += EPS;
            p.set_data(&plus).unwrap();
            let fp = layer::forward_image(&tokens.detach(), true, &grid, &cfg, &params)
                .unwrap()
                .tokens
                .mul(&probe)
                .unwrap()
                .sum(None)
                .unwrap()
                .item();
            let mut minus = base.clone();
            minus[i] -= EPS;
            p.set_data(&minus).unwrap();
            let fm = layer::forward_image(&tokens.detach(), true, &grid, &cfg, &params)
                .unwrap()
                .tokens
                .mul(&probe)
                .unwrap()
                .sum(None)
                .unwrap()
                .item();
            p.set_data(&base).unwrap();
            numeric.push((fp - fm) / (2.0 * EPS));
        }
        check(&analytic, &numeric, &name);
    }
}

/// Max-reduction tie-break: gradient goes to the lowest index, matching
/// one-sided finite differences from below.
#[test]
fn relu_subgradient_at_zero_is_zero() {
    let x = Tensor::from_vec(vec![0.0, -0.5, 0.5], &[3]).unwrap().with_grad();
    let loss = x.relu().sum(None).unwrap();
    backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
}
