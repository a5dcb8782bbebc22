//! Naive reference implementations shared by the integration tests and the
//! acceptance suite. Everything here is written as plain nested loops so it
//! shares no code with the library kernels.
#![allow(dead_code)]

use dsunet::autodiff::Graph;
use dsunet::metrics::BinaryMask;
use dsunet::rng::SplitMix64;
use dsunet::{Shape, Tensor};

pub fn random_tensor(dims: [usize; 4], rng: &mut SplitMix64) -> Tensor<f64> {
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]).unwrap();
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

fn out_extent(i: usize, k: usize, stride: usize, pad: usize) -> usize {
    (i + 2 * pad - k) / stride + 1
}

/// Direct six-loop cross-correlation with zero padding.
pub fn conv2d(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, c_in, h, wd] = x.shape().dims();
    let [c_out, _, k, _] = w.shape().dims();
    let (oh, ow) = (out_extent(h, k, stride, pad), out_extent(wd, k, stride, pad));
    let mut out = Vec::with_capacity(n * c_out * oh * ow);
    for b in 0..n {
        for o in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |t| t.data()[o]);
                    for c in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(b, c, iy as usize, ix as usize) * w.at(o, c, ky, kx);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(n, c_out, oh, ow).unwrap(), out).unwrap()
}

pub fn depthwise(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, c, h, wd] = x.shape().dims();
    let k = w.shape().h;
    let (oh, ow) = (out_extent(h, k, stride, pad), out_extent(wd, k, stride, pad));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && iy < h as isize && ix < wd as isize {
                                acc += x.at(b, ch, iy as usize, ix as usize) * w.at(ch, 0, ky, kx);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(n, c, oh, ow).unwrap(), out).unwrap()
}

pub fn pointwise(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&Tensor<f64>>) -> Tensor<f64> {
    let [n, c_in, h, wd] = x.shape().dims();
    let c_out = w.shape().n;
    let mut out = vec![0.0; n * c_out * h * wd];
    let mut i = 0;
    for b in 0..n {
        for o in 0..c_out {
            for y in 0..h {
                for xx in 0..wd {
                    out[i] = bias.map_or(0.0, |t| t.data()[o])
                        + (0..c_in).map(|c| w.at(o, c, 0, 0) * x.at(b, c, y, xx)).sum::<f64>();
                    i += 1;
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(n, c_out, h, wd).unwrap(), out).unwrap()
}

fn pool_windows(x: &Tensor<f64>, mut f: impl FnMut(usize, usize, [(usize, usize); 4]) -> f64) -> Tensor<f64> {
    let [n, c, h, w] = x.shape().dims();
    let mut out = Vec::with_capacity(n * c * h * w / 4);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    let (y, xx) = (2 * oy, 2 * ox);
                    out.push(f(b, ch, [(y, xx), (y, xx + 1), (y + 1, xx), (y + 1, xx + 1)]));
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(n, c, h / 2, w / 2).unwrap(), out).unwrap()
}

pub fn max_pool(x: &Tensor<f64>) -> Tensor<f64> {
    pool_windows(x, |b, c, win| win.iter().map(|&(y, xx)| x.at(b, c, y, xx)).fold(f64::NEG_INFINITY, f64::max))
}

/// Softmax of the four scores in each window, then a weighted sum.
pub fn attention_pool(x: &Tensor<f64>, scores: &Tensor<f64>) -> Tensor<f64> {
    pool_windows(x, |b, c, win| {
        let s: Vec<f64> = win.iter().map(|&(y, xx)| scores.at(b, 0, y, xx)).collect();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        win.iter().zip(&e).map(|(&(y, xx), ei)| ei / z * x.at(b, c, y, xx)).sum()
    })
}

/// Worst absolute gap between library and oracle for each op, over `cases`
/// random shapes per op.
pub fn conv_oracle_gaps(seed: u64, cases: usize) -> Vec<(&'static str, f64, usize)> {
    let mut rng = SplitMix64::new(seed);
    let pick = |lo: i64, hi: i64, rng: &mut SplitMix64| rng.range_inclusive(lo, hi) as usize;
    let mut worst = vec![
        ("conv2d", 0.0f64, 0),
        ("depthwise_conv2d", 0.0, 0),
        ("pointwise_conv2d", 0.0, 0),
        ("max_pool_2x", 0.0, 0),
        ("attention_pool_2x", 0.0, 0),
    ];
    let mut note = |i: usize, gap: f64| {
        worst[i].1 = worst[i].1.max(gap);
        worst[i].2 += 1;
    };
    for _ in 0..cases {
        let n = pick(1, 2, &mut rng);
        let c_in = pick(1, 4, &mut rng);
        let c_out = pick(1, 5, &mut rng);
        let k = [1, 3, 5][pick(0, 2, &mut rng)];
        let stride = pick(1, 2, &mut rng);
        let pad = pick(0, k as i64 / 2, &mut rng);
        let h = pick(k as i64, 11, &mut rng);
        let w = pick(k as i64, 11, &mut rng);
        let x = random_tensor([n, c_in, h, w], &mut rng);
        let wt = random_tensor([c_out, c_in, k, k], &mut rng);
        let b = random_tensor([1, c_out, 1, 1], &mut rng);
        let dw = random_tensor([c_in, 1, k, k], &mut rng);
        let pw = random_tensor([c_out, c_in, 1, 1], &mut rng);
        let (eh, ew) = (2 * pick(1, 6, &mut rng), 2 * pick(1, 6, &mut rng));
        let xe = random_tensor([n, c_in, eh, ew], &mut rng);
        let mut scores = random_tensor([n, 1, eh, ew], &mut rng);
        scores.data_mut().iter_mut().for_each(|v| *v *= 4.0);

        let expected = [
            conv2d(&x, &wt, Some(&b), stride, pad),
            depthwise(&x, &dw, stride, pad),
            pointwise(&x, &pw, Some(&b)),
            max_pool(&xe),
            attention_pool(&xe, &scores),
        ];
        let args = [&x, &wt, &b, &dw, &pw, &xe, &scores];
        for got in [library_ops::<f64>(args, stride, pad), library_ops::<f32>(args, stride, pad)] {
            for (i, (got, want)) in got.iter().zip(&expected).enumerate() {
                note(i, got.max_abs_diff(want));
            }
        }
    }
    worst
}

fn library_ops<T: dsunet::Real>(args: [&Tensor<f64>; 7], stride: usize, pad: usize) -> Vec<Tensor<f64>> {
    let mut g = Graph::<T>::new();
    let [x, w, b, dw, pw, xe, s] = args.map(|t| g.input(t.cast()));
    let outs = [
        g.conv2d(x, w, Some(b), stride, pad).unwrap(),
        g.depthwise_conv2d(x, dw, stride, pad).unwrap(),
        g.pointwise_conv2d(x, pw, Some(b)).unwrap(),
        g.max_pool_2x(xe).unwrap(),
        g.attention_pool_2x(xe, s).unwrap(),
    ];
    outs.iter().map(|&v| g.value(v).cast()).collect()
}

pub fn random_mask(h: usize, w: usize, rng: &mut SplitMix64) -> BinaryMask {
    // mix of densities so empty, full and sparse masks all show up
    let p = [0.0, 0.05, 0.3, 0.5, 0.8, 1.0][rng.range_inclusive(0, 5) as usize];
    let bits = (0..h * w).map(|_| rng.next_f64() < p).collect();
    BinaryMask::new(h, w, bits).unwrap()
}

/// Random blob-shaped mask: a filled disc, possibly with a hole.
pub fn random_blob(h: usize, w: usize, rng: &mut SplitMix64) -> BinaryMask {
    let (cy, cx) = (rng.uniform(0.0, h as f64), rng.uniform(0.0, w as f64));
    let r = rng.uniform(1.0, h.min(w) as f64 / 2.0);
    let hole = rng.uniform(0.0, r / 2.0);
    BinaryMask::from_fn(h, w, |y, x| {
        let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
        d <= r && d >= hole
    })
}

/// `(tp, fp, fn, tn)` by looking at every pixel.
pub fn loop_counts(pred: &BinaryMask, gt: &BinaryMask) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            match (pred.get(y, x), gt.get(y, x)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    (tp, fp, fn_, tn)
}

/// Foreground pixels touching background or the image edge through a side.
pub fn loop_boundary(m: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = (m.height() as isize, m.width() as isize);
    let fg = |y: isize, x: isize| y >= 0 && x >= 0 && y < h && x < w && m.get(y as usize, x as usize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if fg(y, x) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| !fg(y + dy, x + dx)) {
                out.push((y as usize, x as usize));
            }
        }
    }
    out
}

/// Symmetric mean surface distance by comparing every pair of boundary points.
pub fn brute_assd(pred: &BinaryMask, gt: &BinaryMask) -> Option<f64> {
    let (a, b) = (loop_boundary(pred), loop_boundary(gt));
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let nearest = |p: (usize, usize), set: &[(usize, usize)]| {
        let d2 = set.iter().map(|q| (p.0.abs_diff(q.0).pow(2) + p.1.abs_diff(q.1).pow(2)) as u64).min().unwrap();
        (d2 as f64).sqrt()
    };
    let ab: f64 = a.iter().map(|&p| nearest(p, &b)).sum();
    let ba: f64 = b.iter().map(|&p| nearest(p, &a)).sum();
    Some((ab + ba) / (a.len() + b.len()) as f64)
}

/// Counts every scalar in every parameter tensor of the model.
pub fn enumerate_params<T: dsunet::Real>(store: &dsunet::autodiff::ParamStore<T>) -> usize {
    store.iter().map(|p| p.value.data().iter().count()).sum()
}

/// Separable vs standard k x k layer at the given widths, each as
/// `(closed form, enumerated)`.
pub fn layer_pair_counts(k: usize, c_in: usize, c_out: usize) -> ((usize, usize), (usize, usize)) {
    use dsunet::autodiff::ParamStore;
    use dsunet::nn::{Conv2d, ConvSpec, Init, ParamCount, SeparableConv};
    let mut rng = SplitMix64::new(0);
    let mut sep_store = ParamStore::<f32>::new();
    let sep = SeparableConv::new(&mut Init::new(&mut sep_store, &mut rng), "sep", c_in, c_out, k).unwrap();
    let mut std_store = ParamStore::<f32>::new();
    let std = Conv2d::new(&mut Init::new(&mut std_store, &mut rng), "std", ConvSpec::same(c_in, c_out, k)).unwrap();
    ((sep.param_count(), enumerate_params(&sep_store)), (std.param_count(), enumerate_params(&std_store)))
}

/// Largest gaps `(|gated - x|` with psi bias +30, `|gated|` with psi bias -30`)`
/// for a gate with random weights on random features.
pub fn gate_saturation_gaps(seed: u64) -> (f64, f64) {
    use dsunet::autodiff::ParamStore;
    use dsunet::model::AttentionGate;
    use dsunet::nn::Init;
    let mut rng = SplitMix64::new(seed);
    let mut store = ParamStore::<f64>::new();
    let gate = AttentionGate::new(&mut Init::new(&mut store, &mut rng), "gate", 8, 16, 0.01).unwrap();
    let x = random_tensor([2, 8, 6, 6], &mut rng);
    let gating = random_tensor([2, 16, 6, 6], &mut rng);
    let psi_bias = gate.psi.bias.unwrap();
    let mut gated_with = |bias: f64| {
        store.get_mut(psi_bias).value.fill(bias);
        let mut g = Graph::new();
        let (xv, gv) = (g.input(x.clone()), g.input(gating.clone()));
        let (out, _) = gate.forward(&mut g, &store, xv, gv).unwrap();
        g.value(out).clone()
    };
    let open = gated_with(30.0).max_abs_diff(&x);
    let closed = gated_with(-30.0).max_abs_diff(&Tensor::zeros(x.shape()));
    (open, closed)
}

/// Largest gap between a zero-weight attention pool (with a nonzero score
/// bias) and plain 2x2 average pooling.
pub fn zero_score_pool_gap(seed: u64) -> f64 {
    use dsunet::autodiff::ParamStore;
    use dsunet::nn::{AttentionPool, Init};
    let mut rng = SplitMix64::new(seed);
    let mut store = ParamStore::<f64>::new();
    let pool = AttentionPool::new(&mut Init::new(&mut store, &mut rng), "pool", 3).unwrap();
    store.get_mut(pool.score.bias.unwrap()).value.fill(2.5);
    let x = random_tensor([2, 3, 8, 10], &mut rng);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = pool.forward(&mut g, &store, xv).unwrap();
    let average = pool_windows(&x, |b, c, win| win.iter().map(|&(y, xx)| x.at(b, c, y, xx)).sum::<f64>() / 4.0);
    g.value(out).max_abs_diff(&average)
}
