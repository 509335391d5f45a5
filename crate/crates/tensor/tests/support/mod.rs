//! Independent oracles for the differentiable operations: direct nested-loop
//! convolution, scatter-form transposed convolution, the conv/deconv
//! inner-product identity and central finite differences. Shared with the
//! workspace acceptance suite.

#![allow(dead_code)]

use blockplan_tensor::{conv2d_forward, deconv2d_forward, grad_check, ConvSpec, GradCheck, Tensor};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
}

pub fn random<E: blockplan_tensor::Element>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<E> {
    Tensor::from_fn(shape, |_| E::from_f64(uniform(rng, -1.0, 1.0)))
}

pub fn pick(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize
}

/// Direct six-fold loop over (n, out, oy, ox, c, ky, kx).
pub fn conv_oracle(x: &Tensor<f64>, spec: &ConvSpec, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let k = spec.kernel;
    let oh = (h + 2 * spec.padding - k) / spec.stride + 1;
    let ow = (wd + 2 * spec.padding - k) / spec.stride + 1;
    let o = spec.out_channels;
    let mut y = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oi in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[oi];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((oi * c + ci) * k + ky) * k + kx]
                                    * x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    y[((ni * o + oi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    y
}

/// Scatter form: every input pixel stamps the kernel onto the output.
pub fn deconv_oracle(x: &Tensor<f64>, spec: &ConvSpec, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let k = spec.kernel;
    let oh = (h - 1) * spec.stride + k + spec.output_padding - 2 * spec.padding;
    let ow = (wd - 1) * spec.stride + k + spec.output_padding - 2 * spec.padding;
    let o = spec.out_channels;
    let mut y = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oi in 0..o {
            for p in 0..oh * ow {
                y[(ni * o + oi) * oh * ow + p] = b.data()[oi];
            }
        }
        for ci in 0..c {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x.data()[((ni * c + ci) * h + iy) * wd + ix];
                    for oi in 0..o {
                        for ky in 0..k {
                            for kx in 0..k {
                                let yy = (iy * spec.stride + ky) as isize - spec.padding as isize;
                                let xx = (ix * spec.stride + kx) as isize - spec.padding as isize;
                                if yy < 0 || xx < 0 || yy >= oh as isize || xx >= ow as isize {
                                    continue;
                                }
                                y[((ni * o + oi) * oh + yy as usize) * ow + xx as usize] +=
                                    v * w.data()[((ci * o + oi) * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn random_conv_case(rng: &mut ChaCha8Rng) -> (ConvSpec, usize, usize) {
    let c = pick(rng, 1, 3);
    let o = pick(rng, 1, 3);
    let k = pick(rng, 1, 3);
    let s = pick(rng, 1, 2);
    let p = pick(rng, 0, k / 2 + 1);
    let h = pick(rng, k.max(2), 8);
    let w = pick(rng, k.max(2), 8);
    (ConvSpec::new(c, o, k, s, p), h, w)
}

/// Worst errors over a seeded sweep of random small shapes.
#[derive(Debug, Default)]
pub struct Sweep {
    /// `(operation, shapes checked, worst relative gradient error)`.
    pub gradients: Vec<(&'static str, usize, f64)>,
    pub conv_cases: usize,
    pub conv_abs: f64,
    pub deconv_abs: f64,
    pub adjoint_cases: usize,
    pub adjoint_rel: f64,
}

fn away_from_kink(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| if v.abs() < 1e-2 { v + 2e-2 } else { v })
}

/// Finite-difference checks of every differentiable operation over
/// `shapes` random shapes each, plus the forward and adjointness oracles.
pub fn numeric_core_sweep(seed: u64, shapes: usize) -> Sweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sweep = Sweep::default();
    let mut record = |name: &'static str, errors: Vec<f64>| {
        sweep.gradients.push((name, errors.len(), errors.iter().cloned().fold(0.0, f64::max)));
    };

    let mut errs = Vec::new();
    while errs.len() < shapes {
        let (spec, h, w) = random_conv_case(&mut rng);
        let n = pick(&mut rng, 1, 2);
        let x: Tensor<f64> = random(&mut rng, &[n, spec.in_channels, h, w]);
        let wt: Tensor<f64> = random(&mut rng, &[spec.out_channels, spec.in_channels, spec.kernel, spec.kernel]);
        let b: Tensor<f64> = random(&mut rng, &[spec.out_channels]);
        let oh = spec.output_size(h).unwrap();
        let ow = spec.output_size(w).unwrap();
        let target: Tensor<f64> = random(&mut rng, &[x.shape()[0], spec.out_channels, oh, ow]);
        let r = grad_check(&[x, wt, b], GradCheck::F64, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], spec)?;
            let t = g.constant(target.clone());
            g.mse(y, t, None)
        })
        .unwrap();
        errs.push(r.max_rel_error);
    }
    record("conv2d", std::mem::take(&mut errs));

    while errs.len() < shapes {
        let (mut spec, h, w) = random_conv_case(&mut rng);
        spec.output_padding = pick(&mut rng, 0, spec.stride - 1);
        let (Ok(oh), Ok(ow)) = (spec.transposed_output_size(h), spec.transposed_output_size(w)) else {
            continue;
        };
        let x: Tensor<f64> = random(&mut rng, &[1, spec.in_channels, h, w]);
        let wt: Tensor<f64> = random(&mut rng, &[spec.in_channels, spec.out_channels, spec.kernel, spec.kernel]);
        let b: Tensor<f64> = random(&mut rng, &[spec.out_channels]);
        let target: Tensor<f64> = random(&mut rng, &[1, spec.out_channels, oh, ow]);
        let r = grad_check(&[x, wt, b], GradCheck::F64, |g, v| {
            let y = g.deconv2d(v[0], v[1], v[2], spec)?;
            let t = g.constant(target.clone());
            g.mse(y, t, None)
        })
        .unwrap();
        errs.push(r.max_rel_error);
    }
    record("deconv2d", std::mem::take(&mut errs));

    let (mut affine, mut relu, mut sigmoid, mut mse, mut concat, mut reshape, mut add) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..shapes {
        let (b, n, m) = (pick(&mut rng, 1, 4), pick(&mut rng, 1, 7), pick(&mut rng, 1, 6));
        let x = away_from_kink(random(&mut rng, &[b, n]));
        let w: Tensor<f64> = random(&mut rng, &[m, n]);
        let bias: Tensor<f64> = random(&mut rng, &[m]);
        let target: Tensor<f64> = random(&mut rng, &[b, m]);
        let plain: Tensor<f64> = random(&mut rng, &[b, n]);
        let check = |points: &[Tensor<f64>], f: &dyn Fn(&mut blockplan_tensor::Graph<f64>, &[blockplan_tensor::Var]) -> blockplan_tensor::Result<blockplan_tensor::Var>| {
            grad_check(points, GradCheck::F64, |g, v| f(g, v)).unwrap().max_rel_error
        };
        affine.push(check(&[x.clone(), w.clone(), bias.clone()], &|g, v| {
            let y = g.affine(v[0], v[1], v[2])?;
            let t = g.constant(target.clone());
            g.mse(y, t, None)
        }));
        relu.push(check(std::slice::from_ref(&x), &|g, v| {
            let y = g.relu(v[0]);
            let t = g.constant(plain.clone());
            g.mse(y, t, None)
        }));
        sigmoid.push(check(std::slice::from_ref(&x), &|g, v| {
            let y = g.sigmoid(v[0]);
            let t = g.constant(plain.clone());
            g.mse(y, t, None)
        }));
        let mask = Tensor::<f64>::from_fn(&[b, n], |_| (rng.next_u32() % 2) as f64);
        mse.push(check(&[x.clone(), plain.clone()], &|g, v| {
            let m = g.constant(mask.clone());
            g.mse(v[0], v[1], Some(m))
        }));
        let extra: Tensor<f64> = random(&mut rng, &[b, m]);
        let wc: Tensor<f64> = random(&mut rng, &[m, n + m]);
        concat.push(check(&[x.clone(), extra.clone(), wc.clone()], &|g, v| {
            let c = g.concat(v[0], v[1])?;
            let z = g.constant(Tensor::zeros(&[m]));
            let y = g.affine(c, v[2], z)?;
            let t = g.constant(target.clone());
            g.mse(y, t, None)
        }));
        let flat: Tensor<f64> = random(&mut rng, &[1, b * n]);
        reshape.push(check(std::slice::from_ref(&x), &|g, v| {
            let r = g.reshape(v[0], &[1, b * n])?;
            let t = g.constant(flat.clone());
            g.mse(r, t, None)
        }));
        add.push(check(&[x.clone(), plain.clone()], &|g, v| {
            let s = g.add(v[0], v[1])?;
            let s = g.sigmoid(s);
            let t = g.constant(plain.clone());
            g.mse(s, t, None)
        }));
    }
    for (name, errs) in [
        ("affine", affine),
        ("relu", relu),
        ("sigmoid", sigmoid),
        ("masked mse", mse),
        ("concat", concat),
        ("reshape", reshape),
        ("add", add),
    ] {
        record(name, errs);
    }

    for _ in 0..shapes {
        let (spec, h, w) = random_conv_case(&mut rng);
        let n = pick(&mut rng, 1, 2);
        let x: Tensor<f64> = random(&mut rng, &[n, spec.in_channels, h, w]);
        let wt: Tensor<f64> = random(&mut rng, &[spec.out_channels, spec.in_channels, spec.kernel, spec.kernel]);
        let b: Tensor<f64> = random(&mut rng, &[spec.out_channels]);
        let want = conv_oracle(&x, &spec, &wt, &b);
        let got = conv2d_forward(&x.cast::<f32>(), &spec, &wt.cast(), &b.cast()).unwrap();
        assert_eq!(got.len(), want.len());
        for (g, w) in got.data().iter().zip(&want) {
            sweep.conv_abs = sweep.conv_abs.max((*g as f64 - w).abs());
        }
        sweep.conv_cases += 1;

        let mut dspec = spec;
        dspec.output_padding = pick(&mut rng, 0, spec.stride - 1);
        if dspec.transposed_output_size(h).is_ok() && dspec.transposed_output_size(w).is_ok() {
            let x: Tensor<f64> = random(&mut rng, &[1, spec.in_channels, h, w]);
            let wt: Tensor<f64> = random(&mut rng, &[spec.in_channels, spec.out_channels, spec.kernel, spec.kernel]);
            let want = deconv_oracle(&x, &dspec, &wt, &b);
            let got = deconv2d_forward(&x, &dspec, &wt, &b).unwrap();
            for (g, w) in got.data().iter().zip(&want) {
                sweep.deconv_abs = sweep.deconv_abs.max((g - w).abs());
            }
        }
    }

    while sweep.adjoint_cases < shapes {
        let (spec, h, w) = random_conv_case(&mut rng);
        let (oh, ow) = (spec.output_size(h).unwrap(), spec.output_size(w).unwrap());
        let op_h = h + 2 * spec.padding - spec.kernel - (oh - 1) * spec.stride;
        let op_w = w + 2 * spec.padding - spec.kernel - (ow - 1) * spec.stride;
        if op_h != op_w {
            continue;
        }
        let tspec = ConvSpec::new(spec.out_channels, spec.in_channels, spec.kernel, spec.stride, spec.padding)
            .with_output_padding(op_h);
        let x: Tensor<f32> = random(&mut rng, &[1, spec.in_channels, h, w]);
        let y: Tensor<f32> = random(&mut rng, &[1, spec.out_channels, oh, ow]);
        let k: Tensor<f32> = random(&mut rng, &[spec.out_channels, spec.in_channels, spec.kernel, spec.kernel]);
        let cx = conv2d_forward(&x, &spec, &k, &Tensor::zeros(&[spec.out_channels])).unwrap();
        let dy = deconv2d_forward(&y, &tspec, &k, &Tensor::zeros(&[spec.in_channels])).unwrap();
        let (lhs, rhs) = (cx.dot(&y), x.dot(&dy));
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-6);
        sweep.adjoint_rel = sweep.adjoint_rel.max(rel);
        sweep.adjoint_cases += 1;
    }
    sweep
}
