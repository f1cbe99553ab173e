//! Layer primitives with hand-derived gradients.
//!
//! Activations are `[N, C, H, W]` for the convolutional part and `[N, F]`
//! after flattening. Linear weights are stored input-major (`[in, out]`).

use super::tensor::{axpy, dot, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn expect_rank(x: &Tensor, rank: usize, what: &str) -> Result<()> {
    if x.shape().len() != rank {
        return Err(Error::Shape(format!(
            "{what} expects rank {rank}, got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// Stride-1, zero-padded 2D cross-correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub pad: usize,
    /// `[out, in, k, k]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, pad: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            pad,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = (h + 2 * self.pad + 1).checked_sub(self.kernel);
        let ow = (w + 2 * self.pad + 1).checked_sub(self.kernel);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(Error::Shape(format!(
                "kernel {} too large for {h}x{w} input",
                self.kernel
            ))),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
        expect_rank(x, 4, "conv2d")?;
        let s = x.shape();
        if s[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "conv2d expects {} input channels, got {}",
                self.in_channels, s[1]
            )));
        }
        let (oh, ow) = self.out_hw(s[2], s[3])?;
        Ok((s[0], s[2], s[3], oh, ow))
    }

    /// Valid output-index range along one axis for kernel tap `k`.
    #[inline]
    fn range(&self, k: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        // input index = out + k - pad must lie in [0, in_len)
        let lo = self.pad.saturating_sub(k);
        let hi = (in_len + self.pad).saturating_sub(k).min(out_len);
        (lo, hi.max(lo))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w, oh, ow) = self.check_input(x)?;
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        let mut y = Tensor::zeros(&[n, cout, oh, ow]);
        let xd = x.data();
        let yd = y.data_mut();
        for b in 0..n {
            for o in 0..cout {
                let yplane = &mut yd[(b * cout + o) * oh * ow..(b * cout + o + 1) * oh * ow];
                yplane.fill(self.bias[o]);
                for c in 0..cin {
                    let xplane = &xd[(b * cin + c) * h * w..(b * cin + c + 1) * h * w];
                    for ky in 0..k {
                        let (oy_lo, oy_hi) = self.range(ky, h, oh);
                        for kx in 0..k {
                            let wv = self.weight[((o * cin + c) * k + ky) * k + kx];
                            let (ox_lo, ox_hi) = self.range(kx, w, ow);
                            for oy in oy_lo..oy_hi {
                                let iy = oy + ky - self.pad;
                                let ix0 = ox_lo + kx - self.pad;
                                let len = ox_hi - ox_lo;
                                axpy(
                                    wv,
                                    &xplane[iy * w + ix0..iy * w + ix0 + len],
                                    &mut yplane[oy * ow + ox_lo..oy * ow + ox_lo + len],
                                );
                            }
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, grad_y: &Tensor) -> Result<ConvGrads> {
        let (n, h, w, oh, ow) = self.check_input(x)?;
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        if grad_y.shape() != [n, cout, oh, ow] {
            return Err(Error::Shape(format!(
                "conv2d grad shape {:?} does not match output {:?}",
                grad_y.shape(),
                [n, cout, oh, ow]
            )));
        }
        let mut gx = Tensor::zeros(x.shape());
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; cout];
        let xd = x.data();
        let gyd = grad_y.data();
        let gxd = gx.data_mut();
        for b in 0..n {
            for o in 0..cout {
                let gplane = &gyd[(b * cout + o) * oh * ow..(b * cout + o + 1) * oh * ow];
                gb[o] += gplane.iter().sum::<f64>();
                for c in 0..cin {
                    let base = (b * cin + c) * h * w;
                    for ky in 0..k {
                        let (oy_lo, oy_hi) = self.range(ky, h, oh);
                        for kx in 0..k {
                            let widx = ((o * cin + c) * k + ky) * k + kx;
                            let wv = self.weight[widx];
                            let (ox_lo, ox_hi) = self.range(kx, w, ow);
                            let len = ox_hi - ox_lo;
                            let mut acc = 0.0;
                            for oy in oy_lo..oy_hi {
                                let iy = oy + ky - self.pad;
                                let ix0 = ox_lo + kx - self.pad;
                                let g = &gplane[oy * ow + ox_lo..oy * ow + ox_lo + len];
                                let xs = base + iy * w + ix0;
                                acc += dot(g, &xd[xs..xs + len]);
                                axpy(wv, g, &mut gxd[xs..xs + len]);
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
        Ok(ConvGrads {
            input: gx,
            weight: gw,
            bias: gb,
        })
    }
}

pub fn conv2d_forward(layer: &Conv2d, x: &Tensor) -> Result<Tensor> {
    layer.forward(x)
}

pub fn conv2d_backward(layer: &Conv2d, x: &Tensor, grad_y: &Tensor) -> Result<ConvGrads> {
    layer.backward(x, grad_y)
}

/// Per-channel batch normalization over `[N, C, H, W]` (or `[N, C]`).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Saved forward state needed by the backward pass and the running-stat update.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    /// Elements per channel that went into the statistics.
    pub count: usize,
    pub mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub input: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() < 2 || s[1] != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm over {} channels got {s:?}",
                self.channels
            )));
        }
        Ok((s[0], s[2..].iter().product()))
    }

    /// Forward pass. Running statistics are not touched here; see
    /// [`BatchNorm::update_running`].
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, BnCache)> {
        let (n, spatial) = self.dims(x)?;
        let c = self.channels;
        let count = n * spatial;
        let xd = x.data();
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::BatchTooSmall(n));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        let off = (b * c + ch) * spatial;
                        s += xd[off..off + spatial].iter().sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut v = 0.0;
                    for b in 0..n {
                        let off = (b * c + ch) * spatial;
                        v += xd[off..off + spatial]
                            .iter()
                            .map(|x| (x - m) * (x - m))
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = v / count as f64;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut normalized = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        {
            let nd = normalized.data_mut();
            let yd = y.data_mut();
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * spatial;
                    let (m, is, g, be) = (mean[ch], inv_std[ch], self.gamma[ch], self.beta[ch]);
                    for i in off..off + spatial {
                        let xh = (xd[i] - m) * is;
                        nd[i] = xh;
                        yd[i] = g * xh + be;
                    }
                }
            }
        }
        Ok((
            y,
            BnCache {
                normalized,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                count,
                mode,
            },
        ))
    }

    /// Exponential moving average of batch statistics; variance uses the
    /// unbiased estimate.
    pub fn update_running(&mut self, cache: &BnCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let unbias = cache.count as f64 / (cache.count as f64 - 1.0);
        for ch in 0..self.channels {
            self.running_mean[ch] =
                (1.0 - BN_MOMENTUM) * self.running_mean[ch] + BN_MOMENTUM * cache.batch_mean[ch];
            self.running_var[ch] = (1.0 - BN_MOMENTUM) * self.running_var[ch]
                + BN_MOMENTUM * cache.batch_var[ch] * unbias;
        }
    }

    pub fn backward(&self, cache: &BnCache, grad_y: &Tensor) -> Result<BnGrads> {
        let (n, spatial) = self.dims(grad_y)?;
        if grad_y.shape() != cache.normalized.shape() {
            return Err(Error::Shape("batchnorm grad/cache shape mismatch".into()));
        }
        let c = self.channels;
        let gy = grad_y.data();
        let xh = cache.normalized.data();
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * spatial;
                gbeta[ch] += gy[off..off + spatial].iter().sum::<f64>();
                ggamma[ch] += dot(&gy[off..off + spatial], &xh[off..off + spatial]);
            }
        }
        let mut gx = Tensor::zeros(grad_y.shape());
        let gxd = gx.data_mut();
        let m = cache.count as f64;
        for ch in 0..c {
            let scale = self.gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Train => {
                    let (sb, sg) = (gbeta[ch] / m, ggamma[ch] / m);
                    for b in 0..n {
                        let off = (b * c + ch) * spatial;
                        for i in off..off + spatial {
                            gxd[i] = scale * (gy[i] - sb - xh[i] * sg);
                        }
                    }
                }
                Mode::Eval => {
                    for b in 0..n {
                        let off = (b * c + ch) * spatial;
                        for i in off..off + spatial {
                            gxd[i] = scale * gy[i];
                        }
                    }
                }
            }
        }
        Ok(BnGrads {
            input: gx,
            gamma: ggamma,
            beta: gbeta,
        })
    }
}

pub fn batchnorm_forward(layer: &BatchNorm, x: &Tensor, mode: Mode) -> Result<(Tensor, BnCache)> {
    layer.forward(x, mode)
}

pub fn batchnorm_backward(layer: &BatchNorm, cache: &BnCache, grad_y: &Tensor) -> Result<BnGrads> {
    layer.backward(cache, grad_y)
}

/// Fully connected layer, `y = x W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }

    /// Identity map (square layers only); handy in tests.
    pub fn identity(n: usize) -> Self {
        let mut l = Self::new(n, n);
        for i in 0..n {
            l.weight[i * n + i] = 1.0;
        }
        l
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        expect_rank(x, 2, "linear")?;
        if x.shape()[1] != self.in_features {
            return Err(Error::Shape(format!(
                "linear expects {} features, got {}",
                self.in_features,
                x.shape()[1]
            )));
        }
        Ok(x.shape()[0])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.check(x)?;
        let fo = self.out_features;
        let mut y = Tensor::zeros(&[n, fo]);
        let yd = y.data_mut();
        for b in 0..n {
            let yrow = &mut yd[b * fo..(b + 1) * fo];
            yrow.copy_from_slice(&self.bias);
            for (i, &xv) in x.item(b).iter().enumerate() {
                if xv != 0.0 {
                    axpy(xv, &self.weight[i * fo..(i + 1) * fo], yrow);
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, grad_y: &Tensor) -> Result<LinearGrads> {
        let n = self.check(x)?;
        let (fi, fo) = (self.in_features, self.out_features);
        if grad_y.shape() != [n, fo] {
            return Err(Error::Shape(format!(
                "linear grad shape {:?}, expected {:?}",
                grad_y.shape(),
                [n, fo]
            )));
        }
        let mut gx = Tensor::zeros(&[n, fi]);
        let mut gw = vec![0.0; fi * fo];
        let mut gb = vec![0.0; fo];
        let gxd = gx.data_mut();
        for b in 0..n {
            let g = grad_y.item(b);
            axpy(1.0, g, &mut gb);
            let xrow = x.item(b);
            for i in 0..fi {
                gxd[b * fi + i] = dot(&self.weight[i * fo..(i + 1) * fo], g);
                let xv = xrow[i];
                if xv != 0.0 {
                    axpy(xv, g, &mut gw[i * fo..(i + 1) * fo]);
                }
            }
        }
        Ok(LinearGrads {
            input: gx,
            weight: gw,
            bias: gb,
        })
    }
}

pub fn linear_forward(layer: &Linear, x: &Tensor) -> Result<Tensor> {
    layer.forward(x)
}

pub fn linear_backward(layer: &Linear, x: &Tensor, grad_y: &Tensor) -> Result<LinearGrads> {
    layer.backward(x, grad_y)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Gradient through ReLU given the forward *output*.
pub fn relu_backward(y: &Tensor, grad_y: &Tensor) -> Tensor {
    let mut g = grad_y.clone();
    for (gv, yv) in g.data_mut().iter_mut().zip(y.data()) {
        if *yv <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn conv_identity_kernel() {
        let mut conv = Conv2d::new(1, 1, 3, 1);
        conv.weight[4] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(&[2, 1, 5, 6], &mut rng);
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_zero_weights_give_bias() {
        let mut conv = Conv2d::new(2, 3, 3, 1);
        conv.bias = vec![0.5, -1.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = conv.forward(&random(&[1, 2, 4, 4], &mut rng)).unwrap();
        for o in 0..3 {
            assert!(y.data()[o * 16..(o + 1) * 16].iter().all(|&v| v == conv.bias[o]));
        }
    }

    #[test]
    fn conv_shape_errors() {
        let conv = Conv2d::new(2, 3, 3, 1);
        assert!(conv.forward(&Tensor::zeros(&[1, 3, 4, 4])).is_err());
        assert!(conv.forward(&Tensor::zeros(&[3, 4, 4])).is_err());
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        assert!(conv.backward(&x, &Tensor::zeros(&[1, 2, 4, 4])).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new(2, 3, 3, 1);
        for w in conv.weight.iter_mut().chain(conv.bias.iter_mut()) {
            *w = rng.random_range(-1.0..1.0);
        }
        let x = random(&[1, 2, 4, 4], &mut rng);
        let probe = random(&[1, 3, 4, 4], &mut rng);
        // L = sum(probe * conv(x)), so dL/dy = probe
        let loss = |c: &Conv2d, x: &Tensor| dot(c.forward(x).unwrap().data(), probe.data());
        let g = conv.backward(&x, &probe).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
            worst = worst.max(rel_err(g.input.data()[i], fd));
        }
        for i in 0..conv.weight.len() {
            let mut cp = conv.clone();
            cp.weight[i] += h;
            let mut cm = conv.clone();
            cm.weight[i] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
            worst = worst.max(rel_err(g.weight[i], fd));
        }
        for i in 0..conv.bias.len() {
            let mut cp = conv.clone();
            cp.bias[i] += h;
            let mut cm = conv.clone();
            cm.bias[i] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
            worst = worst.max(rel_err(g.bias[i], fd));
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bn = BatchNorm::new(3);
        let mut x = random(&[4, 3, 5, 5], &mut rng);
        for v in x.data_mut() {
            *v = *v * 3.0 + 7.0;
        }
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| y.data()[(b * 3 + ch) * 25..(b * 3 + ch + 1) * 25].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6);
            // eps shifts the variance slightly below 1
            assert!((v - 1.0).abs() < 1e-4, "var {v}");
        }
    }

    #[test]
    fn batchnorm_eval_identity() {
        let bn = BatchNorm::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[1, 2, 3, 3], &mut rng);
        let (y, _) = bn.forward(&x, Mode::Eval).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-5 * a.abs().max(1.0));
        }
    }

    #[test]
    fn batchnorm_rejects_single_sample_training() {
        let bn = BatchNorm::new(2);
        assert!(matches!(
            bn.forward(&Tensor::zeros(&[1, 2, 3, 3]), Mode::Train),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn batchnorm_running_stats_update() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
        bn.update_running(&cache);
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
        // unbiased var of {1, 3} is 2
        assert!((bn.running_var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNorm::new(2);
        for g in bn.gamma.iter_mut().chain(bn.beta.iter_mut()) {
            *g = rng.random_range(0.5..1.5);
        }
        let x = random(&[3, 2, 3, 3], &mut rng);
        let probe = random(&[3, 2, 3, 3], &mut rng);
        let loss = |b: &BatchNorm, x: &Tensor| {
            dot(b.forward(x, Mode::Train).unwrap().0.data(), probe.data())
        };
        let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
        let g = bn.backward(&cache, &probe).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * h);
            worst = worst.max(rel_err(g.input.data()[i], fd));
        }
        for i in 0..2 {
            let mut p = bn.clone();
            p.gamma[i] += h;
            let mut m = bn.clone();
            m.gamma[i] -= h;
            worst = worst.max(rel_err(g.gamma[i], (loss(&p, &x) - loss(&m, &x)) / (2.0 * h)));
            let mut p = bn.clone();
            p.beta[i] += h;
            let mut m = bn.clone();
            m.beta[i] -= h;
            worst = worst.max(rel_err(g.beta[i], (loss(&p, &x) - loss(&m, &x)) / (2.0 * h)));
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&y, &Tensor::from_vec(&[1, 3], vec![5.0, 5.0, 5.0]).unwrap());
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn linear_identity_and_shapes() {
        let l = Linear::identity(4);
        let x = Tensor::from_vec(&[2, 4], (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(l.forward(&x).unwrap(), x);
        assert!(l.forward(&Tensor::zeros(&[2, 3])).is_err());
        assert!(l.backward(&x, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut l = Linear::new(5, 3);
        for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *w = rng.random_range(-1.0..1.0);
        }
        let x = random(&[2, 5], &mut rng);
        let probe = random(&[2, 3], &mut rng);
        let g = l.backward(&x, &probe).unwrap();
        // analytic check by hand: dL/dW[i,o] = sum_b x[b,i] probe[b,o]
        for i in 0..5 {
            for o in 0..3 {
                let e: f64 = (0..2).map(|b| x.item(b)[i] * probe.item(b)[o]).sum();
                assert!((g.weight[i * 3 + o] - e).abs() < 1e-12);
            }
        }
        for b in 0..2 {
            for i in 0..5 {
                let e: f64 = (0..3).map(|o| l.weight[i * 3 + o] * probe.item(b)[o]).sum();
                assert!((g.input.item(b)[i] - e).abs() < 1e-12);
            }
        }
    }
}
