use rand::{Rng, RngCore};

use super::{gemm, shape_err, Ctx, Layer, NeuralError, Param, Result, Tensor};

fn he_uniform(rng: &mut dyn RngCore, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// 1-D convolution with "same" padding: output length is
/// `ceil(length / stride)`, with any odd padding placed on the right.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Conv1d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        rng: &mut dyn RngCore,
    ) -> Conv1d {
        assert!(kernel >= 1 && stride >= 1 && dilation >= 1);
        let n = out_channels * in_channels * kernel;
        Conv1d {
            in_channels,
            out_channels,
            kernel,
            stride,
            dilation,
            weight: Param::new(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel],
                he_uniform(rng, in_channels * kernel, n),
            ),
            bias: Param::new(format!("{name}.bias"), vec![out_channels], vec![0.0; out_channels]),
            input: None,
        }
    }

    pub fn output_len(&self, length: usize) -> usize {
        length.div_ceil(self.stride)
    }

    fn pad_left(&self, length: usize) -> usize {
        let lo = self.output_len(length);
        let span = (lo.max(1) - 1) * self.stride + (self.kernel - 1) * self.dilation + 1;
        span.saturating_sub(length) / 2
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    /// `cols[(i*K + k) * lo + t] = x[i, t*stride + k*dilation - pad]`.
    fn im2col(&self, x: &[f64], length: usize, cols: &mut [f64]) {
        let lo = self.output_len(length);
        let pad = self.pad_left(length) as isize;
        for i in 0..self.in_channels {
            let row = &x[i * length..(i + 1) * length];
            for k in 0..self.kernel {
                let out = &mut cols[(i * self.kernel + k) * lo..(i * self.kernel + k + 1) * lo];
                let offset = (k * self.dilation) as isize - pad;
                for (t, v) in out.iter_mut().enumerate() {
                    let pos = (t * self.stride) as isize + offset;
                    *v = if pos >= 0 && (pos as usize) < length {
                        row[pos as usize]
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], length: usize, dx: &mut [f64]) {
        let lo = self.output_len(length);
        let pad = self.pad_left(length) as isize;
        for i in 0..self.in_channels {
            let row = &mut dx[i * length..(i + 1) * length];
            for k in 0..self.kernel {
                let src = &cols[(i * self.kernel + k) * lo..(i * self.kernel + k + 1) * lo];
                let offset = (k * self.dilation) as isize - pad;
                for (t, v) in src.iter().enumerate() {
                    let pos = (t * self.stride) as isize + offset;
                    if pos >= 0 && (pos as usize) < length {
                        row[pos as usize] += v;
                    }
                }
            }
        }
    }
}

impl Layer for Conv1d {
    fn name(&self) -> &'static str {
        "conv1d"
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        if x.channels() != self.in_channels {
            return Err(shape_err("conv1d", format!("[B, {}, L]", self.in_channels), x));
        }
        let [b, _, l] = x.shape;
        let lo = self.output_len(l);
        let ck = self.in_channels * self.kernel;
        let mut y = Tensor::zeros([b, self.out_channels, lo]);
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![0.0; ck * lo] };
        for n in 0..b {
            let xb = &x.data[n * self.in_channels * l..(n + 1) * self.in_channels * l];
            let yb = &mut y.data[n * self.out_channels * lo..(n + 1) * self.out_channels * lo];
            let src: &[f64] = if self.is_pointwise() {
                xb
            } else {
                self.im2col(xb, l, &mut cols);
                &cols
            };
            gemm(self.out_channels, ck, lo, &self.weight.value, false, src, false, 0.0, yb);
            for (o, row) in yb.chunks_exact_mut(lo.max(1)).enumerate() {
                let bias = self.bias.value[o];
                row.iter_mut().for_each(|v| *v += bias);
            }
        }
        self.input = ctx.training().then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or(NeuralError::NoTape("conv1d"))?;
        let [b, _, l] = x.shape;
        let lo = self.output_len(l);
        if grad.shape != [b, self.out_channels, lo] {
            return Err(shape_err("conv1d backward", format!("[{b}, {}, {lo}]", self.out_channels), grad));
        }
        let ck = self.in_channels * self.kernel;
        let mut dx = Tensor::zeros(x.shape);
        let mut cols = vec![0.0; ck * lo];
        let mut dcols = vec![0.0; ck * lo];
        let pointwise = self.is_pointwise();
        self.weight.grad_mut();
        self.bias.grad_mut();
        for n in 0..b {
            let xb = &x.data[n * self.in_channels * l..(n + 1) * self.in_channels * l];
            let gb = &grad.data[n * self.out_channels * lo..(n + 1) * self.out_channels * lo];
            let dxb = &mut dx.data[n * self.in_channels * l..(n + 1) * self.in_channels * l];
            let src: &[f64] = if pointwise {
                xb
            } else {
                self.im2col(xb, l, &mut cols);
                &cols
            };
            gemm(self.out_channels, lo, ck, gb, false, src, true, 1.0, &mut self.weight.grad);
            if pointwise {
                gemm(ck, self.out_channels, lo, &self.weight.value, true, gb, false, 1.0, dxb);
            } else {
                gemm(ck, self.out_channels, lo, &self.weight.value, true, gb, false, 0.0, &mut dcols);
                self.col2im(&dcols, l, dxb);
            }
            for (o, row) in gb.chunks_exact(lo.max(1)).enumerate() {
                self.bias.grad[o] += row.iter().sum::<f64>();
            }
        }
        Ok(dx)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    fn clear_tape(&mut self) {
        self.input = None;
    }
}

/// Batch normalization over batch and length per channel. Running
/// statistics follow `r <- momentum*r + (1-momentum)*batch` with the biased
/// batch variance.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    tape: Option<(Tensor, Vec<f64>)>,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> BatchNorm {
        BatchNorm {
            channels,
            eps: 1e-5,
            momentum: 0.9,
            gamma: Param::new(format!("{name}.gamma"), vec![channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.beta"), vec![channels], vec![0.0; channels]),
            running_mean: Param::buffer(format!("{name}.running_mean"), vec![channels], vec![0.0; channels]),
            running_var: Param::buffer(format!("{name}.running_var"), vec![channels], vec![1.0; channels]),
            tape: None,
        }
    }
}

impl Layer for BatchNorm {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        if x.channels() != self.channels {
            return Err(shape_err("batch_norm", format!("[B, {}, L]", self.channels), x));
        }
        let [b, c, l] = x.shape;
        let mut y = Tensor::zeros(x.shape);
        if !ctx.training() {
            for ch in 0..c {
                let inv = 1.0 / (self.running_var.value[ch] + self.eps).sqrt();
                let scale = self.gamma.value[ch] * inv;
                let shift = self.beta.value[ch] - self.running_mean.value[ch] * scale;
                for n in 0..b {
                    let start = (n * c + ch) * l;
                    for (o, v) in y.data[start..start + l].iter_mut().zip(&x.data[start..start + l]) {
                        *o = v * scale + shift;
                    }
                }
            }
            self.tape = None;
            return Ok(y);
        }
        let count = (b * l) as f64;
        let mut xhat = Tensor::zeros(x.shape);
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let rows = (0..b).map(|n| x.row(n, ch));
            let mean = rows.clone().flatten().sum::<f64>() / count;
            let var = rows.flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = inv;
            let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
            for n in 0..b {
                let start = (n * c + ch) * l;
                for k in start..start + l {
                    let h = (x.data[k] - mean) * inv;
                    xhat.data[k] = h;
                    y.data[k] = g * h + bt;
                }
            }
            let m = self.momentum;
            self.running_mean.value[ch] = m * self.running_mean.value[ch] + (1.0 - m) * mean;
            self.running_var.value[ch] = m * self.running_var.value[ch] + (1.0 - m) * var;
        }
        self.tape = Some((xhat, inv_std));
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (xhat, inv_std) = self.tape.as_ref().ok_or(NeuralError::NoTape("batch_norm"))?;
        if grad.shape != xhat.shape {
            return Err(shape_err("batch_norm backward", format!("{:?}", xhat.shape), grad));
        }
        let [b, c, l] = xhat.shape;
        let count = (b * l) as f64;
        let mut dx = Tensor::zeros(xhat.shape);
        self.gamma.grad_mut();
        self.beta.grad_mut();
        for ch in 0..c {
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for n in 0..b {
                for (g, h) in grad.row(n, ch).iter().zip(xhat.row(n, ch)) {
                    sum_g += g;
                    sum_gx += g * h;
                }
            }
            self.gamma.grad[ch] += sum_gx;
            self.beta.grad[ch] += sum_g;
            let gamma = self.gamma.value[ch];
            let scale = gamma * inv_std[ch] / count;
            for n in 0..b {
                let start = (n * c + ch) * l;
                for k in start..start + l {
                    dx.data[k] = scale * (count * grad.data[k] - sum_g - xhat.data[k] * sum_gx);
                }
            }
        }
        Ok(dx)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }

    fn clear_tape(&mut self) {
        self.tape = None;
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    output: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Relu {
        Relu::default()
    }
}

impl Layer for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let y = Tensor {
            shape: x.shape,
            data: x.data.iter().map(|v| v.max(0.0)).collect(),
        };
        self.output = ctx.training().then(|| y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let y = self.output.as_ref().ok_or(NeuralError::NoTape("relu"))?;
        if grad.shape != y.shape {
            return Err(shape_err("relu backward", format!("{:?}", y.shape), grad));
        }
        Ok(Tensor {
            shape: y.shape,
            data: grad
                .data
                .iter()
                .zip(&y.data)
                .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                .collect(),
        })
    }

    fn clear_tape(&mut self) {
        self.output = None;
    }
}

/// Non-overlapping max pooling with window = stride. A trailing partial
/// window is pooled over the samples it has. Ties go to the first sample.
#[derive(Debug, Clone)]
pub struct MaxPool {
    pub stride: usize,
    tape: Option<([usize; 3], Vec<usize>)>,
}

impl MaxPool {
    pub fn new(stride: usize) -> MaxPool {
        assert!(stride >= 1);
        MaxPool { stride, tape: None }
    }

    pub fn output_len(&self, length: usize) -> usize {
        length.div_ceil(self.stride)
    }
}

impl Layer for MaxPool {
    fn name(&self) -> &'static str {
        "max_pool"
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let [b, c, l] = x.shape;
        let lo = self.output_len(l);
        let mut y = Tensor::zeros([b, c, lo]);
        let mut arg = vec![0; b * c * lo];
        for r in 0..b * c {
            let row = &x.data[r * l..(r + 1) * l];
            for t in 0..lo {
                let start = t * self.stride;
                let end = (start + self.stride).min(l);
                let mut best = start;
                for k in start + 1..end {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                y.data[r * lo + t] = row[best];
                arg[r * lo + t] = r * l + best;
            }
        }
        self.tape = ctx.training().then_some((x.shape, arg));
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (shape, arg) = self.tape.as_ref().ok_or(NeuralError::NoTape("max_pool"))?;
        if grad.len() != arg.len() {
            return Err(shape_err("max_pool backward", format!("{} values", arg.len()), grad));
        }
        let mut dx = Tensor::zeros(*shape);
        for (g, i) in grad.data.iter().zip(arg) {
            dx.data[*i] += g;
        }
        Ok(dx)
    }

    fn clear_tape(&mut self) {
        self.tape = None;
    }
}

/// Inverted dropout. With `freeze` set, a training pass reuses the previous
/// mask instead of drawing a new one (for finite-difference checks).
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    pub freeze: bool,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Dropout {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        Dropout {
            p,
            freeze: false,
            mask: None,
        }
    }
}

impl Layer for Dropout {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        if !ctx.training() || self.p == 0.0 {
            self.mask = ctx.training().then(|| vec![1.0; x.len()]);
            return Ok(x.clone());
        }
        let reuse = self.freeze && self.mask.as_ref().is_some_and(|m| m.len() == x.len());
        if !reuse {
            let keep = 1.0 / (1.0 - self.p);
            self.mask = Some(
                (0..x.len())
                    .map(|_| if ctx.rng.random::<f64>() < self.p { 0.0 } else { keep })
                    .collect(),
            );
        }
        let mask = self.mask.as_ref().unwrap();
        Ok(Tensor {
            shape: x.shape,
            data: x.data.iter().zip(mask).map(|(v, m)| v * m).collect(),
        })
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or(NeuralError::NoTape("dropout"))?;
        if grad.len() != mask.len() {
            return Err(shape_err("dropout backward", format!("{} values", mask.len()), grad));
        }
        Ok(Tensor {
            shape: grad.shape,
            data: grad.data.iter().zip(mask).map(|(g, m)| g * m).collect(),
        })
    }

    fn clear_tape(&mut self) {
        if !self.freeze {
            self.mask = None;
        }
    }
}

/// Fully connected layer over the flattened `channels x length` of each
/// instance; the output is `[B, out, 1]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut dyn RngCore) -> Dense {
        Dense {
            in_features,
            out_features,
            weight: Param::new(
                format!("{name}.weight"),
                vec![out_features, in_features],
                he_uniform(rng, in_features, in_features * out_features),
            ),
            bias: Param::new(format!("{name}.bias"), vec![out_features], vec![0.0; out_features]),
            input: None,
        }
    }
}

impl Layer for Dense {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        if x.channels() * x.length() != self.in_features {
            return Err(shape_err("dense", format!("[B, C, L] with C*L = {}", self.in_features), x));
        }
        let b = x.batch();
        let mut y = Tensor::zeros([b, self.out_features, 1]);
        for row in y.data.chunks_exact_mut(self.out_features) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(b, self.in_features, self.out_features, &x.data, false, &self.weight.value, true, 1.0, &mut y.data);
        self.input = ctx.training().then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or(NeuralError::NoTape("dense"))?;
        let b = x.batch();
        if grad.len() != b * self.out_features {
            return Err(shape_err("dense backward", format!("[{b}, {}, 1]", self.out_features), grad));
        }
        self.weight.grad_mut();
        self.bias.grad_mut();
        gemm(self.out_features, b, self.in_features, &grad.data, true, &x.data, false, 1.0, &mut self.weight.grad);
        for row in grad.data.chunks_exact(self.out_features) {
            for (g, v) in self.bias.grad.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = Tensor::zeros(x.shape);
        gemm(b, self.out_features, self.in_features, &grad.data, false, &self.weight.value, false, 0.0, &mut dx.data);
        Ok(dx)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    fn clear_tape(&mut self) {
        self.input = None;
    }
}

/// Softmax over the channel axis at every `(batch, position)`.
#[derive(Debug, Clone, Default)]
pub struct Softmax {
    output: Option<Tensor>,
}

impl Softmax {
    pub fn new() -> Softmax {
        Softmax::default()
    }
}

impl Layer for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let y = super::loss::softmax_channels(x);
        self.output = ctx.training().then(|| y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let y = self.output.as_ref().ok_or(NeuralError::NoTape("softmax"))?;
        if grad.shape != y.shape {
            return Err(shape_err("softmax backward", format!("{:?}", y.shape), grad));
        }
        let [b, c, l] = y.shape;
        let mut dx = Tensor::zeros(y.shape);
        for n in 0..b {
            for t in 0..l {
                let idx = |ch: usize| (n * c + ch) * l + t;
                let dot: f64 = (0..c).map(|ch| grad.data[idx(ch)] * y.data[idx(ch)]).sum();
                for ch in 0..c {
                    dx.data[idx(ch)] = y.data[idx(ch)] * (grad.data[idx(ch)] - dot);
                }
            }
        }
        Ok(dx)
    }

    fn clear_tape(&mut self) {
        self.output = None;
    }
}
