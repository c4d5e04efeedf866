//! Minimal trainable feed-forward network with a sigmoid hash head.
//!
//! Forward and backward passes are plain scalar/slice loops in double
//! precision, fully deterministic given the layer specs and the seed.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major dense tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "tensor shape {:?} implies {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn check_finite(&self, ctx: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Divergence(format!("non-finite value in {ctx}")))
        }
    }
}

/// Shape of the value flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dims {
    Spatial { channels: usize, height: usize, width: usize },
    Flat(usize),
}

impl Dims {
    pub fn flat_len(self) -> usize {
        match self {
            Dims::Spatial { channels, height, width } => channels * height * width,
            Dims::Flat(n) => n,
        }
    }
}

/// One layer of a [`HashNet`]. The hash head is a fully-connected layer
/// followed by an elementwise sigmoid; it must be the last layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    FullyConnected { fan_in: usize, fan_out: usize },
    Relu,
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize },
    MaxPool2d { kernel: usize },
    SigmoidHashHead { fan_in: usize, bits: usize },
}

impl LayerSpec {
    /// Output dims given input dims, or a dimension error naming the layer.
    fn out_dims(&self, input: Dims, index: usize) -> Result<Dims> {
        let mismatch = |msg: String| {
            Err(Error::Dimension(format!("layer {index} ({self:?}): {msg}")))
        };
        match *self {
            LayerSpec::FullyConnected { fan_in, fan_out } => {
                if input.flat_len() != fan_in {
                    return mismatch(format!("expected fan-in {fan_in}, input has {}", input.flat_len()));
                }
                Ok(Dims::Flat(fan_out))
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => {
                let Dims::Spatial { channels, height, width } = input else {
                    return mismatch("convolution requires spatial input".into());
                };
                if channels != in_channels {
                    return mismatch(format!("expected {in_channels} channels, got {channels}"));
                }
                if stride == 0 || kernel == 0 {
                    return mismatch("kernel and stride must be positive".into());
                }
                if height < kernel || width < kernel {
                    return mismatch(format!("kernel {kernel} larger than input {height}x{width}"));
                }
                Ok(Dims::Spatial {
                    channels: out_channels,
                    height: (height - kernel) / stride + 1,
                    width: (width - kernel) / stride + 1,
                })
            }
            LayerSpec::MaxPool2d { kernel } => {
                let Dims::Spatial { channels, height, width } = input else {
                    return mismatch("max-pool requires spatial input".into());
                };
                if kernel == 0 || height < kernel || width < kernel {
                    return mismatch(format!("pool kernel {kernel} invalid for {height}x{width}"));
                }
                Ok(Dims::Spatial {
                    channels,
                    height: height / kernel,
                    width: width / kernel,
                })
            }
            LayerSpec::SigmoidHashHead { fan_in, bits } => {
                if input.flat_len() != fan_in {
                    return mismatch(format!("expected fan-in {fan_in}, input has {}", input.flat_len()));
                }
                Ok(Dims::Flat(bits))
            }
        }
    }

    /// Shapes of (weights, bias) for parameterized layers.
    fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::FullyConnected { fan_in, fan_out } => {
                Some((vec![fan_out, fan_in], vec![fan_out]))
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                Some((vec![out_channels, in_channels, kernel, kernel], vec![out_channels]))
            }
            LayerSpec::SigmoidHashHead { fan_in, bits } => Some((vec![bits, fan_in], vec![bits])),
            LayerSpec::Relu | LayerSpec::MaxPool2d { .. } => None,
        }
    }

    /// Glorot-uniform bound for weight init.
    fn init_bound(&self) -> f64 {
        let (fan_in, fan_out) = match *self {
            LayerSpec::FullyConnected { fan_in, fan_out } => (fan_in, fan_out),
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                (in_channels * kernel * kernel, out_channels * kernel * kernel)
            }
            LayerSpec::SigmoidHashHead { fan_in, bits } => (fan_in, bits),
            _ => return 0.0,
        };
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

/// Gradients for every parameter tensor, in the same order as
/// [`HashNet::parameters`].
pub type ParameterGradients = Vec<Tensor>;

struct Trace {
    /// acts[0] is the input batch; acts[i+1] is the output of layer i.
    acts: Vec<Tensor>,
    /// For each max-pool layer, the flat input index chosen per output cell.
    argmax: Vec<Option<Vec<usize>>>,
}

/// A trainable network ending in a sigmoid hash head of `hash_bits` outputs.
pub struct HashNet {
    input: Dims,
    specs: Vec<LayerSpec>,
    dims: Vec<Dims>,
    params: Vec<Tensor>,
    hash_bits: usize,
    seed: u64,
    trace: Option<Trace>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl HashNet {
    pub fn new(input: Dims, specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        let heads = specs
            .iter()
            .filter(|s| matches!(s, LayerSpec::SigmoidHashHead { .. }))
            .count();
        if heads != 1 || !matches!(specs.last(), Some(LayerSpec::SigmoidHashHead { .. })) {
            return Err(Error::Config(
                "network must have exactly one sigmoid hash head, as the last layer".into(),
            ));
        }
        let mut dims = vec![input];
        for (i, spec) in specs.iter().enumerate() {
            let next = spec.out_dims(dims[i], i)?;
            dims.push(next);
        }
        let Some(&LayerSpec::SigmoidHashHead { bits, .. }) = specs.last() else {
            unreachable!()
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for spec in &specs {
            if let Some((w_shape, b_shape)) = spec.param_shapes() {
                let bound = spec.init_bound();
                let n: usize = w_shape.iter().product();
                let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 * bound - bound).collect();
                params.push(Tensor::new(w_shape, w)?);
                params.push(Tensor::zeros(b_shape));
            }
        }

        Ok(HashNet {
            input,
            specs,
            dims,
            params,
            hash_bits: bits,
            seed,
            trace: None,
        })
    }

    pub fn input_dims(&self) -> Dims {
        self.input
    }

    pub fn hash_bits(&self) -> usize {
        self.hash_bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        self.trace = None;
        &mut self.params
    }

    fn batch_size(&self, batch: &Tensor) -> Result<usize> {
        let in_len = self.input.flat_len();
        let shape = batch.shape();
        let ok = match shape.len() {
            2 => shape[1] == in_len,
            _ => false,
        };
        if !ok {
            return Err(Error::Dimension(format!(
                "input batch shape {:?} does not match network input of {} values (layer 0)",
                shape, in_len
            )));
        }
        Ok(shape[0])
    }

    fn run_forward(&self, batch: &Tensor) -> Result<Trace> {
        let b = self.batch_size(batch)?;
        batch.check_finite("input batch")?;
        let mut acts: Vec<Tensor> = vec![batch.clone()];
        let mut argmax: Vec<Option<Vec<usize>>> = Vec::with_capacity(self.specs.len());
        let mut p = 0usize;
        for (i, spec) in self.specs.iter().enumerate() {
            let x = &acts[i];
            let out_dims = self.dims[i + 1];
            let mut y = Tensor::zeros(vec![b, out_dims.flat_len()]);
            let mut arg = None;
            match *spec {
                LayerSpec::FullyConnected { fan_in, fan_out } => {
                    let w = &self.params[p];
                    let bias = &self.params[p + 1];
                    fc_forward(x.data(), w.data(), bias.data(), y.data_mut(), b, fan_in, fan_out);
                    p += 2;
                }
                LayerSpec::SigmoidHashHead { fan_in, bits } => {
                    let w = &self.params[p];
                    let bias = &self.params[p + 1];
                    fc_forward(x.data(), w.data(), bias.data(), y.data_mut(), b, fan_in, bits);
                    for v in y.data_mut() {
                        *v = sigmoid(*v);
                    }
                    p += 2;
                }
                LayerSpec::Relu => {
                    for (yo, xi) in y.data_mut().iter_mut().zip(x.data()) {
                        *yo = xi.max(0.0);
                    }
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => {
                    let Dims::Spatial { height, width, .. } = self.dims[i] else { unreachable!() };
                    let w = &self.params[p];
                    let bias = &self.params[p + 1];
                    conv_forward(
                        x.data(), w.data(), bias.data(), y.data_mut(),
                        b, in_channels, height, width, out_channels, kernel, stride,
                    );
                    p += 2;
                }
                LayerSpec::MaxPool2d { kernel } => {
                    let Dims::Spatial { channels, height, width } = self.dims[i] else {
                        unreachable!()
                    };
                    let mut idx = vec![0usize; y.len()];
                    pool_forward(x.data(), y.data_mut(), &mut idx, b, channels, height, width, kernel);
                    arg = Some(idx);
                }
            }
            y.check_finite(&format!("output of layer {i}"))?;
            acts.push(y);
            argmax.push(arg);
        }
        Ok(Trace { acts, argmax })
    }

    /// Pure forward pass; output shape is (batch, hash_bits), values in (0,1).
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let trace = self.run_forward(batch)?;
        Ok(trace.acts.into_iter().last().unwrap())
    }

    /// Forward pass that records activations for a following [`Self::backward`].
    pub fn forward_training(&mut self, batch: &Tensor) -> Result<Tensor> {
        let trace = self.run_forward(batch)?;
        let out = trace.acts.last().unwrap().clone();
        self.trace = Some(trace);
        Ok(out)
    }

    /// Backpropagate `output_grad` (shape (batch, hash_bits)) through the
    /// recorded forward pass, returning one gradient per parameter tensor.
    pub fn backward(&mut self, output_grad: &Tensor) -> Result<ParameterGradients> {
        let trace = self.trace.take().ok_or_else(|| {
            Error::State("backward called without a recorded forward pass".into())
        })?;
        let b = trace.acts[0].shape()[0];
        if output_grad.shape() != [b, self.hash_bits] {
            return Err(Error::Dimension(format!(
                "output gradient shape {:?}, expected [{b}, {}]",
                output_grad.shape(),
                self.hash_bits
            )));
        }

        let mut grads: ParameterGradients =
            self.params.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        let mut dy = output_grad.clone();

        let mut p = self.params.len();
        for (i, spec) in self.specs.iter().enumerate().rev() {
            let x = &trace.acts[i];
            let y = &trace.acts[i + 1];
            let mut dx = Tensor::zeros(vec![b, self.dims[i].flat_len()]);
            match *spec {
                LayerSpec::SigmoidHashHead { fan_in, bits } => {
                    p -= 2;
                    // d/dz sigmoid(z) = y(1-y)
                    let mut dz = dy.clone();
                    for (g, &yo) in dz.data_mut().iter_mut().zip(y.data()) {
                        *g *= yo * (1.0 - yo);
                    }
                    let (gw, gb) = grads.split_at_mut(p + 1);
                    fc_backward(
                        x.data(), self.params[p].data(), dz.data(),
                        gw[p].data_mut(), gb[0].data_mut(), dx.data_mut(),
                        b, fan_in, bits,
                    );
                }
                LayerSpec::FullyConnected { fan_in, fan_out } => {
                    p -= 2;
                    let (gw, gb) = grads.split_at_mut(p + 1);
                    fc_backward(
                        x.data(), self.params[p].data(), dy.data(),
                        gw[p].data_mut(), gb[0].data_mut(), dx.data_mut(),
                        b, fan_in, fan_out,
                    );
                }
                LayerSpec::Relu => {
                    for ((g, &xi), &d) in dx.data_mut().iter_mut().zip(x.data()).zip(dy.data()) {
                        *g = if xi > 0.0 { d } else { 0.0 };
                    }
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => {
                    p -= 2;
                    let Dims::Spatial { height, width, .. } = self.dims[i] else { unreachable!() };
                    let (gw, gb) = grads.split_at_mut(p + 1);
                    conv_backward(
                        x.data(), self.params[p].data(), dy.data(),
                        gw[p].data_mut(), gb[0].data_mut(), dx.data_mut(),
                        b, in_channels, height, width, out_channels, kernel, stride,
                    );
                }
                LayerSpec::MaxPool2d { .. } => {
                    let idx = trace.argmax[i].as_ref().unwrap();
                    for (o, &src) in idx.iter().enumerate() {
                        dx.data_mut()[src] += dy.data()[o];
                    }
                }
            }
            dy = dx;
        }
        for g in &grads {
            g.check_finite("parameter gradient")?;
        }
        Ok(grads)
    }

    /// In-place SGD update: p <- p - lr * (g + weight_decay * p).
    pub fn sgd_step(&mut self, grads: &ParameterGradients, lr: f64, weight_decay: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "{} gradient tensors for {} parameter tensors",
                grads.len(),
                self.params.len()
            )));
        }
        for (param, grad) in self.params.iter_mut().zip(grads) {
            if param.shape() != grad.shape() {
                return Err(Error::Dimension(format!(
                    "gradient shape {:?} does not match parameter shape {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
            grad.check_finite("gradient in sgd_step")?;
            for (pv, &gv) in param.data_mut().iter_mut().zip(grad.data()) {
                *pv -= lr * (gv + weight_decay * *pv);
            }
        }
        self.trace = None;
        Ok(())
    }

    // -- checkpoint format ---------------------------------------------------

    pub fn save<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        let (c, h, w) = match self.input {
            Dims::Spatial { channels, height, width } => (channels as u32, height as u32, width as u32),
            Dims::Flat(n) => (0, 0, n as u32),
        };
        for v in [c, h, w, self.hash_bits as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.seed.to_le_bytes())?;
        out.write_all(&(self.specs.len() as u32).to_le_bytes())?;
        let mut p = 0usize;
        for spec in &self.specs {
            let (tag, dims): (u8, Vec<u32>) = match *spec {
                LayerSpec::FullyConnected { fan_in, fan_out } => (0, vec![fan_in as u32, fan_out as u32]),
                LayerSpec::Relu => (1, vec![]),
                LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => {
                    (2, vec![in_channels as u32, out_channels as u32, kernel as u32, stride as u32])
                }
                LayerSpec::MaxPool2d { kernel } => (3, vec![kernel as u32]),
                LayerSpec::SigmoidHashHead { fan_in, bits } => (4, vec![fan_in as u32, bits as u32]),
            };
            out.write_all(&[tag, dims.len() as u8])?;
            for d in dims {
                out.write_all(&d.to_le_bytes())?;
            }
            if spec.param_shapes().is_some() {
                for t in [&self.params[p], &self.params[p + 1]] {
                    out.write_all(&(t.len() as u64).to_le_bytes())?;
                    for v in t.data() {
                        out.write_all(&v.to_le_bytes())?;
                    }
                }
                p += 2;
            }
        }
        Ok(())
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(input: &mut R, path: &Path) -> Result<Self> {
        let mut off = 0usize;
        let fail = |message: &str, offset: usize| Error::Format {
            path: path.to_path_buf(),
            message: message.into(),
            offset,
        };
        let mut magic = [0u8; 8];
        read_exact_at(input, &mut magic, &mut off, path)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(fail("bad magic, expected PDHNET1", 0));
        }
        let c = read_u32(input, &mut off, path)? as usize;
        let h = read_u32(input, &mut off, path)? as usize;
        let w = read_u32(input, &mut off, path)? as usize;
        let bits = read_u32(input, &mut off, path)? as usize;
        let seed = read_u64(input, &mut off, path)?;
        let input_dims = if c == 0 {
            Dims::Flat(w)
        } else {
            Dims::Spatial { channels: c, height: h, width: w }
        };
        let n_layers = read_u32(input, &mut off, path)? as usize;
        let mut specs = Vec::with_capacity(n_layers);
        let mut params = Vec::new();
        for _ in 0..n_layers {
            let mut head = [0u8; 2];
            read_exact_at(input, &mut head, &mut off, path)?;
            let mut dims = Vec::with_capacity(head[1] as usize);
            for _ in 0..head[1] {
                dims.push(read_u32(input, &mut off, path)? as usize);
            }
            let spec = match (head[0], dims.as_slice()) {
                (0, [fan_in, fan_out]) => LayerSpec::FullyConnected { fan_in: *fan_in, fan_out: *fan_out },
                (1, []) => LayerSpec::Relu,
                (2, [ic, oc, k, s]) => LayerSpec::Conv2d {
                    in_channels: *ic, out_channels: *oc, kernel: *k, stride: *s,
                },
                (3, [k]) => LayerSpec::MaxPool2d { kernel: *k },
                (4, [fan_in, bits]) => LayerSpec::SigmoidHashHead { fan_in: *fan_in, bits: *bits },
                _ => return Err(fail("unknown layer tag or dimension list", off)),
            };
            if let Some((w_shape, b_shape)) = spec.param_shapes() {
                for shape in [w_shape, b_shape] {
                    let n = read_u64(input, &mut off, path)? as usize;
                    if n != shape.iter().product::<usize>() {
                        return Err(fail("parameter count does not match layer dims", off));
                    }
                    let mut data = vec![0.0f64; n];
                    for v in &mut data {
                        let mut bytes = [0u8; 8];
                        read_exact_at(input, &mut bytes, &mut off, path)?;
                        *v = f64::from_le_bytes(bytes);
                    }
                    params.push(Tensor::new(shape, data)?);
                }
            }
            specs.push(spec);
        }
        let mut net = HashNet::new(input_dims, specs, seed)?;
        if net.hash_bits != bits {
            return Err(fail("hash length does not match head layer", off));
        }
        if net.params.len() != params.len() {
            return Err(fail("parameter tensor count mismatch", off));
        }
        net.params = params;
        Ok(net)
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::load(&mut f, path)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PDHNET1\n";

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], off: &mut usize, path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: "unexpected end of file".into(),
        offset: *off,
    })?;
    *off += buf.len();
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, off: &mut usize, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_at(r, &mut b, off, path)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, off: &mut usize, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_at(r, &mut b, off, path)?;
    Ok(u64::from_le_bytes(b))
}

// -- layer kernels ----------------------------------------------------------

fn fc_forward(x: &[f64], w: &[f64], bias: &[f64], y: &mut [f64], b: usize, fi: usize, fo: usize) {
    for bi in 0..b {
        let xr = &x[bi * fi..(bi + 1) * fi];
        let yr = &mut y[bi * fo..(bi + 1) * fo];
        for o in 0..fo {
            let wr = &w[o * fi..(o + 1) * fi];
            let mut acc = bias[o];
            for i in 0..fi {
                acc += wr[i] * xr[i];
            }
            yr[o] = acc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn fc_backward(
    x: &[f64], w: &[f64], dz: &[f64],
    dw: &mut [f64], db: &mut [f64], dx: &mut [f64],
    b: usize, fi: usize, fo: usize,
) {
    for bi in 0..b {
        let xr = &x[bi * fi..(bi + 1) * fi];
        let dzr = &dz[bi * fo..(bi + 1) * fo];
        let dxr = &mut dx[bi * fi..(bi + 1) * fi];
        for o in 0..fo {
            let g = dzr[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wr = &w[o * fi..(o + 1) * fi];
            let dwr = &mut dw[o * fi..(o + 1) * fi];
            for i in 0..fi {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64], w: &[f64], bias: &[f64], y: &mut [f64],
    b: usize, ic: usize, ih: usize, iw: usize, oc: usize, k: usize, s: usize,
) {
    let oh = (ih - k) / s + 1;
    let ow = (iw - k) / s + 1;
    let x_img = ic * ih * iw;
    let y_img = oc * oh * ow;
    for bi in 0..b {
        let xi = &x[bi * x_img..(bi + 1) * x_img];
        let yi = &mut y[bi * y_img..(bi + 1) * y_img];
        for o in 0..oc {
            let wk = &w[o * ic * k * k..(o + 1) * ic * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[o];
                    for c in 0..ic {
                        let xc = &xi[c * ih * iw..(c + 1) * ih * iw];
                        let wc = &wk[c * k * k..(c + 1) * k * k];
                        for ky in 0..k {
                            let row = &xc[(oy * s + ky) * iw + ox * s..][..k];
                            let wr = &wc[ky * k..(ky + 1) * k];
                            for kx in 0..k {
                                acc += wr[kx] * row[kx];
                            }
                        }
                    }
                    yi[o * oh * ow + oy * ow + ox] = acc;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64], w: &[f64], dz: &[f64],
    dw: &mut [f64], db: &mut [f64], dx: &mut [f64],
    b: usize, ic: usize, ih: usize, iw: usize, oc: usize, k: usize, s: usize,
) {
    let oh = (ih - k) / s + 1;
    let ow = (iw - k) / s + 1;
    let x_img = ic * ih * iw;
    let y_img = oc * oh * ow;
    for bi in 0..b {
        let xi = &x[bi * x_img..(bi + 1) * x_img];
        let dzi = &dz[bi * y_img..(bi + 1) * y_img];
        let dxi = &mut dx[bi * x_img..(bi + 1) * x_img];
        for o in 0..oc {
            let wk = &w[o * ic * k * k..(o + 1) * ic * k * k];
            let dwk = &mut dw[o * ic * k * k..(o + 1) * ic * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dzi[o * oh * ow + oy * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    db[o] += g;
                    for c in 0..ic {
                        let base = c * ih * iw;
                        let wc = &wk[c * k * k..(c + 1) * k * k];
                        let dwc = &mut dwk[c * k * k..(c + 1) * k * k];
                        for ky in 0..k {
                            let xoff = base + (oy * s + ky) * iw + ox * s;
                            for kx in 0..k {
                                dwc[ky * k + kx] += g * xi[xoff + kx];
                                dxi[xoff + kx] += g * wc[ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn pool_forward(
    x: &[f64], y: &mut [f64], argmax: &mut [usize],
    b: usize, ch: usize, ih: usize, iw: usize, k: usize,
) {
    let oh = ih / k;
    let ow = iw / k;
    let x_img = ch * ih * iw;
    let y_img = ch * oh * ow;
    for bi in 0..b {
        for c in 0..ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = bi * x_img + c * ih * iw + (oy * k + ky) * iw + ox * k + kx;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let out = bi * y_img + c * oh * ow + oy * ow + ox;
                    y[out] = best;
                    argmax[out] = best_idx;
                }
            }
        }
    }
}

/// Default desk-scale conv stack: two conv/pool blocks, one hidden FC,
/// sigmoid hash head of `bits` outputs.
pub fn default_conv_arch(channels: usize, height: usize, width: usize, bits: usize) -> Vec<LayerSpec> {
    let h1 = (height - 2) / 2;
    let w1 = (width - 2) / 2;
    let h2 = (h1 - 2) / 2;
    let w2 = (w1 - 2) / 2;
    vec![
        LayerSpec::Conv2d { in_channels: channels, out_channels: 8, kernel: 3, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { kernel: 2 },
        LayerSpec::Conv2d { in_channels: 8, out_channels: 16, kernel: 3, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { kernel: 2 },
        LayerSpec::FullyConnected { fan_in: 16 * h2 * w2, fan_out: 64 },
        LayerSpec::Relu,
        LayerSpec::SigmoidHashHead { fan_in: 64, bits },
    ]
}

/// Single-hidden-layer MLP variant.
pub fn mlp_arch(channels: usize, height: usize, width: usize, hidden: usize, bits: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::FullyConnected { fan_in: channels * height * width, fan_out: hidden },
        LayerSpec::Relu,
        LayerSpec::SigmoidHashHead { fan_in: hidden, bits },
    ]
}
