//! Layer graph with manual reverse-mode backpropagation: dense and 3x3
//! convolutional layers, max pooling, activation layers with cached
//! derivatives, softmax cross-entropy, and builders for the benchmark
//! architectures.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::activations::{self, ActivationKind};
use crate::conv::{conv2d, conv2d_backward, maxpool2, maxpool2_backward};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{Scalar, Tensor};

/// The benchmark architectures plus two reduced variants used by the
/// gradient-check suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Fc,
    Conv2,
    Conv6,
    Vgg16,
    TinyFc,
    TinyConv,
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Fc => "fc",
            Architecture::Conv2 => "conv2",
            Architecture::Conv6 => "conv6",
            Architecture::Vgg16 => "vgg16",
            Architecture::TinyFc => "tinyfc",
            Architecture::TinyConv => "tinyconv",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "fc" => Ok(Architecture::Fc),
            "conv2" => Ok(Architecture::Conv2),
            "conv6" => Ok(Architecture::Conv6),
            "vgg16" => Ok(Architecture::Vgg16),
            "tinyfc" => Ok(Architecture::TinyFc),
            "tinyconv" => Ok(Architecture::TinyConv),
            other => Err(Error::Spec(format!("unknown architecture '{other}'"))),
        }
    }

    /// Number of 2x2 pooling stages, which constrains usable input sizes.
    pub fn pool_stages(&self) -> usize {
        match self {
            Architecture::Fc | Architecture::TinyFc => 0,
            Architecture::Conv2 | Architecture::TinyConv => 1,
            Architecture::Conv6 => 3,
            Architecture::Vgg16 => 4,
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Declarative model description; `build_model` turns it into a runtime graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub arch: Architecture,
    /// Input image shape (channels, height, width).
    pub input_shape: (usize, usize, usize),
    pub classes: usize,
    pub activation: ActivationKind,
}

/// One step of an architecture, before parameters exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LayerPlan {
    Conv { in_c: usize, out_c: usize },
    Pool,
    Flatten,
    Dense { inp: usize, out: usize },
    Act,
}

fn plan_layers(spec: &ModelSpec) -> Result<Vec<LayerPlan>> {
    let (c, mut h, mut w) = spec.input_shape;
    if c == 0 || h == 0 || w == 0 || spec.classes == 0 {
        return Err(Error::Spec(format!("degenerate spec {spec:?}")));
    }
    let mut plan = Vec::new();
    let mut chans = c;

    let mut push_conv_block = |plan: &mut Vec<LayerPlan>,
                               chans: &mut usize,
                               h: &mut usize,
                               w: &mut usize,
                               widths: &[usize],
                               pool: bool|
     -> Result<()> {
        for &out_c in widths {
            plan.push(LayerPlan::Conv {
                in_c: *chans,
                out_c,
            });
            plan.push(LayerPlan::Act);
            *chans = out_c;
        }
        if pool {
            if *h % 2 != 0 || *w % 2 != 0 {
                return Err(Error::Spec(format!(
                    "{} needs even spatial extents at each pooling stage; got {h}x{w} \
                     for input {:?}",
                    spec.arch, spec.input_shape
                )));
            }
            plan.push(LayerPlan::Pool);
            *h /= 2;
            *w /= 2;
        }
        Ok(())
    };

    let dense_widths: &[usize] = match spec.arch {
        Architecture::Fc | Architecture::Conv2 | Architecture::Conv6 => &[256, 256],
        Architecture::Vgg16 => &[4096, 4096],
        Architecture::TinyFc | Architecture::TinyConv => &[8, 8],
    };

    match spec.arch {
        Architecture::Fc | Architecture::TinyFc => {}
        Architecture::Conv2 => {
            push_conv_block(&mut plan, &mut chans, &mut h, &mut w, &[64, 64], true)?;
        }
        Architecture::TinyConv => {
            push_conv_block(&mut plan, &mut chans, &mut h, &mut w, &[4, 4], true)?;
        }
        Architecture::Conv6 => {
            push_conv_block(&mut plan, &mut chans, &mut h, &mut w, &[64, 64], true)?;
            push_conv_block(&mut plan, &mut chans, &mut h, &mut w, &[128, 128], true)?;
            push_conv_block(&mut plan, &mut chans, &mut h, &mut w, &[256, 256], true)?;
        }
        Architecture::Vgg16 => {
            push_conv_block(&mut plan, &mut chans, &mut h, &mut w, &[64, 64], true)?;
            push_conv_block(&mut plan, &mut chans, &mut h, &mut w, &[128, 128], true)?;
            push_conv_block(&mut plan, &mut chans, &mut h, &mut w, &[256, 256, 256], true)?;
            push_conv_block(&mut plan, &mut chans, &mut h, &mut w, &[512, 512, 512], true)?;
            // final block keeps its convolutions but the trailing pool is
            // trimmed so small inputs survive
            push_conv_block(&mut plan, &mut chans, &mut h, &mut w, &[512, 512, 512], false)?;
        }
    }

    plan.push(LayerPlan::Flatten);
    let mut width = chans * h * w;
    for &out in dense_widths {
        plan.push(LayerPlan::Dense { inp: width, out });
        plan.push(LayerPlan::Act);
        width = out;
    }
    // logits layer: no activation after it
    plan.push(LayerPlan::Dense {
        inp: width,
        out: spec.classes,
    });
    Ok(plan)
}

enum Layer<T: Scalar> {
    Dense {
        w: Tensor<T>,
        b: Tensor<T>,
        gw: Tensor<T>,
        gb: Tensor<T>,
        cache_x: Option<Tensor<T>>,
    },
    Conv {
        k: Tensor<T>,
        b: Tensor<T>,
        gk: Tensor<T>,
        gb: Tensor<T>,
        cache_x: Option<Tensor<T>>,
    },
    Pool {
        cache: Option<(Vec<usize>, Vec<usize>)>,
    },
    Flatten {
        cache_shape: Option<Vec<usize>>,
    },
    Act {
        kind: ActivationKind,
        cache_d: Option<Tensor<T>>,
        cache_x: Option<Tensor<T>>,
    },
}

/// A runtime model: the layer list plus the spec it was built from.
pub struct Model<T: Scalar> {
    pub spec: ModelSpec,
    layers: Vec<Layer<T>>,
    names: Vec<String>,
}

/// Deterministically initialized model for a spec and seed.
///
/// Weights draw from U(-sqrt(1/fan_in), +sqrt(1/fan_in)); biases start at
/// zero. Draws happen in f64 in declaration order, so f32 and f64 models of
/// the same seed share parameters up to rounding.
pub fn build_model<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    spec.activation.validate()?;
    let plan = plan_layers(spec)?;
    let mut rng = stream_rng(seed, 0);
    let mut layers = Vec::with_capacity(plan.len());
    let mut names = Vec::with_capacity(plan.len());
    for (i, step) in plan.iter().enumerate() {
        let (layer, name) = match *step {
            LayerPlan::Dense { inp, out } => {
                let bound = (1.0 / inp as f64).sqrt();
                let w = Tensor::from_fn(&[inp, out], |_| {
                    T::from_f64c(rng.gen_range(-bound..bound))
                });
                (
                    Layer::Dense {
                        w,
                        b: Tensor::zeros(&[out]),
                        gw: Tensor::zeros(&[inp, out]),
                        gb: Tensor::zeros(&[out]),
                        cache_x: None,
                    },
                    format!("layer {i} (dense {inp}->{out})"),
                )
            }
            LayerPlan::Conv { in_c, out_c } => {
                let bound = (1.0 / (in_c * 9) as f64).sqrt();
                let k = Tensor::from_fn(&[out_c, in_c, 3, 3], |_| {
                    T::from_f64c(rng.gen_range(-bound..bound))
                });
                (
                    Layer::Conv {
                        k,
                        b: Tensor::zeros(&[out_c]),
                        gk: Tensor::zeros(&[out_c, in_c, 3, 3]),
                        gb: Tensor::zeros(&[out_c]),
                        cache_x: None,
                    },
                    format!("layer {i} (conv {in_c}->{out_c})"),
                )
            }
            LayerPlan::Pool => (Layer::Pool { cache: None }, format!("layer {i} (maxpool)")),
            LayerPlan::Flatten => (
                Layer::Flatten { cache_shape: None },
                format!("layer {i} (flatten)"),
            ),
            LayerPlan::Act => (
                Layer::Act {
                    kind: spec.activation,
                    cache_d: None,
                    cache_x: None,
                },
                format!("layer {i} (activation {})", spec.activation),
            ),
        };
        layers.push(layer);
        names.push(name);
    }
    Ok(Model {
        spec: spec.clone(),
        layers,
        names,
    })
}

impl<T: Scalar> Model<T> {
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense { w, b, .. } => w.len() + b.len(),
                Layer::Conv { k, b, .. } => k.len() + b.len(),
                _ => 0,
            })
            .sum()
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<usize> {
        let (c, h, w) = self.spec.input_shape;
        if batch.ndim() != 4 || batch.shape()[1..] != [c, h, w] {
            return Err(Error::dim(
                "forward",
                format!(
                    "batch shape {:?} does not match spec input {:?}",
                    batch.shape(),
                    (c, h, w)
                ),
            ));
        }
        Ok(batch.shape()[0])
    }

    /// Training forward pass: populates every layer cache (inputs, pooling
    /// argmax indices, activation derivatives) for the following backward.
    pub fn forward(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_input(batch)?;
        let mut x = batch.clone();
        for (layer, name) in self.layers.iter_mut().zip(&self.names) {
            x = match layer {
                Layer::Dense {
                    w, b, cache_x, ..
                } => {
                    *cache_x = Some(x.clone());
                    dense_forward(&x, w, b)?
                }
                Layer::Conv { k, b, cache_x, .. } => {
                    *cache_x = Some(x.clone());
                    conv2d(&x, k, b)?
                }
                Layer::Pool { cache } => {
                    let shape = x.shape().to_vec();
                    let (out, argmax) = maxpool2(&x)?;
                    *cache = Some((argmax, shape));
                    out
                }
                Layer::Flatten { cache_shape } => {
                    let shape = x.shape().to_vec();
                    let flat = shape.iter().skip(1).product::<usize>();
                    *cache_shape = Some(shape);
                    x.reshape(&[n, flat])?
                }
                Layer::Act {
                    kind,
                    cache_d,
                    cache_x,
                } => {
                    let out = activations::apply(*kind, &x)?;
                    *cache_x = Some(x);
                    *cache_d = Some(out.derivative);
                    out.value
                }
            };
            x.validate_finite(name)?;
        }
        Ok(x)
    }

    /// Inference pass on an immutable model; writes no caches, so frozen
    /// models can be evaluated from several threads at once.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_input(batch)?;
        let mut x = batch.clone();
        for (layer, name) in self.layers.iter().zip(&self.names) {
            x = match layer {
                Layer::Dense { w, b, .. } => dense_forward(&x, w, b)?,
                Layer::Conv { k, b, .. } => conv2d(&x, k, b)?,
                Layer::Pool { .. } => maxpool2(&x)?.0,
                Layer::Flatten { .. } => {
                    let flat = x.shape().iter().skip(1).product::<usize>();
                    x.reshape(&[n, flat])?
                }
                Layer::Act { kind, .. } => activations::apply(*kind, &x)?.value,
            };
            x.validate_finite(name)?;
        }
        Ok(x)
    }

    /// Reverse pass from a logits gradient; fills every parameter gradient.
    /// Requires a prior `forward` on the same batch.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<()> {
        let mut g = grad_logits.clone();
        for (layer, name) in self.layers.iter_mut().zip(&self.names).rev() {
            g = match layer {
                Layer::Dense {
                    w,
                    gw,
                    gb,
                    cache_x,
                    ..
                } => {
                    let x = cache_x
                        .take()
                        .ok_or_else(|| Error::Spec(format!("{name}: backward before forward")))?;
                    // gw = x^T g ; gb = column sums of g ; gx = g w^T
                    *gw = x.transposed()?.matmul(&g)?;
                    let cols = g.shape()[1];
                    let mut sums = Tensor::zeros(&[cols]);
                    for row in g.data().chunks(cols) {
                        for (s, v) in sums.data_mut().iter_mut().zip(row) {
                            *s = *s + *v;
                        }
                    }
                    *gb = sums;
                    g.matmul(&w.transposed()?)?
                }
                Layer::Conv {
                    k,
                    gk,
                    gb,
                    cache_x,
                    ..
                } => {
                    let x = cache_x
                        .take()
                        .ok_or_else(|| Error::Spec(format!("{name}: backward before forward")))?;
                    let (gx, dk, db) = conv2d_backward(&x, k, &g)?;
                    *gk = dk;
                    *gb = db;
                    gx
                }
                Layer::Pool { cache } => {
                    let (argmax, shape) = cache
                        .take()
                        .ok_or_else(|| Error::Spec(format!("{name}: backward before forward")))?;
                    maxpool2_backward(&g, &argmax, &shape)?
                }
                Layer::Flatten { cache_shape } => {
                    let shape = cache_shape
                        .take()
                        .ok_or_else(|| Error::Spec(format!("{name}: backward before forward")))?;
                    g.reshape(&shape)?
                }
                Layer::Act { cache_d, cache_x, .. } => {
                    cache_x.take();
                    let d = cache_d
                        .take()
                        .ok_or_else(|| Error::Spec(format!("{name}: backward before forward")))?;
                    // backward of an activation is exactly upstream (*) cached derivative
                    g.zip_map(&d, |u, dv| u * dv)?
                }
            };
            g.validate_finite(name)?;
        }
        Ok(())
    }

    /// Aligned (parameter, gradient) views for the optimizer, in declaration
    /// order.
    pub fn param_pairs(&mut self) -> Vec<(&mut Tensor<T>, &Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { w, b, gw, gb, .. } => {
                    out.push((w, &*gw));
                    out.push((b, &*gb));
                }
                Layer::Conv { k, b, gk, gb, .. } => {
                    out.push((k, &*gk));
                    out.push((b, &*gb));
                }
                _ => {}
            }
        }
        out
    }

    /// Shapes of all parameter tensors, for optimizer-state construction.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Dense { w, b, .. } => vec![w.shape().to_vec(), b.shape().to_vec()],
                Layer::Conv { k, b, .. } => vec![k.shape().to_vec(), b.shape().to_vec()],
                _ => vec![],
            })
            .collect()
    }

    /// Smallest distance from any cached activation input to a kink of the
    /// activation in use. Gradient checks skip seeds that land too close.
    /// Only meaningful right after a training `forward`.
    pub fn min_kink_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for layer in &self.layers {
            if let Layer::Act { kind, cache_x: Some(x), .. } = layer {
                for &k in kind.kinks() {
                    for v in x.data() {
                        best = best.min((v.to_f64c() - k).abs());
                    }
                }
            }
        }
        best
    }
}

fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = x.matmul(w)?;
    let cols = out.shape()[1];
    for row in out.data_mut().chunks_mut(cols) {
        for (v, &bias) in row.iter_mut().zip(b.data()) {
            *v = *v + bias;
        }
    }
    Ok(out)
}

/// Mean softmax cross-entropy and its logits gradient `(softmax - onehot)/N`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u8],
) -> Result<(T, Tensor<T>)> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("logits {:?} vs {} labels", logits.shape(), labels.len()),
        ));
    }
    let (n, classes) = (logits.shape()[0], logits.shape()[1]);
    let inv_n = T::from_f64c(1.0 / n as f64);
    let mut grad = Tensor::zeros(&[n, classes]);
    let mut loss = T::zero();
    for (i, row) in logits.data().chunks(classes).enumerate() {
        let label = labels[i] as usize;
        if label >= classes {
            return Err(Error::Data(format!(
                "label {label} out of range for {classes} classes (row {i})"
            )));
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for &z in row {
            denom = denom + (z - max).exp();
        }
        let log_denom = denom.ln();
        loss = loss + log_denom - (row[label] - max);
        let grow = &mut grad.data_mut()[i * classes..(i + 1) * classes];
        for (j, &z) in row.iter().enumerate() {
            let p = (z - max).exp() / denom;
            grow[j] = (p - if j == label { T::one() } else { T::zero() }) * inv_n;
        }
    }
    loss = loss * inv_n;
    if !loss.is_finite() {
        return Err(Error::numeric("softmax_cross_entropy", "non-finite loss"));
    }
    Ok((loss, grad))
}

/// Cross-entropy loss plus a full backward pass through the model.
pub fn loss_and_backward<T: Scalar>(
    model: &mut Model<T>,
    logits: &Tensor<T>,
    labels: &[u8],
) -> Result<T> {
    let (loss, grad) = softmax_cross_entropy(logits, labels)?;
    model.backward(&grad)?;
    Ok(loss)
}

/// Fraction of rows whose argmax matches the label. Ties break to the lowest
/// class index.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<f64> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::dim(
            "accuracy",
            format!("logits {:?} vs {} labels", logits.shape(), labels.len()),
        ));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let classes = logits.shape()[1];
    let mut correct = 0usize;
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let mut arg = 0usize;
        let mut best = row[0];
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                arg = j;
            }
        }
        if arg == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "MODG", format version, spec descriptor, then the
// parameter tensors in declaration order as little-endian f32 with shape
// prefixes. Round-trips bit-exactly.

const CHECKPOINT_MAGIC: &[u8; 4] = b"MODG";
const CHECKPOINT_VERSION: u32 = 1;

fn activation_tag(kind: ActivationKind) -> (u8, f64) {
    match kind {
        ActivationKind::Modulus => (0, 0.0),
        ActivationKind::SoftModulusQ => (1, 0.0),
        ActivationKind::SoftModulusT { beta } => (2, beta),
        ActivationKind::ReLU => (3, 0.0),
        ActivationKind::LeakyReLU { beta } => (4, beta),
        ActivationKind::Tanh => (5, 0.0),
        ActivationKind::Swish { beta } => (6, beta),
        ActivationKind::Elu { beta } => (7, beta),
        ActivationKind::Mish => (8, 0.0),
        ActivationKind::Pflu => (9, 0.0),
    }
}

fn activation_from_tag(tag: u8, beta: f64) -> Result<ActivationKind> {
    Ok(match tag {
        0 => ActivationKind::Modulus,
        1 => ActivationKind::SoftModulusQ,
        2 => ActivationKind::SoftModulusT { beta },
        3 => ActivationKind::ReLU,
        4 => ActivationKind::LeakyReLU { beta },
        5 => ActivationKind::Tanh,
        6 => ActivationKind::Swish { beta },
        7 => ActivationKind::Elu { beta },
        8 => ActivationKind::Mish,
        9 => ActivationKind::Pflu,
        other => {
            return Err(Error::Format {
                file: "<checkpoint>".into(),
                offset: 0,
                detail: format!("unknown activation tag {other}"),
            })
        }
    })
}

fn arch_tag(arch: Architecture) -> u8 {
    match arch {
        Architecture::Fc => 0,
        Architecture::Conv2 => 1,
        Architecture::Conv6 => 2,
        Architecture::Vgg16 => 3,
        Architecture::TinyFc => 4,
        Architecture::TinyConv => 5,
    }
}

fn arch_from_tag(tag: u8) -> Result<Architecture> {
    Ok(match tag {
        0 => Architecture::Fc,
        1 => Architecture::Conv2,
        2 => Architecture::Conv6,
        3 => Architecture::Vgg16,
        4 => Architecture::TinyFc,
        5 => Architecture::TinyConv,
        other => {
            return Err(Error::Format {
                file: "<checkpoint>".into(),
                offset: 8,
                detail: format!("unknown architecture tag {other}"),
            })
        }
    })
}

pub fn write_checkpoint(model: &Model<f32>, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[arch_tag(model.spec.arch)])?;
    let (c, h, wid) = model.spec.input_shape;
    for d in [c, h, wid, model.spec.classes] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let (atag, beta) = activation_tag(model.spec.activation);
    w.write_all(&[atag])?;
    w.write_all(&beta.to_le_bytes())?;

    let tensors: Vec<&Tensor<f32>> = model
        .layers
        .iter()
        .flat_map(|l| match l {
            Layer::Dense { w, b, .. } => vec![w, b],
            Layer::Conv { k, b, .. } => vec![k, b],
            _ => vec![],
        })
        .collect();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Model<f32>> {
    fn rd<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        r.read_exact(&mut buf)
            .map_err(|e| Error::io("<checkpoint>", e))?;
        Ok(buf)
    }
    let magic = rd::<4>(r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            file: "<checkpoint>".into(),
            offset: 0,
            detail: format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"),
        });
    }
    let version = u32::from_le_bytes(rd::<4>(r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            file: "<checkpoint>".into(),
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let arch = arch_from_tag(rd::<1>(r)?[0])?;
    let c = u32::from_le_bytes(rd::<4>(r)?) as usize;
    let h = u32::from_le_bytes(rd::<4>(r)?) as usize;
    let w = u32::from_le_bytes(rd::<4>(r)?) as usize;
    let classes = u32::from_le_bytes(rd::<4>(r)?) as usize;
    let atag = rd::<1>(r)?[0];
    let beta = f64::from_le_bytes(rd::<8>(r)?);
    let spec = ModelSpec {
        arch,
        input_shape: (c, h, w),
        classes,
        activation: activation_from_tag(atag, beta)?,
    };
    let mut model = build_model::<f32>(&spec, 0)?;
    let count = u32::from_le_bytes(rd::<4>(r)?) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let ndim = u32::from_le_bytes(rd::<4>(r)?) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(rd::<4>(r)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f32::from_le_bytes(rd::<4>(r)?));
        }
        tensors.push(Tensor::new(&shape, data)?);
    }
    let mut iter = tensors.into_iter();
    for layer in &mut model.layers {
        match layer {
            Layer::Dense { w, b, .. } | Layer::Conv { k: w, b, .. } => {
                for slot in [w, b] {
                    let t = iter.next().ok_or_else(|| Error::Format {
                        file: "<checkpoint>".into(),
                        offset: 0,
                        detail: "missing parameter tensor".into(),
                    })?;
                    if t.shape() != slot.shape() {
                        return Err(Error::Format {
                            file: "<checkpoint>".into(),
                            offset: 0,
                            detail: format!(
                                "tensor shape {:?} does not match model {:?}",
                                t.shape(),
                                slot.shape()
                            ),
                        });
                    }
                    *slot = t;
                }
            }
            _ => {}
        }
    }
    if iter.next().is_some() {
        return Err(Error::Format {
            file: "<checkpoint>".into(),
            offset: 0,
            detail: "trailing parameter tensors".into(),
        });
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    write_checkpoint(model, &mut file).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    file.sync_all().ok();
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_checkpoint(&mut file)
}
