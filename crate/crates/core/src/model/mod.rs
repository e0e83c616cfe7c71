//! Network assembly: stem, two dense blocks with a transition, the
//! deformable block and the transposed-convolution decoder.

mod checkpoint;
mod config;

pub use checkpoint::{decode_checkpoint, Checkpoint, CheckpointEntry, EntryKind, CHECKPOINT_MAGIC};
pub use config::{ModelConfig, Variant, DILATIONS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::deform::{DeformLayer, DeformSpec};
use crate::error::Result;
use crate::nn::{BatchStats, ConvSpec, Mode, PoolSpec, RunningStats};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Threshold of the optional output binarization.
pub const BINARIZE_LEVEL: f64 = 0.5;

#[derive(Clone, Debug)]
struct Conv {
    spec: ConvSpec,
    transposed: bool,
    weight: ParamId,
    bias: Option<ParamId>,
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
}

#[derive(Clone, Debug)]
struct DenseLayer {
    bn1: Norm,
    conv1: Conv,
    bn2: Norm,
    conv2: Conv,
}

#[derive(Clone, Debug)]
enum DeformOp {
    Deform(DeformLayer),
    Dilated(Conv),
}

#[derive(Clone, Debug)]
struct DeformStage {
    op: DeformOp,
    bn: Norm,
}

/// A named batch-norm running-statistics buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Buffer<T> {
    pub name: String,
    pub stats: RunningStats<T>,
}

/// The saliency network: parameters, batch-norm buffers and the stage layout.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    buffers: Vec<Buffer<T>>,
    stem: (Conv, Norm),
    block1: Vec<DenseLayer>,
    transition: (Norm, Conv),
    block2: Vec<DenseLayer>,
    head: (Norm, Conv),
    deform: Vec<DeformStage>,
    decoder: (Conv, Norm, Conv, Norm, Conv),
}

struct Builder<T> {
    store: ParamStore<T>,
    buffers: Vec<Buffer<T>>,
    seed: u64,
}

impl<T: Scalar> Builder<T> {
    /// Generator for the next parameter: one ChaCha stream per parameter
    /// index, so variants that only change some widths share the rest.
    fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.store.len() as u64);
        r
    }

    fn he_normal(&mut self, dims: crate::tensor::Dims) -> Tensor4<T> {
        let fan_in = (dims.c * dims.h * dims.w) as f64;
        Tensor4::normal(dims, (2.0 / fan_in).sqrt(), &mut self.rng())
    }

    fn conv(&mut self, name: &str, spec: ConvSpec) -> Result<Conv> {
        let w = self.he_normal(spec.weight_dims());
        self.add_conv(name, spec, false, w)
    }

    fn tconv(&mut self, name: &str, spec: ConvSpec) -> Result<Conv> {
        let w = self.he_normal(spec.transposed_weight_dims());
        self.add_conv(name, spec, true, w)
    }

    fn add_conv(&mut self, name: &str, spec: ConvSpec, transposed: bool, w: Tensor4<T>) -> Result<Conv> {
        let weight = self.store.add(format!("{name}.weight"), w)?;
        let bias = if spec.has_bias {
            Some(self.store.add(format!("{name}.bias"), Tensor4::zeros(spec.bias_dims()))?)
        } else {
            None
        };
        Ok(Conv {
            spec,
            transposed,
            weight,
            bias,
        })
    }

    fn norm(&mut self, name: &str, channels: usize) -> Result<Norm> {
        let gamma = self.store.add(format!("{name}.gamma"), Tensor4::ones((1, channels, 1, 1)))?;
        let beta = self.store.add(format!("{name}.beta"), Tensor4::zeros((1, channels, 1, 1)))?;
        self.buffers.push(Buffer {
            name: name.to_string(),
            stats: RunningStats::new(channels),
        });
        Ok(Norm {
            gamma,
            beta,
            stats: self.buffers.len() - 1,
        })
    }

    fn dense_block(&mut self, name: &str, in_channels: usize, layers: usize, growth: usize) -> Result<(Vec<DenseLayer>, usize)> {
        let mut out = Vec::with_capacity(layers);
        let mut c = in_channels;
        for i in 0..layers {
            let p = format!("{name}.layer{}", i + 1);
            out.push(DenseLayer {
                bn1: self.norm(&format!("{p}.norm1"), c)?,
                conv1: self.conv(&format!("{p}.conv1"), ConvSpec::new(c, 4 * growth, 1).bias(false))?,
                bn2: self.norm(&format!("{p}.norm2"), 4 * growth)?,
                conv2: self.conv(&format!("{p}.conv2"), ConvSpec::new(4 * growth, growth, 3).padding(1).bias(false))?,
            });
            c += growth;
        }
        Ok((out, c))
    }
}

/// Binds parameters onto a tape during a forward pass.
/// Batch statistics of a train-mode pass, keyed by buffer index.
pub type StatUpdates<T> = Vec<(usize, BatchStats<T>)>;

pub type Binder<'a, T> = dyn FnMut(&mut Tape<T>, ParamId) -> Var + 'a;

struct Pass<'a, 'b, T> {
    tape: &'a mut Tape<T>,
    bind: &'a mut Binder<'b, T>,
    buffers: &'a [Buffer<T>],
    mode: Mode,
    updates: Vec<(usize, BatchStats<T>)>,
}

impl<T: Scalar> Pass<'_, '_, T> {
    fn conv(&mut self, c: &Conv, x: Var) -> Result<Var> {
        let w = (self.bind)(self.tape, c.weight);
        let b = c.bias.map(|b| (self.bind)(self.tape, b));
        if c.transposed {
            self.tape.transposed_conv2d(x, w, b, &c.spec)
        } else {
            self.tape.conv2d(x, w, b, &c.spec)
        }
    }

    /// Batch norm followed by relu.
    fn norm_relu(&mut self, n: &Norm, x: Var) -> Result<Var> {
        let g = (self.bind)(self.tape, n.gamma);
        let b = (self.bind)(self.tape, n.beta);
        let stats = &self.buffers[n.stats].stats;
        let y = match self.mode {
            Mode::Train => {
                let (y, batch) = self.tape.batch_norm_train(x, g, b, stats.epsilon)?;
                self.updates.push((n.stats, batch));
                y
            }
            Mode::Eval => self.tape.batch_norm_eval(x, g, b, stats)?,
        };
        self.tape.relu(y)
    }

    fn dense_block(&mut self, layers: &[DenseLayer], x: Var) -> Result<Var> {
        let mut features = vec![x];
        for l in layers {
            let input = self.concat(&features)?;
            let h = self.norm_relu(&l.bn1, input)?;
            let h = self.conv(&l.conv1, h)?;
            let h = self.norm_relu(&l.bn2, h)?;
            features.push(self.conv(&l.conv2, h)?);
        }
        self.concat(&features)
    }

    fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            self.tape.concat_channels(parts)
        }
    }
}

impl<T: Scalar> Model<T> {
    /// Builds the network with weights drawn from a generator seeded by `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            store: ParamStore::new(),
            buffers: Vec::new(),
            seed,
        };
        let c0 = config.stem_channels;
        let growth = config.growth_rate;
        let stem = (
            b.conv("stem.conv", ConvSpec::new(3, c0, 7).stride(2).padding(3).bias(false))?,
            b.norm("stem.norm", c0)?,
        );
        let (block1, c1) = b.dense_block("block1", c0, config.block_layers.0, growth)?;
        let ct = (c1 / 2).max(1);
        let transition = (
            b.norm("transition.norm", c1)?,
            b.conv("transition.conv", ConvSpec::new(c1, ct, 1).bias(false))?,
        );
        let (block2, c2) = b.dense_block("block2", ct, config.block_layers.1, growth)?;
        let d = config.deform_channels;
        let head = (
            b.norm("head.norm", c2)?,
            b.conv("head.conv", ConvSpec::new(c2, d, 1).bias(false))?,
        );

        let mut deform = Vec::with_capacity(config.deform_layers);
        for i in 0..config.deform_layers {
            let name = format!("deform.layer{}", i + 1);
            let in_channels = if config.variant.is_dense() { d * (i + 1) } else { d };
            let op = match config.variant {
                Variant::Dilated(r) => DeformOp::Dilated(b.conv(
                    &name,
                    ConvSpec::new(in_channels, d, 3).padding(r).dilation(r).bias(false),
                )?),
                _ => {
                    let spec = DeformSpec::new(ConvSpec::new(in_channels, d, 3).padding(1).bias(false));
                    let mut rng = b.rng();
                    DeformOp::Deform(DeformLayer::new(&mut b.store, &name, spec, &mut rng)?)
                }
            };
            deform.push(DeformStage {
                op,
                bn: b.norm(&format!("{name}.norm"), d)?,
            });
        }

        let decoder = (
            b.tconv("decoder.tconv1", ConvSpec::new(d, d / 2, 4).stride(2).padding(1).bias(false))?,
            b.norm("decoder.norm1", d / 2)?,
            b.tconv("decoder.tconv2", ConvSpec::new(d / 2, d / 4, 3).padding(1).bias(false))?,
            b.norm("decoder.norm2", d / 4)?,
            b.tconv("decoder.tconv3", ConvSpec::new(d / 4, 1, 3).padding(1))?,
        );

        let Builder { store, buffers, .. } = b;
        Ok(Model {
            config: config.clone(),
            store,
            buffers,
            stem,
            block1,
            transition,
            block2,
            head,
            deform,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer<T>] {
        &mut self.buffers
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Every convolution geometry in the network with its parameter prefix
    /// and whether it is applied transposed. Deformable layers contribute
    /// their offset branch and their base geometry.
    pub fn conv_specs(&self) -> Vec<(String, ConvSpec, bool)> {
        let name = |id: ParamId| {
            let n = &self.store.get(id).name;
            n.strip_suffix(".weight").unwrap_or(n).to_string()
        };
        let mut out = Vec::new();
        let mut push = |c: &Conv| out.push((name(c.weight), c.spec, c.transposed));
        push(&self.stem.0);
        for l in self.block1.iter().chain(&self.block2) {
            push(&l.conv1);
            push(&l.conv2);
        }
        push(&self.transition.1);
        push(&self.head.1);
        let mut deform = Vec::new();
        for s in &self.deform {
            match &s.op {
                DeformOp::Dilated(c) => push(c),
                DeformOp::Deform(l) => {
                    deform.push((name(l.weight), l.spec.base, false));
                    deform.push((name(l.offset_weight), l.offset_spec, false));
                }
            }
        }
        push(&self.decoder.0);
        push(&self.decoder.2);
        push(&self.decoder.4);
        out.extend(deform);
        out
    }

    /// Forward pass with parameters bound through `bind`. In train mode the
    /// batch statistics of every norm layer are returned, by buffer index,
    /// instead of being applied.
    pub fn forward_with(&self, tape: &mut Tape<T>, x: Var, mode: Mode, bind: &mut Binder<'_, T>) -> Result<(Var, StatUpdates<T>)> {
        let d = tape.dims(x);
        if d.c != 3 || !d.h.is_multiple_of(8) || !d.w.is_multiple_of(8) || d.h == 0 || d.w == 0 {
            return Err(crate::Error::shape(format!(
                "model input must be (n,3,h,w) with h and w positive multiples of 8, got {d}"
            )));
        }
        let mut p = Pass {
            tape,
            bind,
            buffers: &self.buffers,
            mode,
            updates: Vec::new(),
        };
        let h = p.conv(&self.stem.0, x)?;
        let h = p.norm_relu(&self.stem.1, h)?;
        let h = p.tape.max_pool(h, PoolSpec::new(3, 2).padding(1))?;
        let h = p.dense_block(&self.block1, h)?;
        let h = p.norm_relu(&self.transition.0, h)?;
        let h = p.conv(&self.transition.1, h)?;
        let h = p.tape.avg_pool(h, PoolSpec::new(2, 2))?;
        let h = p.dense_block(&self.block2, h)?;
        let h = p.norm_relu(&self.head.0, h)?;
        let base = p.conv(&self.head.1, h)?;

        let dense = self.config.variant.is_dense();
        let mut features = vec![base];
        let mut last = base;
        for stage in &self.deform {
            let input = if dense { p.concat(&features)? } else { last };
            let y = match &stage.op {
                DeformOp::Dilated(c) => p.conv(c, input)?,
                DeformOp::Deform(l) => l.forward_bound(p.tape, input, p.bind)?,
            };
            last = p.norm_relu(&stage.bn, y)?;
            features.push(last);
        }

        let (t1, n1, t2, n2, t3) = &self.decoder;
        let h = p.conv(t1, last)?;
        let h = p.norm_relu(n1, h)?;
        let h = p.tape.bilinear_upsample(h, 2)?;
        let h = p.conv(t2, h)?;
        let h = p.norm_relu(n2, h)?;
        let h = p.tape.bilinear_upsample(h, 2)?;
        let h = p.conv(t3, h)?;
        let out = p.tape.sigmoid(h)?;
        Ok((out, p.updates))
    }

    /// Training-mode forward: parameters are differentiable and running
    /// statistics are updated once the pass succeeds.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let store = &self.store;
        let (out, updates) = {
            let mut bind = |t: &mut Tape<T>, id: ParamId| t.param(store, id);
            self.forward_with(tape, x, Mode::Train, &mut bind)?
        };
        self.apply_updates(&updates);
        Ok(out)
    }

    /// Eval-mode forward with differentiable parameters.
    pub fn forward_eval(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let store = &self.store;
        let mut bind = |t: &mut Tape<T>, id: ParamId| t.param(store, id);
        Ok(self.forward_with(tape, x, Mode::Eval, &mut bind)?.0)
    }

    pub fn apply_updates(&mut self, updates: &[(usize, BatchStats<T>)]) {
        for (i, batch) in updates {
            self.buffers[*i].stats.update(batch);
        }
    }

    /// Eval-mode saliency maps for a batch, (n,1,h,w), without recording
    /// gradients. Binarized at 0.5 when the config asks for it.
    pub fn predict(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let store = &self.store;
        let mut bind = |t: &mut Tape<T>, id: ParamId| t.constant(store.value(id).clone());
        let (out, _) = self.forward_with(&mut tape, xv, Mode::Eval, &mut bind)?;
        let y = tape.value(out).clone();
        if self.config.binarize {
            let level = T::c(BINARIZE_LEVEL);
            Ok(y.map(|v| if v >= level { T::one() } else { T::zero() }))
        } else {
            Ok(y)
        }
    }

    /// Same network at another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut store = ParamStore::new();
        for p in self.store.iter() {
            store.add(p.name.clone(), p.value.cast()).expect("names are unique");
        }
        let cast = |v: &[T]| v.iter().map(|&x| U::c(x.to_f64().expect("finite"))).collect();
        let buffers = self
            .buffers
            .iter()
            .map(|b| Buffer {
                name: b.name.clone(),
                stats: RunningStats {
                    mean: cast(&b.stats.mean),
                    var: cast(&b.stats.var),
                    momentum: b.stats.momentum,
                    epsilon: b.stats.epsilon,
                },
            })
            .collect();
        Model {
            config: self.config.clone(),
            store,
            buffers,
            stem: self.stem.clone(),
            block1: self.block1.clone(),
            transition: self.transition.clone(),
            block2: self.block2.clone(),
            head: self.head.clone(),
            deform: self.deform.clone(),
            decoder: self.decoder.clone(),
        }
    }

    /// Draws a fresh uniform input batch of the configured size; for tests
    /// and checks.
    pub fn random_input<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor4<T> {
        let (h, w) = self.config.input_size;
        Tensor4::uniform((n, 3, h, w), 0.0, 1.0, rng)
    }
}
