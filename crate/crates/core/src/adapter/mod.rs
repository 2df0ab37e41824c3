//! Trainable mapping between the two frozen backbones.
//!
//! * `f`: 1-D residual CNN over the encoder features, ending in a 1x1 conv to
//!   `out_channels` and adaptive average pooling to `out_tokens`.
//! * the result is transposed into `out_tokens` embeddings, zero-padded to the
//!   language model width, run through it and mean-pooled.
//! * `g`: FC → (+ fixed resize of the mean encoder feature) → BN → ReLU → FC
//!   → BN → ReLU.
//! * `l`: linear head over the classes.
//!
//! Channel schedule of `f`: block `i` has `base * 2^(i/2)` channels; block 0
//! is a plain residual block, later blocks are pre-activation blocks that
//! max-pool (kernel 2, stride 2) whenever the width doubles. Their shortcut
//! is the same pooling plus zero channel padding, so it has no parameters.

pub mod checkpoint;
pub mod nn;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backbone::{EmbeddingBackbone, Tape};
use crate::error::{Result, T2lError};
use crate::real::Real;
use crate::seed::{self, streams};
use nn::{BatchNorm, BnCache, BnUpdate, ConvCache, Conv1d, Group, Layout, Linear, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub base_filters: usize,
    pub blocks: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub out_channels: usize,
    pub out_tokens: usize,
    pub proj_dims: (usize, usize),
    pub num_classes: usize,
    pub dropout: f64,
    pub init_seed: u64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            base_filters: 32,
            blocks: 6,
            kernel_size: 3,
            stride: 2,
            out_channels: 65,
            out_tokens: 64,
            proj_dims: (768, 256),
            num_classes: 6,
            dropout: 0.1,
            init_seed: 3,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.base_filters,
            self.blocks,
            self.kernel_size,
            self.stride,
            self.out_channels,
            self.out_tokens,
            self.proj_dims.0,
            self.proj_dims.1,
            self.num_classes,
        ];
        if dims.contains(&0) {
            return Err(T2lError::invalid(format!("adapter dims must be >= 1: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(T2lError::invalid(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    pub fn channels(&self, block: usize) -> usize {
        self.base_filters << (block / 2)
    }
}

/// Sizes fixed by the backbones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneDims {
    pub context: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub max_positions: usize,
}

#[derive(Debug, Clone)]
enum ResBlock {
    First {
        conv1: Conv1d,
        bn1: BatchNorm,
        conv2: Conv1d,
    },
    Pre {
        bn1: BatchNorm,
        conv1: Conv1d,
        bn2: BatchNorm,
        conv2: Conv1d,
        pool: bool,
    },
}

enum BlockTape<T> {
    First {
        c1: ConvCache<T>,
        bn1: BnCache<T>,
        r1: Array2<T>,
        d1: Option<Array2<T>>,
        c2: ConvCache<T>,
    },
    Pre {
        bn1: BnCache<T>,
        r1: Array2<T>,
        d1: Option<Array2<T>>,
        c1: ConvCache<T>,
        bn2: BnCache<T>,
        r2: Array2<T>,
        d2: Option<Array2<T>>,
        c2: ConvCache<T>,
        pool: Option<(Vec<usize>, (usize, usize))>,
        short: Option<(Vec<usize>, (usize, usize))>,
        cin: usize,
    },
}

struct FTape<T> {
    stem: ConvCache<T>,
    stem_bn: BnCache<T>,
    stem_relu: Array2<T>,
    blocks: Vec<BlockTape<T>>,
    final_bn: BnCache<T>,
    final_relu: Array2<T>,
    head: ConvCache<T>,
    head_len: usize,
}

struct GTape<T> {
    z_m: Array2<T>,
    bn1: BnCache<T>,
    r1: Array2<T>,
    bn2: BnCache<T>,
    z_o: Array2<T>,
}

/// Everything [`Adapter::backward`] needs from a forward pass.
pub struct AdapterTape<T> {
    batch: usize,
    f: FTape<T>,
    llm: Tape,
    g: GTape<T>,
}

/// Per-batch outputs; every matrix keeps one column per sample except `z_i`,
/// which is `(out_channels, batch * out_tokens)`.
#[derive(Debug, Clone)]
pub struct AdapterOutput<T> {
    pub logits: Array2<T>,
    pub z_o: Array2<T>,
    pub z_m: Array2<T>,
    pub z_i: Array2<T>,
}

/// Trainable values plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams<T> {
    pub params: Vec<T>,
    pub buffers: Vec<T>,
}

impl<T: Real> AdapterParams<T> {
    pub fn cast<U: Real>(&self) -> AdapterParams<U> {
        AdapterParams {
            params: self.params.iter().map(|v| U::of(v.as_f64())).collect(),
            buffers: self.buffers.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adapter {
    config: AdapterConfig,
    dims: BackboneDims,
    layout: Layout,
    buffer_layout: Layout,
    stem: Conv1d,
    stem_bn: BatchNorm,
    blocks: Vec<ResBlock>,
    final_bn: BatchNorm,
    head: Conv1d,
    fc1: Linear,
    bn_g1: BatchNorm,
    fc2: Linear,
    bn_g2: BatchNorm,
    out: Linear,
    /// Fixed resize of the mean encoder feature into the FC1 width; `None`
    /// means identity.
    resize: Option<Array2<f64>>,
}

impl Adapter {
    pub fn new(config: &AdapterConfig, dims: BackboneDims) -> Result<Self> {
        config.validate()?;
        if config.out_channels > dims.hidden {
            return Err(T2lError::shape(format!(
                "out_channels {} exceed language model width {}",
                config.out_channels, dims.hidden
            )));
        }
        if config.out_tokens > dims.max_positions {
            return Err(T2lError::Capacity(format!(
                "out_tokens {} exceed max_positions {}",
                config.out_tokens, dims.max_positions
            )));
        }
        let mut l = Layout::default();
        let mut b = Layout::default();
        let k = config.kernel_size;
        let base = config.base_filters;
        let stem = Conv1d::new(&mut l, "f.stem", Group::F, dims.feature_dim, base, k, config.stride);
        let stem_bn = BatchNorm::new(&mut l, &mut b, "f.stem_bn", Group::F, base);
        let mut blocks = Vec::with_capacity(config.blocks);
        let mut cin = base;
        for i in 0..config.blocks {
            let cout = config.channels(i);
            let name = format!("f.block{i}");
            blocks.push(if i == 0 {
                ResBlock::First {
                    conv1: Conv1d::new(&mut l, &format!("{name}.conv1"), Group::F, cin, cout, k, 1),
                    bn1: BatchNorm::new(&mut l, &mut b, &format!("{name}.bn1"), Group::F, cout),
                    conv2: Conv1d::new(&mut l, &format!("{name}.conv2"), Group::F, cout, cout, k, 1),
                }
            } else {
                ResBlock::Pre {
                    bn1: BatchNorm::new(&mut l, &mut b, &format!("{name}.bn1"), Group::F, cin),
                    conv1: Conv1d::new(&mut l, &format!("{name}.conv1"), Group::F, cin, cout, k, 1),
                    bn2: BatchNorm::new(&mut l, &mut b, &format!("{name}.bn2"), Group::F, cout),
                    conv2: Conv1d::new(&mut l, &format!("{name}.conv2"), Group::F, cout, cout, k, 1),
                    pool: cout > cin,
                }
            });
            cin = cout;
        }
        if let Some(ResBlock::First { conv1, .. }) = blocks.first() {
            if conv1.cin != conv1.cout {
                return Err(T2lError::invalid("first residual block must keep its width"));
            }
        }
        let final_bn = BatchNorm::new(&mut l, &mut b, "f.final_bn", Group::F, cin);
        let head = Conv1d::new(&mut l, "f.head", Group::F, cin, config.out_channels, 1, 1);
        let (p1, p2) = config.proj_dims;
        let fc1 = Linear::new(&mut l, "g.fc1", Group::G, dims.hidden, p1);
        let bn_g1 = BatchNorm::new(&mut l, &mut b, "g.bn1", Group::G, p1);
        let fc2 = Linear::new(&mut l, "g.fc2", Group::G, p1, p2);
        let bn_g2 = BatchNorm::new(&mut l, &mut b, "g.bn2", Group::G, p2);
        let out = Linear::new(&mut l, "l.out", Group::L, p2, config.num_classes);
        let resize = (dims.feature_dim != p1).then(|| {
            let mut rng = seed::child_rng(config.init_seed, streams::WEIGHTS, 3);
            let normal = Normal::new(0.0, 1.0 / (dims.feature_dim as f64).sqrt()).expect("positive std");
            Array2::from_shape_simple_fn((p1, dims.feature_dim), || normal.sample(&mut rng))
        });
        Ok(Adapter {
            config: config.clone(),
            dims,
            layout: l,
            buffer_layout: b,
            stem,
            stem_bn,
            blocks,
            final_bn,
            head,
            fc1,
            bn_g1,
            fc2,
            bn_g2,
            out,
            resize,
        })
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    pub fn dims(&self) -> BackboneDims {
        self.dims
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn buffer_layout(&self) -> &Layout {
        &self.buffer_layout
    }

    pub fn param_count(&self, group: Group) -> usize {
        self.layout.count(group)
    }

    pub fn init_params<T: Real>(&self) -> AdapterParams<T> {
        let mut rng = seed::child_rng(self.config.init_seed, streams::WEIGHTS, 2);
        let params = self.layout.initialize(&mut rng);
        let buffers = self.buffer_layout.initialize(&mut rng);
        AdapterParams {
            params: params.into_iter().map(T::of).collect(),
            buffers: buffers.into_iter().map(T::of).collect(),
        }
    }

    pub fn check_params<T: Real>(&self, p: &AdapterParams<T>) -> Result<()> {
        if p.params.len() != self.layout.len || p.buffers.len() != self.buffer_layout.len {
            return Err(T2lError::shape(format!(
                "parameter vectors ({}, {}) do not match layout ({}, {})",
                p.params.len(),
                p.buffers.len(),
                self.layout.len,
                self.buffer_layout.len
            )));
        }
        Ok(())
    }

    /// Length of the spatial axis after each stage of `f`.
    pub fn spatial_lengths(&self) -> Vec<usize> {
        let mut len = self.stem.out_len(self.dims.context);
        let mut out = vec![len];
        for block in &self.blocks {
            if let ResBlock::Pre { pool: true, .. } = block {
                len = len.div_ceil(2);
            }
            out.push(len);
        }
        out
    }

    fn f_forward<T: Real>(
        &self,
        p: &[T],
        buf: &[T],
        x: &Array2<T>,
        batch: usize,
        mode: &mut Mode<'_>,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> (Array2<T>, FTape<T>) {
        let train = mode.is_train();
        let bn = |layer: &BatchNorm, x: &Array2<T>, updates: &mut Vec<BnUpdate<T>>| {
            let (y, c, u) = layer.forward(p, buf, x, train);
            updates.extend(u);
            (y, c)
        };
        let (h, stem) = self.stem.forward(p, x, batch);
        let (h, stem_bn) = bn(&self.stem_bn, &h, updates);
        let mut h = nn::relu(h);
        let stem_relu = h.clone();
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, tape) = match block {
                ResBlock::First { conv1, bn1, conv2 } => {
                    let (a, c1) = conv1.forward(p, &h, batch);
                    let (a, bn1) = bn(bn1, &a, updates);
                    let r1 = nn::relu(a);
                    let (a, d1) = nn::dropout(r1.clone(), mode);
                    let (a, c2) = conv2.forward(p, &a, batch);
                    (a + &h, BlockTape::First { c1, bn1, r1, d1, c2 })
                }
                ResBlock::Pre {
                    bn1,
                    conv1,
                    bn2,
                    conv2,
                    pool,
                } => {
                    let (a, bn1) = bn(bn1, &h, updates);
                    let r1 = nn::relu(a);
                    let (a, d1) = nn::dropout(r1.clone(), mode);
                    let (a, c1) = conv1.forward(p, &a, batch);
                    let (a, bn2) = bn(bn2, &a, updates);
                    let r2 = nn::relu(a);
                    let (a, d2) = nn::dropout(r2.clone(), mode);
                    let (mut a, c2) = conv2.forward(p, &a, batch);
                    let mut short = h.clone();
                    let (mut pool_arg, mut short_arg) = (None, None);
                    if *pool {
                        let dim = a.dim();
                        let (pa, arg) = nn::max_pool2(&a, batch);
                        a = pa;
                        pool_arg = Some((arg, dim));
                        let sdim = short.dim();
                        let (ps, sarg) = nn::max_pool2(&short, batch);
                        short = ps;
                        short_arg = Some((sarg, sdim));
                    }
                    let short = nn::pad_channels(&short, conv2.cout);
                    (
                        a + &short,
                        BlockTape::Pre {
                            bn1,
                            r1,
                            d1,
                            c1,
                            bn2,
                            r2,
                            d2,
                            c2,
                            pool: pool_arg,
                            short: short_arg,
                            cin: conv1.cin,
                        },
                    )
                }
            };
            h = y;
            tapes.push(tape);
        }
        let (h, final_bn) = bn(&self.final_bn, &h, updates);
        let final_relu = nn::relu(h);
        let (h, head) = self.head.forward(p, &final_relu, batch);
        let head_len = h.ncols() / batch;
        let z_i = nn::adaptive_avg_pool(&h, batch, self.config.out_tokens);
        (
            z_i,
            FTape {
                stem,
                stem_bn,
                stem_relu,
                blocks: tapes,
                final_bn,
                final_relu,
                head,
                head_len,
            },
        )
    }

    fn f_backward<T: Real>(&self, p: &[T], t: &FTape<T>, dz: &Array2<T>, batch: usize, grad: &mut [T]) -> Array2<T> {
        let dh = nn::adaptive_avg_pool_backward(dz, batch, t.head_len);
        let dh = self.head.backward(p, &t.head, &dh, grad);
        let dh = nn::relu_backward(&t.final_relu, dh);
        let mut dh = self.final_bn.backward(p, &t.final_bn, &dh, grad);
        for (block, tape) in self.blocks.iter().zip(&t.blocks).rev() {
            dh = match (block, tape) {
                (ResBlock::First { conv1, bn1, conv2 }, BlockTape::First { c1, bn1: b1, r1, d1, c2 }) => {
                    let da = conv2.backward(p, c2, &dh, grad);
                    let da = nn::dropout_backward(d1, da);
                    let da = nn::relu_backward(r1, da);
                    let da = bn1.backward(p, b1, &da, grad);
                    conv1.backward(p, c1, &da, grad) + &dh
                }
                (
                    ResBlock::Pre {
                        bn1,
                        conv1,
                        bn2,
                        conv2,
                        ..
                    },
                    BlockTape::Pre {
                        bn1: b1,
                        r1,
                        d1,
                        c1,
                        bn2: b2,
                        r2,
                        d2,
                        c2,
                        pool,
                        short,
                        cin,
                    },
                ) => {
                    let da = match pool {
                        Some((arg, dim)) => nn::max_pool2_backward(arg, *dim, &dh),
                        None => dh.clone(),
                    };
                    let da = conv2.backward(p, c2, &da, grad);
                    let da = nn::dropout_backward(d2, da);
                    let da = nn::relu_backward(r2, da);
                    let da = bn2.backward(p, b2, &da, grad);
                    let da = conv1.backward(p, c1, &da, grad);
                    let da = nn::dropout_backward(d1, da);
                    let da = nn::relu_backward(r1, da);
                    let da = bn1.backward(p, b1, &da, grad);
                    let ds = dh.slice(s![..*cin, ..]).to_owned();
                    let ds = match short {
                        Some((arg, dim)) => nn::max_pool2_backward(arg, *dim, &ds),
                        None => ds,
                    };
                    da + &ds
                }
                _ => unreachable!("tape matches block structure"),
            };
        }
        let dh = nn::relu_backward(&t.stem_relu, dh);
        let dh = self.stem_bn.backward(p, &t.stem_bn, &dh, grad);
        self.stem.backward(p, &t.stem, &dh, grad)
    }

    /// `z_m` is `(hidden, batch)`; `zc_mean` is `(feature_dim, batch)` or
    /// `None` for the residual-free path.
    fn g_forward<T: Real>(
        &self,
        p: &[T],
        buf: &[T],
        z_m: Array2<T>,
        zc_mean: Option<&Array2<T>>,
        train: bool,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> (Array2<T>, GTape<T>) {
        let mut h1 = self.fc1.forward(p, &z_m);
        if let Some(zc) = zc_mean {
            match &self.resize {
                Some(r) => h1 += &r.mapv(T::of).dot(zc),
                None => h1 += zc,
            }
        }
        let (h, bn1, u1) = self.bn_g1.forward(p, buf, &h1, train);
        let r1 = nn::relu(h);
        let h2 = self.fc2.forward(p, &r1);
        let (h, bn2, u2) = self.bn_g2.forward(p, buf, &h2, train);
        let z_o = nn::relu(h);
        updates.extend(u1);
        updates.extend(u2);
        (
            z_o.clone(),
            GTape {
                z_m,
                bn1,
                r1,
                bn2,
                z_o,
            },
        )
    }

    fn g_backward<T: Real>(&self, p: &[T], t: &GTape<T>, dz_o: Array2<T>, grad: &mut [T]) -> Array2<T> {
        let d = nn::relu_backward(&t.z_o, dz_o);
        let d = self.bn_g2.backward(p, &t.bn2, &d, grad);
        let d = self.fc2.backward(p, &t.r1, &d, grad);
        let d = nn::relu_backward(&t.r1, d);
        let d = self.bn_g1.backward(p, &t.bn1, &d, grad);
        self.fc1.backward(p, &t.z_m, &d, grad)
    }

    fn check_inputs(&self, zc: &[ArrayView2<f32>]) -> Result<()> {
        if zc.is_empty() {
            return Err(T2lError::invalid("empty batch"));
        }
        for z in zc {
            if z.dim() != (self.dims.context, self.dims.feature_dim) {
                return Err(T2lError::shape(format!(
                    "encoder features {:?} != expected ({}, {})",
                    z.dim(),
                    self.dims.context,
                    self.dims.feature_dim
                )));
            }
        }
        Ok(())
    }

    /// Full forward over a batch of encoder features. Batch-norm running
    /// statistics are not modified; train-mode statistics are returned for
    /// [`apply_updates`].
    #[allow(clippy::type_complexity)]
    pub fn forward<T: Real>(
        &self,
        params: &AdapterParams<T>,
        llm: &dyn EmbeddingBackbone<T>,
        zc: &[ArrayView2<f32>],
        residual: bool,
        mode: &mut Mode<'_>,
    ) -> Result<(AdapterOutput<T>, AdapterTape<T>, Vec<BnUpdate<T>>)> {
        self.check_params(params)?;
        self.check_inputs(zc)?;
        if llm.hidden() != self.dims.hidden {
            return Err(T2lError::shape(format!(
                "language model width {} != adapter hidden {}",
                llm.hidden(),
                self.dims.hidden
            )));
        }
        let (p, buf) = (&params.params[..], &params.buffers[..]);
        let batch = zc.len();
        let (ctx, feat) = (self.dims.context, self.dims.feature_dim);
        let mut x = Array2::<T>::zeros((feat, batch * ctx));
        let mut zc_mean = Array2::<T>::zeros((feat, batch));
        for (b, z) in zc.iter().enumerate() {
            x.slice_mut(s![.., b * ctx..(b + 1) * ctx]).assign(&z.t().mapv(|v| T::of(v as f64)));
            let m = z.mapv(|v| v as f64).mean_axis(ndarray::Axis(0)).expect("context >= 1");
            zc_mean.column_mut(b).assign(&m.mapv(T::of));
        }
        let mut updates = Vec::new();
        let (z_i, f_tape) = self.f_forward(p, buf, &x, batch, mode, &mut updates);

        let tokens = self.config.out_tokens;
        let mut seq = Array2::<T>::zeros((batch * tokens, self.dims.hidden));
        seq.slice_mut(s![.., ..self.config.out_channels]).assign(&z_i.t());
        let (states, llm_tape) = llm.forward_batch(seq.view(), batch)?;
        let z_m = nn::group_mean(&states.t().to_owned(), tokens);

        let train = mode.is_train();
        let (z_o, g_tape) = self.g_forward(p, buf, z_m.clone(), residual.then_some(&zc_mean), train, &mut updates);
        let logits = self.out.forward(p, &z_o);
        Ok((
            AdapterOutput {
                logits,
                z_o: z_o.clone(),
                z_m,
                z_i,
            },
            AdapterTape {
                batch,
                f: f_tape,
                llm: llm_tape,
                g: g_tape,
            },
            updates,
        ))
    }

    /// Gradient of the loss with respect to every trainable parameter given
    /// `dlogits` of shape `(num_classes, batch)`.
    pub fn backward<T: Real>(
        &self,
        params: &AdapterParams<T>,
        llm: &dyn EmbeddingBackbone<T>,
        tape: &AdapterTape<T>,
        dlogits: &Array2<T>,
    ) -> Result<Vec<T>> {
        let p = &params.params[..];
        let mut grad = vec![T::zero(); p.len()];
        let dz_o = self.out.backward(p, &tape.g.z_o, dlogits, &mut grad);
        let dz_m = self.g_backward(p, &tape.g, dz_o, &mut grad);

        let tokens = self.config.out_tokens;
        let scale = T::of(1.0 / tokens as f64);
        let mut dstates = Array2::<T>::zeros((tape.batch * tokens, self.dims.hidden));
        for b in 0..tape.batch {
            let col = dz_m.column(b).mapv(|v| v * scale);
            for t in 0..tokens {
                dstates.row_mut(b * tokens + t).assign(&col);
            }
        }
        let dseq = llm.backward_input(&tape.llm, &dstates)?;
        let dz_i = dseq.slice(s![.., ..self.config.out_channels]).t().to_owned();
        self.f_backward(p, &tape.f, &dz_i, tape.batch, &mut grad);
        Ok(grad)
    }

    /// `f` alone on one `(context, feature_dim)` matrix in eval mode; returns
    /// `(out_channels, out_tokens)`.
    pub fn input_encode<T: Real>(&self, params: &AdapterParams<T>, z_c: ArrayView2<f32>) -> Result<Array2<T>> {
        self.check_params(params)?;
        self.check_inputs(&[z_c])?;
        let x = z_c.t().mapv(|v| T::of(v as f64));
        let (z_i, _) = self.f_forward(&params.params, &params.buffers, &x, 1, &mut Mode::Eval, &mut Vec::new());
        Ok(z_i)
    }

    /// `g` in eval mode for one sample.
    pub fn project<T: Real>(&self, params: &AdapterParams<T>, z_m: ArrayView1<T>, z_c_mean: ArrayView1<T>) -> Result<Array1<T>> {
        self.check_params(params)?;
        if z_m.len() != self.dims.hidden || z_c_mean.len() != self.dims.feature_dim {
            return Err(T2lError::shape(format!(
                "project expects ({}, {}), got ({}, {})",
                self.dims.hidden,
                self.dims.feature_dim,
                z_m.len(),
                z_c_mean.len()
            )));
        }
        let zm = z_m.to_owned().insert_axis(ndarray::Axis(1));
        let zc = z_c_mean.to_owned().insert_axis(ndarray::Axis(1));
        let (z_o, _) = self.g_forward(&params.params, &params.buffers, zm, Some(&zc), false, &mut Vec::new());
        Ok(z_o.column(0).to_owned())
    }

    pub fn classify<T: Real>(&self, params: &AdapterParams<T>, z_o: ArrayView1<T>) -> Result<Array1<T>> {
        self.check_params(params)?;
        if z_o.len() != self.config.proj_dims.1 {
            return Err(T2lError::shape(format!(
                "classify expects {} features, got {}",
                self.config.proj_dims.1,
                z_o.len()
            )));
        }
        let x = z_o.to_owned().insert_axis(ndarray::Axis(1));
        Ok(self.out.forward(&params.params, &x).column(0).to_owned())
    }

    /// Index ranges `(offset, len)` of the output head, for tests that edit it.
    pub fn head_slots(&self) -> ((usize, usize), (usize, usize)) {
        let (i, o) = (self.out.fan_in, self.out.fan_out);
        ((self.out.weight_offset(), i * o), (self.out.bias_offset(), o))
    }
}

pub fn apply_updates<T: Real>(buffers: &mut [T], updates: &[BnUpdate<T>]) {
    for u in updates {
        u.apply(buffers);
    }
}

/// Right-pad every row of `(tokens, channels)` with zeros up to `hidden`.
pub fn pad_features<T: Real>(z: ArrayView2<T>, hidden: usize) -> Result<Array2<T>> {
    if z.ncols() > hidden {
        return Err(T2lError::shape(format!("{} channels exceed width {hidden}", z.ncols())));
    }
    let mut out = Array2::zeros((z.nrows(), hidden));
    out.slice_mut(s![.., ..z.ncols()]).assign(&z);
    Ok(out)
}

#[cfg(test)]
mod tests;
