//! Layers with explicit forward/backward over a flat parameter vector.
//!
//! Activations are `(channels, batch * length)` matrices: channel rows are
//! contiguous, which makes batch norm a per-row reduction and lets a whole
//! batch of 1-D convolutions run as one matrix product over `im2col`
//! columns. Vector features use the same layout with `length == 1`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::real::Real;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    F,
    G,
    L,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub group: Group,
    pub offset: usize,
    pub len: usize,
    pub init: Init,
}

/// Named ranges of a flat vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub slots: Vec<Slot>,
    pub len: usize,
}

impl Layout {
    pub fn add(&mut self, name: impl Into<String>, group: Group, len: usize, init: Init) -> usize {
        let offset = self.len;
        self.slots.push(Slot {
            name: name.into(),
            group,
            offset,
            len,
            init,
        });
        self.len += len;
        offset
    }

    pub fn count(&self, group: Group) -> usize {
        self.slots.iter().filter(|s| s.group == group).map(|s| s.len).sum()
    }

    pub fn group_of(&self, index: usize) -> Option<Group> {
        self.slots
            .iter()
            .find(|s| index >= s.offset && index < s.offset + s.len)
            .map(|s| s.group)
    }

    pub fn initialize<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut v = vec![0.0; self.len];
        for s in &self.slots {
            let dst = &mut v[s.offset..s.offset + s.len];
            match s.init {
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    dst.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
                }
                Init::Zeros => {}
                Init::Ones => dst.fill(1.0),
            }
        }
        v
    }
}

pub(crate) fn view2<T>(p: &[T], offset: usize, rows: usize, cols: usize) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((rows, cols), &p[offset..offset + rows * cols]).expect("slot shape")
}

pub(crate) fn view2_mut<T>(p: &mut [T], offset: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, T> {
    ArrayViewMut2::from_shape((rows, cols), &mut p[offset..offset + rows * cols]).expect("slot shape")
}

/// Forward-pass behaviour of dropout and batch norm.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng, dropout: f64 },
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv1d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    w: usize,
    b: usize,
}

pub struct ConvCache<T> {
    cols: Array2<T>,
    batch: usize,
    len: usize,
}

impl Conv1d {
    pub fn new(layout: &mut Layout, name: &str, group: Group, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let w = layout.add(format!("{name}.weight"), group, cout * cin * k, Init::FanIn(cin * k));
        let b = layout.add(format!("{name}.bias"), group, cout, Init::Zeros);
        Conv1d {
            cin,
            cout,
            k,
            stride,
            pad: (k - 1) / 2,
            w,
            b,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &Array2<T>, batch: usize) -> (Array2<T>, ConvCache<T>) {
        let len = x.ncols() / batch;
        let lout = self.out_len(len);
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut cols = Array2::zeros((self.cin * self.k, batch * lout));
        {
            let cs = cols.as_slice_mut().expect("standard layout");
            let width = batch * lout;
            for ci in 0..self.cin {
                for kk in 0..self.k {
                    let row = &mut cs[(ci * self.k + kk) * width..][..width];
                    for b in 0..batch {
                        let src = &xs[ci * batch * len + b * len..][..len];
                        for t in 0..lout {
                            let pos = (t * self.stride + kk) as isize - self.pad as isize;
                            if pos >= 0 && (pos as usize) < len {
                                row[b * lout + t] = src[pos as usize];
                            }
                        }
                    }
                }
            }
        }
        let w = view2(p, self.w, self.cout, self.cin * self.k);
        let mut y = w.dot(&cols);
        let bias = &p[self.b..self.b + self.cout];
        for (mut row, &bv) in y.rows_mut().into_iter().zip(bias) {
            row.mapv_inplace(|v| v + bv);
        }
        (y, ConvCache { cols, batch, len })
    }

    pub fn backward<T: Real>(&self, p: &[T], cache: &ConvCache<T>, dy: &Array2<T>, grad: &mut [T]) -> Array2<T> {
        {
            let mut gw = view2_mut(grad, self.w, self.cout, self.cin * self.k);
            general_mat_mul(T::one(), dy, &cache.cols.t(), T::one(), &mut gw);
        }
        for (g, row) in grad[self.b..self.b + self.cout].iter_mut().zip(dy.rows()) {
            *g += row.sum();
        }
        let w = view2(p, self.w, self.cout, self.cin * self.k);
        let dcols = w.t().dot(dy).as_standard_layout().into_owned();
        let (batch, len) = (cache.batch, cache.len);
        let lout = dy.ncols() / batch;
        let mut dx = Array2::zeros((self.cin, batch * len));
        let ds = dcols.as_slice().expect("standard layout");
        let dxs = dx.as_slice_mut().expect("standard layout");
        let width = batch * lout;
        for ci in 0..self.cin {
            for kk in 0..self.k {
                let row = &ds[(ci * self.k + kk) * width..][..width];
                for b in 0..batch {
                    let dst = &mut dxs[ci * batch * len + b * len..][..len];
                    for t in 0..lout {
                        let pos = (t * self.stride + kk) as isize - self.pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            dst[pos as usize] += row[b * lout + t];
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub fan_in: usize,
    pub fan_out: usize,
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new(layout: &mut Layout, name: &str, group: Group, fan_in: usize, fan_out: usize) -> Self {
        let w = layout.add(format!("{name}.weight"), group, fan_out * fan_in, Init::FanIn(fan_in));
        let b = layout.add(format!("{name}.bias"), group, fan_out, Init::Zeros);
        Linear { fan_in, fan_out, w, b }
    }

    /// `x` is `(fan_in, batch)`.
    pub fn forward<T: Real>(&self, p: &[T], x: &Array2<T>) -> Array2<T> {
        let mut y = view2(p, self.w, self.fan_out, self.fan_in).dot(x);
        for (mut row, &bv) in y.rows_mut().into_iter().zip(&p[self.b..self.b + self.fan_out]) {
            row.mapv_inplace(|v| v + bv);
        }
        y
    }

    pub fn backward<T: Real>(&self, p: &[T], x: &Array2<T>, dy: &Array2<T>, grad: &mut [T]) -> Array2<T> {
        {
            let mut gw = view2_mut(grad, self.w, self.fan_out, self.fan_in);
            general_mat_mul(T::one(), dy, &x.t(), T::one(), &mut gw);
        }
        for (g, row) in grad[self.b..self.b + self.fan_out].iter_mut().zip(dy.rows()) {
            *g += row.sum();
        }
        view2(p, self.w, self.fan_out, self.fan_in).t().dot(dy)
    }

    pub fn weight_offset(&self) -> usize {
        self.w
    }

    pub fn bias_offset(&self) -> usize {
        self.b
    }
}

/// Per-channel batch normalization over all columns of a row.
#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub channels: usize,
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

pub struct BnCache<T> {
    xhat: Array2<T>,
    inv: Vec<T>,
    train: bool,
}

/// Batch statistics to fold into the running buffers after a train step.
pub struct BnUpdate<T> {
    mean_offset: usize,
    var_offset: usize,
    mean: Vec<T>,
    var: Vec<T>,
}

impl BatchNorm {
    pub fn new(layout: &mut Layout, buffers: &mut Layout, name: &str, group: Group, channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: layout.add(format!("{name}.gamma"), group, channels, Init::Ones),
            beta: layout.add(format!("{name}.beta"), group, channels, Init::Zeros),
            mean: buffers.add(format!("{name}.running_mean"), group, channels, Init::Zeros),
            var: buffers.add(format!("{name}.running_var"), group, channels, Init::Ones),
        }
    }

    pub fn forward<T: Real>(&self, p: &[T], buffers: &[T], x: &Array2<T>, train: bool) -> (Array2<T>, BnCache<T>, Option<BnUpdate<T>>) {
        let n = x.ncols();
        let eps = T::of(BN_EPS);
        let mut xhat = x.clone();
        let mut inv = Vec::with_capacity(self.channels);
        let mut update = train.then(|| BnUpdate {
            mean_offset: self.mean,
            var_offset: self.var,
            mean: Vec::with_capacity(self.channels),
            var: Vec::with_capacity(self.channels),
        });
        for (c, mut row) in xhat.rows_mut().into_iter().enumerate() {
            let (mu, var) = if train {
                let nn = T::of(n as f64);
                let mu = row.sum() / nn;
                let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / nn;
                if let Some(u) = update.as_mut() {
                    u.mean.push(mu);
                    let unbiased = if n > 1 { var * nn / T::of((n - 1) as f64) } else { var };
                    u.var.push(unbiased);
                }
                (mu, var)
            } else {
                (buffers[self.mean + c], buffers[self.var + c])
            };
            let r = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mu) * r);
            inv.push(r);
        }
        let mut y = xhat.clone();
        for (c, mut row) in y.rows_mut().into_iter().enumerate() {
            let (g, b) = (p[self.gamma + c], p[self.beta + c]);
            row.mapv_inplace(|v| g * v + b);
        }
        (y, BnCache { xhat, inv, train }, update)
    }

    pub fn backward<T: Real>(&self, p: &[T], cache: &BnCache<T>, dy: &Array2<T>, grad: &mut [T]) -> Array2<T> {
        let nn = T::of(dy.ncols() as f64);
        let mut dx = dy.clone();
        for (c, (mut drow, xrow)) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).enumerate() {
            let sum_dy = drow.sum();
            let sum_dy_x = drow.iter().zip(xrow.iter()).map(|(&a, &b)| a * b).sum::<T>();
            grad[self.gamma + c] += sum_dy_x;
            grad[self.beta + c] += sum_dy;
            let gi = p[self.gamma + c] * cache.inv[c];
            if cache.train {
                Zip::from(&mut drow)
                    .and(&xrow)
                    .for_each(|d, &xh| *d = gi / nn * (nn * *d - sum_dy - xh * sum_dy_x));
            } else {
                drow.mapv_inplace(|d| gi * d);
            }
        }
        dx
    }
}

impl<T: Real> BnUpdate<T> {
    pub fn apply(&self, buffers: &mut [T]) {
        let m = T::of(BN_MOMENTUM);
        for (c, (&mu, &var)) in self.mean.iter().zip(&self.var).enumerate() {
            let rm = &mut buffers[self.mean_offset + c];
            *rm = (T::one() - m) * *rm + m * mu;
            let rv = &mut buffers[self.var_offset + c];
            *rv = (T::one() - m) * *rv + m * var;
        }
    }
}

pub fn relu<T: Real>(x: Array2<T>) -> Array2<T> {
    x.mapv_into(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward of [`relu`] given its output.
pub fn relu_backward<T: Real>(y: &Array2<T>, mut dy: Array2<T>) -> Array2<T> {
    Zip::from(&mut dy).and(y).for_each(|d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    dy
}

/// Inverted dropout; returns the scaled keep-mask in train mode.
pub fn dropout<T: Real>(x: Array2<T>, mode: &mut Mode<'_>) -> (Array2<T>, Option<Array2<T>>) {
    match mode {
        Mode::Train { rng, dropout } if *dropout > 0.0 => {
            let keep = T::of(1.0 / (1.0 - *dropout));
            let mask = Array2::from_shape_simple_fn(x.dim(), || {
                if rng.random::<f64>() < *dropout {
                    T::zero()
                } else {
                    keep
                }
            });
            (x * &mask, Some(mask))
        }
        _ => (x, None),
    }
}

pub fn dropout_backward<T: Real>(mask: &Option<Array2<T>>, dy: Array2<T>) -> Array2<T> {
    match mask {
        Some(m) => dy * m,
        None => dy,
    }
}

/// Max pooling, kernel 2, stride 2, ceil mode. Returns the output and the
/// flat input index of every selected element.
pub fn max_pool2<T: Real>(x: &Array2<T>, batch: usize) -> (Array2<T>, Vec<usize>) {
    let len = x.ncols() / batch;
    let lout = len.div_ceil(2);
    let mut y = Array2::zeros((x.nrows(), batch * lout));
    let mut arg = Vec::with_capacity(y.len());
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let ys = y.as_slice_mut().expect("standard layout");
    let mut o = 0;
    for c in 0..x.nrows() {
        for b in 0..batch {
            let base = c * batch * len + b * len;
            for t in 0..lout {
                let i = base + 2 * t;
                let best = if 2 * t + 1 < len && xs[i + 1] > xs[i] { i + 1 } else { i };
                ys[o] = xs[best];
                arg.push(best);
                o += 1;
            }
        }
    }
    (y, arg)
}

pub fn max_pool2_backward<T: Real>(arg: &[usize], in_dim: (usize, usize), dy: &Array2<T>) -> Array2<T> {
    let mut dx = Array2::zeros(in_dim);
    let dxs = dx.as_slice_mut().expect("standard layout");
    for (&i, &g) in arg.iter().zip(dy.iter()) {
        dxs[i] += g;
    }
    dx
}

/// Adaptive average pooling windows `[floor(i L / out), ceil((i + 1) L / out))`.
pub fn adaptive_windows(len: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out)
        .map(|i| (i * len / out, ((i + 1) * len).div_ceil(out)))
        .collect()
}

pub fn adaptive_avg_pool<T: Real>(x: &Array2<T>, batch: usize, out: usize) -> Array2<T> {
    let len = x.ncols() / batch;
    let win = adaptive_windows(len, out);
    let mut y = Array2::zeros((x.nrows(), batch * out));
    for (xr, mut yr) in x.rows().into_iter().zip(y.rows_mut()) {
        for b in 0..batch {
            for (i, &(s, e)) in win.iter().enumerate() {
                let w = xr.slice(ndarray::s![b * len + s..b * len + e]);
                yr[b * out + i] = w.sum() / T::of((e - s) as f64);
            }
        }
    }
    y
}

pub fn adaptive_avg_pool_backward<T: Real>(dy: &Array2<T>, batch: usize, len: usize) -> Array2<T> {
    let out = dy.ncols() / batch;
    let win = adaptive_windows(len, out);
    let mut dx = Array2::zeros((dy.nrows(), batch * len));
    for (dr, mut xr) in dy.rows().into_iter().zip(dx.rows_mut()) {
        for b in 0..batch {
            for (i, &(s, e)) in win.iter().enumerate() {
                let g = dr[b * out + i] / T::of((e - s) as f64);
                xr.slice_mut(ndarray::s![b * len + s..b * len + e]).mapv_inplace(|v| v + g);
            }
        }
    }
    dx
}

/// Zero-pad rows from `x.nrows()` up to `channels`.
pub fn pad_channels<T: Real>(x: &Array2<T>, channels: usize) -> Array2<T> {
    let mut y = Array2::zeros((channels, x.ncols()));
    y.slice_mut(ndarray::s![..x.nrows(), ..]).assign(x);
    y
}

/// Mean over columns grouped in runs of `len` (one run per sample).
pub fn group_mean<T: Real>(x: &Array2<T>, len: usize) -> Array2<T> {
    let batch = x.ncols() / len;
    let mut y = Array2::zeros((x.nrows(), batch));
    for (xr, mut yr) in x.rows().into_iter().zip(y.rows_mut()) {
        for b in 0..batch {
            yr[b] = xr.slice(ndarray::s![b * len..(b + 1) * len]).sum() / T::of(len as f64);
        }
    }
    y
}

pub fn sum_rows<T: Real>(x: &Array2<T>) -> Vec<T> {
    x.sum_axis(Axis(1)).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn rand_mat(r: usize, c: usize, s: u64) -> Array2<f64> {
        let mut rng = seed::rng(s);
        Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
    }

    /// Direct convolution oracle.
    fn conv_oracle(conv: &Conv1d, p: &[f64], x: &Array2<f64>, batch: usize) -> Array2<f64> {
        let len = x.ncols() / batch;
        let lout = conv.out_len(len);
        let w = view2(p, conv.w, conv.cout, conv.cin * conv.k);
        let mut y = Array2::zeros((conv.cout, batch * lout));
        for co in 0..conv.cout {
            for b in 0..batch {
                for t in 0..lout {
                    let mut acc = p[conv.b + co];
                    for ci in 0..conv.cin {
                        for kk in 0..conv.k {
                            let pos = (t * conv.stride + kk) as isize - conv.pad as isize;
                            if pos >= 0 && (pos as usize) < len {
                                acc += w[[co, ci * conv.k + kk]] * x[[ci, b * len + pos as usize]];
                            }
                        }
                    }
                    y[[co, b * lout + t]] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_oracle() {
        let mut layout = Layout::default();
        let conv = Conv1d::new(&mut layout, "c", Group::F, 3, 4, 3, 2);
        let p = layout.initialize(&mut seed::rng(1));
        let x = rand_mat(3, 2 * 9, 2);
        let (y, _) = conv.forward(&p, &x, 2);
        assert_eq!(y.dim(), (4, 2 * 5));
        let diff = (&y - &conv_oracle(&conv, &p, &x, 2)).iter().fold(0f64, |m, d| m.max(d.abs()));
        assert!(diff < 1e-12);
    }

    #[test]
    fn output_lengths() {
        let mut layout = Layout::default();
        let stem = Conv1d::new(&mut layout, "s", Group::F, 1, 1, 3, 2);
        assert_eq!(stem.out_len(513), 257);
        assert_eq!(stem.out_len(129), 65);
        let same = Conv1d::new(&mut layout, "t", Group::F, 1, 1, 3, 1);
        assert_eq!(same.out_len(65), 65);
        let (y, _) = max_pool2(&rand_mat(2, 3 * 65, 1), 3);
        assert_eq!(y.ncols(), 3 * 33);
        assert_eq!(adaptive_windows(65, 64)[63], (63, 65));
        assert_eq!(adaptive_windows(17, 64).len(), 64);
    }

    #[test]
    fn adaptive_pool_of_constant_is_constant() {
        let x = Array2::from_elem((2, 17 * 2), 1.5f64);
        let y = adaptive_avg_pool(&x, 2, 64);
        assert!(y.iter().all(|&v| (v - 1.5).abs() < 1e-15));
    }

    #[test]
    fn batch_norm_train_normalizes_and_updates_running_stats() {
        let mut layout = Layout::default();
        let mut bufs = Layout::default();
        let bn = BatchNorm::new(&mut layout, &mut bufs, "bn", Group::G, 2);
        let p = layout.initialize(&mut seed::rng(0));
        let mut b = bufs.initialize(&mut seed::rng(0));
        let x = ndarray::array![[1.0, 2.0, 3.0], [0.0, 0.0, 6.0]];
        let (y, _, upd) = bn.forward(&p, &b, &x, true);
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
        }
        upd.unwrap().apply(&mut b);
        assert!((b[0] - 0.2).abs() < 1e-12);
        assert!((b[2] - (0.9 + 0.1 * 1.0)).abs() < 1e-12);
    }
}
