//! Pre-norm transformer stack shared by both reference backbones.
//!
//! Each block is `x + Attn(rms(x))` followed by `x + SwiGLU(rms(x))`, with
//! rotary positions on queries and keys and a final RMS norm. Weights are
//! drawn once from `N(0, 0.02^2)` in `f64` and cast, so `f32` and `f64`
//! instances built from the same seed agree up to rounding.
//!
//! Only the gradient with respect to the input is implemented; the weights
//! are frozen.

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, T2lError};
use crate::real::Real;
use crate::seed::{self, streams};

pub const INIT_STD: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-6;
pub const ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackShape {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub causal: bool,
}

impl StackShape {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.ff_dim == 0 || self.max_positions == 0 {
            return Err(T2lError::invalid(format!("transformer dims must be positive: {self:?}")));
        }
        if !self.dim.is_multiple_of(self.heads) || !self.head_dim().is_multiple_of(2) {
            return Err(T2lError::invalid(format!(
                "dim {} must split into {} heads of even width",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers * (4 * self.dim * self.dim + 3 * self.dim * self.ff_dim)
    }
}

/// `batch` sequences of `seq` positions stacked row-wise into a
/// `(batch * seq, dim)` matrix. The first `pad[b]` positions of sequence `b`
/// are masked out as attention keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchLayout {
    pub batch: usize,
    pub seq: usize,
    pub pad: Vec<usize>,
}

impl BatchLayout {
    pub fn unpadded(batch: usize, seq: usize) -> Self {
        BatchLayout {
            batch,
            seq,
            pad: vec![0; batch],
        }
    }
}

#[derive(Debug, Clone)]
struct Block<T> {
    wq: Array2<T>,
    wk: Array2<T>,
    wv: Array2<T>,
    wo: Array2<T>,
    w1: Array2<T>,
    w3: Array2<T>,
    w2: Array2<T>,
}

impl<T> Block<T> {
    fn matrices(&self) -> [&Array2<T>; 7] {
        [&self.wq, &self.wk, &self.wv, &self.wo, &self.w1, &self.w3, &self.w2]
    }
}

struct BlockTape<T> {
    h: Array2<T>,
    inv_h: Vec<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    h2: Array2<T>,
    inv_h2: Vec<T>,
    a: Array2<T>,
    b: Array2<T>,
}

/// Intermediates recorded by [`TransformerStack::forward_tape`].
pub struct StackTape<T> {
    layout: BatchLayout,
    blocks: Vec<BlockTape<T>>,
    out: Array2<T>,
    inv_out: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct TransformerStack<T> {
    shape: StackShape,
    blocks: Vec<Block<T>>,
    cos: Array2<T>,
    sin: Array2<T>,
}

pub(crate) fn gaussian_matrix<T: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || T::of(normal.sample(rng)))
}

/// Row-wise RMS normalization; returns the normalized rows and `1/rms`.
pub(crate) fn rms_norm<T: Real>(x: &Array2<T>) -> (Array2<T>, Vec<T>) {
    let d = T::of(x.ncols() as f64);
    let eps = T::of(NORM_EPS);
    let mut y = x.clone();
    let mut inv = Vec::with_capacity(x.nrows());
    for mut row in y.rows_mut() {
        let ms = row.iter().map(|&v| v * v).sum::<T>() / d;
        let r = T::one() / (ms + eps).sqrt();
        row.mapv_inplace(|v| v * r);
        inv.push(r);
    }
    (y, inv)
}

/// Backward of [`rms_norm`] given the normalized rows `y`.
pub(crate) fn rms_norm_backward<T: Real>(y: &Array2<T>, inv: &[T], dy: &Array2<T>) -> Array2<T> {
    let d = T::of(y.ncols() as f64);
    let mut dx = dy.clone();
    for ((mut g, yr), &r) in dx.rows_mut().into_iter().zip(y.rows()).zip(inv) {
        let dot = g.iter().zip(yr.iter()).map(|(&a, &b)| a * b).sum::<T>() / d;
        Zip::from(&mut g).and(&yr).for_each(|g, &yv| *g = r * (*g - yv * dot));
    }
    dx
}

#[inline]
fn sigmoid<T: Real>(a: T) -> T {
    T::one() / (T::one() + (-a).exp())
}

impl<T: Real> TransformerStack<T> {
    pub fn new(shape: StackShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = seed::child_rng(seed, streams::WEIGHTS, 0);
        let (d, f) = (shape.dim, shape.ff_dim);
        let blocks = (0..shape.layers)
            .map(|_| Block {
                wq: gaussian_matrix(&mut rng, d, d, INIT_STD),
                wk: gaussian_matrix(&mut rng, d, d, INIT_STD),
                wv: gaussian_matrix(&mut rng, d, d, INIT_STD),
                wo: gaussian_matrix(&mut rng, d, d, INIT_STD),
                w1: gaussian_matrix(&mut rng, d, f, INIT_STD),
                w3: gaussian_matrix(&mut rng, d, f, INIT_STD),
                w2: gaussian_matrix(&mut rng, f, d, INIT_STD),
            })
            .collect();
        let half = shape.head_dim() / 2;
        let mut cos = Array2::zeros((shape.max_positions, half));
        let mut sin = Array2::zeros((shape.max_positions, half));
        for p in 0..shape.max_positions {
            for i in 0..half {
                let theta = p as f64 * ROPE_BASE.powf(-(2.0 * i as f64) / shape.head_dim() as f64);
                cos[[p, i]] = T::of(theta.cos());
                sin[[p, i]] = T::of(theta.sin());
            }
        }
        Ok(TransformerStack { shape, blocks, cos, sin })
    }

    pub fn shape(&self) -> &StackShape {
        &self.shape
    }

    /// All frozen weights in a fixed order.
    pub fn parameters(&self) -> Vec<T> {
        self.blocks
            .iter()
            .flat_map(|b| b.matrices().into_iter().flat_map(|m| m.iter().copied()))
            .collect()
    }

    fn check(&self, x: &ArrayView2<T>, layout: &BatchLayout) -> Result<()> {
        if x.ncols() != self.shape.dim {
            return Err(T2lError::shape(format!(
                "input width {} != model dim {}",
                x.ncols(),
                self.shape.dim
            )));
        }
        if layout.seq > self.shape.max_positions {
            return Err(T2lError::Capacity(format!(
                "{} positions exceed max_positions {}",
                layout.seq, self.shape.max_positions
            )));
        }
        if x.nrows() != layout.batch * layout.seq || layout.pad.len() != layout.batch {
            return Err(T2lError::shape(format!(
                "input has {} rows, layout expects {} x {}",
                x.nrows(),
                layout.batch,
                layout.seq
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<T>, layout: &BatchLayout) -> Result<Array2<T>> {
        self.check(&x, layout)?;
        let mut h = x.to_owned();
        for block in &self.blocks {
            self.block_forward(block, &mut h, layout);
        }
        Ok(rms_norm(&h).0)
    }

    pub fn forward_tape(&self, x: ArrayView2<T>, layout: &BatchLayout) -> Result<(Array2<T>, StackTape<T>)> {
        self.check(&x, layout)?;
        let mut h = x.to_owned();
        let blocks = self
            .blocks
            .iter()
            .map(|block| self.block_forward(block, &mut h, layout))
            .collect();
        let (out, inv_out) = rms_norm(&h);
        let tape = StackTape {
            layout: layout.clone(),
            blocks,
            out: out.clone(),
            inv_out,
        };
        Ok((out, tape))
    }

    /// Gradient with respect to the input of [`Self::forward_tape`].
    pub fn backward_input(&self, tape: &StackTape<T>, dy: &Array2<T>) -> Result<Array2<T>> {
        if dy.dim() != tape.out.dim() {
            return Err(T2lError::shape(format!(
                "output gradient {:?} != output {:?}",
                dy.dim(),
                tape.out.dim()
            )));
        }
        let mut g = rms_norm_backward(&tape.out, &tape.inv_out, dy);
        for (block, bt) in self.blocks.iter().zip(&tape.blocks).rev() {
            g = self.block_backward(block, bt, g, &tape.layout);
        }
        Ok(g)
    }

    fn block_forward(&self, w: &Block<T>, x: &mut Array2<T>, layout: &BatchLayout) -> BlockTape<T> {
        let (h, inv_h) = rms_norm(x);
        let mut q = h.dot(&w.wq);
        let mut k = h.dot(&w.wk);
        let v = h.dot(&w.wv);
        self.rotate(&mut q, layout.seq, false);
        self.rotate(&mut k, layout.seq, false);
        let (att, probs) = self.attention(&q, &k, &v, layout);
        *x += &att.dot(&w.wo);

        let (h2, inv_h2) = rms_norm(x);
        let a = h2.dot(&w.w1);
        let b = h2.dot(&w.w3);
        let mut u = a.clone();
        Zip::from(&mut u).and(&b).for_each(|u, &bv| *u = *u * sigmoid(*u) * bv);
        *x += &u.dot(&w.w2);
        BlockTape {
            h,
            inv_h,
            q,
            k,
            v,
            probs,
            h2,
            inv_h2,
            a,
            b,
        }
    }

    fn block_backward(&self, w: &Block<T>, t: &BlockTape<T>, dx2: Array2<T>, layout: &BatchLayout) -> Array2<T> {
        let du = dx2.dot(&w.w2.t());
        let mut da = du.clone();
        let mut db = du;
        Zip::from(&mut da)
            .and(&mut db)
            .and(&t.a)
            .and(&t.b)
            .for_each(|da, db, &a, &b| {
                let sa = sigmoid(a);
                let g = *da;
                *da = g * b * sa * (T::one() + a * (T::one() - sa));
                *db = g * a * sa;
            });
        let dh2 = da.dot(&w.w1.t()) + db.dot(&w.w3.t());
        let dx1 = dx2 + rms_norm_backward(&t.h2, &t.inv_h2, &dh2);

        let datt = dx1.dot(&w.wo.t());
        let (mut dq, mut dk, dv) = self.attention_backward(t, &datt, layout);
        self.rotate(&mut dq, layout.seq, true);
        self.rotate(&mut dk, layout.seq, true);
        let dh = dq.dot(&w.wq.t()) + dk.dot(&w.wk.t()) + dv.dot(&w.wv.t());
        dx1 + rms_norm_backward(&t.h, &t.inv_h, &dh)
    }

    /// Rotary embedding over half-split pairs `(i, i + hd/2)` of every head.
    /// `inverse` applies the transpose rotation (used for gradients).
    fn rotate(&self, m: &mut Array2<T>, seq: usize, inverse: bool) {
        let hd = self.shape.head_dim();
        let half = hd / 2;
        for (r, mut row) in m.rows_mut().into_iter().enumerate() {
            let p = r % seq;
            for head in 0..self.shape.heads {
                let c0 = head * hd;
                for i in 0..half {
                    let (c, mut sn) = (self.cos[[p, i]], self.sin[[p, i]]);
                    if inverse {
                        sn = -sn;
                    }
                    let x1 = row[c0 + i];
                    let x2 = row[c0 + i + half];
                    row[c0 + i] = x1 * c - x2 * sn;
                    row[c0 + i + half] = x1 * sn + x2 * c;
                }
            }
        }
    }

    fn attention(&self, q: &Array2<T>, k: &Array2<T>, v: &Array2<T>, layout: &BatchLayout) -> (Array2<T>, Vec<Array2<T>>) {
        let (n, hd) = (layout.seq, self.shape.head_dim());
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let mut out = Array2::zeros(q.dim());
        let mut probs = Vec::with_capacity(layout.batch * self.shape.heads);
        for b in 0..layout.batch {
            let rows = b * n..(b + 1) * n;
            for head in 0..self.shape.heads {
                let cols = head * hd..(head + 1) * hd;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let mut p = qh.dot(&kh.t());
                for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                    let lo = layout.pad[b];
                    let hi = if self.shape.causal { i + 1 } else { n };
                    if lo >= hi {
                        row.fill(T::zero());
                        continue;
                    }
                    let mut max = T::neg_infinity();
                    for j in lo..hi {
                        row[j] = row[j] * scale;
                        max = max.max(row[j]);
                    }
                    let mut sum = T::zero();
                    for j in 0..n {
                        if j >= lo && j < hi {
                            row[j] = (row[j] - max).exp();
                            sum += row[j];
                        } else {
                            row[j] = T::zero();
                        }
                    }
                    row.mapv_inplace(|e| e / sum);
                }
                out.slice_mut(s![rows.clone(), cols]).assign(&p.dot(&vh));
                probs.push(p);
            }
        }
        (out, probs)
    }

    fn attention_backward(&self, t: &BlockTape<T>, datt: &Array2<T>, layout: &BatchLayout) -> (Array2<T>, Array2<T>, Array2<T>) {
        let (n, hd) = (layout.seq, self.shape.head_dim());
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let mut dq = Array2::zeros(t.q.dim());
        let mut dk = Array2::zeros(t.k.dim());
        let mut dv = Array2::zeros(t.v.dim());
        for b in 0..layout.batch {
            let rows = b * n..(b + 1) * n;
            for head in 0..self.shape.heads {
                let cols = head * hd..(head + 1) * hd;
                let p = &t.probs[b * self.shape.heads + head];
                let qh = t.q.slice(s![rows.clone(), cols.clone()]);
                let kh = t.k.slice(s![rows.clone(), cols.clone()]);
                let vh = t.v.slice(s![rows.clone(), cols.clone()]);
                let doh = datt.slice(s![rows.clone(), cols.clone()]);
                let mut ds = doh.dot(&vh.t());
                dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&p.t().dot(&doh));
                for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let dot = drow.iter().zip(prow.iter()).map(|(&a, &b)| a * b).sum::<T>();
                    Zip::from(&mut drow).and(&prow).for_each(|d, &pv| *d = pv * (*d - dot) * scale);
                }
                dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&kh));
                dk.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qh));
            }
        }
        (dq, dk, dv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(causal: bool) -> StackShape {
        StackShape {
            dim: 8,
            layers: 2,
            heads: 2,
            ff_dim: 12,
            max_positions: 6,
            causal,
        }
    }

    fn input(rows: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = seed::rng(seed);
        Array2::from_shape_simple_fn((rows, dim), || rng.random_range(-1.0..1.0))
    }

    /// Central differences on a random linear functional of the output.
    fn check_input_gradient(shape: StackShape, layout: BatchLayout) {
        // Larger weights than the default init make the check sensitive to
        // every term rather than just the residual path.
        let mut stack = TransformerStack::<f64>::new(shape, 11).unwrap();
        for b in &mut stack.blocks {
            for m in [&mut b.wq, &mut b.wk, &mut b.wv, &mut b.wo, &mut b.w1, &mut b.w3, &mut b.w2] {
                m.mapv_inplace(|v| v * 20.0);
            }
        }
        let x = input(layout.batch * layout.seq, shape.dim, 1);
        let w = input(x.nrows(), shape.dim, 2);
        let (_, tape) = stack.forward_tape(x.view(), &layout).unwrap();
        let g = stack.backward_input(&tape, &w).unwrap();
        let f = |x: &Array2<f64>| (&stack.forward(x.view(), &layout).unwrap() * &w).sum();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for idx in 0..x.len() {
            let (r, c) = (idx / shape.dim, idx % shape.dim);
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            let num = (f(&xp) - f(&xm)) / (2.0 * h);
            let rel = (num - g[[r, c]]).abs() / num.abs().max(g[[r, c]].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn input_gradient_matches_finite_differences_causal() {
        check_input_gradient(tiny(true), BatchLayout::unpadded(2, 5));
    }

    #[test]
    fn input_gradient_matches_finite_differences_padded_bidirectional() {
        check_input_gradient(
            tiny(false),
            BatchLayout {
                batch: 2,
                seq: 6,
                pad: vec![2, 0],
            },
        );
    }

    #[test]
    fn causal_rows_ignore_the_future() {
        let stack = TransformerStack::<f64>::new(tiny(true), 3).unwrap();
        let layout = BatchLayout::unpadded(1, 6);
        let x = input(6, 8, 4);
        let mut x2 = x.clone();
        x2.row_mut(5).fill(3.0);
        let (a, b) = (stack.forward(x.view(), &layout).unwrap(), stack.forward(x2.view(), &layout).unwrap());
        assert_eq!(a.slice(s![..5, ..]), b.slice(s![..5, ..]));
        assert_ne!(a.row(5), b.row(5));
    }

    #[test]
    fn padded_keys_do_not_leak_into_real_positions() {
        let stack = TransformerStack::<f64>::new(tiny(false), 3).unwrap();
        let layout = BatchLayout {
            batch: 1,
            seq: 6,
            pad: vec![2],
        };
        let x = input(6, 8, 4);
        let mut x2 = x.clone();
        x2.row_mut(0).fill(-5.0);
        x2.row_mut(1).fill(7.0);
        let (a, b) = (stack.forward(x.view(), &layout).unwrap(), stack.forward(x2.view(), &layout).unwrap());
        assert_eq!(a.slice(s![2.., ..]), b.slice(s![2.., ..]));
    }

    #[test]
    fn position_sensitive_and_seed_deterministic() {
        let stack = TransformerStack::<f64>::new(tiny(false), 3).unwrap();
        let layout = BatchLayout::unpadded(1, 6);
        let x = input(6, 8, 4);
        let mut swapped = x.clone();
        for c in 0..8 {
            swapped.swap([0, c], [3, c]);
        }
        let y = stack.forward(x.view(), &layout).unwrap();
        let ys = stack.forward(swapped.view(), &layout).unwrap();
        let mut unswapped = ys.clone();
        for c in 0..8 {
            unswapped.swap([0, c], [3, c]);
        }
        assert!((&y - &unswapped).iter().any(|d| d.abs() > 1e-9));
        let again = TransformerStack::<f64>::new(tiny(false), 3).unwrap();
        assert_eq!(again.parameters(), stack.parameters());
        assert_eq!(again.forward(x.view(), &layout).unwrap(), y);
    }

    #[test]
    fn f32_tracks_f64() {
        let s64 = TransformerStack::<f64>::new(tiny(true), 5).unwrap();
        let s32 = TransformerStack::<f32>::new(tiny(true), 5).unwrap();
        let layout = BatchLayout::unpadded(2, 4);
        let x = input(8, 8, 9);
        let y64 = s64.forward(x.view(), &layout).unwrap();
        let y32 = s32.forward(x.mapv(|v| v as f32).view(), &layout).unwrap();
        let diff = (&y64 - &y32.mapv(|v| v as f64)).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn rejects_bad_shapes() {
        let stack = TransformerStack::<f64>::new(tiny(true), 3).unwrap();
        let x = input(7, 8, 1);
        assert!(matches!(
            stack.forward(x.view(), &BatchLayout::unpadded(1, 7)),
            Err(T2lError::Capacity(_))
        ));
        let x = input(4, 5, 1);
        assert!(matches!(
            stack.forward(x.view(), &BatchLayout::unpadded(1, 4)),
            Err(T2lError::Shape(_))
        ));
        let bad = StackShape { heads: 3, ..tiny(true) };
        assert!(TransformerStack::<f64>::new(bad, 0).is_err());
    }
}
