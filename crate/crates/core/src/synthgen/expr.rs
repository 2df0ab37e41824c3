//! Composite kernels: binary trees of base kernels joined by `+` or `*`.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{KernelKind, KernelSpec};
use crate::error::{Result, T2lError};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineOp {
    Add,
    Mul,
}

impl CombineOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            CombineOp::Add => a + b,
            CombineOp::Mul => a * b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelExpr {
    Leaf(KernelSpec),
    Node {
        op: CombineOp,
        left: Box<KernelExpr>,
        right: Box<KernelExpr>,
    },
}

impl KernelExpr {
    pub fn leaf(spec: KernelSpec) -> Self {
        KernelExpr::Leaf(spec)
    }

    pub fn add(left: KernelExpr, right: KernelExpr) -> Self {
        KernelExpr::Node {
            op: CombineOp::Add,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn mul(left: KernelExpr, right: KernelExpr) -> Self {
        KernelExpr::Node {
            op: CombineOp::Mul,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&KernelSpec> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a KernelSpec>) {
        match self {
            KernelExpr::Leaf(s) => out.push(s),
            KernelExpr::Node { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    /// Node tags in post-order.
    pub fn ops(&self) -> Vec<CombineOp> {
        fn walk(e: &KernelExpr, out: &mut Vec<CombineOp>) {
            if let KernelExpr::Node { op, left, right } = e {
                walk(left, out);
                walk(right, out);
                out.push(*op);
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// The period of the (first) periodic leaf, if any.
    pub fn period(&self) -> Option<f64> {
        self.leaves().into_iter().find_map(|l| match l {
            KernelSpec::PeriodicSine { period, .. } => Some(*period),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.leaves().into_iter().try_for_each(|l| l.validate())
    }

    #[inline]
    pub(crate) fn eval_raw(&self, a: f64, b: f64) -> f64 {
        match self {
            KernelExpr::Leaf(s) => s.eval_raw(a, b),
            KernelExpr::Node { op, left, right } => {
                op.apply(left.eval_raw(a, b), right.eval_raw(a, b))
            }
        }
    }

    /// Evaluate the composite kernel at a single pair of points.
    pub fn eval(&self, a: f64, b: f64) -> Result<f64> {
        self.validate()?;
        if !a.is_finite() || !b.is_finite() {
            return Err(T2lError::invalid("kernel inputs must be finite"));
        }
        Ok(self.eval_raw(a, b))
    }
}

/// Gram matrix of `expr` over `grid`.
pub fn eval_expr(expr: &KernelExpr, grid: &[f64]) -> Result<Array2<f64>> {
    expr.validate()?;
    if grid.is_empty() {
        return Err(T2lError::invalid("grid must contain at least one point"));
    }
    if let Some(x) = grid.iter().find(|x| !x.is_finite()) {
        return Err(T2lError::invalid(format!("grid contains non-finite point {x}")));
    }
    let n = grid.len();
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = expr.eval_raw(grid[i], grid[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Postfix program evaluating an expression from cached per-leaf values.
enum Instr {
    Leaf(usize),
    Op(CombineOp),
}

enum LeafTable {
    /// Stationary leaf tabulated by integer lag.
    Lag(Vec<f64>),
    Linear(f64),
}

/// Gram matrix on the integer grid `0..n`. Stationary leaves are tabulated
/// once per lag, which makes this much cheaper than [`eval_expr`] for long
/// grids; both produce bit-identical entries.
pub fn covariance_on_index_grid(expr: &KernelExpr, n: usize) -> Result<Array2<f64>> {
    expr.validate()?;
    if n == 0 {
        return Err(T2lError::invalid("grid must contain at least one point"));
    }
    let mut program = Vec::new();
    let mut tables = Vec::new();
    fn compile(e: &KernelExpr, n: usize, program: &mut Vec<Instr>, tables: &mut Vec<LeafTable>) {
        match e {
            KernelExpr::Leaf(s) => {
                let t = match s {
                    KernelSpec::Linear { variance } => LeafTable::Linear(*variance),
                    _ => LeafTable::Lag((0..n).map(|d| s.eval_raw(d as f64, 0.0)).collect()),
                };
                program.push(Instr::Leaf(tables.len()));
                tables.push(t);
            }
            KernelExpr::Node { op, left, right } => {
                compile(left, n, program, tables);
                compile(right, n, program, tables);
                program.push(Instr::Op(*op));
            }
        }
    }
    compile(expr, n, &mut program, &mut tables);

    let mut k = Array2::<f64>::zeros((n, n));
    let mut stack: Vec<f64> = Vec::with_capacity(8);
    for i in 0..n {
        for j in i..n {
            // eval_raw on stationary leaves uses a - b with a >= b here, which
            // matches the table's (d, 0) evaluation exactly for integer points.
            let lag = j - i;
            stack.clear();
            for ins in &program {
                match *ins {
                    Instr::Leaf(t) => stack.push(match &tables[t] {
                        LeafTable::Lag(v) => v[lag],
                        LeafTable::Linear(var) => var * i as f64 * j as f64,
                    }),
                    Instr::Op(op) => {
                        let b = stack.pop().expect("well-formed program");
                        let a = stack.pop().expect("well-formed program");
                        stack.push(op.apply(a, b));
                    }
                }
            }
            let v = stack[0];
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Default hyperparameter ranges, as `(lo, hi)` for log-uniform draws.
pub mod ranges {
    pub const CONSTANT_VARIANCE: (f64, f64) = (0.1, 2.0);
    pub const WHITE_NOISE_VARIANCE: (f64, f64) = (0.01, 0.5);
    pub const LINEAR_VARIANCE: (f64, f64) = (1e-6, 1e-4);
    pub const RBF_LENGTH_SCALE: (f64, f64) = (10.0, 400.0);
    pub const RQ_LENGTH_SCALE: (f64, f64) = (10.0, 400.0);
    pub const RQ_ALPHA: (f64, f64) = (0.1, 10.0);
    pub const PERIODIC_LENGTH_SCALE: (f64, f64) = (0.5, 2.0);
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
}

/// Draw one non-periodic base kernel of the given kind.
pub fn sample_kernel<R: Rng>(rng: &mut R, kind: KernelKind) -> KernelSpec {
    match kind {
        KernelKind::Constant => KernelSpec::Constant {
            variance: log_uniform(rng, ranges::CONSTANT_VARIANCE),
        },
        KernelKind::WhiteNoise => KernelSpec::WhiteNoise {
            variance: log_uniform(rng, ranges::WHITE_NOISE_VARIANCE),
        },
        KernelKind::Linear => KernelSpec::Linear {
            variance: log_uniform(rng, ranges::LINEAR_VARIANCE),
        },
        KernelKind::Rbf => KernelSpec::Rbf {
            length_scale: log_uniform(rng, ranges::RBF_LENGTH_SCALE),
        },
        KernelKind::RationalQuadratic => KernelSpec::RationalQuadratic {
            length_scale: log_uniform(rng, ranges::RQ_LENGTH_SCALE),
            alpha: log_uniform(rng, ranges::RQ_ALPHA),
        },
        KernelKind::PeriodicSine => panic!("periodic kernels are drawn with an explicit period"),
    }
}

/// Random composite kernel: 1..=`max_nonperiodic` non-periodic leaves drawn
/// uniformly from the bank, then one periodic leaf with the given period, all
/// folded left-to-right with i.i.d. uniform `+`/`*` tags.
pub fn random_expr(seed: u64, period: usize, max_nonperiodic: usize) -> Result<KernelExpr> {
    if period == 0 {
        return Err(T2lError::invalid("period must be positive"));
    }
    if max_nonperiodic == 0 {
        return Err(T2lError::invalid("max_nonperiodic must be at least 1"));
    }
    let mut rng = seed::rng(seed);
    let j = rng.random_range(1..=max_nonperiodic);
    let mut leaves: Vec<KernelSpec> = (0..j)
        .map(|_| {
            let kind = KernelKind::NON_PERIODIC[rng.random_range(0..KernelKind::NON_PERIODIC.len())];
            sample_kernel(&mut rng, kind)
        })
        .collect();
    leaves.push(KernelSpec::PeriodicSine {
        length_scale: log_uniform(&mut rng, ranges::PERIODIC_LENGTH_SCALE),
        period: period as f64,
    });

    let mut iter = leaves.into_iter();
    let mut acc = KernelExpr::Leaf(iter.next().expect("at least one leaf"));
    for leaf in iter {
        let op = if rng.random::<bool>() {
            CombineOp::Add
        } else {
            CombineOp::Mul
        };
        acc = KernelExpr::Node {
            op,
            left: Box::new(acc),
            right: Box::new(KernelExpr::Leaf(leaf)),
        };
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::kernel::eval_kernel;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    #[test]
    fn add_of_constants_is_constant_matrix() {
        let e = KernelExpr::add(
            KernelExpr::leaf(KernelSpec::Constant { variance: 1.0 }),
            KernelExpr::leaf(KernelSpec::Constant { variance: 2.0 }),
        );
        let k = eval_expr(&e, &[0.0, 5.0, 9.0]).unwrap();
        assert!(k.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn mul_scales_rbf() {
        let e = KernelExpr::mul(
            KernelExpr::leaf(KernelSpec::Constant { variance: 2.0 }),
            KernelExpr::leaf(KernelSpec::Rbf { length_scale: 10.0 }),
        );
        let k = eval_expr(&e, &[0.0, 10.0]).unwrap();
        assert_abs_diff_eq!(k[(0, 1)], 2.0 * (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn single_leaf_matches_eval_kernel() {
        let s = KernelSpec::RationalQuadratic {
            length_scale: 7.0,
            alpha: 1.5,
        };
        let grid = [0.0, 1.5, 3.0, 11.0];
        let k = eval_expr(&KernelExpr::leaf(s), &grid).unwrap();
        for (i, &a) in grid.iter().enumerate() {
            for (j, &b) in grid.iter().enumerate() {
                assert_eq!(k[(i, j)], eval_kernel(&s, a, b).unwrap());
            }
        }
    }

    #[test]
    fn eval_expr_rejects_bad_grid() {
        let e = KernelExpr::leaf(KernelSpec::Constant { variance: 1.0 });
        assert!(eval_expr(&e, &[]).is_err());
        assert!(eval_expr(&e, &[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn index_grid_fast_path_is_bit_identical() {
        for s in 0..40u64 {
            let e = random_expr(s, 30 * (1 + (s as usize % 6)), 4).unwrap();
            let n = 97;
            let grid: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let slow = eval_expr(&e, &grid).unwrap();
            let fast = covariance_on_index_grid(&e, n).unwrap();
            assert_eq!(slow, fast, "seed {s}: {e:?}");
        }
    }

    #[test]
    fn random_expr_is_deterministic() {
        assert_eq!(random_expr(42, 60, 4).unwrap(), random_expr(42, 60, 4).unwrap());
        assert_ne!(random_expr(42, 60, 4).unwrap(), random_expr(43, 60, 4).unwrap());
    }

    #[test]
    fn random_expr_has_exactly_one_periodic_leaf() {
        for s in 0..1000u64 {
            let e = random_expr(s, 90, 4).unwrap();
            let leaves = e.leaves();
            let periodic = leaves
                .iter()
                .filter(|l| l.kind() == KernelKind::PeriodicSine)
                .count();
            assert_eq!(periodic, 1);
            assert!((2..=5).contains(&leaves.len()));
            assert_eq!(e.period(), Some(90.0));
            assert_eq!(e.ops().len(), leaves.len() - 1);
        }
    }

    #[test]
    fn non_periodic_kinds_are_uniform() {
        let mut counts: BTreeMap<KernelKind, usize> = BTreeMap::new();
        let mut total = 0usize;
        for s in 0..1000u64 {
            for l in random_expr(s, 30, 4).unwrap().leaves() {
                if l.kind() != KernelKind::PeriodicSine {
                    *counts.entry(l.kind()).or_default() += 1;
                    total += 1;
                }
            }
        }
        assert_eq!(counts.len(), 5);
        for (kind, c) in counts {
            let freq = c as f64 / total as f64;
            assert!((freq - 0.2).abs() < 0.05, "{kind:?} frequency {freq}");
        }
    }

    #[test]
    fn hyperparameters_stay_in_documented_ranges() {
        for s in 0..500u64 {
            for l in random_expr(s, 30, 4).unwrap().leaves() {
                let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12);
                let ok = match *l {
                    KernelSpec::Constant { variance } => inside(variance, ranges::CONSTANT_VARIANCE),
                    KernelSpec::WhiteNoise { variance } => inside(variance, ranges::WHITE_NOISE_VARIANCE),
                    KernelSpec::Linear { variance } => inside(variance, ranges::LINEAR_VARIANCE),
                    KernelSpec::Rbf { length_scale } => inside(length_scale, ranges::RBF_LENGTH_SCALE),
                    KernelSpec::RationalQuadratic { length_scale, alpha } => {
                        inside(length_scale, ranges::RQ_LENGTH_SCALE) && inside(alpha, ranges::RQ_ALPHA)
                    }
                    KernelSpec::PeriodicSine { length_scale, .. } => {
                        inside(length_scale, ranges::PERIODIC_LENGTH_SCALE)
                    }
                };
                assert!(ok, "{l:?}");
            }
        }
    }
}
