//! Penalized logistic regression by accelerated proximal gradient.
//!
//! Objective over `(w, b)`:
//! `mean_i logloss(y_i, x_i·w + b) + (l1 |w|_1 + l2 |w|²/2) / (C n)`,
//! which has the same minimizer as `C Σ logloss + penalty`. The intercept is
//! never penalized.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, T2lError};
use crate::registry::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "penalty", rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
    ElasticNet { l1_ratio: f64 },
    None,
}

impl Penalty {
    /// `(l1, l2)` weights before division by `C n`.
    fn weights(&self) -> (f64, f64) {
        match *self {
            Penalty::L1 => (1.0, 0.0),
            Penalty::L2 => (0.0, 1.0),
            Penalty::ElasticNet { l1_ratio } => (l1_ratio, 1.0 - l1_ratio),
            Penalty::None => (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    #[serde(flatten)]
    pub penalty: Penalty,
    pub c: f64,
}

impl std::fmt::Display for Hyper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.penalty {
            Penalty::L1 => write!(f, "l1 C={}", self.c),
            Penalty::L2 => write!(f, "l2 C={}", self.c),
            Penalty::ElasticNet { l1_ratio } => write!(f, "elasticnet({l1_ratio}) C={}", self.c),
            Penalty::None => write!(f, "none"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Stop when the step changes no coefficient by more than this.
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 2000,
            tol: 1e-6,
        }
    }
}

/// `x·w + b` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Array1<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LinearModel {
    pub fn decision(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&self.weights) + self.intercept
    }
}

/// A binary classifier producing ranking scores.
pub trait Classifier: Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(&self, x: ArrayView2<f64>, y: &[u8], hyper: &Hyper) -> Result<LinearModel>;
}

pub type ClassifierFactory = fn(&SolverConfig) -> Box<dyn Classifier>;

pub fn classifier_registry() -> Registry<ClassifierFactory> {
    let mut r: Registry<ClassifierFactory> = Registry::new("probe classifier");
    r.register(Logistic::NAME, |s| Box::new(Logistic { solver: *s }));
    r
}

pub struct Logistic {
    pub solver: SolverConfig,
}

impl Logistic {
    pub const NAME: &'static str = "logistic";
}

fn softplus(m: f64) -> f64 {
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

struct Problem<'a> {
    x: ArrayView2<'a, f64>,
    y: Array1<f64>,
    l1: f64,
    l2: f64,
}

impl Problem<'_> {
    /// Smooth part of the objective and its gradient.
    fn smooth(&self, w: ArrayView1<f64>, b: f64) -> (f64, Array1<f64>, f64) {
        let n = self.y.len() as f64;
        let m = self.x.dot(&w) + b;
        let mut loss = 0.0;
        let mut r = Array1::zeros(m.len());
        for i in 0..m.len() {
            loss += softplus(m[i]) - self.y[i] * m[i];
            r[i] = (sigmoid(m[i]) - self.y[i]) / n;
        }
        let gw = self.x.t().dot(&r) + &w * self.l2;
        let gb = r.sum();
        (loss / n + 0.5 * self.l2 * w.dot(&w), gw, gb)
    }

    fn smooth_value(&self, w: ArrayView1<f64>, b: f64) -> f64 {
        let m = self.x.dot(&w) + b;
        let loss: f64 = m.iter().zip(&self.y).map(|(&mi, &yi)| softplus(mi) - yi * mi).sum();
        loss / self.y.len() as f64 + 0.5 * self.l2 * w.dot(&w)
    }

    fn objective(&self, w: ArrayView1<f64>, b: f64) -> f64 {
        self.smooth_value(w, b) + self.l1 * w.iter().map(|v| v.abs()).sum::<f64>()
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl Classifier for Logistic {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn fit(&self, x: ArrayView2<f64>, y: &[u8], hyper: &Hyper) -> Result<LinearModel> {
        let (n, d) = x.dim();
        if n != y.len() {
            return Err(T2lError::shape(format!("{n} rows for {} labels", y.len())));
        }
        if n == 0 || y.iter().all(|&v| v == y[0]) {
            return Err(T2lError::DegenerateLabels("logistic fit needs both classes".into()));
        }
        if !(hyper.c > 0.0 && hyper.c.is_finite()) {
            return Err(T2lError::invalid(format!("C must be positive, got {}", hyper.c)));
        }
        if let Penalty::ElasticNet { l1_ratio } = hyper.penalty {
            if !(0.0..=1.0).contains(&l1_ratio) {
                return Err(T2lError::invalid(format!("l1_ratio {l1_ratio} outside [0, 1]")));
            }
        }
        let (a1, a2) = hyper.penalty.weights();
        let lam = 1.0 / (hyper.c * n as f64);
        let prob = Problem {
            x,
            y: y.iter().map(|&v| v as f64).collect(),
            l1: a1 * lam,
            l2: a2 * lam,
        };

        let mut w = Array1::<f64>::zeros(d);
        let mut b = 0.0;
        let (mut zw, mut zb) = (w.clone(), b);
        let mut t = 1.0f64;
        let mut lip = 1.0f64;
        let mut prev_obj = prob.objective(w.view(), b);
        for iter in 1..=self.solver.max_iter {
            let (fz, gw, gb) = prob.smooth(zw.view(), zb);
            let (nw, nb) = loop {
                let step = 1.0 / lip;
                let nw = (&zw - &(&gw * step)).mapv(|v| soft_threshold(v, step * prob.l1));
                let nb = zb - step * gb;
                let dw = &nw - &zw;
                let db = nb - zb;
                let bound = fz + gw.dot(&dw) + gb * db + 0.5 * lip * (dw.dot(&dw) + db * db);
                if prob.smooth_value(nw.view(), nb) <= bound + 1e-12 * bound.abs() || lip > 1e12 {
                    break (nw, nb);
                }
                lip *= 2.0;
            };
            let obj = prob.objective(nw.view(), nb);
            let change = (&nw - &w).iter().fold((nb - b).abs(), |m, v| m.max(v.abs()));
            // Restart momentum when the objective goes up.
            let restart = obj > prev_obj;
            let t_next = if restart { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
            let beta = if restart { 0.0 } else { (t - 1.0) / t_next };
            zw = &nw + &((&nw - &w) * beta);
            zb = nb + beta * (nb - b);
            w = nw;
            b = nb;
            t = t_next;
            prev_obj = obj;
            lip *= 0.9;
            if !obj.is_finite() {
                return Err(T2lError::NumericalInstability("logistic objective is not finite".into()));
            }
            if change <= self.solver.tol {
                return Ok(LinearModel {
                    weights: w,
                    intercept: b,
                    iterations: iter,
                    converged: true,
                });
            }
        }
        Ok(LinearModel {
            weights: w,
            intercept: b,
            iterations: self.solver.max_iter,
            converged: false,
        })
    }
}
