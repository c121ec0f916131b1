//! Central-difference verification of recorded-graph gradients.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Largest acceptable relative error.
    pub tol: f64,
    /// Cap on the number of coordinates probed; `None` probes all of them.
    pub max_coords: Option<usize>,
    /// Entries are compared relative to `max(|a|, |n|, floor_ratio * scale)`
    /// where `scale` is the largest gradient magnitude seen. This keeps
    /// entries that are tiny compared to the rest of the gradient from being
    /// judged on pure rounding noise.
    pub floor_ratio: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            tol: 1e-6,
            max_coords: None,
            floor_ratio: 1e-3,
        }
    }
}

impl GradCheckConfig {
    pub fn with_tol(h: f64, tol: f64) -> Self {
        GradCheckConfig {
            h,
            tol,
            ..Self::default()
        }
    }

    pub fn max_coords(mut self, n: usize) -> Self {
        self.max_coords = Some(n);
        self
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coords_checked: usize,
    pub passed: bool,
}

fn probe_indices(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < n && m > 0 => {
            // Evenly spread, deterministic, always including the last index.
            (0..m).map(|i| i * (n - 1) / (m - 1).max(1)).collect()
        }
        _ => (0..n).collect(),
    }
}

fn eval<F>(f: &F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(point.clone());
    let y = f(&mut g, x)?;
    let v = g.value(y);
    if v.numel() != 1 {
        return Err(TensorError::dim(
            "grad_check",
            format!("function must be scalar, got {:?}", v.shape()),
        ));
    }
    Ok(v.data()[0])
}

/// Compares the graph gradient of scalar `f` at `point` against central differences.
///
/// Non-finite intermediates surface as the originating [`TensorError::NonFinite`].
pub fn grad_check<F>(f: F, point: &Tensor, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if let Some(index) = point.first_non_finite() {
        return Err(TensorError::NonFinite {
            op: "grad_check input",
            index,
        });
    }
    let mut g = Graph::new();
    let x = g.leaf(point.clone());
    let y = f(&mut g, x)?;
    let grads = g.backward(y)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape().to_vec()));

    let indices = probe_indices(point.numel(), cfg.max_coords);
    let mut numeric = Vec::with_capacity(indices.len());
    let mut probe = point.clone();
    for &i in &indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + cfg.h;
        let fp = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - cfg.h;
        let fm = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((fp - fm) / (2.0 * cfg.h));
    }

    let scale = indices
        .iter()
        .zip(&numeric)
        .map(|(&i, n)| analytic.data()[i].abs().max(n.abs()))
        .fold(0.0, f64::max);
    let floor = (cfg.floor_ratio * scale).max(f64::MIN_POSITIVE);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_index: indices.first().copied().unwrap_or(0),
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coords_checked: indices.len(),
        passed: true,
    };
    for (&i, &n) in indices.iter().zip(&numeric) {
        let a = analytic.data()[i];
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(floor);
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err || (i == report.worst_index && rel == 0.0) {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = n;
        }
    }
    report.passed = report.max_rel_err <= cfg.tol;
    Ok(report)
}
