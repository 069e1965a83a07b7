use crate::caputo::{gamma, l1_derivative_scalar, FractionalKernel};
use crate::error::Result;

pub const EXACTNESS_TOL: f64 = 1e-12;
pub const ORDER_TOL: f64 = 0.15;

/// Largest relative error of the discrete derivative of `u = t` on `[0, 1]`.
pub fn l1_exactness(alpha: f64, steps: usize) -> Result<f64> {
    let dt = 1.0 / steps as f64;
    let kernel = FractionalKernel::new(alpha, dt, steps)?;
    let samples: Vec<f64> = (0..=steps).map(|j| j as f64 * dt).collect();
    let d = l1_derivative_scalar(&samples, &kernel)?;
    let g = gamma(2.0 - alpha);
    Ok(d.iter()
        .enumerate()
        .map(|(i, v)| {
            let exact = ((i + 1) as f64 * dt).powf(1.0 - alpha) / g;
            (v - exact).abs() / exact
        })
        .fold(0.0, f64::max))
}

/// Observed orders for `u = t^2` at `t = 1` over successive step counts.
pub fn l1_order(alpha: f64, step_counts: &[usize]) -> Result<Vec<f64>> {
    let exact = 2.0 / gamma(3.0 - alpha);
    let errors = step_counts
        .iter()
        .map(|&n| {
            let dt = 1.0 / n as f64;
            let kernel = FractionalKernel::new(alpha, dt, n)?;
            let s: Vec<f64> = (0..=n).map(|j| (j as f64 * dt).powi(2)).collect();
            let d = l1_derivative_scalar(&s, &kernel)?;
            Ok((d[n - 1] - exact).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors
        .windows(2)
        .zip(step_counts.windows(2))
        .map(|(e, n)| (e[0] / e[1]).ln() / (n[1] as f64 / n[0] as f64).ln())
        .collect())
}

#[derive(Debug, Clone)]
pub struct KernelReport {
    pub alpha: f64,
    pub exactness_error: f64,
    pub orders: Vec<f64>,
}

impl KernelReport {
    pub fn exact_ok(&self) -> bool {
        self.exactness_error <= EXACTNESS_TOL
    }

    pub fn order_ok(&self) -> bool {
        let target = 2.0 - self.alpha;
        !self.orders.is_empty() && self.orders.iter().all(|o| (o - target).abs() <= ORDER_TOL)
    }

    pub fn passed(&self) -> bool {
        self.exact_ok() && self.order_ok()
    }
}

pub fn kernel_report(alpha: f64) -> Result<KernelReport> {
    Ok(KernelReport {
        alpha,
        exactness_error: l1_exactness(alpha, 100)?,
        orders: l1_order(alpha, &[40, 80, 160, 320])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_pass_for_moderate_orders() {
        for alpha in [0.2, 0.5, 0.8] {
            let r = kernel_report(alpha).unwrap();
            assert!(r.passed(), "{r:?}");
        }
        assert!(kernel_report(1.2).is_err());
    }
}
