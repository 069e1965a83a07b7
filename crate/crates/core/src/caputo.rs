//! L1 discretization of the Caputo derivative on a uniform time grid.
//!
//! With `b_k = (k+1)^(1-alpha) - k^(1-alpha)` and
//! `alpha0 = Gamma(2-alpha) dt^alpha`, the derivative at `t_{k+1}` is
//! `(1/alpha0) sum_{j=0}^{k} b_{k-j} (u^{j+1} - u^j)`.

use nalgebra::DVector;

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function (Lanczos approximation, reflection below 1/2).
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = LANCZOS_COEFFS[0];
        let t = x + LANCZOS_G + 0.5;
        for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}

#[derive(Debug, Clone)]
pub struct FractionalKernel {
    alpha: f64,
    dt: f64,
    steps: usize,
    /// `b_0 ..= b_steps`.
    b: Vec<f64>,
    alpha0: f64,
}

impl FractionalKernel {
    pub fn new(alpha: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fractional order must lie in (0, 1), got {alpha}"
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("step count must be at least 1".into()));
        }
        let p = 1.0 - alpha;
        let b = (0..=steps)
            .map(|k| ((k + 1) as f64).powf(p) - (k as f64).powf(p))
            .collect();
        Ok(FractionalKernel {
            alpha,
            dt,
            steps,
            b,
            alpha0: gamma(2.0 - alpha) * dt.powf(alpha),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn b(&self, k: usize) -> f64 {
        self.b[k]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.b
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    /// Lagged part of the L1 sum at step `k`: `sum_{j<k} b_{k-j} d^j` where
    /// `increments[j] = u^{j+1} - u^j`. The `j = k` term involves the unknown
    /// and is left to the scheme.
    pub fn history_combination(
        &self,
        increments: &[DVector<f64>],
        k: usize,
        dim: usize,
    ) -> Result<DVector<f64>> {
        if k > increments.len() {
            return Err(Error::InvalidArgument(format!(
                "history requested at step {k} but only {} increments are stored",
                increments.len()
            )));
        }
        if k >= self.b.len() {
            return Err(Error::InvalidArgument(format!(
                "step {k} exceeds the kernel length {}",
                self.steps
            )));
        }
        let mut out = DVector::zeros(dim);
        for (j, d) in increments[..k].iter().enumerate() {
            if d.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "increment {j} has length {}, expected {dim}",
                    d.len()
                )));
            }
            out.axpy(self.b[k - j], d, 1.0);
        }
        Ok(out)
    }
}

/// L1 approximation of the Caputo derivative at `t_1 ..= t_K` from samples
/// at `t_0 ..= t_K`.
pub fn l1_derivative_scalar(samples: &[f64], kernel: &FractionalKernel) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two samples for an L1 derivative".into(),
        ));
    }
    let steps = samples.len() - 1;
    if steps > kernel.steps() {
        return Err(Error::InvalidArgument(format!(
            "{steps} steps exceed the kernel length {}",
            kernel.steps()
        )));
    }
    let d: Vec<f64> = samples.windows(2).map(|w| w[1] - w[0]).collect();
    Ok((0..steps)
        .map(|k| (0..=k).map(|j| kernel.b(k - j) * d[j]).sum::<f64>() / kernel.alpha0())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gamma_reference_values() {
        let cases = [
            (1.0, 1.0),
            (1.5, 0.886_226_925_452_758),
            (1.2, 0.918_168_742_399_760_6),
            (1.8, 0.931_383_770_980_242_7),
            (2.2, 1.101_802_490_879_712_8),
            (5.0, 24.0),
        ];
        for (x, g) in cases {
            assert!((gamma(x) - g).abs() <= 1e-13 * g, "gamma({x}) = {}", gamma(x));
        }
    }

    #[test]
    fn leading_coefficients() {
        let k = FractionalKernel::new(0.8, 0.01, 10).unwrap();
        assert_eq!(k.b(0), 1.0);
        assert!((k.b(1) - 0.148_698_354_997_035_1).abs() < 1e-15);
    }

    #[test]
    fn alpha0_at_full_scale_step() {
        let dt = 0.05 / 4000.0;
        let k = FractionalKernel::new(0.8, dt, 4000).unwrap();
        let expected = 0.918_168_742_399_760_6 * dt.powf(0.8);
        assert!((k.alpha0() - expected).abs() <= 1e-13 * expected);
        assert!((k.alpha0() - 1.097_616_215_028_856e-4).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(FractionalKernel::new(1.0, 0.1, 5).is_err());
        assert!(FractionalKernel::new(0.0, 0.1, 5).is_err());
        assert!(FractionalKernel::new(0.5, 0.0, 5).is_err());
        assert!(FractionalKernel::new(0.5, 0.1, 0).is_err());
    }

    #[test]
    fn coefficients_positive_decreasing_telescoping() {
        for alpha in [0.2, 0.5, 0.8] {
            let k = FractionalKernel::new(alpha, 1e-3, 10_000).unwrap();
            let b = k.coefficients();
            assert!(b.iter().all(|&x| x > 0.0));
            assert!(b.windows(2).all(|w| w[1] < w[0]));
            let mut partial = 0.0;
            for m in 1..=10_000usize {
                partial += b[m - 1];
                let exact = (m as f64).powf(1.0 - alpha);
                assert!((partial - exact).abs() <= 1e-12 * exact, "alpha {alpha} m {m}");
            }
        }
    }

    #[test]
    fn history_edge_cases() {
        let k = FractionalKernel::new(0.5, 0.1, 10).unwrap();
        let h = k.history_combination(&[], 0, 3).unwrap();
        assert_eq!(h, DVector::zeros(3));
        let zeros = vec![DVector::zeros(3); 4];
        assert_eq!(k.history_combination(&zeros, 4, 3).unwrap(), DVector::zeros(3));
        assert!(k.history_combination(&zeros, 5, 3).is_err());
    }

    #[test]
    fn history_reproduces_caputo_of_t() {
        let alpha = 0.8;
        let dt = 0.01;
        let kernel = FractionalKernel::new(alpha, dt, 100).unwrap();
        let increments: Vec<_> = (0..100).map(|_| DVector::from_element(1, dt)).collect();
        for k in 0..100 {
            let lag = kernel.history_combination(&increments, k, 1).unwrap()[0];
            let full = (lag + kernel.b(0) * dt) / kernel.alpha0();
            let t = kernel.time(k + 1);
            let exact = t.powf(1.0 - alpha) / gamma(2.0 - alpha);
            assert!((full - exact).abs() <= 1e-12 * exact);
        }
    }

    #[test]
    fn scalar_derivative_of_constant_and_linear() {
        let kernel = FractionalKernel::new(0.3, 0.05, 20).unwrap();
        let c = vec![2.5; 21];
        assert!(l1_derivative_scalar(&c, &kernel).unwrap().iter().all(|&v| v == 0.0));
        let lin: Vec<f64> = (0..=20).map(|j| kernel.time(j)).collect();
        let d = l1_derivative_scalar(&lin, &kernel).unwrap();
        for (k, v) in d.iter().enumerate() {
            let t = kernel.time(k + 1);
            let exact = t.powf(0.7) / gamma(1.7);
            assert!((v - exact).abs() <= 1e-12 * exact);
        }
        assert!(l1_derivative_scalar(&[1.0], &kernel).is_err());
    }

    #[test]
    fn scalar_order_for_t_squared() {
        let alpha = 0.8;
        let errors: Vec<f64> = [40usize, 80, 160, 320]
            .iter()
            .map(|&n| {
                let dt = 1.0 / n as f64;
                let kernel = FractionalKernel::new(alpha, dt, n).unwrap();
                let s: Vec<f64> = (0..=n).map(|j| (j as f64 * dt).powi(2)).collect();
                let d = l1_derivative_scalar(&s, &kernel).unwrap();
                let exact = 2.0 / gamma(3.0 - alpha);
                (d[n - 1] - exact).abs()
            })
            .collect();
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 1.2).abs() <= 0.15, "order {order}");
        }
    }

    proptest! {
        #[test]
        fn telescoping_holds_for_any_order(alpha in 0.01f64..0.99, m in 1usize..2000) {
            let k = FractionalKernel::new(alpha, 0.1, m).unwrap();
            let s: f64 = k.coefficients()[..m].iter().sum();
            let exact = (m as f64).powf(1.0 - alpha);
            prop_assert!((s - exact).abs() <= 1e-12 * exact);
        }
    }
}
