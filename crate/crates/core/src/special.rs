//! Log-space factorials and the Gamma/Poisson kernels built from them.

use std::sync::OnceLock;

const TABLE_LEN: usize = 4096;

fn table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        // Kahan-compensated running sum of ln k
        let mut out = Vec::with_capacity(TABLE_LEN);
        let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
        out.push(0.0);
        for k in 1..TABLE_LEN {
            let y = (k as f64).ln() - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            out.push(sum);
        }
        out
    })
}

/// `ln(n!)`. Exact products up to 30, a compensated log-sum table up to
/// 4095, then the Stirling series.
pub fn ln_factorial(n: u64) -> f64 {
    if n <= 30 {
        let mut p = 1.0_f64;
        for k in 2..=n {
            p *= k as f64;
        }
        return p.ln();
    }
    if (n as usize) < TABLE_LEN {
        return table()[n as usize];
    }
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    x * x.ln() - x
        + 0.5 * (2.0 * std::f64::consts::PI * x).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

/// Poisson probability `m^k e^{-m} / k!`.
pub fn poisson_pmf(k: i64, mean: f64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if k == 0 {
        return (-mean).exp();
    }
    (k as f64 * mean.ln() - mean - ln_factorial(k as u64)).exp()
}

/// Density of the sum of `shape` independent exponentials of mean `scale`.
pub fn gamma_density(shape: u64, scale: f64, x: f64) -> f64 {
    if x < 0.0 || shape == 0 {
        return 0.0;
    }
    let z = x / scale;
    if shape == 1 {
        return (-z).exp() / scale;
    }
    if x == 0.0 {
        return 0.0;
    }
    ((shape - 1) as f64 * z.ln() - z - ln_factorial(shape - 1) - scale.ln()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorial_branches_agree() {
        assert_eq!(ln_factorial(0), 0.0);
        assert!((ln_factorial(5) - 120.0_f64.ln()).abs() < 1e-15);
        // table vs direct log sum near the product cutoff
        let direct: f64 = (1..=31).map(|k| (k as f64).ln()).sum();
        assert!((ln_factorial(31) - direct).abs() < 1e-12);
        // Stirling vs table at the switch
        let direct: f64 = (1..=5000u64).map(|k| (k as f64).ln()).sum();
        assert!((ln_factorial(5000) - direct).abs() / direct < 1e-14);
        let t = table()[4095];
        let x = 4095.0_f64;
        let st = x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x);
        assert!((t - st).abs() < 1e-10);
    }

    #[test]
    fn large_arguments_do_not_overflow() {
        let p = poisson_pmf(1000, 1000.0);
        assert!(p.is_finite() && p > 0.0);
        let g = gamma_density(500, 0.5, 250.0);
        assert!(g.is_finite() && g > 0.0);
    }
}
