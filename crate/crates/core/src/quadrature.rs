//! Gauss–Legendre rules and the order-zero Bessel function.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let n = n as f64;
    (p1, n * (x * p1 - p0) / (x * x - 1.0))
}

pub fn gauss_legendre_64() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(64))
}

pub fn gauss_legendre_128() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(128))
}

/// J0(x) from its integral form `(1/π)∫₀^π cos(x sin θ) dθ`.
///
/// The integrand is smooth and π-periodic, so the trapezoid rule converges
/// geometrically once the node count exceeds |x|.
pub fn bessel_j0(x: f64) -> f64 {
    let m = 48 + x.abs().ceil() as usize;
    let sum: f64 = (0..m)
        .map(|i| (x * (PI * i as f64 / m as f64).sin()).cos())
        .sum();
    sum / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        // ∫ x^14 over [-1,1] = 2/15 (degree 14 ≤ 2·8-1)
        let p: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((p - 2.0 / 15.0).abs() < 1e-14);
        let (x, w) = gauss_legendre_64();
        let cos_int: f64 = x.iter().zip(w).map(|(x, w)| w * x.cos()).sum();
        assert!((cos_int - 2.0 * 1f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn j0_matches_reference_values() {
        // reference values from scipy.special.j0
        for (x, want) in [
            (0.0, 1.0),
            (1.0, 0.765_197_686_557_966_5),
            (5.0, -0.177_596_771_314_338_3),
            (12.3, 0.110_797_950_307_585_27),
            (30.542_040_179_424_37, -0.013_346_033_556_389_29),
        ] {
            assert!((bessel_j0(x) - want).abs() < 1e-13, "J0({x})");
        }
    }
}
