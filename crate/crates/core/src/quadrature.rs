//! Gauss–Hermite quadrature for Gaussian expectations.

/// Nodes and weights for `∫ f(x) e^{-x²} dx` (physicists' convention),
/// computed by Newton iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `E[f(G)]` for `G ~ N(0, 1)` with an `n`-point rule.
pub fn normal_expectation(n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_hermite(n);
    let s2 = std::f64::consts::SQRT_2;
    x.iter()
        .zip(&w)
        .map(|(xi, wi)| wi * f(s2 * xi))
        .sum::<f64>()
        / std::f64::consts::PI.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_moments() {
        assert!((normal_expectation(20, |_| 1.0) - 1.0).abs() < 1e-13);
        assert!(normal_expectation(20, |g| g).abs() < 1e-13);
        assert!((normal_expectation(20, |g| g * g) - 1.0).abs() < 1e-12);
        assert!((normal_expectation(20, |g| g.powi(4)) - 3.0).abs() < 1e-11);
        // E[e^{aG}] = e^{a²/2}.
        assert!((normal_expectation(40, |g| (0.7 * g).exp()) - (0.245f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn odd_order_has_zero_node() {
        let (x, _) = gauss_hermite(5);
        assert!(x[2].abs() < 1e-15);
    }
}
