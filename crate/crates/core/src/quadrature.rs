//! Adaptive tensor Gauss-Legendre quadrature for self-interaction integrals
//! of radially symmetric, weakly singular kernels over a square cell.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};

const RULE_ORDER: usize = 12;
const MAX_DEPTH: u32 = 60;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n and its derivative.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(RULE_ORDER))
}

fn panel<F: Fn(f64, f64) -> Complex64>(f: &F, x0: f64, y0: f64, s: f64) -> Complex64 {
    let (nodes, weights) = rule();
    let half = 0.5 * s;
    let mut acc = Complex64::new(0.0, 0.0);
    for (yi, wy) in nodes.iter().zip(weights) {
        let y = y0 + half * (1.0 + yi);
        for (xi, wx) in nodes.iter().zip(weights) {
            acc += f(x0 + half * (1.0 + xi), y) * (wx * wy);
        }
    }
    acc * (half * half)
}

fn refine<F: Fn(f64, f64) -> Complex64>(
    f: &F,
    x0: f64,
    y0: f64,
    s: f64,
    coarse: Complex64,
    tol: f64,
    depth: u32,
    worst: &mut f64,
) -> Complex64 {
    let h = 0.5 * s;
    let kids = [
        panel(f, x0, y0, h),
        panel(f, x0 + h, y0, h),
        panel(f, x0, y0 + h, h),
        panel(f, x0 + h, y0 + h, h),
    ];
    let fine: Complex64 = kids.iter().sum();
    let err = (fine - coarse).norm();
    if err <= tol {
        return fine;
    }
    if depth >= MAX_DEPTH {
        *worst = worst.max(err / tol);
        return fine;
    }
    let corners = [(x0, y0), (x0 + h, y0), (x0, y0 + h), (x0 + h, y0 + h)];
    corners
        .iter()
        .zip(kids)
        .map(|(&(cx, cy), k)| refine(f, cx, cy, h, k, 0.5 * tol, depth + 1, worst))
        .sum()
}

/// `∫_0^a ∫_0^a f(x, y) dx dy` to relative accuracy `rel_tol`; `f` may be
/// weakly singular at the origin.
pub fn integrate_corner_square<F: Fn(f64, f64) -> Complex64>(f: F, a: f64, rel_tol: f64) -> Result<Complex64> {
    let coarse = panel(&f, 0.0, 0.0, a);
    let tol = rel_tol * coarse.norm().max(f64::MIN_POSITIVE);
    let mut worst = 0.0;
    let value = refine(&f, 0.0, 0.0, a, coarse, tol, 0, &mut worst);
    if worst > 1.0 {
        return Err(Error::QuadratureDiverged {
            target: rel_tol,
            achieved: rel_tol * worst,
        });
    }
    Ok(value)
}

/// `∫∫ g(|x|) dx` over the square of side `h` centred at the origin.
pub fn cell_self_integral<G: Fn(f64) -> Complex64>(g: G, h: f64, rel_tol: f64) -> Result<Complex64> {
    let quadrant = integrate_corner_square(|x, y| g(x.hypot(y)), 0.5 * h, rel_tol)?;
    Ok(quadrant * 4.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_integrate_polynomials() {
        let (x, w) = gauss_legendre(RULE_ORDER);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        for deg in 0..2 * RULE_ORDER {
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!((got - exact).abs() < 1e-14, "degree {deg}");
        }
    }

    #[test]
    fn small_orders() {
        let (x, w) = gauss_legendre(1);
        assert_eq!((x[0], w[0]), (0.0, 2.0));
        let (x, w) = gauss_legendre(2);
        assert!((x[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((w[0] - 1.0).abs() < 1e-15);
        let (x, _) = gauss_legendre(3);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn log_over_unit_quadrant_matches_closed_form() {
        // ∫_0^a∫_0^a ln r = a^2 (ln a + π/4 + ln2/2 - 3/2)
        for &a in &[1.0, 0.5, 1.0 / 128.0] {
            let exact = a * a * (f64::ln(a) + std::f64::consts::FRAC_PI_4 + 0.5 * f64::ln(2.0) - 1.5);
            let got = integrate_corner_square(|x, y| Complex64::new(x.hypot(y).ln(), 0.0), a, 1e-12).unwrap();
            assert!((got.re - exact).abs() < 1e-11 * exact.abs(), "a = {a}");
        }
    }

    #[test]
    fn smooth_integrand() {
        let got = cell_self_integral(|r| Complex64::new(r * r, 0.0), 2.0, 1e-12).unwrap();
        assert!((got.re - 8.0 / 3.0).abs() < 1e-12);
    }
}
