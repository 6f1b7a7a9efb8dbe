//! Small quadrature and root-finding kernels shared by the certificate code.

use std::sync::LazyLock;

/// Gauss–Legendre rule on `[0, 1]`: `(nodes, weights)`.
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `order`-point rule by Newton iteration on the Legendre
    /// polynomial roots, then maps it from `[-1, 1]` onto `[0, 1]`.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let m = order.div_ceil(2);
        for i in 0..m {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let mut p0 = 1.0;
                let mut p1 = 0.0;
                for k in 0..order {
                    let p2 = p1;
                    p1 = p0;
                    p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
                }
                dp = order as f64 * (z * p0 - p1) / (z * z - 1.0);
                let dz = p0 / dp;
                z -= dz;
                if dz.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = 0.5 * (1.0 - z);
            nodes[order - 1 - i] = 0.5 * (1.0 + z);
            weights[i] = 0.5 * w;
            weights[order - 1 - i] = 0.5 * w;
        }
        Self { nodes, weights }
    }

    pub fn integrate_unit(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&q, &w)| w * f(q))
            .sum()
    }
}

/// The 16-point rule used for segment integrals of Jacobian entries.
pub static GL16: LazyLock<GaussLegendre> = LazyLock::new(|| GaussLegendre::new(16));

/// Adaptive Simpson quadrature on a finite interval.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, abs_tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
///
/// Returns the midpoint of the final bracket. `f(lo)` and `f(hi)` must have
/// opposite signs (zero counts as either).
pub fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> f64 {
    let f_lo = f(lo);
    let lo_negative = f_lo < 0.0;
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_degree_31() {
        let rule = &*GL16;
        let weight_sum: f64 = rule.weights.iter().sum();
        assert!((weight_sum - 1.0).abs() < 1e-14);
        // ∫_0^1 q^31 dq = 1/32
        let v = rule.integrate_unit(|q| q.powi(31));
        assert!((v - 1.0 / 32.0).abs() < 1e-14, "{v}");
    }

    #[test]
    fn nodes_are_sorted_and_inside_unit_interval() {
        let rule = GaussLegendre::new(7);
        assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(rule.nodes.iter().all(|&q| q > 0.0 && q < 1.0));
        assert!((rule.nodes[3] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn simpson_matches_closed_forms() {
        let v = adaptive_simpson(&|s: f64| (s + 2.0).powf(-0.5), 9.0, 11.67, 1e-12);
        let exact = 2.0 * (13.67f64.sqrt() - 11f64.sqrt());
        assert!((v - exact).abs() < 1e-11);
        let v = adaptive_simpson(&|s: f64| s.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((v - 2.0).abs() < 1e-11);
    }

    #[test]
    fn bisection_finds_sqrt_two() {
        let root = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-13, 200);
        assert!((root - 2f64.sqrt()).abs() < 1e-12);
    }
}
