//! Shared numerical primitives: the smooth radial cutoff, graded grids,
//! Gauss–Legendre quadrature (fixed-order and adaptive), monotone cubic
//! interpolation, tridiagonal solves, a scaled modified Bessel function,
//! and small least-squares helpers.
//!
//! Everything here is deterministic and allocation-light; the heavier
//! modules build their quadratures and steppers out of these pieces.

use std::sync::OnceLock;

/// Smooth cutoff: 1 for `s <= 1`, 0 for `s >= 3/2`, quintic smoothstep in
/// between (value, first and second derivatives matched at both ends, so the
/// cutoff is C²). All downstream constants depend on this choice only at O(1).
pub fn cutoff(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 1.5 {
        0.0
    } else {
        let x = (s - 1.0) / 0.5;
        1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
    }
}

/// First derivative of [`cutoff`] with respect to `s`.
pub fn cutoff_d1(s: f64) -> f64 {
    if s <= 1.0 || s >= 1.5 {
        0.0
    } else {
        let x = (s - 1.0) / 0.5;
        -(30.0 * x * x - 60.0 * x * x * x + 30.0 * x * x * x * x) / 0.5
    }
}

/// Second derivative of [`cutoff`] with respect to `s`.
pub fn cutoff_d2(s: f64) -> f64 {
    if s <= 1.0 || s >= 1.5 {
        0.0
    } else {
        let x = (s - 1.0) / 0.5;
        -(60.0 * x - 180.0 * x * x + 120.0 * x * x * x) / 0.25
    }
}

/// Graded radial grid: starts at 0 with first interval `h0`, spacing grows
/// geometrically by `ratio` until `rmax` is passed. The last node is >= `rmax`.
pub fn geometric_grid(h0: f64, ratio: f64, rmax: f64) -> Vec<f64> {
    assert!(h0 > 0.0 && ratio >= 1.0 && rmax > h0);
    let mut nodes = vec![0.0];
    let mut h = h0;
    while *nodes.last().unwrap() < rmax {
        let next = nodes.last().unwrap() + h;
        nodes.push(next);
        h *= ratio;
    }
    nodes
}

/// Log-uniform grid of `n` points on `[a, b]`, inclusive.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > a && n >= 2);
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, computed by Newton
/// iteration on the Legendre polynomial from the Chebyshev initial guess.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P'_n(x).
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let wi = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = wi;
        weights[n - 1 - i] = wi;
    }
    (nodes, weights)
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

fn gl8() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(8))
}

/// Fixed-order Gauss–Legendre integral of `f` over `[a, b]`.
pub fn integrate_gl<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, order: usize) -> f64 {
    let owned;
    let (nodes, weights) = match order {
        8 => {
            let r = gl8();
            (&r.0, &r.1)
        }
        16 => {
            let r = gl16();
            (&r.0, &r.1)
        }
        _ => {
            owned = gauss_legendre(order);
            (&owned.0, &owned.1)
        }
    };
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut sum = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        sum += w * f(mid + half * x);
    }
    sum * half
}

/// Adaptive quadrature: recursively bisects `[a, b]`, comparing 8- and
/// 16-point Gauss–Legendre estimates per panel until the local discrepancy is
/// below `tol` scaled by panel fraction. Depth-limited; returns the refined sum.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let coarse = integrate_gl(|x| f(x), a, b, 8);
        let fine = integrate_gl(|x| f(x), a, b, 16);
        // a minimum depth guards against silently accepting unresolved spikes
        if (depth >= 4 && (fine - coarse).abs() <= tol * (1.0 + fine.abs())) || depth >= 28 {
            fine
        } else {
            let m = 0.5 * (a + b);
            recurse(f, a, m, tol / 1.8, depth + 1) + recurse(f, m, b, tol / 1.8, depth + 1)
        }
    }
    if a == b {
        return 0.0;
    }
    recurse(f, a, b, tol, 0)
}

/// Composite Gauss–Legendre over panels whose widths grow geometrically away
/// from the endpoint `toward` (useful for integrands peaked at one end).
pub fn integrate_geometric_panels<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    toward_a: bool,
    first_panel: f64,
    growth: f64,
    order: usize,
) -> f64 {
    assert!(b > a && first_panel > 0.0 && growth > 1.0);
    let mut sum = 0.0;
    let mut w = first_panel;
    if toward_a {
        let mut lo = a;
        while lo < b {
            let hi = (lo + w).min(b);
            sum += integrate_gl(&mut f, lo, hi, order);
            lo = hi;
            w *= growth;
        }
    } else {
        let mut hi = b;
        while hi > a {
            let lo = (hi - w).max(a);
            sum += integrate_gl(&mut f, lo, hi, order);
            hi = lo;
            w *= growth;
        }
    }
    sum
}

/// Monotone cubic (Fritsch–Carlson) interpolant on a strictly increasing grid.
/// Preserves monotonicity of the data and provides C¹ evaluation and
/// derivative. Out-of-range queries clamp to the boundary polynomial.
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>, // node derivatives
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        assert!(x.len() == y.len() && x.len() >= 2);
        assert!(x.windows(2).all(|w| w[1] > w[0]), "grid must increase");
        let n = x.len();
        let mut h = vec![0.0; n - 1];
        let mut delta = vec![0.0; n - 1];
        for i in 0..n - 1 {
            h[i] = x[i + 1] - x[i];
            delta[i] = (y[i + 1] - y[i]) / h[i];
        }
        let mut d = vec![0.0; n];
        d[0] = delta[0];
        d[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                d[i] = 0.0;
            } else {
                // weighted harmonic mean keeps the interpolant monotone
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        // clip endpoint slopes (Fritsch–Carlson boundary treatment)
        for (i, di) in [(0usize, 0usize), (n - 1, n - 2)] {
            if d[i] * delta[di] < 0.0 {
                d[i] = 0.0;
            } else if d[i].abs() > 3.0 * delta[di].abs() {
                d[i] = 3.0 * delta[di];
            }
        }
        Pchip { x, y, d }
    }

    fn segment(&self, xq: f64) -> usize {
        match self.x.binary_search_by(|v| v.partial_cmp(&xq).unwrap()) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(i) => i.clamp(1, self.x.len() - 1) - 1,
        }
    }

    pub fn eval(&self, xq: f64) -> f64 {
        let i = self.segment(xq);
        let h = self.x[i + 1] - self.x[i];
        let t = (xq - self.x[i]) / h;
        let (h00, h10, h01, h11) = hermite_basis(t);
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }

    pub fn deriv(&self, xq: f64) -> f64 {
        let i = self.segment(xq);
        let h = self.x[i + 1] - self.x[i];
        let t = (xq - self.x[i]) / h;
        let dh00 = 6.0 * t * t - 6.0 * t;
        let dh10 = 3.0 * t * t - 4.0 * t + 1.0;
        let dh01 = -dh00;
        let dh11 = 3.0 * t * t - 2.0 * t;
        (dh00 * self.y[i] + dh01 * self.y[i + 1]) / h + dh10 * self.d[i] + dh11 * self.d[i + 1]
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }
}

fn hermite_basis(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

/// Solves a tridiagonal system by the Thomas algorithm.
/// `lower[i]` couples row `i` to `i-1` (lower[0] unused), `upper[i]` couples
/// row `i` to `i+1` (last entry unused). Overwrites nothing; returns the solution.
pub fn solve_tridiag(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    assert!(lower.len() == n && upper.len() == n && rhs.len() == n);
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Scaled modified Bessel function e^{-a} I₁(a) for a >= 0.
/// Power series for small arguments, asymptotic expansion beyond.
pub fn bessel_i1_scaled(a: f64) -> f64 {
    assert!(a >= 0.0);
    if a < 40.0 {
        // I1(a) = sum_k (a/2)^{2k+1} / (k! (k+1)!)
        let half = 0.5 * a;
        let mut term = half;
        let mut sum = term;
        for k in 1..140 {
            term *= half * half / (k as f64 * (k + 1) as f64);
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum * (-a).exp()
    } else {
        // I1(a) ~ e^a / sqrt(2 pi a) * (1 - 3/(8a) - 15/(128 a²) - 105/(1024 a³)
        //          - 14175/(98304 a⁴) - 1091475/(3932160 a⁵) - ...)
        let inv = 1.0 / a;
        let series = 1.0
            + inv
                * (-0.375
                    + inv
                        * (-0.1171875
                            + inv
                                * (-0.1025390625
                                    + inv
                                        * (-0.144195556640625
                                            + inv
                                                * (-0.2775764465332031
                                                    + inv * (-0.6765925884246826))))));
        series / (2.0 * std::f64::consts::PI * a).sqrt()
    }
}

/// Ratio I₁(a)/a with its removable limit 1/2 at a = 0, in scaled form:
/// returns e^{-a} I₁(a)/a, finite for all a >= 0.
pub fn bessel_i1_scaled_over_a(a: f64) -> f64 {
    if a < 1e-8 {
        0.5 * (-a).exp() * (1.0 + a * a / 8.0)
    } else {
        bessel_i1_scaled(a) / a
    }
}

/// Finite-difference rows for the radial Laplacian u'' + (n-1)/r · u' on a
/// (possibly nonuniform) grid starting at r = 0.
///
/// Row 0 uses the even-symmetry limit Δu(0) = n·u''(0) ≈ 2n(u₁-u₀)/h₁²;
/// interior rows combine the standard 3-point second-derivative and centered
/// first-derivative stencils for nonuniform spacing. The last row is left
/// zero (callers impose their own boundary condition there).
pub fn radial_laplacian_rows(r: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = r.len();
    assert!(m >= 3 && r[0] == 0.0);
    let mut lo = vec![0.0; m];
    let mut di = vec![0.0; m];
    let mut up = vec![0.0; m];
    let h1 = r[1] - r[0];
    di[0] = -2.0 * n as f64 / (h1 * h1);
    up[0] = 2.0 * n as f64 / (h1 * h1);
    for i in 1..m - 1 {
        let hm = r[i] - r[i - 1];
        let hp = r[i + 1] - r[i];
        let a = 2.0 / (hm * (hm + hp));
        let c = 2.0 / (hp * (hm + hp));
        let b = -(a + c);
        let ap = -hp / (hm * (hm + hp));
        let cp = hm / (hp * (hm + hp));
        let bp = (hp - hm) / (hm * hp);
        let k = (n - 1) as f64 / r[i];
        lo[i] = a + k * ap;
        di[i] = b + k * bp;
        up[i] = c + k * cp;
    }
    (lo, di, up)
}

/// Ordinary least squares fit y ≈ slope·x + intercept; returns
/// (slope, intercept, r²).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert!(x.len() == y.len() && x.len() >= 2);
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

/// max(1, |ln v|): the bracketed-logarithm convention used by the envelope
/// case tables.
pub fn ln_bracket(v: f64) -> f64 {
    v.ln().abs().max(1.0)
}

/// Supremum of `f` over `[a, b]` sampled on a log-uniform grid of `n` points
/// (for positive a) or uniform grid otherwise.
pub fn sup_sampled<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let grid = if a > 0.0 {
        log_grid(a, b, n)
    } else {
        (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect()
    };
    grid.into_iter().map(f).fold(f64::NEG_INFINITY, f64::max)
}

/// Trapezoid integral of sampled values over a (possibly nonuniform) grid.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mut s = 0.0;
    for i in 1..x.len() {
        s += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
    }
    s
}
