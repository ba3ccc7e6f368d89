//! The steady concentration profile and its linearization.
//!
//! In dimension n ≥ 3 the stationary states of u_t = Δu + u^p with
//! p = (n+2)/(n-2) include the explicit radial family
//!
//!   U(y) = (n(n-2))^{(n-2)/4} (1 + |y|²)^{-(n-2)/2},
//!
//! rescaled as μ^{-(n-2)/2} U((x-ξ)/μ). The linearized operator
//! L = Δ + pU^{p-1} has bounded kernel elements Z_i = ∂_{y_i}U (translations)
//! and Z_{n+1} = y·∇U + (n-2)/2·U (dilation), plus a single positive
//! eigenvalue γ₀ with a radially symmetric, exponentially decaying
//! eigenfunction Z₀ ~ r^{-(n-1)/2} e^{-√γ₀ r}. This module provides exact
//! evaluation of U and the Z_i, and computes (γ₀, Z₀) two independent ways:
//! a banded discrete eigensolver and a shooting oracle.

use crate::util::{geometric_grid, radial_laplacian_rows, solve_tridiag, Pchip};
use serde::Serialize;

/// The scaled/translated steady-profile family.
#[derive(Debug, Clone, Copy)]
pub struct BubbleFamily {
    pub n: usize,
    pub mu: f64,
    pub xi: [f64; 4],
}

impl BubbleFamily {
    pub fn new(n: usize, mu: f64, xi: [f64; 4]) -> Self {
        assert!(n >= 3, "dimension must be at least 3");
        assert!(mu > 0.0, "scale must be positive");
        Self { n, mu, xi }
    }

    /// Critical exponent p = (n+2)/(n-2).
    pub fn p(&self) -> f64 {
        (self.n as f64 + 2.0) / (self.n as f64 - 2.0)
    }
}

/// A radially symmetric function sampled on a graded grid.
#[derive(Debug, Clone, Serialize)]
pub struct RadialProfile {
    pub n: usize,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    /// Declared far-field decay rate (power of r, or the exponential rate
    /// for exponentially decaying profiles — documented per producer).
    pub tail_exponent: f64,
}

impl RadialProfile {
    pub fn new(n: usize, nodes: Vec<f64>, values: Vec<f64>, tail_exponent: f64) -> Self {
        assert_eq!(nodes.len(), values.len());
        assert!(nodes[0] == 0.0 && nodes.windows(2).all(|w| w[1] > w[0]));
        assert!(values.iter().all(|v| v.is_finite()));
        Self { n, nodes, values, tail_exponent }
    }

    /// Monotone-cubic interpolant of the samples.
    pub fn interp(&self) -> Pchip {
        Pchip::new(self.nodes.clone(), self.values.clone())
    }

    /// CSV serialization: header `r,value`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,value\n");
        for (r, v) in self.nodes.iter().zip(&self.values) {
            out.push_str(&format!("{:.16e},{:.16e}\n", r, v));
        }
        out
    }
}

/// The unstable eigenpair of L = Δ + pU^{p-1}.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub gamma0: f64,
    pub z0: RadialProfile,
    pub decay_rate: f64,
}

/// Radial profile value U(r) in dimension n.
pub fn profile_u(n: usize, r: f64) -> f64 {
    let nf = n as f64;
    (nf * (nf - 2.0)).powf((nf - 2.0) / 4.0) * (1.0 + r * r).powf(-(nf - 2.0) / 2.0)
}

/// μ^{-(n-2)/2} U((x-ξ)/μ) at a point x ∈ ℝⁿ (only the first n coordinates
/// of the fixed-size arrays are used).
pub fn bubble_value(family: &BubbleFamily, x: [f64; 4]) -> f64 {
    let nf = family.n as f64;
    let mut r2 = 0.0;
    for i in 0..family.n.min(4) {
        let d = (x[i] - family.xi[i]) / family.mu;
        r2 += d * d;
    }
    family.mu.powf(-(nf - 2.0) / 2.0) * profile_u(family.n, r2.sqrt())
}

/// Bounded kernel elements of L: index 1..=n are the translation modes
/// ∂_{y_i}U, index n+1 is the dilation mode y·∇U + (n-2)/2·U.
pub fn kernel_z(n: usize, index: usize, y: [f64; 4]) -> f64 {
    assert!(
        (1..=n + 1).contains(&index),
        "kernel index {index} out of range 1..={}",
        n + 1
    );
    let nf = n as f64;
    let mut r2 = 0.0;
    for yi in y.iter().take(n.min(4)) {
        r2 += yi * yi;
    }
    let c = (nf * (nf - 2.0)).powf((nf - 2.0) / 4.0);
    if index <= n {
        // ∂_{y_i} U = -c (n-2) y_i (1+|y|²)^{-n/2}
        -c * (nf - 2.0) * y[index - 1] * (1.0 + r2).powf(-nf / 2.0)
    } else {
        // y·∇U + (n-2)/2 U = c (n-2)/2 (1-|y|²)(1+|y|²)^{-n/2}
        c * (nf - 2.0) / 2.0 * (1.0 - r2) * (1.0 + r2).powf(-nf / 2.0)
    }
}

/// Radial dilation kernel in dimension 4: Z₅(r) = 2^{3/2}(1-r²)/(1+r²)².
pub fn z5_radial(r: f64) -> f64 {
    kernel_z(4, 5, [r, 0.0, 0.0, 0.0])
}

/// Discrete eigensolve of L = Δ + pU^{p-1} for its largest (the unique
/// positive) eigenvalue, by shifted inverse power iteration with
/// Rayleigh-quotient acceleration on a graded grid with a Dirichlet condition
/// at the truncation radius. The radius is increased until γ₀ stabilizes to
/// `tol`. Z₀ is normalized to unit sup-norm and positive at the origin.
pub fn unstable_eigenpair(n: usize, tol: f64) -> Result<Eigenpair, String> {
    assert!(n >= 3 && tol > 0.0);
    let mut prev: Option<f64> = None;
    let mut result = None;
    for rmax in [20.0, 30.0, 40.0, 55.0] {
        let (gamma, grid, vec) = eigensolve_on_grid(n, rmax, 1e-3, 1.015)?;
        if gamma <= 0.0 {
            return Err("no positive eigenvalue found (grid too coarse)".into());
        }
        let converged = prev.map(|p| (gamma - p).abs() <= tol * gamma).unwrap_or(false);
        prev = Some(gamma);
        result = Some((gamma, grid, vec));
        if converged {
            break;
        }
    }
    let (gamma0, grid, mut v) = result.unwrap();
    // normalize: sup-norm 1, positive at the origin
    let maxabs = v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
    for x in &mut v {
        *x *= sign / maxabs;
    }
    let decay = gamma0.sqrt();
    Ok(Eigenpair {
        gamma0,
        z0: RadialProfile::new(n, grid, v, decay),
        decay_rate: decay,
    })
}

/// One truncated eigensolve: builds the tridiagonal discretization of L and
/// runs shifted inverse power iteration from the potential-maximum shift,
/// switching to Rayleigh-quotient shifts once roughly converged.
fn eigensolve_on_grid(
    n: usize,
    rmax: f64,
    h0: f64,
    ratio: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>), String> {
    let grid = geometric_grid(h0, ratio, rmax);
    let m = grid.len();
    let (lo, mut di, up) = radial_laplacian_rows(&grid, n);
    let nf = n as f64;
    let p = (nf + 2.0) / (nf - 2.0);
    for i in 0..m {
        let u = profile_u(n, grid[i]);
        di[i] += p * u.powf(p - 1.0);
    }
    // weighted inner product r^{n-1} dr (trapezoid cell weights)
    let mut wgt = vec![0.0; m];
    for i in 0..m {
        let left = if i > 0 { grid[i] - grid[i - 1] } else { 0.0 };
        let right = if i < m - 1 { grid[i + 1] - grid[i] } else { 0.0 };
        wgt[i] = grid[i].powi(n as i32 - 1) * 0.5 * (left + right);
    }
    wgt[0] = (grid[1] - grid[0]).powi(n as i32) / (2.0 * n as f64); // cell around r=0

    // Dirichlet at the last node: decouple the row.
    let dirichlet = m - 1;

    let mut v: Vec<f64> = grid.iter().map(|&r| (-r).exp()).collect();
    v[dirichlet] = 0.0;
    let mut shift = p * nf * (nf - 2.0) + 1.0; // strictly above the potential maximum
    let mut gamma = 0.0;
    for iter in 0..200 {
        // solve (shift*I - L) v_new = v
        let mut sl = vec![0.0; m];
        let mut sd = vec![0.0; m];
        let mut su = vec![0.0; m];
        for i in 0..m {
            sl[i] = -lo[i];
            sd[i] = shift - di[i];
            su[i] = -up[i];
        }
        sl[dirichlet] = 0.0;
        su[dirichlet] = 0.0;
        sd[dirichlet] = 1.0;
        su[dirichlet - 1] = su[dirichlet - 1]; // boundary value stays zero through rhs
        let mut rhs = v.clone();
        rhs[dirichlet] = 0.0;
        let mut vnew = solve_tridiag(&sl, &sd, &su, &rhs);
        vnew[dirichlet] = 0.0;
        let norm: f64 = vnew
            .iter()
            .zip(&wgt)
            .map(|(x, w)| x * x * w)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err("inverse iteration broke down".into());
        }
        for x in &mut vnew {
            *x /= norm;
        }
        // Rayleigh quotient <v, L v>_w / <v, v>_w
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..m - 1 {
            let mut lv = di[i] * vnew[i];
            if i > 0 {
                lv += lo[i] * vnew[i - 1];
            }
            lv += up[i] * vnew[i + 1];
            num += vnew[i] * lv * wgt[i];
            den += vnew[i] * vnew[i] * wgt[i];
        }
        let rq = num / den;
        let delta = (rq - gamma).abs();
        gamma = rq;
        v = vnew;
        if iter > 3 && delta < 1e-13 * gamma.abs().max(1.0) {
            break;
        }
        if iter > 5 {
            shift = gamma + 1e-3; // Rayleigh acceleration, kept slightly off to avoid exact singularity
        }
    }
    Ok((gamma, grid, v))
}

/// Weighted RMS residual ‖LZ₀ - γ₀Z₀‖ / ‖Z₀‖ of an eigenpair on its own grid.
pub fn eigenpair_residual(pair: &Eigenpair) -> f64 {
    let grid = &pair.z0.nodes;
    let v = &pair.z0.values;
    let m = grid.len();
    let (lo, mut di, up) = radial_laplacian_rows(grid, pair.z0.n);
    let nf = pair.z0.n as f64;
    let p = (nf + 2.0) / (nf - 2.0);
    for i in 0..m {
        di[i] += p * profile_u(pair.z0.n, grid[i]).powf(p - 1.0);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m - 1 {
        let mut lv = di[i] * v[i];
        if i > 0 {
            lv += lo[i] * v[i - 1];
        }
        lv += up[i] * v[i + 1];
        let w = grid[i].powi(pair.z0.n as i32 - 1);
        num += (lv - pair.gamma0 * v[i]).powi(2) * w;
        den += v[i].powi(2) * w;
    }
    (num / den).sqrt()
}

/// Shooting oracle for γ₀: integrates Z'' + (n-1)/r Z' + (pU^{p-1} - γ)Z = 0
/// outward with the regular series start Z(r) ≈ 1 + (γ - pU(0)^{p-1}) r²/(2n)
/// and bisects γ on the sign of Z at `rmax` (the decaying solution separates
/// growing-positive from crossing-negative behavior).
pub fn shooting_gamma0(n: usize, rmax: f64) -> f64 {
    let nf = n as f64;
    let p = (nf + 2.0) / (nf - 2.0);
    let pot = |r: f64| p * profile_u(n, r).powf(p - 1.0);
    let endpoint_sign = |gamma: f64| -> f64 {
        // RK4 on (Z, Z') from a series start at r0
        let r0 = 1e-6;
        let c2 = (gamma - pot(0.0)) / (2.0 * nf);
        let mut z = 1.0 + c2 * r0 * r0;
        let mut dz = 2.0 * c2 * r0;
        let steps = 120_000usize;
        let h = (rmax - r0) / steps as f64;
        let rhs = |r: f64, z: f64, dz: f64| -> (f64, f64) {
            (dz, -(nf - 1.0) / r * dz - (pot(r) - gamma) * z)
        };
        let mut r = r0;
        for _ in 0..steps {
            let (k1z, k1d) = rhs(r, z, dz);
            let (k2z, k2d) = rhs(r + 0.5 * h, z + 0.5 * h * k1z, dz + 0.5 * h * k1d);
            let (k3z, k3d) = rhs(r + 0.5 * h, z + 0.5 * h * k2z, dz + 0.5 * h * k2d);
            let (k4z, k4d) = rhs(r + h, z + h * k3z, dz + h * k3d);
            z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
            dz += h / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);
            r += h;
            // rescale to avoid overflow in the growing regime
            let mag = z.abs().max(dz.abs());
            if mag > 1e200 {
                z /= mag;
                dz /= mag;
            }
        }
        z
    };
    // Sturm oscillation: for γ just below γ₀ the regular solution acquires a
    // node and ends negative at rmax; for γ above γ₀ it stays positive.
    // Bisection on the endpoint sign between those regimes.
    let mut lo = 0.5;
    let mut hi = p * nf * (nf - 2.0);
    assert!(
        endpoint_sign(lo) < 0.0 && endpoint_sign(hi) > 0.0,
        "shooting bracket lost the sign change"
    );
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if endpoint_sign(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
