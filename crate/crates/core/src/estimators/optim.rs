//! Quasi-Newton (BFGS) minimization with Armijo backtracking.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when `max_i |g_i| · max(1, |x_i|) ≤ gtol · max(1, |f|)`.
    pub gtol: f64,
    /// Stop when an accepted step lowers `f` by less than `ftol · max(1, |f|)`
    /// three times in a row.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            gtol: 1e-9,
            ftol: 1e-15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn scaled_grad_norm(x: &DVector<f64>, g: &DVector<f64>, f: f64) -> f64 {
    x.iter()
        .zip(g.iter())
        .map(|(xi, gi)| gi.abs() * xi.abs().max(1.0))
        .fold(0.0, f64::max)
        / f.abs().max(1.0)
}

/// Minimizes `fg`, which returns the value and gradient; non-finite values
/// are treated as `+∞` by the line search. The returned `f` never exceeds
/// the value at `x0`.
pub fn minimize<F>(mut fg: F, x0: DVector<f64>, opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = fg(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return BfgsResult {
            x,
            f,
            grad: g,
            iterations: 0,
            converged: false,
        };
    }
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut small_steps = 0;
    for iter in 0..opts.max_iter {
        if scaled_grad_norm(&x, &g, f) <= opts.gtol {
            return BfgsResult {
                x,
                f,
                grad: g,
                iterations: iter,
                converged: true,
            };
        }
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            d = -g.clone();
            slope = g.dot(&d);
            first = true;
        }
        if first {
            // keep the first trial step modest in parameter space
            let dmax = d.camax();
            if dmax > 0.1 {
                d *= 0.1 / dmax;
                slope = g.dot(&d);
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &d * step;
            let (fnew, gnew) = fg(&xn);
            if fnew.is_finite() && gnew.iter().all(|v| v.is_finite()) && fnew <= f + 1e-4 * step * slope {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            // no descent possible along a descent direction: at numerical optimum
            let converged = scaled_grad_norm(&x, &g, f) <= opts.gtol.sqrt();
            return BfgsResult {
                x,
                f,
                grad: g,
                iterations: iter,
                converged,
            };
        };
        let s = &xn - &x;
        let y = &gnew - &g;
        let sy = s.dot(&y);
        let decrease = f - fnew;
        x = xn;
        f = fnew;
        g = gnew;
        if decrease <= opts.ftol * f.abs().max(1.0) {
            small_steps += 1;
            if small_steps >= 3 {
                return BfgsResult {
                    x,
                    f,
                    grad: g,
                    iterations: iter + 1,
                    converged: true,
                };
            }
        } else {
            small_steps = 0;
        }
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H⁺ = H + ((sᵀy + yᵀHy)/(sᵀy)²) ssᵀ − (Hy sᵀ + s yᵀH)/(sᵀy)
            h += (&s * s.transpose()) * ((sy + yhy) * rho * rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
    }
    let converged = scaled_grad_norm(&x, &g, f) <= opts.gtol;
    BfgsResult {
        x,
        f,
        grad: g,
        iterations: opts.max_iter,
        converged,
    }
}
