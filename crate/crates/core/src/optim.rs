//! Box-constrained limited-memory quasi-Newton minimisation.
//!
//! A projected L-BFGS variant: the search direction comes from the two-loop
//! recursion restricted to variables that are not held at a bound, and the
//! line search backtracks along the projected path `P(x + t*d)` until an
//! Armijo decrease is found. Gradients are central finite differences.

/// Options for [`minimize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsbOptions {
    pub max_iterations: usize,
    /// Stop once an iteration improves the objective by less than this
    /// fraction of its current value.
    pub rel_tolerance: f64,
    /// Stop once the projected gradient infinity norm falls below this.
    pub pg_tolerance: f64,
    pub memory: usize,
    pub fd_step: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tolerance: 1e-10,
            pg_tolerance: 1e-14,
            memory: 10,
            fd_step: 1e-6,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    /// Best point seen.
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    pub evaluations: usize,
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central-difference gradient. Near a bound the stencil is truncated to the
/// feasible side, keeping its width.
pub fn central_gradient<F>(f: &mut F, x: &[f64], lo: &[f64], hi: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let mut a = x[j] - h;
        let mut b = x[j] + h;
        if a < lo[j] {
            a = lo[j];
            b = (lo[j] + 2.0 * h).min(hi[j]);
        } else if b > hi[j] {
            b = hi[j];
            a = (hi[j] - 2.0 * h).max(lo[j]);
        }
        probe[j] = b;
        let fb = f(&probe);
        probe[j] = a;
        let fa = f(&probe);
        probe[j] = x[j];
        g[j] = if b > a { (fb - fa) / (b - a) } else { 0.0 };
    }
    g
}

/// Five-point stencil gradient, used to cross-check [`central_gradient`].
pub fn five_point_gradient<F>(f: &mut F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let mut at = |d: f64| {
            probe[j] = x[j] + d;
            let v = f(&probe);
            probe[j] = x[j];
            v
        };
        let (m2, m1, p1, p2) = (at(-2.0 * h), at(-h), at(h), at(2.0 * h));
        g[j] = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
    }
    g
}

fn free_mask(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<bool> {
    (0..x.len()).map(|j| !((x[j] <= lo[j] && g[j] > 0.0) || (x[j] >= hi[j] && g[j] < 0.0))).collect()
}

/// Minimises `f` over the box `[lo, hi]` starting from `x0` (clamped into the
/// box). `f` may return a non-finite value to reject a point.
pub fn minimize<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &LbfgsbOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    let mut fx = eval(&x);
    if !fx.is_finite() {
        return Minimum { x, f: fx, iterations: 0, converged: false, evaluations: 1 };
    }
    let mut g = central_gradient(&mut eval, &x, lo, hi, opts.fd_step);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut best = (x.clone(), fx);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let free = free_mask(&x, &g, lo, hi);
        let pg_inf = (0..n).filter(|&j| free[j]).map(|j| g[j].abs()).fold(0.0, f64::max);
        if pg_inf <= opts.pg_tolerance {
            converged = true;
            break;
        }

        let masked = |v: &[f64]| -> Vec<f64> { v.iter().zip(&free).map(|(a, &m)| if m { *a } else { 0.0 }).collect() };
        let mut q = masked(&g);
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        let mut rho = vec![0.0; m];
        for k in (0..m).rev() {
            let s = masked(&s_hist[k]);
            let y = masked(&y_hist[k]);
            let sy = dot(&s, &y);
            rho[k] = if sy > 0.0 { 1.0 / sy } else { 0.0 };
            alpha[k] = rho[k] * dot(&s, &q);
            for (qi, yi) in q.iter_mut().zip(&y) {
                *qi -= alpha[k] * yi;
            }
        }
        if m > 0 {
            let s = masked(&s_hist[m - 1]);
            let y = masked(&y_hist[m - 1]);
            let yy = dot(&y, &y);
            let gamma = if yy > 0.0 { dot(&s, &y) / yy } else { 1.0 };
            if gamma > 0.0 && gamma.is_finite() {
                q.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for k in 0..m {
            let s = masked(&s_hist[k]);
            let y = masked(&y_hist[k]);
            let beta = rho[k] * dot(&y, &q);
            for (qi, si) in q.iter_mut().zip(&s) {
                *qi += (alpha[k] - beta) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut first_step = 1.0;
        if dot(&d, &g) >= 0.0 || s_hist.is_empty() {
            s_hist.clear();
            y_hist.clear();
            d = masked(&g).iter().map(|v| -v).collect();
            let d_inf = d.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            first_step = if d_inf > 0.0 { (0.1 / d_inf).min(1.0) } else { 1.0 };
        }

        let mut step = first_step;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            clamp_into(&mut xt, lo, hi);
            let moved: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &moved);
            if moved.iter().all(|v| *v == 0.0) {
                break;
            }
            let ft = eval(&xt);
            if ft <= fx + 1e-4 * decrease.min(0.0) && ft < fx {
                accepted = Some((xt, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xt, ft)) = accepted else {
            // No further decrease is achievable at finite-difference resolution.
            converged = true;
            break;
        };

        let gt = central_gradient(&mut eval, &xt, lo, hi, opts.fd_step);
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        let rel_improvement = (fx - ft) / fx.abs().max(f64::MIN_POSITIVE);
        x = xt;
        fx = ft;
        g = gt;
        if fx < best.1 {
            best = (x.clone(), fx);
        }
        if rel_improvement < opts.rel_tolerance {
            converged = true;
            break;
        }
    }

    Minimum { x: best.0, f: best.1, iterations, converged, evaluations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_unconstrained_interior() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = LbfgsbOptions { max_iterations: 500, rel_tolerance: 0.0, pg_tolerance: 1e-9, ..Default::default() };
        let m = minimize(f, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &opts);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn active_bound_is_respected() {
        // Unconstrained minimum at (2, -3); box forces x0 <= 1, x1 >= 0.
        let f = |x: &[f64]| (x[0] - 2.0).powi(2) + (x[1] + 3.0).powi(2) + 0.5 * x[0] * x[1];
        let m = minimize(f, &[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0], &LbfgsbOptions::default());
        assert_eq!(m.x[0], 1.0);
        assert_eq!(m.x[1], 0.0);
    }

    #[test]
    fn non_finite_start_is_reported() {
        let m = minimize(|_| f64::NAN, &[0.0], &[-1.0], &[1.0], &LbfgsbOptions::default());
        assert!(!m.converged);
        assert!(m.f.is_infinite());
    }

    #[test]
    fn gradients_agree_on_smooth_function() {
        let mut f = |x: &[f64]| (x[0] * 3.0).sin() + x[1].exp() * x[0];
        let x = [0.3, -0.2];
        let lo = [-1.0, -1.0];
        let hi = [1.0, 1.0];
        let a = central_gradient(&mut f, &x, &lo, &hi, 1e-6);
        let b = five_point_gradient(&mut f, &x, 1e-3);
        for j in 0..2 {
            assert!((a[j] - b[j]).abs() < 1e-7 * b[j].abs().max(1.0));
        }
    }
}
