//! First-order and quasi-Newton minimizers over flat parameter vectors.

use crate::error::{Error, Result};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub rel_loss_tol: f64,
    pub max_iters: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_evals_per_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            rel_loss_tol: 1e-8,
            max_iters: 500,
            c1: 1e-4,
            c2: 0.9,
            max_evals_per_search: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    RelativeLossChange,
    MaxIterations,
    LineSearchFailed,
    ZeroGradient,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub loss: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    /// Loss after every accepted iteration, starting with the initial loss.
    pub history: Vec<f64>,
    pub stop: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Objective evaluation where solver failures count as +inf so the line
/// search backs off instead of aborting.
fn eval<F>(f: &mut F, x: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    match f(x) {
        Ok((v, g)) if v.is_finite() && g.iter().all(|c| c.is_finite()) => Ok((v, g)),
        Ok((_, g)) => Ok((f64::INFINITY, vec![f64::NAN; g.len()])),
        Err(Error::NonFiniteState { .. }) | Err(Error::NonFiniteGradient { .. }) => {
            Ok((f64::INFINITY, vec![f64::NAN; x.len()]))
        }
        Err(e) => Err(e),
    }
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dphi: f64,
}

/// Minimizer of the cubic through two points with known slopes, or the
/// bisection point when the cubic is unusable.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let bisect = 0.5 * (a + b);
    if !hi.f.is_finite() || !hi.dphi.is_finite() {
        return bisect;
    }
    let d1 = lo.dphi + hi.dphi - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.dphi * hi.dphi;
    if disc < 0.0 {
        return bisect;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let x = b - (b - a) * (hi.dphi + d2 - d1) / (hi.dphi - lo.dphi + 2.0 * d2);
    let (min, max) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (max - min);
    if x.is_finite() && x > min + margin && x < max - margin {
        x
    } else {
        bisect
    }
}

/// Strong-Wolfe line search along `dir`. Returns the accepted point, or
/// `None` when no step with sufficient decrease was found.
fn strong_wolfe<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    dphi0: f64,
    dir: &[f64],
    alpha_init: f64,
    cfg: &LbfgsConfig,
) -> Result<Option<Point>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let probe = |f: &mut F, alpha: f64| -> Result<Point> {
        let xt: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + alpha * di).collect();
        let (v, g) = eval(f, &xt)?;
        let dphi = dot(&g, dir);
        Ok(Point { alpha, f: v, g, dphi })
    };
    let armijo = |p: &Point| p.f.is_finite() && p.f <= f0 + cfg.c1 * p.alpha * dphi0;
    let curvature = |p: &Point| p.dphi.abs() <= -cfg.c2 * dphi0;

    let mut evals = 0;
    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        dphi: dphi0,
    };
    let mut alpha = alpha_init;

    let (mut lo, mut hi) = loop {
        let cur = probe(f, alpha)?;
        evals += 1;
        if !armijo(&cur) || (evals > 1 && cur.f >= prev.f) {
            break (prev, cur);
        }
        if curvature(&cur) {
            return Ok(Some(cur));
        }
        if cur.dphi >= 0.0 {
            break (cur, prev);
        }
        if evals >= cfg.max_evals_per_search {
            return Ok(Some(cur));
        }
        alpha = cur.alpha * 4.0;
        prev = cur;
    };

    loop {
        if evals >= cfg.max_evals_per_search {
            break;
        }
        let a = interpolate(&lo, &hi);
        if (a - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1e-300) {
            break;
        }
        let cur = probe(f, a)?;
        evals += 1;
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok(Some(cur));
            }
            if cur.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = std::mem::replace(&mut lo, cur);
            } else {
                lo = cur;
            }
        }
    }
    // out of evaluations: settle for the best decreasing point, if any
    if lo.alpha > 0.0 && armijo(&lo) {
        return Ok(Some(lo));
    }
    Ok(None)
}

/// Limited-memory BFGS with a strong-Wolfe line search.
///
/// `f` returns loss and gradient. `on_iter(iteration, loss)` is called
/// after every accepted step. Accepted losses never increase.
pub fn lbfgs<F, C>(mut f: F, x0: &[f64], cfg: &LbfgsConfig, mut on_iter: C) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    C: FnMut(usize, f64),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::DivergedFit(format!("initial loss is {fx}")));
    }
    let mut history = vec![fx];
    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(cfg.memory);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(cfg.memory);
    let mut rho_hist: Vec<f64> = Vec::with_capacity(cfg.memory);

    let mut stop = StopReason::MaxIterations;
    let mut iter = 0;
    while iter < cfg.max_iters {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm == 0.0 {
            stop = StopReason::ZeroGradient;
            break;
        }

        // two-loop recursion
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            alphas[i] = rho_hist[i] * dot(&s_hist[i], &q);
            for j in 0..n {
                q[j] -= alphas[i] * y_hist[i][j];
            }
        }
        let gamma = if k > 0 {
            dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1])
        } else {
            1.0
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for i in 0..k {
            let beta = rho_hist[i] * dot(&y_hist[i], &q);
            for j in 0..n {
                q[j] += s_hist[i][j] * (alphas[i] - beta);
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut dphi0 = dot(&g, &dir);
        if !(dphi0 < 0.0) {
            // not a descent direction; restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = g.iter().map(|v| -v).collect();
            dphi0 = -gnorm * gnorm;
        }
        let alpha_init = if s_hist.is_empty() {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };

        let Some(p) = strong_wolfe(&mut f, &x, fx, dphi0, &dir, alpha_init, cfg)? else {
            if s_hist.is_empty() {
                stop = StopReason::LineSearchFailed;
                break;
            }
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            continue;
        };

        let s: Vec<f64> = dir.iter().map(|d| p.alpha * d).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        for j in 0..n {
            x[j] += s[j];
        }
        let f_prev = fx;
        fx = p.f;
        g = p.g;
        iter += 1;
        history.push(fx);
        on_iter(iter, fx);

        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == cfg.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }

        if (f_prev - fx).abs() <= cfg.rel_loss_tol * f_prev.abs().max(f64::MIN_POSITIVE) {
            stop = StopReason::RelativeLossChange;
            break;
        }
    }

    Ok(LbfgsResult {
        x,
        loss: fx,
        grad: g,
        iterations: iter,
        history,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((f, g))
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2), "{p:?}");
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = vec![0.0];
        let mut opt = Adam::new(1, 0.001);
        opt.step(&mut p, &[1234.5]);
        assert!((p[0] + 0.001).abs() < 1e-9);
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let cfg = LbfgsConfig {
            rel_loss_tol: 0.0,
            max_iters: 200,
            ..Default::default()
        };
        let r = lbfgs(rosenbrock, &[-1.2, 1.0], &cfg, |_, _| {}).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r);
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn lbfgs_backs_off_from_non_finite_region() {
        // loss undefined for x > 2; minimum at x = 1.5
        let f = |x: &[f64]| {
            if x[0] > 2.0 {
                Err(Error::NonFiniteState { t: 0.0 })
            } else {
                Ok(((x[0] - 1.5).powi(2), vec![2.0 * (x[0] - 1.5)]))
            }
        };
        let r = lbfgs(f, &[-10.0], &LbfgsConfig::default(), |_, _| {}).unwrap();
        assert!((r.x[0] - 1.5).abs() < 1e-4, "{:?}", r);
    }

    #[test]
    fn lbfgs_stops_on_relative_change() {
        let f = |x: &[f64]| Ok((1.0 + (x[0] - 0.3).powi(4), vec![4.0 * (x[0] - 0.3).powi(3)]));
        let r = lbfgs(f, &[1.0], &LbfgsConfig::default(), |_, _| {}).unwrap();
        assert_eq!(r.stop, StopReason::RelativeLossChange);
        assert!(r.loss < 1.0 + 1e-8);
    }
}
