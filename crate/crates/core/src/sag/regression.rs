//! Least-squares line fit and one-dimensional logistic regression.

/// Ridge on the logistic slope; small windows are often separable.
const RIDGE: f64 = 1e-6;
const MAX_SLOPE: f64 = 50.0;
const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;

/// Ordinary least squares `y ~ slope * x + intercept`.
///
/// Returns a zero slope (and the mean as intercept) when there are fewer than
/// two points or all `x` coincide.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    if n < 2 || sxx == 0.0 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `P(failure | u) = sigmoid(w * u + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticFit {
    pub w: f64,
    pub b: f64,
}

impl LogisticFit {
    pub fn constant(p: f64) -> Self {
        let p = p.clamp(0.01, 0.99);
        Self {
            w: 0.0,
            b: (p / (1.0 - p)).ln(),
        }
    }

    pub fn prob(&self, u: f64) -> f64 {
        sigmoid(self.w * u + self.b)
    }
}

// log(1 + exp(z)) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn objective(u: &[f64], y: &[bool], w: f64, b: f64) -> f64 {
    let nll: f64 = u
        .iter()
        .zip(y)
        .map(|(&ui, &yi)| {
            let z = w * ui + b;
            if yi {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum();
    nll + 0.5 * RIDGE * w * w
}

fn gradient_hessian(u: &[f64], y: &[bool], w: f64, b: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut g = [RIDGE * w, 0.0];
    let mut h = [[RIDGE, 0.0], [0.0, 0.0]];
    for (&ui, &yi) in u.iter().zip(y) {
        let p = sigmoid(w * ui + b);
        let e = p - if yi { 1.0 } else { 0.0 };
        g[0] += e * ui;
        g[1] += e;
        let s = p * (1.0 - p);
        h[0][0] += s * ui * ui;
        h[0][1] += s * ui;
        h[1][1] += s;
    }
    h[1][0] = h[0][1];
    (g, h)
}

/// Maximum-likelihood logistic regression of failure on uncertainty.
///
/// `failures[i]` is true when decision `i` was a novice failure. Damped Newton
/// with a tiny ridge on the slope; single-class data falls back to a constant
/// model at the class frequency, and the slope is capped at `|w| <= 50`.
pub fn fit_logistic(u: &[f64], failures: &[bool]) -> LogisticFit {
    debug_assert_eq!(u.len(), failures.len());
    let n = u.len();
    let n_fail = failures.iter().filter(|&&f| f).count();
    if n == 0 {
        return LogisticFit::constant(0.5);
    }
    if n_fail == 0 || n_fail == n {
        return LogisticFit::constant(n_fail as f64 / n as f64);
    }

    let mut w = 0.0;
    let mut b = {
        let p = n_fail as f64 / n as f64;
        (p / (1.0 - p)).ln()
    };
    let mut f = objective(u, failures, w, b);
    for _ in 0..MAX_ITER {
        let (g, h) = gradient_hessian(u, failures, w, b);
        if g[0].hypot(g[1]) <= GRAD_TOL {
            break;
        }
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let (dw, db) = if det.abs() > 1e-300 {
            (
                -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
                -(-h[1][0] * g[0] + h[0][0] * g[1]) / det,
            )
        } else {
            (-g[0], -g[1])
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (nw, nb) = (w + step * dw, b + step * db);
            let nf = objective(u, failures, nw, nb);
            if nf <= f {
                w = nw;
                b = nb;
                f = nf;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        if w.abs() > MAX_SLOPE {
            w = MAX_SLOPE.copysign(w);
            b = refit_intercept(u, failures, w, b);
            break;
        }
    }
    LogisticFit { w, b }
}

// One-dimensional Newton on the intercept with the slope held fixed.
fn refit_intercept(u: &[f64], y: &[bool], w: f64, mut b: f64) -> f64 {
    for _ in 0..MAX_ITER {
        let mut g = 0.0;
        let mut h = 0.0;
        for (&ui, &yi) in u.iter().zip(y) {
            let p = sigmoid(w * ui + b);
            g += p - if yi { 1.0 } else { 0.0 };
            h += p * (1.0 - p);
        }
        if g.abs() <= GRAD_TOL || h <= 1e-300 {
            break;
        }
        let step = (g / h).clamp(-10.0, 10.0);
        b -= step;
    }
    b
}
