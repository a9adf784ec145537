//! Closed forms and a numeric oracle for the two-group scalar problem, plus
//! the pairwise loss-gap bound.
//!
//! Two groups with weights `p_i` and targets `x_i` each adapt a scalar
//! `theta` by one gradient step on `(theta - x_i)^2`, so the adapted
//! parameter is `theta - 2 a_i (theta - x_i)` and its residual is
//! `(1 - 2 a_i)(theta - x_i)`. The meta loss is the `p`-weighted sum of the
//! squared adapted residuals.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoGroupSpec {
    pub p1: f64,
    pub p2: f64,
    pub x1: f64,
    pub x2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

/// Sign convention of the inner-step factor in the adaptive closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSign {
    /// `1 - 2a`, from the descent step `theta - a * grad`.
    Descent,
    /// `1 + 2a`, as the factor appears in the original derivation.
    AsWritten,
}

impl TwoGroupSpec {
    /// Both groups share the rate `alpha`.
    pub fn fixed(p1: f64, x1: f64, x2: f64, alpha: f64) -> Result<Self> {
        Self::adaptive(p1, x1, x2, alpha, alpha)
    }

    pub fn adaptive(p1: f64, x1: f64, x2: f64, alpha1: f64, alpha2: f64) -> Result<Self> {
        let s = Self {
            p1,
            p2: 1.0 - p1,
            x1,
            x2,
            alpha1,
            alpha2,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.p1, self.p2, self.x1, self.x2, self.alpha1, self.alpha2]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::RejectedInput("two-group spec has non-finite fields".into()));
        }
        if !(self.p2 > 0.0 && self.p1 >= self.p2 && (self.p1 + self.p2 - 1.0).abs() < 1e-12) {
            return Err(Error::RejectedInput(format!(
                "group probabilities ({}, {}) must satisfy p1 >= p2 > 0 and sum to 1",
                self.p1, self.p2
            )));
        }
        Ok(())
    }

    /// The same spec with both groups at the rate of group 1.
    pub fn with_shared_rate(&self) -> Self {
        Self {
            alpha2: self.alpha1,
            ..*self
        }
    }

    /// Meta loss at `theta`, evaluated from the adapted parameters.
    pub fn loss(&self, theta: f64) -> f64 {
        let (l1, l2) = self.group_losses(theta);
        self.p1 * l1 + self.p2 * l2
    }

    /// Squared adapted residual of each group at `theta`.
    pub fn group_losses(&self, theta: f64) -> (f64, f64) {
        let adapted = |x: f64, a: f64| theta - a * 2.0 * (theta - x);
        ((adapted(self.x1, self.alpha1) - self.x1).powi(2), (adapted(self.x2, self.alpha2) - self.x2).powi(2))
    }

    fn loss_derivative(&self, theta: f64) -> f64 {
        let term = |p: f64, x: f64, a: f64| {
            let c = 1.0 - 2.0 * a;
            2.0 * p * c * (theta - 2.0 * a * (theta - x) - x)
        };
        term(self.p1, self.x1, self.alpha1) + term(self.p2, self.x2, self.alpha2)
    }
}

/// `(x2 p2 + x1 p1) / (p2 + p1)`
pub fn theta_star_fixed(spec: &TwoGroupSpec) -> f64 {
    (spec.x2 * spec.p2 + spec.x1 * spec.p1) / (spec.p2 + spec.p1)
}

/// Minimizer of the meta loss with per-group rates. Under
/// [`InnerSign::AsWritten`] the value is not the minimizer of the descent
/// loss unless the rates are equal.
pub fn theta_star_adaptive(spec: &TwoGroupSpec, sign: InnerSign) -> f64 {
    let factor = |a: f64| match sign {
        InnerSign::Descent => 1.0 - 2.0 * a,
        InnerSign::AsWritten => 2.0 * a + 1.0,
    };
    let w1 = factor(spec.alpha1).powi(2) * spec.p1;
    let w2 = factor(spec.alpha2).powi(2) * spec.p2;
    (w1 * spec.x1 + w2 * spec.x2) / (w1 + w2)
}

/// Rate for group 2 that equalizes the two groups' weights in the
/// as-written closed form: `((2 a1 + 1) sqrt(p1 / p2) - 1) / 2`.
pub fn alpha2_equalizing(alpha1: f64, p1: f64, p2: f64) -> Result<f64> {
    if !(p1 > 0.0 && p2 > 0.0) {
        return Err(Error::RejectedInput(format!("probabilities ({p1}, {p2}) must be positive")));
    }
    Ok(((2.0 * alpha1 + 1.0) * (p1 / p2).sqrt() - 1.0) / 2.0)
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Minimizer of the meta loss by golden-section search, refined by
/// bisection on the sign of the derivative.
pub fn numeric_minimizer(spec: &TwoGroupSpec) -> f64 {
    let span = (spec.x2 - spec.x1).abs().max(1.0);
    let (mut lo, mut hi) = (spec.x1.min(spec.x2) - span, spec.x1.max(spec.x2) + span);
    let f = |t: f64| spec.loss(t);
    let mut a = hi - GOLDEN * (hi - lo);
    let mut b = lo + GOLDEN * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-4 * span {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - GOLDEN * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + GOLDEN * (hi - lo);
            fb = f(b);
        }
    }
    let (mut lo, mut hi) = (lo - 1e-4 * span, hi + 1e-4 * span);
    if spec.loss_derivative(lo) >= 0.0 || spec.loss_derivative(hi) <= 0.0 {
        return 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if spec.loss_derivative(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub spec: TwoGroupSpec,
    /// Minimizer with both groups at `alpha1`.
    pub theta_star: f64,
    /// Minimizer with the per-group rates.
    pub theta_star_prime: f64,
    /// Closed forms, for comparison with the numeric minimizers.
    pub theta_star_closed: f64,
    pub theta_star_prime_closed: f64,
    /// Adapted group losses at `theta_star` (shared rate).
    pub group_losses: (f64, f64),
    /// Adapted group losses at `theta_star_prime` (per-group rates).
    pub group_losses_prime: (f64, f64),
    pub l_star: f64,
    pub l_star_prime: f64,
    /// The major group's adapted loss does not exceed the minor group's.
    pub lemma1_holds: bool,
    /// The minor group's adapted loss does not grow under per-group rates.
    pub lemma2_minor_holds: bool,
    /// The optimal loss does not grow under per-group rates.
    pub lemma2_total_holds: bool,
}

impl LemmaReport {
    pub fn lemma2_holds(&self) -> bool {
        self.lemma2_minor_holds && self.lemma2_total_holds
    }
}

/// Inequality slack used by the verdicts.
pub const LEMMA_TOL: f64 = 1e-10;

/// Compares the shared-rate optimum (both groups at `alpha1`) with the
/// per-group optimum, all values from the numeric minimizer.
pub fn verify_lemmas(spec: &TwoGroupSpec) -> Result<LemmaReport> {
    spec.validate()?;
    let shared = spec.with_shared_rate();
    let theta_star = numeric_minimizer(&shared);
    let theta_star_prime = numeric_minimizer(spec);
    let group_losses = shared.group_losses(theta_star);
    let group_losses_prime = spec.group_losses(theta_star_prime);
    let l_star = shared.loss(theta_star);
    let l_star_prime = spec.loss(theta_star_prime);
    Ok(LemmaReport {
        spec: *spec,
        theta_star,
        theta_star_prime,
        theta_star_closed: theta_star_fixed(&shared),
        theta_star_prime_closed: theta_star_adaptive(spec, InnerSign::Descent),
        group_losses,
        group_losses_prime,
        l_star,
        l_star_prime,
        lemma1_holds: group_losses.0 <= group_losses.1 + LEMMA_TOL,
        lemma2_minor_holds: group_losses_prime.1 <= group_losses.1 + LEMMA_TOL,
        lemma2_total_holds: l_star_prime <= l_star + LEMMA_TOL,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// `sum_{i>j} |L_i - L_j|`
    pub lhs: f64,
    /// `sum_i (n-1) |g_i|^2 |a_i| + n (n-1) max_i |h_i|`
    pub first_order_rhs: f64,
    pub pairs: usize,
    /// Pairs where `|g_i^2 a_i - g_j^2 a_j| > g_i^2 |a_i| + g_j^2 |a_j|`.
    pub violations: usize,
    pub holds_first_order: bool,
}

/// Pairwise loss gaps against the first-order bound. `grad_norms` are
/// `|grad L_i|`, `embeddings` the user embeddings.
pub fn bound_check(losses: &[f64], grad_norms: &[f64], alphas: &[f64], embeddings: &[Vec<f64>]) -> Result<BoundReport> {
    let n = losses.len();
    if grad_norms.len() != n || alphas.len() != n || embeddings.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "bound check inputs of lengths {n}, {}, {}, {}",
            grad_norms.len(),
            alphas.len(),
            embeddings.len()
        )));
    }
    let mut lhs = 0.0;
    let mut violations = 0;
    let mut pairs = 0;
    for i in 0..n {
        for j in 0..i {
            pairs += 1;
            lhs += (losses[i] - losses[j]).abs();
            let ti = grad_norms[i].powi(2) * alphas[i];
            let tj = grad_norms[j].powi(2) * alphas[j];
            if (ti - tj).abs() > ti.abs() + tj.abs() {
                violations += 1;
            }
        }
    }
    let m = n.saturating_sub(1) as f64;
    let max_h = embeddings
        .iter()
        .map(|h| h.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let first_order_rhs = (0..n).map(|i| m * grad_norms[i].powi(2) * alphas[i].abs()).sum::<f64>() + n as f64 * m * max_h;
    Ok(BoundReport {
        lhs,
        first_order_rhs,
        pairs,
        violations,
        holds_first_order: violations == 0,
    })
}
