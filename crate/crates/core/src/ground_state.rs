//! Minimisation of the scale-free quotient `Q(u) = A(u) / B(u)^{1/p}`.
//!
//! The infimum over the whole space is `S_{H,L}`; on the box it is not
//! attained, so the discrete minimiser concentrates as far as the grid
//! allows and `q_min` approaches `S_{H,L}` from above.

use crate::error::{Error, Result};
use crate::evolution::nonlinear_parts;
use crate::functionals::{Exponents, Problem};
use crate::grid::{dst_forward, dst_inverse, spectral_grad_norm_sq, Field};
use crate::riesz::RieszKernel;

/// Line-search halvings allowed before the descent is declared stalled.
pub const MAX_BACKTRACKS: usize = 30;

pub fn quotient(u: &Field, kernel: &RieszKernel, exps: &Exponents) -> Result<f64> {
    Ok(Evaluated::new(u.clone(), kernel, exps)?.q)
}

#[derive(Debug, Clone)]
pub struct QuotientResult {
    pub q_min: f64,
    pub minimizer: Field,
    pub m_est: f64,
    pub iterations: usize,
    /// `L^2` norm of the last preconditioned descent direction, with the
    /// iterate normalised to `||u||_2 = 1`.
    pub grad_norm_final: f64,
    /// Accepted quotient values, starting with `Q(u_init)`.
    pub q_log: Vec<f64>,
    /// The line search failed `MAX_BACKTRACKS` times in a row.
    pub stalled: bool,
}

struct Evaluated {
    u: Field,
    a: f64,
    b: f64,
    q: f64,
    f: Field,
}

impl Evaluated {
    fn new(u: Field, kernel: &RieszKernel, exps: &Exponents) -> Result<Self> {
        if u.max_abs() == 0.0 {
            return Err(Error::ZeroField);
        }
        let a = spectral_grad_norm_sq(&dst_forward(&u));
        let (f, b) = nonlinear_parts(&u, kernel, exps);
        if !(b > 0.0) {
            return Err(Error::ZeroField);
        }
        let q = a / b.powf(exps.quotient_power());
        Ok(Self { u, a, b, q, f })
    }
}

/// Preconditioned descent direction `-(u - (A/B) (-Δ)^{-1} f(u))`.
fn direction(cur: &Evaluated) -> Field {
    let inv = dst_inverse(&dst_forward(&cur.f).map_eigen(|l| 1.0 / l));
    let mut d = inv.scaled(cur.a / cur.b);
    d.axpy(-1.0, &cur.u);
    d
}

fn normalized(u: &Field) -> Field {
    u.scaled(1.0 / u.norm(2.0))
}

pub fn minimize_quotient(
    u_init: &Field,
    max_iter: usize,
    tol: f64,
    problem: &Problem,
) -> Result<QuotientResult> {
    if !u_init.domain().same_grid(problem.domain()) {
        return Err(Error::DomainMismatch);
    }
    if u_init.max_abs() == 0.0 {
        return Err(Error::ZeroField);
    }
    let (kernel, exps) = (problem.kernel(), problem.exps());
    let mut cur = Evaluated::new(normalized(u_init), kernel, exps)?;
    let mut q_log = vec![cur.q];
    let mut alpha = 1.0;
    let mut stalled = false;
    let mut iterations = 0;
    let mut d = direction(&cur);

    while iterations < max_iter {
        iterations += 1;
        let mut next = None;
        let mut trial_alpha = alpha;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = cur.u.clone();
            trial.axpy(trial_alpha, &d);
            if let Ok(ev) = Evaluated::new(normalized(&trial), kernel, exps) {
                if ev.q < cur.q {
                    next = Some(ev);
                    break;
                }
            }
            trial_alpha *= 0.5;
        }
        let Some(ev) = next else {
            stalled = true;
            break;
        };
        let decrease = (cur.q - ev.q) / cur.q;
        alpha = (2.0 * trial_alpha).min(1.0);
        cur = ev;
        q_log.push(cur.q);
        d = direction(&cur);
        if decrease < tol {
            break;
        }
    }

    Ok(QuotientResult {
        q_min: cur.q,
        m_est: exps.level_from_quotient(cur.q),
        grad_norm_final: d.norm(2.0),
        minimizer: cur.u,
        iterations,
        q_log,
        stalled,
    })
}
