//! Time integration of `u_t = Δu + f(u)` with the linear part treated exactly.
//!
//! The sine basis diagonalises the heat semigroup, so `e^{tΔ}` is a
//! coefficient-wise multiplication. One step of size `dt` is the
//! predictor-corrector pair
//!
//! ```text
//! ũ       = e^{dtΔ}(u + dt f(u))
//! u_{n+1} = e^{dtΔ}(u + dt/2 f(u)) + dt/2 f(ũ)
//! ```
//!
//! i.e. the Duhamel integral with the left-point and trapezoidal rules. The
//! step-size controller compares `u_{n+1}` with the first-order solution
//! `(1 - dtΔ)^{-1}(u + dt f(u))`, so both the nonlinear and the linear
//! dynamics have to be resolved to the tolerance.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::functionals::{abs_pow, report_from_parts, EnergyReport, Exponents, Problem, WellClass};
use crate::grid::{dst_forward, dst_inverse, spectral_grad_norm_sq, BoxDomain, Field, SpectralField};
use crate::riesz::{riesz_apply, RieszKernel};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub safety: f64,
    pub t_end: f64,
    pub blowup_factor: f64,
    pub record_every: usize,
    pub nonlinearity_on: bool,
    pub tol_step: f64,
    /// Hard cap on attempted steps; reaching it ends the run with
    /// [`RunVerdict::StepLimit`].
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt_init: 1e-4,
            dt_min: 1e-80,
            dt_max: 1e-3,
            safety: 0.9,
            t_end: 0.5,
            blowup_factor: 1e6,
            record_every: 5,
            nonlinearity_on: true,
            tol_step: 1e-5,
            max_steps: 2_000_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return bad(format!(
                "need 0 < dt_min <= dt_init <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            ));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return bad(format!("safety must lie in (0, 1), got {}", self.safety));
        }
        if !(self.t_end > 0.0) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if !(self.blowup_factor > 1.0) {
            return bad(format!(
                "blowup_factor must exceed 1, got {}",
                self.blowup_factor
            ));
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        if !(self.tol_step > 0.0) {
            return bad(format!("tol_step must be positive, got {}", self.tol_step));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub j: f64,
    pub i: f64,
    pub l2: f64,
    pub linf: f64,
    pub dt: f64,
    pub dissipation: f64,
    pub klass: WellClass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunVerdict {
    HorizonReached,
    BlowUp { t_est: f64 },
    StepLimit { t: f64 },
}

/// First record at which the trajectory sits in one of the wells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WellEntry {
    EnteredW { t0: f64 },
    EnteredV { t0: f64 },
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub verdict: RunVerdict,
    pub entry: Option<WellEntry>,
    pub records: Vec<TrajectoryRecord>,
    /// Last accepted state; at blow-up this is the snapshot that triggered it.
    pub final_field: Field,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl RunOutcome {
    pub fn is_blow_up(&self) -> bool {
        matches!(self.verdict, RunVerdict::BlowUp { .. })
    }
}

/// Coefficient-wise `e^{-lambda_k t}`.
pub fn semigroup_apply(uh: &SpectralField, t: f64) -> SpectralField {
    assert!(t >= 0.0, "semigroup time must be nonnegative, got {t}");
    uh.map_eigen(|l| (-l * t).exp())
}

/// `f(u)` together with `B(u)`, which falls out of the same convolution.
pub(crate) fn nonlinear_parts(u: &Field, kernel: &RieszKernel, exps: &Exponents) -> (Field, f64) {
    let weight: Vec<f64> = u.values().iter().map(|&v| abs_pow(v, exps.p - 2.0)).collect();
    let density = Field::from_values(
        *u.domain(),
        weight.iter().zip(u.values()).map(|(w, v)| w * v * v).collect(),
    )
    .expect("same grid");
    let phi = riesz_apply(kernel, &density);
    let b = density.dot(&phi).max(0.0);
    let values = u
        .values()
        .iter()
        .zip(&weight)
        .zip(phi.values())
        .map(|((&v, &w), &ph)| ph * w * v)
        .collect();
    (Field::from_values(*u.domain(), values).expect("same grid"), b)
}

/// `f(u) = Phi |u|^{p-2} u` with `Phi = riesz_apply(|u|^p)`.
pub fn nonlinear_term(u: &Field, kernel: &RieszKernel, exps: &Exponents) -> Field {
    nonlinear_parts(u, kernel, exps).0
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub field: Field,
    pub coeffs: SpectralField,
    pub predictor: Field,
    /// `||ū - u_{n+1}||_2 / (1 + ||u_{n+1}||_2)` with `ū` the first-order
    /// companion solution.
    pub error_estimate: f64,
}

/// The nonlinear term overflowed (non-finite values); the caller treats this
/// as blow-up or retries with a smaller step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overflow;

/// An accepted state with everything the next step reuses.
struct State {
    u: Field,
    uh: SpectralField,
    /// Transformed nonlinearity, `None` when the nonlinearity is off.
    fh: Option<SpectralField>,
    b: Option<f64>,
}

impl State {
    fn new(u: Field, uh: SpectralField, cfg: &SolverConfig, problem: &Problem) -> std::result::Result<Self, Overflow> {
        if !cfg.nonlinearity_on {
            return Ok(Self { u, uh, fh: None, b: None });
        }
        let (f, b) = nonlinear_parts(&u, problem.kernel(), problem.exps());
        if !f.is_finite() || !b.is_finite() {
            return Err(Overflow);
        }
        Ok(Self { fh: Some(dst_forward(&f)), u, uh, b: Some(b) })
    }
}

fn step_from(state: &State, dt: f64, problem: &Problem) -> std::result::Result<StepResult, Overflow> {
    let decay: Vec<f64> = problem
        .domain()
        .eigenvalues()
        .iter()
        .map(|l| (-l * dt).exp())
        .collect();
    let Some(f0h) = state.fh.as_ref() else {
        let coeffs = propagate(&state.uh, None, 0.0, &decay, None);
        let field = dst_inverse(&coeffs);
        return Ok(StepResult {
            predictor: field.clone(),
            field,
            coeffs,
            error_estimate: 0.0,
        });
    };
    let pred_h = propagate(&state.uh, Some(f0h), dt, &decay, None);
    let predictor = dst_inverse(&pred_h);
    let f1 = nonlinear_term(&predictor, problem.kernel(), problem.exps());
    if !f1.is_finite() {
        return Err(Overflow);
    }
    let f1h = dst_forward(&f1);
    let corr_h = propagate(&state.uh, Some(f0h), 0.5 * dt, &decay, Some((&f1h, 0.5 * dt)));
    let field = dst_inverse(&corr_h);
    if !field.is_finite() {
        return Err(Overflow);
    }
    let mut diff = embedded(&state.uh, f0h, dt, problem);
    diff.axpy(-1.0, &corr_h);
    let err = diff.l2_norm_sq().sqrt() / (1.0 + corr_h.l2_norm_sq().sqrt());
    Ok(StepResult {
        field,
        coeffs: corr_h,
        predictor,
        error_estimate: err,
    })
}

/// First-order companion `(1 + dt A)^{-1}(u + dt f(u))`, linearly implicit in
/// the Laplacian. Comparing against it makes the controller resolve the
/// linear decay as well, which the exponential predictor alone cannot see.
fn embedded(uh: &SpectralField, f0h: &SpectralField, dt: f64, problem: &Problem) -> SpectralField {
    let mut out = uh.clone();
    out.axpy(dt, f0h);
    for (c, l) in out.coeffs_mut().iter_mut().zip(problem.domain().eigenvalues()) {
        *c /= 1.0 + l * dt;
    }
    out
}

/// One predictor-corrector step of size `dt` from `u`.
pub fn step(
    u: &Field,
    dt: f64,
    cfg: &SolverConfig,
    problem: &Problem,
) -> std::result::Result<StepResult, Overflow> {
    assert!(dt > 0.0, "step size must be positive, got {dt}");
    let state = State::new(u.clone(), dst_forward(u), cfg, problem)?;
    step_from(&state, dt, problem)
}

/// `decay * (uh + w0 f0h) + w1 f1h`.
fn propagate(
    uh: &SpectralField,
    f0h: Option<&SpectralField>,
    w0: f64,
    decay: &[f64],
    f1: Option<(&SpectralField, f64)>,
) -> SpectralField {
    let mut out = uh.clone();
    if let Some(f0h) = f0h {
        out.axpy(w0, f0h);
    }
    for (c, e) in out.coeffs_mut().iter_mut().zip(decay) {
        *c *= e;
    }
    if let Some((f1h, w1)) = f1 {
        out.axpy(w1, f1h);
    }
    out
}

fn record_state(t: f64, dt: f64, dissipation: f64, state: &State, problem: &Problem) -> TrajectoryRecord {
    let u = &state.u;
    let a = spectral_grad_norm_sq(&state.uh);
    let b = state.b.unwrap_or_else(|| problem.b(u));
    let linf = u.max_abs();
    let rep: EnergyReport =
        report_from_parts(a, b, linf, u.domain(), problem.exps(), problem.consts());
    TrajectoryRecord {
        t,
        a: rep.a,
        b: rep.b,
        j: rep.j,
        i: rep.i,
        l2: state.uh.l2_norm_sq().sqrt(),
        linf,
        dt,
        dissipation,
        klass: rep.klass,
    }
}

fn entry_of(rec: &TrajectoryRecord, first: bool, u0_is_zero: bool) -> Option<WellEntry> {
    match rec.klass {
        WellClass::InW => Some(WellEntry::EnteredW { t0: rec.t }),
        WellClass::Zero if !first || u0_is_zero => Some(WellEntry::EnteredW { t0: rec.t }),
        WellClass::InV => Some(WellEntry::EnteredV { t0: rec.t }),
        _ => None,
    }
}

/// Extrapolates the remaining time to blow-up from the geometric decay of
/// the last accepted step sizes.
fn blow_up_time(t: f64, dts: &[f64]) -> f64 {
    let n = dts.len();
    if n < 2 {
        return t;
    }
    let k = n.min(6);
    let tail = &dts[n - k..];
    let ratio = (tail[k - 1] / tail[0]).powf(1.0 / (k - 1) as f64);
    let last = tail[k - 1];
    if ratio < 1.0 {
        t + last * ratio / (1.0 - ratio)
    } else {
        t + last
    }
}

/// Adaptive integration from `u0` until `t_end` or blow-up.
pub fn integrate(u0: &Field, cfg: &SolverConfig, problem: &Problem) -> Result<RunOutcome> {
    cfg.validate()?;
    if !u0.domain().same_grid(problem.domain()) {
        return Err(Error::DomainMismatch);
    }
    let linf0 = u0.max_abs();
    let u0_is_zero = linf0 == 0.0;
    let Ok(mut state) = State::new(u0.clone(), dst_forward(u0), cfg, problem) else {
        return Err(Error::InvalidArgument(
            "initial data overflows the nonlinearity".into(),
        ));
    };
    let mut t = 0.0;
    let mut dt = cfg.dt_init;
    let mut dissipation = 0.0;

    let mut records = vec![record_state(0.0, 0.0, 0.0, &state, problem)];
    let mut entry = entry_of(&records[0], true, u0_is_zero);
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut linf_hist: Vec<f64> = vec![linf0];
    let mut dt_hist: Vec<f64> = Vec::new();
    let mut verdict = RunVerdict::HorizonReached;

    let horizon_eps = 1e-12 * cfg.t_end;
    while t < cfg.t_end - horizon_eps {
        if accepted + rejected >= cfg.max_steps {
            verdict = RunVerdict::StepLimit { t };
            break;
        }
        let dt_try = dt.min(cfg.t_end - t).max(cfg.dt_min.min(cfg.t_end - t));
        let at_floor = dt_try <= cfg.dt_min;
        let res = match step_from(&state, dt_try, problem) {
            Ok(r) => r,
            Err(Overflow) => {
                if at_floor {
                    verdict = RunVerdict::BlowUp {
                        t_est: blow_up_time(t, &dt_hist),
                    };
                    break;
                }
                rejected += 1;
                dt = (0.25 * dt_try).max(cfg.dt_min);
                continue;
            }
        };
        let err = res.error_estimate;
        if err <= cfg.tol_step || at_floor {
            let incr: f64 = res
                .field
                .values()
                .iter()
                .zip(state.u.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dissipation += incr * problem.domain().cell_volume() / dt_try;
            t += dt_try;
            accepted += 1;
            dt_hist.push(dt_try);
            let linf = res.field.max_abs();
            linf_hist.push(linf);
            let next = State::new(res.field, res.coeffs, cfg, problem);
            let overflowed = next.is_err();
            if let Ok(next) = next {
                state = next;
            }

            let grew = linf_hist.len() > 10
                && linf_hist[linf_hist.len() - 11..]
                    .windows(2)
                    .all(|w| w[1] > w[0]);
            let blown = overflowed || linf > cfg.blowup_factor * linf0 || (at_floor && grew);
            let horizon = t >= cfg.t_end - horizon_eps;
            if !overflowed && (blown || horizon || accepted % cfg.record_every == 0) {
                let rec = record_state(t, dt_try, dissipation, &state, problem);
                if entry.is_none() {
                    entry = entry_of(&rec, false, u0_is_zero);
                }
                records.push(rec);
            }
            if blown {
                verdict = RunVerdict::BlowUp {
                    t_est: blow_up_time(t, &dt_hist),
                };
                break;
            }
        } else {
            rejected += 1;
        }
        let factor = if err > 0.0 {
            (cfg.safety * (cfg.tol_step / err).sqrt()).clamp(0.2, 2.0)
        } else {
            2.0
        };
        dt = (dt_try * factor).clamp(cfg.dt_min, cfg.dt_max);
    }

    Ok(RunOutcome {
        verdict,
        entry,
        records,
        final_field: state.u,
        accepted_steps: accepted,
        rejected_steps: rejected,
    })
}

#[derive(Debug, Clone)]
pub struct PicardReport {
    pub field: Field,
    pub iterations: usize,
    /// Sup over time nodes of the relative `L^2` change, one per iteration.
    pub changes: Vec<f64>,
}

impl PicardReport {
    /// Ratios of successive changes; below one when the map contracts.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.changes
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

/// Fixed-point iteration on the mild formulation
/// `u(t_i) = e^{t_iΔ}u0 + sum_j w_j e^{(t_i - t_j)Δ} f(u(t_j))` with
/// trapezoidal weights on `n_time + 1` equispaced nodes of `[0, T]`.
pub fn picard_mild_solve(
    u0: &Field,
    horizon: f64,
    n_time: usize,
    tol: f64,
    max_iter: usize,
    problem: &Problem,
    nonlinearity_on: bool,
) -> Result<PicardReport> {
    if !(horizon > 0.0) || n_time == 0 || max_iter == 0 {
        return Err(Error::InvalidArgument(format!(
            "need T > 0, n_time >= 1 and max_iter >= 1, got {horizon}, {n_time}, {max_iter}"
        )));
    }
    let domain = *u0.domain();
    let dt = horizon / n_time as f64;
    let lam = domain.eigenvalues();
    let step_decay: Vec<f64> = lam.iter().map(|l| (-l * dt).exp()).collect();
    let u0h = dst_forward(u0);

    let mut linear = Vec::with_capacity(n_time + 1);
    let mut cur = u0h.clone();
    for i in 0..=n_time {
        if i > 0 {
            cur = scale_by(&cur, &step_decay);
        }
        linear.push(cur.clone());
    }
    let mut iterate: Vec<SpectralField> = linear.clone();
    let mut changes = Vec::new();

    for it in 1..=max_iter {
        let forcing: Vec<SpectralField> = if nonlinearity_on {
            iterate
                .iter()
                .map(|uh| {
                    let u = dst_inverse(uh);
                    dst_forward(&nonlinear_term(&u, problem.kernel(), problem.exps()))
                })
                .collect()
        } else {
            vec![SpectralField::zeros(domain); n_time + 1]
        };
        if forcing.iter().any(|f| f.coeffs().iter().any(|c| !c.is_finite())) {
            return Err(Error::NonConvergence {
                iterations: it,
                last_change: f64::INFINITY,
            });
        }
        let mut next = Vec::with_capacity(n_time + 1);
        let mut acc = forcing[0].scaled(0.5 * dt);
        next.push(linear[0].clone());
        for i in 1..=n_time {
            acc = scale_by(&acc, &step_decay);
            acc.axpy(dt, &forcing[i]);
            let mut ui = linear[i].clone();
            ui.axpy(1.0, &acc);
            ui.axpy(-0.5 * dt, &forcing[i]);
            next.push(ui);
        }
        let mut change = 0.0f64;
        for (a, b) in next.iter().zip(&iterate) {
            let mut d = a.clone();
            d.axpy(-1.0, b);
            let denom = a.l2_norm_sq().sqrt().max(f64::MIN_POSITIVE);
            change = change.max(d.l2_norm_sq().sqrt() / denom);
        }
        changes.push(change);
        iterate = next;
        if change < tol {
            return Ok(PicardReport {
                field: dst_inverse(&iterate[n_time]),
                iterations: it,
                changes,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        last_change: *changes.last().unwrap_or(&f64::INFINITY),
    })
}

fn scale_by(uh: &SpectralField, factors: &[f64]) -> SpectralField {
    let mut out = uh.clone();
    for (c, f) in out.coeffs_mut().iter_mut().zip(factors) {
        *c *= f;
    }
    out
}

/// `max_r |dissipation_r + J(t_r) - J(0)| / max(1, |J(0)|)`.
pub fn energy_identity_residual(outcome: &RunOutcome) -> Result<f64> {
    let recs = &outcome.records;
    if recs.len() < 2 {
        return Err(Error::PreconditionViolated(
            "energy identity needs at least 2 records".into(),
        ));
    }
    let j0 = recs[0].j;
    let scale = j0.abs().max(1.0);
    Ok(recs
        .iter()
        .map(|r| (r.dissipation + r.j - j0).abs() / scale)
        .fold(0.0, f64::max))
}

/// Largest mismatch between `d/dt (||u||^2 / 2)`, by three-point differences
/// on the record times, and `-I(u)`, relative to `max(1, |I|)`.
pub fn nehari_derivative_check(outcome: &RunOutcome) -> Result<f64> {
    let recs = &outcome.records;
    if recs.len() < 3 {
        return Err(Error::PreconditionViolated(
            "Nehari derivative check needs at least 3 records".into(),
        ));
    }
    let mut worst = 0.0f64;
    for w in recs.windows(3) {
        let (h0, h1) = (w[1].t - w[0].t, w[2].t - w[1].t);
        if !(h0 > 0.0 && h1 > 0.0) {
            continue;
        }
        let y = |r: &TrajectoryRecord| 0.5 * r.l2 * r.l2;
        let deriv = -h1 / (h0 * (h0 + h1)) * y(&w[0])
            + (h1 - h0) / (h0 * h1) * y(&w[1])
            + h0 / (h1 * (h0 + h1)) * y(&w[2]);
        let i = w[1].i;
        worst = worst.max((deriv + i).abs() / i.abs().max(1.0));
    }
    Ok(worst)
}

/// `v(y) = lambda^{-1/2} u(x0 + y / lambda)` on the box of side `lambda L`
/// with the same node count, by trilinear interpolation (zero outside the
/// original box).
pub fn scale_field(u: &Field, lambda: f64, x0: [f64; 3]) -> Result<Field> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scaling factor must be positive, got {lambda}"
        )));
    }
    let src = *u.domain();
    let dst = BoxDomain::new(lambda * src.side(), src.nodes())?;
    let amp = lambda.powf(-0.5);
    Ok(Field::from_fn(dst, |y1, y2, y3| {
        let x = [x0[0] + y1 / lambda, x0[1] + y2 / lambda, x0[2] + y3 / lambda];
        amp * trilinear(u, x)
    }))
}

fn trilinear(u: &Field, x: [f64; 3]) -> f64 {
    let d = u.domain();
    let m = d.nodes() as isize;
    let h = d.spacing();
    // node coordinates with the walls at s = 0 and s = M + 1
    let mut base = [0isize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let s = x[a] / h;
        if !(0.0..=(m + 1) as f64).contains(&s) {
            return 0.0;
        }
        let fl = s.floor().min(m as f64);
        base[a] = fl as isize;
        frac[a] = s - fl;
    }
    let at = |i: isize, j: isize, k: isize| -> f64 {
        if (1..=m).contains(&i) && (1..=m).contains(&j) && (1..=m).contains(&k) {
            u.get((i - 1) as usize, (j - 1) as usize, (k - 1) as usize)
        } else {
            0.0
        }
    };
    let mut acc = 0.0;
    for (di, wi) in [(0, 1.0 - frac[0]), (1, frac[0])] {
        for (dj, wj) in [(0, 1.0 - frac[1]), (1, frac[1])] {
            for (dk, wk) in [(0, 1.0 - frac[2]), (1, frac[2])] {
                let w = wi * wj * wk;
                if w != 0.0 {
                    acc += w * at(base[0] + di, base[1] + dj, base[2] + dk);
                }
            }
        }
    }
    acc
}

/// Closed-form linear decay of `A` and `||u||_2^2` from the initial
/// coefficients: `sum lambda_k e^{-2 lambda_k t} c_k^2` (times the Parseval
/// weight) and the same without `lambda_k`.
pub fn linear_decay(u0: &Field, t: f64) -> (f64, f64) {
    let uh = dst_forward(u0);
    let d = *u0.domain();
    let w = d.parseval_weight();
    let (mut a, mut l2) = (0.0, 0.0);
    for (c, l) in uh.coeffs().iter().zip(d.eigenvalues()) {
        let e = (-2.0 * l * t).exp() * c * c;
        a += l * e;
        l2 += e;
    }
    (w * a, w * l2)
}

/// First Dirichlet eigenfunction scaled to unit maximum on the grid.
pub fn first_eigenmode(domain: BoxDomain) -> Field {
    let u = Field::sine_mode(domain, [1, 1, 1]);
    let m = u.max_abs();
    u.scaled(1.0 / m)
}

/// `3 pi^2 / L^2`, the principal eigenvalue.
pub fn principal_eigenvalue(domain: &BoxDomain) -> f64 {
    3.0 * PI * PI / (domain.side() * domain.side())
}
