//! Energy functionals, sharp constants and potential-well membership.
//!
//! With `p = 6 - mu` (the upper critical exponent for `N = 3`):
//!
//! * `A(u) = int |grad u|^2`
//! * `B(u) = int int |u(x)|^p |u(y)|^p / |x - y|^mu`
//! * `J(u) = A/2 - B/(2p)` (energy), `I(u) = A - B` (Nehari functional)
//!
//! The stable set is `W = {J < m, I > 0} ∪ {0}` and the unstable set is
//! `V = {J < m, I < 0}`, where `m` is the mountain-pass level built from the
//! best constant `S_HL`.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{grad_norm_sq, BoxDomain, Field};
use crate::riesz::{kernel_build, riesz_apply, RieszKernel};

/// Spatial dimension; everything in this crate is three-dimensional.
pub const DIM: f64 = 3.0;

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu < 3.0 {
        Ok(())
    } else {
        Err(Error::InvalidMu(mu))
    }
}

/// `2*_mu = (2N - mu)/(N - 2) = 6 - mu`.
pub fn exponent_p(mu: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok((2.0 * DIM - mu) / (DIM - 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    pub mu: f64,
    pub p: f64,
}

impl Exponents {
    pub fn new(mu: f64) -> Result<Self> {
        Ok(Self {
            mu,
            p: exponent_p(mu)?,
        })
    }

    /// Exponent `(N - 2)/(2N - mu) = 1/p` of `B` in the quotient.
    pub fn quotient_power(&self) -> f64 {
        (DIM - 2.0) / (2.0 * DIM - self.mu)
    }

    /// `2p/(p - 1)`, the factor relating `m` to the Nehari lower bound on `A`
    /// and `lim J` to `C_0`.
    pub fn nehari_factor(&self) -> f64 {
        2.0 * self.p / (self.p - 1.0)
    }

    /// `sup_theta J(theta u)` expressed through the quotient value `q`:
    /// `(N - mu + 2)/(2(2N - mu)) q^{(2N - mu)/(N - mu + 2)}`.
    pub fn level_from_quotient(&self, q: f64) -> f64 {
        let n = DIM;
        let mu = self.mu;
        (n - mu + 2.0) / (2.0 * (2.0 * n - mu)) * q.powf((2.0 * n - mu) / (n - mu + 2.0))
    }
}

/// Sharp Hardy-Littlewood-Sobolev constant `C(N, mu)` for `t = r = 2N/(2N - mu)`.
pub fn hls_constant(mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let n = DIM;
    Ok(PI.powf(mu / 2.0) * gamma(n / 2.0 - mu / 2.0) / gamma(n - mu / 2.0)
        * (gamma(n / 2.0) / gamma(n)).powf(-1.0 + mu / n))
}

/// Best Sobolev constant `S = pi N (N - 2) (Gamma(N/2)/Gamma(N))^{2/N}`.
pub fn sobolev_constant() -> f64 {
    let n = DIM;
    PI * n * (n - 2.0) * (gamma(n / 2.0) / gamma(n)).powf(2.0 / n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub mu: f64,
    pub c_hls: f64,
    pub s_sob: f64,
    pub s_hl: f64,
    pub m_mu: f64,
}

pub fn constants_build(mu: f64) -> Result<Constants> {
    let exps = Exponents::new(mu)?;
    let c_hls = hls_constant(mu)?;
    let s_sob = sobolev_constant();
    let s_hl = s_sob / c_hls.powf(exps.quotient_power());
    let m_mu = exps.level_from_quotient(s_hl);
    Ok(Constants {
        mu,
        c_hls,
        s_sob,
        s_hl,
        m_mu,
    })
}

/// `|v|^e`, using integer powers when `e` is integral.
pub(crate) fn abs_pow(v: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() < 64.0 {
        v.abs().powi(e as i32)
    } else {
        v.abs().powf(e)
    }
}

/// `B(u) = h^3 sum |u|^p Phi`, `Phi = riesz_apply(|u|^p)`.
pub fn compute_b(u: &Field, kernel: &RieszKernel, exps: &Exponents) -> f64 {
    let density = u.map(|v| abs_pow(v, exps.p));
    let phi = riesz_apply(kernel, &density);
    density.dot(&phi).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WellClass {
    InW,
    InV,
    Neither,
    Zero,
}

impl WellClass {
    /// Membership in the stable set, which contains the zero field.
    pub fn in_stable_set(self) -> bool {
        matches!(self, WellClass::InW | WellClass::Zero)
    }

    pub fn letter(self) -> char {
        match self {
            WellClass::InW => 'W',
            WellClass::InV => 'V',
            WellClass::Neither => 'N',
            WellClass::Zero => 'Z',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c {
            'W' => Some(WellClass::InW),
            'V' => Some(WellClass::InV),
            'N' => Some(WellClass::Neither),
            'Z' => Some(WellClass::Zero),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub a: f64,
    pub b: f64,
    pub j: f64,
    pub i: f64,
    pub klass: WellClass,
}

/// Fields with `max |u|` below this times `L^{-1/2}` are the zero element.
pub const ZERO_THRESHOLD: f64 = 1e-14;

pub fn classify(j: f64, i: f64, max_abs: f64, domain: &BoxDomain, consts: &Constants) -> WellClass {
    if max_abs < ZERO_THRESHOLD / domain.side().sqrt() {
        WellClass::Zero
    } else if j < consts.m_mu && i > 0.0 {
        WellClass::InW
    } else if j < consts.m_mu && i < 0.0 {
        WellClass::InV
    } else {
        WellClass::Neither
    }
}

/// Assembles `J`, `I` and the well class from `A` and `B`.
pub fn report_from_parts(
    a: f64,
    b: f64,
    max_abs: f64,
    domain: &BoxDomain,
    exps: &Exponents,
    consts: &Constants,
) -> EnergyReport {
    let j = 0.5 * a - b / (2.0 * exps.p);
    let i = a - b;
    EnergyReport {
        a,
        b,
        j,
        i,
        klass: classify(j, i, max_abs, domain, consts),
    }
}

pub fn energy_report(
    u: &Field,
    kernel: &RieszKernel,
    exps: &Exponents,
    consts: &Constants,
) -> EnergyReport {
    let a = grad_norm_sq(u);
    let b = compute_b(u, kernel, exps);
    report_from_parts(a, b, u.max_abs(), u.domain(), exps, consts)
}

/// Scale `(a/b)^{1/(2p - 2)}` putting `theta u` on the Nehari manifold.
pub fn nehari_scale(a: f64, b: f64, exps: &Exponents) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Nehari scale needs A > 0 and B > 0, got A = {a}, B = {b}"
        )));
    }
    Ok((a / b).powf(1.0 / (2.0 * exps.p - 2.0)))
}

/// Aubin-Talenti profile `(b/(b^2 + |x - a|^2))^{1/2}` with unit prefactor.
pub fn bubble(domain: BoxDomain, center: [f64; 3], width: f64) -> Result<Field> {
    if !(width > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bubble width must be positive, got {width}"
        )));
    }
    let l = domain.side();
    if center.iter().any(|c| !(*c > 0.0 && *c < l)) {
        return Err(Error::InvalidArgument(format!(
            "bubble center {center:?} lies outside (0, {l})^3"
        )));
    }
    Ok(Field::from_fn(domain, |x, y, z| {
        let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2) + (z - center[2]).powi(2);
        (width / (width * width + r2)).sqrt()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HlsCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// Checks `B(u) <= C(N, mu) ||u||_6^{2p}`.
pub fn hls_check(
    u: &Field,
    kernel: &RieszKernel,
    exps: &Exponents,
    consts: &Constants,
) -> HlsCheck {
    let lhs = compute_b(u, kernel, exps);
    let rhs = consts.c_hls * u.norm(6.0).powf(2.0 * exps.p);
    HlsCheck {
        lhs,
        rhs,
        ok: lhs <= rhs * (1.0 + 1e-8),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct C0Estimate {
    pub value: f64,
    /// `false` when `J` still moved by more than the tolerance over the last
    /// tenth of the records; the value is then provisional.
    pub settled: bool,
}

/// `C_0 = (2p/(p - 1)) lim J`, estimated from the last recorded energy.
pub fn c0_estimate(j_values: &[f64], exps: &Exponents, settle_tol: f64) -> Option<C0Estimate> {
    let last = *j_values.last()?;
    let n = j_values.len();
    let tail_start = n - 1 - (n / 10).min(n - 1);
    let drift = (last - j_values[tail_start]).abs();
    Some(C0Estimate {
        value: exps.nehari_factor() * last,
        settled: n >= 10 && drift <= settle_tol,
    })
}

/// Everything needed to evaluate the nonlinearity on one grid: the cached
/// kernel, the exponents and the constants for the same `mu`.
#[derive(Debug, Clone)]
pub struct Problem {
    kernel: RieszKernel,
    exps: Exponents,
    consts: Constants,
}

impl Problem {
    pub fn new(domain: BoxDomain, mu: f64) -> Result<Self> {
        Ok(Self {
            kernel: kernel_build(domain, mu)?,
            exps: Exponents::new(mu)?,
            consts: constants_build(mu)?,
        })
    }

    pub fn domain(&self) -> &BoxDomain {
        self.kernel.domain()
    }

    pub fn kernel(&self) -> &RieszKernel {
        &self.kernel
    }

    pub fn exps(&self) -> &Exponents {
        &self.exps
    }

    pub fn consts(&self) -> &Constants {
        &self.consts
    }

    pub fn energy(&self, u: &Field) -> EnergyReport {
        energy_report(u, &self.kernel, &self.exps, &self.consts)
    }

    pub fn b(&self, u: &Field) -> f64 {
        compute_b(u, &self.kernel, &self.exps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Closed-form Gamma values at half-integers, independent of statrs:
    // Gamma(1/2) = sqrt(pi), Gamma(1) = 1, Gamma(3/2) = sqrt(pi)/2,
    // Gamma(2) = 1, Gamma(5/2) = 3 sqrt(pi)/4, Gamma(3) = 2.
    fn hls_closed_form(mu: f64) -> f64 {
        let sp = PI.sqrt();
        let ratio = (sp / 2.0) / 2.0;
        let (num, den) = match mu as i32 {
            1 => (1.0, 3.0 * sp / 4.0),
            2 => (sp, 1.0),
            _ => unreachable!(),
        };
        PI.powf(mu / 2.0) * num / den * ratio.powf(-1.0 + mu / 3.0)
    }

    /// Sobolev quotient of `(1 + r^2)^{-1/2}` by composite Simpson in
    /// `s = ln r` over `r in (e^-30, 1e4)`.
    fn bubble_sobolev_quotient() -> f64 {
        let (s0, s1) = (-30.0f64, 1e4f64.ln());
        let n = 200_000;
        let hs = (s1 - s0) / n as f64;
        let mut grad = 0.0;
        let mut six = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let r = (s0 + k as f64 * hs).exp();
            let q = 1.0 + r * r;
            // dr = r ds
            grad += w * r.powi(4) / q.powi(3) * r;
            six += w * r * r / q.powi(3) * r;
        }
        let grad = 4.0 * PI * grad * hs / 3.0;
        let six = 4.0 * PI * six * hs / 3.0;
        grad / six.powf(1.0 / 3.0)
    }

    #[test]
    fn critical_exponent() {
        assert_eq!(exponent_p(2.0).unwrap(), 4.0);
        assert_eq!(exponent_p(1.0).unwrap(), 5.0);
        assert!((exponent_p(1e-12).unwrap() - 6.0).abs() < 1e-11);
        assert!(exponent_p(3.0).is_err());
        assert!(exponent_p(0.0).is_err());
    }

    #[test]
    fn hls_constant_against_closed_forms() {
        for mu in [1.0, 2.0] {
            let c = hls_constant(mu).unwrap();
            let oracle = hls_closed_form(mu);
            assert!((c / oracle - 1.0).abs() < 1e-12, "mu {mu}: {c} vs {oracle}");
        }
        // 30-digit reference values (mpmath).
        assert!((hls_constant(2.0).unwrap() - 7.303_872_119_375_109).abs() < 1e-12);
        assert!((hls_constant(1.0).unwrap() - 2.294_010_703_541_599).abs() < 1e-12);
        assert!((hls_constant(1e-9).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn sobolev_constant_against_bubble_quadrature() {
        let s = sobolev_constant();
        assert!((s - 5.477_904_089_531_332).abs() < 1e-12);
        let q = bubble_sobolev_quotient();
        assert!((q / s - 1.0).abs() < 1e-3, "{q} vs {s}");
    }

    #[test]
    fn constants_for_mu_two() {
        let c = constants_build(2.0).unwrap();
        assert!((c.s_hl - c.s_sob / c.c_hls.powf(0.25)).abs() <= 1e-12 * c.s_hl);
        assert!((c.m_mu - 0.375 * c.s_hl.powf(4.0 / 3.0)).abs() <= 1e-12 * c.m_mu);
        assert!((c.s_hl - 3.332_162_203_618_775).abs() < 1e-11);
        assert!((c.m_mu - 1.866_377_311_246_270).abs() < 1e-11);
    }

    #[test]
    fn nehari_scale_arithmetic() {
        let e = Exponents::new(2.0).unwrap();
        assert!((nehari_scale(3.0, 3.0, &e).unwrap() - 1.0).abs() < 1e-15);
        assert!((nehari_scale(16.0, 1.0, &e).unwrap() - 16f64.powf(1.0 / 6.0)).abs() < 1e-15);
        assert!(nehari_scale(0.0, 1.0, &e).is_err());
        assert!(nehari_scale(1.0, -1.0, &e).is_err());
    }

    fn smooth_random(domain: BoxDomain, rng: &mut ChaCha8Rng) -> Field {
        let mut modes = Vec::new();
        for _ in 0..4 {
            let k: [f64; 3] = [
                rng.random_range(1..4) as f64,
                rng.random_range(1..4) as f64,
                rng.random_range(1..4) as f64,
            ];
            modes.push((k, rng.random_range(-1.0..1.0)));
        }
        let l = domain.side();
        Field::from_fn(domain, |x, y, z| {
            modes
                .iter()
                .map(|(k, c)| {
                    c * (k[0] * PI * x / l).sin() * (k[1] * PI * y / l).sin() * (k[2] * PI * z / l).sin()
                })
                .sum()
        })
    }

    #[test]
    fn zero_and_small_fields_are_stable() {
        let d = BoxDomain::new(1.0, 8).unwrap();
        let prob = Problem::new(d, 2.0).unwrap();
        let zero = prob.energy(&Field::zeros(d));
        assert_eq!(zero.klass, WellClass::Zero);
        assert!(zero.klass.in_stable_set());
        assert_eq!((zero.a, zero.b), (0.0, 0.0));
        let small = prob.energy(&Field::sine_mode(d, [1, 1, 1]).scaled(1e-3));
        assert_eq!(small.klass, WellClass::InW);
    }

    #[test]
    fn report_identities_and_scaled_bump_in_unstable_set() {
        let d = BoxDomain::new(1.0, 16).unwrap();
        let prob = Problem::new(d, 2.0).unwrap();
        let w = bubble(d, [0.5; 3], 0.1).unwrap();
        // taper to zero at the walls
        let w = Field::from_values(
            d,
            w.values()
                .iter()
                .zip(Field::sine_mode(d, [1, 1, 1]).values())
                .map(|(a, b)| a * b)
                .collect(),
        )
        .unwrap();
        let r = prob.energy(&w);
        assert!((r.j - (r.a / 2.0 - r.b / 8.0)).abs() <= 1e-12 * r.j.abs().max(r.a));
        assert!((r.i - (r.a - r.b)).abs() <= 1e-12 * r.a.max(r.b));
        let theta = nehari_scale(r.a, r.b, prob.exps()).unwrap();
        let on_manifold = prob.energy(&w.scaled(theta));
        assert!(on_manifold.i.abs() <= 1e-10 * on_manifold.a);
        let big = prob.energy(&w.scaled(3.0 * theta));
        assert!(big.i < 0.0);
        if big.j < prob.consts().m_mu {
            assert_eq!(big.klass, WellClass::InV);
        } else {
            assert_eq!(big.klass, WellClass::Neither);
        }
    }

    #[test]
    fn energy_along_ray_peaks_at_nehari_scale() {
        let d = BoxDomain::new(1.0, 8).unwrap();
        let prob = Problem::new(d, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u = smooth_random(d, &mut rng);
        let r = prob.energy(&u);
        let theta = nehari_scale(r.a, r.b, prob.exps()).unwrap();
        let j_ray = |t: f64| 0.5 * t * t * r.a - t.powf(2.0 * prob.exps().p) * r.b / (2.0 * prob.exps().p);
        let peak = j_ray(theta);
        for k in 0..100 {
            let t = theta * 10f64.powf(-2.0 + 4.0 * k as f64 / 99.0);
            assert!(j_ray(t) <= peak * (1.0 + 1e-12));
        }
        let q = r.a / r.b.powf(prob.exps().quotient_power());
        assert!((peak - prob.exps().level_from_quotient(q)).abs() <= 1e-10 * peak);
    }

    #[test]
    fn homogeneity_and_quotient_invariance() {
        let d = BoxDomain::new(1.0, 8).unwrap();
        let prob = Problem::new(d, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = smooth_random(d, &mut rng);
        let r = prob.energy(&u);
        let q = r.a / r.b.powf(prob.exps().quotient_power());
        for c in [0.1, 2.0, 10.0] {
            let rc = prob.energy(&u.scaled(c));
            assert!((rc.b - c.powf(8.0) * r.b).abs() <= 1e-10 * rc.b);
            let qc = rc.a / rc.b.powf(prob.exps().quotient_power());
            assert!((qc - q).abs() <= 1e-10 * q);
        }
    }

    #[test]
    fn bubble_shape() {
        let d = BoxDomain::new(1.0, 9).unwrap();
        let center = [d.coord(4); 3];
        let u = bubble(d, center, 0.3).unwrap();
        assert!((u.get(4, 4, 4) - 0.3f64.powf(-0.5)).abs() < 1e-14);
        for idx in 0..d.len() {
            let (i, j, k) = d.unindex(idx);
            let r = u.get(8 - i, 8 - j, 8 - k);
            assert!((u.values()[idx] - r).abs() < 1e-14);
            assert!((u.values()[idx] - u.get(j, k, i)).abs() < 1e-14);
        }
        assert!(bubble(d, [0.5; 3], 0.0).is_err());
        assert!(bubble(d, [1.5, 0.5, 0.5], 0.1).is_err());
    }

    #[test]
    fn hls_bound_on_zero_bubble_and_random_fields() {
        let d = BoxDomain::new(1.0, 8).unwrap();
        let prob = Problem::new(d, 2.0).unwrap();
        let z = hls_check(&Field::zeros(d), prob.kernel(), prob.exps(), prob.consts());
        assert!(z.ok && z.lhs == 0.0 && z.rhs == 0.0);
        let b = bubble(d, [0.5; 3], 0.3).unwrap();
        let hb = hls_check(&b, prob.kernel(), prob.exps(), prob.consts());
        assert!(hb.ok && hb.lhs / hb.rhs > 0.0 && hb.lhs / hb.rhs <= 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..100 {
            let u = smooth_random(d, &mut rng);
            assert!(hls_check(&u, prob.kernel(), prob.exps(), prob.consts()).ok);
        }
    }

    #[test]
    fn c0_from_constant_and_decaying_energies() {
        let e = Exponents::new(2.0).unwrap();
        let flat = vec![0.7; 50];
        let est = c0_estimate(&flat, &e, 1e-9).unwrap();
        assert!((est.value - 8.0 / 3.0 * 0.7).abs() < 1e-15);
        assert!(est.settled);
        let decay: Vec<f64> = (0..200).map(|k| (-(k as f64) * 0.2).exp()).collect();
        let est = c0_estimate(&decay, &e, 1e-6).unwrap();
        assert!(est.value.abs() < 1e-12 && est.settled);
        let moving: Vec<f64> = (0..20).map(|k| k as f64).collect();
        assert!(!c0_estimate(&moving, &e, 1e-6).unwrap().settled);
        assert!(c0_estimate(&[], &e, 1e-6).is_none());
    }
}
