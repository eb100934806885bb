//! Self-check suite behind `potwell verify`.
//!
//! Runs every structural invariant of the library on small grids with fields
//! drawn from a seeded generator. The report contains no timings, so two runs
//! with the same seed produce identical text.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{lambda_scan, VerdictKind};
use crate::config::RunConfig;
use crate::error::Result;
use crate::evolution::{
    first_eigenmode, integrate, linear_decay, picard_mild_solve, RunOutcome, SolverConfig,
};
use crate::functionals::{bubble, hls_check, Problem, WellClass};
use crate::grid::{dst_forward, dst_inverse, BoxDomain, Field};
use crate::ground_state::minimize_quotient;
use crate::io::{decode_checkpoint, encode_checkpoint, read_timeseries_from, write_timeseries_to};
use crate::riesz::{lattice_zeta, riesz_apply};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn text(&self) -> String {
        let mut s = format!("potwell verify, seed {}\n", self.seed);
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{tag} {:<28} {}", c.name, c.detail);
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(s, "{} checks, {} failed", self.checks.len(), failed);
        s
    }
}

fn random_field(d: BoxDomain, rng: &mut ChaCha8Rng, positive: bool) -> Field {
    let lo = if positive { 0.0 } else { -1.0 };
    let values = (0..d.len()).map(|_| rng.random_range(lo..1.0)).collect();
    Field::from_values(d, values).expect("sized to the grid")
}

/// Random combination of the lowest few sine modes.
fn smooth_field(d: BoxDomain, rng: &mut ChaCha8Rng) -> Field {
    let mut u = Field::zeros(d);
    for k1 in 1..=3 {
        for k2 in 1..=3 {
            for k3 in 1..=3 {
                let c = rng.random_range(-1.0..1.0) / (k1 * k2 * k3) as f64;
                u.axpy(c, &Field::sine_mode(d, [k1, k2, k3]));
            }
        }
    }
    u
}

fn direct_potential(d: &BoxDomain, mu: f64, f: &Field) -> Result<Vec<f64>> {
    let h = d.spacing();
    let self_term = -lattice_zeta(mu)? * h.powf(3.0 - mu);
    let mut out = vec![0.0; d.len()];
    for (a, o) in out.iter_mut().enumerate() {
        let (i, j, k) = d.unindex(a);
        for (b, fv) in f.values().iter().enumerate() {
            let (p, q, r) = d.unindex(b);
            let w = if a == b {
                self_term
            } else {
                let s2 = ((i as f64 - p as f64).powi(2)
                    + (j as f64 - q as f64).powi(2)
                    + (k as f64 - r as f64).powi(2))
                    * h
                    * h;
                h * h * h * s2.powf(-mu / 2.0)
            };
            *o += w * fv;
        }
    }
    Ok(out)
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        name,
        passed,
        detail,
    }
}

fn lyapunov_violation(out: &RunOutcome, tol_energy: f64) -> f64 {
    out.records
        .windows(2)
        .map(|w| w[1].j - w[0].j - tol_energy)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn wells_flip(out: &RunOutcome) -> bool {
    let mut seen: Option<WellClass> = None;
    for r in &out.records {
        match (seen, r.klass) {
            (Some(WellClass::InW), WellClass::InV) | (Some(WellClass::InV), WellClass::InW) => {
                return true
            }
            (_, WellClass::InW) | (_, WellClass::InV) => seen = Some(r.klass),
            _ => {}
        }
    }
    false
}

pub fn run_verify(seed: u64) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mu = 2.0;

    // Sine transform
    let d10 = BoxDomain::new(1.3, 10)?;
    let u = random_field(d10, &mut rng, false);
    let uh = dst_forward(&u);
    let back = dst_inverse(&uh);
    let rt = u
        .values()
        .iter()
        .zip(back.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / u.max_abs();
    let parseval = (u.dot(&u) / uh.l2_norm_sq() - 1.0).abs();
    checks.push(check(
        "transform round trip",
        rt <= 1e-12 && parseval <= 1e-12,
        format!("inverse error {rt:.3e}, Parseval defect {parseval:.3e}"),
    ));

    // Riesz potential and B against direct sums
    let d6 = BoxDomain::new(1.0, 6)?;
    let p6 = Problem::new(d6, mu)?;
    let f = random_field(d6, &mut rng, false);
    let fast = riesz_apply(p6.kernel(), &f);
    let direct = direct_potential(&d6, mu, &f)?;
    let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = fast
        .values()
        .iter()
        .zip(&direct)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale;
    checks.push(check(
        "riesz vs direct sum",
        err <= 1e-10,
        format!("relative error {err:.3e}"),
    ));
    let g = random_field(d6, &mut rng, false);
    let density = g.map(|v| v.abs().powf(p6.exps().p));
    let phi = direct_potential(&d6, mu, &density)?;
    let b_direct: f64 = density
        .values()
        .iter()
        .zip(&phi)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * d6.cell_volume();
    let b_err = (p6.b(&g) / b_direct - 1.0).abs();
    checks.push(check(
        "B vs direct sum",
        b_err <= 1e-10,
        format!("relative error {b_err:.3e}"),
    ));

    // Constants
    let c = *p6.consts();
    let e = *p6.exps();
    let s_rel = (c.s_hl / (c.s_sob / c.c_hls.powf(1.0 / e.p)) - 1.0).abs();
    let m_rel = (c.m_mu / ((3.0 / 8.0) * c.s_hl.powf(4.0 / 3.0)) - 1.0).abs();
    checks.push(check(
        "constant identities",
        s_rel <= 1e-12 && m_rel <= 1e-12,
        format!("s_hl {:.10}, m_mu {:.10}", c.s_hl, c.m_mu),
    ));

    // HLS inequality
    let d8 = BoxDomain::new(1.0, 8)?;
    let p8 = Problem::new(d8, mu)?;
    let mut worst = 0.0f64;
    let mut hls_ok = true;
    for _ in 0..5 {
        let u = smooth_field(d8, &mut rng);
        let h = hls_check(&u, p8.kernel(), p8.exps(), p8.consts());
        hls_ok &= h.ok;
        worst = worst.max(h.lhs / h.rhs);
    }
    checks.push(check(
        "HLS inequality",
        hls_ok,
        format!("largest B / bound {worst:.6}"),
    ));

    // Linear flow
    let u0 = smooth_field(d8, &mut rng);
    let lin_cfg = SolverConfig {
        nonlinearity_on: false,
        t_end: 0.2,
        record_every: 3,
        ..Default::default()
    };
    let out = integrate(&u0, &lin_cfg, &p8)?;
    let mut lin_err = 0.0f64;
    for r in &out.records {
        let (a, l2sq) = linear_decay(&u0, r.t);
        lin_err = lin_err
            .max((r.a - a).abs() / a)
            .max((r.l2 - l2sq.sqrt()).abs() / l2sq.sqrt());
    }
    checks.push(check(
        "linear flow exact",
        lin_err <= 1e-8,
        format!("{} records, relative error {lin_err:.3e}", out.records.len()),
    ));

    // Nonlinear runs on both sides of the threshold
    let phi = first_eigenmode(d8);
    let decay_cfg = SolverConfig {
        t_end: 0.1,
        record_every: 1,
        ..Default::default()
    };
    let w_run = integrate(&phi.scaled(1.0), &decay_cfg, &p8)?;
    let blow_cfg = SolverConfig {
        tol_step: 1e-3,
        blowup_factor: 1e3,
        record_every: 1,
        ..Default::default()
    };
    let v_run = integrate(&phi.scaled(50.0), &blow_cfg, &p8)?;
    for (name, run, cfg) in [
        ("lyapunov decay run", &w_run, &decay_cfg),
        ("lyapunov blow-up run", &v_run, &blow_cfg),
    ] {
        let v = lyapunov_violation(run, 10.0 * cfg.tol_step);
        checks.push(check(
            name,
            v <= 0.0,
            format!("{} records, worst excess {v:.3e}", run.records.len()),
        ));
    }
    checks.push(check(
        "well invariance",
        !wells_flip(&w_run) && !wells_flip(&v_run),
        format!(
            "final classes {} and {}",
            w_run.records.last().map_or('-', |r| r.klass.letter()),
            v_run.records.last().map_or('-', |r| r.klass.letter())
        ),
    ));
    let floor = e.nehari_factor() * c.m_mu;
    let min_a = v_run
        .records
        .iter()
        .filter(|r| r.klass == WellClass::InV)
        .map(|r| r.a)
        .fold(f64::INFINITY, f64::min);
    checks.push(check(
        "unstable set lower bound",
        v_run.is_blow_up() && min_a >= 0.95 * floor,
        format!("min A in V {min_a:.4e}, bound {floor:.6}"),
    ));

    // Mild solution against the adaptive integrator
    let small = phi.scaled(0.5);
    let horizon = 0.01;
    let pic = picard_mild_solve(&small, horizon, 40, 1e-12, 60, &p8, true)?;
    let fine = SolverConfig {
        t_end: horizon,
        tol_step: 1e-9,
        dt_init: 1e-6,
        ..Default::default()
    };
    let ode = integrate(&small, &fine, &p8)?;
    let mut diff = pic.field.clone();
    diff.axpy(-1.0, &ode.final_field);
    let rel = diff.norm(2.0) / ode.final_field.norm(2.0);
    let ratios = pic.contraction_ratios();
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    checks.push(check(
        "picard vs integrate",
        rel <= 1e-4 && !ratios.is_empty() && max_ratio < 1.0,
        format!(
            "relative L2 gap {rel:.3e}, {} iterations, max ratio {max_ratio:.3e}",
            pic.iterations
        ),
    ));

    // Quotient descent
    let start = bubble(d8, [0.5; 3], rng.random_range(0.15..0.25))?;
    let q = minimize_quotient(&start, 200, 1e-6, &p8)?;
    let monotone = q.q_log.windows(2).all(|w| w[1] < w[0]);
    let m_id = (q.m_est / e.level_from_quotient(q.q_min) - 1.0).abs();
    checks.push(check(
        "quotient descent",
        monotone && q.q_min >= 0.98 * c.s_hl && m_id <= 1e-12,
        format!(
            "q_min {:.6} (s_hl {:.6}) after {} iterations",
            q.q_min, c.s_hl, q.iterations
        ),
    ));

    // Threshold scan
    let scan_cfg = SolverConfig {
        t_end: 0.3,
        tol_step: 1e-4,
        blowup_factor: 1e3,
        ..Default::default()
    };
    let scan = lambda_scan(&phi, 0.5, 8.0, 0.1, &scan_cfg, &p8, 20)?;
    let consistent = scan.probes.iter().all(|(_, v)| {
        !v.inconsistent && (!matches!(v.kind, VerdictKind::EntersV { .. }) || v.outcome.is_blow_up())
    });
    checks.push(check(
        "lambda scan ordering",
        scan.ordered && scan.thresholds_ordered(0.1) && consistent,
        format!(
            "lambda1 in [{:.4}, {:.4}], lambda2 in [{:.4}, {:.4}], {} probes",
            scan.lambda1_lo,
            scan.lambda1_hi,
            scan.lambda2_lo,
            scan.lambda2_hi,
            scan.probes.len()
        ),
    ));

    // Persistence
    let u = random_field(d8, &mut rng, false);
    let t = rng.random_range(0.0..1.0);
    let ck = decode_checkpoint(&encode_checkpoint(&u, t, mu), Path::new("memory"))?;
    let bit_exact = ck.t.to_bits() == t.to_bits()
        && ck.mu.to_bits() == mu.to_bits()
        && ck
            .field
            .values()
            .iter()
            .zip(u.values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    checks.push(check(
        "checkpoint round trip",
        bit_exact,
        format!("{} values", u.values().len()),
    ));
    let mut buf = Vec::new();
    write_timeseries_to(&w_run.records, &mut buf)?;
    let parsed = read_timeseries_from(buf.as_slice())?;
    checks.push(check(
        "csv round trip",
        parsed == w_run.records,
        format!("{} records", parsed.len()),
    ));
    let mut rc = RunConfig::default();
    rc.seed = seed;
    rc.solver.tol_step = rng.random_range(1e-8..1e-3);
    let text = rc.to_text();
    let again = RunConfig::parse(&text)?;
    checks.push(check(
        "config round trip",
        again == rc && again.to_text() == text,
        format!("{} bytes", text.len()),
    ));

    Ok(VerifyReport { seed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_passes_and_is_reproducible() {
        let a = run_verify(7).unwrap();
        assert!(a.all_passed(), "{}", a.text());
        let b = run_verify(7).unwrap();
        assert_eq!(a.text(), b.text());
    }
}
