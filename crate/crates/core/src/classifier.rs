//! Trajectory classification by well entry, and the threshold scan along the
//! ray `u0 = λ φ`.
//!
//! For nonnegative `φ` the set of `λ` whose trajectory enters `W` is an
//! interval `(0, λ1)` and the set entering `V` is `(λ2, ∞)`. The scan bisects
//! both endpoints independently and checks that the probe verdicts are
//! ordered the way this structure requires.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::evolution::{integrate, RunOutcome, SolverConfig, TrajectoryRecord, WellEntry};
use crate::functionals::{c0_estimate, Constants, Exponents, Problem};
use crate::grid::Field;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VerdictKind {
    EntersW { t0: f64 },
    EntersV { t0: f64 },
    Undetermined,
}

impl VerdictKind {
    /// Position in the expected `W < Undetermined < V` order along the ray.
    pub fn rank(self) -> u8 {
        match self {
            VerdictKind::EntersW { .. } => 0,
            VerdictKind::Undetermined => 1,
            VerdictKind::EntersV { .. } => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VerdictKind::EntersW { .. } => "W",
            VerdictKind::Undetermined => "U",
            VerdictKind::EntersV { .. } => "V",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryVerdict {
    pub kind: VerdictKind,
    pub outcome: RunOutcome,
    /// `lim J(u(t))`, filled when `J` has settled and the run did not enter `V`.
    pub c_limit: Option<f64>,
    /// `(2p/(p - 1)) c_limit`.
    pub c0: Option<f64>,
    /// The verdict disagrees with the run outcome: entering `V` without blow-up
    /// (or a collapsing step), or entering `W` and then blowing up.
    pub inconsistent: bool,
}

/// Relative drift of `J` over the last tenth of the records below which the
/// tail counts as settled.
pub const SETTLE_TOL: f64 = 1e-6;

pub fn classify_trajectory(
    u0: &Field,
    cfg: &SolverConfig,
    problem: &Problem,
) -> Result<TrajectoryVerdict> {
    let outcome = integrate(u0, cfg, problem)?;
    Ok(verdict_from_outcome(outcome, cfg, problem.exps()))
}

pub fn verdict_from_outcome(
    outcome: RunOutcome,
    cfg: &SolverConfig,
    exps: &Exponents,
) -> TrajectoryVerdict {
    let kind = match outcome.entry {
        Some(WellEntry::EnteredW { t0 }) => VerdictKind::EntersW { t0 },
        Some(WellEntry::EnteredV { t0 }) => VerdictKind::EntersV { t0 },
        None => VerdictKind::Undetermined,
    };
    let inconsistent = match kind {
        VerdictKind::EntersV { .. } => {
            let collapsing = outcome
                .records
                .last()
                .is_some_and(|r| r.dt > 0.0 && r.dt <= 1e-6 * cfg.dt_max);
            !outcome.is_blow_up() && !collapsing
        }
        VerdictKind::EntersW { .. } => outcome.is_blow_up(),
        VerdictKind::Undetermined => false,
    };
    let (mut c_limit, mut c0) = (None, None);
    if !matches!(kind, VerdictKind::EntersV { .. }) && !outcome.is_blow_up() {
        let js: Vec<f64> = outcome.records.iter().map(|r| r.j).collect();
        let scale = js.first().map_or(1.0, |j| j.abs().max(1.0));
        if let Some(est) = c0_estimate(&js, exps, SETTLE_TOL * scale) {
            if est.settled {
                c_limit = js.last().copied();
                c0 = Some(est.value);
            }
        }
    }
    TrajectoryVerdict {
        kind,
        outcome,
        c_limit,
        c0,
        inconsistent,
    }
}

#[derive(Debug, Clone)]
pub struct LambdaScanResult {
    pub lambda1_lo: f64,
    pub lambda1_hi: f64,
    pub lambda2_lo: f64,
    pub lambda2_hi: f64,
    /// Every probe, sorted by `λ`.
    pub probes: Vec<(f64, TrajectoryVerdict)>,
    /// Sorted verdicts follow `W..., Undetermined..., V...`.
    pub ordered: bool,
    /// The probe budget ran out before both brackets reached the tolerance.
    pub exhausted: bool,
}

impl LambdaScanResult {
    pub fn lambda1_width(&self) -> f64 {
        self.lambda1_hi / self.lambda1_lo - 1.0
    }

    pub fn lambda2_width(&self) -> f64 {
        self.lambda2_hi / self.lambda2_lo - 1.0
    }

    /// `λ1 <= λ2`, allowing one bracket width of slack.
    pub fn thresholds_ordered(&self, bracket_tol: f64) -> bool {
        self.lambda1_lo <= self.lambda2_hi * (1.0 + bracket_tol)
    }

    /// Every probe entering `W` has nonincreasing `linf` from its entry on.
    pub fn stable_probes_decay(&self) -> bool {
        self.probes.iter().all(|(_, v)| match v.kind {
            VerdictKind::EntersW { t0 } => v
                .outcome
                .records
                .iter()
                .filter(|r| r.t >= t0)
                .collect::<Vec<_>>()
                .windows(2)
                .all(|w| w[1].linf <= w[0].linf),
            _ => true,
        })
    }
}

/// Number of worker threads from `POTWELL_THREADS`, default 1.
pub fn thread_count() -> usize {
    std::env::var("POTWELL_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn run_probes(
    lambdas: &[f64],
    phi: &Field,
    cfg: &SolverConfig,
    problem: &Problem,
) -> Result<Vec<TrajectoryVerdict>> {
    let probe = |l: f64| classify_trajectory(&phi.scaled(l), cfg, problem);
    if thread_count() < 2 || lambdas.len() < 2 {
        return lambdas.iter().map(|&l| probe(l)).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = lambdas
            .iter()
            .map(|&l| s.spawn(move || probe(l)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("probe thread panicked"))
            .collect()
    })
}

fn brackets(probes: &BTreeMap<u64, (f64, TrajectoryVerdict)>) -> [f64; 4] {
    let mut b = [f64::NAN; 4];
    for (l, v) in probes.values() {
        let r = v.kind.rank();
        if r == 0 && !(b[0] >= *l) {
            b[0] = *l;
        }
        if r >= 1 && !(b[1] <= *l) {
            b[1] = *l;
        }
        if r <= 1 && !(b[2] >= *l) {
            b[2] = *l;
        }
        if r == 2 && !(b[3] <= *l) {
            b[3] = *l;
        }
    }
    b
}

/// Bisects `λ1` on "enters W" and `λ2` on "enters V", in log space, until both
/// brackets have relative width at most `bracket_tol` or `max_probes` runs
/// have been spent. Each round probes at most two new values; with
/// `POTWELL_THREADS >= 2` they run concurrently.
pub fn lambda_scan(
    phi: &Field,
    lambda_min: f64,
    lambda_max: f64,
    bracket_tol: f64,
    cfg: &SolverConfig,
    problem: &Problem,
    max_probes: usize,
) -> Result<LambdaScanResult> {
    if phi.values().iter().any(|&v| v < 0.0) || phi.max_abs() == 0.0 {
        return Err(Error::InvalidArgument(
            "phi must be nonnegative and not identically zero".into(),
        ));
    }
    if !(lambda_min > 0.0 && lambda_min < lambda_max) {
        return Err(Error::BracketInvalid(format!(
            "need 0 < lambda_min < lambda_max, got {lambda_min} and {lambda_max}"
        )));
    }
    if !(bracket_tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bracket_tol must be positive, got {bracket_tol}"
        )));
    }
    if max_probes < 2 {
        return Err(Error::InvalidArgument(
            "the scan needs at least the two endpoint probes".into(),
        ));
    }

    let mut probes: BTreeMap<u64, (f64, TrajectoryVerdict)> = BTreeMap::new();
    let ends = run_probes(&[lambda_min, lambda_max], phi, cfg, problem)?;
    for (l, v) in [lambda_min, lambda_max].into_iter().zip(ends) {
        probes.insert(l.to_bits(), (l, v));
    }
    let lo_kind = probes[&lambda_min.to_bits()].1.kind;
    let hi_kind = probes[&lambda_max.to_bits()].1.kind;
    if !matches!(lo_kind, VerdictKind::EntersW { .. }) {
        return Err(Error::BracketInvalid(format!(
            "lambda_min = {lambda_min} does not enter W (verdict {})",
            lo_kind.label()
        )));
    }
    if !matches!(hi_kind, VerdictKind::EntersV { .. }) {
        return Err(Error::BracketInvalid(format!(
            "lambda_max = {lambda_max} does not enter V (verdict {})",
            hi_kind.label()
        )));
    }

    let mut exhausted = false;
    loop {
        if !is_ordered(&probes) {
            break;
        }
        let b = brackets(&probes);
        let mut next: Vec<f64> = Vec::new();
        for (lo, hi) in [(b[0], b[1]), (b[2], b[3])] {
            if hi / lo > 1.0 + bracket_tol {
                let mid = (lo * hi).sqrt();
                if !probes.contains_key(&mid.to_bits()) && !next.contains(&mid) {
                    next.push(mid);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        let room = max_probes.saturating_sub(probes.len());
        if room == 0 {
            exhausted = true;
            break;
        }
        next.truncate(room);
        let verdicts = run_probes(&next, phi, cfg, problem)?;
        for (l, v) in next.into_iter().zip(verdicts) {
            probes.insert(l.to_bits(), (l, v));
        }
    }

    let ordered = is_ordered(&probes);
    let b = brackets(&probes);
    let mut probes: Vec<(f64, TrajectoryVerdict)> = probes.into_values().collect();
    probes.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(LambdaScanResult {
        lambda1_lo: b[0],
        lambda1_hi: b[1],
        lambda2_lo: b[2],
        lambda2_hi: b[3],
        probes,
        ordered,
        exhausted,
    })
}

fn is_ordered(probes: &BTreeMap<u64, (f64, TrajectoryVerdict)>) -> bool {
    let mut sorted: Vec<_> = probes.values().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted
        .windows(2)
        .all(|w| w[0].1.kind.rank() <= w[1].1.kind.rank())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowupProbeReport {
    /// `J(u(t)) >= m - tol` at every record.
    pub j_floor_ok: bool,
    /// `linf` ends above its start and its trend over the second half of the
    /// run is increasing.
    pub linf_growth_ok: bool,
    /// `C_0 = (2p/(p - 1)) J(u(t_end)) > 0`.
    pub c0_positive: bool,
    pub c0: f64,
}

/// Necessary conditions for blow-up in infinite time, checked on an
/// undetermined trajectory. A finite horizon cannot confirm the blow-up
/// itself, so no verdict is drawn.
pub fn infinite_blowup_probe(
    verdict: &TrajectoryVerdict,
    consts: &Constants,
    exps: &Exponents,
) -> Result<BlowupProbeReport> {
    if verdict.kind != VerdictKind::Undetermined {
        return Err(Error::PreconditionViolated(format!(
            "the probe needs an undetermined trajectory, got {}",
            verdict.kind.label()
        )));
    }
    let recs = &verdict.outcome.records;
    let (Some(first), Some(last)) = (recs.first(), recs.last()) else {
        return Err(Error::PreconditionViolated("no records".into()));
    };
    let tol = 1e-6 * consts.m_mu.max(1.0);
    let j_floor_ok = recs.iter().all(|r| r.j >= consts.m_mu - tol);
    let tail = &recs[recs.len() / 2..];
    let linf_growth_ok = last.linf > first.linf && trend_slope(tail) > 0.0;
    let c0 = exps.nehari_factor() * last.j;
    Ok(BlowupProbeReport {
        j_floor_ok,
        linf_growth_ok,
        c0_positive: c0 > 0.0,
        c0,
    })
}

/// Least-squares slope of `linf` against `t`.
fn trend_slope(recs: &[TrajectoryRecord]) -> f64 {
    let n = recs.len() as f64;
    if recs.len() < 2 {
        return 0.0;
    }
    let tm = recs.iter().map(|r| r.t).sum::<f64>() / n;
    let ym = recs.iter().map(|r| r.linf).sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for r in recs {
        num += (r.t - tm) * (r.linf - ym);
        den += (r.t - tm) * (r.t - tm);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{first_eigenmode, RunVerdict};
    use crate::functionals::{WellClass, WellClass::*};
    use crate::grid::BoxDomain;

    fn problem(m: usize) -> Problem {
        Problem::new(BoxDomain::new(1.0, m).unwrap(), 2.0).unwrap()
    }

    fn record(t: f64, j: f64, linf: f64, klass: WellClass) -> TrajectoryRecord {
        TrajectoryRecord {
            t,
            a: 0.0,
            b: 0.0,
            j,
            i: 0.0,
            l2: 0.0,
            linf,
            dt: 1e-3,
            dissipation: 0.0,
            klass,
        }
    }

    fn synthetic(records: Vec<TrajectoryRecord>, entry: Option<WellEntry>) -> TrajectoryVerdict {
        let d = BoxDomain::new(1.0, 4).unwrap();
        let outcome = RunOutcome {
            verdict: RunVerdict::HorizonReached,
            entry,
            records,
            final_field: Field::zeros(d),
            accepted_steps: 0,
            rejected_steps: 0,
        };
        verdict_from_outcome(outcome, &SolverConfig::default(), &Exponents::new(2.0).unwrap())
    }

    #[test]
    fn small_data_enters_w_at_once() {
        let pb = problem(8);
        let phi = first_eigenmode(*pb.domain());
        let cfg = SolverConfig {
            t_end: 0.3,
            ..Default::default()
        };
        let v = classify_trajectory(&phi.scaled(0.01), &cfg, &pb).unwrap();
        assert_eq!(v.kind, VerdictKind::EntersW { t0: 0.0 });
        assert!(!v.inconsistent);
        let c = v.c_limit.expect("settled");
        assert!(c.abs() < 1e-10 && v.c0.unwrap().abs() < 1e-9);
    }

    #[test]
    fn large_data_enters_v_and_blows_up() {
        let pb = problem(8);
        let phi = first_eigenmode(*pb.domain());
        let cfg = SolverConfig {
            tol_step: 1e-3,
            blowup_factor: 1e3,
            ..Default::default()
        };
        let v = classify_trajectory(&phi.scaled(50.0), &cfg, &pb).unwrap();
        assert_eq!(v.kind, VerdictKind::EntersV { t0: 0.0 });
        assert!(v.outcome.is_blow_up() && !v.inconsistent);
        assert!(v.c_limit.is_none());
    }

    #[test]
    fn probe_rejects_determined_trajectories() {
        let v = synthetic(
            vec![record(0.0, 0.1, 1.0, InW), record(0.1, 0.05, 0.5, InW)],
            Some(WellEntry::EnteredW { t0: 0.0 }),
        );
        let c = constants_for(2.0);
        let e = Exponents::new(2.0).unwrap();
        assert!(matches!(
            infinite_blowup_probe(&v, &c, &e),
            Err(Error::PreconditionViolated(_))
        ));
    }

    fn constants_for(mu: f64) -> Constants {
        crate::functionals::constants_build(mu).unwrap()
    }

    #[test]
    fn probe_on_constant_energy_records() {
        let c = constants_for(2.0);
        let e = Exponents::new(2.0).unwrap();
        let j = 2.0 * c.m_mu;
        let recs = (0..20)
            .map(|n| record(n as f64 * 0.01, j, 1.0 + n as f64, Neither))
            .collect();
        let v = synthetic(recs, None);
        assert_eq!(v.kind, VerdictKind::Undetermined);
        let rep = infinite_blowup_probe(&v, &c, &e).unwrap();
        assert!(rep.j_floor_ok && rep.linf_growth_ok && rep.c0_positive);
        assert!((rep.c0 - (8.0 / 3.0) * 2.0 * c.m_mu).abs() < 1e-12);
        // the settled tail also fills the limits
        assert!((v.c_limit.unwrap() - j).abs() < 1e-15);
    }

    #[test]
    fn scan_rejects_bad_endpoints() {
        let pb = problem(8);
        let phi = first_eigenmode(*pb.domain());
        let cfg = SolverConfig {
            t_end: 0.05,
            ..Default::default()
        };
        let err = lambda_scan(&phi, 0.01, 0.02, 0.05, &cfg, &pb, 10).unwrap_err();
        assert!(matches!(err, Error::BracketInvalid(_)));
        let err = lambda_scan(&phi, 2.0, 1.0, 0.05, &cfg, &pb, 10).unwrap_err();
        assert!(matches!(err, Error::BracketInvalid(_)));
        let neg = phi.scaled(-1.0);
        assert!(lambda_scan(&neg, 0.1, 10.0, 0.05, &cfg, &pb, 10).is_err());
    }

    #[test]
    fn scan_on_coarse_grid_brackets_both_thresholds() {
        let pb = problem(8);
        let phi = first_eigenmode(*pb.domain());
        let cfg = SolverConfig {
            t_end: 0.3,
            tol_step: 1e-4,
            blowup_factor: 1e3,
            ..Default::default()
        };
        let tol = 0.1;
        let res = lambda_scan(&phi, 0.5, 8.0, tol, &cfg, &pb, 20).unwrap();
        assert!(res.ordered && !res.exhausted);
        assert!(res.lambda1_width() <= tol && res.lambda2_width() <= tol);
        assert!(res.thresholds_ordered(tol));
        assert!(res.probes.windows(2).all(|w| w[0].0 < w[1].0));
        for (_, v) in &res.probes {
            assert!(!v.inconsistent);
        }
    }
}
