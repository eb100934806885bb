//! Dirichlet box grid, sampled fields and the three-dimensional sine transform.
//!
//! A [`BoxDomain`] with side `L` and `M` interior nodes per axis samples
//! functions at `x_i = (i + 1) h`, `h = L / (M + 1)`; boundary values are
//! implicitly zero. Arrays are stored x-fastest: `index = i + M (j + M k)`.
//!
//! The sine basis `sin(k1 pi x / L) sin(k2 pi y / L) sin(k3 pi z / L)`,
//! `k in {1..M}^3`, diagonalises the Dirichlet Laplacian on this grid, so the
//! heat semigroup and `A(u) = int |grad u|^2` are evaluated exactly in
//! coefficient space.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex;
use realfft::{RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    side: f64,
    nodes: usize,
}

impl BoxDomain {
    /// Box `(0, side)^3` with `nodes` interior nodes per axis.
    ///
    /// Any `nodes >= 2` is accepted; powers of two give the fastest padded
    /// convolutions.
    pub fn new(side: f64, nodes: usize) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidDomain(format!(
                "side length must be positive, got {side}"
            )));
        }
        if nodes < 2 {
            return Err(Error::InvalidDomain(format!(
                "need at least 2 interior nodes per axis, got {nodes}"
            )));
        }
        Ok(Self { side, nodes })
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn spacing(&self) -> f64 {
        self.side / (self.nodes + 1) as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    /// Number of interior nodes, `M^3`.
    pub fn len(&self) -> usize {
        self.nodes * self.nodes * self.nodes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_power_of_two(&self) -> bool {
        self.nodes.is_power_of_two()
    }

    /// Coordinate of interior node `i` (0-based) along any axis.
    pub fn coord(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.spacing()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nodes * (j + self.nodes * k)
    }

    /// Inverse of [`BoxDomain::index`].
    #[inline]
    pub fn unindex(&self, idx: usize) -> (usize, usize, usize) {
        let m = self.nodes;
        (idx % m, (idx / m) % m, idx / (m * m))
    }

    /// Dirichlet eigenvalue `pi^2 |k|^2 / L^2` of the mode with 1-based
    /// wavenumbers `(k1, k2, k3)`.
    pub fn eigenvalue(&self, k1: usize, k2: usize, k3: usize) -> f64 {
        let s = (k1 * k1 + k2 * k2 + k3 * k3) as f64;
        PI * PI * s / (self.side * self.side)
    }

    /// All eigenvalues in coefficient storage order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = self.nodes;
        let one_d: Vec<f64> = (1..=m)
            .map(|k| {
                let w = k as f64 * PI / self.side;
                w * w
            })
            .collect();
        let mut out = Vec::with_capacity(self.len());
        for c in &one_d {
            for b in &one_d {
                for a in &one_d {
                    out.push(a + b + c);
                }
            }
        }
        out
    }

    /// Parseval weight: `h^3 sum u^2 = (L/2)^3 sum c^2`.
    pub fn parseval_weight(&self) -> f64 {
        (0.5 * self.side).powi(3)
    }

    pub fn same_grid(&self, other: &BoxDomain) -> bool {
        self.nodes == other.nodes && self.side == other.side
    }
}

/// Samples of a real function at the interior nodes of a [`BoxDomain`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    domain: BoxDomain,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(domain: BoxDomain) -> Self {
        Self {
            domain,
            values: vec![0.0; domain.len()],
        }
    }

    pub fn from_values(domain: BoxDomain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples, got {}",
                domain.len(),
                values.len()
            )));
        }
        Ok(Self { domain, values })
    }

    /// Samples `f(x, y, z)` at every interior node.
    pub fn from_fn(domain: BoxDomain, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let m = domain.nodes();
        let coords: Vec<f64> = (0..m).map(|i| domain.coord(i)).collect();
        let mut values = Vec::with_capacity(domain.len());
        for z in &coords {
            for y in &coords {
                for x in &coords {
                    values.push(f(*x, *y, *z));
                }
            }
        }
        Self { domain, values }
    }

    /// Sampled sine mode with 1-based wavenumbers `k`, unit amplitude.
    pub fn sine_mode(domain: BoxDomain, k: [usize; 3]) -> Self {
        let w = |n: usize| n as f64 * PI / domain.side();
        let (w1, w2, w3) = (w(k[0]), w(k[1]), w(k[2]));
        Self::from_fn(domain, |x, y, z| {
            (w1 * x).sin() * (w2 * y).sin() * (w3 * z).sin()
        })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.domain.index(i, j, k)]
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            domain: self.domain,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete `L^p` norm `(h^3 sum |u|^p)^(1/p)`; `p = f64::INFINITY` gives
    /// the maximum norm.
    pub fn norm(&self, p: f64) -> f64 {
        norm(self, p)
    }

    /// `h^3 sum u v`.
    pub fn dot(&self, other: &Field) -> f64 {
        debug_assert!(self.domain.same_grid(&other.domain));
        self.domain.cell_volume()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    /// `self + c * other`, in place.
    pub fn axpy(&mut self, c: f64, other: &Field) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }
}

/// Sine-basis coefficients of a [`Field`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    domain: BoxDomain,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(domain: BoxDomain) -> Self {
        Self {
            domain,
            coeffs: vec![0.0; domain.len()],
        }
    }

    pub fn from_coeffs(domain: BoxDomain, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != domain.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                domain.len(),
                coeffs.len()
            )));
        }
        Ok(Self { domain, coeffs })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Coefficient of the mode with 1-based wavenumbers `(k1, k2, k3)`.
    pub fn coeff(&self, k1: usize, k2: usize, k3: usize) -> f64 {
        self.coeffs[self.domain.index(k1 - 1, k2 - 1, k3 - 1)]
    }

    /// `L^2` norm squared of the represented field, `(L/2)^3 sum c^2`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.domain.parseval_weight() * self.coeffs.iter().map(|c| c * c).sum::<f64>()
    }

    /// Multiplies every coefficient by `g(lambda_k)`.
    pub fn map_eigen(&self, g: impl Fn(f64) -> f64) -> SpectralField {
        let lam = self.domain.eigenvalues();
        SpectralField {
            domain: self.domain,
            coeffs: self
                .coeffs
                .iter()
                .zip(&lam)
                .map(|(c, l)| c * g(*l))
                .collect(),
        }
    }

    pub fn axpy(&mut self, c: f64, other: &SpectralField) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += c * b;
        }
    }

    pub fn scaled(&self, c: f64) -> SpectralField {
        SpectralField {
            domain: self.domain,
            coeffs: self.coeffs.iter().map(|v| c * v).collect(),
        }
    }
}

thread_local! {
    static REAL_PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

pub(crate) fn real_forward_plan(n: usize) -> Arc<dyn RealToComplex<f64>> {
    REAL_PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

pub(crate) fn real_inverse_plan(n: usize) -> Arc<dyn realfft::ComplexToReal<f64>> {
    REAL_PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Unnormalised DST-I of length `m` via a real FFT of the odd extension:
/// `out_k = sum_j x_j sin(pi j k / (m + 1))`, `j, k = 1..m`.
struct DstLine {
    m: usize,
    fft: Arc<dyn RealToComplex<f64>>,
    input: Vec<f64>,
    output: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl DstLine {
    fn new(m: usize) -> Self {
        let fft = real_forward_plan(2 * (m + 1));
        let input = fft.make_input_vec();
        let output = fft.make_output_vec();
        let scratch = fft.make_scratch_vec();
        Self {
            m,
            fft,
            input,
            output,
            scratch,
        }
    }

    fn apply(&mut self, line: &mut [f64]) {
        let m = self.m;
        let n = 2 * (m + 1);
        self.input[0] = 0.0;
        self.input[m + 1] = 0.0;
        for j in 0..m {
            self.input[j + 1] = line[j];
            self.input[n - 1 - j] = -line[j];
        }
        self.fft
            .process_with_scratch(&mut self.input, &mut self.output, &mut self.scratch)
            .expect("buffer lengths come from the plan");
        for k in 0..m {
            line[k] = -0.5 * self.output[k + 1].im;
        }
    }
}

/// Applies `op` to every line of a cube of side `m` along each of the three axes.
pub(crate) fn for_each_axis_line(data: &mut [f64], m: usize, mut op: impl FnMut(&mut [f64])) {
    let mut buf = vec![0.0; m];
    for stride in [1, m, m * m] {
        for outer in 0..m {
            for inner in 0..m {
                let start = match stride {
                    1 => m * (inner + m * outer),
                    s if s == m => inner + m * m * outer,
                    _ => inner + m * outer,
                };
                for (t, b) in buf.iter_mut().enumerate() {
                    *b = data[start + t * stride];
                }
                op(&mut buf);
                for (t, b) in buf.iter().enumerate() {
                    data[start + t * stride] = *b;
                }
            }
        }
    }
}

fn sine_sum_3d(values: &mut [f64], m: usize) {
    let mut line = DstLine::new(m);
    for_each_axis_line(values, m, |buf| line.apply(buf));
}

/// Sine coefficients of `u`: `u(x_j) = sum_k c_k prod sin(k pi x_j / L)`.
pub fn dst_forward(u: &Field) -> SpectralField {
    let m = u.domain.nodes();
    let mut coeffs = u.values.clone();
    sine_sum_3d(&mut coeffs, m);
    let scale = (2.0 / (m + 1) as f64).powi(3);
    coeffs.iter_mut().for_each(|c| *c *= scale);
    SpectralField {
        domain: u.domain,
        coeffs,
    }
}

/// Synthesises nodal values from sine coefficients.
pub fn dst_inverse(uh: &SpectralField) -> Field {
    let m = uh.domain.nodes();
    let mut values = uh.coeffs.clone();
    sine_sum_3d(&mut values, m);
    Field {
        domain: uh.domain,
        values,
    }
}

/// Spectral Laplacian: each coefficient times `-lambda_k`.
pub fn laplacian_apply(uh: &SpectralField) -> SpectralField {
    uh.map_eigen(|l| -l)
}

/// Discrete `L^p` norm; see [`Field::norm`].
pub fn norm(u: &Field, p: f64) -> f64 {
    assert!(p >= 1.0, "norm exponent must be >= 1, got {p}");
    if p.is_infinite() {
        return u.max_abs();
    }
    let w = u.domain.cell_volume();
    let s: f64 = if p == 2.0 {
        u.values.iter().map(|v| v * v).sum()
    } else {
        u.values.iter().map(|v| v.abs().powf(p)).sum()
    };
    (w * s).powf(1.0 / p)
}

/// `A(u) = int |grad u|^2`, evaluated spectrally as `(L/2)^3 sum lambda_k c_k^2`.
pub fn grad_norm_sq(u: &Field) -> f64 {
    spectral_grad_norm_sq(&dst_forward(u))
}

pub fn spectral_grad_norm_sq(uh: &SpectralField) -> f64 {
    let lam = uh.domain.eigenvalues();
    uh.domain.parseval_weight()
        * uh
            .coeffs
            .iter()
            .zip(&lam)
            .map(|(c, l)| l * c * c)
            .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(domain: BoxDomain, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..domain.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Field::from_values(domain, values).unwrap()
    }

    /// Direct O(M^6) sine synthesis.
    fn direct_synthesis(uh: &SpectralField) -> Vec<f64> {
        let d = *uh.domain();
        let m = d.nodes();
        let s = |j: usize, k: usize| (PI * ((j + 1) * (k + 1)) as f64 / (m + 1) as f64).sin();
        let mut out = vec![0.0; d.len()];
        for (idx, o) in out.iter_mut().enumerate() {
            let (i, j, k) = d.unindex(idx);
            let mut acc = 0.0;
            for (cidx, c) in uh.coeffs().iter().enumerate() {
                let (a, b, e) = d.unindex(cidx);
                acc += c * s(i, a) * s(j, b) * s(k, e);
            }
            *o = acc;
        }
        out
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(BoxDomain::new(0.0, 8).is_err());
        assert!(BoxDomain::new(1.0, 1).is_err());
        let d = BoxDomain::new(2.0, 8).unwrap();
        assert!((d.spacing() * 9.0 - 2.0).abs() < 1e-15);
        assert!(d.is_power_of_two());
    }

    #[test]
    fn single_mode_has_one_coefficient() {
        let d = BoxDomain::new(1.0, 8).unwrap();
        let u = Field::sine_mode(d, [1, 1, 1]);
        let uh = dst_forward(&u);
        assert!((uh.coeff(1, 1, 1) - 1.0).abs() < 1e-13);
        let others = uh
            .coeffs()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 0)
            .fold(0.0f64, |m, (_, c)| m.max(c.abs()));
        assert!(others < 1e-14, "leak {others}");
    }

    #[test]
    fn zero_field_transforms_to_zero() {
        let d = BoxDomain::new(1.0, 8).unwrap();
        let uh = dst_forward(&Field::zeros(d));
        assert!(uh.coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn transform_matches_direct_sine_sums() {
        let d = BoxDomain::new(1.3, 8).unwrap();
        let u = random_field(d, 11);
        let uh = dst_forward(&u);
        let direct = direct_synthesis(&uh);
        let back = dst_inverse(&uh);
        let scale = u.max_abs();
        for ((a, b), c) in direct.iter().zip(u.values()).zip(back.values()) {
            assert!((a - b).abs() <= 1e-12 * scale);
            assert!((c - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn laplacian_of_first_mode() {
        let d = BoxDomain::new(1.0, 8).unwrap();
        let uh = dst_forward(&Field::sine_mode(d, [1, 1, 1]));
        let lap = laplacian_apply(&uh);
        assert!((lap.coeff(1, 1, 1) + 3.0 * PI * PI).abs() < 1e-11);
        assert!(laplacian_apply(&SpectralField::zeros(d))
            .coeffs()
            .iter()
            .all(|&c| c == 0.0));
    }

    #[test]
    fn laplacian_matches_seven_point_stencil_on_smooth_fields() {
        // Random combination of low modes on a box wide enough that
        // (k pi / L)^4 h^2 / 12 stays below the 10 h^2 budget.
        let d = BoxDomain::new(2.0 * PI, 8).unwrap();
        let m = d.nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut uh = SpectralField::zeros(d);
        for k3 in 1..=2 {
            for k2 in 1..=2 {
                for k1 in 1..=2 {
                    uh.coeffs_mut()[d.index(k1 - 1, k2 - 1, k3 - 1)] = rng.random_range(-1.0..1.0);
                }
            }
        }
        let u = dst_inverse(&uh);
        let lap = dst_inverse(&laplacian_apply(&uh));
        let h = d.spacing();
        let at = |i: isize, j: isize, k: isize| -> f64 {
            let r = 0..m as isize;
            if r.contains(&i) && r.contains(&j) && r.contains(&k) {
                u.get(i as usize, j as usize, k as usize)
            } else {
                0.0
            }
        };
        let mut worst = 0.0f64;
        for idx in 0..d.len() {
            let (i, j, k) = d.unindex(idx);
            let (i, j, k) = (i as isize, j as isize, k as isize);
            let fd = (at(i + 1, j, k) + at(i - 1, j, k) + at(i, j + 1, k) + at(i, j - 1, k)
                + at(i, j, k + 1)
                + at(i, j, k - 1)
                - 6.0 * at(i, j, k))
                / (h * h);
            worst = worst.max((fd - lap.values()[idx]).abs());
        }
        assert!(worst <= 10.0 * h * h * u.max_abs(), "{worst}");
    }

    #[test]
    fn norms_of_constant_and_zero_fields() {
        let d = BoxDomain::new(1.0, 16).unwrap();
        let one = Field::from_fn(d, |_, _, _| 1.0);
        let m = 16.0f64;
        let expect = (m / (m + 1.0)).powf(1.5);
        assert!((one.norm(2.0) - expect).abs() < 1e-14);
        let zero = Field::zeros(d);
        for p in [1.0, 2.0, 4.0, f64::INFINITY] {
            assert_eq!(zero.norm(p), 0.0);
        }
        // |Omega_h|^(1/2 - 1/p) scaling between L^2 and L^p on constants.
        let vol = (m * d.spacing()).powi(3);
        for p in [1.0, 3.0, 6.0] {
            let lhs = one.norm(2.0);
            let rhs = vol.powf(0.5 - 1.0 / p) * one.norm(p);
            assert!((lhs - rhs).abs() < 1e-13);
        }
    }

    #[test]
    fn l4_norm_matches_direct_sum() {
        let d = BoxDomain::new(1.0, 8).unwrap();
        let u = random_field(d, 3);
        let mut s = 0.0;
        for v in u.values() {
            s += v * v * v * v;
        }
        let direct = (d.cell_volume() * s).powf(0.25);
        assert!((u.norm(4.0) - direct).abs() <= 1e-14 * direct);
    }

    #[test]
    fn first_mode_rayleigh_quotient() {
        let d = BoxDomain::new(1.0, 16).unwrap();
        let u = Field::sine_mode(d, [1, 1, 1]);
        let u = u.scaled(1.0 / u.norm(2.0));
        assert!((grad_norm_sq(&u) - 3.0 * PI * PI).abs() < 1e-10);
        assert_eq!(grad_norm_sq(&Field::zeros(d)), 0.0);
    }

    #[test]
    fn gradient_energy_of_gaussian_matches_finite_differences() {
        let d = BoxDomain::new(1.0, 32).unwrap();
        let s2 = 0.11f64 * 0.11;
        let u = Field::from_fn(d, |x, y, z| {
            let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2) + (z - 0.5).powi(2);
            (-r2 / (2.0 * s2)).exp()
        });
        let m = d.nodes() as isize;
        let h = d.spacing();
        let at = |i: isize, j: isize, k: isize| -> f64 {
            if (0..m).contains(&i) && (0..m).contains(&j) && (0..m).contains(&k) {
                u.get(i as usize, j as usize, k as usize)
            } else {
                0.0
            }
        };
        // Central differences centred on cell edges, zero boundary data.
        let mut fd = 0.0;
        for k in -1..m {
            for j in -1..m {
                for i in -1..m {
                    let c = at(i, j, k);
                    fd += (at(i + 1, j, k) - c).powi(2)
                        + (at(i, j + 1, k) - c).powi(2)
                        + (at(i, j, k + 1) - c).powi(2);
                }
            }
        }
        fd *= h;
        let spectral = grad_norm_sq(&u);
        assert!((spectral - fd).abs() <= 0.01 * spectral, "{spectral} vs {fd}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trip_and_parseval(seed in any::<u64>(), side in 0.3f64..5.0) {
            let d = BoxDomain::new(side, 8).unwrap();
            let u = random_field(d, seed);
            let uh = dst_forward(&u);
            let back = dst_inverse(&uh);
            let scale = u.max_abs();
            for (a, b) in back.values().iter().zip(u.values()) {
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
            let n2 = u.norm(2.0).powi(2);
            prop_assert!((n2 - uh.l2_norm_sq()).abs() <= 1e-12 * n2);
        }

        #[test]
        fn grad_energy_is_quadratic(seed in any::<u64>(), c in -10.0f64..10.0) {
            let d = BoxDomain::new(1.0, 8).unwrap();
            let u = random_field(d, seed);
            let a = grad_norm_sq(&u);
            let ac = grad_norm_sq(&u.scaled(c));
            prop_assert!((ac - c * c * a).abs() <= 1e-12 * (c * c * a).max(1e-300));
        }
    }
}
