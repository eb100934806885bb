//! Riesz potential `Phi(x) = int f(y) |x - y|^{-mu} dy` on the box grid.
//!
//! The discrete potential is `Phi_i = h^3 sum_j k(x_i - x_j) f_j` with
//! `k(d) = |d|^{-mu}` off the diagonal and the self term chosen so that the
//! lattice sum reproduces the integral up to `O(h^{5 - mu})` for smooth `f`.
//! That weight is `-Z(mu) h^{3 - mu}`, where `Z` is the analytically continued
//! lattice sum `sum_{j != 0} |j|^{-mu}` over `Z^3`. The sum is a linear convolution, evaluated by
//! zero padding to `(2M)^3` and a real-to-complex FFT. Lines that are known to
//! be zero on input, or discarded on output, are skipped.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex;
use statrs::function::gamma::{gamma, gamma_ur};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{real_forward_plan, real_inverse_plan, BoxDomain, Field};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn complex_plans(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

/// `Z(mu) = sum_{j in Z^3, j != 0} |j|^{-mu}`, continued analytically to
/// `0 < mu < 3` through the theta-function splitting
///
/// ```text
/// Z = pi^s / Gamma(s) [ 1/(s - 3/2) - 1/s
///       + sum_{j != 0} Γ(s, π|j|²)/(π|j|²)^s + Γ(3/2 - s, π|j|²)/(π|j|²)^{3/2 - s} ],  s = mu/2.
/// ```
///
/// Both tails decay like `e^{-π|j|²}`, so `|j_i| <= 5` is exact to double
/// precision.
pub fn lattice_zeta(mu: f64) -> Result<f64> {
    if !(mu > 0.0 && mu < 3.0) {
        return Err(Error::InvalidMu(mu));
    }
    let s = mu / 2.0;
    let t = 1.5 - s;
    let (gs, gt) = (gamma(s), gamma(t));
    let mut sum = 0.0;
    const R: i64 = 5;
    for a in -R..=R {
        for b in -R..=R {
            for c in -R..=R {
                if a == 0 && b == 0 && c == 0 {
                    continue;
                }
                let x = PI * (a * a + b * b + c * c) as f64;
                sum += gamma_ur(s, x) * gs / x.powf(s) + gamma_ur(t, x) * gt / x.powf(t);
            }
        }
    }
    Ok(PI.powf(s) / gs * (1.0 / (s - 1.5) - 1.0 / s + sum))
}

/// Weight of the self term, `-Z(mu) h^{3 - mu}`.
pub fn self_cell_weight(spacing: f64, mu: f64) -> f64 {
    let z = lattice_zeta(mu).expect("mu checked by the caller");
    -z * spacing.powf(3.0 - mu)
}

/// Cached padded spectrum of the regularised kernel for one `(domain, mu)`.
#[derive(Debug, Clone)]
pub struct RieszKernel {
    mu: f64,
    domain: BoxDomain,
    self_cell_weight: f64,
    /// Spectrum on the `(M + 1) x 2M x 2M` half grid, already scaled by
    /// `h^3 / (2M)^3`.
    padded_spectrum: Vec<Complex<f64>>,
}

impl RieszKernel {
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn self_cell_weight(&self) -> f64 {
        self.self_cell_weight
    }

    pub fn padded_spectrum(&self) -> &[Complex<f64>] {
        &self.padded_spectrum
    }

    /// Regularised kernel value at integer node offset `(a, b, c)`.
    pub fn sample(&self, a: i64, b: i64, c: i64) -> f64 {
        kernel_sample(&self.domain, self.mu, self.self_cell_weight, a, b, c)
    }

    /// Largest `|Im| / max |Re|` over the spectrum; zero for an even kernel.
    pub fn max_imaginary_ratio(&self) -> f64 {
        let re = self
            .padded_spectrum
            .iter()
            .fold(0.0f64, |m, z| m.max(z.re.abs()));
        let im = self
            .padded_spectrum
            .iter()
            .fold(0.0f64, |m, z| m.max(z.im.abs()));
        im / re
    }
}

fn kernel_sample(domain: &BoxDomain, mu: f64, weight: f64, a: i64, b: i64, c: i64) -> f64 {
    let h = domain.spacing();
    if a == 0 && b == 0 && c == 0 {
        return weight / h.powi(3);
    }
    let r2 = (a * a + b * b + c * c) as f64;
    (h * h * r2).powf(-0.5 * mu)
}

/// Builds and transforms the regularised kernel; rejects `mu` outside `(0, 3)`.
pub fn kernel_build(domain: BoxDomain, mu: f64) -> Result<RieszKernel> {
    if !(mu > 0.0 && mu < 3.0) {
        return Err(Error::InvalidMu(mu));
    }
    let m = domain.nodes();
    let n = 2 * m;
    let weight = self_cell_weight(domain.spacing(), mu);
    let offset = |i: usize| -> i64 {
        if i <= m {
            i as i64
        } else {
            i as i64 - n as i64
        }
    };
    let mut samples = vec![0.0; n * n * n];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                samples[x + n * (y + n * z)] =
                    kernel_sample(&domain, mu, weight, offset(x), offset(y), offset(z));
            }
        }
    }
    let mut padded = PaddedTransform::new(m);
    let mut spectrum = padded.forward(&samples, n);
    let scale = domain.cell_volume() / (n * n * n) as f64;
    spectrum.iter_mut().for_each(|z| *z *= scale);
    Ok(RieszKernel {
        mu,
        domain,
        self_cell_weight: weight,
        padded_spectrum: spectrum,
    })
}

/// Linear convolution `Phi = h^3 sum_j k(x_i - x_j) f_j` through the padded FFT.
pub fn riesz_apply(kernel: &RieszKernel, f: &Field) -> Field {
    assert!(
        kernel.domain.same_grid(f.domain()),
        "field and kernel live on different grids"
    );
    let m = kernel.domain.nodes();
    let mut padded = PaddedTransform::new(m);
    let mut spec = padded.forward(f.values(), m);
    for (s, k) in spec.iter_mut().zip(&kernel.padded_spectrum) {
        *s *= k;
    }
    let values = padded.inverse_truncated(&mut spec);
    Field::from_values(kernel.domain, values).expect("length M^3 by construction")
}

/// `D(f, g) = h^3 sum f riesz_apply(g)`.
pub fn bilinear(kernel: &RieszKernel, f: &Field, g: &Field) -> f64 {
    f.dot(&riesz_apply(kernel, g))
}

/// 3-D real FFT on the doubled grid `(2M)^3`, x axis halved to `M + 1` bins.
struct PaddedTransform {
    m: usize,
    n: usize,
    nx: usize,
    r2c: Arc<dyn realfft::RealToComplex<f64>>,
    c2r: Arc<dyn realfft::ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl PaddedTransform {
    fn new(m: usize) -> Self {
        let n = 2 * m;
        let (fwd, inv) = complex_plans(n);
        Self {
            m,
            n,
            nx: m + 1,
            r2c: real_forward_plan(n),
            c2r: real_inverse_plan(n),
            fwd,
            inv,
        }
    }

    /// Forward transform of a real cube of side `extent` (either `M` for a
    /// field embedded in the corner, or `2M` for the full kernel), stored
    /// x-fastest.
    fn forward(&mut self, input: &[f64], extent: usize) -> Vec<Complex<f64>> {
        let (n, nx) = (self.n, self.nx);
        let mut spec = vec![Complex::new(0.0, 0.0); nx * n * n];
        let mut rin = self.r2c.make_input_vec();
        let mut rout = self.r2c.make_output_vec();
        let mut rscratch = self.r2c.make_scratch_vec();
        for z in 0..extent {
            for y in 0..extent {
                rin.iter_mut().for_each(|v| *v = 0.0);
                let start = extent * (y + extent * z);
                rin[..extent].copy_from_slice(&input[start..start + extent]);
                self.r2c
                    .process_with_scratch(&mut rin, &mut rout, &mut rscratch)
                    .expect("buffer lengths come from the plan");
                let dst = nx * (y + n * z);
                spec[dst..dst + nx].copy_from_slice(&rout);
            }
        }
        let fwd = self.fwd.clone();
        self.pass_y(&mut spec, &*fwd, extent);
        self.pass_z(&mut spec, &*fwd);
        spec
    }

    /// Inverse transform keeping only the `M^3` corner, normalisation left to
    /// the caller's kernel scaling.
    fn inverse_truncated(&mut self, spec: &mut [Complex<f64>]) -> Vec<f64> {
        let (m, n, nx) = (self.m, self.n, self.nx);
        let inv = self.inv.clone();
        self.pass_z(spec, &*inv);
        self.pass_y(spec, &*inv, m);
        let mut cin = self.c2r.make_input_vec();
        let mut rout = self.c2r.make_output_vec();
        let mut scratch = self.c2r.make_scratch_vec();
        let mut out = vec![0.0; m * m * m];
        for z in 0..m {
            for y in 0..m {
                let src = nx * (y + n * z);
                cin.copy_from_slice(&spec[src..src + nx]);
                cin[0].im = 0.0;
                cin[nx - 1].im = 0.0;
                self.c2r
                    .process_with_scratch(&mut cin, &mut rout, &mut scratch)
                    .expect("buffer lengths come from the plan");
                let dst = m * (y + m * z);
                out[dst..dst + m].copy_from_slice(&rout[..m]);
            }
        }
        out
    }

    /// FFT along y for the planes `z < z_extent`.
    fn pass_y(&self, spec: &mut [Complex<f64>], fft: &dyn Fft<f64>, z_extent: usize) {
        let (n, nx) = (self.n, self.nx);
        let mut line = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for z in 0..z_extent {
            for x in 0..nx {
                let base = x + nx * n * z;
                for (y, l) in line.iter_mut().enumerate() {
                    *l = spec[base + nx * y];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (y, l) in line.iter().enumerate() {
                    spec[base + nx * y] = *l;
                }
            }
        }
    }

    fn pass_z(&self, spec: &mut [Complex<f64>], fft: &dyn Fft<f64>) {
        let (n, nx) = (self.n, self.nx);
        let plane = nx * n;
        let mut line = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for base in 0..plane {
            for (z, l) in line.iter_mut().enumerate() {
                *l = spec[base + plane * z];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (z, l) in line.iter().enumerate() {
                spec[base + plane * z] = *l;
            }
        }
    }
}
