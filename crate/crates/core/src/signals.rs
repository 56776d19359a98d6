//! Periodic dither banks and the output-shaping function.
//!
//! A [`DitherBank`] holds `m` zero-mean `T`-periodic perturbation signals
//! `u^i` together with their zero-mean antiderivatives `U^i`. Every channel
//! is stored as a finite Fourier series, so the antiderivative is exact and
//! periodic by construction. The orthonormality contract on the
//! antiderivatives is the time-averaged one: `(1/T) ∫₀ᵀ U^i U^j dτ = δ_ij`.
//!
//! A [`ShapingFunction`] is the design function `α` applied to the
//! high-pass filtered output, together with `αα′` and the potential
//! `β(z) = ∫₀ᶻ (αα′(s) − αα′(0)) ds`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, EscError, Result};

/// Default number of Simpson subintervals per period.
pub const DEFAULT_QUADRATURE_POINTS: usize = 1024;

/// Minimum number of quadrature subintervals accepted by [`gram_matrix`].
pub const MIN_QUADRATURE_POINTS: usize = 256;

/// One term `a·cos(kντ) + b·sin(kντ)` of a channel, with `ν = 2π/T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub k: u32,
    pub cos: f64,
    pub sin: f64,
}

/// A zero-mean periodic signal given by its Fourier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierChannel {
    terms: Vec<Harmonic>,
}

impl FourierChannel {
    pub fn new(terms: Vec<Harmonic>) -> Result<Self> {
        if terms.is_empty() {
            return Err(invalid("a channel needs at least one harmonic"));
        }
        if terms.iter().any(|h| h.k == 0) {
            return Err(invalid("harmonic index 0 would give a nonzero mean"));
        }
        if terms.iter().any(|h| !h.cos.is_finite() || !h.sin.is_finite()) {
            return Err(invalid("harmonic coefficients must be finite"));
        }
        Ok(Self { terms })
    }

    /// `amplitude · cos(k ν τ)`.
    pub fn cosine(k: u32, amplitude: f64) -> Result<Self> {
        Self::new(vec![Harmonic {
            k,
            cos: amplitude,
            sin: 0.0,
        }])
    }

    /// `amplitude · sin(k ν τ)`.
    pub fn sine(k: u32, amplitude: f64) -> Result<Self> {
        Self::new(vec![Harmonic {
            k,
            cos: 0.0,
            sin: amplitude,
        }])
    }

    pub fn terms(&self) -> &[Harmonic] {
        &self.terms
    }

    fn signal(&self, nu: f64, tau: f64) -> f64 {
        self.terms
            .iter()
            .map(|h| {
                let (s, c) = (f64::from(h.k) * nu * tau).sin_cos();
                h.cos * c + h.sin * s
            })
            .sum()
    }

    fn antiderivative(&self, nu: f64, tau: f64) -> f64 {
        self.terms
            .iter()
            .map(|h| {
                let kn = f64::from(h.k) * nu;
                let (s, c) = (kn * tau).sin_cos();
                (h.cos * s - h.sin * c) / kn
            })
            .sum()
    }
}

/// Built-in dither families, selectable by config key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankVariant {
    /// `u^i(τ) = √2 i cos(iτ)`, `U^i(τ) = √2 sin(iτ)`.
    Canonical,
    /// Two channels: `u¹ = −√2 sin`, `u² = √2 cos` (so `U¹ = √2 cos`, `U² = √2 sin`).
    PlanarQuadrature,
    /// Six channels in descending order: `u^i(τ) = √2 (7−i) cos((7−i)τ)`.
    DescendingHarmonics,
}

impl BankVariant {
    pub fn key(self) -> &'static str {
        match self {
            BankVariant::Canonical => "canonical",
            BankVariant::PlanarQuadrature => "fig1",
            BankVariant::DescendingHarmonics => "fig2",
        }
    }
}

impl FromStr for BankVariant {
    type Err = EscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(BankVariant::Canonical),
            "fig1" | "quadrature" => Ok(BankVariant::PlanarQuadrature),
            "fig2" | "descending" => Ok(BankVariant::DescendingHarmonics),
            other => Err(invalid(format!("unknown dither bank variant '{other}'"))),
        }
    }
}

/// A bank of `m` periodic dither channels sharing one period.
#[derive(Debug, Clone, PartialEq)]
pub struct DitherBank {
    period: f64,
    channels: Vec<FourierChannel>,
}

impl DitherBank {
    /// Builds a bank without checking orthonormality; see [`DitherBank::validate`].
    pub fn from_channels(period: f64, channels: Vec<FourierChannel>) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(invalid(format!("dither period must be positive, got {period}")));
        }
        if channels.is_empty() {
            return Err(invalid("a dither bank needs at least one channel"));
        }
        Ok(Self { period, channels })
    }

    /// Builds a bank from uniformly tabulated samples of each `u^i` over one
    /// period (`samples[i][j] = u^i(j T / N)`), via trigonometric interpolation.
    pub fn from_samples(period: f64, samples: &[Vec<f64>]) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("custom bank needs at least one channel of samples"));
        }
        let mut channels = Vec::with_capacity(samples.len());
        for (i, row) in samples.iter().enumerate() {
            let n = row.len();
            if n < 4 {
                return Err(invalid(format!("channel {i}: need at least 4 samples, got {n}")));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("channel {i}: samples must be finite")));
            }
            let scale = row.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1.0);
            let mean = row.iter().sum::<f64>() / n as f64;
            if mean.abs() > 1e-8 * scale {
                return Err(invalid(format!(
                    "channel {i}: samples must have zero mean (got {mean:.3e})"
                )));
            }
            let mut terms = Vec::new();
            for k in 1..=n / 2 {
                let nyquist = 2 * k == n;
                let weight = if nyquist { 1.0 } else { 2.0 } / n as f64;
                let (mut a, mut b) = (0.0, 0.0);
                for (j, x) in row.iter().enumerate() {
                    let phase = 2.0 * PI * (k * j) as f64 / n as f64;
                    a += x * phase.cos();
                    b += x * phase.sin();
                }
                a *= weight;
                b = if nyquist { 0.0 } else { b * weight };
                if a.abs() > 1e-14 * scale || b.abs() > 1e-14 * scale {
                    terms.push(Harmonic {
                        k: k as u32,
                        cos: a,
                        sin: b,
                    });
                }
            }
            if terms.is_empty() {
                return Err(invalid(format!("channel {i}: samples are identically zero")));
            }
            channels.push(FourierChannel::new(terms)?);
        }
        Self::from_channels(period, channels)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Number of channels `m`.
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channels(&self) -> &[FourierChannel] {
        &self.channels
    }

    fn nu(&self) -> f64 {
        2.0 * PI / self.period
    }

    /// `u^i(τ)`.
    pub fn signal_channel(&self, i: usize, tau: f64) -> f64 {
        self.channels[i].signal(self.nu(), tau)
    }

    /// `U^i(τ)`.
    pub fn antiderivative_channel(&self, i: usize, tau: f64) -> f64 {
        self.channels[i].antiderivative(self.nu(), tau)
    }

    /// The vector `u(τ)`.
    pub fn signal(&self, tau: f64) -> DVector<f64> {
        let nu = self.nu();
        DVector::from_iterator(self.len(), self.channels.iter().map(|c| c.signal(nu, tau)))
    }

    /// The vector `U(τ)`.
    pub fn antiderivative(&self, tau: f64) -> DVector<f64> {
        let nu = self.nu();
        DVector::from_iterator(
            self.len(),
            self.channels.iter().map(|c| c.antiderivative(nu, tau)),
        )
    }

    /// Period averages `(1/T) ∫₀ᵀ u^i dτ`.
    pub fn signal_means(&self, points: usize) -> Vec<f64> {
        (0..self.len())
            .map(|i| simpson(|tau| self.signal_channel(i, tau), self.period, points) / self.period)
            .collect()
    }

    /// Checks the zero-mean and orthonormality contract within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for (i, mean) in self.signal_means(DEFAULT_QUADRATURE_POINTS).iter().enumerate() {
            if mean.abs() > tol {
                return Err(invalid(format!("channel {i} has nonzero mean {mean:.3e}")));
            }
        }
        let gram = gram_matrix(self, DEFAULT_QUADRATURE_POINTS)?;
        let dev = (gram - DMatrix::identity(self.len(), self.len())).amax();
        if dev > tol {
            return Err(invalid(format!(
                "antiderivatives are not orthonormal: max |Gram - I| = {dev:.3e}"
            )));
        }
        Ok(())
    }
}

/// Builds one of the built-in banks with period `2π`.
pub fn make_harmonic_bank(m: usize, variant: BankVariant) -> Result<DitherBank> {
    let channels = match variant {
        BankVariant::Canonical => {
            if m == 0 {
                return Err(invalid("canonical bank needs m >= 1"));
            }
            (1..=m)
                .map(|i| FourierChannel::cosine(i as u32, SQRT_2 * i as f64))
                .collect::<Result<Vec<_>>>()?
        }
        BankVariant::PlanarQuadrature => {
            if m != 2 {
                return Err(invalid(format!("variant fig1 requires m = 2, got {m}")));
            }
            vec![
                FourierChannel::sine(1, -SQRT_2)?,
                FourierChannel::cosine(1, SQRT_2)?,
            ]
        }
        BankVariant::DescendingHarmonics => {
            if m != 6 {
                return Err(invalid(format!("variant fig2 requires m = 6, got {m}")));
            }
            (1..=6u32)
                .map(|i| FourierChannel::cosine(7 - i, SQRT_2 * f64::from(7 - i)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    DitherBank::from_channels(2.0 * PI, channels)
}

/// Time-averaged Gram matrix `(1/T) ∫₀ᵀ U^i U^j dτ` by composite Simpson.
pub fn gram_matrix(bank: &DitherBank, quadrature_points: usize) -> Result<DMatrix<f64>> {
    if quadrature_points < MIN_QUADRATURE_POINTS {
        return Err(invalid(format!(
            "quadrature needs at least {MIN_QUADRATURE_POINTS} points, got {quadrature_points}"
        )));
    }
    let points = quadrature_points + quadrature_points % 2;
    let m = bank.len();
    let h = bank.period / points as f64;
    // Sample every antiderivative once, then weight.
    let samples: Vec<DVector<f64>> = (0..=points)
        .map(|j| bank.antiderivative(j as f64 * h))
        .collect();
    let mut gram = DMatrix::zeros(m, m);
    for (j, s) in samples.iter().enumerate() {
        let w = simpson_weight(j, points);
        gram += w * s * s.transpose();
    }
    Ok(gram * (h / 3.0) / bank.period)
}

/// `Λ^{ij} = (1/(2T)) ∫₀ᵀ U^i U^j dτ`.
pub fn lambda_matrix(bank: &DitherBank) -> DMatrix<f64> {
    gram_matrix(bank, DEFAULT_QUADRATURE_POINTS).expect("default point count is valid") * 0.5
}

fn simpson_weight(j: usize, points: usize) -> f64 {
    if j == 0 || j == points {
        1.0
    } else if j % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

fn simpson(f: impl Fn(f64) -> f64, length: f64, points: usize) -> f64 {
    let points = points.max(2) + points % 2;
    let h = length / points as f64;
    (0..=points)
        .map(|j| simpson_weight(j, points) * f(j as f64 * h))
        .sum::<f64>()
        * h
        / 3.0
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Shaping {
    LogCosh,
    Custom { alpha: ScalarFn, alpha_prime: ScalarFn },
}

/// The output-shaping design function `α` and its derived quantities.
#[derive(Clone)]
pub struct ShapingFunction {
    kind: Shaping,
}

impl fmt::Debug for ShapingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            Shaping::LogCosh => f.write_str("ShapingFunction(log-cosh)"),
            Shaping::Custom { .. } => f.write_str("ShapingFunction(custom)"),
        }
    }
}

/// `α(z) = √(z + ln(2 cosh z))`, for which `αα′ = (1 + tanh z)/2` and
/// `β(z) = ½ ln cosh z`.
pub fn default_shaping() -> ShapingFunction {
    ShapingFunction {
        kind: Shaping::LogCosh,
    }
}

/// `ln cosh z` without overflow.
fn ln_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl ShapingFunction {
    /// A user-supplied `α` with its derivative. `αα′` must be positive and
    /// strictly increasing; this is checked on a grid over `[-10, 10]`.
    pub fn custom(
        alpha: impl Fn(f64) -> f64 + Send + Sync + 'static,
        alpha_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let shaping = Self {
            kind: Shaping::Custom {
                alpha: Arc::new(alpha),
                alpha_prime: Arc::new(alpha_prime),
            },
        };
        let mut prev = f64::NEG_INFINITY;
        for j in 0..=2000 {
            let z = -10.0 + 0.01 * j as f64;
            let p = shaping.alpha_alpha_prime(z);
            if !(p.is_finite() && p > 0.0) {
                return Err(invalid(format!("αα′({z}) = {p} is not positive")));
            }
            if p <= prev {
                return Err(invalid(format!("αα′ is not strictly increasing near z = {z}")));
            }
            prev = p;
        }
        Ok(shaping)
    }

    pub fn is_default(&self) -> bool {
        matches!(self.kind, Shaping::LogCosh)
    }

    /// `α(z)`; non-finite input propagates as NaN.
    pub fn alpha(&self, z: f64) -> f64 {
        match &self.kind {
            Shaping::LogCosh => {
                // z + ln(2 cosh z) = z + |z| + ln(1 + e^{-2|z|}) >= 0
                let a = z.abs();
                (z + a + (-2.0 * a).exp().ln_1p()).sqrt()
            }
            Shaping::Custom { alpha, .. } => alpha(z),
        }
    }

    /// `α(z)` with an explicit domain check.
    pub fn try_alpha(&self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(EscError::Domain(format!("α evaluated at non-finite z = {z}")));
        }
        if let Shaping::LogCosh = self.kind {
            let a = z.abs();
            let radicand = z + a + (-2.0 * a).exp().ln_1p();
            if radicand < 0.0 {
                return Err(EscError::Domain(format!(
                    "z + ln(2 cosh z) < 0 at z = {z}"
                )));
            }
        }
        let value = self.alpha(z);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(EscError::Domain(format!("α({z}) is not finite")))
        }
    }

    pub fn alpha_prime(&self, z: f64) -> f64 {
        match &self.kind {
            Shaping::LogCosh => self.alpha_alpha_prime(z) / self.alpha(z),
            Shaping::Custom { alpha_prime, .. } => alpha_prime(z),
        }
    }

    /// `(αα′)(z)`.
    pub fn alpha_alpha_prime(&self, z: f64) -> f64 {
        match &self.kind {
            Shaping::LogCosh => 0.5 * (1.0 + z.tanh()),
            Shaping::Custom { alpha, alpha_prime } => alpha(z) * alpha_prime(z),
        }
    }

    /// `β(z) = ∫₀ᶻ ((αα′)(s) − (αα′)(0)) ds`.
    pub fn beta(&self, z: f64) -> f64 {
        match self.kind {
            Shaping::LogCosh => 0.5 * ln_cosh(z),
            Shaping::Custom { .. } => {
                let base = self.alpha_alpha_prime(0.0);
                adaptive_simpson(&|s| self.alpha_alpha_prime(s) - base, 0.0, z, 1e-12, 40)
            }
        }
    }

    /// `β′(z) = (αα′)(z) − (αα′)(0)`.
    pub fn beta_prime(&self, z: f64) -> f64 {
        self.alpha_alpha_prime(z) - self.alpha_alpha_prime(0.0)
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn rule(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = rule(fa, flm, fm, a, m);
        let right = rule(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    recurse(f, a, b, fa, fm, fb, rule(fa, fm, fb, a, b), tol, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_dev(m: &DMatrix<f64>) -> f64 {
        (m - DMatrix::identity(m.nrows(), m.ncols())).amax()
    }

    #[test]
    fn canonical_first_channel_at_zero() {
        let bank = make_harmonic_bank(2, BankVariant::Canonical).unwrap();
        assert_relative_eq!(bank.signal_channel(0, 0.0), SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn quadrature_bank_antiderivative_at_zero() {
        let bank = make_harmonic_bank(2, BankVariant::PlanarQuadrature).unwrap();
        assert_relative_eq!(bank.antiderivative_channel(0, 0.0), SQRT_2, epsilon = 1e-15);
        // U = (√2 cos, √2 sin), u = (−√2 sin, √2 cos)
        let t = 0.7;
        assert_relative_eq!(bank.antiderivative_channel(1, t), SQRT_2 * t.sin(), epsilon = 1e-14);
        assert_relative_eq!(bank.signal_channel(0, t), -SQRT_2 * t.sin(), epsilon = 1e-14);
    }

    #[test]
    fn all_variants_zero_mean() {
        for (m, v) in [
            (3, BankVariant::Canonical),
            (2, BankVariant::PlanarQuadrature),
            (6, BankVariant::DescendingHarmonics),
        ] {
            let bank = make_harmonic_bank(m, v).unwrap();
            for mean in bank.signal_means(1024) {
                assert!(mean.abs() <= 1e-10, "{v:?}: mean {mean}");
            }
        }
    }

    #[test]
    fn variant_size_mismatch_rejected() {
        assert!(make_harmonic_bank(3, BankVariant::PlanarQuadrature).is_err());
        assert!(make_harmonic_bank(2, BankVariant::DescendingHarmonics).is_err());
        assert!(make_harmonic_bank(0, BankVariant::Canonical).is_err());
    }

    #[test]
    fn gram_identity_for_builtins() {
        for m in 1..=6 {
            let bank = make_harmonic_bank(m, BankVariant::Canonical).unwrap();
            assert!(identity_dev(&gram_matrix(&bank, 1024).unwrap()) <= 1e-8);
        }
        let fig1 = make_harmonic_bank(2, BankVariant::PlanarQuadrature).unwrap();
        assert!(identity_dev(&gram_matrix(&fig1, 1024).unwrap()) <= 1e-8);
    }

    #[test]
    fn duplicated_channel_breaks_orthonormality() {
        let ch = FourierChannel::cosine(1, SQRT_2).unwrap();
        let bank = DitherBank::from_channels(2.0 * PI, vec![ch.clone(), ch]).unwrap();
        let gram = gram_matrix(&bank, 512).unwrap();
        assert_relative_eq!(gram[(0, 1)], 1.0, epsilon = 1e-10);
        assert!(bank.validate(1e-8).is_err());
        assert_relative_eq!(lambda_matrix(&bank)[(0, 1)], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn lambda_is_half_identity_for_descending_bank() {
        let bank = make_harmonic_bank(6, BankVariant::DescendingHarmonics).unwrap();
        let lambda = lambda_matrix(&bank);
        assert!(identity_dev(&(lambda * 2.0)) <= 2e-8);
    }

    #[test]
    fn too_few_quadrature_points_rejected() {
        let bank = make_harmonic_bank(1, BankVariant::Canonical).unwrap();
        assert!(gram_matrix(&bank, 100).is_err());
    }

    #[test]
    fn antiderivative_differentiates_back() {
        for (m, v) in [
            (6, BankVariant::Canonical),
            (2, BankVariant::PlanarQuadrature),
            (6, BankVariant::DescendingHarmonics),
        ] {
            let bank = make_harmonic_bank(m, v).unwrap();
            let h = 1e-5;
            for j in 0..1024 {
                let tau = bank.period() * j as f64 / 1024.0;
                for i in 0..m {
                    let fd = (bank.antiderivative_channel(i, tau + h)
                        - bank.antiderivative_channel(i, tau - h))
                        / (2.0 * h);
                    let exact = bank.signal_channel(i, tau);
                    let scale = (SQRT_2 * 6.0_f64).max(exact.abs());
                    assert!((fd - exact).abs() <= 1e-6 * scale, "{v:?} ch{i} τ={tau}");
                }
            }
        }
    }

    #[test]
    fn tabulated_bank_reproduces_harmonics() {
        let n = 64;
        let samples: Vec<Vec<f64>> = vec![
            (0..n)
                .map(|j| SQRT_2 * (2.0 * PI * j as f64 / n as f64).cos())
                .collect(),
            (0..n)
                .map(|j| 2.0 * SQRT_2 * (4.0 * PI * j as f64 / n as f64).cos())
                .collect(),
        ];
        let bank = DitherBank::from_samples(2.0 * PI, &samples).unwrap();
        let canonical = make_harmonic_bank(2, BankVariant::Canonical).unwrap();
        for tau in [0.0, 0.3, 1.9, 4.4] {
            assert!((bank.signal(tau) - canonical.signal(tau)).amax() < 1e-12);
            assert!((bank.antiderivative(tau) - canonical.antiderivative(tau)).amax() < 1e-12);
        }
        bank.validate(1e-8).unwrap();
    }

    #[test]
    fn tabulated_bank_rejects_offset() {
        let samples = vec![vec![1.0, 2.0, 1.0, 0.0]];
        assert!(DitherBank::from_samples(1.0, &samples).is_err());
    }

    #[test]
    fn default_shaping_values() {
        let s = default_shaping();
        assert_relative_eq!(s.alpha_alpha_prime(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(s.alpha(0.0), 2.0_f64.ln().sqrt(), epsilon = 1e-15);
        assert_relative_eq!(s.alpha(0.0), 0.832_555, epsilon = 1e-6);
        assert_eq!(s.beta(0.0), 0.0);
    }

    #[test]
    fn default_shaping_matches_closed_forms() {
        let s = default_shaping();
        for z in [-3.0, -0.4, 0.2, 1.5, 25.0] {
            let naive = (z + (2.0 * f64::cosh(z)).ln()).sqrt();
            assert_relative_eq!(s.alpha(z), naive, max_relative = 1e-10);
            // αα′ by central difference of α²/2
            let h = 1e-5;
            let fd = (s.alpha(z + h).powi(2) - s.alpha(z - h).powi(2)) / (4.0 * h);
            assert_relative_eq!(s.alpha_alpha_prime(z), fd, epsilon = 1e-8);
            assert_relative_eq!(s.alpha(z) * s.alpha_prime(z), s.alpha_alpha_prime(z), epsilon = 1e-12);
        }
        // α(z)² = ln(1 + e^{2z}) ≈ e^{2z} for very negative z
        assert_relative_eq!(s.alpha(-30.0).powi(2), (-60.0_f64).exp(), max_relative = 1e-12);
        assert!(s.alpha(-800.0).is_finite());
        assert!(s.alpha(800.0).is_finite());
        assert!(s.try_alpha(f64::NAN).is_err());
    }

    #[test]
    fn shaping_monotone_and_beta_positive_definite() {
        let s = default_shaping();
        let mut prev = f64::NEG_INFINITY;
        for j in 0..=2000 {
            let z = -10.0 + 0.01 * j as f64;
            let p = s.alpha_alpha_prime(z);
            assert!(p > 0.0 && p > prev);
            prev = p;
            let b = s.beta(z);
            if j == 1000 {
                assert_eq!(b, 0.0);
            } else {
                assert!(b > 0.0, "β({z}) = {b}");
            }
        }
    }

    #[test]
    fn custom_shaping_beta_by_quadrature() {
        // Same α as the default, supplied as closures: the quadrature path must agree.
        let s = ShapingFunction::custom(
            |z: f64| (z + (2.0 * z.cosh()).ln()).sqrt(),
            |z: f64| 0.5 * (1.0 + z.tanh()) / (z + (2.0 * z.cosh()).ln()).sqrt(),
        )
        .unwrap();
        let d = default_shaping();
        for z in [-2.0, -0.5, 0.0, 0.8, 3.0] {
            assert_relative_eq!(s.beta(z), d.beta(z), epsilon = 1e-9);
        }
    }

    #[test]
    fn custom_shaping_rejects_decreasing_product() {
        // α = e^{-z}: αα′ = −e^{-2z} < 0
        assert!(ShapingFunction::custom(|z: f64| (-z).exp(), |z: f64| -(-z).exp()).is_err());
    }
}
