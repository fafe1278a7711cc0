//! Kernel registry: the parametric jump intensities $\kappa(t, x, z)$.
//!
//! Every kernel in the crate has the form
//! $$ \kappa(t,x,z) = \ell \,\big(1 + m(t,x)\, A(z/|z|)\, R(|z|)\big) $$
//! with a level $\ell > 0$, a scalar modulation $m$ bounded by the family's
//! `amp`, an angular factor $A$ and a radial factor $R$, both bounded by 1.
//! Three families populate the registry:
//!
//! * `constant`: $\kappa \equiv \ell$;
//! * `time_modulated`: $m(t) = \mathrm{amp}\cdot\cos(2\pi(\mathrm{freq}\,t
//!   + \mathrm{phase}))$, independent of $x$;
//! * `holder_space`: $m(x) = \mathrm{amp}\cdot
//!   \mathrm{sgn}(\sin w\!\cdot\!x)\,|\sin w\!\cdot\!x|^{\beta}$, which is
//!   exactly $\beta$-Holder in $x$ (Lipschitz at $\beta = 1$).
//!
//! The closed registry keeps admissibility decidable: the ellipticity window
//! $[\kappa_0^{-1}, \kappa_0]$, the Holder modulus, and the evenness
//! requirement at $\alpha = 1$ are all checkable from the parameters, and
//! specs serialize to small JSON objects.

use crate::error::{Error, Result};
use crate::geom::{self, Point, ZERO};
use crate::quad;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

/// Angular factor A on the unit sphere, always bounded by 1 in modulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngularFactor {
    /// A = 1.
    #[default]
    Iso,
    /// A(w) = w . axis, odd in w.
    Axial { axis: [f64; 3] },
    /// A(w) = cos(freq * w . axis), even in w.
    CosAxial { axis: [f64; 3], freq: f64 },
}

impl AngularFactor {
    pub fn eval(&self, omega: Point) -> f64 {
        match self {
            AngularFactor::Iso => 1.0,
            AngularFactor::Axial { axis } => geom::dot(omega, *axis),
            AngularFactor::CosAxial { axis, freq } => (freq * geom::dot(omega, *axis)).cos(),
        }
    }

    /// Whether A(-w) = A(w).
    pub fn even(&self) -> bool {
        !matches!(self, AngularFactor::Axial { .. })
    }
}

/// Radial factor R(|z|), bounded by 1 in modulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadialFactor {
    /// R = 1.
    #[default]
    One,
    /// R(r) = cos(freq * r).
    Cos { freq: f64 },
}

impl RadialFactor {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            RadialFactor::One => 1.0,
            RadialFactor::Cos { freq } => (freq * r).cos(),
        }
    }
}

/// The parametric families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum KernelForm {
    Constant {
        level: f64,
    },
    TimeModulated {
        level: f64,
        amp: f64,
        freq: f64,
        phase: f64,
        #[serde(default)]
        angular: AngularFactor,
        #[serde(default)]
        radial: RadialFactor,
    },
    HolderSpace {
        level: f64,
        amp: f64,
        wave: [f64; 3],
        #[serde(default)]
        angular: AngularFactor,
        #[serde(default)]
        radial: RadialFactor,
    },
}

/// A kernel specification: stability index, ellipticity constant, Holder
/// index of the x-dependence, and the parametric form.
///
/// Serializes as `{"alpha":…, "kappa0":…, "beta":…, "family":…,
/// "params":{…}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub alpha: f64,
    pub kappa0: f64,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub beta_prime: f64,
    #[serde(flatten)]
    pub form: KernelForm,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

/// sgn(sin v) |sin v|^beta, the beta-Holder modulation profile.
pub fn signed_power_sin(v: f64, beta: f64) -> f64 {
    let s = v.sin();
    s.signum() * s.abs().powf(beta)
}

impl KernelSpec {
    pub fn constant(alpha: f64, kappa0: f64, level: f64) -> Self {
        KernelSpec {
            alpha,
            kappa0,
            beta: 1.0,
            beta_prime: 0.0,
            form: KernelForm::Constant { level },
        }
    }

    pub fn level(&self) -> f64 {
        match &self.form {
            KernelForm::Constant { level } => *level,
            KernelForm::TimeModulated { level, .. } => *level,
            KernelForm::HolderSpace { level, .. } => *level,
        }
    }

    pub fn amp(&self) -> f64 {
        match &self.form {
            KernelForm::Constant { .. } => 0.0,
            KernelForm::TimeModulated { amp, .. } => *amp,
            KernelForm::HolderSpace { amp, .. } => *amp,
        }
    }

    /// Angular and radial factors, the identity pair for constant kernels.
    pub fn factors(&self) -> (AngularFactor, RadialFactor) {
        match &self.form {
            KernelForm::Constant { .. } => (AngularFactor::Iso, RadialFactor::One),
            KernelForm::TimeModulated { angular, radial, .. } => (angular.clone(), radial.clone()),
            KernelForm::HolderSpace { angular, radial, .. } => (angular.clone(), radial.clone()),
        }
    }

    /// The scalar modulation m(t, x).
    pub fn modulation(&self, t: f64, x: Point) -> f64 {
        match &self.form {
            KernelForm::Constant { .. } => 0.0,
            KernelForm::TimeModulated { amp, freq, phase, .. } => {
                amp * (std::f64::consts::TAU * (freq * t + phase)).cos()
            }
            KernelForm::HolderSpace { amp, wave, .. } => {
                amp * signed_power_sin(geom::dot(*wave, x), self.beta)
            }
        }
    }

    /// Closed form of $\int_t^s m(r, x)\,dr$.
    pub fn modulation_integral(&self, t: f64, s: f64, x: Point) -> f64 {
        match &self.form {
            KernelForm::Constant { .. } => 0.0,
            KernelForm::TimeModulated { amp, freq, phase, .. } => {
                if freq.abs() < 1e-14 {
                    amp * (std::f64::consts::TAU * phase).cos() * (s - t)
                } else {
                    let tau = std::f64::consts::TAU;
                    amp * ((tau * (freq * s + phase)).sin() - (tau * (freq * t + phase)).sin())
                        / (tau * freq)
                }
            }
            KernelForm::HolderSpace { .. } => self.modulation(t, x) * (s - t),
        }
    }

    /// Evaluates kappa(t, x, z). The value at z = 0 is the level; the jump
    /// measure never weighs that point.
    pub fn eval(&self, t: f64, x: Point, z: Point) -> f64 {
        let r = geom::norm(z);
        if r == 0.0 {
            return self.level();
        }
        let (angular, radial) = match &self.form {
            KernelForm::Constant { level } => return *level,
            KernelForm::TimeModulated { angular, radial, .. } => (angular, radial),
            KernelForm::HolderSpace { angular, radial, .. } => (angular, radial),
        };
        let omega = geom::scale(z, 1.0 / r);
        self.level() * (1.0 + self.modulation(t, x) * angular.eval(omega) * radial.eval(r))
    }

    pub fn x_independent(&self) -> bool {
        match &self.form {
            KernelForm::Constant { .. } | KernelForm::TimeModulated { .. } => true,
            KernelForm::HolderSpace { amp, .. } => *amp == 0.0,
        }
    }

    /// Whether kappa(t, x, -z) = kappa(t, x, z) identically.
    pub fn z_even(&self) -> bool {
        self.amp() == 0.0 || self.factors().0.even()
    }

    /// Structural admissibility: parameter ranges, the ellipticity window,
    /// the Holder modulus, and evenness at alpha = 1.
    pub fn validate(&self, d: usize) -> Result<()> {
        self.validate_shape(d)?;
        let (lo, hi) = self.range();
        if hi > self.kappa0 + 1e-12 || lo < 1.0 / self.kappa0 - 1e-12 {
            return Err(Error::config(format!(
                "fields `params.level`, `params.amp`: kernel range [{lo:.6}, {hi:.6}] \
                 escapes [1/kappa0, kappa0] = [{:.6}, {:.6}]",
                1.0 / self.kappa0,
                self.kappa0
            )));
        }
        if let KernelForm::HolderSpace { level, amp, wave, .. } = &self.form {
            let holder = level * amp.abs() * 2f64.powf(1.0 - self.beta)
                * geom::norm(*wave).powf(self.beta);
            if holder > self.kappa0 + 1e-12 {
                return Err(Error::config(format!(
                    "fields `params.amp`, `params.wave`: Holder modulus {holder:.6} \
                     exceeds kappa0 = {}",
                    self.kappa0
                )));
            }
        }
        if self.alpha == 1.0 && !self.z_even() {
            return Err(Error::config(
                "field `params.angular`: odd angular factor is inadmissible at alpha = 1 \
                 (annular first moments of z kappa / |z|^{d+1} must vanish)",
            ));
        }
        Ok(())
    }

    /// Range [min, max] of kernel values implied by the parameters.
    pub fn range(&self) -> (f64, f64) {
        let l = self.level();
        let a = self.amp().abs();
        (l * (1.0 - a), l * (1.0 + a))
    }

    /// Well-formedness short of the analytic conditions: finite parameters in
    /// legal ranges and a valid dimension.
    pub fn validate_shape(&self, d: usize) -> Result<()> {
        if !(1..=3).contains(&d) {
            return Err(Error::config(format!("dimension must be 1, 2, or 3, got {d}")));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 || self.alpha >= 2.0 {
            return Err(Error::config(format!(
                "field `alpha`: must lie in the open interval (0, 2), got {}",
                self.alpha
            )));
        }
        if !self.kappa0.is_finite() || self.kappa0 <= 1.0 {
            return Err(Error::config(format!(
                "field `kappa0`: must exceed 1, got {}",
                self.kappa0
            )));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 || self.beta > 1.0 {
            return Err(Error::config(format!(
                "field `beta`: must lie in (0, 1], got {}",
                self.beta
            )));
        }
        if self.beta_prime != 0.0 {
            return Err(Error::config(format!(
                "field `beta_prime`: registry kernels require 0, got {}",
                self.beta_prime
            )));
        }
        let level = self.level();
        if !level.is_finite() || level <= 0.0 {
            return Err(Error::config(format!(
                "field `params.level`: must be positive, got {level}"
            )));
        }
        let amp = self.amp();
        if !amp.is_finite() || amp.abs() >= 1.0 {
            return Err(Error::config(format!(
                "field `params.amp`: must lie in (-1, 1), got {amp}"
            )));
        }
        if let KernelForm::TimeModulated { freq, phase, .. } = &self.form {
            if !freq.is_finite() || !phase.is_finite() {
                return Err(Error::config("fields `params.freq`, `params.phase`: must be finite"));
            }
        }
        if let KernelForm::HolderSpace { wave, .. } = &self.form {
            check_vector("params.wave", wave, d, false)?;
        }
        let (angular, radial) = self.factors();
        match &angular {
            AngularFactor::Iso => {}
            AngularFactor::Axial { axis } => check_vector("params.angular.axis", axis, d, true)?,
            AngularFactor::CosAxial { axis, freq } => {
                check_vector("params.angular.axis", axis, d, true)?;
                if !freq.is_finite() || *freq < 0.0 {
                    return Err(Error::config(format!(
                        "field `params.angular.freq`: must be finite and nonnegative, got {freq}"
                    )));
                }
            }
        }
        if let RadialFactor::Cos { freq } = &radial {
            if !freq.is_finite() || *freq < 0.0 {
                return Err(Error::config(format!(
                    "field `params.radial.freq`: must be finite and nonnegative, got {freq}"
                )));
            }
        }
        Ok(())
    }

    /// Kernel with x frozen at `y` and time averaged over [t, s].
    pub fn frozen_time_avg(&self, t: f64, s: f64, y: Point) -> FrozenKernel {
        let (angular, radial) = self.factors();
        FrozenKernel {
            alpha: self.alpha,
            level: self.level(),
            m: if s > t {
                self.modulation_integral(t, s, y) / (s - t)
            } else {
                self.modulation(t, y)
            },
            angular,
            radial,
        }
    }

    /// The kernel rescaled to unit time over [t, s]:
    /// kappa~(r, w) = kappa(t + (s-t) r, (s-t)^{1/alpha} w). Defined for
    /// x-independent kernels.
    pub fn rescaled(&self, t: f64, s: f64) -> Result<KernelSpec> {
        if !self.x_independent() {
            return Err(Error::config(
                "time rescaling requires an x-independent kernel",
            ));
        }
        if !(s > t) {
            return Err(Error::config(format!("field `s`: must exceed t = {t}, got {s}")));
        }
        let dt = s - t;
        let stretch = dt.powf(1.0 / self.alpha);
        let mut out = self.clone();
        out.form = match &self.form {
            KernelForm::Constant { level } => KernelForm::Constant { level: *level },
            KernelForm::TimeModulated { level, amp, freq, phase, angular, radial } => {
                KernelForm::TimeModulated {
                    level: *level,
                    amp: *amp,
                    freq: freq * dt,
                    phase: phase + freq * t,
                    angular: angular.clone(),
                    radial: rescale_radial(radial, stretch),
                }
            }
            KernelForm::HolderSpace { .. } => unreachable!(),
        };
        Ok(out)
    }
}

fn rescale_radial(radial: &RadialFactor, stretch: f64) -> RadialFactor {
    match radial {
        RadialFactor::One => RadialFactor::One,
        RadialFactor::Cos { freq } => RadialFactor::Cos { freq: freq * stretch },
    }
}

fn check_vector(field: &str, v: &[f64; 3], d: usize, unit: bool) -> Result<()> {
    if v.iter().any(|c| !c.is_finite()) {
        return Err(Error::config(format!("field `{field}`: components must be finite")));
    }
    for (i, c) in v.iter().enumerate().skip(d) {
        if *c != 0.0 {
            return Err(Error::config(format!(
                "field `{field}`: component {i} must be 0 in dimension {d}, got {c}"
            )));
        }
    }
    if unit {
        let n = geom::norm(*v);
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "field `{field}`: must be a unit vector, |axis| = {n}"
            )));
        }
    }
    Ok(())
}

/// An x-independent, time-independent kernel slice
/// $\bar\kappa(z) = \ell\,(1 + m A(z/|z|) R(|z|))$, the building block for
/// symbols, densities, and moments.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenKernel {
    pub alpha: f64,
    pub level: f64,
    pub m: f64,
    pub angular: AngularFactor,
    pub radial: RadialFactor,
}

impl FrozenKernel {
    pub fn isotropic(alpha: f64, level: f64) -> Self {
        FrozenKernel {
            alpha,
            level,
            m: 0.0,
            angular: AngularFactor::Iso,
            radial: RadialFactor::One,
        }
    }

    pub fn eval(&self, z: Point) -> f64 {
        let r = geom::norm(z);
        if r == 0.0 {
            return self.level;
        }
        let omega = geom::scale(z, 1.0 / r);
        self.eval_dir(omega, r)
    }

    pub fn eval_dir(&self, omega: Point, r: f64) -> f64 {
        self.level * (1.0 + self.m * self.angular.eval(omega) * self.radial.eval(r))
    }

    /// Jump measure density kappa(z) / |z|^{d + alpha}.
    pub fn jump_density(&self, d: usize, z: Point) -> f64 {
        let r = geom::norm(z);
        self.eval(z) * r.powf(-(d as f64 + self.alpha))
    }

    /// The frozen kernel after rescaling time by dt:
    /// $\bar\kappa(dt^{1/\alpha} w)$ as a function of w.
    pub fn time_rescaled(&self, dt: f64) -> FrozenKernel {
        let stretch = dt.powf(1.0 / self.alpha);
        FrozenKernel {
            radial: rescale_radial(&self.radial, stretch),
            angular: self.angular.clone(),
            ..*self
        }
    }
}

/// The comparison profile
/// $\rho^\beta_\gamma(t,x) = t^{\gamma/\alpha}\,(|x|^\beta \wedge 1) /
/// (t^{1/\alpha} + |x|)^{d+\alpha}$.
pub fn rho(beta: f64, gamma: f64, alpha: f64, d: usize, t: f64, x: Point) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::config(format!("field `t`: rho requires t > 0, got {t}")));
    }
    let r = geom::norm(x);
    Ok(t.powf(gamma / alpha) * r.powf(beta).min(1.0) / (t.powf(1.0 / alpha) + r).powf(d as f64 + alpha))
}

/// The drift compensation term $z^{(\alpha)}$: z for alpha in (1,2), z
/// restricted to |z| < cutoff at alpha = 1, and 0 below.
pub fn compensator(alpha: f64, z: Point, cutoff: f64) -> Point {
    if alpha > 1.0 {
        z
    } else if alpha == 1.0 && geom::norm(z) < cutoff {
        z
    } else {
        ZERO
    }
}

/// Zeroth angular moment $\int_S A\,d\sigma$.
pub fn angular_moment0(a: &AngularFactor, d: usize) -> f64 {
    match a {
        AngularFactor::Iso => geom::sphere_area(d),
        AngularFactor::Axial { .. } => 0.0,
        AngularFactor::CosAxial { freq, .. } => match d {
            1 => 2.0 * freq.cos(),
            2 => {
                // int_0^{2pi} cos(freq cos phi) dphi, spectrally accurate
                // trapezoid on the periodic integrand
                let n = 256;
                (0..n)
                    .map(|k| {
                        let phi = std::f64::consts::TAU * k as f64 / n as f64;
                        (freq * phi.cos()).cos()
                    })
                    .sum::<f64>()
                    * std::f64::consts::TAU
                    / n as f64
            }
            3 => {
                if freq.abs() < 1e-8 {
                    2.0 * std::f64::consts::TAU * (1.0 - freq * freq / 6.0)
                } else {
                    2.0 * std::f64::consts::TAU * freq.sin() / freq
                }
            }
            _ => panic!("dimension must be 1, 2, or 3"),
        },
    }
}

/// First angular moment $\int_S \omega\,A(\omega)\,d\sigma$.
pub fn angular_moment1(a: &AngularFactor, d: usize) -> Point {
    match a {
        AngularFactor::Iso | AngularFactor::CosAxial { .. } => ZERO,
        AngularFactor::Axial { axis } => geom::scale(*axis, geom::sphere_area(d) / d as f64),
    }
}

/// Second angular moment $\int_S \omega\,\omega^T A(\omega)\,d\sigma$ by
/// sphere quadrature.
pub fn angular_moment2(a: &AngularFactor, d: usize) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (w, wt) in geom::sphere_rule(d, 48) {
        let v = wt * a.eval(w);
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] += v * w[i] * w[j];
            }
        }
    }
    out
}

/// $\int_0^{hi} r^{-p} R(r)\,dr$ for p < 1 (integrable core moment).
pub fn radial_core_moment(radial: &RadialFactor, p: f64, hi: f64) -> f64 {
    assert!(p < 1.0, "core moment requires exponent below 1");
    match radial {
        RadialFactor::One => hi.powf(1.0 - p) / (1.0 - p),
        RadialFactor::Cos { freq } => {
            if *freq == 0.0 {
                hi.powf(1.0 - p) / (1.0 - p)
            } else {
                quad::gauss_jacobi_on(48, 0.0, -p, 0.0, hi).integrate(|r| (freq * r).cos())
            }
        }
    }
}

/// $\int_{lo}^\infty r^{-p} R(r)\,dr$ for p > 1 (convergent tail moment).
pub fn radial_tail_moment(radial: &RadialFactor, p: f64, lo: f64) -> f64 {
    assert!(p > 1.0, "tail moment requires exponent above 1");
    match radial {
        RadialFactor::One => lo.powf(1.0 - p) / (p - 1.0),
        RadialFactor::Cos { freq } => {
            if *freq == 0.0 {
                lo.powf(1.0 - p) / (p - 1.0)
            } else {
                quad::osc_power_cos(p, *freq, lo)
            }
        }
    }
}

/// The translation between the |z| <= 1 drift convention and the
/// $z^{(\alpha)}$ convention over [t, s]:
/// $\int_t^s b(r)\,dr$ with b the convention-gap drift (zero at alpha = 1,
/// the small-jump mean below, the large-jump mean above).
pub fn drift_conversion(spec: &KernelSpec, d: usize, t: f64, s: f64) -> Result<Point> {
    spec.validate(d)?;
    if !spec.x_independent() {
        return Err(Error::config(
            "drift conversion requires an x-independent kernel",
        ));
    }
    if !(s > t) {
        return Err(Error::config(format!("field `s`: must exceed t = {t}, got {s}")));
    }
    let alpha = spec.alpha;
    if alpha == 1.0 {
        return Ok(ZERO);
    }
    let (angular, radial) = spec.factors();
    let m1 = angular_moment1(&angular, d);
    if geom::norm(m1) == 0.0 {
        return Ok(ZERO);
    }
    let mint = spec.modulation_integral(t, s, ZERO);
    let (sign, radial_part) = if alpha < 1.0 {
        (-1.0, radial_core_moment(&radial, alpha, 1.0))
    } else {
        (1.0, radial_tail_moment(&radial, alpha, 1.0))
    };
    Ok(geom::scale(m1, sign * spec.level() * mint * radial_part))
}

/// Outcome of sampling-based admissibility checking.
#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    pub accepted: bool,
    pub samples: usize,
    /// Worst observed excess of a kernel value over the ellipticity window,
    /// zero when all samples stayed inside.
    pub worst_bound_violation: f64,
    /// Worst observed |kappa(t,x,z) - kappa(t,y,z)| / (kappa0 |x-y|^beta).
    pub worst_holder_ratio: f64,
    /// For alpha = 1: the largest annular first moment over the radii
    /// ladder; must vanish for admissibility.
    pub alpha_one_moment_max: Option<f64>,
    pub rejection: Option<String>,
}

/// Samples kernel values over (t, x, z) triples and checks the ellipticity
/// window, the Holder modulus, and (at alpha = 1) the vanishing of annular
/// first moments over a ladder of radii.
pub fn validate_kernel(
    spec: &KernelSpec,
    d: usize,
    sample_budget: usize,
) -> Result<AdmissibilityReport> {
    if sample_budget < 1000 {
        return Err(Error::config(format!(
            "field `sample_budget`: at least 1000 samples required, got {sample_budget}"
        )));
    }
    spec.validate_shape(d)?;
    let mut rejection = spec.validate(d).err().map(|e| e.to_string());

    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0x5eed);
    let mut worst_bound = 0.0f64;
    let mut worst_pt = (0.0, ZERO, ZERO);
    let mut worst_holder = 0.0f64;
    let lo = 1.0 / spec.kappa0;
    let hi = spec.kappa0;
    for _ in 0..sample_budget {
        let t = 2.0 * rng.random::<f64>();
        let mut x = ZERO;
        let mut y = ZERO;
        for c in 0..d {
            x[c] = 6.0 * rng.random::<f64>() - 3.0;
            y[c] = 6.0 * rng.random::<f64>() - 3.0;
        }
        let dir = geom::sample_direction(d, &mut rng);
        let r = 10f64.powf(6.0 * rng.random::<f64>() - 3.0);
        let z = geom::scale(dir, r);
        let v = spec.eval(t, x, z);
        let excess = (v - hi).max(lo - v).max(0.0);
        if excess > worst_bound {
            worst_bound = excess;
            worst_pt = (t, x, z);
        }
        let sep = geom::norm(geom::sub(x, y));
        if sep > 1e-9 {
            let ratio = (v - spec.eval(t, y, z)).abs() / (spec.kappa0 * sep.powf(spec.beta));
            worst_holder = worst_holder.max(ratio);
        }
    }
    if worst_bound > 1e-8 && rejection.is_none() {
        let (t, x, z) = worst_pt;
        rejection = Some(format!(
            "kernel range violated at (t, x, z) = ({t:.4}, {x:?}, {z:?}): \
             excess {worst_bound:.3e} over [{lo:.4}, {hi:.4}]"
        ));
    }
    if worst_holder > 1.0 + 1e-8 && rejection.is_none() {
        rejection = Some(format!(
            "Holder modulus violated: observed ratio {worst_holder:.6} exceeds 1"
        ));
    }

    let alpha_one_moment_max = if spec.alpha == 1.0 {
        let ladder = [1e-2f64, 1e-1, 1.0, 1e1, 1e2];
        let sphere = geom::sphere_rule(d, 32);
        let mut max_norm = 0.0f64;
        for probe in 0..4 {
            let t = 0.53 * probe as f64;
            let mut x = ZERO;
            for c in 0..d {
                x[c] = 0.8 * probe as f64 - 1.1;
            }
            for pair in ladder.windows(2) {
                let rule = quad::gauss_legendre_on(16, pair[0].ln(), pair[1].ln());
                let mut v = ZERO;
                for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
                    let radius = u.exp();
                    for &(omega, ws) in &sphere {
                        let k = spec.eval(t, x, geom::scale(omega, radius));
                        v = geom::add(v, geom::scale(omega, w * ws * k));
                    }
                }
                max_norm = max_norm.max(geom::norm(v));
            }
        }
        if max_norm > 1e-8 && rejection.is_none() {
            rejection = Some(format!(
                "annular first moment of z kappa / |z|^{{d+1}} reaches {max_norm:.3e}, \
                 violating the alpha = 1 cancellation requirement"
            ));
        }
        Some(max_norm)
    } else {
        None
    };

    Ok(AdmissibilityReport {
        accepted: rejection.is_none(),
        samples: sample_budget,
        worst_bound_violation: worst_bound,
        worst_holder_ratio: worst_holder,
        alpha_one_moment_max,
        rejection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn holder_example() -> KernelSpec {
        // kappa(t, x, z) = 2 + sin(x_1) cos(|z|)
        KernelSpec {
            alpha: 1.5,
            kappa0: 3.0,
            beta: 1.0,
            beta_prime: 0.0,
            form: KernelForm::HolderSpace {
                level: 2.0,
                amp: 0.5,
                wave: [1.0, 0.0, 0.0],
                angular: AngularFactor::Iso,
                radial: RadialFactor::Cos { freq: 1.0 },
            },
        }
    }

    #[test]
    fn registry_json_shape_roundtrip() {
        let text = r#"{
            "alpha": 1.5, "kappa0": 3.0, "beta": 1.0,
            "family": "holder_space",
            "params": {
                "level": 2.0, "amp": 0.5, "wave": [1.0, 0.0, 0.0],
                "angular": {"kind": "iso"},
                "radial": {"kind": "cos", "freq": 1.0}
            }
        }"#;
        let spec: KernelSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec, holder_example());
        let out = serde_json::to_value(&spec).unwrap();
        assert_eq!(out["family"], "holder_space");
        assert_eq!(out["params"]["level"], 2.0);
        let back: KernelSpec = serde_json::from_value(out).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn holder_example_evaluates_in_closed_form() {
        let spec = holder_example();
        for (t, x1, z) in [
            (0.0, 0.3f64, [0.5, 0.0, 0.0]),
            (1.0, -1.2, [0.0, 2.5, 0.0]),
            (0.7, 2.0, [1.0, -1.0, 0.5]),
        ] {
            let x = [x1, 0.0, 0.0];
            let r = geom::norm(z);
            let expect = 2.0 + x1.sin() * r.cos();
            assert_relative_eq!(spec.eval(t, x, z), expect, max_relative = 1e-14);
        }
    }

    #[test]
    fn constant_kernel_is_accepted_with_zero_violation() {
        let spec = KernelSpec::constant(1.5, 2.0, 1.0);
        let report = validate_kernel(&spec, 1, 2000).unwrap();
        assert!(report.accepted);
        assert_eq!(report.worst_bound_violation, 0.0);
        assert!(report.alpha_one_moment_max.is_none());
    }

    #[test]
    fn holder_example_is_accepted() {
        let report = validate_kernel(&holder_example(), 2, 10_000).unwrap();
        assert!(report.accepted, "{:?}", report.rejection);
        assert_eq!(report.worst_bound_violation, 0.0);
        assert!(report.worst_holder_ratio <= 1.0 + 1e-8);
    }

    #[test]
    fn odd_angular_part_rejected_at_alpha_one() {
        // kappa = 2 + z_1 / (2 |z|)
        let spec = KernelSpec {
            alpha: 1.0,
            kappa0: 3.0,
            beta: 1.0,
            beta_prime: 0.0,
            form: KernelForm::TimeModulated {
                level: 2.0,
                amp: 0.25,
                freq: 0.0,
                phase: 0.0,
                angular: AngularFactor::Axial { axis: [1.0, 0.0, 0.0] },
                radial: RadialFactor::One,
            },
        };
        let report = validate_kernel(&spec, 1, 2000).unwrap();
        assert!(!report.accepted);
        let why = report.rejection.unwrap();
        assert!(why.contains("alpha = 1"), "{why}");
        // per decade annulus the moment is level * amp * 2 * ln 10 = ln 10
        let moment = report.alpha_one_moment_max.unwrap();
        assert_relative_eq!(moment, 10f64.ln(), max_relative = 1e-10);
    }

    #[test]
    fn rho_pinned_values() {
        assert_relative_eq!(
            rho(0.0, 1.0, 1.0, 1, 1.0, ZERO).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            rho(0.0, 1.0, 1.0, 1, 1.0, [1.0, 0.0, 0.0]).unwrap(),
            0.25,
            max_relative = 1e-15
        );
        // t^{0} (|x| wedge 1) / (t^{1/2} + |x|)^{3} at t = 16, |x| = 2
        assert_relative_eq!(
            rho(1.0, 0.0, 2.0, 1, 16.0, [2.0, 0.0, 0.0]).unwrap(),
            1.0 / 216.0,
            max_relative = 1e-14
        );
        assert!(rho(0.0, 1.0, 1.0, 1, 0.0, ZERO).is_err());
        assert!(rho(0.0, 1.0, 1.0, 1, -0.5, ZERO).is_err());
    }

    #[test]
    fn rho_scaling_invariance() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let alpha = 0.3 + 1.6 * rng.random::<f64>();
            let t = 0.1 + rng.random::<f64>();
            let lam = 10f64.powf(2.0 * rng.random::<f64>() - 1.0);
            let d = 1 + (rng.random::<u32>() % 3) as usize;
            let mut x = ZERO;
            for c in 0..d {
                x[c] = 4.0 * rng.random::<f64>() - 2.0;
            }
            let base = rho(0.0, alpha, alpha, d, t, x).unwrap();
            let scaled = rho(
                0.0,
                alpha,
                alpha,
                d,
                lam * t,
                geom::scale(x, lam.powf(1.0 / alpha)),
            )
            .unwrap();
            assert_relative_eq!(
                scaled,
                lam.powf(-(d as f64) / alpha) * base,
                max_relative = 1e-11
            );
        }
    }

    #[test]
    fn compensator_cases() {
        assert_eq!(compensator(0.7, [3.0, 1.0, 0.0], 1.0), ZERO);
        assert_eq!(compensator(1.5, [2.0, 0.0, 0.0], 1.0), [2.0, 0.0, 0.0]);
        assert_eq!(compensator(1.0, [2.0, 0.0, 0.0], 1.0), ZERO);
        assert_eq!(compensator(1.0, [0.3, 0.0, 0.0], 1.0), [0.3, 0.0, 0.0]);
        // positive homogeneity away from alpha = 1
        let z = [0.4, -0.2, 0.1];
        for alpha in [0.4, 1.3] {
            let a = compensator(alpha, geom::scale(z, 5.0), 1.0);
            let b = geom::scale(compensator(alpha, z, 1.0), 5.0);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn drift_conversion_vanishes_for_even_kernels() {
        let spec = KernelSpec {
            alpha: 1.5,
            kappa0: 4.0,
            beta: 1.0,
            beta_prime: 0.0,
            form: KernelForm::TimeModulated {
                level: 1.0,
                amp: 0.4,
                freq: 0.3,
                phase: 0.1,
                angular: AngularFactor::CosAxial { axis: [1.0, 0.0, 0.0], freq: 2.0 },
                radial: RadialFactor::Cos { freq: 1.0 },
            },
        };
        assert_eq!(drift_conversion(&spec, 2, 0.0, 1.0).unwrap(), ZERO);
        let even_alpha_one = KernelSpec::constant(1.0, 2.0, 1.0);
        assert_eq!(drift_conversion(&even_alpha_one, 1, 0.0, 2.0).unwrap(), ZERO);
    }

    #[test]
    fn drift_conversion_matches_tail_quadrature() {
        // kappa(z) = 1 + sgn(z)/2 in d = 1 at alpha = 1.5
        let spec = KernelSpec {
            alpha: 1.5,
            kappa0: 2.0,
            beta: 1.0,
            beta_prime: 0.0,
            form: KernelForm::TimeModulated {
                level: 1.0,
                amp: 0.5,
                freq: 0.0,
                phase: 0.0,
                angular: AngularFactor::Axial { axis: [1.0, 0.0, 0.0] },
                radial: RadialFactor::One,
            },
        };
        let got = drift_conversion(&spec, 1, 0.0, 1.0).unwrap();

        // oracle: direct 1-d quadrature of int_{|z|>1} z kappa(z)/|z|^{2.5} dz
        // on log panels (dr = r du) plus the measured power tail
        let mut oracle = 0.0;
        let rule = quad::gauss_legendre_on(64, 0.0, 9.0f64.ln());
        for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
            let r = u.exp();
            let diff = spec.eval(0.0, ZERO, [r, 0.0, 0.0]) - spec.eval(0.0, ZERO, [-r, 0.0, 0.0]);
            oracle += w * r * (r * diff * r.powf(-2.5));
        }
        let rbig = 9.0;
        let tail_const =
            spec.eval(0.0, ZERO, [rbig, 0.0, 0.0]) - spec.eval(0.0, ZERO, [-rbig, 0.0, 0.0]);
        oracle += tail_const * 2.0 * rbig.powf(-0.5);
        assert_relative_eq!(got[0], oracle, max_relative = 1e-10);
        assert_eq!(got[1], 0.0);
        // closed form for this kernel: int_1^inf r^{-1.5} dr = 2
        assert_relative_eq!(got[0], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn modulation_integral_matches_quadrature() {
        let spec = KernelSpec {
            alpha: 1.2,
            kappa0: 3.0,
            beta: 0.5,
            beta_prime: 0.0,
            form: KernelForm::TimeModulated {
                level: 1.0,
                amp: 0.5,
                freq: 0.7,
                phase: 0.2,
                angular: AngularFactor::Iso,
                radial: RadialFactor::One,
            },
        };
        let (t, s) = (0.3, 1.9);
        let quad_val = quad::gauss_legendre_on(48, t, s).integrate(|r| spec.modulation(r, ZERO));
        assert_relative_eq!(
            spec.modulation_integral(t, s, ZERO),
            quad_val,
            max_relative = 1e-13
        );
    }

    #[test]
    fn rescaled_kernel_pointwise_identity() {
        let spec = KernelSpec {
            alpha: 1.5,
            kappa0: 3.0,
            beta: 1.0,
            beta_prime: 0.0,
            form: KernelForm::TimeModulated {
                level: 1.0,
                amp: 0.5,
                freq: 1.0,
                phase: -0.25,
                angular: AngularFactor::Iso,
                radial: RadialFactor::Cos { freq: 0.8 },
            },
        };
        let (t, s) = (0.4, 2.4);
        let tilde = spec.rescaled(t, s).unwrap();
        let stretch = (s - t).powf(1.0 / spec.alpha);
        for (r, w) in [(0.0, [0.7, 0.0, 0.0]), (0.5, [2.0, 0.0, 0.0]), (1.0, [0.1, 0.0, 0.0])] {
            assert_relative_eq!(
                tilde.eval(r, ZERO, w),
                spec.eval(t + (s - t) * r, ZERO, geom::scale(w, stretch)),
                max_relative = 1e-13
            );
        }
        assert!(holder_example().rescaled(0.0, 1.0).is_err());
    }

    #[test]
    fn frozen_average_matches_time_quadrature() {
        let spec = KernelSpec {
            alpha: 0.8,
            kappa0: 3.0,
            beta: 1.0,
            beta_prime: 0.0,
            form: KernelForm::TimeModulated {
                level: 1.5,
                amp: 0.4,
                freq: 0.9,
                phase: 0.3,
                angular: AngularFactor::CosAxial { axis: [0.0, 1.0, 0.0], freq: 1.0 },
                radial: RadialFactor::Cos { freq: 2.0 },
            },
        };
        let (t, s) = (0.2, 1.1);
        let frozen = spec.frozen_time_avg(t, s, ZERO);
        let z = [0.6, -0.4, 0.0];
        let avg = quad::gauss_legendre_on(48, t, s).integrate(|r| spec.eval(r, ZERO, z)) / (s - t);
        assert_relative_eq!(frozen.eval(z), avg, max_relative = 1e-13);
    }

    #[test]
    fn angular_moments_match_sphere_quadrature() {
        let cos_ax = AngularFactor::CosAxial { axis: [0.0, 0.0, 1.0], freq: 1.3 };
        for d in [2usize, 3] {
            let ax = if d == 2 {
                AngularFactor::CosAxial { axis: [0.6, 0.8, 0.0], freq: 1.3 }
            } else {
                cos_ax.clone()
            };
            let quad_m0: f64 = geom::sphere_rule(d, 64)
                .iter()
                .map(|&(w, wt)| wt * ax.eval(w))
                .sum();
            assert_relative_eq!(angular_moment0(&ax, d), quad_m0, max_relative = 1e-11);
        }
        // closed form in d = 3: 4 pi sin(c)/c
        assert_relative_eq!(
            angular_moment0(&cos_ax, 3),
            4.0 * std::f64::consts::PI * 1.3f64.sin() / 1.3,
            max_relative = 1e-12
        );
        // d = 2 reference: 2 pi J_0(1.3), 30-digit value
        let in_plane = AngularFactor::CosAxial { axis: [1.0, 0.0, 0.0], freq: 1.3 };
        assert_relative_eq!(
            angular_moment0(&in_plane, 2),
            3.8961151788007886071332581586,
            max_relative = 1e-13
        );
        for d in 1..=3 {
            let axis = if d == 1 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let axial = AngularFactor::Axial { axis };
            let m1 = angular_moment1(&axial, d);
            let mut quad_m1 = ZERO;
            for (w, wt) in geom::sphere_rule(d, 64) {
                quad_m1 = geom::add(quad_m1, geom::scale(w, wt * axial.eval(w)));
            }
            for c in 0..3 {
                assert_relative_eq!(m1[c], quad_m1[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn radial_core_moment_matches_series() {
        // int_0^1 r^{-1/2} cos(a r) dr = sum_k (-a^2)^k / ((2k)! (2k + 1/2))
        let a = 1.3f64;
        let mut series = 0.0;
        let mut term_num = 1.0f64;
        for k in 0..30 {
            let kk = 2 * k;
            series += term_num / (kk as f64 + 0.5);
            term_num *= -a * a / (((kk + 1) * (kk + 2)) as f64);
        }
        let got = radial_core_moment(&RadialFactor::Cos { freq: a }, 0.5, 1.0);
        assert_relative_eq!(got, series, max_relative = 1e-13);
    }

    #[test]
    fn validation_rejects_out_of_range_parameters() {
        let mut spec = KernelSpec::constant(2.5, 2.0, 1.0);
        let err = spec.validate(1).unwrap_err().to_string();
        assert!(err.contains("alpha"), "{err}");
        spec.alpha = 1.5;
        spec.kappa0 = 0.9;
        let err = spec.validate(1).unwrap_err().to_string();
        assert!(err.contains("kappa0"), "{err}");
        // level outside the ellipticity window
        let spec = KernelSpec::constant(1.5, 2.0, 5.0);
        let err = spec.validate(1).unwrap_err().to_string();
        assert!(err.contains("level"), "{err}");
    }
}
