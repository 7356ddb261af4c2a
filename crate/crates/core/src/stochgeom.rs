//! Link-level quantities under Poisson interference and Rayleigh fading.
//!
//! Pathloss follows `l(r) = K·r^(−a)` with `a = coeff/10` and `K = 10^(−intercept/10)`.
//! For that family the radial interference integral reduces to
//! `∫_e^∞ x·l(r)/(1 + x·l(r)) r dr = r0²·F(e/r0)` with `r0 = (x·K)^(1/a)` and
//! `F(v) = ∫_v^∞ u/(1 + u^a) du`, which the coverage and rate evaluations use.
//! [`laplace_interference`] keeps the direct radial quadrature as the reference.

use std::cell::RefCell;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};

/// Distance-based pathloss `coeff·log10(r) + intercept` in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossModel {
    /// dB per decade of distance.
    pub exponent_coeff: f64,
    /// dB at 1 m.
    pub intercept: f64,
}

impl PathlossModel {
    pub fn new(exponent_coeff: f64, intercept: f64) -> Result<Self> {
        let m = Self {
            exponent_coeff,
            intercept,
        };
        m.validate()?;
        Ok(m)
    }

    /// Macro-cell model used for links received at a base station.
    pub fn cellular() -> Self {
        Self {
            exponent_coeff: 37.6,
            intercept: 15.3,
        }
    }

    /// Short-range model used for links received at a device.
    pub fn d2d() -> Self {
        Self {
            exponent_coeff: 40.0,
            intercept: 28.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exponent_coeff > 20.0) || !self.exponent_coeff.is_finite() {
            return Err(Error::Model(format!(
                "pathloss exponent coefficient must exceed 20 dB/decade for interference to converge, got {}",
                self.exponent_coeff
            )));
        }
        if !self.intercept.is_finite() {
            return Err(Error::Model("pathloss intercept must be finite".into()));
        }
        Ok(())
    }

    /// Power-law exponent `a`.
    pub fn exponent(&self) -> f64 {
        self.exponent_coeff / 10.0
    }

    /// Linear gain at 1 m.
    pub fn k(&self) -> f64 {
        10f64.powf(-self.intercept / 10.0)
    }

    fn gain_unchecked(&self, r: f64) -> f64 {
        10f64.powf(-(self.exponent_coeff * r.log10() + self.intercept) / 10.0)
    }
}

/// Linear pathloss gain at distance `r` metres.
pub fn pathloss_gain(r: f64, model: &PathlossModel) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("distance must be positive and finite, got {r}")));
    }
    Ok(model.gain_unchecked(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Cellular,
    IntraD2D,
    InterD2D,
}

impl LinkKind {
    pub const ALL: [LinkKind; 3] = [LinkKind::Cellular, LinkKind::IntraD2D, LinkKind::InterD2D];

    pub fn as_str(&self) -> &'static str {
        match self {
            LinkKind::Cellular => "cellular",
            LinkKind::IntraD2D => "intra_d2d",
            LinkKind::InterD2D => "inter_d2d",
        }
    }
}

/// A homogeneous interferer field seen from the receiver at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceField {
    /// Interferers per m².
    pub density: f64,
    /// Transmit power in W.
    pub power: f64,
    /// Interference-free radius around the receiver, m.
    pub exclusion_radius: f64,
}

impl InterferenceField {
    fn validate(&self) -> Result<()> {
        if !(self.density >= 0.0) || !self.density.is_finite() {
            return Err(Error::Domain(format!("interferer density must be >= 0, got {}", self.density)));
        }
        if !(self.power > 0.0) || !self.power.is_finite() {
            return Err(Error::Domain(format!("interferer power must be > 0, got {}", self.power)));
        }
        if !(self.exclusion_radius >= 0.0) || !self.exclusion_radius.is_finite() {
            return Err(Error::Domain(format!(
                "exclusion radius must be >= 0, got {}",
                self.exclusion_radius
            )));
        }
        Ok(())
    }
}

/// Exclusion rule for a field attached to a link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    Radius(f64),
    /// No interferer closer than the serving transmitter (out-of-cell cellular users).
    ServingDistance,
}

/// Interferer field plus the pathloss it experiences towards the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub density: f64,
    pub power: f64,
    pub exclusion: Exclusion,
    pub pathloss: PathlossModel,
}

impl FieldSpec {
    pub fn at_distance(&self, d: f64) -> InterferenceField {
        InterferenceField {
            density: self.density,
            power: self.power,
            exclusion_radius: match self.exclusion {
                Exclusion::Radius(r) => r,
                Exclusion::ServingDistance => d,
            },
        }
    }
}

/// Radio constants shared by all operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConstants {
    /// Noise power over the full band for base-station receivers, W.
    pub noise_power_cellular: f64,
    /// Noise power over the full band for device receivers, W.
    pub noise_power_d2d: f64,
    /// D2D link distance, m.
    pub d2d_distance: f64,
    pub tx_power_cellular: f64,
    pub tx_power_d2d: f64,
    pub tx_power_inter_d2d: f64,
}

impl RadioConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("noise_power_cellular", self.noise_power_cellular),
            ("noise_power_d2d", self.noise_power_d2d),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("d2d_distance", self.d2d_distance),
            ("tx_power_cellular", self.tx_power_cellular),
            ("tx_power_d2d", self.tx_power_d2d),
            ("tx_power_inter_d2d", self.tx_power_inter_d2d),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// D2D link SNR over the full band, `P_d·l(d)/σ²`; `None` when noise is zero.
    pub fn eta(&self, d2d_model: &PathlossModel) -> Option<f64> {
        if self.noise_power_d2d > 0.0 {
            Some(self.tx_power_d2d * d2d_model.gain_unchecked(self.d2d_distance) / self.noise_power_d2d)
        } else {
            None
        }
    }
}

/// Thermal noise in W for `bandwidth_hz` at 290 K plus a noise figure.
pub fn thermal_noise(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    dbm_to_watts(-174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0 - 3.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Law of the serving-link distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkDistance {
    Fixed(f64),
    /// Distance to the nearest base station of a PPP with this density.
    NearestBs { bs_density: f64 },
}

/// The desired link of a typical receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub kind: LinkKind,
    pub power: f64,
    pub pathloss: PathlossModel,
    pub distance: LinkDistance,
    /// Full-band noise power at the receiver.
    pub noise_power: f64,
}

impl Link {
    /// The standard link for `kind`: cellular links are served by the nearest BS and
    /// received with the cellular model; D2D links have fixed length.
    pub fn for_kind(kind: LinkKind, consts: &RadioConstants, pathloss: &PathlossSet, bs_density: f64) -> Self {
        match kind {
            LinkKind::Cellular => Link {
                kind,
                power: consts.tx_power_cellular,
                pathloss: pathloss.cellular,
                distance: LinkDistance::NearestBs { bs_density },
                noise_power: consts.noise_power_cellular,
            },
            LinkKind::IntraD2D => Link {
                kind,
                power: consts.tx_power_d2d,
                pathloss: pathloss.d2d,
                distance: LinkDistance::Fixed(consts.d2d_distance),
                noise_power: consts.noise_power_d2d,
            },
            LinkKind::InterD2D => Link {
                kind,
                power: consts.tx_power_inter_d2d,
                pathloss: pathloss.d2d,
                distance: LinkDistance::Fixed(consts.d2d_distance),
                noise_power: consts.noise_power_d2d,
            },
        }
    }
}

/// Pathloss models by receiver type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossSet {
    /// Any link received at a base station.
    pub cellular: PathlossModel,
    /// Any link received at a device.
    pub d2d: PathlossModel,
}

impl Default for PathlossSet {
    fn default() -> Self {
        Self {
            cellular: PathlossModel::cellular(),
            d2d: PathlossModel::d2d(),
        }
    }
}

/// Laplace transform of the aggregate interference of `field` at `s`, by direct
/// radial quadrature of `exp(−2π·λ·∫_e^∞ sPl(r)/(1+sPl(r)) r dr)`.
pub fn laplace_interference(field: &InterferenceField, s: f64, model: &PathlossModel, tol: &Tolerance) -> Result<f64> {
    field.validate()?;
    model.validate()?;
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("s must be >= 0, got {s}")));
    }
    if field.density == 0.0 || s == 0.0 {
        return Ok(1.0);
    }
    let x = s * field.power;
    let integrand = |r: f64| {
        if r <= 0.0 {
            return 0.0;
        }
        let g = x * model.gain_unchecked(r);
        g / (1.0 + g) * r
    };
    // the integrand turns over near r0, so start panels on that scale
    let r0 = (x * model.k()).powf(1.0 / model.exponent());
    let first = r0.max(1e-3 * field.exclusion_radius.max(1.0)).max(1e-9);
    let int = quad::integrate_panels(integrand, field.exclusion_radius, first, tol)?;
    Ok((-2.0 * PI * field.density * int.value).exp())
}

/// Same as [`laplace_interference`] through the power-law reduction.
pub fn laplace_power_law(field: &InterferenceField, s: f64, model: &PathlossModel, tol: &Tolerance) -> Result<f64> {
    field.validate()?;
    model.validate()?;
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("s must be >= 0, got {s}")));
    }
    if field.density == 0.0 || s == 0.0 {
        return Ok(1.0);
    }
    let a = model.exponent();
    let r0 = (s * field.power * model.k()).powf(1.0 / a);
    let f = tail_integral(a, field.exclusion_radius / r0, tol)?;
    Ok((-2.0 * PI * field.density * r0 * r0 * f).exp())
}

/// `F(v) = ∫_v^∞ u/(1 + u^a) du` for `a > 2`.
pub fn tail_integral(a: f64, v: f64, tol: &Tolerance) -> Result<f64> {
    if !(a > 2.0) {
        return Err(Error::Model(format!("tail integral diverges for exponent {a} <= 2")));
    }
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("lower limit must be >= 0, got {v}")));
    }
    let full = (PI / a) / (2.0 * PI / a).sin();
    if v == 0.0 {
        return Ok(full);
    }
    let g = |u: f64| u / (1.0 + u.powf(a));
    if v <= 1.0 {
        let head = quad::integrate(g, 0.0, v, tol)?;
        Ok(full - head.value)
    } else {
        // u = v·w turns the tail into v^(2−a)·∫_1^∞ w/(v^(−a) + w^a) dw
        let va = v.powf(-a);
        let r = quad::integrate_semi_infinite(|w: f64| w / (va + w.powf(a)), 1.0, 1.0, tol)?;
        Ok(v.powf(2.0 - a) * r.value)
    }
}

fn check_link(link: &Link) -> Result<()> {
    link.pathloss.validate()?;
    if !(link.power > 0.0) {
        return Err(Error::Domain(format!("link power must be > 0, got {}", link.power)));
    }
    if !(link.noise_power >= 0.0) {
        return Err(Error::Domain(format!("noise power must be >= 0, got {}", link.noise_power)));
    }
    match link.distance {
        LinkDistance::Fixed(d) if !(d > 0.0) => Err(Error::Domain(format!("link distance must be > 0, got {d}"))),
        LinkDistance::NearestBs { bs_density } if !(bs_density > 0.0) => {
            Err(Error::Domain(format!("BS density must be > 0, got {bs_density}")))
        }
        _ => Ok(()),
    }
}

fn check_fields(fields: &[FieldSpec]) -> Result<()> {
    for f in fields {
        f.pathloss.validate()?;
        f.at_distance(1.0).validate()?;
    }
    Ok(())
}

// log of the joint Laplace transform at link length d
fn log_laplace_at(link: &Link, gamma: f64, d: f64, fields: &[FieldSpec], tol: &Tolerance) -> Result<f64> {
    let s = gamma / (link.power * link.pathloss.gain_unchecked(d));
    let mut acc = 0.0;
    for f in fields {
        if f.density == 0.0 {
            continue;
        }
        let a = f.pathloss.exponent();
        let r0 = (s * f.power * f.pathloss.k()).powf(1.0 / a);
        let e = f.at_distance(d).exclusion_radius;
        acc -= 2.0 * PI * f.density * r0 * r0 * tail_integral(a, e / r0, tol)?;
    }
    Ok(acc)
}

/// Probability that the SINR of `link` exceeds `gamma` when it occupies a fraction
/// `beta_m` of the band.
pub fn coverage_probability(link: &Link, gamma: f64, beta_m: f64, fields: &[FieldSpec], tol: &Tolerance) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!("SINR target must be >= 0, got {gamma}")));
    }
    if !(0.0..=1.0).contains(&beta_m) {
        return Err(Error::Domain(format!("band fraction must be in [0, 1], got {beta_m}")));
    }
    check_link(link)?;
    check_fields(fields)?;
    coverage_unchecked(link, gamma, beta_m, fields, tol)
}

fn coverage_unchecked(link: &Link, gamma: f64, beta_m: f64, fields: &[FieldSpec], tol: &Tolerance) -> Result<f64> {
    if gamma == 0.0 {
        return Ok(1.0);
    }
    let noise = link.noise_power * beta_m;
    match link.distance {
        LinkDistance::Fixed(d) => {
            let s = gamma / (link.power * link.pathloss.gain_unchecked(d));
            let lp = log_laplace_at(link, gamma, d, fields, tol)?;
            Ok((lp - noise * s).exp().clamp(0.0, 1.0))
        }
        LinkDistance::NearestBs { bs_density } => {
            let a = link.pathloss.exponent();
            // every term scales with d² when exponents match and exclusions are 0 or d
            let scales_with_d2 = fields.iter().all(|f| {
                f.density == 0.0
                    || ((f.pathloss.exponent() - a).abs() < 1e-15
                        && matches!(f.exclusion, Exclusion::ServingDistance | Exclusion::Radius(0.0)))
            });
            if noise == 0.0 && scales_with_d2 {
                let c = -log_laplace_at(link, gamma, 1.0, fields, tol)?;
                let pl = PI * bs_density;
                return Ok((pl / (pl + c)).clamp(0.0, 1.0));
            }
            let pl = PI * bs_density;
            let noise_coef = noise * gamma / (link.power * link.pathloss.k());
            let failure = RefCell::new(None);
            let integrand = |d: f64| {
                if d <= 0.0 {
                    return 0.0;
                }
                match log_laplace_at(link, gamma, d, fields, tol) {
                    Ok(lp) => 2.0 * pl * d * (lp - pl * d * d - noise_coef * d.powf(a)).exp(),
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        0.0
                    }
                }
            };
            let scale = 1.0 / pl.sqrt();
            let r = quad::integrate_semi_infinite(integrand, 0.0, scale, tol)?;
            if let Some(e) = failure.into_inner() {
                return Err(e);
            }
            Ok(r.value.clamp(0.0, 1.0))
        }
    }
}

/// Average spectral efficiency `ν·∫_0^∞ P(γ)/(1+γ) dγ` in nats per symbol.
///
/// The γ axis is integrated in `x = ln γ`, where both tails decay at least
/// exponentially, with each half mapped to `[0, 1)`.
pub fn spectral_efficiency(
    link: &Link,
    beta_m: f64,
    activity: f64,
    fields: &[FieldSpec],
    tol: &Tolerance,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&activity) {
        return Err(Error::Domain(format!("activity must be in [0, 1], got {activity}")));
    }
    if !(0.0..=1.0).contains(&beta_m) {
        return Err(Error::Domain(format!("band fraction must be in [0, 1], got {beta_m}")));
    }
    check_link(link)?;
    check_fields(fields)?;
    if activity == 0.0 {
        return Ok(0.0);
    }
    Ok(activity * raw_rate(link, beta_m, fields, tol)?)
}

fn raw_rate(link: &Link, beta_m: f64, fields: &[FieldSpec], tol: &Tolerance) -> Result<f64> {
    let failure = RefCell::new(None);
    let eval = |x: f64| -> f64 {
        let g = x.exp();
        if g == 0.0 || !g.is_finite() {
            return 0.0;
        }
        match coverage_unchecked(link, g, beta_m, fields, tol) {
            Ok(p) => p * g / (1.0 + g),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    };
    let upper = quad::integrate_semi_infinite(eval, 0.0, 4.0, tol)?;
    let lower = quad::integrate_semi_infinite(|x| eval(-x), 0.0, 4.0, tol)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(upper.value + lower.value)
}

/// Per-operator densities entering the cell load, all per m².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellLoad {
    pub bs_density: f64,
    pub cellular_density: f64,
    pub intra_d2d_density: f64,
    /// Total inter-operator D2D density across all operators.
    pub inter_d2d_density: f64,
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("{name} must be in [0, 1], got {v}")));
    }
    Ok(())
}

/// Density of users served in cellular mode, `λ_c + (1−δ)λ_d + (1−q)λ/N`.
pub fn cellular_load(load: &CellLoad, delta: f64, q: f64, n_ops: usize) -> Result<f64> {
    check_fraction("delta", delta)?;
    check_fraction("q", q)?;
    if n_ops == 0 {
        return Err(Error::Domain("number of operators must be >= 1".into()));
    }
    Ok(load.cellular_density + (1.0 - delta) * load.intra_d2d_density + (1.0 - q) * load.inter_d2d_density / n_ops as f64)
}

/// Probability that a base station has at least one cellular-mode user.
pub fn active_bs_probability(load: &CellLoad, delta: f64, q: f64, n_ops: usize) -> Result<f64> {
    if !(load.bs_density > 0.0) {
        return Err(Error::Domain(format!("BS density must be > 0, got {}", load.bs_density)));
    }
    let u = cellular_load(load, delta, q, n_ops)?;
    Ok(1.0 - (1.0 + u / (3.5 * load.bs_density)).powf(-3.5))
}

/// Round-robin time share of a cellular-mode user, `min(1, α·λ_b/u)`.
pub fn cellular_activity_factor(load: &CellLoad, delta: f64, q: f64, n_ops: usize) -> Result<f64> {
    let alpha = active_bs_probability(load, delta, q, n_ops)?;
    let u = cellular_load(load, delta, q, n_ops)?;
    if u <= 0.0 {
        return Ok(1.0);
    }
    Ok((alpha * load.bs_density / u).min(1.0))
}
