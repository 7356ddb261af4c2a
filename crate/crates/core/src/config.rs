//! Scenario files.
//!
//! A scenario is a TOML document. Physical units are fixed per field and carried in the
//! field name where they are not obvious: powers in dBm, distances in m, bandwidth in Hz.
//! Densities use the unit chosen by `density_unit`, either multiples of the base-station
//! density implied by `inter_site_distance_m` or users per m².

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{DynamicsConfig, Init, KappaPolicy, Mode};
use crate::operator::{DeltaPolicy, InterWeightDensity, OperatorParams, Scenario, SharingScheme, UtilityKind, Weights};
use crate::quad::Tolerance;
use crate::stochgeom::{dbm_to_watts, thermal_noise, PathlossSet, RadioConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityUnit {
    /// Multiples of the base-station density.
    BsDensity,
    PerM2,
}

impl DensityUnit {
    pub fn as_str(&self) -> &'static str {
        match self {
            DensityUnit::BsDensity => "multiples of the BS density",
            DensityUnit::PerM2 => "users per m^2",
        }
    }
}

/// Base-station density of a hexagonal layout: one site per hexagon of the given inter-site distance.
pub fn bs_density_from_isd(isd_m: f64) -> f64 {
    2.0 / (3f64.sqrt() * isd_m * isd_m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSection {
    pub tx_power_cellular_dbm: f64,
    pub tx_power_d2d_dbm: f64,
    pub tx_power_inter_d2d_dbm: f64,
    pub d2d_distance_m: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    /// Thermal noise at base-station receivers; off for an interference-limited uplink.
    #[serde(default)]
    pub cellular_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    pub name: String,
    /// Overrides the scenario-wide inter-site distance, m.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inter_site_distance_m: Option<f64>,
    pub cellular_density: f64,
    pub intra_d2d_density: f64,
    /// Derived from the user densities when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
    /// Cellular rate target, bit/s/Hz.
    pub tau_c: f64,
    /// Intra-D2D rate target, bit/s/Hz.
    pub tau_d: f64,
    pub beta_min: f64,
    #[serde(default)]
    pub delta_min: f64,
    pub delta_max: f64,
    /// Defaults to `delta_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_baseline: Option<f64>,
    pub scheme: SharingScheme,
    pub utility: UtilityKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// `min`, `mid` or `random` (seeded by the scenario seed).
    #[serde(default = "default_init")]
    pub init: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_profile: Option<Vec<f64>>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// `paper`, `dominant` or `fixed:<x>`.
    #[serde(default = "default_kappa")]
    pub kappa_policy: String,
}

fn default_mode() -> Mode {
    Mode::JacobiPlay
}
fn default_init() -> String {
    "min".into()
}
fn default_tol() -> f64 {
    DynamicsConfig::default().tol
}
fn default_max_iters() -> usize {
    DynamicsConfig::default().max_iters
}
fn default_kappa() -> String {
    "paper".into()
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            init: default_init(),
            init_profile: None,
            tol: default_tol(),
            max_iters: default_max_iters(),
            kappa_policy: default_kappa(),
        }
    }
}

/// What an experiment run sweeps and writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentPreset {
    /// Per-iteration traces of Jacobi play and best-response play.
    ConvergenceTrace,
    /// Intra-D2D density of one operator swept over `points` values in `[from, to]`
    /// (density unit of the file), for both schemes and both utilities.
    DensitySweep { operator: usize, from: f64, to: f64, points: usize },
    /// Utility of one operator over a `(β, δ)` grid with the others held at `others_beta`
    /// (their `beta_min` when absent).
    UtilitySurface {
        operator: usize,
        beta_points: usize,
        delta_points: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        others_beta: Option<f64>,
    },
    /// A single run of the dynamics.
    Custom,
}

impl ExperimentPreset {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentPreset::ConvergenceTrace => "convergence_trace",
            ExperimentPreset::DensitySweep { .. } => "density_sweep",
            ExperimentPreset::UtilitySurface { .. } => "utility_surface",
            ExperimentPreset::Custom => "custom",
        }
    }
}

fn default_preset() -> ExperimentPreset {
    ExperimentPreset::Custom
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub density_unit: DensityUnit,
    pub inter_site_distance_m: f64,
    /// Total inter-D2D density λ over all operators.
    pub inter_d2d_density: f64,
    pub q: f64,
    #[serde(default = "default_delta_policy")]
    pub delta_policy: DeltaPolicy,
    /// Inter-D2D density used when weights are derived from densities.
    #[serde(default = "default_weight_density")]
    pub weight_density: InterWeightDensity,
    #[serde(default)]
    pub seed: u64,
    pub radio: RadioSection,
    #[serde(default)]
    pub pathloss: PathlossSet,
    #[serde(default = "Scenario::default_tolerance")]
    pub tolerance: Tolerance,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default = "default_preset")]
    pub experiment: ExperimentPreset,
    #[serde(rename = "operator")]
    pub operators: Vec<OperatorSection>,
}

fn default_delta_policy() -> DeltaPolicy {
    DeltaPolicy::Max
}
fn default_weight_density() -> InterWeightDensity {
    InterWeightDensity::PoolTotal
}

/// A scenario file together with the objects it resolves to.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub file: ScenarioFile,
    pub scenario: Scenario,
    pub dynamics: DynamicsConfig,
}

/// Expected unit or range of each field, used in error messages.
pub fn expected_for(field: &str) -> &'static str {
    match field {
        "cellular_density" | "intra_d2d_density" | "inter_d2d_density" | "from" | "to" => {
            "a density >= 0 in the file's density_unit"
        }
        "inter_site_distance_m" | "d2d_distance_m" => "a distance > 0 in m",
        "tx_power_cellular_dbm" | "tx_power_d2d_dbm" | "tx_power_inter_d2d_dbm" => "a power in dBm",
        "bandwidth_hz" => "a bandwidth > 0 in Hz",
        "noise_figure_db" => "a noise figure in dB",
        "tau_c" | "tau_d" => "a rate target >= 0 in bit/s/Hz",
        "beta_min" => "a band fraction in (0, 1)",
        "q" | "delta_min" | "delta_max" | "delta_baseline" => "a fraction in [0, 1]",
        "density_unit" => "\"bs_density\" or \"per_m2\"",
        "scheme" => "\"overlay\" or \"underlay\"",
        "utility" => "\"weighted_sum\" or \"proportional_fair\"",
        "kappa_policy" => "\"paper\", \"dominant\" or \"fixed:<x>\"",
        "mode" => "\"jp\" or \"br\"",
        "init" => "\"min\", \"mid\" or \"random\"",
        "weights" => "cellular, intra and inter weights >= 0 summing to 1",
        _ => "a value matching the scenario schema",
    }
}

fn field_from_message(msg: &str) -> Option<String> {
    for pat in ["missing field `", "unknown field `"] {
        if let Some(p) = msg.find(pat) {
            let rest = &msg[p + pat.len()..];
            return rest.find('`').map(|e| rest[..e].to_string());
        }
    }
    None
}

// key on the line holding the error span, for type and variant errors
fn field_at(text: &str, span: Option<std::ops::Range<usize>>) -> Option<String> {
    let start = span?.start.min(text.len());
    let line_start = text[..start].rfind('\n').map(|p| p + 1).unwrap_or(0);
    let line = text[line_start..].lines().next()?;
    let key = line.split('=').next()?.trim();
    (!key.is_empty() && !key.starts_with('[')).then(|| key.to_string())
}

pub fn parse_kappa_policy(s: &str) -> Result<KappaPolicy> {
    match s {
        "paper" => Ok(KappaPolicy::PaperBound),
        "dominant" => Ok(KappaPolicy::DominantZero),
        _ => {
            let bad = || Error::config("kappa_policy", expected_for("kappa_policy"), format!("got {s:?}"));
            let x = s.strip_prefix("fixed:").ok_or_else(bad)?;
            let k: f64 = x.parse().map_err(|_| bad())?;
            if !(k > 0.0 && k <= 1.0) {
                return Err(Error::config("kappa_policy", "a fixed kappa in (0, 1]", format!("got {k}")));
            }
            Ok(KappaPolicy::Fixed(k))
        }
    }
}

pub fn kappa_policy_str(k: &KappaPolicy) -> String {
    match k {
        KappaPolicy::PaperBound => "paper".into(),
        KappaPolicy::DominantZero => "dominant".into(),
        KappaPolicy::Fixed(x) => format!("fixed:{x}"),
    }
}

pub fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "jp" => Ok(Mode::JacobiPlay),
        "br" => Ok(Mode::BestResponse),
        _ => Err(Error::config("mode", expected_for("mode"), format!("got {s:?}"))),
    }
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = field_from_message(&msg)
                .or_else(|| field_at(text, e.span()))
                .unwrap_or_else(|| "<document>".into());
            let expected = expected_for(&field);
            Error::config(field, expected, msg)
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", "a serializable scenario", e.to_string()))
    }

    fn density(&self, v: f64, bs: f64, field: &str) -> Result<f64> {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::config(field, expected_for(field), format!("got {v}")));
        }
        Ok(match self.density_unit {
            DensityUnit::BsDensity => v * bs,
            DensityUnit::PerM2 => v,
        })
    }

    /// Density of the file's unit in users per m², at the scenario-wide inter-site distance.
    pub fn density_scale(&self) -> f64 {
        match self.density_unit {
            DensityUnit::BsDensity => bs_density_from_isd(self.inter_site_distance_m),
            DensityUnit::PerM2 => 1.0,
        }
    }

    /// Builds the scenario and dynamics configuration, checking every field.
    pub fn resolve(&self) -> Result<(Scenario, DynamicsConfig)> {
        let positive = |v: f64, field: &str| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, expected_for(field), format!("got {v}")))
            }
        };
        let fraction = |v: f64, field: &str| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(field, expected_for(field), format!("got {v}")))
            }
        };
        positive(self.inter_site_distance_m, "inter_site_distance_m")?;
        fraction(self.q, "q")?;
        if self.operators.is_empty() {
            return Err(Error::config("operator", "at least one [[operator]] table", "none given"));
        }
        let r = &self.radio;
        positive(r.d2d_distance_m, "d2d_distance_m")?;
        positive(r.bandwidth_hz, "bandwidth_hz")?;
        for (f, v) in [
            ("tx_power_cellular_dbm", r.tx_power_cellular_dbm),
            ("tx_power_d2d_dbm", r.tx_power_d2d_dbm),
            ("tx_power_inter_d2d_dbm", r.tx_power_inter_d2d_dbm),
            ("noise_figure_db", r.noise_figure_db),
        ] {
            if !v.is_finite() {
                return Err(Error::config(f, expected_for(f), format!("got {v}")));
            }
        }
        let noise = thermal_noise(r.bandwidth_hz, r.noise_figure_db);
        let consts = RadioConstants {
            noise_power_cellular: if r.cellular_noise { noise } else { 0.0 },
            noise_power_d2d: noise,
            d2d_distance: r.d2d_distance_m,
            tx_power_cellular: dbm_to_watts(r.tx_power_cellular_dbm),
            tx_power_d2d: dbm_to_watts(r.tx_power_d2d_dbm),
            tx_power_inter_d2d: dbm_to_watts(r.tx_power_inter_d2d_dbm),
        };
        for (name, m) in [("pathloss.cellular", &self.pathloss.cellular), ("pathloss.d2d", &self.pathloss.d2d)] {
            m.validate()
                .map_err(|e| Error::config(name, "an exponent coefficient > 20 dB/decade", e.to_string()))?;
        }

        let scenario_bs = bs_density_from_isd(self.inter_site_distance_m);
        let lam = self.density(self.inter_d2d_density, scenario_bs, "inter_d2d_density")?;
        let n = self.operators.len() as f64;
        let mut ops = Vec::with_capacity(self.operators.len());
        for o in &self.operators {
            let isd = o.inter_site_distance_m.unwrap_or(self.inter_site_distance_m);
            positive(isd, "inter_site_distance_m")?;
            let bs = bs_density_from_isd(isd);
            let lc = self.density(o.cellular_density, bs, "cellular_density")?;
            let ld = self.density(o.intra_d2d_density, bs, "intra_d2d_density")?;
            for (f, v) in [("tau_c", o.tau_c), ("tau_d", o.tau_d)] {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::config(f, expected_for(f), format!("{}: got {v}", o.name)));
                }
            }
            if !(o.beta_min > 0.0 && o.beta_min < 1.0) {
                return Err(Error::config("beta_min", expected_for("beta_min"), format!("{}: got {}", o.name, o.beta_min)));
            }
            fraction(o.delta_min, "delta_min")?;
            fraction(o.delta_max, "delta_max")?;
            if o.delta_min > o.delta_max {
                return Err(Error::config("delta_min", "delta_min <= delta_max", format!("{}: {} > {}", o.name, o.delta_min, o.delta_max)));
            }
            let delta_baseline = o.delta_baseline.unwrap_or(o.delta_max);
            fraction(delta_baseline, "delta_baseline")?;
            let weights = match o.weights {
                Some(w) => {
                    w.validate().map_err(|e| Error::config("weights", expected_for("weights"), format!("{}: {e}", o.name)))?;
                    w
                }
                None => {
                    let inter = match self.weight_density {
                        InterWeightDensity::PoolTotal => lam,
                        InterWeightDensity::PerOperator => lam / n,
                    };
                    Weights::from_densities(lc, ld, inter)
                        .map_err(|e| Error::config("weights", expected_for("weights"), format!("{}: {e}", o.name)))?
                }
            };
            ops.push(OperatorParams {
                name: o.name.clone(),
                bs_density: bs,
                cellular_density: lc,
                intra_d2d_density: ld,
                weights,
                tau_c: o.tau_c,
                tau_d: o.tau_d,
                beta_min: o.beta_min,
                delta_min: o.delta_min,
                delta_max: o.delta_max,
                delta_baseline,
                scheme: o.scheme,
                utility: o.utility,
            });
        }
        let t = &self.tolerance;
        if !(t.rel_tol > 0.0 && t.abs_tol >= 0.0 && t.max_subdivisions > 0 && t.truncation > 0.0) {
            return Err(Error::config("tolerance", "rel_tol > 0, abs_tol >= 0, max_subdivisions > 0, truncation > 0", format!("{t:?}")));
        }
        let scenario = Scenario {
            operators: ops,
            inter_d2d_density: lam,
            q: self.q,
            consts,
            pathloss: self.pathloss,
            delta_policy: self.delta_policy,
            tolerance: self.tolerance,
        };
        scenario.validate().map_err(|e| Error::config("<scenario>", "a consistent scenario", e.to_string()))?;

        let d = &self.dynamics;
        let init = match (d.init.as_str(), &d.init_profile) {
            (_, Some(p)) => Init::Profile(p.clone()),
            ("min", None) => Init::Min,
            ("mid", None) => Init::Mid,
            ("random", None) => Init::Random { seed: self.seed },
            (other, None) => return Err(Error::config("init", expected_for("init"), format!("got {other:?}"))),
        };
        let dynamics = DynamicsConfig {
            mode: d.mode,
            init,
            tol: d.tol,
            max_iters: d.max_iters,
            kappa_policy: parse_kappa_policy(&d.kappa_policy)?,
        };
        dynamics
            .validate()
            .map_err(|e| Error::config("dynamics", "tol > 0 and max_iters >= 1", e.to_string()))?;
        self.check_preset()?;
        Ok((scenario, dynamics))
    }

    fn check_preset(&self) -> Result<()> {
        let n = self.operators.len();
        match &self.experiment {
            ExperimentPreset::DensitySweep { operator, from, to, .. } => {
                if *operator >= n {
                    return Err(Error::config("operator", format!("an operator index < {n}"), format!("got {operator}")));
                }
                for (f, v) in [("from", *from), ("to", *to)] {
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(Error::config(f, expected_for(f), format!("got {v}")));
                    }
                }
            }
            ExperimentPreset::UtilitySurface { operator, beta_points, delta_points, .. } => {
                if *operator >= n {
                    return Err(Error::config("operator", format!("an operator index < {n}"), format!("got {operator}")));
                }
                if *beta_points < 2 || *delta_points < 1 {
                    return Err(Error::config("beta_points", "beta_points >= 2 and delta_points >= 1", format!("got {beta_points} x {delta_points}")));
                }
            }
            ExperimentPreset::ConvergenceTrace | ExperimentPreset::Custom => {}
        }
        Ok(())
    }
}

pub fn load_scenario_str(text: &str) -> Result<LoadedScenario> {
    let file = ScenarioFile::from_toml(text)?;
    let (scenario, dynamics) = file.resolve()?;
    Ok(LoadedScenario { file, scenario, dynamics })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<LoadedScenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    load_scenario_str(&text)
}

/// Symmetric three-operator overlay scenario bundled with the crate.
pub const SYMMETRIC_THREE: &str = include_str!("../scenarios/symmetric_three.toml");

pub fn symmetric_three() -> Result<LoadedScenario> {
    load_scenario_str(SYMMETRIC_THREE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenario_resolves_to_the_reference_settings() {
        let l = symmetric_three().unwrap();
        let s = &l.scenario;
        assert_eq!(s.n_ops(), 3);
        assert_eq!(s.q, 1.0);
        let lb = 2.0 / (3f64.sqrt() * 500.0 * 500.0);
        for op in &s.operators {
            assert_eq!(op.delta_max, 1.0);
            assert_eq!(op.tau_c, 0.1);
            assert_eq!(op.tau_d, 1.0);
            assert_eq!(op.beta_min, 0.01);
            assert_eq!(op.scheme, SharingScheme::Overlay);
            assert!((op.bs_density - lb).abs() < 1e-20);
            assert!((op.cellular_density - 5.0 * lb).abs() < 1e-18);
        }
        assert!((s.consts.tx_power_d2d - 0.01).abs() < 1e-15);
        assert!((s.consts.tx_power_cellular - 10f64.powf(-0.7)).abs() < 1e-15);
        assert_eq!(s.consts.d2d_distance, 10.0);
        assert!((s.inter_d2d_density - 4.8 * lb).abs() < 1e-18);
        assert_eq!(l.dynamics.kappa_policy, KappaPolicy::PaperBound);
    }

    #[test]
    fn missing_target_names_the_field() {
        let text = SYMMETRIC_THREE.replacen("tau_c = 0.1\n", "", 1);
        match load_scenario_str(&text).unwrap_err() {
            Error::Config { field, expected, .. } => {
                assert_eq!(field, "tau_c");
                assert!(expected.contains("bit/s/Hz"));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = SYMMETRIC_THREE.replacen("q = 1.0", "q = 1.0\nqq = 2.0", 1);
        match load_scenario_str(&text).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "qq"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn bad_variant_names_the_field() {
        let text = SYMMETRIC_THREE.replacen("scheme = \"overlay\"", "scheme = \"sideways\"", 1);
        match load_scenario_str(&text).unwrap_err() {
            Error::Config { field, expected, .. } => {
                assert_eq!(field, "scheme");
                assert!(expected.contains("underlay"));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn out_of_range_value_names_field_and_unit() {
        let text = SYMMETRIC_THREE.replacen("inter_site_distance_m = 500.0", "inter_site_distance_m = -5.0", 1);
        match load_scenario_str(&text).unwrap_err() {
            Error::Config { field, expected, .. } => {
                assert_eq!(field, "inter_site_distance_m");
                assert!(expected.contains(" m"));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn round_trip_is_identical() {
        let l = symmetric_three().unwrap();
        let again = load_scenario_str(&l.file.to_toml().unwrap()).unwrap();
        assert_eq!(again, l);
    }

    #[test]
    fn per_m2_densities_are_taken_verbatim() {
        let mut f = symmetric_three().unwrap().file;
        let scale = f.density_scale();
        f.density_unit = DensityUnit::PerM2;
        f.inter_d2d_density *= scale;
        for o in &mut f.operators {
            o.cellular_density *= scale;
            o.intra_d2d_density *= scale;
        }
        let (a, _) = f.resolve().unwrap();
        let (b, _) = symmetric_three().unwrap().file.resolve().unwrap();
        assert!((a.inter_d2d_density - b.inter_d2d_density).abs() < 1e-18);
        assert!((a.operators[0].weights.inter - b.operators[0].weights.inter).abs() < 1e-12);
    }

    #[test]
    fn kappa_policy_strings() {
        assert_eq!(parse_kappa_policy("paper").unwrap(), KappaPolicy::PaperBound);
        assert_eq!(parse_kappa_policy("dominant").unwrap(), KappaPolicy::DominantZero);
        assert_eq!(parse_kappa_policy("fixed:0.5").unwrap(), KappaPolicy::Fixed(0.5));
        assert!(parse_kappa_policy("fixed:2").is_err());
        assert!(parse_kappa_policy("fast").is_err());
        for k in [KappaPolicy::PaperBound, KappaPolicy::DominantZero, KappaPolicy::Fixed(0.25)] {
            assert_eq!(parse_kappa_policy(&kappa_policy_str(&k)).unwrap(), k);
        }
    }
}
