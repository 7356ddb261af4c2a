//! One operator: band split, rates, utility, constraints and best response.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::Tolerance;
use crate::stochgeom::{
    self, CellLoad, Exclusion, FieldSpec, Link, LinkKind, PathlossSet, RadioConstants,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingScheme {
    /// Dedicated cellular and intra-D2D sub-bands.
    Overlay,
    /// Intra-D2D reuses the cellular band.
    Underlay,
}

impl SharingScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            SharingScheme::Overlay => "overlay",
            SharingScheme::Underlay => "underlay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    WeightedSum,
    ProportionalFair,
}

impl UtilityKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            UtilityKind::WeightedSum => "weighted_sum",
            UtilityKind::ProportionalFair => "proportional_fair",
        }
    }
}

/// User-type weights `w^c, w^d, w^s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub cellular: f64,
    pub intra: f64,
    pub inter: f64,
}

impl Weights {
    /// Weights proportional to the given user densities.
    pub fn from_densities(cellular: f64, intra: f64, inter: f64) -> Result<Self> {
        let total = cellular + intra + inter;
        if !(total > 0.0) || cellular < 0.0 || intra < 0.0 || inter < 0.0 {
            return Err(Error::Domain("weight densities must be >= 0 with a positive sum".into()));
        }
        Ok(Self {
            cellular: cellular / total,
            intra: intra / total,
            inter: inter / total,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.cellular, self.intra, self.inter];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain(format!("weights must be >= 0, got {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Which inter-D2D density enters the inter weight when weights are derived from densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterWeightDensity {
    /// `λ/N`, the operator's share of inter-D2D users.
    PerOperator,
    /// `λ`, every inter-D2D user in the pool.
    PoolTotal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorParams {
    pub name: String,
    /// Per m².
    pub bs_density: f64,
    pub cellular_density: f64,
    pub intra_d2d_density: f64,
    pub weights: Weights,
    pub tau_c: f64,
    pub tau_d: f64,
    pub beta_min: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Mode-selection fraction without sharing.
    pub delta_baseline: f64,
    pub scheme: SharingScheme,
    pub utility: UtilityKind,
}

impl OperatorParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("bs_density", self.bs_density),
            ("cellular_density", self.cellular_density),
            ("intra_d2d_density", self.intra_d2d_density),
            ("tau_c", self.tau_c),
            ("tau_d", self.tau_d),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{}: {name} must be >= 0, got {v}", self.name)));
            }
        }
        if !(self.bs_density > 0.0) {
            return Err(Error::Domain(format!("{}: bs_density must be > 0", self.name)));
        }
        if !(self.beta_min > 0.0 && self.beta_min < 1.0) {
            return Err(Error::Domain(format!(
                "{}: beta_min must be in (0, 1), got {}",
                self.name, self.beta_min
            )));
        }
        if !(0.0 <= self.delta_min && self.delta_min <= self.delta_max && self.delta_max <= 1.0) {
            return Err(Error::Domain(format!(
                "{}: delta range [{}, {}] must lie in [0, 1]",
                self.name, self.delta_min, self.delta_max
            )));
        }
        if !(0.0..=1.0).contains(&self.delta_baseline) {
            return Err(Error::Domain(format!("{}: delta_baseline must be in [0, 1]", self.name)));
        }
        self.weights.validate()
    }

    pub fn cell_load(&self, inter_d2d_density: f64) -> CellLoad {
        CellLoad {
            bs_density: self.bs_density,
            cellular_density: self.cellular_density,
            intra_d2d_density: self.intra_d2d_density,
            inter_d2d_density,
        }
    }
}

/// How δ is chosen while the game runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaPolicy {
    /// `δ_i = δ_i^max`.
    Max,
    /// `δ_i = δ_i^o`.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub operators: Vec<OperatorParams>,
    /// Total inter-D2D density λ, per m².
    pub inter_d2d_density: f64,
    /// Fraction of inter-D2D pairs in direct mode.
    pub q: f64,
    pub consts: RadioConstants,
    pub pathloss: PathlossSet,
    pub delta_policy: DeltaPolicy,
    pub tolerance: Tolerance,
}

impl Scenario {
    /// Tolerance used by the operator layer; tight enough that second differences of the
    /// utilities are not dominated by quadrature error.
    pub fn default_tolerance() -> Tolerance {
        Tolerance {
            rel_tol: 1e-12,
            abs_tol: 0.0,
            max_subdivisions: 4000,
            truncation: 1e-14,
        }
    }

    pub fn n_ops(&self) -> usize {
        self.operators.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.operators.is_empty() {
            return Err(Error::Domain("scenario needs at least one operator".into()));
        }
        if !(self.inter_d2d_density >= 0.0) {
            return Err(Error::Domain("inter-D2D density must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::Domain(format!("q must be in [0, 1], got {}", self.q)));
        }
        self.consts.validate()?;
        self.pathloss.cellular.validate()?;
        self.pathloss.d2d.validate()?;
        for op in &self.operators {
            op.validate()?;
        }
        Ok(())
    }

    /// δ in force for operator `i` during the game.
    pub fn game_delta(&self, i: usize) -> f64 {
        let op = &self.operators[i];
        match self.delta_policy {
            DeltaPolicy::Max => op.delta_max,
            DeltaPolicy::Baseline => op.delta_baseline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateTriple {
    pub q_c: f64,
    pub q_d: f64,
    pub q_s: f64,
}

/// Internal split of the band an operator keeps for itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Split {
    Overlay { beta_c: f64, beta_d: f64 },
    Underlay { beta_cd: f64 },
}

impl Split {
    /// Band used by cellular users and by intra-D2D users.
    pub fn bands(&self) -> (f64, f64) {
        match *self {
            Split::Overlay { beta_c, beta_d } => (beta_c, beta_d),
            Split::Underlay { beta_cd } => (beta_cd, beta_cd),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxConstraint {
    pub lo: f64,
    pub hi: f64,
}

impl BoxConstraint {
    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi.max(self.lo))
    }
}

/// Upper limit of the pool contribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaMax {
    /// `max(raw, β^min)`.
    pub value: f64,
    /// `1 − β^{c,min} − β^{d,min}` (overlay) or `1 − β^{cd,min}` (underlay).
    pub raw: f64,
    /// The constraints leave less than `β^min`; the operator cannot participate.
    pub clamped: bool,
    /// Smallest band meeting the cellular target.
    pub cellular_min: f64,
    /// Smallest band meeting the intra-D2D target.
    pub d2d_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub utility: f64,
    pub rates: RateTriple,
    pub split: Split,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct RateKey {
    op: usize,
    kind: LinkKind,
    band: u64,
    delta: u64,
    q: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct MinKey {
    op: usize,
    delta: u64,
    q: u64,
}

#[derive(Debug, Clone, Copy)]
struct Minima {
    // overlay: (β^{c,min}, β^{d,min}); underlay: (β^{cd,min} from h^c, from h^d)
    first: f64,
    second: f64,
}

const ROOT_TOL: f64 = 1e-8;

/// Rate evaluator for one scenario, with memoized spectral efficiencies.
pub struct RateModel<'a> {
    scn: &'a Scenario,
    cache: Option<Mutex<HashMap<RateKey, f64>>>,
    minima: Mutex<HashMap<MinKey, Minima>>,
}

impl<'a> RateModel<'a> {
    pub fn new(scn: &'a Scenario) -> Result<Self> {
        scn.validate()?;
        Ok(Self {
            scn,
            cache: Some(Mutex::new(HashMap::new())),
            minima: Mutex::new(HashMap::new()),
        })
    }

    /// Same model without the spectral-efficiency cache.
    pub fn uncached(scn: &'a Scenario) -> Result<Self> {
        let mut m = Self::new(scn)?;
        m.cache = None;
        Ok(m)
    }

    pub fn scenario(&self) -> &Scenario {
        self.scn
    }

    pub fn cache_len(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.lock().unwrap().len())
    }

    /// Active-BS probability and cellular time share of operator `i`.
    pub fn load_factors(&self, i: usize, delta: f64, q: f64) -> Result<(f64, f64)> {
        let op = &self.scn.operators[i];
        let load = op.cell_load(self.scn.inter_d2d_density);
        let n = self.scn.n_ops();
        Ok((
            stochgeom::active_bs_probability(&load, delta, q, n)?,
            stochgeom::cellular_activity_factor(&load, delta, q, n)?,
        ))
    }

    /// Link, interferer fields and activity factor of a `kind` user of operator `i`.
    pub fn link_setup(&self, i: usize, kind: LinkKind, delta: f64, q: f64) -> Result<(Link, Vec<FieldSpec>, f64)> {
        let scn = self.scn;
        let op = &scn.operators[i];
        let c = &scn.consts;
        let pl = &scn.pathloss;
        let link = Link::for_kind(kind, c, pl, op.bs_density);
        let (alpha, nu_c) = self.load_factors(i, delta, q)?;
        let underlay = op.scheme == SharingScheme::Underlay;
        // receivers pick the pathloss model: BS receivers cellular, device receivers D2D
        let out = match kind {
            LinkKind::Cellular => {
                let mut f = vec![FieldSpec {
                    density: alpha * op.bs_density,
                    power: c.tx_power_cellular,
                    exclusion: Exclusion::ServingDistance,
                    pathloss: pl.cellular,
                }];
                if underlay {
                    f.push(FieldSpec {
                        density: delta * op.intra_d2d_density,
                        power: c.tx_power_d2d,
                        exclusion: Exclusion::Radius(0.0),
                        pathloss: pl.cellular,
                    });
                }
                (link, f, nu_c)
            }
            LinkKind::IntraD2D => {
                let mut f = vec![FieldSpec {
                    density: delta * op.intra_d2d_density,
                    power: c.tx_power_d2d,
                    exclusion: Exclusion::Radius(0.0),
                    pathloss: pl.d2d,
                }];
                if underlay {
                    f.push(FieldSpec {
                        density: alpha * op.bs_density,
                        power: c.tx_power_cellular,
                        exclusion: Exclusion::Radius(0.0),
                        pathloss: pl.d2d,
                    });
                }
                (link, f, 1.0)
            }
            LinkKind::InterD2D => (
                link,
                vec![FieldSpec {
                    density: q * scn.inter_d2d_density,
                    power: c.tx_power_inter_d2d,
                    exclusion: Exclusion::Radius(0.0),
                    pathloss: pl.d2d,
                }],
                1.0,
            ),
        };
        Ok(out)
    }

    /// Average rate `R^m` (activity included) of a `kind` user of operator `i` on band `band`.
    pub fn rate(&self, i: usize, kind: LinkKind, band: f64, delta: f64, q: f64) -> Result<f64> {
        let noiseless = match kind {
            LinkKind::Cellular => self.scn.consts.noise_power_cellular == 0.0,
            _ => self.scn.consts.noise_power_d2d == 0.0,
        };
        let key = RateKey {
            op: if kind == LinkKind::InterD2D { usize::MAX } else { i },
            kind,
            // without noise the band fraction does not enter the rate
            band: if noiseless { 0 } else { band.to_bits() },
            delta: if kind == LinkKind::InterD2D { 0 } else { delta.to_bits() },
            q: q.to_bits(),
        };
        if let Some(cache) = &self.cache {
            if let Some(v) = cache.lock().unwrap().get(&key) {
                return Ok(*v);
            }
        }
        let (mut link, fields, nu) = self.link_setup(i, kind, delta, q)?;
        // the pool can exceed one operator's band; its noise grows with it
        let fraction = if band > 1.0 {
            link.noise_power *= band;
            1.0
        } else {
            band.max(0.0)
        };
        let v = stochgeom::spectral_efficiency(&link, fraction, nu, &fields, &self.scn.tolerance)?;
        if let Some(cache) = &self.cache {
            cache.lock().unwrap().insert(key, v);
        }
        Ok(v)
    }

    fn minima(&self, i: usize, delta: f64, q: f64) -> Result<Minima> {
        let key = MinKey {
            op: i,
            delta: delta.to_bits(),
            q: q.to_bits(),
        };
        if let Some(m) = self.minima.lock().unwrap().get(&key) {
            return Ok(*m);
        }
        let op = &self.scn.operators[i];
        let hc = |b: f64| -> Result<f64> { Ok(b * self.rate(i, LinkKind::Cellular, b, delta, q)?) };
        let hd = |b: f64| -> Result<f64> { Ok(delta * b * self.rate(i, LinkKind::IntraD2D, b, delta, q)?) };
        let name = &op.name;
        let first = solve_increasing(hc, op.tau_c).map_err(|e| context(e, name, "cellular"))?;
        let second = solve_increasing(hd, op.tau_d).map_err(|e| context(e, name, "intra-D2D"))?;
        let m = Minima { first, second };
        self.minima.lock().unwrap().insert(key, m);
        Ok(m)
    }

    /// `β_i^max(δ)` for the given inter-D2D mode fraction.
    pub fn beta_max(&self, i: usize, delta: f64, q: f64) -> Result<BetaMax> {
        let op = &self.scn.operators[i];
        let m = self.minima(i, delta, q)?;
        let raw = match op.scheme {
            SharingScheme::Overlay => 1.0 - m.first - m.second,
            SharingScheme::Underlay => 1.0 - m.first.max(m.second),
        };
        Ok(BetaMax {
            value: raw.max(op.beta_min),
            raw,
            clamped: raw < op.beta_min,
            cellular_min: m.first,
            d2d_min: m.second,
        })
    }

    /// Box `[β^min, β^max(δ)]` in force during the game.
    pub fn box_constraint(&self, i: usize) -> Result<BoxConstraint> {
        let bm = self.beta_max(i, self.scn.game_delta(i), self.scn.q)?;
        Ok(BoxConstraint {
            lo: self.scn.operators[i].beta_min,
            hi: bm.raw,
        })
    }

    /// Split of the remaining `1 − β_i` under the cellular-boundary rule.
    pub fn split(&self, i: usize, beta_i: f64, delta: f64, q: f64) -> Result<Split> {
        let op = &self.scn.operators[i];
        let m = self.minima(i, delta, q)?;
        match op.scheme {
            SharingScheme::Overlay => {
                let beta_d = 1.0 - beta_i - m.first;
                if beta_d < m.second - 1e-9 {
                    return Err(Error::Infeasible(format!(
                        "{}: beta_i = {beta_i} leaves beta_d = {beta_d} below the required {}",
                        op.name, m.second
                    )));
                }
                Ok(Split::Overlay {
                    beta_c: m.first,
                    beta_d,
                })
            }
            SharingScheme::Underlay => {
                let beta_cd = 1.0 - beta_i;
                let need = m.first.max(m.second);
                if beta_cd < need - 1e-9 {
                    return Err(Error::Infeasible(format!(
                        "{}: beta_cd = {beta_cd} is below the required {need}",
                        op.name
                    )));
                }
                Ok(Split::Underlay { beta_cd })
            }
        }
    }

    /// Cellular and intra-D2D rate contributions `(β^c R^c, β^d R^d)` for a split.
    pub fn link_terms(&self, i: usize, split: &Split, delta: f64, q: f64) -> Result<(f64, f64)> {
        let (bc, bd) = split.bands();
        let rc = self.rate(i, LinkKind::Cellular, bc, delta, q)?;
        let rd = if delta > 0.0 && bd > 0.0 {
            self.rate(i, LinkKind::IntraD2D, bd, delta, q)?
        } else {
            0.0
        };
        Ok((bc * rc, bd * rd))
    }

    /// Pool term `β·R^s(β)`.
    pub fn pool_term(&self, beta_total: f64, q: f64) -> Result<f64> {
        if beta_total <= 0.0 || q <= 0.0 {
            return Ok(0.0);
        }
        Ok(beta_total * self.rate(0, LinkKind::InterD2D, beta_total, 0.0, q)?)
    }

    /// Normalized rates for a given split.
    pub fn rates_for_split(&self, i: usize, split: &Split, delta: f64, q: f64, beta_total: f64) -> Result<RateTriple> {
        let (hc, hd) = self.link_terms(i, split, delta, q)?;
        let pool = self.pool_term(beta_total, q)?;
        Ok(RateTriple {
            q_c: hc,
            q_d: hc * (1.0 - delta) + hd * delta,
            q_s: hc * (1.0 - q) + pool * q,
        })
    }

    /// `(Q^c, Q^d, Q^s)` for contribution `beta_i` and pool size `beta_total`.
    pub fn rate_triple(&self, i: usize, beta_i: f64, delta: f64, beta_total: f64) -> Result<RateTriple> {
        self.rate_triple_q(i, beta_i, delta, beta_total, self.scn.q)
    }

    pub fn rate_triple_q(&self, i: usize, beta_i: f64, delta: f64, beta_total: f64, q: f64) -> Result<RateTriple> {
        if !(0.0..=1.0).contains(&beta_i) {
            return Err(Error::Domain(format!("beta_i must be in [0, 1], got {beta_i}")));
        }
        if beta_total < beta_i - 1e-12 {
            return Err(Error::Domain(format!(
                "pool size {beta_total} is smaller than the contribution {beta_i}"
            )));
        }
        let split = self.split(i, beta_i, delta, q)?;
        self.rates_for_split(i, &split, delta, q, beta_total)
    }

    /// As `rate_triple`, but the split is not checked against the targets.
    pub fn rate_triple_unchecked(&self, i: usize, beta_i: f64, delta: f64, beta_total: f64) -> Result<RateTriple> {
        let q = self.scn.q;
        let split = self.split_unchecked(i, beta_i, delta, q)?;
        self.rates_for_split(i, &split, delta, q, beta_total)
    }

    /// `(h^c, h^d)` at the split implied by `beta_i`.
    pub fn constraint_values(&self, i: usize, beta_i: f64, delta: f64) -> Result<(f64, f64)> {
        let split = self.split(i, beta_i, delta, self.scn.q)?;
        self.constraints_for_split(i, &split, delta, self.scn.q)
    }

    pub fn constraints_for_split(&self, i: usize, split: &Split, delta: f64, q: f64) -> Result<(f64, f64)> {
        let (hc, hd) = self.link_terms(i, split, delta, q)?;
        Ok((hc, delta * hd))
    }

    /// Utility of operator `i` at `(β_i, β_{−i})` with the game δ.
    ///
    /// The split is not checked against the targets, so finite-difference stencils may step
    /// slightly past `β^max`.
    pub fn utility_at(&self, i: usize, beta_i: f64, beta_others: f64) -> Result<f64> {
        let delta = self.scn.game_delta(i);
        let q = self.scn.q;
        let split = self.split_unchecked(i, beta_i, delta, q)?;
        let r = self.rates_for_split(i, &split, delta, q, beta_i + beta_others)?;
        utility(&self.scn.operators[i], &r)
    }

    /// Split under the cellular-boundary rule without the target check.
    pub fn split_unchecked(&self, i: usize, beta_i: f64, delta: f64, q: f64) -> Result<Split> {
        let op = &self.scn.operators[i];
        let m = self.minima(i, delta, q)?;
        let split = match op.scheme {
            SharingScheme::Overlay => Split::Overlay {
                beta_c: m.first,
                beta_d: 1.0 - beta_i - m.first,
            },
            SharingScheme::Underlay => Split::Underlay { beta_cd: 1.0 - beta_i },
        };
        let (bc, bd) = split.bands();
        if !(bc > 0.0 && bd > 0.0 && bc <= 1.0 && bd <= 1.0) {
            return Err(Error::Domain(format!("{}: beta_i = {beta_i} leaves no usable band", op.name)));
        }
        Ok(split)
    }

    /// Best response to the others' total contribution.
    pub fn best_response(&self, i: usize, beta_others: f64) -> Result<f64> {
        let b = self.box_constraint(i)?;
        if b.is_empty() {
            return Err(Error::Infeasible(format!(
                "{}: box [{}, {}] is empty",
                self.scn.operators[i].name, b.lo, b.hi
            )));
        }
        maximize_concave(|x| self.utility_at(i, x, beta_others), b.lo, b.hi, BR_WIDTH)
    }

    /// Utility and rates without sharing: `β = 0`, `q = 0`, `δ = δ^o`.
    pub fn baseline(&self, i: usize) -> Result<Baseline> {
        let op = &self.scn.operators[i];
        let delta = op.delta_baseline;
        let split = self.split(i, 0.0, delta, 0.0).map_err(|e| match e {
            Error::Infeasible(m) => Error::Infeasible(format!("targets infeasible without sharing: {m}")),
            other => other,
        })?;
        let rates = self.rates_for_split(i, &split, delta, 0.0, 0.0)?;
        Ok(Baseline {
            utility: utility(op, &rates)?,
            rates,
            split,
            delta,
        })
    }
}

fn context(e: Error, name: &str, which: &str) -> Error {
    match e {
        Error::Infeasible(m) => Error::Infeasible(format!("{name}: {which} target: {m}")),
        other => other,
    }
}

// smallest x in [0, 1] with h(x) ≥ target for increasing h
fn solve_increasing<F: Fn(f64) -> Result<f64>>(h: F, target: f64) -> Result<f64> {
    if target <= 0.0 {
        return Ok(0.0);
    }
    let top = h(1.0)?;
    if top < target {
        return Err(Error::Infeasible(format!(
            "target {target} exceeds {top} reachable with the whole band"
        )));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if h(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Utility of an operator for the given rates.
pub fn utility(op: &OperatorParams, r: &RateTriple) -> Result<f64> {
    let ws = op.weights.inter;
    match op.utility {
        UtilityKind::WeightedSum => Ok((1.0 - ws) * r.q_d + ws * r.q_s),
        UtilityKind::ProportionalFair => {
            let log_of = |v: f64, what: &str, w: f64| -> Result<f64> {
                if w == 0.0 {
                    return Ok(0.0);
                }
                if !(v > 0.0) {
                    return Err(Error::Domain(format!("{}: log of non-positive {what} = {v}", op.name)));
                }
                Ok(w * v.ln())
            };
            Ok(log_of(r.q_d, "Q^d", 1.0 - ws)? + log_of(r.q_s, "Q^s", ws)?)
        }
    }
}

/// Golden-section search width for best responses.
pub const BR_WIDTH: f64 = 1e-7;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizer of a concave `f` on `[lo, hi]` by golden-section search to width `width`.
///
/// Ties favour the smaller argument. A coarse scan beforehand rejects profiles that are not
/// unimodal.
pub fn maximize_concave<F: Fn(f64) -> Result<f64>>(f: F, lo: f64, hi: f64, width: f64) -> Result<f64> {
    if !(lo <= hi) {
        return Err(Error::Infeasible(format!("empty interval [{lo}, {hi}]")));
    }
    if hi - lo <= width {
        return Ok(lo);
    }
    const SCAN: usize = 9;
    let mut samples = Vec::with_capacity(SCAN);
    for k in 0..SCAN {
        let x = lo + (hi - lo) * k as f64 / (SCAN - 1) as f64;
        samples.push((x, f(x)?));
    }
    let scale = samples.iter().map(|s| s.1.abs()).fold(0.0, f64::max).max(1e-300);
    let slack = 1e-10 * scale;
    let mut falling = false;
    for w in samples.windows(2) {
        let d = w[1].1 - w[0].1;
        if d < -slack {
            falling = true;
        } else if d > slack && falling {
            return Err(Error::NonConcave { lo, hi, samples });
        }
    }
    // bracket around the best scan point
    let best = samples
        .iter()
        .enumerate()
        .fold(0, |b, (k, s)| if s.1 > samples[b].1 + slack { k } else { b });
    let mut a = samples[best.saturating_sub(1)].0;
    let mut b = samples[(best + 1).min(SCAN - 1)].0;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > width {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    let mut x = 0.5 * (a + b);
    let fx = f(x)?;
    // boundary maximizers: the endpoints themselves may beat the interior estimate
    for (e, fe) in [samples[0], samples[SCAN - 1]] {
        if (e - x).abs() <= 2.0 * width + (hi - lo) / (SCAN - 1) as f64 && fe >= fx {
            x = e;
            break;
        }
    }
    Ok(x.clamp(lo, hi))
}
