//! Best-response and Jacobi-play dynamics over pool contributions.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{maximize_concave, BoxConstraint, RateModel, Split, UtilityKind, BR_WIDTH};
use crate::quad;

/// A game where each player's utility depends on its own contribution and the sum of
/// everyone else's.
pub trait PoolGame: Sync {
    fn n_players(&self) -> usize;

    fn bounds(&self, i: usize) -> Result<BoxConstraint>;

    fn utility(&self, i: usize, own: f64, others: f64) -> Result<f64>;

    fn best_response_width(&self, i: usize, others: f64, width: f64) -> Result<f64> {
        let b = self.bounds(i)?;
        if b.is_empty() {
            return Err(Error::Infeasible(format!("player {i}: box [{}, {}] is empty", b.lo, b.hi)));
        }
        maximize_concave(|x| self.utility(i, x, others), b.lo, b.hi, width)
    }

    fn best_response(&self, i: usize, others: f64) -> Result<f64> {
        self.best_response_width(i, others, BR_WIDTH)
    }

    /// Utility without sharing, for the post-convergence withdraw check.
    fn baseline_utility(&self, _i: usize) -> Result<Option<f64>> {
        Ok(None)
    }

    /// Analytic upper bound on `|J_ij^BR|` at `(own, others)`, when the game has one.
    fn slope_bound(&self, _i: usize, _own: f64, _others: f64) -> Result<Option<f64>> {
        Ok(None)
    }

    fn profile(&self, betas: &[f64]) -> Result<StrategyProfile> {
        Ok(StrategyProfile::from_betas(betas.to_vec()))
    }
}

/// [`PoolGame`] view of a scenario, with every operator at its game δ.
pub struct ScenarioGame<'a> {
    pub model: RateModel<'a>,
}

impl<'a> ScenarioGame<'a> {
    pub fn new(model: RateModel<'a>) -> Self {
        Self { model }
    }

    // derivative of the pool rate Q^s in β, by central differences
    fn pool_derivs(&self, i: usize, own: f64, total: f64) -> Result<(f64, f64)> {
        let scn = self.model.scenario();
        let delta = scn.game_delta(i);
        let qs = |t: f64| -> Result<f64> { Ok(self.model.rate_triple_unchecked(i, own, delta, t)?.q_s) };
        let h = (FD_FIRST * total).max(1e-9);
        let q0 = qs(total)?;
        let d1 = (qs(total + h)? - qs(total - h)?) / (2.0 * h);
        Ok((q0, d1))
    }
}

impl PoolGame for ScenarioGame<'_> {
    fn n_players(&self) -> usize {
        self.model.scenario().n_ops()
    }

    fn bounds(&self, i: usize) -> Result<BoxConstraint> {
        self.model.box_constraint(i)
    }

    fn utility(&self, i: usize, own: f64, others: f64) -> Result<f64> {
        self.model.utility_at(i, own, others)
    }

    fn baseline_utility(&self, i: usize) -> Result<Option<f64>> {
        Ok(Some(self.model.baseline(i)?.utility))
    }

    /// Full profile (δ and internal split) for a vector of contributions.
    fn profile(&self, betas: &[f64]) -> Result<StrategyProfile> {
        let scn = self.model.scenario();
        let mut deltas = Vec::with_capacity(betas.len());
        let mut splits = Vec::with_capacity(betas.len());
        for (i, &b) in betas.iter().enumerate() {
            let d = scn.game_delta(i);
            deltas.push(d);
            splits.push(self.model.split(i, b, d, scn.q).ok());
        }
        Ok(StrategyProfile {
            betas: betas.to_vec(),
            deltas,
            splits,
        })
    }

    /// The pool term is the only coupling, so `J = −S/(S + D)` with `S` the pool curvature
    /// and `D` the own-band curvature. `S` is bounded by replacing the interference
    /// transform in `(β·R^s)''` by one and keeping only the negative lobe of the integrand.
    fn slope_bound(&self, i: usize, own: f64, others: f64) -> Result<Option<f64>> {
        let scn = self.model.scenario();
        let Some(eta) = (scn.consts.noise_power_d2d > 0.0).then(|| {
            scn.consts.tx_power_inter_d2d * crate::stochgeom::pathloss_gain(scn.consts.d2d_distance, &scn.pathloss.d2d).unwrap_or(0.0)
                / scn.consts.noise_power_d2d
        }) else {
            return Ok(None);
        };
        if scn.q <= 0.0 {
            return Ok(None);
        }
        let op = &scn.operators[i];
        let w = op.weights.inter;
        let total = own + others;
        if total <= 0.0 {
            return Ok(None);
        }
        let cut = 2.0 * eta / total;
        let neg = quad::integrate(
            |g: f64| (-g * total / eta).exp() * g * (2.0 * eta - total * g) / (1.0 + g),
            0.0,
            cut,
            &scn.tolerance,
        )?;
        let b = scn.q * neg.value / (eta * eta);

        let delta = scn.game_delta(i);
        let qd = |x: f64| -> Result<f64> { Ok(self.model.rate_triple_unchecked(i, x, delta, x + others)?.q_d) };
        let bx = self.bounds(i)?;
        let room = (own - bx.lo).min(bx.hi - own);
        let mut h = FD_SECOND * own;
        if room > 0.0 {
            h = h.min(0.5 * room);
        }
        let d0 = qd(own)?;
        let (dp, dm) = (qd(own + h)?, qd(own - h)?);
        let d1 = (dp - dm) / (2.0 * h);
        let d2 = (dp - 2.0 * d0 + dm) / (h * h);
        let (s_bar, d_abs) = match op.utility {
            UtilityKind::WeightedSum => (w * b, ((1.0 - w) * d2).abs()),
            UtilityKind::ProportionalFair => {
                let (q0, q1) = self.pool_derivs(i, own, total)?;
                let s = w * (b / q0 + (q1 / q0).powi(2));
                let d = (1.0 - w) * (d2 / d0 - (d1 / d0).powi(2));
                (s, d.abs())
            }
        };
        if s_bar + d_abs == 0.0 {
            return Ok(Some(0.0));
        }
        Ok(Some(s_bar / (s_bar + d_abs)))
    }
}

/// Relative finite-difference step for first derivatives.
pub const FD_FIRST: f64 = 1e-4;
/// Relative finite-difference step for second derivatives.
pub const FD_SECOND: f64 = 1e-3;
/// Safety factor applied to the largest admissible κ.
pub const KAPPA_SAFETY: f64 = 0.95;
/// Inflation of the finite-difference slope when no analytic bound exists.
pub const SLOPE_FALLBACK_FACTOR: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub betas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub splits: Vec<Option<Split>>,
}

impl StrategyProfile {
    pub fn from_betas(betas: Vec<f64>) -> Self {
        Self {
            betas,
            deltas: Vec::new(),
            splits: Vec::new(),
        }
    }

    pub fn total(&self) -> f64 {
        self.betas.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEstimate {
    pub br_slopes: Vec<f64>,
    pub kappa: Vec<f64>,
    pub matrix: DMatrix<f64>,
}

impl JacobianEstimate {
    /// `J_ij = κ_i·J_i` off the diagonal and `J_ii = 1 − κ_i`.
    pub fn assemble(br_slopes: &[f64], kappa: &[f64]) -> Self {
        let n = br_slopes.len();
        let matrix = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - kappa[i] } else { kappa[i] * br_slopes[i] });
        Self {
            br_slopes: br_slopes.to_vec(),
            kappa: kappa.to_vec(),
            matrix,
        }
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        Self {
            br_slopes: Vec::new(),
            kappa: Vec::new(),
            matrix,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "br")]
    BestResponse,
    #[serde(rename = "jp")]
    JacobiPlay,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::BestResponse => "br",
            Mode::JacobiPlay => "jp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaPolicy {
    /// `0.95·2/(1 + (N−1)|J̄|)` from the slope bound.
    PaperBound,
    /// `1/((N−1)|J| + 1)`.
    DominantZero,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Min,
    Mid,
    Random { seed: u64 },
    Profile(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub mode: Mode,
    pub init: Init,
    pub tol: f64,
    pub max_iters: usize,
    pub kappa_policy: KappaPolicy,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            mode: Mode::JacobiPlay,
            init: Init::Min,
            tol: 1e-6,
            max_iters: 500,
            kappa_policy: KappaPolicy::PaperBound,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Domain(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Domain("max_iters must be >= 1".into()));
        }
        if let KappaPolicy::Fixed(k) = self.kappa_policy {
            if !(k > 0.0) {
                return Err(Error::Domain(format!("fixed kappa must be > 0, got {k}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    MaxIters,
    Oscillating,
    OperatorWithdrew,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Converged => "converged",
            Verdict::MaxIters => "max_iters",
            Verdict::Oscillating => "oscillating",
            Verdict::OperatorWithdrew => "operator_withdrew",
        }
    }
}

/// One synchronous update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Profile after the update.
    pub betas: Vec<f64>,
    pub best_responses: Vec<f64>,
    pub kappa: Vec<f64>,
    pub j_br: Vec<f64>,
    /// `−1 < J_i ≤ 0` for every participating player; `J_i` is the implicit-function slope
    /// at the best response, also when that response is pinned.
    pub uniqueness_ok: bool,
    /// `(N−1)|J_i| < 1` for every participating player.
    pub br_contraction_ok: bool,
    /// Players whose κ came from the finite-difference fallback instead of the analytic bound.
    pub kappa_fallback: Vec<bool>,
    /// Players whose best response is held at a box edge.
    pub pinned: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub player: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub mode: Mode,
    pub initial: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub verdict: Verdict,
    pub final_betas: Vec<f64>,
    /// Players left out of the game before it started; their contribution is 0.
    pub excluded: Vec<Exclusion>,
    /// Players whose utility at the final profile is below their baseline.
    pub withdrawn: Vec<usize>,
    pub diagnostic: Option<String>,
}

impl ConvergenceReport {
    pub fn trajectory(&self) -> Vec<Vec<f64>> {
        std::iter::once(self.initial.clone())
            .chain(self.records.iter().map(|r| r.betas.clone()))
            .collect()
    }

    pub fn kappa_history(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.kappa.clone()).collect()
    }

    pub fn jacobian_history(&self) -> Vec<JacobianEstimate> {
        self.records.iter().map(|r| JacobianEstimate::assemble(&r.j_br, &r.kappa)).collect()
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

pub(crate) fn others_sum(betas: &[f64], i: usize) -> f64 {
    betas.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| b).sum()
}

// second partials of U_i at (own, others); the stencil is shrunk to fit the box when there is room
pub(crate) fn second_partials<G: PoolGame + ?Sized>(game: &G, i: usize, own: f64, others: f64, b: &BoxConstraint) -> Result<(f64, f64)> {
    let room = (own - b.lo).min(b.hi - own).max(0.0);
    let mut h = FD_SECOND * own.abs().max(1e-3);
    if room > 0.0 {
        h = h.min(0.5 * room);
    }
    let u = |a: f64, o: f64| game.utility(i, a, o);
    let u0 = u(own, others)?;
    let uii = (u(own + h, others)? - 2.0 * u0 + u(own - h, others)?) / (h * h);
    let ho = h.min(0.5 * others.max(0.0)).max(1e-12);
    let uij = (u(own + h, others + ho)? - u(own + h, others - ho)? - u(own - h, others + ho)? + u(own - h, others - ho)?)
        / (4.0 * h * ho);
    Ok((uii, uij))
}

/// `J_ij^BR = −U_ij/U_ii` at `(BR_i(β_{−i}), β_{−i})`.
///
/// A best response pinned to a box edge on both sides of the probe neighbourhood has slope 0.
pub fn jacobian_br<G: PoolGame + ?Sized>(game: &G, i: usize, betas: &[f64]) -> Result<f64> {
    let others = others_sum(betas, i);
    let br = game.best_response(i, others)?;
    jacobian_at(game, i, br, others)
}

fn jacobian_at<G: PoolGame + ?Sized>(game: &G, i: usize, br: f64, others: f64) -> Result<f64> {
    if is_pinned(game, i, br, others)? {
        return Ok(0.0);
    }
    implicit_slope(game, i, br, others)
}

/// `−U_ij/U_ii` at `(own, others)`, whether or not `own` is interior.
pub fn implicit_slope<G: PoolGame + ?Sized>(game: &G, i: usize, own: f64, others: f64) -> Result<f64> {
    let b = game.bounds(i)?;
    let (uii, uij) = second_partials(game, i, own, others, &b)?;
    if uii.abs() < 1e-12 {
        return Err(Error::DegenerateCurvature(uii));
    }
    Ok(-uij / uii)
}

/// True when the best response sits on a box edge and stays there over the probe neighbourhood.
pub fn is_pinned<G: PoolGame + ?Sized>(game: &G, i: usize, br: f64, others: f64) -> Result<bool> {
    let b = game.bounds(i)?;
    let edge = BR_WIDTH * 10.0;
    if br > b.lo + edge && br < b.hi - edge {
        return Ok(false);
    }
    let ho = (FD_FIRST * others).max(1e-6);
    let up = game.best_response(i, others + ho)?;
    let down = game.best_response(i, (others - ho).max(0.0))?;
    let same = |x: f64| (x - br).abs() <= edge;
    Ok(same(up) && same(down))
}

/// Slope of the best response by central differences of the best response itself.
pub fn br_slope_direct<G: PoolGame + ?Sized>(game: &G, i: usize, betas: &[f64], h: f64, width: f64) -> Result<f64> {
    let others = others_sum(betas, i);
    let up = game.best_response_width(i, others + h, width)?;
    let down = game.best_response_width(i, others - h, width)?;
    Ok((up - down) / (2.0 * h))
}

/// Largest κ keeping the JP row inside the contraction region, `2/(1 + (N−1)|J|)`.
pub fn kappa_max(j_br: f64, n_ops: usize) -> Result<f64> {
    if !(j_br > -1.0 && j_br < 0.0) {
        return Err(Error::ConditionViolated(format!(
            "best-response slope {j_br} outside (-1, 0)"
        )));
    }
    Ok(2.0 / (1.0 + (n_ops as f64 - 1.0) * j_br.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaBound {
    pub kappa: f64,
    /// Bound on `|J^BR|` used.
    pub slope_bound: f64,
    /// True when the finite-difference slope stood in for the analytic bound.
    pub fallback: bool,
}

/// `κ̄ = 0.95·2/(1 + (N−1)|J̄|)` at the best response to the current profile.
pub fn kappa_bound<G: PoolGame + ?Sized>(game: &G, i: usize, betas: &[f64], n_ops: usize) -> Result<KappaBound> {
    let others = others_sum(betas, i);
    let br = game.best_response(i, others)?;
    let j = jacobian_at(game, i, br, others)?;
    kappa_bound_at(game, i, br, others, j, n_ops)
}

fn kappa_bound_at<G: PoolGame + ?Sized>(game: &G, i: usize, br: f64, others: f64, j: f64, n_ops: usize) -> Result<KappaBound> {
    let (bound, fallback) = match game.slope_bound(i, br, others)? {
        Some(b) => (b.max(j.abs()), false),
        None => (SLOPE_FALLBACK_FACTOR * j.abs(), true),
    };
    let kappa = KAPPA_SAFETY * 2.0 / (1.0 + (n_ops as f64 - 1.0) * bound);
    Ok(KappaBound {
        kappa,
        slope_bound: bound,
        fallback,
    })
}

/// `(1 − κ_i)β_i + κ_i·BR_i`, clamped into each box.
pub fn jp_step(betas: &[f64], brs: &[f64], kappas: &[f64], boxes: &[BoxConstraint]) -> Vec<f64> {
    betas
        .iter()
        .zip(brs)
        .zip(kappas)
        .zip(boxes)
        .map(|(((&b, &r), &k), bx)| bx.clamp((1.0 - k) * b + k * r))
        .collect()
}

/// Lemma-1 style row-sum test: every `Σ_j |J_ij| < 1`.
pub fn contraction_check(jac: &JacobianEstimate) -> bool {
    let m = &jac.matrix;
    (0..m.nrows()).all(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>() < 1.0)
}

/// Real-axis Gerschgorin interval of each row.
pub fn gerschgorin_bound(jac: &JacobianEstimate) -> Vec<(f64, f64)> {
    let m = &jac.matrix;
    (0..m.nrows())
        .map(|i| {
            let r: f64 = (0..m.ncols()).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
            (m[(i, i)] - r, m[(i, i)] + r)
        })
        .collect()
}

/// All Gerschgorin intervals strictly inside `(−1, 1)`.
pub fn gerschgorin_inside_unit(intervals: &[(f64, f64)]) -> bool {
    intervals.iter().all(|&(lo, hi)| lo > -1.0 && hi < 1.0)
}

/// Exact spectral-radius test for matrices whose rows have one repeated off-diagonal
/// value `J_i ≤ 0`.
///
/// With `d_i = J_ii − J_i` and `c_i = −J_i`, the eigenvalues are the roots of
/// `Σ c_i/(d_i − ξ) = 1` plus each repeated `d_i`. When every `|d_i| < 1` the test reduces to
/// `Σ −J_i/(1 + J_ii − J_i) < 1` and `|J_ii − J_i| < 1`. A single `d_i ≥ 1` can still leave the
/// top root below 1, which the secular function at `ξ = 1` decides.
pub fn pooled_eigen_condition(jac: &JacobianEstimate) -> Result<bool> {
    let m = &jac.matrix;
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Structure("matrix is not square".into()));
    }
    let mut c = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let offs: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| m[(i, j)]).collect();
        let ji = offs.first().copied().unwrap_or(0.0);
        if offs.iter().any(|v| (v - ji).abs() > 1e-10) {
            return Err(Error::Structure(format!("row {i} has unequal off-diagonal entries {offs:?}")));
        }
        if ji > 0.0 {
            return Err(Error::Structure(format!("row {i} has positive off-diagonal {ji}")));
        }
        c.push(-ji);
        d.push(m[(i, i)] - ji);
    }
    // rows with c_i = 0 contribute the eigenvalue d_i directly
    if c.iter().zip(&d).any(|(&ci, &di)| ci == 0.0 && di.abs() >= 1.0) {
        return Ok(false);
    }
    let secular = |xi: f64| c.iter().zip(&d).filter(|(&ci, _)| ci > 0.0).map(|(&ci, &di)| ci / (di - xi)).sum::<f64>();
    let coupled: Vec<f64> = c.iter().zip(&d).filter(|(&ci, _)| ci > 0.0).map(|(_, &di)| di).collect();
    if coupled.is_empty() {
        return Ok(true);
    }
    // smallest root lies below min d_i
    if coupled.iter().any(|&di| di <= -1.0) || secular(-1.0) >= 1.0 {
        return Ok(false);
    }
    let mut sorted = coupled.clone();
    sorted.sort_by(f64::total_cmp);
    let top = sorted[sorted.len() - 1];
    if top < 1.0 {
        return Ok(true);
    }
    // a repeated top value is itself an eigenvalue; otherwise the top root sits in (d_(n−1), d_(n))
    let second = if sorted.len() > 1 { sorted[sorted.len() - 2] } else { f64::NEG_INFINITY };
    if second >= 1.0 || second == top {
        return Ok(false);
    }
    Ok(top == 1.0 || secular(1.0) > 1.0)
}

/// Spectral radius by direct eigendecomposition.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn kappa_for(policy: KappaPolicy, j: f64, n: usize, bound: impl FnOnce() -> Result<KappaBound>) -> Result<(f64, bool)> {
    let nm1 = n as f64 - 1.0;
    let contracting = n <= 1 || (j <= 0.0 && j * nm1 > -1.0);
    if contracting {
        return Ok((1.0, false));
    }
    match policy {
        KappaPolicy::PaperBound => {
            let kb = bound()?;
            Ok((kb.kappa, kb.fallback))
        }
        KappaPolicy::DominantZero => Ok((1.0 / (nm1 * j.abs() + 1.0), false)),
        KappaPolicy::Fixed(k) => Ok((k, false)),
    }
}

fn initial_profile(init: &Init, boxes: &[BoxConstraint]) -> Result<Vec<f64>> {
    Ok(match init {
        Init::Min => boxes.iter().map(|b| b.lo).collect(),
        Init::Mid => boxes.iter().map(|b| 0.5 * (b.lo + b.hi)).collect(),
        Init::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            boxes.iter().map(|b| b.lo + (b.hi - b.lo) * rng.random::<f64>()).collect()
        }
        Init::Profile(p) => {
            if p.len() != boxes.len() {
                return Err(Error::Domain(format!(
                    "initial profile has {} entries for {} players",
                    p.len(),
                    boxes.len()
                )));
            }
            p.iter().zip(boxes).map(|(&x, b)| b.clamp(x)).collect()
        }
    })
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Distance within which a revisited profile counts as a cycle.
pub const CYCLE_TOL: f64 = 1e-8;

struct PlayerStep {
    br: f64,
    j: f64,
    kappa: f64,
    fallback: bool,
    pinned: bool,
}

/// Runs best-response or Jacobi-play dynamics with simultaneous updates.
pub fn run_dynamics<G: PoolGame + ?Sized>(game: &G, cfg: &DynamicsConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let n = game.n_players();
    let mut boxes = Vec::with_capacity(n);
    let mut excluded = Vec::new();
    for i in 0..n {
        match game.bounds(i) {
            Ok(b) if !b.is_empty() => boxes.push(b),
            Ok(b) => {
                excluded.push(Exclusion {
                    player: i,
                    reason: format!("empty box [{}, {}]", b.lo, b.hi),
                });
                boxes.push(BoxConstraint { lo: 0.0, hi: 0.0 });
            }
            Err(Error::Infeasible(m)) => {
                excluded.push(Exclusion { player: i, reason: m });
                boxes.push(BoxConstraint { lo: 0.0, hi: 0.0 });
            }
            Err(e) => return Err(e),
        }
    }
    let mut betas = initial_profile(&cfg.init, &boxes)?;
    for e in &excluded {
        betas[e.player] = 0.0;
    }

    // uniqueness precondition on the starting profile
    let pre: Vec<(usize, Result<f64>)> = (0..n)
        .into_par_iter()
        .filter(|i| !excluded.iter().any(|e| e.player == *i))
        .map(|i| {
            let others = others_sum(&betas, i);
            let j = game.best_response(i, others).and_then(|br| implicit_slope(game, i, br, others));
            (i, j)
        })
        .collect();
    for (i, j) in pre {
        let j = j?;
        if !(j > -1.0 && j <= 0.0) {
            excluded.push(Exclusion {
                player: i,
                reason: format!("best-response slope {j:.4} outside (-1, 0]"),
            });
            betas[i] = 0.0;
        }
    }
    excluded.sort_by_key(|e| e.player);
    let active: Vec<usize> = (0..n).filter(|i| !excluded.iter().any(|e| e.player == *i)).collect();
    let n_active = active.len();

    let initial = betas.clone();
    let mut history = vec![betas.clone()];
    let mut records = Vec::new();
    let mut verdict = Verdict::MaxIters;
    let mut diagnostic = None;

    for t in 1..=cfg.max_iters {
        let current = betas.clone();
        let per_player: Vec<Result<PlayerStep>> = active
            .par_iter()
            .map(|&i| {
                let others = others_sum(&current, i);
                let br = game.best_response(i, others)?;
                let j = implicit_slope(game, i, br, others)?;
                let pinned = is_pinned(game, i, br, others)?;
                let (kappa, fallback) = match cfg.mode {
                    Mode::BestResponse => (1.0, false),
                    Mode::JacobiPlay => kappa_for(cfg.kappa_policy, j, n_active, || {
                        kappa_bound_at(game, i, br, others, j, n_active)
                    })?,
                };
                Ok(PlayerStep { br, j, kappa, fallback, pinned })
            })
            .collect();

        let mut brs = current.clone();
        let mut js = vec![0.0; n];
        let mut kappas = vec![0.0; n];
        let mut fallbacks = vec![false; n];
        let mut pinned = vec![false; n];
        for (&i, r) in active.iter().zip(per_player) {
            let step = r?;
            brs[i] = step.br;
            js[i] = step.j;
            kappas[i] = step.kappa;
            fallbacks[i] = step.fallback;
            pinned[i] = step.pinned;
        }
        let next = jp_step(&current, &brs, &kappas, &boxes);
        let nm1 = n_active as f64 - 1.0;
        let uniqueness_ok = active.iter().all(|&i| js[i] > -1.0 && js[i] <= 0.0);
        let br_contraction_ok = active.iter().all(|&i| nm1 * js[i].abs() < 1.0);
        log::debug!("iteration {t}: betas {next:?} kappa {kappas:?} j {js:?}");
        records.push(IterationRecord {
            iteration: t,
            betas: next.clone(),
            best_responses: brs,
            kappa: kappas,
            j_br: js,
            uniqueness_ok,
            br_contraction_ok,
            kappa_fallback: fallbacks,
            pinned,
        });
        let step = inf_norm_diff(&next, &current);
        betas = next;
        if step < cfg.tol {
            verdict = Verdict::Converged;
            break;
        }
        if t >= 2 {
            if let Some(k) = history[..history.len() - 1]
                .iter()
                .position(|p| inf_norm_diff(p, &betas) < CYCLE_TOL)
            {
                verdict = Verdict::Oscillating;
                diagnostic = Some(format!(
                    "profile at iteration {t} revisits iteration {k} (cycle length {})",
                    t - k
                ));
                break;
            }
        }
        history.push(betas.clone());
    }

    let mut withdrawn = Vec::new();
    if verdict == Verdict::Converged {
        for &i in &active {
            if let Some(base) = game.baseline_utility(i)? {
                let u = game.utility(i, betas[i], others_sum(&betas, i))?;
                if u < base {
                    withdrawn.push(i);
                }
            }
        }
        if !withdrawn.is_empty() {
            verdict = Verdict::OperatorWithdrew;
            diagnostic = Some(format!("players {withdrawn:?} fall below their baseline utility"));
        }
    }

    Ok(ConvergenceReport {
        mode: cfg.mode,
        initial,
        records,
        verdict,
        final_betas: betas,
        excluded,
        withdrawn,
        diagnostic,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    /// Utility supplied by a closure over `(player, own, others)`.
    pub struct FnGame<F: Fn(usize, f64, f64) -> f64 + Sync> {
        pub n: usize,
        pub lo: f64,
        pub hi: f64,
        pub f: F,
    }

    impl<F: Fn(usize, f64, f64) -> f64 + Sync> PoolGame for FnGame<F> {
        fn n_players(&self) -> usize {
            self.n
        }
        fn bounds(&self, _i: usize) -> Result<BoxConstraint> {
            Ok(BoxConstraint { lo: self.lo, hi: self.hi })
        }
        fn utility(&self, i: usize, own: f64, others: f64) -> Result<f64> {
            Ok((self.f)(i, own, others))
        }
    }

    fn bo(n: usize) -> Vec<BoxConstraint> {
        vec![BoxConstraint { lo: 0.0, hi: 1.0 }; n]
    }

    #[test]
    fn jacobian_synthetic_cases() {
        let sep = FnGame {
            n: 3,
            lo: 0.0,
            hi: 1.0,
            f: |_, b: f64, o: f64| -(b - 0.4).powi(2) + o.sin(),
        };
        assert!(jacobian_br(&sep, 0, &[0.3, 0.2, 0.2]).unwrap().abs() < 1e-6);
        let lin = FnGame {
            n: 3,
            lo: 0.0,
            hi: 1.0,
            f: |_, b: f64, o: f64| -(b + 0.5 * o - 0.6).powi(2),
        };
        let j = jacobian_br(&lin, 0, &[0.3, 0.2, 0.2]).unwrap();
        assert!((j + 0.5).abs() < 1e-6, "{j}");
        // pinned at the upper edge
        let pin = FnGame {
            n: 2,
            lo: 0.0,
            hi: 0.5,
            f: |_, b: f64, o: f64| -(b + 0.5 * o - 2.0).powi(2),
        };
        assert_eq!(jacobian_br(&pin, 0, &[0.3, 0.2]).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_curvature_is_reported() {
        let g = FnGame {
            n: 2,
            lo: 0.0,
            hi: 1.0,
            f: |_, b: f64, _o: f64| 1e-16 * (b - 0.5).abs().min(0.1),
        };
        let r = jacobian_at(&g, 0, 0.5, 0.3);
        assert!(matches!(r, Err(Error::DegenerateCurvature(_))), "{r:?}");
    }

    #[test]
    fn kappa_max_examples() {
        assert!((kappa_max(-0.5, 3).unwrap() - 1.0).abs() < 1e-15);
        assert!((kappa_max(-0.9, 3).unwrap() - 2.0 / 2.8).abs() < 1e-15);
        assert!((kappa_max(-1e-12, 2).unwrap() - 2.0).abs() < 1e-9);
        assert!(matches!(kappa_max(-1.0, 3), Err(Error::ConditionViolated(_))));
        assert!(matches!(kappa_max(0.0, 3), Err(Error::ConditionViolated(_))));
    }

    #[test]
    fn jp_step_examples() {
        let b = bo(1);
        assert!((jp_step(&[0.2], &[0.4], &[0.5], &b)[0] - 0.3).abs() < 1e-15);
        assert_eq!(jp_step(&[0.2, 0.7], &[0.4, 0.1], &[1.0, 1.0], &bo(2)), vec![0.4, 0.1]);
        for k in [0.1, 0.7, 1.3] {
            assert_eq!(jp_step(&[0.25], &[0.25], &[k], &b), vec![0.25]);
        }
        assert!((jp_step(&[0.9], &[0.5], &[1.9], &bo(1))[0] - 0.14).abs() < 1e-15);
        let tight = [BoxConstraint { lo: 0.2, hi: 0.6 }];
        assert_eq!(jp_step(&[0.3], &[1.0], &[0.9], &tight), vec![0.6]);
    }

    #[test]
    fn contraction_examples() {
        assert!(contraction_check(&JacobianEstimate::assemble(&[-0.4; 3], &[1.0; 3])));
        assert!(!contraction_check(&JacobianEstimate::assemble(&[-0.6; 3], &[1.0; 3])));
        let jp = JacobianEstimate::assemble(&[-0.6; 3], &[0.95; 3]);
        let row: f64 = jp.matrix.row(0).iter().map(|v| v.abs()).sum();
        assert!((row - 1.19).abs() < 1e-12);
        assert!(!contraction_check(&jp));
        // eigenvalue 0.05 − 2·0.57 = −1.09 lies outside the unit disk
        assert!(!pooled_eigen_condition(&jp).unwrap());
        assert!((spectral_radius(&jp.matrix) - 1.09).abs() < 1e-9);
        // row sums 1.16 fail, yet the spectral radius is 0.76
        let jp = JacobianEstimate::assemble(&[-0.6; 3], &[0.8; 3]);
        assert!(!contraction_check(&jp));
        assert!(pooled_eigen_condition(&jp).unwrap());
        assert!((spectral_radius(&jp.matrix) - 0.76).abs() < 1e-9);
    }

    #[test]
    fn gerschgorin_examples() {
        let d = JacobianEstimate::from_matrix(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.3, -0.2])));
        assert_eq!(gerschgorin_bound(&d), vec![(0.3, 0.3), (-0.2, -0.2)]);
        let jp = JacobianEstimate::assemble(&[-0.6; 3], &[0.5; 3]);
        let iv = gerschgorin_bound(&jp);
        assert!((iv[0].0 + 0.1).abs() < 1e-12 && (iv[0].1 - 1.1).abs() < 1e-12);
        assert!(!gerschgorin_inside_unit(&iv));
    }

    #[test]
    fn pooled_examples() {
        let a = JacobianEstimate::assemble(&[-0.4; 3], &[1.0; 3]);
        assert!(pooled_eigen_condition(&a).unwrap());
        let mut ev: Vec<f64> = a.matrix.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] + 0.8).abs() < 1e-12 && (ev[2] - 0.4).abs() < 1e-12);
        let b = JacobianEstimate::assemble(&[-0.6; 3], &[1.0; 3]);
        assert!(!pooled_eigen_condition(&b).unwrap());
        assert!((spectral_radius(&b.matrix) - 1.2).abs() < 1e-12);
        let c = JacobianEstimate::assemble(&[-1e-14; 4], &[0.3; 4]);
        assert!(pooled_eigen_condition(&c).unwrap());
        // d_1 = 1.05 > 1, yet both eigenvalues (0.642, 0.008) are inside the unit disk
        let d = DMatrix::from_row_slice(2, 2, &[0.55, -0.5, -0.1, 0.1]);
        assert!(spectral_radius(&d) < 0.65);
        assert!(pooled_eigen_condition(&JacobianEstimate::from_matrix(d)).unwrap());
        let e = DMatrix::from_row_slice(2, 2, &[1.4, -0.1, -0.1, 0.1]);
        assert!(spectral_radius(&e) > 1.4);
        assert!(!pooled_eigen_condition(&JacobianEstimate::from_matrix(e)).unwrap());
        let mut bad = a.matrix.clone();
        bad[(0, 1)] = -0.3;
        assert!(matches!(pooled_eigen_condition(&JacobianEstimate::from_matrix(bad)), Err(Error::Structure(_))));
    }

    #[test]
    fn gerschgorin_encloses_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(2..7);
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let jac = JacobianEstimate::from_matrix(m.clone());
            let iv = gerschgorin_bound(&jac);
            for z in m.complex_eigenvalues().iter() {
                let inside = (0..n).any(|i| {
                    let r = (iv[i].1 - iv[i].0) / 2.0;
                    (z - nalgebra::Complex::new(m[(i, i)], 0.0)).norm() <= r + 1e-9
                });
                assert!(inside);
            }
        }
    }

    #[test]
    fn single_player_converges_in_one_step() {
        let g = FnGame {
            n: 1,
            lo: 0.01,
            hi: 0.9,
            f: |_, b: f64, _| -(b - 0.37).powi(2),
        };
        let r = run_dynamics(&g, &DynamicsConfig::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Converged);
        assert!((r.final_betas[0] - 0.37).abs() < 1e-7);
        assert!(r.iterations() <= 2);
    }

    #[test]
    fn oscillation_is_detected_for_steep_coupling() {
        // BR_i = 0.9 − 0.8·Σβ_{-i}: BR dynamics diverge into a 2-cycle at the box edges
        let g = FnGame {
            n: 3,
            lo: 0.0,
            hi: 1.0,
            f: |_, b: f64, o: f64| -(b + 0.8 * o - 0.9).powi(2),
        };
        let cfg = DynamicsConfig {
            mode: Mode::BestResponse,
            init: Init::Profile(vec![0.3, 0.3, 0.3]),
            ..Default::default()
        };
        let r = run_dynamics(&g, &cfg).unwrap();
        assert!(matches!(r.verdict, Verdict::Oscillating | Verdict::MaxIters), "{:?}", r.verdict);
        let jp = run_dynamics(
            &g,
            &DynamicsConfig {
                init: Init::Profile(vec![0.3, 0.3, 0.3]),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(jp.verdict, Verdict::Converged);
        assert!((jp.final_betas[0] - 0.9 / 2.6).abs() < 1e-5);
        assert!(jp.records.iter().all(|r| r.kappa_fallback.iter().all(|f| *f)));
    }

    #[test]
    fn steep_slope_excludes_player() {
        let g = FnGame {
            n: 2,
            lo: 0.0,
            hi: 1.0,
            f: |i, b: f64, o: f64| if i == 0 { -(b + 1.5 * o - 1.2).powi(2) } else { -(b + 0.2 * o - 0.5).powi(2) },
        };
        let r = run_dynamics(&g, &DynamicsConfig { init: Init::Mid, ..Default::default() }).unwrap();
        assert_eq!(r.excluded.len(), 1);
        assert_eq!(r.excluded[0].player, 0);
        assert_eq!(r.final_betas[0], 0.0);
        assert!((r.final_betas[1] - 0.5).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn kappa_inside_range_contracts(n in 2usize..8, frac in 0.01f64..0.99, kfrac in 0.01f64..0.99) {
            let j = -frac / (n as f64 - 1.0);
            let k = kfrac * kappa_max(j, n).unwrap();
            let jac = JacobianEstimate::assemble(&vec![j; n], &vec![k; n]);
            prop_assert!(contraction_check(&jac));
        }

        #[test]
        fn unit_kappa_reproduces_br(betas in proptest::collection::vec(0.0f64..1.0, 1..6), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let brs: Vec<f64> = betas.iter().map(|_| rng.random::<f64>()).collect();
            let out = jp_step(&betas, &brs, &vec![1.0; betas.len()], &bo(betas.len()));
            for (a, b) in out.iter().zip(&brs) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
