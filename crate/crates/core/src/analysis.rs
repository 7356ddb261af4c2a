//! Equilibrium checks, uniqueness certificates and efficiency measures.
//!
//! Everything here works on a [`PoolGame`], so the same routines serve both the
//! scenario-backed game and small synthetic games used as oracles.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{implicit_slope, others_sum, second_partials, PoolGame, StrategyProfile, FD_SECOND};
use crate::operator::{BoxConstraint, RateModel};

/// Distance from a box edge below which a coordinate counts as being on the edge.
pub const INTERIOR_MARGIN: f64 = 1e-6;
/// Largest principal sub-matrix enumeration attempted by [`is_p_matrix`].
pub const P_MATRIX_MAX_N: usize = 12;
/// Random starts used by the welfare and bargaining searches.
pub const MULTI_START: usize = 20;
/// Coordinate-ascent stopping threshold on the largest coordinate move in a sweep.
pub const ASCENT_TOL: f64 = 1e-6;
const ASCENT_MAX_SWEEPS: usize = 200;
const LINE_SCAN: usize = 17;
const LINE_WIDTH: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uniqueness {
    CertifiedUnique,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexCheck {
    /// `−H` restricted to interior coordinates is row diagonally dominant with positive diagonal.
    DiagDominant,
    /// Every principal minor of the interior `−H` is positive.
    PMatrixVerified,
    /// Both checks ran and neither holds.
    Failed,
    /// No interior coordinate, or the P-matrix enumeration was too large.
    NotChecked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCertificate {
    pub profile: StrategyProfile,
    pub is_ne: bool,
    /// `|BR_i(β_{−i}) − β_i|`; for a player with an empty box, `|β_i|`.
    pub per_op_br_gap: Vec<f64>,
    /// Implicit-function best-response slope; `None` for players with an empty box.
    pub br_slopes: Vec<Option<f64>>,
    pub uniqueness: Uniqueness,
    pub index_check: IndexCheck,
}

/// Checks the fixed-point condition and attaches uniqueness evidence.
pub fn verify_ne<G: PoolGame + ?Sized>(game: &G, betas: &[f64], tol: f64) -> Result<EquilibriumCertificate> {
    let n = game.n_players();
    if betas.len() != n {
        return Err(Error::Domain(format!("profile has {} entries for {n} players", betas.len())));
    }
    let boxes = boxes_of(game)?;
    for (i, (b, x)) in boxes.iter().zip(betas).enumerate() {
        if let Some(b) = b {
            if *x < b.lo - 1e-12 || *x > b.hi + 1e-12 {
                return Err(Error::Domain(format!("player {i}: beta {x} outside [{}, {}]", b.lo, b.hi)));
            }
        }
    }

    let per: Vec<Result<(f64, Option<f64>)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if boxes[i].is_none() {
                return Ok((betas[i].abs(), None));
            }
            let others = others_sum(betas, i);
            let br = game.best_response(i, others)?;
            let j = implicit_slope(game, i, br, others)?;
            Ok(((br - betas[i]).abs(), Some(j)))
        })
        .collect();
    let mut gaps = Vec::with_capacity(n);
    let mut slopes = Vec::with_capacity(n);
    for r in per {
        let (g, j) = r?;
        gaps.push(g);
        slopes.push(j);
    }
    let is_ne = gaps.iter().all(|g| *g < tol);
    let index_check = diag_dominance_index(game, betas)?.check;
    let slopes_ok = slopes.iter().flatten().all(|j| *j > -1.0 && *j < 0.0);
    let uniqueness = if slopes_ok || matches!(index_check, IndexCheck::DiagDominant | IndexCheck::PMatrixVerified) {
        Uniqueness::CertifiedUnique
    } else {
        Uniqueness::Unknown
    };
    Ok(EquilibriumCertificate {
        profile: game.profile(betas)?,
        is_ne,
        per_op_br_gap: gaps,
        br_slopes: slopes,
        uniqueness,
        index_check,
    })
}

fn boxes_of<G: PoolGame + ?Sized>(game: &G) -> Result<Vec<Option<BoxConstraint>>> {
    (0..game.n_players())
        .map(|i| match game.bounds(i) {
            Ok(b) if !b.is_empty() => Ok(Some(b)),
            Ok(_) | Err(Error::Infeasible(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

fn step_for(x: f64, b: &BoxConstraint) -> f64 {
    let room = (x - b.lo).min(b.hi - x).max(0.0);
    let h = FD_SECOND * x.abs().max(1e-3);
    if room > 0.0 {
        h.min(0.5 * room)
    } else {
        h
    }
}

/// Game Hessian `H_ij = ∂²U_i/∂β_i∂β_j` by central differences in the full profile.
///
/// Rows and columns of players with an empty box are zero.
pub fn hessian_fd<G: PoolGame + ?Sized>(game: &G, betas: &[f64]) -> Result<DMatrix<f64>> {
    let n = game.n_players();
    let boxes = boxes_of(game)?;
    let steps: Vec<f64> = (0..n).map(|k| boxes[k].map(|b| step_for(betas[k], &b)).unwrap_or(0.0)).collect();
    let rows: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            if boxes[i].is_none() {
                return Ok(row);
            }
            let u = |di: f64, j: usize, dj: f64| -> Result<f64> {
                let mut v = betas.to_vec();
                v[i] += di;
                v[j] += dj;
                game.utility(i, v[i], others_sum(&v, i))
            };
            let hi = steps[i];
            let u0 = u(0.0, i, 0.0)?;
            row[i] = (u(hi, i, 0.0)? - 2.0 * u0 + u(-hi, i, 0.0)?) / (hi * hi);
            for j in 0..n {
                if j == i || boxes[j].is_none() {
                    continue;
                }
                let hj = steps[j];
                row[j] = (u(hi, j, hj)? - u(hi, j, -hj)? - u(-hi, j, hj)? + u(-hi, j, -hj)?) / (4.0 * hi * hj);
            }
            Ok(row)
        })
        .collect();
    let mut h = DMatrix::zeros(n, n);
    for (i, r) in rows.into_iter().enumerate() {
        for (j, v) in r?.into_iter().enumerate() {
            h[(i, j)] = v;
        }
    }
    Ok(h)
}

/// `D(I − T)` with `D = diag(U_ii)` and `T_ij = −U_ij/U_ii` taken at the profile itself.
pub fn hessian_from_slopes<G: PoolGame + ?Sized>(game: &G, betas: &[f64]) -> Result<DMatrix<f64>> {
    let n = game.n_players();
    let boxes = boxes_of(game)?;
    let rows: Vec<Result<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| match boxes[i] {
            None => Ok((0.0, 0.0)),
            Some(b) => {
                let others = others_sum(betas, i);
                let (uii, _) = second_partials(game, i, betas[i], others, &b)?;
                Ok((uii, implicit_slope(game, i, betas[i], others)?))
            }
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for (i, r) in rows.into_iter().enumerate() {
        let (d, t) = r?;
        if boxes[i].is_none() {
            continue;
        }
        for j in 0..n {
            m[(i, j)] = if i == j {
                d
            } else if boxes[j].is_some() {
                -d * t
            } else {
                0.0
            };
        }
    }
    Ok(m)
}

/// Row diagonal dominance with a positive diagonal.
pub fn is_diag_dominant(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| {
        let off: f64 = (0..m.ncols()).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        m[(i, i)] > 0.0 && m[(i, i)] > off
    })
}

/// Every principal minor positive, by enumeration of all `2^n − 1` index subsets.
pub fn is_p_matrix(m: &DMatrix<f64>) -> Result<bool> {
    let n = m.nrows();
    if n > P_MATRIX_MAX_N {
        return Err(Error::TooLarge(format!(
            "principal-minor enumeration is limited to n <= {P_MATRIX_MAX_N}, got {n}"
        )));
    }
    for mask in 1u32..(1u32 << n) {
        let idx: Vec<usize> = (0..n).filter(|k| mask & (1 << k) != 0).collect();
        let sub = m.select_rows(&idx).select_columns(&idx);
        if !(sub.determinant() > 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexReport {
    pub check: IndexCheck,
    /// Players whose coordinate is strictly inside the box.
    pub interior: Vec<usize>,
    /// `−H` over the interior coordinates.
    pub neg_hessian: DMatrix<f64>,
    pub p_matrix: Option<bool>,
    /// Largest entrywise relative gap between the two Hessian constructions.
    pub identity_residual: f64,
}

/// Index check on `−H` at a profile, restricted to interior coordinates.
pub fn diag_dominance_index<G: PoolGame + ?Sized>(game: &G, betas: &[f64]) -> Result<IndexReport> {
    let boxes = boxes_of(game)?;
    let interior: Vec<usize> = boxes
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            let b = (*b)?;
            (betas[i] - b.lo > INTERIOR_MARGIN && b.hi - betas[i] > INTERIOR_MARGIN).then_some(i)
        })
        .collect();
    if interior.is_empty() {
        return Ok(IndexReport {
            check: IndexCheck::NotChecked,
            interior,
            neg_hessian: DMatrix::zeros(0, 0),
            p_matrix: None,
            identity_residual: 0.0,
        });
    }
    let h = hessian_fd(game, betas)?;
    let dit = hessian_from_slopes(game, betas)?;
    let identity_residual = relative_gap(&h, &dit, &interior);
    let neg = -h.select_rows(&interior).select_columns(&interior);
    let p_matrix = if interior.len() <= P_MATRIX_MAX_N {
        Some(is_p_matrix(&neg)?)
    } else {
        None
    };
    let check = if is_diag_dominant(&neg) {
        IndexCheck::DiagDominant
    } else {
        match p_matrix {
            Some(true) => IndexCheck::PMatrixVerified,
            Some(false) => IndexCheck::Failed,
            None => IndexCheck::NotChecked,
        }
    };
    Ok(IndexReport {
        check,
        interior,
        neg_hessian: neg,
        p_matrix,
        identity_residual,
    })
}

/// Largest `|a_ij − b_ij| / max(|a_ij|, |b_ij|)` over the given rows and columns.
pub fn relative_gap(a: &DMatrix<f64>, b: &DMatrix<f64>, idx: &[usize]) -> f64 {
    let mut worst: f64 = 0.0;
    for &i in idx {
        for &j in idx {
            let scale = a[(i, j)].abs().max(b[(i, j)].abs());
            if scale > 0.0 {
                worst = worst.max((a[(i, j)] - b[(i, j)]).abs() / scale);
            }
        }
    }
    worst
}

fn linspace(b: &BoxConstraint, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![b.lo];
    }
    let step = (b.hi - b.lo) / (m - 1) as f64;
    (0..m).map(|k| if k + 1 == m { b.hi } else { b.lo + step * k as f64 }).collect()
}

/// Discrete equilibria on a uniform grid over each box.
///
/// A grid profile qualifies when every coordinate is within one grid step of the discrete best
/// response to the others. Qualifying profiles that sit within two grid steps of each other
/// are merged, and each group is reported by its member with the smallest total index gap.
pub fn brute_force_ne<G: PoolGame + ?Sized>(game: &G, grid_points: usize) -> Result<Vec<StrategyProfile>> {
    let n = game.n_players();
    if n > 3 {
        return Err(Error::TooLarge(format!(
            "grid search costs grid_points^n best-response evaluations and is limited to n <= 3, got n = {n}; \
             run the dynamics and check the result with verify_ne instead"
        )));
    }
    if n == 0 || grid_points == 0 {
        return Err(Error::Domain("need at least one player and one grid point".into()));
    }
    let mut grids = Vec::with_capacity(n);
    for i in 0..n {
        let b = game.bounds(i)?;
        if b.is_empty() {
            return Err(Error::Infeasible(format!("player {i}: box [{}, {}] is empty", b.lo, b.hi)));
        }
        grids.push(linspace(&b, grid_points));
    }
    let m = grid_points;
    let n_others = m.pow(n as u32 - 1);

    // per player: discrete BR index for each combination of the others' indices
    let mut tables: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let sums: Vec<f64> = (0..n_others)
            .map(|code| {
                let mut c = code;
                let mut s = 0.0;
                for &j in &others {
                    s += grids[j][c % m];
                    c /= m;
                }
                s
            })
            .collect();
        let mut uniq = sums.clone();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup_by(|a, b| a.to_bits() == b.to_bits());
        let brs: Vec<Result<usize>> = uniq
            .par_iter()
            .map(|&s| {
                let mut best = (0, f64::NEG_INFINITY);
                for (k, &x) in grids[i].iter().enumerate() {
                    let u = game.utility(i, x, s)?;
                    if u > best.1 {
                        best = (k, u);
                    }
                }
                Ok(best.0)
            })
            .collect();
        let mut lookup = HashMap::with_capacity(uniq.len());
        for (s, r) in uniq.iter().zip(brs) {
            lookup.insert(s.to_bits(), r?);
        }
        tables.push(sums.iter().map(|s| lookup[&s.to_bits()]).collect());
    }

    let total = m.pow(n as u32);
    let mut hits: Vec<(Vec<usize>, usize)> = Vec::new();
    let mut idx = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for k in idx.iter_mut() {
            *k = c % m;
            c /= m;
        }
        let mut gap = 0;
        let mut ok = true;
        for i in 0..n {
            let mut oc = 0;
            let mut mul = 1;
            for j in (0..n).filter(|&j| j != i) {
                oc += idx[j] * mul;
                mul *= m;
            }
            let d = idx[i].abs_diff(tables[i][oc]);
            if d > 1 {
                ok = false;
                break;
            }
            gap += d;
        }
        if ok {
            hits.push((idx.clone(), gap));
        }
    }

    // group hits that lie within two grid steps of each other
    let mut group = vec![usize::MAX; hits.len()];
    let mut reps = Vec::new();
    for start in 0..hits.len() {
        if group[start] != usize::MAX {
            continue;
        }
        let g = reps.len();
        group[start] = g;
        let mut stack = vec![start];
        let mut best = start;
        while let Some(a) = stack.pop() {
            if hits[a].1 < hits[best].1 {
                best = a;
            }
            for b in 0..hits.len() {
                if group[b] == usize::MAX && hits[a].0.iter().zip(&hits[b].0).all(|(x, y)| x.abs_diff(*y) <= 2) {
                    group[b] = g;
                    stack.push(b);
                }
            }
        }
        reps.push(best);
    }
    reps.iter()
        .map(|&r| {
            let betas: Vec<f64> = hits[r].0.iter().enumerate().map(|(i, &k)| grids[i][k]).collect();
            game.profile(&betas)
        })
        .collect()
}

/// Maximizes `f` on `[lo, hi]` by a coarse scan followed by golden section around the best scan
/// point. `f` may return `−∞` on part of the interval.
fn line_max(f: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<(f64, f64)> {
    if hi - lo <= LINE_WIDTH {
        return Ok((lo, f(lo)?));
    }
    let step = (hi - lo) / (LINE_SCAN - 1) as f64;
    let mut best = (lo, f64::NEG_INFINITY);
    let mut best_k = 0;
    for k in 0..LINE_SCAN {
        let x = if k + 1 == LINE_SCAN { hi } else { lo + step * k as f64 };
        let v = f(x)?;
        if v > best.1 {
            best = (x, v);
            best_k = k;
        }
    }
    if best.1 == f64::NEG_INFINITY {
        return Ok(best);
    }
    let mut a = (lo + step * best_k.saturating_sub(1) as f64).max(lo);
    let mut b = (lo + step * (best_k + 1) as f64).min(hi);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > LINE_WIDTH {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    let v = f(x)?;
    Ok(if v > best.1 { (x, v) } else { best })
}

// coordinate ascent inside the boxes; players without a box stay at 0
fn coordinate_ascent(
    objective: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
    boxes: &[Option<BoxConstraint>],
    start: Vec<f64>,
) -> Result<(Vec<f64>, f64)> {
    let mut x = start;
    let mut val = objective(&x)?;
    for _ in 0..ASCENT_MAX_SWEEPS {
        let mut moved: f64 = 0.0;
        for (i, b) in boxes.iter().enumerate() {
            let Some(b) = b else { continue };
            let (xi, v) = line_max(
                |t| {
                    let mut y = x.clone();
                    y[i] = t;
                    objective(&y)
                },
                b.lo,
                b.hi,
            )?;
            if v > val {
                moved = moved.max((xi - x[i]).abs());
                x[i] = xi;
                val = v;
            }
        }
        if moved < ASCENT_TOL {
            break;
        }
    }
    Ok((x, val))
}

fn random_point(rng: &mut ChaCha8Rng, boxes: &[Option<BoxConstraint>]) -> Vec<f64> {
    boxes
        .iter()
        .map(|b| match b {
            Some(b) => rng.random_range(b.lo..=b.hi),
            None => 0.0,
        })
        .collect()
}

fn utilities<G: PoolGame + ?Sized>(game: &G, boxes: &[Option<BoxConstraint>], x: &[f64]) -> Result<Vec<Option<f64>>> {
    boxes
        .iter()
        .enumerate()
        .map(|(i, b)| match b {
            Some(_) => Ok(Some(game.utility(i, x[i], others_sum(x, i))?)),
            None => Ok(None),
        })
        .collect()
}

/// Sum of utilities of the players with a non-empty box.
pub fn welfare<G: PoolGame + ?Sized>(game: &G, betas: &[f64]) -> Result<f64> {
    let boxes = boxes_of(game)?;
    Ok(utilities(game, &boxes, betas)?.into_iter().flatten().sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareResult {
    pub optimum: StrategyProfile,
    pub welfare: f64,
    /// Welfare at the profile being rated.
    pub reference_welfare: f64,
    /// `reference_welfare / welfare`.
    pub psi: f64,
}

/// Maximizes the sum of utilities over the joint box and rates `reference` against it.
///
/// Starts are [`MULTI_START`] points drawn from `seed` plus `reference` itself.
pub fn social_welfare_opt<G: PoolGame + ?Sized>(game: &G, reference: &[f64], seed: u64) -> Result<WelfareResult> {
    let n = game.n_players();
    if reference.len() != n {
        return Err(Error::Domain(format!("profile has {} entries for {n} players", reference.len())));
    }
    let boxes = boxes_of(game)?;
    if boxes.iter().all(Option::is_none) {
        return Err(Error::Infeasible("every player has an empty box".into()));
    }
    let objective = |x: &[f64]| -> Result<f64> { Ok(utilities(game, &boxes, x)?.into_iter().flatten().sum()) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<Vec<f64>> = (0..MULTI_START).map(|_| random_point(&mut rng, &boxes)).collect();
    starts.push(reference.to_vec());
    let runs: Vec<Result<(Vec<f64>, f64)>> = starts
        .into_par_iter()
        .map(|s| coordinate_ascent(&objective, &boxes, s))
        .collect();
    let (best, w) = pick_best(runs)?;
    let w_ref = objective(reference)?;
    if !(w > 0.0) {
        return Err(Error::Degenerate(format!("optimal welfare {w} is not positive, efficiency ratio undefined")));
    }
    Ok(WelfareResult {
        optimum: game.profile(&best)?,
        welfare: w,
        reference_welfare: w_ref,
        psi: w_ref / w,
    })
}

fn pick_best(runs: Vec<Result<(Vec<f64>, f64)>>) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in runs {
        let (x, v) = r?;
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((x, v));
        }
    }
    best.ok_or_else(|| Error::Domain("no starting point".into()))
}

/// Disagreement point of the bargaining problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disagreement {
    Zero,
    /// Utility without sharing.
    Baseline,
    /// Utility at a given profile, typically the equilibrium.
    AtProfile(Vec<f64>),
    Values(Vec<f64>),
}

impl Disagreement {
    pub fn resolve<G: PoolGame + ?Sized>(&self, game: &G) -> Result<Vec<f64>> {
        let n = game.n_players();
        match self {
            Disagreement::Zero => Ok(vec![0.0; n]),
            Disagreement::Baseline => (0..n)
                .map(|i| {
                    game.baseline_utility(i)?
                        .ok_or_else(|| Error::Domain(format!("player {i} has no baseline utility")))
                })
                .collect(),
            Disagreement::AtProfile(b) => {
                if b.len() != n {
                    return Err(Error::Domain(format!("profile has {} entries for {n} players", b.len())));
                }
                (0..n).map(|i| game.utility(i, b[i], others_sum(b, i))).collect()
            }
            Disagreement::Values(v) => {
                if v.len() != n {
                    return Err(Error::Domain(format!("{} disagreement values for {n} players", v.len())));
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BargainingResult {
    pub solution: StrategyProfile,
    pub disagreement: Vec<f64>,
    pub utilities: Vec<f64>,
    /// `∏ (U_i − U_{i,d})` over the players with a non-empty box.
    pub product_value: f64,
}

/// Random points tried when looking for a strict improvement over the disagreement point.
const BARGAIN_SAMPLES: usize = 2000;

/// `Σ log(U_i − U_{i,d})`, or `−∞` outside the improvement set.
pub fn nash_log_product<G: PoolGame + ?Sized>(game: &G, disagreement: &[f64], betas: &[f64]) -> Result<f64> {
    let boxes = boxes_of(game)?;
    log_product(game, &boxes, disagreement, betas)
}

fn log_product<G: PoolGame + ?Sized>(game: &G, boxes: &[Option<BoxConstraint>], d: &[f64], x: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (i, u) in utilities(game, boxes, x)?.into_iter().enumerate() {
        if let Some(u) = u {
            let gap = u - d[i];
            if !(gap > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            s += gap.ln();
        }
    }
    Ok(s)
}

/// Maximizes the Nash product over the joint box restricted to strict improvements.
pub fn nash_bargaining<G: PoolGame + ?Sized>(game: &G, disagreement: &Disagreement, seed: u64) -> Result<BargainingResult> {
    let n = game.n_players();
    let d = disagreement.resolve(game)?;
    let boxes = boxes_of(game)?;
    if boxes.iter().all(Option::is_none) {
        return Err(Error::Infeasible("every player has an empty box".into()));
    }
    let objective = |x: &[f64]| log_product(game, &boxes, &d, x);

    // candidate starts: seeded random points plus the common-fraction diagonal of the boxes
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cands: Vec<Vec<f64>> = (0..BARGAIN_SAMPLES).map(|_| random_point(&mut rng, &boxes)).collect();
    for k in 0..=100 {
        let t = k as f64 / 100.0;
        cands.push(boxes.iter().map(|b| b.map(|b| b.lo + t * (b.hi - b.lo)).unwrap_or(0.0)).collect());
    }
    let scored: Vec<Result<f64>> = cands.par_iter().map(|x| objective(x)).collect();
    let mut feasible = Vec::new();
    for (x, v) in cands.into_iter().zip(scored) {
        let v = v?;
        if v > f64::NEG_INFINITY {
            feasible.push((x, v));
        }
    }
    if feasible.is_empty() {
        return Err(Error::BargainingInfeasible(format!(
            "no profile among {} samples improves on the disagreement point {d:?}",
            BARGAIN_SAMPLES + 101
        )));
    }
    feasible.sort_by(|a, b| b.1.total_cmp(&a.1));
    feasible.truncate(MULTI_START);
    let runs: Vec<Result<(Vec<f64>, f64)>> = feasible
        .into_par_iter()
        .map(|(s, _)| coordinate_ascent(&objective, &boxes, s))
        .collect();
    let (best, _) = pick_best(runs)?;
    let us = utilities(game, &boxes, &best)?;
    let product_value = us.iter().enumerate().filter_map(|(i, u)| u.map(|u| u - d[i])).product();
    Ok(BargainingResult {
        solution: game.profile(&best)?,
        disagreement: d,
        utilities: (0..n).map(|i| us[i].unwrap_or(0.0)).collect(),
        product_value,
    })
}

/// Weighted sum rate at the profile relative to the no-sharing baseline.
pub fn performance_gain(model: &RateModel, i: usize, betas: &[f64]) -> Result<f64> {
    let scn = model.scenario();
    let n = scn.n_ops();
    if i >= n || betas.len() != n {
        return Err(Error::Domain(format!("operator {i} / profile of {} for {n} operators", betas.len())));
    }
    let w = scn.operators[i].weights;
    let base = model.baseline(i)?.rates;
    let den = (w.cellular + w.inter) * base.q_c + w.intra * base.q_d;
    if !(den.abs() > 0.0) {
        return Err(Error::Degenerate(format!("{}: baseline weighted rate is zero", scn.operators[i].name)));
    }
    let total: f64 = betas.iter().sum();
    let r = model.rate_triple(i, betas[i], scn.game_delta(i), total)?;
    Ok((w.cellular * r.q_c + w.intra * r.q_d + w.inter * r.q_s) / den)
}
