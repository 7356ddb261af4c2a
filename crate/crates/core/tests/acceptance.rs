//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and exits non-zero
//! when any fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use copss::analysis::{brute_force_ne, hessian_fd, hessian_from_slopes, relative_gap};
use copss::cli::cli_main;
use copss::config::{symmetric_three, ScenarioFile};
use copss::game::{
    br_slope_direct, jacobian_br, jp_step, pooled_eigen_condition, run_dynamics, spectral_radius, DynamicsConfig,
    JacobianEstimate, Mode, PoolGame, ScenarioGame, Verdict,
};
use copss::operator::{RateModel, SharingScheme, UtilityKind, Weights};
use copss::stochgeom::{
    coverage_probability, dbm_to_watts, thermal_noise, Exclusion, FieldSpec, Link, LinkDistance, LinkKind, PathlossModel,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};

const CONCAVITY_DRAWS: usize = 50;
const CONCAVITY_GRID: usize = 40;
const CONCAVITY_TOL: f64 = 1e-9;

const ASCENDING_OPERATORS: usize = 20;
const ASCENDING_GRID: usize = 20;
/// Slack for the root-found constraint boundary.
const ASCENDING_TOL: f64 = 1e-9;

const EIGEN_CASES: usize = 1000;
const EIGEN_MARGIN: f64 = 1e-6;

const IDENTITY_PROFILES: usize = 10;
const HESSIAN_REL_TOL: f64 = 1e-3;
const SLOPE_ABS_TOL: f64 = 1e-3;
const SLOPE_FD_STEP: f64 = 1e-3;
const SLOPE_FD_WIDTH: f64 = 1e-11;

const GRID_POINTS: usize = 200;
const GRID_MATCH: f64 = 0.02;
const TARGET_BETA: f64 = 0.12;
const TARGET_BETA_TOL: f64 = 0.04;
const BR_SLOPE_CEILING: f64 = -0.5;

const SWEEP_FROM: f64 = 1.0;
const SWEEP_TO: f64 = 10.0;
const SWEEP_POINTS: usize = 10;
const SYMMETRIC_LOAD: f64 = 5.0;
const GAIN_FLOOR: f64 = 1.0 - 1e-6;
/// Distance from β^min that still counts as pinned (the best-response bracket is 1e-7).
const PIN_TOL: f64 = 1e-6;
/// Slack on the underlay/overlay β ordering, the dynamics step tolerance.
const ORDER_TOL: f64 = 1e-6;
const GAIN_LO: f64 = 1.30;
const GAIN_HI: f64 = 1.60;

const JP_PROFILES: usize = 100;

const MC_SCENARIOS: usize = 5;
const MC_REALIZATIONS: usize = 1_000_000;
const MC_SIGMAS: f64 = 3.0;
/// Total truncation bias allowed for the finite simulation disk.
const MC_TRUNCATION: f64 = 1e-4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn base_file() -> ScenarioFile {
    symmetric_three().expect("bundled scenario").file
}

fn with_kinds(mut file: ScenarioFile, scheme: SharingScheme, utility: UtilityKind) -> ScenarioFile {
    for o in &mut file.operators {
        o.scheme = scheme;
        o.utility = utility;
    }
    file
}

/// Random densities (in BS-density units) and a random pool weight for every operator.
fn randomize(file: &mut ScenarioFile, rng: &mut ChaCha8Rng) {
    file.inter_d2d_density = rng.random_range(1.0..10.0);
    for o in &mut file.operators {
        o.cellular_density = rng.random_range(1.0..10.0);
        o.intra_d2d_density = rng.random_range(1.0..10.0);
        let ws = rng.random_range(0.05..0.9);
        let share = o.cellular_density / (o.cellular_density + o.intra_d2d_density);
        o.weights = Some(Weights {
            cellular: (1.0 - ws) * share,
            intra: (1.0 - ws) * (1.0 - share),
            inter: ws,
        });
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    let mut skipped = 0;
    for scheme in [SharingScheme::Overlay, SharingScheme::Underlay] {
        for utility in [UtilityKind::ProportionalFair, UtilityKind::WeightedSum] {
            let mut draws = 0;
            while draws < CONCAVITY_DRAWS {
                let mut file = with_kinds(base_file(), scheme, utility);
                randomize(&mut file, &mut rng);
                let Ok((scn, _)) = file.resolve() else {
                    skipped += 1;
                    continue;
                };
                let Ok(model) = RateModel::new(&scn) else {
                    skipped += 1;
                    continue;
                };
                let game = ScenarioGame::new(model);
                let i = rng.random_range(0..scn.n_ops());
                let b = match game.bounds(i) {
                    Ok(b) if b.hi - b.lo > 1e-3 => b,
                    _ => {
                        skipped += 1;
                        continue;
                    }
                };
                let others = rng.random_range(0.02..0.4);
                let xs: Vec<f64> = (0..CONCAVITY_GRID)
                    .map(|k| b.lo + (b.hi - b.lo) * k as f64 / (CONCAVITY_GRID - 1) as f64)
                    .collect();
                let us: Result<Vec<f64>, _> = xs.iter().map(|&x| game.utility(i, x, others)).collect();
                let Ok(us) = us else {
                    return outcome(false, format!("utility failed in a feasible box ({scheme:?}, {utility:?})"));
                };
                for k in 1..us.len() - 1 {
                    let d2 = us[k + 1] - 2.0 * us[k] + us[k - 1];
                    worst = worst.max(d2);
                }
                draws += 1;
                checked += 1;
            }
        }
    }
    outcome(
        worst <= CONCAVITY_TOL,
        format!("{checked} draws, max second difference {worst:.3e} (limit {CONCAVITY_TOL:e}), {skipped} infeasible redraws"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut violations = 0;
    let mut feasible_points = 0;
    let mut outside = 0;
    let deltas: Vec<f64> = (0..ASCENDING_GRID).map(|k| k as f64 / (ASCENDING_GRID - 1) as f64).collect();
    for scheme in [SharingScheme::Overlay, SharingScheme::Underlay] {
        let mut accepted = 0;
        while accepted < ASCENDING_OPERATORS {
            let mut file = with_kinds(base_file(), scheme, UtilityKind::ProportionalFair);
            randomize(&mut file, &mut rng);
            for o in &mut file.operators {
                o.tau_c = rng.random_range(0.02..0.3);
                o.tau_d = rng.random_range(0.1..3.0);
            }
            let (scn, _) = file.resolve().expect("randomized operator resolves");
            let model = RateModel::new(&scn).expect("rate model");
            let mut values = Vec::with_capacity(deltas.len());
            for &d in &deltas {
                match model.beta_max(0, d, scn.q) {
                    Ok(bm) => values.push(Some(bm)),
                    Err(copss::Error::Infeasible(_)) => values.push(None),
                    Err(e) => return outcome(false, format!("beta_max failed: {e}")),
                }
            }
            // underlay ascends only while the intra-D2D target is the binding one
            if scheme == SharingScheme::Underlay && values.iter().flatten().any(|bm| bm.d2d_min < bm.cellular_min) {
                outside += 1;
                continue;
            }
            accepted += 1;
            // an unreachable target ranks below every feasible value
            let mut prev: Option<f64> = None;
            for v in &values {
                match v {
                    Some(bm) => {
                        feasible_points += 1;
                        if prev.is_some_and(|p| bm.raw < p - ASCENDING_TOL) {
                            violations += 1;
                        }
                        prev = Some(bm.raw);
                    }
                    None if prev.is_some() => violations += 1,
                    None => {}
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!(
            "{} operators x {ASCENDING_GRID} deltas, {feasible_points} feasible points, {violations} decreases, \
             {outside} underlay draws with a binding cellular target redrawn",
            2 * ASCENDING_OPERATORS
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut agree = 0;
    let mut borderline = 0;
    let mut cases = 0;
    let mut stable = 0;
    while cases < EIGEN_CASES {
        let n = rng.random_range(2..=8);
        let off: Vec<f64> = (0..n).map(|_| -rng.random_range(f64::EPSILON..1.0)).collect();
        let diag: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..1.0)).collect();
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { off[i] });
        let rho = spectral_radius(&m);
        if (rho - 1.0).abs() <= EIGEN_MARGIN {
            borderline += 1;
            continue;
        }
        cases += 1;
        let direct = rho < 1.0;
        stable += direct as usize;
        match pooled_eigen_condition(&JacobianEstimate::from_matrix(m)) {
            Ok(v) if v == direct => agree += 1,
            _ => {}
        }
    }
    outcome(
        agree == EIGEN_CASES,
        format!("{agree}/{EIGEN_CASES} verdicts agree ({stable} stable), {borderline} draws within {EIGEN_MARGIN:e} of the unit circle skipped"),
    )
}

fn criterion_4() -> Outcome {
    let (scn, _) = base_file().resolve().expect("bundled scenario");
    let game = ScenarioGame::new(RateModel::new(&scn).expect("rate model"));
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst_h: f64 = 0.0;
    let mut worst_j: f64 = 0.0;
    for _ in 0..IDENTITY_PROFILES {
        let betas: Vec<f64> = (0..scn.n_ops()).map(|_| rng.random_range(0.04..0.12)).collect();
        let (Ok(h), Ok(d)) = (hessian_fd(&game, &betas), hessian_from_slopes(&game, &betas)) else {
            return outcome(false, format!("Hessian evaluation failed at {betas:?}"));
        };
        let idx: Vec<usize> = (0..scn.n_ops()).collect();
        worst_h = worst_h.max(relative_gap(&h, &d, &idx));
        for i in 0..scn.n_ops() {
            let (Ok(j), Ok(direct)) = (
                jacobian_br(&game, i, &betas),
                br_slope_direct(&game, i, &betas, SLOPE_FD_STEP, SLOPE_FD_WIDTH),
            ) else {
                return outcome(false, format!("slope evaluation failed at {betas:?}"));
            };
            worst_j = worst_j.max((j - direct).abs());
        }
    }
    outcome(
        worst_h <= HESSIAN_REL_TOL && worst_j <= SLOPE_ABS_TOL,
        format!("{IDENTITY_PROFILES} profiles, Hessian rel gap {worst_h:.2e}, slope abs gap {worst_j:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let loaded = symmetric_three().expect("bundled scenario");
    let scn = &loaded.scenario;
    let game = ScenarioGame::new(RateModel::new(scn).expect("rate model"));
    let jp = match run_dynamics(&game, &DynamicsConfig { mode: Mode::JacobiPlay, ..loaded.dynamics.clone() }) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("JP failed: {e}")),
    };
    let br = match run_dynamics(&game, &DynamicsConfig { mode: Mode::BestResponse, ..loaded.dynamics.clone() }) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("BR failed: {e}")),
    };
    let grid = match brute_force_ne(&game, GRID_POINTS) {
        Ok(g) => g,
        Err(e) => return outcome(false, format!("brute force failed: {e}")),
    };
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let nearest = grid
        .iter()
        .min_by(|a, b| dist(&a.betas, &jp.final_betas).total_cmp(&dist(&b.betas, &jp.final_betas)));
    let Some(nearest) = nearest else {
        return outcome(false, "no discrete equilibrium on the grid".into());
    };
    let gap = dist(&nearest.betas, &jp.final_betas);
    let target_gap = nearest.betas.iter().map(|b| (b - TARGET_BETA).abs()).fold(0.0, f64::max);
    let max_j = br.records.iter().flat_map(|r| r.j_br.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    let jp_ok = jp.verdict == Verdict::Converged;
    let br_ok = matches!(br.verdict, Verdict::Oscillating | Verdict::MaxIters) && !br.records.is_empty() && max_j < BR_SLOPE_CEILING;
    outcome(
        jp_ok && gap <= GRID_MATCH && target_gap <= TARGET_BETA_TOL && br_ok,
        format!(
            "JP {} in {} iters at {:.4}, grid NE {:.4} ({} found, gap {gap:.4}), BR {} with max J {max_j:.3}",
            jp.verdict.as_str(),
            jp.iterations(),
            jp.final_betas[0],
            nearest.betas[0],
            grid.len(),
            br.verdict.as_str(),
        ),
    )
}

struct SweepRow {
    scheme: String,
    utility: String,
    value: f64,
    accepted: bool,
    betas: Vec<Option<f64>>,
    /// Empty for an operator left out of the game.
    gains: Vec<Option<f64>>,
    psi: Option<f64>,
}

fn read_sweep(path: &Path, n: usize) -> Vec<SweepRow> {
    let mut r = csv::Reader::from_path(path).expect("sweep.csv");
    let num = |s: &str| s.parse::<f64>().ok();
    r.records()
        .map(|rec| {
            let rec = rec.expect("sweep row");
            let col = |k: usize| rec.get(k).unwrap_or("");
            SweepRow {
                scheme: col(0).into(),
                utility: col(1).into(),
                value: num(col(2)).expect("value"),
                accepted: col(3) == "ok" && col(4) == "converged",
                betas: (0..n).map(|i| num(col(6 + i))).collect(),
                gains: (0..n).map(|i| num(col(6 + n + i))).collect(),
                psi: num(col(6 + 2 * n)),
            }
        })
        .collect()
}

fn run_sweep(dir: &Path) -> Vec<SweepRow> {
    let out = dir.to_str().expect("utf-8 path");
    let args = [
        "copss",
        "sweep",
        "--param",
        "lambda_d1",
        "--from",
        &SWEEP_FROM.to_string(),
        "--to",
        &SWEEP_TO.to_string(),
        "--points",
        &SWEEP_POINTS.to_string(),
        "--out",
        out,
    ];
    let code = cli_main(args);
    println!("  sweep exit code {code}");
    read_sweep(&dir.join("sweep.csv"), 3)
}

fn select<'a>(rows: &'a [SweepRow], scheme: &str, utility: &str) -> Vec<&'a SweepRow> {
    rows.iter().filter(|r| r.scheme == scheme && r.utility == utility).collect()
}

fn criterion_6(rows: &[SweepRow]) -> Vec<(String, Outcome)> {
    let mut out = Vec::new();
    let beta_min = 0.01;
    let step = (SWEEP_TO - SWEEP_FROM) / (SWEEP_POINTS - 1) as f64;

    let accepted: Vec<&SweepRow> = rows.iter().filter(|r| r.accepted).collect();
    let min_gain = accepted.iter().flat_map(|r| r.gains.iter().flatten().copied()).fold(f64::INFINITY, f64::min);
    let rejected = rows.len() - accepted.len();
    out.push((
        "6a".into(),
        outcome(
            !accepted.is_empty() && min_gain >= GAIN_FLOOR,
            format!("{} accepted NEs, min gain {min_gain:.4}, {rejected} rows without an accepted NE", accepted.len()),
        ),
    ));

    let ov = select(rows, "overlay", "proportional_fair");
    let diff = |r: &SweepRow| match (r.accepted, r.gains[0], r.gains[1], r.gains[2]) {
        (true, Some(a), Some(b), Some(c)) => Some((a - b, (b - c).abs())),
        _ => None,
    };
    // loads where operator 1's gain meets the others', zeros and interpolated sign changes
    let mut crossings = Vec::new();
    for (k, r) in ov.iter().enumerate() {
        let Some((d, spread)) = diff(r) else { continue };
        if d == 0.0 && spread == 0.0 {
            crossings.push(r.value);
        }
        if let Some(next) = ov.get(k + 1) {
            if let Some((dn, _)) = diff(next) {
                if d * dn < 0.0 {
                    crossings.push(r.value + (next.value - r.value) * d / (d - dn));
                }
            }
        }
    }
    let nearest = crossings.iter().copied().min_by(|a, b| (a - SYMMETRIC_LOAD).abs().total_cmp(&(b - SYMMETRIC_LOAD).abs()));
    out.push((
        "6b".into(),
        match nearest {
            Some(x) => outcome(
                (x - SYMMETRIC_LOAD).abs() <= step,
                format!("crossings at {crossings:.3?}, nearest {x:.3} (symmetric load {SYMMETRIC_LOAD}, step {step})"),
            ),
            None => outcome(false, "gains never cross".into()),
        },
    ));

    let cross = nearest.unwrap_or(SYMMETRIC_LOAD);
    let above: Vec<&&SweepRow> = ov.iter().filter(|r| r.value > cross + 1e-12).collect();
    let pinned = |r: &SweepRow| {
        let b: Vec<f64> = r.betas.iter().map(|b| b.unwrap_or(f64::NAN)).collect();
        r.accepted && b[0] - beta_min <= PIN_TOL && b[1..].iter().all(|x| x - beta_min > PIN_TOL)
    };
    let bad: Vec<String> = above
        .iter()
        .filter(|r| !pinned(r))
        .map(|r| format!("load {}: beta_1 {:.4}", r.value, r.betas[0].unwrap_or(f64::NAN)))
        .collect();
    out.push((
        "6c".into(),
        outcome(
            !above.is_empty() && bad.is_empty(),
            format!("{} loads above the crossing, {} not pinned as required {bad:?}", above.len(), bad.len()),
        ),
    ));

    let un = select(rows, "underlay", "proportional_fair");
    let mut matched = 0;
    let mut left_out = 0;
    let mut bad = Vec::new();
    for (o, u) in ov.iter().zip(&un) {
        if !(o.accepted && u.accepted) {
            continue;
        }
        matched += 1;
        for i in 0..o.betas.len() {
            // an operator outside either game has no equilibrium contribution to compare
            let (Some(go), Some(gu), Some(bo), Some(bu)) = (o.gains[i], u.gains[i], o.betas[i], u.betas[i]) else {
                left_out += 1;
                continue;
            };
            if bu < bo - ORDER_TOL || gu > go {
                bad.push(format!("load {} op{}", o.value, i + 1));
            }
        }
    }
    out.push((
        "6d".into(),
        outcome(
            matched > 0 && bad.is_empty(),
            format!("{matched} matched loads, {left_out} operator slots outside a game, violations {bad:?}"),
        ),
    ));

    let sym = ov.iter().find(|r| (r.value - SYMMETRIC_LOAD).abs() < 1e-9);
    out.push((
        "6e".into(),
        match sym.filter(|r| r.accepted).and_then(|r| r.gains[0]) {
            Some(g) => outcome((GAIN_LO..=GAIN_HI).contains(&g), format!("symmetric gain {g:.4}")),
            None => outcome(false, "no accepted NE at the symmetric load".into()),
        },
    ));
    out
}

fn criterion_7(rows: &[SweepRow]) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    let mut psis = Vec::new();
    for scheme in ["overlay", "underlay"] {
        let mean = |utility: &str| {
            let v: Vec<f64> = select(rows, scheme, utility).iter().filter_map(|r| r.psi).collect();
            (v.iter().sum::<f64>() / v.len() as f64, v.len())
        };
        let (pf, npf) = mean("proportional_fair");
        let (ws, nws) = mean("weighted_sum");
        pass &= npf > 0 && nws > 0 && pf >= ws;
        parts.push(format!("{scheme}: PF {pf:.4} ({npf}) vs WS {ws:.4} ({nws})"));
    }
    psis.extend(rows.iter().filter_map(|r| r.psi));
    let in_range = psis.iter().all(|&p| p > 0.0 && p <= 1.0);
    outcome(pass && in_range, format!("{}; all psi in (0, 1]: {in_range}", parts.join(", ")))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut equal = 0;
    let mut total = 0;
    for scheme in [SharingScheme::Overlay, SharingScheme::Underlay] {
        let (scn, _) = with_kinds(base_file(), scheme, UtilityKind::ProportionalFair).resolve().expect("scenario");
        let model = RateModel::new(&scn).expect("rate model");
        let boxes: Vec<_> = (0..scn.n_ops()).map(|i| model.box_constraint(i).expect("box")).collect();
        let game = ScenarioGame::new(model);
        for _ in 0..JP_PROFILES / 2 {
            let betas: Vec<f64> = boxes.iter().map(|b| rng.random_range(b.lo..=b.hi)).collect();
            let brs: Vec<f64> = (0..betas.len())
                .map(|i| {
                    let others: f64 = betas.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, b)| b).sum();
                    game.best_response(i, others).expect("best response")
                })
                .collect();
            let step = jp_step(&betas, &brs, &vec![1.0; betas.len()], &boxes);
            total += 1;
            if step.iter().zip(&brs).all(|(a, b)| a.to_bits() == b.to_bits()) {
                equal += 1;
            }
        }
    }
    outcome(equal == total, format!("{equal}/{total} profiles bitwise equal"))
}

/// Indicator estimate of `P(h·S ≥ γ(I + N))` over PPP realizations in a disk of radius `r_max`.
fn monte_carlo_coverage(link: &Link, gamma: f64, beta_m: f64, fields: &[FieldSpec], r_max: &[f64], rng: &mut ChaCha8Rng) -> (f64, f64) {
    let LinkDistance::Fixed(d) = link.distance else { unreachable!() };
    let signal = link.power * link.pathloss.k() * d.powf(-link.pathloss.exponent());
    let noise = link.noise_power * beta_m;
    let counts: Vec<Poisson<f64>> = fields
        .iter()
        .zip(r_max)
        .map(|(f, r)| {
            let Exclusion::Radius(e) = f.exclusion else { unreachable!() };
            Poisson::new(f.density * PI * (r * r - e * e)).expect("poisson mean")
        })
        .collect();
    let mut hits = 0u64;
    for _ in 0..MC_REALIZATIONS {
        let mut interference = 0.0;
        for ((f, r), count) in fields.iter().zip(r_max).zip(&counts) {
            let Exclusion::Radius(e) = f.exclusion else { unreachable!() };
            let k = count.sample(rng) as usize;
            let (pk, half_a) = (f.power * f.pathloss.k(), f.pathloss.exponent() / 2.0);
            for _ in 0..k {
                let r2 = e * e + rng.random::<f64>() * (r * r - e * e);
                let h: f64 = Exp1.sample(rng);
                interference += h * pk * r2.powf(-half_a);
            }
        }
        let h: f64 = Exp1.sample(rng);
        if h * signal >= gamma * (interference + noise) {
            hits += 1;
        }
    }
    let p = hits as f64 / MC_REALIZATIONS as f64;
    (p, (p * (1.0 - p) / MC_REALIZATIONS as f64).sqrt())
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let tol = copss::operator::Scenario::default_tolerance();
    let model = PathlossModel::d2d();
    let mut lines = Vec::new();
    let mut pass = true;
    for _ in 0..MC_SCENARIOS {
        let d = rng.random_range(10.0..60.0);
        let gamma = rng.random_range(0.5..2.0);
        let beta_m = rng.random_range(0.2..1.0);
        let link = Link {
            kind: LinkKind::IntraD2D,
            power: dbm_to_watts(10.0),
            pathloss: model,
            distance: LinkDistance::Fixed(d),
            noise_power: thermal_noise(10e6, 9.0),
        };
        let fields: Vec<FieldSpec> = (0..2)
            .map(|_| {
                // mean number of interferers inside the link distance
                let x = rng.random_range(0.03..0.15);
                FieldSpec {
                    density: x / (PI * d * d),
                    power: dbm_to_watts(rng.random_range(7.0..13.0)),
                    exclusion: Exclusion::Radius(rng.random_range(0.0..0.5) * d),
                    pathloss: model,
                }
            })
            .collect();
        // dropping interferers beyond R raises coverage by at most 2πλ·sPK·R^{2−a}/(a−2)
        let s = gamma / (link.power * model.k() * d.powf(-model.exponent()));
        let a = model.exponent();
        let share = MC_TRUNCATION / fields.len() as f64;
        let r_max: Vec<f64> = fields
            .iter()
            .map(|f| (2.0 * PI * f.density * s * f.power * model.k() / ((a - 2.0) * share)).powf(1.0 / (a - 2.0)))
            .collect();
        let bias: f64 = fields
            .iter()
            .zip(&r_max)
            .map(|(f, r)| 2.0 * PI * f.density * s * f.power * model.k() * r.powf(2.0 - a) / (a - 2.0))
            .sum();
        let analytic = match coverage_probability(&link, gamma, beta_m, &fields, &tol) {
            Ok(p) => p,
            Err(e) => return outcome(false, format!("coverage failed: {e}")),
        };
        let (mc, se) = monte_carlo_coverage(&link, gamma, beta_m, &fields, &r_max, &mut rng);
        let z = (analytic - mc).abs() / se;
        pass &= z <= MC_SIGMAS && bias <= MC_TRUNCATION * (1.0 + 1e-9);
        lines.push(format!("{analytic:.4} vs {mc:.4} ({z:.2} SE)"));
    }
    outcome(pass, lines.join(", "))
}

fn criterion_10() -> Outcome {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    let run = |dir: &Path| cli_main(["copss", "trace", "--seed", "7", "--out", dir.to_str().expect("utf-8 path")]);
    let codes = (run(a.path()), run(b.path()));
    let mut names: Vec<String> = fs::read_dir(a.path())
        .expect("output dir")
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(a.path().join(n)).ok() != fs::read(b.path().join(n)).ok())
        .collect();
    outcome(
        codes == (0, 0) && !names.is_empty() && differing.is_empty(),
        format!("exit codes {codes:?}, {} CSVs compared, differing {differing:?}", names.len()),
    )
}

fn timed<F: FnOnce() -> Outcome>(f: F, limit: Option<Duration>) -> (Outcome, Duration) {
    let t = Instant::now();
    let mut o = f();
    let dt = t.elapsed();
    if let Some(limit) = limit {
        if dt > limit {
            o.pass = false;
            o.detail.push_str(&format!("; runtime {dt:?} over {limit:?}"));
        }
    }
    (o, dt)
}

fn main() {
    let mins = |m: u64| Some(Duration::from_secs(60 * m));
    let mut results: Vec<(String, Outcome, Duration)> = Vec::new();
    let mut record = |name: &str, (o, dt): (Outcome, Duration)| {
        println!("{} criterion {name} ({:.1}s): {}", if o.pass { "PASS" } else { "FAIL" }, dt.as_secs_f64(), o.detail);
        results.push((name.to_string(), o, dt));
    };
    record("1", timed(criterion_1, mins(2)));
    record("2", timed(criterion_2, mins(2)));
    record("3", timed(criterion_3, Some(Duration::from_secs(30))));
    record("4", timed(criterion_4, mins(5)));
    record("5", timed(criterion_5, mins(10)));

    let dir = tempfile::tempdir().expect("tempdir");
    let t = Instant::now();
    let rows = run_sweep(dir.path());
    let sweep_time = t.elapsed();
    let parts = criterion_6(&rows);
    let six_pass = parts.iter().all(|(_, o)| o.pass) && sweep_time <= Duration::from_secs(30 * 60);
    for (name, o) in &parts {
        println!("  {} {name}: {}", if o.pass { "pass" } else { "fail" }, o.detail);
    }
    let failed: Vec<&str> = parts.iter().filter(|(_, o)| !o.pass).map(|(n, _)| n.as_str()).collect();
    record(
        "6",
        (outcome(six_pass, format!("{} of 5 parts pass, failing {failed:?}", 5 - failed.len())), sweep_time),
    );
    record("7", timed(|| criterion_7(&rows), None));
    record("8", timed(criterion_8, Some(Duration::from_secs(10))));
    record("9", timed(criterion_9, mins(10)));
    record("10", timed(criterion_10, None));

    let failed: Vec<&str> = results.iter().filter(|(_, o, _)| !o.pass).map(|(n, _, _)| n.as_str()).collect();
    println!("acceptance: {} passed, {} failed {failed:?}", results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
