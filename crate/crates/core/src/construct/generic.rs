use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampling::{
    chebyshev_nodes, prefix_check, smallness_entry, MTrial, PrefixCheck, SmallnessEntry, SMALLNESS_TOL,
};
use super::{ConstructionConfig, Mode, PropertyCheck, StageFailure};
use crate::error::{Error, Result};
use crate::intervals::{
    descendant_chain, is_eps_dense, min_length, nesting_failures, pick_subinterval, stage_shift, IntervalFamily,
    OpenInterval, ParentLink,
};
use crate::spectrum::{
    band_confirmed, band_edges_exact, band_piece, count_position, in_spectrum, Band, BandList, RESOLUTION_FLOOR,
};
use crate::transfer::{
    bloch_boundary, finite_lyapunov, level_monodromy, transfer_product, BaseRun, Cocycle, GramProduct, PotentialRecipe,
    ScaledMatrix2, StageOverlay, MAX_PERIOD,
};

/// Largest dyadic exponent tried when searching for the growth threshold.
const MAX_GROWTH_EXPONENT: u32 = 40;
/// Largest `2^{M1}` for which remainders are stepped site by site.
const MAX_REMAINDER_STEPS: u64 = 1 << 24;
/// Band indices searched on each side of the count at the window center.
const CANDIDATE_RADIUS: u128 = 4;
/// Random sites compared bit for bit in the prefix check.
const PREFIX_SAMPLES: usize = 1000;
/// Centers used for the nested-chain walks.
const CHAIN_CENTERS: [f64; 9] = [-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0];

/// Transcript of the growth-threshold search for one periodic potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthLength {
    pub mu: f64,
    /// Sampled `sup f_i` for `i = 0, 1, ...` up to the accepted exponent plus two.
    pub f_sups: Vec<f64>,
    pub m1: u32,
    /// Largest sampled `log ||A_r||` over `0 <= r < 2^{M1}`.
    pub remainder_log_norm: f64,
    pub m2: u64,
    /// `M2 * 2^{M1}`.
    pub m: u64,
    pub samples: usize,
}

/// Smallest sampled `M` with `(1/N) log ||A_N|| <= mu` on the bands for all `N >= M`.
pub fn min_growth_length(recipe: &PotentialRecipe, mu: f64, bands: &BandList, nodes: usize) -> Result<GrowthLength> {
    if !(mu > 0.0) {
        return Err(Error::InvalidInput("mu must be positive".into()));
    }
    let energies: Vec<f64> = bands.iter().flat_map(|b| chebyshev_nodes(b.alpha, b.beta, nodes)).collect();
    let f_sup = |i: u32| -> f64 {
        let n = 1u64 << i;
        energies
            .par_iter()
            .map(|&e| transfer_product(e, recipe, n).log_norm() / n as f64)
            .collect::<Vec<f64>>()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let half = 0.5 * mu;
    let mut f_sups = Vec::new();
    let mut m1 = None;
    for i in 0..=MAX_GROWTH_EXPONENT {
        f_sups.push(f_sup(i));
        if i >= 2 && f_sups[i as usize - 2..].iter().all(|&f| f <= half) {
            m1 = Some(i - 2);
            break;
        }
    }
    let m1 = m1.ok_or_else(|| {
        let best = f_sups.iter().copied().fold(f64::INFINITY, f64::min);
        Error::IterationCap(format!("no dyadic length reached mu/2 = {half}; best sampled sup {best}"))
    })?;
    let steps = 1u64 << m1;
    if steps > MAX_REMAINDER_STEPS {
        return Err(Error::IterationCap(format!("remainder range 2^{m1} too long to step")));
    }
    let remainder = energies
        .par_iter()
        .map(|&e| {
            let mut acc = ScaledMatrix2::identity();
            let mut worst = 0.0f64;
            for r in 0..steps as i64 {
                worst = worst.max(acc.log_norm());
                acc = ScaledMatrix2::step(e - recipe.eval(r)) * acc;
            }
            worst
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, f64::max);
    let m2 = ((remainder / (half * steps as f64)).ceil() as u64).max(1);
    Ok(GrowthLength {
        mu,
        f_sups,
        m1,
        remainder_log_norm: remainder,
        m2,
        m: m2.checked_mul(steps).ok_or(Error::PeriodOverflow)?,
        samples: energies.len(),
    })
}

/// Smallest `m0` with `delta * sqrt(m0) > 4`, saturating at `u64::MAX`.
pub fn choose_m0(delta: f64) -> u64 {
    let estimate = (16.0 / (delta * delta)).floor();
    if !(estimate < 1.8e19) {
        return u64::MAX;
    }
    let mut m0 = estimate as u64 + 1;
    while delta * (m0 as f64).sqrt() <= 4.0 {
        m0 += 1;
    }
    while m0 > 1 && delta * ((m0 - 1) as f64).sqrt() > 4.0 {
        m0 -= 1;
    }
    m0
}

/// `m` copies of the `m0`-fold period, then eight blocks shifted by `j / 2^{k+1}`, `j = -4..=3`.
pub fn build_hat_potential(prev: &PotentialRecipe, m0: u64, m: u64, k: u32) -> Result<PotentialRecipe> {
    let shifts = (-4..=3).map(|j| stage_shift(j, k)).collect();
    prev.clone().with_overlay(StageOverlay { m0, copies: m, shifts })
}

/// Residual of the truncated Bloch trial vector for one shifted block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResidual {
    pub interval: usize,
    pub energy: f64,
    /// `None` when the Bloch data could not be formed.
    pub residual: Option<f64>,
    /// `||phi|| / sqrt(m0)`.
    pub norm_ratio: Option<f64>,
    pub bound: f64,
    pub pass: bool,
}

/// `||(Delta + V_hat - E_hat - j/2^{k+1}) phi|| / ||phi||` for `phi` the Bloch solution of
/// `prev` at `e_hat` restricted to block `j`.
///
/// The residual lives on the four sites next to the block ends, which are multiples of the
/// previous period, so it follows from the Bloch boundary data alone.
pub fn trial_vector_residual(
    hat: &PotentialRecipe,
    prev: &PotentialRecipe,
    e_hat: f64,
    j: i32,
    k: u32,
    m: u64,
    m0: u64,
) -> Result<f64> {
    let p = prev.period();
    let seg = m0.checked_mul(p).ok_or(Error::PeriodOverflow)?;
    let start = (m + (j + 4) as u64).checked_mul(seg).ok_or(Error::PeriodOverflow)?;
    let shift = stage_shift(j, k);
    for n in [start, start + seg - 1] {
        if hat.eval(n as i64).to_bits() != (prev.eval(n as i64) + shift).to_bits() {
            return Err(Error::InvalidInput(format!("site {n} is not in block j={j} of the given potential")));
        }
    }
    let bb = bloch_boundary(e_hat, prev)?;
    Ok((2.0 * bb.edge_weight() / m0 as f64).sqrt())
}

/// `||phi||^2 / m0` from the Gram product over `m0` periods.
fn block_norm_ratio(prev: &PotentialRecipe, e_hat: f64, m0: u64) -> Result<f64> {
    let bb = bloch_boundary(e_hat, prev)?;
    let g: GramProduct = level_monodromy(prev, prev.depth(), e_hat);
    let block = g.power(m0).quadratic_form(bb.initial);
    Ok((block.ln_abs() - bb.period_norm_sq.ln_abs() - (m0 as f64).ln()).exp().sqrt())
}

/// An open subinterval of `I + j/2^{k+1}` contained in a band of `hat`.
///
/// Bands are sought among the indices around the count at the window center; the widest
/// trace-confirmed piece inside the window is returned, pulled in slightly from its ends.
pub fn find_band_in_shifted_interval(hat: &PotentialRecipe, i: &OpenInterval, j: i32, k: u32) -> Result<OpenInterval> {
    let w = i.shifted(stage_shift(j, k));
    let (c_lo, c_hi) = (count_position(w.lo, hat), count_position(w.hi, hat));
    let first = c_lo / 2;
    if c_hi < 2 * first + 1 {
        return Err(Error::NoBandFound { lo: w.lo, hi: w.hi });
    }
    let last = (c_hi - 1) / 2;
    let mid = count_position(w.center(), hat) / 2;
    let (a, b) = (first.max(mid.saturating_sub(CANDIDATE_RADIUS)), last.min(mid + CANDIDATE_RADIUS));
    let mut pieces: Vec<Band> =
        (a..=b).filter_map(|idx| band_piece(hat, idx as u64, (w.lo, w.hi), (c_lo, c_hi))).collect();
    if pieces.is_empty() {
        return Err(Error::NoBandFound { lo: w.lo, hi: w.hi });
    }
    pieces.sort_by(|x, y| y.width().total_cmp(&x.width()));
    let Some(band) = pieces.into_iter().filter(|p| p.width() >= RESOLUTION_FLOOR).find(|p| band_confirmed(hat, p))
    else {
        return Err(Error::BandBelowResolution {
            lo: w.lo,
            hi: w.hi,
            count: last - first + 1,
            floor: RESOLUTION_FLOOR,
        });
    };
    let pad = 1e-9 * band.width();
    OpenInterval::new(band.alpha + pad, band.beta - pad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReportA {
    /// Property (i): largest block shift against `2^{-(k-1)}`.
    pub sup_change: f64,
    pub sup_bound: f64,
    pub sup_ok: bool,
    /// Property (ii).
    pub prefix: Option<PrefixCheck>,
    /// Property (iii), one entry per `l = 1..=k`.
    pub smallness: Vec<SmallnessEntry>,
    /// Sample interval ends or centers found outside the spectrum they should lie in.
    pub membership_failures: usize,
    /// Property (iv).
    pub density_eps: f64,
    pub density_ok: bool,
    /// Property (v).
    pub nesting_ok: bool,
    pub nesting_failures: Vec<String>,
    pub delta_sqrt_m0: Option<f64>,
    pub trials: Vec<TrialResidual>,
    /// Band searches that failed; only populated in capped mode.
    pub band_failures: Vec<String>,
    pub m_transcript: Vec<MTrial>,
    pub sampling: String,
}

impl VerificationReportA {
    pub fn smallness_ok(&self) -> bool {
        self.smallness.iter().all(|s| s.pass)
    }

    pub fn trials_ok(&self) -> bool {
        self.trials.iter().all(|t| t.pass)
    }

    pub fn all_ok(&self) -> bool {
        self.sup_ok
            && self.prefix.as_ref().is_none_or(|p| p.pass)
            && self.smallness_ok()
            && self.membership_failures == 0
            && self.density_ok
            && self.nesting_ok
            && self.band_failures.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecordA {
    pub k: u32,
    pub recipe: PotentialRecipe,
    pub p_k: u64,
    pub sigma: IntervalFamily,
    pub m0: u64,
    /// `m0` demanded by `delta * sqrt(m0) > 4`, before any cap.
    pub m0_required: u64,
    pub m: u64,
    pub delta: f64,
    pub growth: Option<GrowthLength>,
    pub report: VerificationReportA,
}

/// Stage 0: the `2L`-periodic step `+2, -2`, its band interiors, and the period multiplier
/// that makes its growth at most `mu_target` on the spectrum.
pub fn initial_stage(l: u64, mu_target: f64, nodes: usize) -> Result<StageRecordA> {
    if l <= 4 {
        return Err(Error::InvalidInput("L must exceed 4".into()));
    }
    let base = PotentialRecipe::from_runs(vec![BaseRun { value: 2.0, len: l }, BaseRun { value: -2.0, len: l }])?;
    let bands = band_edges_exact(&base)?;
    let intervals: Vec<OpenInterval> = bands
        .iter()
        .filter(|b| b.width() >= RESOLUTION_FLOOR)
        .map(|b| OpenInterval::new(b.alpha, b.beta))
        .collect::<Result<_>>()?;
    let sigma = IntervalFamily::root(intervals);
    if !is_eps_dense(&sigma, 1.0) {
        return Err(Error::DensityFailure { eps: 1.0 });
    }
    let growth = min_growth_length(&base, mu_target, &bands, nodes)?;
    let m = growth.m.div_ceil(2 * l).max(1);
    let recipe = base.with_overlay(StageOverlay { m0: 1, copies: m, shifts: Vec::new() })?;
    let delta = min_length(&sigma)?;
    Ok(StageRecordA {
        k: 0,
        p_k: recipe.period(),
        recipe,
        sigma,
        m0: 1,
        m0_required: 1,
        m,
        delta,
        growth: Some(growth),
        report: VerificationReportA {
            sup_change: 0.0,
            sup_bound: 0.0,
            sup_ok: true,
            prefix: None,
            smallness: Vec::new(),
            membership_failures: 0,
            density_eps: 1.0,
            density_ok: true,
            nesting_ok: true,
            nesting_failures: Vec::new(),
            delta_sqrt_m0: None,
            trials: Vec::new(),
            band_failures: Vec::new(),
            m_transcript: Vec::new(),
            sampling: sampling_note(nodes),
        },
    })
}

fn sampling_note(nodes: usize) -> String {
    format!("sampled certification: {nodes} Chebyshev nodes plus edges and 2 seeded points per interval, doubled up to 3 times")
}

fn stage_seed(seed: u64, k: u32) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0xa076_1d64_78bd_642f))
}

/// Property (iii) at stage `k`: sampled growth of `A_{p_k}(E, V^k)` over `E` in `Sigma_l`.
///
/// `families[l]` is `Sigma_l`; entries are produced for `l = 1..=k`.
pub fn verify_property_iii(
    recipe: &PotentialRecipe,
    families: &[IntervalFamily],
    k: u32,
    nodes: usize,
    seed: u64,
) -> Vec<SmallnessEntry> {
    (1..=k)
        .map(|l| {
            let ivs: Vec<(f64, f64)> = families[l as usize].intervals.iter().map(|i| (i.lo, i.hi)).collect();
            smallness_entry(recipe, &ivs, l, k, nodes, stage_seed(seed, k))
        })
        .collect()
}

/// Interval ends and centers of `family` outside `sigma(Delta + recipe)`.
fn membership_failures(recipe: &PotentialRecipe, family: &IntervalFamily) -> usize {
    family
        .intervals
        .par_iter()
        .map(|i| {
            let inset = 1e-9 * i.len();
            [i.lo + inset, i.center(), i.hi - inset].iter().filter(|&&e| !in_spectrum(e, recipe)).count()
        })
        .sum()
}

struct Candidate {
    hat: PotentialRecipe,
    sigma: IntervalFamily,
    failures: Vec<(usize, i32, Error)>,
    smallness: Vec<SmallnessEntry>,
}

fn build_candidate(
    history: &[StageRecordA],
    tilde: &[OpenInterval],
    m0: u64,
    m: u64,
    k: u32,
    cfg: &ConstructionConfig,
) -> Result<Candidate> {
    let prev = history.last().expect("nonempty history");
    let hat = build_hat_potential(&prev.recipe, m0, m, k)?;
    let jobs: Vec<(usize, i32)> = (0..tilde.len()).flat_map(|i| (-4..=3).map(move |j| (i, j))).collect();
    let found: Vec<Result<OpenInterval>> =
        jobs.par_iter().map(|&(i, j)| find_band_in_shifted_interval(&hat, &tilde[i], j, k)).collect();
    let mut sigma = IntervalFamily { stage: k, intervals: Vec::new(), links: Vec::new() };
    let mut failures = Vec::new();
    for (&(i, j), r) in jobs.iter().zip(found) {
        match r {
            Ok(iv) => sigma.push(iv, Some(ParentLink { parent: i, j })),
            Err(e) => failures.push((i, j, e)),
        }
    }
    let smallness = if cfg.mode == Mode::Strict && !failures.is_empty() {
        Vec::new()
    } else {
        let mut families: Vec<IntervalFamily> = history.iter().map(|s| s.sigma.clone()).collect();
        families.push(sigma.clone());
        verify_property_iii(&hat, &families, k, cfg.samples_per_band, cfg.seed)
    };
    Ok(Candidate { hat, sigma, failures, smallness })
}

fn worst_margin(c: &Candidate) -> f64 {
    c.smallness.iter().map(SmallnessEntry::margin).fold(f64::INFINITY, f64::min)
}

/// Result of the doubling search over `m` for one stage.
pub struct StageChoice {
    pub m: u64,
    pub hat: PotentialRecipe,
    pub sigma: IntervalFamily,
    pub smallness: Vec<SmallnessEntry>,
    pub failures: Vec<String>,
    pub transcript: Vec<MTrial>,
}

/// Doubles `m` from 1 until the property-(iii) certification passes.
///
/// In strict mode a failed band search ends the search with an error; in capped mode the
/// failures are recorded and the search stops at the cap with the achieved margins.
pub fn choose_m_for_stage(
    history: &[StageRecordA],
    tilde: &[OpenInterval],
    m0: u64,
    k: u32,
    cfg: &ConstructionConfig,
) -> Result<StageChoice> {
    let mut transcript = Vec::new();
    let mut m = 1u64;
    loop {
        let c = build_candidate(history, tilde, m0, m, k, cfg).map_err(|e| match e {
            Error::PeriodOverflow => {
                StageFailure { stage: k, reason: format!("m={m}: period exceeds {MAX_PERIOD}") }.into()
            }
            other => other,
        })?;
        if cfg.mode == Mode::Strict {
            if let Some((i, j, e)) = c.failures.first() {
                return Err(StageFailure { stage: k, reason: format!("m={m}: interval {i}, j={j}: {e}") }.into());
            }
        }
        let margin = worst_margin(&c);
        let pass = c.smallness.iter().all(|s| s.pass);
        transcript.push(MTrial { m, period: c.hat.period(), worst_margin: margin, pass });
        if pass || m.saturating_mul(2) > cfg.m_limit() || c.hat.period() > MAX_PERIOD / 2 {
            if !pass && cfg.mode == Mode::Strict {
                return Err(StageFailure {
                    stage: k,
                    reason: format!("property (iii) still fails at m={m} (worst margin {margin:e})"),
                }
                .into());
            }
            let failures = c.failures.iter().map(|(i, j, e)| format!("interval {i}, j={j}: {e}")).collect();
            return Ok(StageChoice { m, hat: c.hat, sigma: c.sigma, smallness: c.smallness, failures, transcript });
        }
        m *= 2;
    }
}

/// Builds stage `k = history.len()` on top of `history`.
pub fn build_stage(history: &[StageRecordA], cfg: &ConstructionConfig) -> Result<StageRecordA> {
    let prev = history.last().ok_or(Error::EmptyFamily)?;
    let k = prev.k + 1;
    let tilde: Vec<OpenInterval> =
        prev.sigma.intervals.iter().map(|i| pick_subinterval(i, stage_shift(1, k))).collect();
    let delta = tilde.iter().map(OpenInterval::len).fold(f64::INFINITY, f64::min);
    if !delta.is_finite() {
        return Err(Error::EmptyFamily);
    }
    let m0_required = choose_m0(delta);
    let m0 = cfg.effective_m0(m0_required);
    let choice = choose_m_for_stage(history, &tilde, m0, k, cfg)?;
    let seed = stage_seed(cfg.seed, k);
    let trials: Vec<TrialResidual> = tilde
        .par_iter()
        .enumerate()
        .map(|(idx, t)| {
            let e = t.center();
            let bound = 2.0 / (m0 as f64).sqrt();
            match (
                trial_vector_residual(&choice.hat, &prev.recipe, e, 0, k, choice.m, m0),
                block_norm_ratio(&prev.recipe, e, m0),
            ) {
                (Ok(r), Ok(q)) => TrialResidual {
                    interval: idx,
                    energy: e,
                    residual: Some(r),
                    norm_ratio: Some(q),
                    bound,
                    pass: r <= bound * (1.0 + 1e-12) && (q - 1.0).abs() <= 1e-6,
                },
                _ => TrialResidual { interval: idx, energy: e, residual: None, norm_ratio: None, bound, pass: false },
            }
        })
        .collect();
    let sup_change = choice.hat.overlay_sup_norm(choice.hat.depth() - 1);
    let sup_bound = 0.5f64.powi(k as i32 - 1);
    let density_eps = 0.5f64.powi(k as i32);
    let nesting = nesting_failures(&choice.sigma, &prev.sigma);
    let membership = membership_failures(&choice.hat, &choice.sigma);
    let report = VerificationReportA {
        sup_change,
        sup_bound,
        sup_ok: sup_change <= sup_bound,
        prefix: Some(prefix_check(&choice.hat, &prev.recipe, PREFIX_SAMPLES, seed)),
        smallness: choice.smallness,
        membership_failures: membership,
        density_eps,
        density_ok: is_eps_dense(&choice.sigma, density_eps),
        nesting_ok: nesting.is_empty(),
        nesting_failures: nesting,
        delta_sqrt_m0: Some(delta * (m0 as f64).sqrt()),
        trials,
        band_failures: choice.failures,
        m_transcript: choice.transcript,
        sampling: sampling_note(cfg.samples_per_band),
    };
    Ok(StageRecordA {
        k,
        p_k: choice.hat.period(),
        recipe: choice.hat,
        sigma: choice.sigma,
        m0,
        m0_required,
        m: choice.m,
        delta,
        growth: None,
        report,
    })
}

/// A nested chain of constructed intervals starting near `e0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub e0: f64,
    pub start_stage: u32,
    pub intervals: Vec<OpenInterval>,
    /// Center of the last interval in the chain.
    pub e_hat: f64,
    /// `|e0 - e_hat| < 2^{-start_stage}`.
    pub close: bool,
    pub nested: bool,
    /// `(1/p_K) log ||A_{p_K}(e_hat, V^K)||` at the final stage.
    pub growth_at_end: f64,
}

/// Follows zero-shift descendants from the stage-`k` interval nearest `e0` inside
/// `[e0 - 2^{-k}, e0 + 2^{-k}]`.
pub fn nested_chain(stages: &[StageRecordA], e0: f64, k: u32) -> Option<ChainReport> {
    let r = 0.5f64.powi(k as i32);
    let fam = &stages.get(k as usize)?.sigma;
    let start = fam
        .intervals
        .iter()
        .enumerate()
        .filter(|(_, i)| e0 - r <= i.lo && i.hi <= e0 + r)
        .min_by(|a, b| (a.1.center() - e0).abs().total_cmp(&(b.1.center() - e0).abs()))?
        .0;
    let families: Vec<IntervalFamily> = stages.iter().map(|s| s.sigma.clone()).collect();
    let intervals = descendant_chain(&families, k as usize, start);
    let last = *intervals.last().expect("chain holds its start");
    let e_hat = last.center();
    let end = stages.last().expect("nonempty");
    Some(ChainReport {
        e0,
        start_stage: k,
        nested: intervals.windows(2).all(|w| w[1].within(&w[0])),
        close: (e0 - e_hat).abs() < r,
        intervals,
        e_hat,
        growth_at_end: finite_lyapunov(e_hat, &end.recipe, end.p_k),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionAOutcome {
    pub stages: Vec<StageRecordA>,
    pub failure: Option<StageFailure>,
    pub chains: Vec<ChainReport>,
}

impl ConstructionAOutcome {
    pub fn all_ok(&self) -> bool {
        self.failure.is_none() && self.stages.iter().all(|s| s.report.all_ok())
    }
}

pub fn run_construction_a(cfg: &ConstructionConfig) -> Result<ConstructionAOutcome> {
    cfg.validate()?;
    let s0 = initial_stage(cfg.l, 0.5, cfg.samples_per_band)?;
    run_construction_a_from(cfg, vec![s0])
}

/// Continues a construction from saved stages up to `cfg.stages`.
pub fn run_construction_a_from(
    cfg: &ConstructionConfig,
    mut stages: Vec<StageRecordA>,
) -> Result<ConstructionAOutcome> {
    cfg.validate()?;
    if stages.is_empty() {
        return run_construction_a(cfg);
    }
    let mut failure = None;
    while (stages.len() as u32) <= cfg.stages {
        match build_stage(&stages, cfg) {
            Ok(s) => {
                let bad = cfg.mode == Mode::Strict && !s.report.all_ok();
                let k = s.k;
                let reason = bad.then(|| describe_failures(&s.report));
                stages.push(s);
                if let Some(reason) = reason {
                    failure = Some(StageFailure { stage: k, reason });
                    break;
                }
            }
            Err(Error::StageFailure { stage, reason }) => {
                failure = Some(StageFailure { stage: stage as u32, reason });
                break;
            }
            Err(e @ (Error::Io(_) | Error::InvalidInput(_))) => return Err(e),
            Err(e) => {
                failure = Some(StageFailure { stage: stages.len() as u32, reason: e.to_string() });
                break;
            }
        }
    }
    let last = stages.len() as u32 - 1;
    let chains = if last >= 1 {
        CHAIN_CENTERS.iter().filter_map(|&e0| nested_chain(&stages, e0, 1)).collect()
    } else {
        Vec::new()
    };
    Ok(ConstructionAOutcome { stages, failure, chains })
}

fn describe_failures(r: &VerificationReportA) -> String {
    let mut out = Vec::new();
    if !r.sup_ok {
        out.push(format!("property (i): {} > {}", r.sup_change, r.sup_bound));
    }
    if let Some(p) = r.prefix.as_ref().filter(|p| !p.pass) {
        out.push(format!("property (ii): {} mismatches, first at n = {}", p.mismatches, p.first_mismatch.unwrap_or(0)));
    }
    for s in r.smallness.iter().filter(|s| !s.pass) {
        out.push(format!("property (iii) l={}: {} > {}", s.l, s.sup, s.target));
    }
    if r.membership_failures > 0 {
        out.push(format!("{} interval samples outside the spectrum", r.membership_failures));
    }
    if !r.density_ok {
        out.push(format!("property (iv): not {}-dense", r.density_eps));
    }
    if !r.nesting_ok {
        out.push(format!("property (v): {}", r.nesting_failures.join("; ")));
    }
    out.extend(r.band_failures.iter().cloned());
    out.join("; ")
}

/// Re-runs every certification on a saved history from its recipes and interval families alone.
pub fn reverify_history_a(history: &[StageRecordA], cfg: &ConstructionConfig) -> Vec<PropertyCheck> {
    let mut out = Vec::new();
    let families: Vec<IntervalFamily> = history.iter().map(|s| s.sigma.clone()).collect();
    for (idx, s) in history.iter().enumerate() {
        let k = s.k;
        let mut structural = Vec::new();
        if k as usize != idx {
            structural.push(format!("stage index {k} stored at position {idx}"));
        }
        if s.p_k != s.recipe.period() {
            structural.push(format!("recorded period {} but recipe period {}", s.p_k, s.recipe.period()));
        }
        if s.sigma.intervals.len() != s.sigma.links.len() {
            structural.push("interval and link counts differ".into());
        }
        out.push(PropertyCheck::count(k, "record consistency", structural.len(), structural.join("; ")));
        let membership = membership_failures(&s.recipe, &s.sigma);
        out.push(PropertyCheck::count(
            k,
            "spectral membership",
            membership,
            "interval ends (inset by 1e-9 of the length) and centers outside the spectrum".into(),
        ));
        let eps = 0.5f64.powi(k as i32);
        let dense = is_eps_dense(&s.sigma, eps);
        out.push(PropertyCheck::count(k, "(iv) density", usize::from(!dense), format!("{eps}-dense in [-4, 4]")));
        if k == 0 {
            continue;
        }
        let prev = &history[idx - 1];
        let sup = s.recipe.overlay_sup_norm(s.recipe.depth() - 1);
        out.push(PropertyCheck::upper(k, "(i) sup change", sup, 0.5f64.powi(k as i32 - 1), 0.0));
        let pc = prefix_check(&s.recipe, &prev.recipe, PREFIX_SAMPLES, stage_seed(cfg.seed, k));
        out.push(PropertyCheck::count(
            k,
            "(ii) prefix",
            pc.mismatches,
            match pc.first_mismatch {
                Some(n) => format!("{} sites compared, first mismatch at n = {n}", pc.checked),
                None => format!("{} sites compared", pc.checked),
            },
        ));
        for e in verify_property_iii(&s.recipe, &families[..=idx], k, cfg.samples_per_band, cfg.seed) {
            out.push(
                PropertyCheck::upper(k, format!("(iii) smallness l={}", e.l), e.sup, e.target, SMALLNESS_TOL)
                    .with_detail(match e.argmax {
                        Some(x) => format!("{} samples, argmax E = {x}", e.samples),
                        None => format!("{} samples", e.samples),
                    }),
            );
        }
        let nest = nesting_failures(&s.sigma, &prev.sigma);
        out.push(PropertyCheck::count(k, "(v) nesting", nest.len(), nest.join("; ")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::dist_to_spectrum;

    #[test]
    fn m0_examples() {
        assert_eq!(choose_m0(0.25), 257);
        assert_eq!(choose_m0(4.0), 2);
        assert_eq!(choose_m0(0.1), 1601);
        assert_eq!(choose_m0(1e-12), u64::MAX);
        assert_eq!(choose_m0(0.0), u64::MAX);
    }

    #[test]
    fn growth_length_free() {
        let free = PotentialRecipe::constant(0.0);
        let bands = band_edges_exact(&free).unwrap();
        assert_eq!(min_growth_length(&free, 2.0, &bands, 33).unwrap().m, 1);
        let g = min_growth_length(&free, 0.01, &bands, 33).unwrap();
        assert!(g.f_sups[g.m1 as usize] <= 0.005);
        let g2 = min_growth_length(&free, 0.1, &bands, 33).unwrap();
        assert!(g2.m <= g.m);
    }

    #[test]
    fn initial_step_potential() {
        let s = initial_stage(5, 0.5, 9).unwrap();
        let vals = s.recipe.values(0, 10);
        assert_eq!(vals, vec![2.0, 2.0, 2.0, 2.0, 2.0, -2.0, -2.0, -2.0, -2.0, -2.0]);
        assert!(is_eps_dense(&s.sigma, 1.0));
        assert_eq!(s.p_k % 10, 0);
        let base = s.recipe.truncated(0);
        let r25 = PotentialRecipe::from_runs(vec![BaseRun { value: 2.0, len: 25 }, BaseRun { value: -2.0, len: 25 }])
            .unwrap();
        for i in 0..=20 {
            let e = -2.0 + 0.2 * i as f64;
            assert!(dist_to_spectrum(e + 2.0, &r25, 1.0) <= 0.4);
        }
        assert!(base.period() == 10);
    }

    #[test]
    fn hat_blocks() {
        let prev = PotentialRecipe::periodic(&[0.5, -0.25]).unwrap();
        let hat = build_hat_potential(&prev, 3, 2, 1).unwrap();
        assert_eq!(hat.period(), (2 + 8) * 3 * 2);
        let seg = 6i64;
        // j = -4 block starts after the two prefix copies
        for n in 0..seg {
            assert_eq!(hat.eval(2 * seg + n), prev.eval(n) - 1.0);
            assert_eq!(hat.eval(6 * seg + n), prev.eval(n));
        }
        assert_eq!(build_hat_potential(&prev, 257, 10, 1).unwrap().truncated(1).period(), 18 * 257 * 2);
    }

    #[test]
    fn trial_residual_matches_direct_evaluation() {
        let prev = PotentialRecipe::periodic(&[0.3, -0.8, 1.1]).unwrap();
        let bands = band_edges_exact(&prev).unwrap();
        let e = bands.bands()[1].midpoint();
        let (m0, m, k, j) = (7u64, 2u64, 1u32, 1i32);
        let hat = build_hat_potential(&prev, m0, m, k).unwrap();
        let r = trial_vector_residual(&hat, &prev, e, j, k, m, m0).unwrap();
        let bloch = crate::transfer::bloch_solution(e, &prev).unwrap();
        let seg = (m0 * prev.period()) as i64;
        let start = (m as i64 + j as i64 + 4) * seg;
        let phi = |n: i64| if (start..start + seg).contains(&n) { bloch.at(n) } else { 0.0.into() };
        let shifted = e + stage_shift(j, k);
        let (mut num, mut den) = (0.0, 0.0);
        let mut nonzero = 0;
        for n in start - 3..start + seg + 3 {
            let res = phi(n + 1) + phi(n - 1) + phi(n) * (hat.eval(n) - shifted);
            if res.norm() > 1e-9 {
                nonzero += 1;
            }
            num += res.norm_sqr();
            den += phi(n).norm_sqr();
        }
        assert_eq!(nonzero, 4);
        assert!((den - m0 as f64).abs() < 1e-9);
        assert!((r - (num / den).sqrt()).abs() < 1e-10);
        assert!(r <= 2.0 / (m0 as f64).sqrt());
        assert!((block_norm_ratio(&prev, e, m0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_shift_band_is_found() {
        let prev = PotentialRecipe::periodic(&[0.0]).unwrap();
        let i = OpenInterval::new(-0.5, 0.5).unwrap();
        let hat = build_hat_potential(&prev, choose_m0(0.9 * 0.25), 1, 1).unwrap();
        let t = pick_subinterval(&i, 0.25);
        let j = find_band_in_shifted_interval(&hat, &t, 0, 1).unwrap();
        assert!(j.within(&t) && in_spectrum(j.center(), &hat));
        assert!(j.len() >= RESOLUTION_FLOOR);
    }
}
