use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generic::choose_m0;
use super::sampling::{
    discover_bands, prefix_check, smallness_entry, sweep_lyapunov, MTrial, PrefixCheck, SmallnessEntry, SweepLength,
    SweepRow, SMALLNESS_TOL,
};
use super::{ConstructionConfig, Mode, PropertyCheck, StageFailure};
use crate::error::{Error, Result};
use crate::spectrum::{band_edges_by_index, dist_to_spectrum, spectral_hull, spectrum_infimum, Band, IndexedBand};
use crate::transfer::{
    bloch_boundary, finite_lyapunov, ldexp, lyapunov_periodic, monodromy, PotentialRecipe, ScaledMatrix2, ScaledScalar,
    StageOverlay, MAX_PERIOD,
};

/// Tolerance on the bottom-of-spectrum brackets.
const BRACKET_TOL: f64 = 1e-8;
/// Tolerance on the growth targets at energy zero.
const L0_TOL: f64 = 1e-6;
/// Relative tolerance on the Cayley-Hamilton identity.
const CH_TOL: f64 = 1e-6;
/// `|q_h|` below this counts as zero.
const Q_FLOOR: f64 = 1e-12;
const PREFIX_SAMPLES: usize = 1000;
const DISCOVERY_GRID: usize = 2048;
const BOTTOM_BANDS: usize = 8;
const SPREAD_BANDS: usize = 8;
const SWEEP_POINTS: usize = 513;
const MONOTONE_POINTS: usize = 64;
const MONOTONE_TOL: f64 = 1e-12;

/// `V0 - inf sigma(Delta + V0) + eps/5`.
pub fn normalize_potential(v0: &PotentialRecipe, eps: f64) -> Result<PotentialRecipe> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("eps must be positive".into()));
    }
    Ok(v0.shifted(eps / 5.0 - spectrum_infimum(v0)))
}

/// `m` copies of the `m0`-fold period of `prev`, then `h` copies lowered by `2 e0 / 5`.
pub fn build_lowered(prev: &PotentialRecipe, m0: u64, m: u64, h: u32, e0: f64) -> Result<PotentialRecipe> {
    if !(1..=2).contains(&h) {
        return Err(Error::InvalidInput(format!("h must be 1 or 2, got {h}")));
    }
    prev.clone().with_overlay(StageOverlay { m0, copies: m, shifts: vec![-0.4 * e0; h as usize] })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BottomBracket {
    pub e_prev: f64,
    pub e_new: f64,
    pub lower: f64,
    pub upper: f64,
    pub ok: bool,
}

/// `3 e0 / 5 <= inf sigma(Delta + hat) <= 4 e0 / 5`, within `1e-8`.
pub fn check_bottom_bracket(hat: &PotentialRecipe, e0: f64) -> BottomBracket {
    let e_new = spectrum_infimum(hat);
    let (lower, upper) = (0.6 * e0, 0.8 * e0);
    BottomBracket { e_prev: e0, e_new, lower, upper, ok: lower - BRACKET_TOL <= e_new && e_new <= upper + BRACKET_TOL }
}

/// Trial-vector mechanism behind the upper bracket edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoweringTrial {
    pub first_band: Band,
    pub e_hat: f64,
    /// `dist(e_hat - 2 e0 / 5, sigma(Delta + hat))`; `None` when no band lies within `e0`.
    pub distance: Option<f64>,
    pub bound: f64,
    /// Residual of the truncated Bloch vector, when the first band is resolvable.
    pub residual: Option<f64>,
    pub pass: bool,
}

/// `e_hat` = bottom of the first band of `prev` plus `min(width, e0/10) / 2`, and its
/// lowered image checked against the spectrum of `hat`.
pub fn lowering_trial(prev: &PotentialRecipe, hat: &PotentialRecipe, e0: f64, h: u32, m0: u64) -> LoweringTrial {
    let first_band = band_edges_by_index(prev, 0);
    let e_hat = first_band.alpha + 0.5 * first_band.width().min(0.1 * e0);
    let bound = 0.1 * e0;
    let distance = Some(dist_to_spectrum(e_hat - 0.4 * e0, hat, e0)).filter(|d| d.is_finite());
    let residual = bloch_boundary(e_hat, prev).ok().map(|bb| (2.0 * bb.edge_weight() / (h as f64 * m0 as f64)).sqrt());
    LoweringTrial { first_band, e_hat, distance, bound, residual, pass: distance.is_some_and(|d| d <= bound) }
}

/// Expanding and contracting directions of `A_{m0 p}(E)` at an energy below the spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicSplitting {
    pub energy: f64,
    pub v: [f64; 2],
    pub u: [f64; 2],
    /// `v_perp = a v + b u`.
    pub a: f64,
    pub b: f64,
    /// `m0 p L(E)`: log of the expanding eigenvalue.
    pub log_expansion: f64,
    /// Sign of the eigenvalues.
    pub sign: f64,
    /// `|A v - lambda v|` relative to `|lambda|`.
    pub residual_v: f64,
    /// `|A u|` relative to `||A||`; the contracting eigenvalue is below resolution.
    pub residual_u: f64,
    pub reconstruction_error: f64,
}

impl HyperbolicSplitting {
    pub fn v_perp(&self) -> [f64; 2] {
        [-self.v[1], self.v[0]]
    }
}

fn unit(x: [f64; 2]) -> [f64; 2] {
    let n = x[0].hypot(x[1]);
    [x[0] / n, x[1] / n]
}

fn eigenvector(m: &[f64; 4], mu: f64) -> [f64; 2] {
    let [a, b, c, d] = *m;
    let v1 = [b, mu - a];
    let v2 = [mu - d, c];
    if v1[0].hypot(v1[1]) >= v2[0].hypot(v2[1]) {
        unit(v1)
    } else {
        unit(v2)
    }
}

/// Splitting of the monodromy over `m0` periods of `recipe` at `e`.
pub fn eigen_split(e: f64, recipe: &PotentialRecipe, m0: u64) -> Result<HyperbolicSplitting> {
    let m = monodromy(e, recipe).pow(m0);
    if m.trace_within(2.0) {
        return Err(Error::EllipticEnergy { energy: e });
    }
    let raw = m.raw();
    let [a, b, c, d] = raw;
    let t = a + d;
    let det = m.unit_det_normalized();
    let disc = (t * t - 4.0 * det).max(0.0).sqrt();
    let mu1 = t.signum() * 0.5 * (t.abs() + disc);
    let mu2 = det / mu1;
    let v = eigenvector(&raw, mu1);
    let u = eigenvector(&raw, mu2);
    let vp = [-v[1], v[0]];
    let den = v[0] * u[1] - v[1] * u[0];
    if den == 0.0 {
        return Err(Error::DegenerateSelection(0.0));
    }
    let sa = (vp[0] * u[1] - vp[1] * u[0]) / den;
    let sb = (v[0] * vp[1] - v[1] * vp[0]) / den;
    let apply = |x: [f64; 2]| [a * x[0] + b * x[1], c * x[0] + d * x[1]];
    let av = apply(v);
    let au = apply(u);
    let norm = [a, b, c, d].iter().map(|x| x * x).sum::<f64>().sqrt();
    let rec = [sa * v[0] + sb * u[0] - vp[0], sa * v[1] + sb * u[1] - vp[1]];
    Ok(HyperbolicSplitting {
        energy: e,
        v,
        u,
        a: sa,
        b: sb,
        log_expansion: mu1.abs().ln() + m.exp2() as f64 * std::f64::consts::LN_2,
        sign: mu1.signum(),
        residual_v: (av[0] - mu1 * v[0]).hypot(av[1] - mu1 * v[1]) / mu1.abs(),
        residual_u: (au[0] - mu2 * u[0]).hypot(au[1] - mu2 * u[1]) / norm,
        reconstruction_error: rec[0].hypot(rec[1]),
    })
}

/// Sign and log magnitude of a scaled quantity, for reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    pub sign: f64,
    pub log_abs: f64,
}

impl From<ScaledScalar> for LogValue {
    fn from(s: ScaledScalar) -> Self {
        Self { sign: s.signum(), log_abs: s.ln_abs() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HChoice {
    pub h: u32,
    pub q1: LogValue,
    pub q2: LogValue,
    pub trace: LogValue,
    /// `|q2 - tr q1 + 1|` over the largest of the three terms.
    pub ch_residual: f64,
    pub ch_ok: bool,
}

fn quad(m: &ScaledMatrix2, x: [f64; 2], y: [f64; 2]) -> ScaledScalar {
    let [a, b, c, d] = m.raw();
    let my = [a * y[0] + b * y[1], c * y[0] + d * y[1]];
    ScaledScalar::new(x[0] * my[0] + x[1] * my[1], m.exp2())
}

/// Sum of scaled terms at their largest exponent, with the largest term's magnitude.
fn add_scaled(terms: &[ScaledScalar]) -> (f64, i64, f64) {
    let e = terms.iter().filter(|t| t.mantissa != 0.0).map(|t| t.exp2).max().unwrap_or(0);
    let at = |t: &ScaledScalar| ldexp(t.mantissa, t.exp2 - e);
    let sum: f64 = terms.iter().map(at).sum();
    let big = terms.iter().map(|t| at(t).abs()).fold(0.0, f64::max);
    (sum, e, big)
}

/// Picks `h` in `{1, 2}` maximizing `|<v, A^h v> + a <v_perp, A^h v>|` with
/// `A = A_{m0 p}(E, V + shift)`, and checks `q2 - tr(A) q1 = -1`.
pub fn choose_h(e: f64, prev: &PotentialRecipe, m0: u64, shift: f64, split: &HyperbolicSplitting) -> Result<HChoice> {
    let a1 = monodromy(e - shift, prev).pow(m0);
    let a2 = a1 * a1;
    let q = |m: &ScaledMatrix2| {
        let (sum, e, _) = add_scaled(&[quad(m, split.v, split.v), scale(quad(m, split.v_perp(), split.v), split.a)]);
        ScaledScalar::new(sum, e)
    };
    let (q1, q2) = (q(&a1), q(&a2));
    let tr = a1.trace();
    let (res, _, big) = add_scaled(&[q2, neg(tr.mul(&q1)), ScaledScalar::new(1.0, 0)]);
    let ch_residual = if big == 0.0 { 0.0 } else { res.abs() / big };
    let (l1, l2) = (q1.ln_abs(), q2.ln_abs());
    if l1.max(l2) < Q_FLOOR.ln() {
        return Err(Error::DegenerateSelection(l1.max(l2).exp()));
    }
    Ok(HChoice {
        h: if l2 > l1 { 2 } else { 1 },
        q1: q1.into(),
        q2: q2.into(),
        trace: tr.into(),
        ch_residual,
        ch_ok: ch_residual <= CH_TOL,
    })
}

fn scale(s: ScaledScalar, c: f64) -> ScaledScalar {
    ScaledScalar::new(s.mantissa * c, s.exp2)
}

fn neg(s: ScaledScalar) -> ScaledScalar {
    scale(s, -1.0)
}

/// `L(0, V^k)` against `(2 - sum_{s<=k} 2^{-s}) gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L0Entry {
    pub k: u32,
    pub l0: f64,
    pub target: f64,
    pub margin: f64,
    pub pass: bool,
    /// `(log|tr| - log 2) / p`, a lower bound for `l0`.
    pub trace_bound: f64,
    /// `(m m0 p L + log|q_h|) / p_hat` from the splitting, when available.
    pub asymptotic: Option<f64>,
}

fn l0_target(k: u32, gamma: f64) -> f64 {
    (2.0 - (1..=k).map(|s| 0.5f64.powi(s as i32)).sum::<f64>()) * gamma
}

fn l0_entry(k: u32, recipe: &PotentialRecipe, gamma: f64, asymptotic: Option<f64>) -> L0Entry {
    let l0 = lyapunov_periodic(0.0, recipe);
    let target = l0_target(k, gamma);
    let t = monodromy(0.0, recipe).trace();
    L0Entry {
        k,
        l0,
        target,
        margin: l0 - target,
        pass: l0 >= target - L0_TOL,
        trace_bound: (t.ln_abs() - std::f64::consts::LN_2) / recipe.period() as f64,
        asymptotic,
    }
}

/// Property (iii) for every stage of a history.
pub fn verify_l0_growth(history: &[StageRecordB]) -> Vec<L0Entry> {
    let gamma = history.first().map(|s| s.gamma).unwrap_or(0.0);
    history.iter().map(|s| l0_entry(s.k, &s.recipe, gamma, s.report.l0.asymptotic)).collect()
}

/// Property (iv) at stage `k`: sampled growth of `A_{p_k}(E, V^k)` over resolvable bands
/// of `V^l`; `samples[l - 1]` holds the bands of `V^l`.
pub fn verify_smallness_on_spectra_b(
    recipe: &PotentialRecipe,
    samples: &[Vec<IndexedBand>],
    k: u32,
    nodes: usize,
    seed: u64,
) -> Vec<SmallnessEntry> {
    samples
        .iter()
        .enumerate()
        .map(|(i, bands)| {
            let ivs: Vec<(f64, f64)> = bands.iter().map(|b| (b.band.alpha, b.band.beta)).collect();
            smallness_entry(recipe, &ivs, i as u32 + 1, k, nodes, seed.wrapping_add(k as u64))
        })
        .collect()
}

/// Resolvable spectral bands of `recipe` from its bottom up to the top of the hull.
fn spectral_samples(recipe: &PotentialRecipe, e_bottom: f64) -> Vec<IndexedBand> {
    let (_, hi) = spectral_hull(recipe);
    discover_bands(recipe, e_bottom, hi, DISCOVERY_GRID, BOTTOM_BANDS, SPREAD_BANDS)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReportB {
    /// Property (i): block lowering against `2 E_{k-1} / 5`.
    pub sup_change: f64,
    pub sup_bound: f64,
    pub sup_ok: bool,
    pub prefix: Option<PrefixCheck>,
    /// Property (ii), one-step bracket.
    pub bracket: Option<BottomBracket>,
    /// Property (ii), `[(3/5)^k, (4/5)^k] E_0`.
    pub global_lower: f64,
    pub global_upper: f64,
    pub global_ok: bool,
    pub lowering: Option<LoweringTrial>,
    pub split: Option<HyperbolicSplitting>,
    pub h_choice: Option<HChoice>,
    /// Property (iii).
    pub l0: L0Entry,
    /// Property (iv), one entry per `l = 1..=k`.
    pub smallness: Vec<SmallnessEntry>,
    pub delta_sqrt_m0: Option<f64>,
    pub m_transcript: Vec<MTrial>,
}

impl VerificationReportB {
    pub fn all_ok(&self) -> bool {
        self.sup_ok
            && self.prefix.as_ref().is_none_or(|p| p.pass)
            && self.bracket.as_ref().is_none_or(|b| b.ok)
            && self.global_ok
            && self.l0.pass
            && self.smallness.iter().all(|s| s.pass)
            && self.h_choice.as_ref().is_none_or(|h| h.ch_ok)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecordB {
    pub k: u32,
    pub recipe: PotentialRecipe,
    pub p_k: u64,
    /// `E_k = inf sigma(Delta + V^k)`.
    pub e_k: f64,
    pub gamma: f64,
    pub m0: u64,
    pub m0_required: u64,
    pub m: u64,
    pub h: u32,
    /// Resolvable bands of `V^k` used as property-(iv) samples at later stages.
    pub spectral_bands: Vec<IndexedBand>,
    pub report: VerificationReportB,
}

/// Stage 0 from an already normalized potential.
pub fn stage_zero_b(v0: &PotentialRecipe) -> Result<StageRecordB> {
    let e0 = spectrum_infimum(v0);
    if !(e0 > 0.0) {
        return Err(Error::InvalidInput(format!("bottom of the spectrum {e0} is not positive")));
    }
    let gamma = 0.5 * lyapunov_periodic(0.0, v0);
    Ok(StageRecordB {
        k: 0,
        recipe: v0.clone(),
        p_k: v0.period(),
        e_k: e0,
        gamma,
        m0: 1,
        m0_required: 1,
        m: 1,
        h: 0,
        spectral_bands: spectral_samples(v0, e0),
        report: VerificationReportB {
            sup_change: 0.0,
            sup_bound: 0.0,
            sup_ok: true,
            prefix: None,
            bracket: None,
            global_lower: e0,
            global_upper: e0,
            global_ok: true,
            lowering: None,
            split: None,
            h_choice: None,
            l0: l0_entry(0, v0, gamma, None),
            smallness: Vec::new(),
            delta_sqrt_m0: None,
            m_transcript: Vec::new(),
        },
    })
}

/// Builds stage `k = history.len()`.
pub fn build_stage_b(history: &[StageRecordB], cfg: &ConstructionConfig) -> Result<StageRecordB> {
    let prev = history.last().ok_or(Error::EmptyFamily)?;
    let first = &history[0];
    let k = prev.k + 1;
    let e0 = prev.e_k;
    let shift = -0.4 * e0;
    let delta = e0 / 5.0;
    let m0_required = choose_m0(delta);
    let m0 = cfg.effective_m0(m0_required);
    let fail = |reason: String| -> Error { StageFailure { stage: k, reason }.into() };
    let split = eigen_split(0.0, &prev.recipe, m0).map_err(|e| fail(format!("splitting at 0: {e}")))?;
    let hc = choose_h(0.0, &prev.recipe, m0, shift, &split).map_err(|e| fail(format!("choosing h: {e}")))?;
    let h = hc.h;
    let q_log = if h == 1 { hc.q1.log_abs } else { hc.q2.log_abs };
    let global_lower = 0.6f64.powi(k as i32) * first.e_k;
    let global_upper = 0.8f64.powi(k as i32) * first.e_k;
    let samples: Vec<Vec<IndexedBand>> = history[1..].iter().map(|s| s.spectral_bands.clone()).collect();
    let seed = cfg.seed.wrapping_add(0xb);
    let mut transcript = Vec::new();
    let mut m = 1u64;
    loop {
        let hat = build_lowered(&prev.recipe, m0, m, h, e0).map_err(|e| match e {
            Error::PeriodOverflow => fail(format!("m={m}: period exceeds {MAX_PERIOD}")),
            other => other,
        })?;
        let bracket = check_bottom_bracket(&hat, e0);
        let global_ok = global_lower - BRACKET_TOL <= bracket.e_new && bracket.e_new <= global_upper + BRACKET_TOL;
        let asymptotic = (m as f64 * split.log_expansion + q_log) / hat.period() as f64;
        let l0 = l0_entry(k, &hat, first.gamma, Some(asymptotic));
        let bands = spectral_samples(&hat, bracket.e_new);
        let mut all = samples.clone();
        all.push(bands.clone());
        let smallness = verify_smallness_on_spectra_b(&hat, &all, k, cfg.samples_per_band, seed);
        let margin = smallness.iter().map(SmallnessEntry::margin).chain([l0.margin]).fold(f64::INFINITY, f64::min);
        let pass = bracket.ok && global_ok && l0.pass && smallness.iter().all(|s| s.pass);
        transcript.push(MTrial { m, period: hat.period(), worst_margin: margin, pass });
        let exhausted = m.saturating_mul(2) > cfg.m_limit() || hat.period() > MAX_PERIOD / 2;
        if pass || exhausted {
            if !pass && cfg.mode == Mode::Strict {
                return Err(fail(format!("stage checks still fail at m={m} (worst margin {margin:e})")));
            }
            let lowering = lowering_trial(&prev.recipe, &hat, e0, h, m0);
            let sup_change = hat.overlay_sup_norm(hat.depth() - 1);
            let report = VerificationReportB {
                sup_change,
                sup_bound: 0.4 * e0,
                sup_ok: sup_change <= 0.4 * e0,
                prefix: Some(prefix_check(&hat, &prev.recipe, PREFIX_SAMPLES, seed.wrapping_add(k as u64))),
                bracket: Some(bracket.clone()),
                global_lower,
                global_upper,
                global_ok,
                lowering: Some(lowering),
                split: Some(split),
                h_choice: Some(hc),
                l0,
                smallness,
                delta_sqrt_m0: Some(delta * (m0 as f64).sqrt()),
                m_transcript: transcript,
            };
            return Ok(StageRecordB {
                k,
                p_k: hat.period(),
                recipe: hat,
                e_k: bracket.e_new,
                gamma: first.gamma,
                m0,
                m0_required,
                m,
                h,
                spectral_bands: bands,
                report,
            });
        }
        m *= 2;
    }
}

/// Lowest resolvable band of `V^k` and the finite-size exponent of the final stage there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BottomSample {
    pub k: u32,
    pub band: IndexedBand,
    pub energy: f64,
    /// `(1/p_K) log ||A_{p_K}(E, V^K)||`.
    pub finite_l: f64,
    pub target: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelescopeCheck {
    pub changes: Vec<f64>,
    pub total: f64,
    pub bound_2e0: f64,
    pub bound_5e0: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnshiftCheck {
    /// Constant subtracted from the final potential to undo the normalization.
    pub shift: f64,
    /// `||V - V0||` after undoing the normalization.
    pub distance: f64,
    pub eps: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscontinuityReport {
    pub gamma: f64,
    pub e0: f64,
    pub stages: u32,
    pub l0: L0Entry,
    pub bottom: Vec<BottomSample>,
    pub min_bottom_l: Option<f64>,
    pub telescope: TelescopeCheck,
    pub sweep: Vec<SweepRow>,
    pub monotone_ok: bool,
    pub unshift: UnshiftCheck,
    /// `min_bottom_l <= 2^{-K} + 1e-3` together with `L(0, V^K) >= (1 + 2^{-K}) gamma`.
    pub shadow_ok: bool,
}

impl DiscontinuityReport {
    /// The sweep as CSV with columns `E,L,in_spectrum`.
    pub fn sweep_csv(&self) -> String {
        crate::io::sweep_csv(&self.sweep)
    }
}

/// Report (a)-(d) for a completed history.
pub fn discontinuity_report(stages: &[StageRecordB], unshift: f64, eps: f64) -> DiscontinuityReport {
    let last = stages.last().expect("nonempty history");
    let (gamma, e0) = (stages[0].gamma, stages[0].e_k);
    let kk = last.k;
    let bottom: Vec<BottomSample> = stages[1..]
        .par_iter()
        .filter_map(|s| {
            let band = *s.spectral_bands.first()?;
            let energy = band.band.midpoint();
            let target = (s.k + 1..=kk + 1).map(|t| 0.5f64.powi(t as i32)).sum();
            let finite_l = finite_lyapunov(energy, &last.recipe, last.p_k);
            Some(BottomSample { k: s.k, band, energy, finite_l, target, pass: finite_l <= target })
        })
        .collect();
    let min_bottom_l = bottom.iter().map(|b| b.finite_l).min_by(f64::total_cmp);
    let changes: Vec<f64> = stages[1..].iter().map(|s| s.report.sup_change).collect();
    let total: f64 = changes.iter().sum();
    let telescope =
        TelescopeCheck { total, bound_2e0: 2.0 * e0, bound_5e0: 5.0 * e0, ok: total <= 2.0 * e0 + 1e-9, changes };
    let sweep = sweep_lyapunov(&last.recipe, -0.25 * e0, 2.0 * e0, SWEEP_POINTS, SweepLength::Period);
    let below = sweep_lyapunov(&last.recipe, -e0, -e0 / MONOTONE_POINTS as f64, MONOTONE_POINTS, SweepLength::Period);
    let monotone_ok = below.windows(2).all(|w| w[1].l <= w[0].l + MONOTONE_TOL);
    let l0 = l0_entry(kk, &last.recipe, gamma, last.report.l0.asymptotic);
    let shadow_ok = min_bottom_l.is_some_and(|l| l <= 0.5f64.powi(kk as i32) + 1e-3)
        && l0.l0 >= (1.0 + 0.5f64.powi(kk as i32)) * gamma;
    DiscontinuityReport {
        gamma,
        e0,
        stages: kk,
        l0,
        bottom,
        min_bottom_l,
        telescope,
        sweep,
        monotone_ok,
        unshift: UnshiftCheck { shift: unshift, distance: total, eps, ok: total <= eps },
        shadow_ok,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionBOutcome {
    pub stages: Vec<StageRecordB>,
    pub failure: Option<StageFailure>,
    /// Constant to subtract from the final potential to undo the normalization.
    pub unshift: f64,
    pub report: DiscontinuityReport,
}

impl ConstructionBOutcome {
    pub fn all_ok(&self) -> bool {
        self.failure.is_none()
            && self.stages.iter().all(|s| s.report.all_ok())
            && self.report.telescope.ok
            && self.report.unshift.ok
            && self.report.monotone_ok
    }
}

fn initial_potential(cfg: &ConstructionConfig) -> Result<(PotentialRecipe, f64)> {
    let v0 = PotentialRecipe::periodic(&cfg.v0)?;
    let normalized = normalize_potential(&v0, cfg.eps)?;
    let shift = normalized.base()[0].value - v0.base()[0].value;
    Ok((normalized, shift))
}

pub fn run_construction_b(cfg: &ConstructionConfig) -> Result<ConstructionBOutcome> {
    cfg.validate()?;
    let (v0, _) = initial_potential(cfg)?;
    run_construction_b_from(cfg, vec![stage_zero_b(&v0)?])
}

/// Continues from saved stages up to `cfg.stages`.
pub fn run_construction_b_from(
    cfg: &ConstructionConfig,
    mut stages: Vec<StageRecordB>,
) -> Result<ConstructionBOutcome> {
    cfg.validate()?;
    if stages.is_empty() {
        return run_construction_b(cfg);
    }
    let (_, shift) = initial_potential(cfg)?;
    let mut failure = None;
    while (stages.len() as u32) <= cfg.stages {
        match build_stage_b(&stages, cfg) {
            Ok(s) => {
                let bad = cfg.mode == Mode::Strict && !s.report.all_ok();
                let k = s.k;
                stages.push(s);
                if bad {
                    failure = Some(StageFailure { stage: k, reason: "stage checks failed".into() });
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
    let report = discontinuity_report(&stages, shift, cfg.eps);
    Ok(ConstructionBOutcome { stages, failure, unshift: shift, report })
}

/// Re-runs the stage checks of a saved history from its recipes alone.
pub fn reverify_history_b(history: &[StageRecordB], cfg: &ConstructionConfig) -> Vec<PropertyCheck> {
    let mut out = Vec::new();
    let Some(first) = history.first() else {
        return out;
    };
    let e_first = spectrum_infimum(&first.recipe);
    let gamma = 0.5 * lyapunov_periodic(0.0, &first.recipe);
    out.push(PropertyCheck::lower(0, "bottom of spectrum positive", e_first, 0.0, 0.0));
    let mut bottoms = vec![e_first];
    let mut samples: Vec<Vec<IndexedBand>> = Vec::new();
    let mut total_change = 0.0;
    let seed = cfg.seed.wrapping_add(0xb);
    for (idx, s) in history.iter().enumerate().skip(1) {
        let k = s.k;
        let prev = &history[idx - 1];
        let e_prev = bottoms[idx - 1];
        let mut structural = Vec::new();
        if k as usize != idx {
            structural.push(format!("stage index {k} stored at position {idx}"));
        }
        if s.p_k != s.recipe.period() {
            structural.push(format!("recorded period {} but recipe period {}", s.p_k, s.recipe.period()));
        }
        out.push(PropertyCheck::count(k, "record consistency", structural.len(), structural.join("; ")));
        let sup = s.recipe.overlay_sup_norm(s.recipe.depth() - 1);
        total_change += sup;
        out.push(PropertyCheck::upper(k, "(i) lowering size", sup, 0.4 * e_prev, 1e-15));
        let pc = prefix_check(&s.recipe, &prev.recipe, PREFIX_SAMPLES, seed.wrapping_add(k as u64));
        out.push(PropertyCheck::count(
            k,
            "prefix",
            pc.mismatches,
            match pc.first_mismatch {
                Some(n) => format!("{} sites compared, first mismatch at n = {n}", pc.checked),
                None => format!("{} sites compared", pc.checked),
            },
        ));
        let b = check_bottom_bracket(&s.recipe, e_prev);
        out.push(PropertyCheck::lower(k, "(ii) bracket lower", b.e_new, b.lower, BRACKET_TOL));
        out.push(PropertyCheck::upper(k, "(ii) bracket upper", b.e_new, b.upper, BRACKET_TOL));
        let (gl, gu) = (0.6f64.powi(k as i32) * e_first, 0.8f64.powi(k as i32) * e_first);
        out.push(PropertyCheck::lower(k, "(ii) global bracket lower", b.e_new, gl, BRACKET_TOL));
        out.push(PropertyCheck::upper(k, "(ii) global bracket upper", b.e_new, gu, BRACKET_TOL));
        bottoms.push(b.e_new);
        let l0 = l0_entry(k, &s.recipe, gamma, None);
        out.push(PropertyCheck::lower(k, "(iii) L(0)", l0.l0, l0.target, L0_TOL));
        match eigen_split(0.0, &prev.recipe, s.m0).and_then(|sp| choose_h(0.0, &prev.recipe, s.m0, -0.4 * e_prev, &sp))
        {
            Ok(hc) => {
                out.push(
                    PropertyCheck::upper(k, "Cayley-Hamilton", hc.ch_residual, CH_TOL, 0.0)
                        .with_detail(format!("h = {} (recorded {})", hc.h, s.h)),
                );
            }
            Err(e) => out.push(PropertyCheck::count(k, "Cayley-Hamilton", 1, e.to_string())),
        }
        samples.push(spectral_samples(&s.recipe, b.e_new));
        for e in verify_smallness_on_spectra_b(&s.recipe, &samples, k, cfg.samples_per_band, seed) {
            out.push(
                PropertyCheck::upper(k, format!("(iv) smallness l={}", e.l), e.sup, e.target, SMALLNESS_TOL)
                    .with_detail(match e.argmax {
                        Some(x) => format!("{} samples, argmax E = {x}", e.samples),
                        None => format!("{} samples", e.samples),
                    }),
            );
        }
    }
    let kk = history.len() as u32 - 1;
    out.push(PropertyCheck::upper(kk, "telescoped change", total_change, 2.0 * e_first, 1e-9));
    out.push(PropertyCheck::upper(kk, "distance to V0", total_change, cfg.eps, 0.0));
    out
}
