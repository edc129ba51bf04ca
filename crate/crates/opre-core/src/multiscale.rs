//! Renormalisation bookkeeping: scale schedules, good and bad blocks, bad-area
//! traversal, the renormalised site lattice and its blocking contours.

use std::collections::{HashSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{build_embedding, sample_stretches, ChiMode, RenewalEmbedding, StretchSpec};
use crate::error::{Error, Result};
use crate::percolation::{crossing, CrossingKind, OpenConfiguration, Rectangle};
use crate::rng::Seed;
use crate::stats::wilson_ci;

const EXACT_LIMIT: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub l0: u64,
    pub mu: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    pub params: ScheduleParams,
    /// `L_0, L_1, ...`, exact.
    pub l: Vec<u64>,
    /// `floor(L_k^{gamma - 1})`, the number of scale-k blocks per scale-(k+1) block.
    pub ratio: Vec<u64>,
    /// `log H_k`.
    pub log_h: Vec<f64>,
    pub k_max: usize,
    /// Scales beyond `k_max` were requested but overflow the exact range.
    pub truncated: bool,
    pub relaxed: bool,
    pub violations: Vec<String>,
}

impl ScaleSchedule {
    /// The admissible range of `gamma` given `alpha`.
    pub fn gamma_interval(alpha: f64) -> (f64, f64) {
        (1.0, 1.0 + alpha / (alpha + 2.0))
    }
}

/// `floor(l^e)` for an integer `l >= 1`, corrected against rounding of `powf`.
pub fn floor_pow(l: u64, e: f64) -> u64 {
    let target = e * (l as f64).ln();
    let mut m = (l as f64).powf(e).floor().max(1.0) as u64;
    while m > 1 && (m as f64).ln() > target + 1e-15 * target.abs() {
        m -= 1;
    }
    while ((m + 1) as f64).ln() <= target - 1e-15 * target.abs() {
        m += 1;
    }
    m
}

/// `log ceil(exp(y))`.
pub fn log_ceil_exp(y: f64) -> f64 {
    if y > 36.0 {
        // ceil adds less than one unit, i.e. a relative change below e^-36.
        y + (-y).exp() * 0.5
    } else {
        y.exp().ceil().ln()
    }
}

fn check_params(p: &ScheduleParams) -> Vec<String> {
    let mut v = Vec::new();
    let ScheduleParams {
        epsilon,
        alpha,
        gamma,
        l0,
        mu,
        beta,
    } = *p;
    if !(epsilon > 0.0) {
        v.push(format!("epsilon > 0 (got {epsilon})"));
    }
    if !(alpha > 0.0 && alpha <= epsilon / 2.0) {
        v.push(format!("alpha in (0, epsilon/2] = (0, {}] (got {alpha})", epsilon / 2.0));
    }
    let (glo, ghi) = ScaleSchedule::gamma_interval(alpha);
    if !(gamma > glo && gamma <= ghi) {
        v.push(format!("gamma in (1, 1 + alpha/(alpha + 2)] = (1, {ghi}] (got {gamma})"));
    }
    if l0 < 2 || (l0 as f64).powf(gamma - 1.0) < 5.0 {
        v.push(format!("L0^(gamma - 1) >= 5 (got {})", (l0 as f64).powf(gamma - 1.0)));
    }
    if !(mu > 1.0 / gamma && mu < 1.0) {
        v.push(format!("mu in (1/gamma, 1) = ({}, 1) (got {mu})", 1.0 / gamma));
    }
    let blo = gamma * mu - gamma + 1.0;
    if !(beta > blo && beta < 1.0) {
        v.push(format!("beta in (gamma mu - gamma + 1, 1) = ({blo}, 1) (got {beta})"));
    }
    if !(beta + gamma - 1.0 > (gamma * beta).max(gamma * mu)) {
        v.push(format!(
            "beta + gamma - 1 > max(gamma beta, gamma mu) ({} vs {})",
            beta + gamma - 1.0,
            (gamma * beta).max(gamma * mu)
        ));
    }
    v
}

/// Build `L_k` and `log H_k` for `k = 0..=k_max`.
///
/// Without `relaxed` any violated constraint is an error; with it the
/// violations are recorded and the arithmetic proceeds as long as it is
/// well-defined (`gamma > 1`, `L0 >= 2`, `0 < mu`).
pub fn build_schedule(params: ScheduleParams, k_max: usize, relaxed: bool) -> Result<ScaleSchedule> {
    let violations = check_params(&params);
    if !violations.is_empty() && !relaxed {
        return Err(Error::ConstraintViolation(violations));
    }
    if !(params.gamma > 1.0) || params.l0 < 2 || !(params.mu > 0.0) {
        return Err(Error::ConstraintViolation(vec![
            "need gamma > 1, L0 >= 2 and mu > 0 even in relaxed mode".into(),
        ]));
    }
    let e = params.gamma - 1.0;
    let mut l = vec![params.l0];
    let mut ratio = Vec::new();
    let mut log_h = vec![(params.l0 as f64).ln()];
    let mut truncated = false;
    for _k in 1..=k_max {
        let prev = *l.last().unwrap();
        let f = floor_pow(prev, e);
        let next = match prev.checked_mul(f) {
            Some(n) if n < EXACT_LIMIT => n,
            _ => {
                truncated = true;
                break;
            }
        };
        let lh = std::f64::consts::LN_2
            + (f as f64).ln()
            + log_ceil_exp((next as f64).powf(params.mu))
            + log_h.last().unwrap();
        ratio.push(f);
        l.push(next);
        log_h.push(lh);
    }
    if let Some(&last) = l.last() {
        ratio.push(floor_pow(last, e));
    }
    Ok(ScaleSchedule {
        params,
        k_max: l.len() - 1,
        l,
        ratio,
        log_h,
        truncated,
        relaxed,
        violations,
    })
}

/// Check `(1/2)^k L0^{gamma^k} <= L_k <= L0^{gamma^k}` in log space.
pub fn growth_bounds_hold(s: &ScaleSchedule) -> bool {
    let ln_l0 = (s.params.l0 as f64).ln();
    s.l.iter().enumerate().all(|(k, &lk)| {
        let upper = s.params.gamma.powi(k as i32) * ln_l0;
        let lower = upper - k as f64 * std::f64::consts::LN_2;
        let v = (lk as f64).ln();
        let tol = 1e-12 * upper.abs().max(1.0);
        lower <= v + tol && v <= upper + tol
    })
}

pub fn beta_property_holds(p: &ScheduleParams) -> bool {
    p.beta + p.gamma - 1.0 > (p.gamma * p.beta).max(p.gamma * p.mu)
}

/// Parent rule: at most one bad child, or exactly two adjacent bad children.
pub fn parent_good(children: &[bool]) -> bool {
    let bad: Vec<usize> = children.iter().enumerate().filter(|(_, &g)| !g).map(|(i, _)| i).collect();
    match bad.len() {
        0 | 1 => true,
        2 => bad[1] == bad[0] + 1,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockTree {
    /// `good[k][i]` for `I_{k,i} = [i L_k, (i + 1) L_k)`.
    pub good: Vec<Vec<bool>>,
    pub lengths: Vec<u64>,
}

impl BlockTree {
    /// Recompute scale `k >= 1` from scale `k - 1`.
    pub fn recompute(&self, k: usize) -> Vec<bool> {
        let f = (self.lengths[k] / self.lengths[k - 1]) as usize;
        self.good[k - 1]
            .chunks(f)
            .take(self.good[k].len())
            .map(parent_good)
            .collect()
    }
}

/// Classify all blocks of scales `0..=k_max` inside `[0, window)`.
pub fn classify_blocks(emb: &RenewalEmbedding, sched: &ScaleSchedule, k_max: usize, window: u64) -> Result<BlockTree> {
    if k_max > sched.k_max {
        return Err(Error::ScaleTooDeep { k: k_max, max: sched.k_max });
    }
    let top = sched.l[k_max];
    if window < top {
        return Err(Error::WindowTooSmall { need: top, have: window });
    }
    let last = *emb.points.last().ok_or(Error::EmptySequence)?;
    if last < window as i64 {
        return Err(Error::WindowExceedsEnvironment {
            need: window as usize + 1,
            have: (last + 1).max(0) as usize,
        });
    }
    let n0 = (window / sched.l[0]) as usize;
    let l0 = sched.l[0] as i64;
    let base: Vec<bool> = (0..n0 as i64)
        .map(|i| !emb.index_range(i * l0, (i + 1) * l0 - 1).is_empty())
        .collect();
    let mut good = vec![base];
    for k in 1..=k_max {
        let f = (sched.l[k] / sched.l[k - 1]) as usize;
        let n = (window / sched.l[k]) as usize;
        let level: Vec<bool> = good[k - 1].chunks(f).take(n).map(parent_good).collect();
        good.push(level);
    }
    Ok(BlockTree {
        good,
        lengths: sched.l[..=k_max].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadProbEstimate {
    pub k: usize,
    pub bad: u64,
    pub n: u64,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `L_k^{-alpha}`.
    pub bound: f64,
    pub below_bound: bool,
}

pub const BAD_PROB_MAX_SCALE: usize = 2;
const BURN_IN: u64 = 2_000;

/// Whether `I_{k,0}` is bad in one stationary environment.
pub fn first_block_bad(spec: &StretchSpec, sched: &ScaleSchedule, k: usize, seed: Seed) -> Result<bool> {
    let len = sched.l[k];
    // Every gap is at least one, so `len + 1` columns past the burn-in cover the block.
    let width = (BURN_IN + len + 2) as usize;
    let env = sample_stretches(spec, width, seed)?;
    let emb = build_embedding(&env, seed, ChiMode::BurnIn(BURN_IN))?;
    let tree = classify_blocks(&emb, sched, k, len)?;
    Ok(!tree.good[k][0])
}

/// Monte Carlo frequency of `I_{k,0}` being bad, with a 95% Wilson interval.
pub fn estimate_bad_prob(spec: &StretchSpec, sched: &ScaleSchedule, k: usize, reps: u64, seed: Seed) -> Result<BadProbEstimate> {
    if k > BAD_PROB_MAX_SCALE {
        return Err(Error::ScaleTooDeep { k, max: BAD_PROB_MAX_SCALE });
    }
    if k > sched.k_max {
        return Err(Error::ScaleTooDeep { k, max: sched.k_max });
    }
    if reps == 0 {
        return Err(Error::ZeroTrials);
    }
    spec.validate()?;
    let flags: Vec<bool> = (0..reps)
        .into_par_iter()
        .map(|r| first_block_bad(spec, sched, k, seed.derive(r, "bad-block")))
        .collect::<Result<_>>()?;
    let bad = flags.iter().filter(|&&b| b).count() as u64;
    let (ci_lo, ci_hi) = wilson_ci(bad, reps, 0.95)?;
    let bound = (sched.l[k] as f64).powf(-sched.params.alpha);
    Ok(BadProbEstimate {
        k,
        bad,
        n: reps,
        estimate: bad as f64 / reps as f64,
        ci_lo,
        ci_hi,
        bound,
        below_bound: ci_lo <= bound,
    })
}

/// A maximal run of bad blocks together with its traversal window
/// `[lower, upper]` in block indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadArea {
    pub first_bad: usize,
    pub lower: usize,
    pub upper: usize,
}

/// For every bad block that starts a bad run: `lower = (i - 1) v 0` and
/// `upper` the next good index, or `sentinel` if none follows.
pub fn bad_areas(good: &[bool], sentinel: usize) -> Vec<BadArea> {
    let mut out = Vec::new();
    for i in 0..good.len() {
        if good[i] || (i > 0 && !good[i - 1]) {
            continue;
        }
        let upper = (i..good.len()).find(|&j| good[j]).unwrap_or(sentinel);
        out.push(BadArea {
            first_bad: i,
            lower: i.saturating_sub(1),
            upper,
        });
    }
    out
}

/// The explicit open path that traverses a segment on the fastest route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversePath {
    /// `-(Z_{m+1} - Z_0)`.
    pub log_bound: f64,
    pub z: Vec<i64>,
    pub t0: u32,
    /// `(t, column)` for `Z_0, ..., Z_m`.
    pub vertices: Vec<(u32, usize)>,
    /// Up-edges between consecutive vertices.
    pub edges: Vec<(u32, usize)>,
    pub rect: Rectangle,
}

impl TraversePath {
    pub fn force_open(&self, cfg: &mut OpenConfiguration) {
        for &(t, c) in &self.vertices {
            cfg.set_vertex(t, c as u32, true);
        }
        for &(t, c) in &self.edges {
            cfg.set_up(t, c as u32, true);
        }
    }
}

/// Lower bound on the log-probability of a left-right crossing of `[lo, hi]`
/// starting near time `t_start`, with the path realising it.
pub fn fastest_traverse_bound(emb: &RenewalEmbedding, lo: i64, hi: i64, t_start: u32) -> Result<TraversePath> {
    let r = emb.index_range(lo, hi);
    if r.len() < 2 {
        return Err(Error::InsufficientColumns { a: lo, b: hi });
    }
    let z: Vec<i64> = emb.points[r.clone()].to_vec();
    let m = z.len() - 2;
    let i0 = r.start;
    let t0 = if (t_start as usize + i0 + emb.parity as usize).is_multiple_of(2) {
        t_start
    } else {
        t_start + 1
    };
    let vertices: Vec<(u32, usize)> = (0..=m).map(|x| (t0 + x as u32, i0 + x)).collect();
    let edges = vertices[..m].to_vec();
    Ok(TraversePath {
        log_bound: -((z[m + 1] - z[0]) as f64),
        t0,
        rect: Rectangle {
            t0,
            t1: t0 + (m as u32).max(1),
            a: lo,
            b: hi,
        },
        z,
        vertices,
        edges,
    })
}

/// Crossing indicators on the renormalised lattice, flat-indexed by `j (l + 1) + i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossingIndicators {
    pub t: usize,
    pub l: usize,
    pub lrc: Vec<bool>,
    pub rlc: Vec<bool>,
    pub btc: Vec<bool>,
}

impl CrossingIndicators {
    pub fn all(t: usize, l: usize, value: bool) -> Self {
        let n = (t + 1) * (l + 1);
        CrossingIndicators {
            t,
            l,
            lrc: vec![value; n],
            rlc: vec![value; n],
            btc: vec![value; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenormSiteGrid {
    pub t: usize,
    pub l: usize,
    open: Vec<bool>,
}

impl RenormSiteGrid {
    /// Sites with `j + i` odd do not exist and are reported closed.
    pub fn from_fn(t: usize, l: usize, open: impl Fn(usize, usize) -> bool) -> Result<Self> {
        if t == 0 || l == 0 {
            return Err(Error::param("grid", "need T >= 1 and l >= 1"));
        }
        let mut v = vec![false; (t + 1) * (l + 1)];
        for j in 0..=t {
            for i in 0..=l {
                v[j * (l + 1) + i] = (j + i) % 2 == 0 && open(j, i);
            }
        }
        Ok(RenormSiteGrid { t, l, open: v })
    }

    pub fn is_site(&self, j: i64, i: i64) -> bool {
        j >= 0 && i >= 0 && j as usize <= self.t && i as usize <= self.l && (j + i) % 2 == 0
    }

    pub fn is_open(&self, j: usize, i: usize) -> bool {
        j <= self.t && i <= self.l && self.open[j * (self.l + 1) + i]
    }

    pub fn sites(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..=self.t).flat_map(move |j| (0..=self.l).filter(move |i| (j + i) % 2 == 0).map(move |i| (j, i)))
    }

    /// Open path from row 0 to row `T` along `(j, i) -> (j + 1, i +- 1)`.
    pub fn has_bottom_top_path(&self) -> bool {
        self.reaches_top(|j, i| self.is_open(j, i))
    }

    fn reaches_top(&self, open: impl Fn(usize, usize) -> bool) -> bool {
        let mut cur: Vec<bool> = (0..=self.l).map(|i| i % 2 == 0 && open(0, i)).collect();
        for j in 1..=self.t {
            let next: Vec<bool> = (0..=self.l)
                .map(|i| {
                    (j + i) % 2 == 0
                        && open(j, i)
                        && ((i > 0 && cur[i - 1]) || (i < self.l && cur[i + 1]))
                })
                .collect();
            if !next.iter().any(|&b| b) {
                return false;
            }
            cur = next;
        }
        cur.iter().any(|&b| b)
    }
}

/// Site `(j, i)` is open iff `LRC(j, i - 1)` (when `i >= 1`), `RLC(j, i)`
/// (when `i <= l - 1`) and `BTC(j, i)` all occurred.
pub fn build_renorm_grid(ind: &CrossingIndicators) -> Result<RenormSiteGrid> {
    let n = (ind.t + 1) * (ind.l + 1);
    if ind.lrc.len() != n || ind.rlc.len() != n || ind.btc.len() != n {
        return Err(Error::param("indicators", format!("need {n} entries per event")));
    }
    let w = ind.l + 1;
    RenormSiteGrid::from_fn(ind.t, ind.l, |j, i| {
        (i == 0 || ind.lrc[j * w + i - 1]) && (i >= ind.l || ind.rlc[j * w + i]) && ind.btc[j * w + i]
    })
}

/// Indicators from a sampled configuration with scale lengths `len` (space)
/// and `height` (time): horizontal rectangles `[jH, (j+1)H] x [iL, (i+2)L]`,
/// vertical ones `[jH, (j+2)H] x [iL, (i+1)L]`.
pub fn crossing_indicators(
    cfg: &OpenConfiguration,
    emb: &RenewalEmbedding,
    height: u32,
    len: i64,
    t: usize,
    l: usize,
) -> Result<CrossingIndicators> {
    let mut ind = CrossingIndicators::all(t, l, false);
    let w = l + 1;
    let ev = |rect: Rectangle, kind| match crossing(cfg, emb, &rect, kind) {
        Ok(b) => Ok(b),
        Err(Error::InsufficientColumns { .. }) => Ok(false),
        Err(e) => Err(e),
    };
    for j in 0..=t {
        let jt = j as u32 * height;
        for i in 0..=l {
            if (j + i) % 2 == 1 {
                continue;
            }
            let x = i as i64 * len;
            let hor = Rectangle { t0: jt, t1: jt + height, a: x, b: x + 2 * len };
            let ver = Rectangle { t0: jt, t1: jt + 2 * height, a: x, b: x + len };
            if i >= 1 {
                let left = Rectangle { a: x - len, b: x + len, ..hor };
                ind.lrc[j * w + i - 1] = ev(left, CrossingKind::Lrc)?;
            }
            if i < l {
                ind.rlc[j * w + i] = ev(hor, CrossingKind::Rlc)?;
            }
            ind.btc[j * w + i] = ev(ver, CrossingKind::Btc)?;
        }
    }
    Ok(ind)
}

/// A left-to-right dual path that every bottom-top path has to cross at a
/// closed site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contour {
    /// Dual points `(j, i)` with `j + i` odd, from `i = -1` to `i = l + 1`.
    pub dual: Vec<(i64, i64)>,
    /// One closed site per step that crosses an upward edge from below.
    pub closed: Vec<(usize, usize)>,
}

impl Contour {
    pub fn len(&self) -> usize {
        self.dual.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn start(&self) -> (i64, i64) {
        self.dual[0]
    }
}

const DUAL_STEPS: [(i64, i64); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

/// The primal edge crossed by the dual step `d -> d + (dj, di)`, as
/// `(right, left, right_is_lower)` relative to the walking direction.
#[inline]
fn crossed_edge(d: (i64, i64), dj: i64, di: i64) -> ((i64, i64), (i64, i64), bool) {
    let p1 = (d.0, d.1 + di);
    let p2 = (d.0 + dj, d.1);
    let (right, left) = if di * dj == 1 { (p1, p2) } else { (p2, p1) };
    (right, left, right.0 < left.0)
}

/// Outcome of trying a dual step: `None` if blocked, `Some(witness)` otherwise.
fn dual_step(grid: &RenormSiteGrid, d: (i64, i64), dj: i64, di: i64) -> Option<Option<(usize, usize)>> {
    let (right, left, upward) = crossed_edge(d, dj, di);
    if !upward || !grid.is_site(right.0, right.1) || !grid.is_site(left.0, left.1) {
        return Some(None);
    }
    let closed = |p: (i64, i64)| !grid.is_open(p.0 as usize, p.1 as usize);
    if closed(right) {
        Some(Some((right.0 as usize, right.1 as usize)))
    } else if closed(left) {
        Some(Some((left.0 as usize, left.1 as usize)))
    } else {
        None
    }
}

/// Shortest blocking contour, if there is no open bottom-top path.
pub fn find_blocking_contour(grid: &RenormSiteGrid) -> Option<Contour> {
    let (t, l) = (grid.t as i64, grid.l as i64);
    let cols = (l + 3) as usize;
    let key = |p: (i64, i64)| p.0 as usize * cols + (p.1 + 1) as usize;
    #[allow(clippy::type_complexity)]
    let mut prev: Vec<Option<(usize, Option<(usize, usize)>)>> = vec![None; (t as usize + 1) * cols];
    let mut seen = vec![false; prev.len()];
    let mut queue = VecDeque::new();
    for j in (0..=t).filter(|j| (j - 1).rem_euclid(2) == 1) {
        let p = (j, -1);
        seen[key(p)] = true;
        queue.push_back(p);
    }
    while let Some(d) = queue.pop_front() {
        if d.1 == l + 1 {
            let mut dual = vec![d];
            let mut closed = Vec::new();
            let mut k = key(d);
            while let Some((pk, w)) = prev[k] {
                if let Some(s) = w {
                    closed.push(s);
                }
                let p = ((pk / cols) as i64, (pk % cols) as i64 - 1);
                dual.push(p);
                k = pk;
            }
            dual.reverse();
            closed.reverse();
            return Some(Contour { dual, closed });
        }
        for &(dj, di) in &DUAL_STEPS {
            let n = (d.0 + dj, d.1 + di);
            if n.0 < 0 || n.0 > t || n.1 < -1 || n.1 > l + 1 || seen[key(n)] {
                continue;
            }
            if let Some(w) = dual_step(grid, d, dj, di) {
                seen[key(n)] = true;
                prev[key(n)] = Some((key(d), w));
                queue.push_back(n);
            }
        }
    }
    None
}

/// Independent check of a contour: every listed site is closed, and no
/// bottom-top path of the full lattice avoids all of them.
pub fn verify_contour(grid: &RenormSiteGrid, c: &Contour) -> bool {
    if c.closed.iter().any(|&(j, i)| grid.is_open(j, i) || !grid.is_site(j as i64, i as i64)) {
        return false;
    }
    let blocked: HashSet<(usize, usize)> = c.closed.iter().copied().collect();
    !grid.reaches_top(|j, i| !blocked.contains(&(j, i)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourAudit {
    pub m: usize,
    pub count: u64,
    pub bound: u64,
    pub required_sites: usize,
    pub min_extracted: usize,
    pub extraction_ok: bool,
}

impl ContourAudit {
    pub fn ok(&self) -> bool {
        self.count <= self.bound && self.extraction_ok
    }
}

/// Greedy choice of sites at pairwise `L_inf` distance greater than 2.
pub fn extract_independent(sites: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut out: Vec<(i64, i64)> = Vec::new();
    for &s in sites {
        if out.iter().all(|o| (o.0 - s.0).abs().max((o.1 - s.1).abs()) > 2) {
            out.push(s);
        }
    }
    out
}

pub const CONTOUR_AUDIT_MAX: usize = 12;

/// Enumerate all self-avoiding dual walks of length `m` from a fixed dual point.
pub fn contour_count_audit(m: usize) -> Result<ContourAudit> {
    if m > CONTOUR_AUDIT_MAX {
        return Err(Error::ContourTooLong(m));
    }
    let required = m.div_ceil(20);
    let mut audit = ContourAudit {
        m,
        count: 0,
        bound: 4u64.pow(m as u32),
        required_sites: required,
        min_extracted: usize::MAX,
        extraction_ok: true,
    };
    let mut path = vec![(0i64, 1i64)];
    let mut sites = Vec::new();
    walk(&mut path, &mut sites, m, &mut audit);
    if audit.count == 0 {
        audit.min_extracted = 0;
    }
    Ok(audit)
}

fn walk(path: &mut Vec<(i64, i64)>, sites: &mut Vec<(i64, i64)>, m: usize, audit: &mut ContourAudit) {
    if path.len() == m + 1 {
        audit.count += 1;
        let got = extract_independent(sites).len();
        audit.min_extracted = audit.min_extracted.min(got);
        if got < audit.required_sites {
            audit.extraction_ok = false;
        }
        return;
    }
    let d = *path.last().unwrap();
    for &(dj, di) in &DUAL_STEPS {
        let n = (d.0 + dj, d.1 + di);
        if path.contains(&n) {
            continue;
        }
        let (right, _, _) = crossed_edge(d, dj, di);
        path.push(n);
        sites.push(right);
        walk(path, sites, m, audit);
        sites.pop();
        path.pop();
    }
}
