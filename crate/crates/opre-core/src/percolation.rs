//! Bond-site configurations on finite windows of the oriented lattice, their
//! reachability sweeps and rectangle crossings.
//!
//! Columns are indexed by `c = 0..=x_max`. In the plain variant column `c` sits
//! at position `x = c`; in the embedded variant it sits at the renewal point
//! `X_c`. A vertex `(t, c)` exists iff `t + c + parity` is even. The up-edge
//! `(t, c) -> (t + 1, c + 1)` and the down-edge `(t, c) -> (t + 1, c - 1)` both
//! cross the bond they jump over, so they use `nu_{c,c+1}` and `nu_{c-1,c}`.
//! Down-edges leaving column 0 do not exist.

use serde::{Deserialize, Serialize};

use crate::environment::{RenewalEmbedding, StretchEnvironment, StretchSpec};
use crate::error::{Error, Result};
use crate::kernels::{eval_kernel, ConnectionFamily};
use crate::rng::{bernoulli_word, hashed_bits, hashed_uniform, Seed, SplitMix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    Embedded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeWindow {
    pub t_max: u32,
    pub x_max: u32,
    pub variant: Variant,
    pub parity: u8,
}

const EVEN_BITS: u64 = 0x5555_5555_5555_5555;

impl LatticeWindow {
    pub fn new(t_max: u32, x_max: u32, variant: Variant, parity: u8) -> Result<Self> {
        if t_max == 0 || x_max == 0 {
            return Err(Error::param("window", "extents must be at least 1"));
        }
        if x_max >= u32::MAX / 2 {
            return Err(Error::param("x_max", "too large"));
        }
        Ok(LatticeWindow {
            t_max,
            x_max,
            variant,
            parity: parity & 1,
        })
    }

    pub fn plain(t_max: u32, x_max: u32) -> Result<Self> {
        Self::new(t_max, x_max, Variant::Plain, 0)
    }

    pub fn columns(&self) -> usize {
        self.x_max as usize + 1
    }

    pub fn words(&self) -> usize {
        self.columns().div_ceil(64)
    }

    #[inline]
    pub fn is_valid(&self, t: u32, c: u32) -> bool {
        t <= self.t_max && c <= self.x_max && (t + c + self.parity as u32).is_multiple_of(2)
    }

    /// Valid columns of layer `t`, masked to the window, for word `w`.
    #[inline]
    fn valid_word(&self, t: u32, w: usize) -> u64 {
        let pattern = if (t + self.parity as u32).is_multiple_of(2) {
            EVEN_BITS
        } else {
            EVEN_BITS << 1
        };
        pattern & self.column_word(w)
    }

    #[inline]
    fn column_word(&self, w: usize) -> u64 {
        range_word(0, self.x_max as usize, w)
    }

    pub fn valid_count(&self) -> usize {
        (0..=self.t_max)
            .map(|t| (0..=self.x_max).filter(|&c| self.is_valid(t, c)).count())
            .sum()
    }
}

/// Bits `lo..=hi` restricted to word `w`.
#[inline]
fn range_word(lo: usize, hi: usize, w: usize) -> u64 {
    let base = w * 64;
    if hi < base || lo >= base + 64 {
        return 0;
    }
    let a = lo.saturating_sub(base);
    let b = (hi - base).min(63);
    let upper = if b == 63 { u64::MAX } else { (1u64 << (b + 1)) - 1 };
    upper & !((1u64 << a) - 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub label: String,
    pub seed: u64,
}

/// Open/closed states of every vertex and edge of a window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenConfiguration {
    pub window: LatticeWindow,
    wpl: usize,
    vertex: Vec<u64>,
    up: Vec<u64>,
    down: Vec<u64>,
    pub provenance: Provenance,
}

#[inline]
fn get_bit(words: &[u64], idx: usize) -> bool {
    words[idx / 64] >> (idx % 64) & 1 == 1
}

#[inline]
fn put_bit(words: &mut [u64], idx: usize, on: bool) {
    let m = 1u64 << (idx % 64);
    if on {
        words[idx / 64] |= m;
    } else {
        words[idx / 64] &= !m;
    }
}

impl OpenConfiguration {
    /// Everything closed.
    pub fn empty(window: LatticeWindow) -> Self {
        let wpl = window.words();
        let layers = window.t_max as usize;
        OpenConfiguration {
            window,
            wpl,
            vertex: vec![0; (layers + 1) * wpl],
            up: vec![0; layers * wpl],
            down: vec![0; layers * wpl],
            provenance: Provenance::default(),
        }
    }

    /// Build from indicator functions; invalid positions are ignored.
    pub fn from_fn(
        window: LatticeWindow,
        vertex: impl Fn(u32, u32) -> bool,
        up: impl Fn(u32, u32) -> bool,
        down: impl Fn(u32, u32) -> bool,
    ) -> Self {
        let mut cfg = Self::empty(window);
        for t in 0..=window.t_max {
            for c in 0..=window.x_max {
                if !window.is_valid(t, c) {
                    continue;
                }
                cfg.set_vertex(t, c, vertex(t, c));
                if t < window.t_max {
                    if c < window.x_max {
                        cfg.set_up(t, c, up(t, c));
                    }
                    if c > 0 {
                        cfg.set_down(t, c, down(t, c));
                    }
                }
            }
        }
        cfg
    }

    pub fn all_open(window: LatticeWindow) -> Self {
        Self::from_fn(window, |_, _| true, |_, _| true, |_, _| true)
    }

    pub fn words_per_layer(&self) -> usize {
        self.wpl
    }

    #[inline]
    fn idx(&self, t: u32, c: u32) -> usize {
        t as usize * self.wpl * 64 + c as usize
    }

    pub fn vertex_open(&self, t: u32, c: u32) -> bool {
        self.window.is_valid(t, c) && get_bit(&self.vertex, self.idx(t, c))
    }

    pub fn up_open(&self, t: u32, c: u32) -> bool {
        t < self.window.t_max && c < self.window.x_max && self.window.is_valid(t, c) && get_bit(&self.up, self.idx(t, c))
    }

    pub fn down_open(&self, t: u32, c: u32) -> bool {
        t < self.window.t_max && c > 0 && self.window.is_valid(t, c) && get_bit(&self.down, self.idx(t, c))
    }

    pub fn set_vertex(&mut self, t: u32, c: u32, on: bool) {
        if self.window.is_valid(t, c) {
            let i = self.idx(t, c);
            put_bit(&mut self.vertex, i, on);
        }
    }

    pub fn set_up(&mut self, t: u32, c: u32, on: bool) {
        if t < self.window.t_max && c < self.window.x_max && self.window.is_valid(t, c) {
            let i = self.idx(t, c);
            put_bit(&mut self.up, i, on);
        }
    }

    pub fn set_down(&mut self, t: u32, c: u32, on: bool) {
        if t < self.window.t_max && c > 0 && self.window.is_valid(t, c) {
            let i = self.idx(t, c);
            put_bit(&mut self.down, i, on);
        }
    }

    fn layer(words: &[u64], wpl: usize, t: u32) -> &[u64] {
        &words[t as usize * wpl..(t as usize + 1) * wpl]
    }

    pub fn vertex_layer(&self, t: u32) -> &[u64] {
        Self::layer(&self.vertex, self.wpl, t)
    }

    pub fn up_layer(&self, t: u32) -> &[u64] {
        Self::layer(&self.up, self.wpl, t)
    }

    pub fn down_layer(&self, t: u32) -> &[u64] {
        Self::layer(&self.down, self.wpl, t)
    }

    /// Configuration-wise order: every open bit of `self` is open in `other`.
    pub fn is_subset_of(&self, other: &OpenConfiguration) -> bool {
        self.window == other.window
            && [(&self.vertex, &other.vertex), (&self.up, &other.up), (&self.down, &other.down)]
                .iter()
                .all(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| x & !y == 0))
    }

    pub fn open_vertex_count(&self) -> u64 {
        self.vertex.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn open_edge_count(&self) -> u64 {
        self.up.iter().chain(&self.down).map(|w| w.count_ones() as u64).sum()
    }

    /// `cur` at layer `t` to its successors at layer `t + 1`, restricted to open vertices.
    fn step(&self, cur: &[u64], t: u32, out: &mut [u64]) {
        let up = self.up_layer(t);
        let down = self.down_layer(t);
        let next_v = self.vertex_layer(t + 1);
        step_words(cur, up, down, next_v, out);
    }
}

#[inline]
fn step_words(cur: &[u64], up: &[u64], down: &[u64], next_v: &[u64], out: &mut [u64]) {
    let n = cur.len();
    let mut carry_up = 0u64;
    for w in 0..n {
        let u = cur[w] & up[w];
        let d_here = cur[w] & down[w];
        let d_next = if w + 1 < n { cur[w + 1] & down[w + 1] } else { 0 };
        let shifted_up = (u << 1) | carry_up;
        carry_up = u >> 63;
        let shifted_down = (d_here >> 1) | (d_next << 63);
        out[w] = (shifted_up | shifted_down) & next_v[w];
    }
}

/// Where stretches come from.
#[derive(Debug, Clone, Copy)]
pub enum Ground<'a> {
    Plain(&'a StretchEnvironment),
    /// Integerised stretches on the renewal points.
    Embedded(&'a RenewalEmbedding),
}

impl Ground<'_> {
    pub fn columns(&self) -> usize {
        match self {
            Ground::Plain(e) => e.width(),
            Ground::Embedded(e) => e.len(),
        }
    }

    fn xi(&self, c: usize) -> f64 {
        match self {
            Ground::Plain(e) => e.xi[c],
            Ground::Embedded(e) => e.xi_at[c] as f64,
        }
    }

    fn nu(&self, c: usize) -> f64 {
        match self {
            Ground::Plain(e) => e.nu[c],
            Ground::Embedded(e) => e.nu_gap[c] as f64,
        }
    }

    fn variant(&self) -> (Variant, u8) {
        match self {
            Ground::Plain(_) => (Variant::Plain, 0),
            Ground::Embedded(e) => (Variant::Embedded, e.parity),
        }
    }
}

const SLOT_VERTEX: u64 = 0;
const SLOT_UP: u64 = 1;
const SLOT_DOWN: u64 = 2;

/// Sample a bond-site configuration.
///
/// Each object compares its own hashed uniform with its open probability, so
/// two calls with the same seed and pointwise larger probabilities produce
/// nested configurations.
pub fn sample_opre(
    ground: Ground<'_>,
    fam_v: &ConnectionFamily,
    fam_e: &ConnectionFamily,
    t_max: u32,
    x_max: u32,
    seed: Seed,
) -> Result<OpenConfiguration> {
    fam_v.validate()?;
    fam_e.validate()?;
    let (variant, parity) = ground.variant();
    let window = LatticeWindow::new(t_max, x_max, variant, parity)?;
    if window.columns() > ground.columns() {
        return Err(Error::WindowExceedsEnvironment {
            need: window.columns(),
            have: ground.columns(),
        });
    }
    let pv: Vec<f64> = (0..window.columns())
        .map(|c| eval_kernel(fam_v, ground.xi(c)))
        .collect::<Result<_>>()?;
    let pe: Vec<f64> = (0..x_max as usize)
        .map(|c| eval_kernel(fam_e, ground.nu(c)))
        .collect::<Result<_>>()?;
    let key = seed.child("opre").0;
    let mut cfg = OpenConfiguration::empty(window);
    for t in 0..=t_max {
        let first = (t + parity as u32) % 2;
        for c in (first..=x_max).step_by(2) {
            let (tt, cc) = (t as u64, c as u64);
            if hashed_uniform(key, tt, cc, SLOT_VERTEX) < pv[c as usize] {
                cfg.set_vertex(t, c, true);
            }
            if t == t_max {
                continue;
            }
            if c < x_max && hashed_uniform(key, tt, cc, SLOT_UP) < pe[c as usize] {
                cfg.set_up(t, c, true);
            }
            if c > 0 && hashed_uniform(key, tt, cc, SLOT_DOWN) < pe[c as usize - 1] {
                cfg.set_down(t, c, true);
            }
        }
    }
    cfg.provenance = Provenance {
        label: format!("{variant:?}|{}|{}", fam_v.label(), fam_e.label()),
        seed: seed.0,
    };
    Ok(cfg)
}

/// `p^nu`, with `nu = inf` closing everything.
#[inline]
fn temporal_prob(p: f64, nu: f64) -> f64 {
    if nu == 0.0 {
        1.0
    } else if nu.is_infinite() {
        0.0
    } else {
        p.powf(nu)
    }
}

#[inline]
fn temporal_word(key: u64, t: u32, w: usize, dir: u64, q: f64) -> u64 {
    let mut st = SplitMix(hashed_bits(key, t as u64, w as u64, dir));
    bernoulli_word(&mut st, q)
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::param("p", format!("must lie in (0, 1), got {p}")))
    }
}

/// Layer stretches for the temporal model, drawn from the `nu` law of `spec`.
pub fn sample_temporal_stretches(spec: &StretchSpec, layers: usize, seed: Seed) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = seed.child("temporal/nu").rng();
    Ok((0..layers).map(|_| spec.nu.sample(&mut rng)).collect())
}

pub fn sample_temporal(p: f64, spec: &StretchSpec, t_max: u32, x_max: u32, seed: Seed) -> Result<OpenConfiguration> {
    let nus = sample_temporal_stretches(spec, t_max as usize, seed)?;
    sample_temporal_with(p, &nus, t_max, x_max, seed)
}

/// Temporal model with given layer stretches: all vertices open, every edge
/// leaving layer `t` open with probability `p^{nu_t}`.
pub fn sample_temporal_with(p: f64, nus: &[f64], t_max: u32, x_max: u32, seed: Seed) -> Result<OpenConfiguration> {
    check_p(p)?;
    if nus.len() < t_max as usize {
        return Err(Error::param("nus", "need one stretch per edge layer"));
    }
    if let Some(&v) = nus.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::NegativeArgument(v));
    }
    let window = LatticeWindow::plain(t_max, x_max)?;
    let mut cfg = OpenConfiguration::empty(window);
    let wpl = cfg.wpl;
    let key = seed.child("temporal").0;
    let up_edges = |w: usize| range_word(0, x_max as usize - 1, w);
    let down_edges = |w: usize| range_word(1, x_max as usize, w);
    for t in 0..=t_max {
        for w in 0..wpl {
            let valid = window.valid_word(t, w);
            cfg.vertex[t as usize * wpl + w] = valid;
            if t < t_max {
                let q = temporal_prob(p, nus[t as usize]);
                cfg.up[t as usize * wpl + w] = temporal_word(key, t, w, 0, q) & valid & up_edges(w);
                cfg.down[t as usize * wpl + w] = temporal_word(key, t, w, 1, q) & valid & down_edges(w);
            }
        }
    }
    cfg.provenance = Provenance {
        label: format!("temporal|p={p}"),
        seed: seed.0,
    };
    Ok(cfg)
}

/// Survival depth of the origin in the temporal model without materialising
/// the window; agrees bit for bit with [`sample_temporal_with`] followed by
/// [`survival_depth`] from `(0, 0)`.
pub fn temporal_survival_depth(p: f64, nus: &[f64], t_max: u32, x_max: u32, seed: Seed) -> Result<u32> {
    check_p(p)?;
    if nus.len() < t_max as usize {
        return Err(Error::param("nus", "need one stretch per edge layer"));
    }
    let window = LatticeWindow::plain(t_max, x_max)?;
    let wpl = window.words();
    let key = seed.child("temporal").0;
    let mut cur = vec![0u64; wpl];
    let mut next = vec![0u64; wpl];
    cur[0] = 1;
    let (mut lo, mut hi) = (0usize, 0usize);
    for t in 0..t_max {
        let q = temporal_prob(p, nus[t as usize]);
        let top = (hi + 1).min(wpl - 1);
        let bottom = lo.saturating_sub(1);
        let mut carry = 0u64;
        let mut any = false;
        let (mut nlo, mut nhi) = (usize::MAX, 0usize);
        for w in bottom..=top {
            // Edge words for w and w + 1 are only drawn where `cur` is nonzero.
            let c = cur[w];
            let u = if c != 0 {
                c & temporal_word(key, t, w, 0, q) & range_word(0, x_max as usize - 1, w)
            } else {
                0
            };
            let d_next = if w + 1 < wpl && cur[w + 1] != 0 {
                cur[w + 1] & temporal_word(key, t, w + 1, 1, q) & range_word(1, x_max as usize, w + 1)
            } else {
                0
            };
            let d_here = if c != 0 {
                c & temporal_word(key, t, w, 1, q) & range_word(1, x_max as usize, w)
            } else {
                0
            };
            let out = ((u << 1) | carry | (d_here >> 1) | (d_next << 63)) & window.valid_word(t + 1, w);
            carry = u >> 63;
            next[w] = out;
            if out != 0 {
                any = true;
                nlo = nlo.min(w);
                nhi = nhi.max(w);
            }
        }
        for w in bottom..=top {
            cur[w] = next[w];
            next[w] = 0;
        }
        if !any {
            return Ok(t);
        }
        lo = nlo;
        hi = nhi;
    }
    Ok(t_max)
}

/// Vertices reached from a set of sources, layer by layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachSet {
    pub t_start: u32,
    wpl: usize,
    layers: Vec<Vec<u64>>,
}

impl ReachSet {
    pub fn t_end(&self) -> u32 {
        self.t_start + self.layers.len() as u32 - 1
    }

    pub fn contains(&self, t: u32, c: u32) -> bool {
        if t < self.t_start || t > self.t_end() || c as usize >= self.wpl * 64 {
            return false;
        }
        get_bit(&self.layers[(t - self.t_start) as usize], c as usize)
    }

    pub fn layer_nonempty(&self, t: u32) -> bool {
        t >= self.t_start && t <= self.t_end() && self.layers[(t - self.t_start) as usize].iter().any(|&w| w != 0)
    }

    pub fn columns(&self, t: u32) -> Vec<u32> {
        if t < self.t_start || t > self.t_end() {
            return Vec::new();
        }
        bits_of(&self.layers[(t - self.t_start) as usize])
    }

    pub fn deepest(&self) -> Option<u32> {
        (self.t_start..=self.t_end()).rev().find(|&t| self.layer_nonempty(t))
    }
}

fn bits_of(words: &[u64]) -> Vec<u32> {
    let mut out = Vec::new();
    for (w, &x) in words.iter().enumerate() {
        let mut x = x;
        while x != 0 {
            let b = x.trailing_zeros();
            out.push(w as u32 * 64 + b);
            x &= x - 1;
        }
    }
    out
}

/// Forward sweep from `sources` for `depth` layers (clipped to the window).
/// A source joins the sweep at its own layer; closed or invalid sources are ignored.
pub fn reach(cfg: &OpenConfiguration, sources: &[(u32, u32)], depth: u32) -> ReachSet {
    let wpl = cfg.wpl;
    let t_start = sources.iter().map(|s| s.0).min().unwrap_or(0).min(cfg.window.t_max);
    let t_end = t_start.saturating_add(depth).min(cfg.window.t_max);
    let mut layers = Vec::with_capacity((t_end - t_start + 1) as usize);
    let mut cur = vec![0u64; wpl];
    for t in t_start..=t_end {
        for &(st, sc) in sources {
            if st == t && cfg.vertex_open(st, sc) {
                cur[sc as usize / 64] |= 1u64 << (sc % 64);
            }
        }
        layers.push(cur.clone());
        if t < t_end {
            let mut next = vec![0u64; wpl];
            cfg.step(&cur, t, &mut next);
            cur = next;
        }
    }
    ReachSet { t_start, wpl, layers }
}

/// Deepest layer reached from `source`, `None` if the source is closed.
pub fn survival_depth(cfg: &OpenConfiguration, source: (u32, u32)) -> Option<u32> {
    if !cfg.vertex_open(source.0, source.1) {
        return None;
    }
    let mut cur = vec![0u64; cfg.wpl];
    let mut next = vec![0u64; cfg.wpl];
    cur[source.1 as usize / 64] = 1u64 << (source.1 % 64);
    for t in source.0..cfg.window.t_max {
        cfg.step(&cur, t, &mut next);
        if next.iter().all(|&w| w == 0) {
            return Some(t);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Some(cfg.window.t_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rectangle {
    pub t0: u32,
    pub t1: u32,
    pub a: i64,
    pub b: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducedRectangle {
    pub t0: u32,
    pub t1: u32,
    pub a0: i64,
    pub b0: i64,
    /// Column indices of `a0` and `b0`.
    pub ia: usize,
    pub ib: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CrossingKind {
    Lrc,
    Rlc,
    Btc,
}

impl CrossingKind {
    pub const ALL: [CrossingKind; 3] = [CrossingKind::Lrc, CrossingKind::Rlc, CrossingKind::Btc];
}

/// Shrink `rect` to its renewal columns, dropping the right-most one.
pub fn reduce_rectangle(emb: &RenewalEmbedding, rect: &Rectangle) -> Result<ReducedRectangle> {
    if rect.t0 >= rect.t1 || rect.a >= rect.b {
        return Err(Error::param("rectangle", "need t0 < t1 and a < b"));
    }
    let r = emb.index_range(rect.a, rect.b);
    if r.len() < 2 {
        return Err(Error::InsufficientColumns { a: rect.a, b: rect.b });
    }
    let (ia, ib) = (r.start, r.end - 2);
    Ok(ReducedRectangle {
        t0: rect.t0,
        t1: rect.t1,
        a0: emb.points[ia],
        b0: emb.points[ib],
        ia,
        ib,
    })
}

/// Crossing event inside the reduced rectangle; columns of `cfg` are the
/// points of `emb`.
pub fn crossing(cfg: &OpenConfiguration, emb: &RenewalEmbedding, rect: &Rectangle, kind: CrossingKind) -> Result<bool> {
    let r = reduce_rectangle(emb, rect)?;
    crossing_reduced(cfg, &r, kind)
}

pub fn crossing_reduced(cfg: &OpenConfiguration, r: &ReducedRectangle, kind: CrossingKind) -> Result<bool> {
    if r.ib > cfg.window.x_max as usize || r.t1 > cfg.window.t_max {
        return Err(Error::WindowExceedsEnvironment {
            need: r.ib.max(r.t1 as usize) + 1,
            have: cfg.window.columns().min(cfg.window.t_max as usize + 1),
        });
    }
    let wpl = cfg.wpl;
    let mask: Vec<u64> = (0..wpl).map(|w| range_word(r.ia, r.ib, w)).collect();
    let mut cur = vec![0u64; wpl];
    let mut next = vec![0u64; wpl];
    let (src, dst) = match kind {
        CrossingKind::Lrc => (Some(r.ia), Some(r.ib)),
        CrossingKind::Rlc => (Some(r.ib), Some(r.ia)),
        CrossingKind::Btc => (None, None),
    };
    if src.is_none() {
        for (w, m) in mask.iter().enumerate() {
            cur[w] = cfg.vertex_layer(r.t0)[w] & m;
        }
    }
    for t in r.t0..=r.t1 {
        if let Some(s) = src {
            if cfg.vertex_open(t, s as u32) {
                cur[s / 64] |= 1u64 << (s % 64);
            }
        }
        if let Some(d) = dst {
            if get_bit(&cur, d) {
                return Ok(true);
            }
        }
        if t == r.t1 {
            break;
        }
        cfg.step(&cur, t, &mut next);
        let mut any = false;
        for w in 0..wpl {
            cur[w] = next[w] & mask[w];
            any |= cur[w] != 0;
        }
        if !any && src.is_none() {
            return Ok(false);
        }
    }
    Ok(src.is_none() && cur.iter().any(|&w| w != 0))
}

const MAGIC: &[u8; 4] = b"OPRE";
const DUMP_VERSION: u16 = 1;

impl OpenConfiguration {
    /// Portable little-endian dump:
    ///
    /// ```text
    /// magic "OPRE" | version u16 | variant u8 | parity u8 | t_max u32 | x_max u32 | seed u64
    /// vertex words ((t_max + 1) * wpl) | up words (t_max * wpl) | down words (t_max * wpl)
    /// ```
    /// with `wpl = ceil((x_max + 1) / 64)` and bit `c` of word `c / 64` per layer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * (self.vertex.len() + 2 * self.up.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
        out.push(match self.window.variant {
            Variant::Plain => 0,
            Variant::Embedded => 1,
        });
        out.push(self.window.parity);
        out.extend_from_slice(&self.window.t_max.to_le_bytes());
        out.extend_from_slice(&self.window.x_max.to_le_bytes());
        out.extend_from_slice(&self.provenance.seed.to_le_bytes());
        for w in self.vertex.iter().chain(&self.up).chain(&self.down) {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Dump(m.to_string());
        if bytes.len() < 24 || &bytes[..4] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != DUMP_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let variant = match bytes[6] {
            0 => Variant::Plain,
            1 => Variant::Embedded,
            v => return Err(bad(&format!("unknown variant {v}"))),
        };
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let window = LatticeWindow::new(u32_at(8), u32_at(12), variant, bytes[7])
            .map_err(|e| bad(&e.to_string()))?;
        let seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let mut cfg = OpenConfiguration::empty(window);
        let total = cfg.vertex.len() + cfg.up.len() + cfg.down.len();
        if bytes.len() != 24 + 8 * total {
            return Err(bad("payload length does not match extents"));
        }
        let mut words = bytes[24..].chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap()));
        for slot in cfg.vertex.iter_mut().chain(cfg.up.iter_mut()).chain(cfg.down.iter_mut()) {
            *slot = words.next().unwrap();
        }
        cfg.provenance.seed = seed;
        cfg.provenance.label = "dump".into();
        let wpl = cfg.wpl;
        for t in 0..=window.t_max {
            for w in 0..wpl {
                let valid = window.valid_word(t, w);
                let i = t as usize * wpl + w;
                let mut stray = cfg.vertex[i] & !valid;
                if t < window.t_max {
                    stray |= cfg.up[i] & !(valid & range_word(0, window.x_max as usize - 1, w));
                    stray |= cfg.down[i] & !(valid & range_word(1, window.x_max as usize, w));
                }
                if stray != 0 {
                    return Err(bad("bits set at invalid positions"));
                }
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{Distribution, StretchEnvironment};
    use crate::kernels::KernelKind;
    use crate::stats::within_sigma;

    fn env_const(width: usize, xi: f64, nu: f64) -> StretchEnvironment {
        StretchEnvironment::new(vec![xi; width], vec![nu; width - 1]).unwrap()
    }

    #[test]
    fn range_words() {
        assert_eq!(range_word(0, 63, 0), u64::MAX);
        assert_eq!(range_word(3, 5, 0), 0b111000);
        assert_eq!(range_word(60, 70, 1), 0b111_1111);
        assert_eq!(range_word(60, 70, 2), 0);
    }

    #[test]
    fn constant_one_opens_every_valid_bit() {
        let env = env_const(130, 2.0, 3.0);
        let one = ConnectionFamily::constant(1.0);
        let cfg = sample_opre(Ground::Plain(&env), &one, &one, 7, 129, Seed(1)).unwrap();
        assert_eq!(cfg, {
            let mut all = OpenConfiguration::all_open(cfg.window);
            all.provenance = cfg.provenance.clone();
            all
        });
        assert_eq!(cfg.open_vertex_count() as usize, cfg.window.valid_count());
    }

    #[test]
    fn half_open_frequency() {
        let env = env_const(2000, 0.0, 0.0);
        let half = ConnectionFamily::constant(0.5);
        let cfg = sample_opre(Ground::Plain(&env), &half, &half, 999, 1999, Seed(4)).unwrap();
        let n = cfg.window.valid_count() as u64;
        assert!(n >= 1_000_000);
        assert!(within_sigma(cfg.open_vertex_count(), n, 0.5, 3.0));
    }

    #[test]
    fn power_kernel_frequency() {
        let env = env_const(1500, 1.0, 1.0);
        let fam = ConnectionFamily::new(KernelKind::Power, 2f64.ln());
        let one = ConnectionFamily::constant(1.0);
        let cfg = sample_opre(Ground::Plain(&env), &fam, &one, 199, 1499, Seed(8)).unwrap();
        let n = cfg.window.valid_count() as u64;
        assert!(within_sigma(cfg.open_vertex_count(), n, 0.5, 3.0));
    }

    #[test]
    fn window_must_fit() {
        let env = env_const(5, 0.0, 0.0);
        let one = ConnectionFamily::constant(1.0);
        assert!(matches!(
            sample_opre(Ground::Plain(&env), &one, &one, 3, 5, Seed(0)),
            Err(Error::WindowExceedsEnvironment { need: 6, have: 5 })
        ));
    }

    #[test]
    fn reach_fan_out_at_boundary() {
        let w = LatticeWindow::plain(4, 6).unwrap();
        let cfg = OpenConfiguration::all_open(w);
        let r = reach(&cfg, &[(0, 0)], 2);
        assert_eq!(r.columns(1), vec![1]);
        assert_eq!(r.columns(2), vec![0, 2]);
        assert_eq!(survival_depth(&cfg, (0, 0)), Some(4));
        let closed = OpenConfiguration::empty(w);
        assert!(!reach(&closed, &[(0, 0)], 3).layer_nonempty(0));
        assert_eq!(survival_depth(&closed, (0, 0)), None);
    }

    #[test]
    fn layer_zero_cut() {
        let w = LatticeWindow::plain(5, 8).unwrap();
        let cfg = OpenConfiguration::from_fn(w, |_, _| true, |t, _| t > 0, |t, _| t > 0);
        assert_eq!(survival_depth(&cfg, (0, 0)), Some(0));
    }

    #[test]
    fn reduce_examples() {
        let emb = RenewalEmbedding::from_points(vec![2, 5, 7, 11], 0).unwrap();
        let r = reduce_rectangle(&emb, &Rectangle { t0: 0, t1: 4, a: 0, b: 12 }).unwrap();
        assert_eq!((r.a0, r.b0), (2, 7));
        let emb = RenewalEmbedding::from_points(vec![0, 2], 0).unwrap();
        let r = reduce_rectangle(&emb, &Rectangle { t0: 0, t1: 4, a: 0, b: 3 }).unwrap();
        assert_eq!((r.a0, r.b0), (0, 0));
        let emb = RenewalEmbedding::from_points(vec![4], 0).unwrap();
        assert!(matches!(
            reduce_rectangle(&emb, &Rectangle { t0: 0, t1: 4, a: 0, b: 5 }),
            Err(Error::InsufficientColumns { .. })
        ));
    }

    #[test]
    fn crossing_extremes() {
        let w = LatticeWindow::plain(10, 6).unwrap();
        let emb = RenewalEmbedding::identity(7);
        let rect = Rectangle { t0: 0, t1: 10, a: 0, b: 6 };
        let open = OpenConfiguration::all_open(w);
        let closed = OpenConfiguration::empty(w);
        for k in CrossingKind::ALL {
            assert!(crossing(&open, &emb, &rect, k).unwrap(), "{k:?}");
            assert!(!crossing(&closed, &emb, &rect, k).unwrap(), "{k:?}");
        }
    }

    #[test]
    fn temporal_extremes() {
        let cfg = sample_temporal_with(0.5, &[0.0; 6], 6, 10, Seed(2)).unwrap();
        assert_eq!(cfg.open_edge_count(), OpenConfiguration::all_open(cfg.window).open_edge_count());
        let mut nus = vec![0.0; 6];
        nus[0] = f64::INFINITY;
        let cfg = sample_temporal_with(0.5, &nus, 6, 10, Seed(2)).unwrap();
        assert!(cfg.up_layer(0).iter().chain(cfg.down_layer(0)).all(|&w| w == 0));
        assert_eq!(survival_depth(&cfg, (0, 0)), Some(0));
    }

    #[test]
    fn temporal_edge_frequency() {
        let cfg = sample_temporal_with(0.5, &vec![1.0; 500], 500, 2047, Seed(3)).unwrap();
        let n = OpenConfiguration::all_open(cfg.window).open_edge_count();
        assert!(n >= 1_000_000);
        assert!(within_sigma(cfg.open_edge_count(), n, 0.5, 3.0));
    }

    #[test]
    fn streaming_matches_materialised() {
        let spec = StretchSpec::new(
            Distribution::Constant { value: 0.0 },
            Distribution::StretchedExp { a: 0.5 },
        );
        for s in 0..40u64 {
            let seed = Seed(s);
            let (t_max, x_max) = (150, if s % 2 == 0 { 150 } else { 70 });
            let nus = sample_temporal_stretches(&spec, t_max as usize, seed).unwrap();
            let p = 0.6 + 0.01 * s as f64 % 0.35;
            let cfg = sample_temporal_with(p, &nus, t_max, x_max, seed).unwrap();
            let a = survival_depth(&cfg, (0, 0)).unwrap();
            let b = temporal_survival_depth(p, &nus, t_max, x_max, seed).unwrap();
            assert_eq!(a, b, "seed {s}");
        }
    }

    #[test]
    fn dump_round_trip() {
        let env = env_const(90, 0.5, 0.5);
        let fam = ConnectionFamily::new(KernelKind::CpprUniform, 1.0);
        let cfg = sample_opre(Ground::Plain(&env), &fam, &fam, 33, 89, Seed(12)).unwrap();
        let bytes = cfg.to_bytes();
        let back = OpenConfiguration::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(OpenConfiguration::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut corrupt = bytes.clone();
        corrupt[24] |= 0b10;
        assert!(OpenConfiguration::from_bytes(&corrupt).is_err());
    }
}
