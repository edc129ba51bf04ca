//! Couplings from contact processes to oriented percolation. Each coupling is
//! stored as an explicit geometry map: every lattice vertex owns a contact
//! site and a recovery-free time region, every lattice edge owns a chain of
//! contact sites and the time windows in which the chain must fire. Open
//! configurations are derived from contact realisations through the map, and
//! open paths replay through it to infection paths.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contact::{
    realize_periodic, sample_closed_set, ClosedSetSpec, ContactInstance, Contacts, Graph, InfectionPath, LazyPpp,
    PointSetWindow,
};
use crate::environment::{Distribution, StretchEnvironment};
use crate::error::{Error, Result};
use crate::kernels::{eval_kernel, poisson_tail, ConnectionFamily, KernelKind};
use crate::percolation::{reach, LatticeWindow, OpenConfiguration};
use crate::rng::{Seed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
    pub hi_open: bool,
}

impl TimeWindow {
    pub fn open(lo: f64, hi: f64) -> Self {
        TimeWindow { lo, hi, lo_open: true, hi_open: true }
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        TimeWindow { lo, hi, lo_open: false, hi_open: false }
    }

    pub fn half_open(lo: f64, hi: f64) -> Self {
        TimeWindow { lo, hi, lo_open: false, hi_open: true }
    }

    pub fn contains(&self, t: f64) -> bool {
        let above = if self.lo_open { t > self.lo } else { t >= self.lo };
        let below = if self.hi_open { t < self.hi } else { t <= self.hi };
        above && below
    }

    pub fn hits(&self, set: &PointSetWindow) -> bool {
        let p = set.points();
        let i = p.partition_point(|&q| q < self.lo);
        p[i..].iter().take_while(|&&q| q <= self.hi).any(|&q| self.contains(q))
    }

    fn shifted(&self, by: f64) -> Self {
        TimeWindow { lo: self.lo + by, hi: self.hi + by, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexRegion {
    pub site: usize,
    /// Open iff the site's recovery set misses this window.
    pub window: TimeWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTemplate {
    /// Contact sites from the source's site to the target's site.
    pub chain: Vec<usize>,
    /// Open iff, for one of these windows, the chain fires in order inside it
    /// and every guard site is recovery-free on it.
    pub windows: Vec<TimeWindow>,
    pub guards: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryMap {
    pub window: LatticeWindow,
    vertices: Vec<Option<VertexRegion>>,
    up: Vec<Option<EdgeTemplate>>,
    down: Vec<Option<EdgeTemplate>>,
}

impl GeometryMap {
    fn new(window: LatticeWindow) -> Self {
        let n = (window.t_max as usize + 1) * window.columns();
        GeometryMap {
            window,
            vertices: vec![None; n],
            up: vec![None; n],
            down: vec![None; n],
        }
    }

    fn idx(&self, t: u32, c: u32) -> usize {
        t as usize * self.window.columns() + c as usize
    }

    pub fn vertex(&self, t: u32, c: u32) -> Option<&VertexRegion> {
        self.vertices.get(self.idx(t, c))?.as_ref()
    }

    pub fn up(&self, t: u32, c: u32) -> Option<&EdgeTemplate> {
        self.up.get(self.idx(t, c))?.as_ref()
    }

    pub fn down(&self, t: u32, c: u32) -> Option<&EdgeTemplate> {
        self.down.get(self.idx(t, c))?.as_ref()
    }

    fn set(&mut self, t: u32, c: u32, v: VertexRegion, up: Option<EdgeTemplate>, down: Option<EdgeTemplate>) {
        let k = self.idx(t, c);
        self.vertices[k] = Some(v);
        self.up[k] = up;
        self.down[k] = down;
    }

    /// Every edge window moved by `by`; used to check that replay detects a
    /// broken map.
    pub fn corrupt(&self, by: f64) -> GeometryMap {
        let shift = |e: &Option<EdgeTemplate>| {
            e.as_ref().map(|e| EdgeTemplate {
                windows: e.windows.iter().map(|w| w.shifted(by)).collect(),
                ..e.clone()
            })
        };
        GeometryMap {
            window: self.window,
            vertices: self.vertices.clone(),
            up: self.up.iter().map(shift).collect(),
            down: self.down.iter().map(shift).collect(),
        }
    }

    /// The latest time any region or window reaches.
    pub fn time_extent(&self) -> f64 {
        let v = self.vertices.iter().flatten().map(|r| r.window.hi);
        let e = self
            .up
            .iter()
            .chain(&self.down)
            .flatten()
            .flat_map(|e| e.windows.iter().map(|w| w.hi));
        v.chain(e).fold(0.0, f64::max)
    }
}

/// Ordered contact times along the chain inside `w`, starting no earlier than `from`.
fn chain_times(inst: &ContactInstance, chain: &[usize], w: &TimeWindow, from: Option<f64>) -> Option<Vec<f64>> {
    let (mut x, mut strict) = (w.lo, w.lo_open);
    if let Some(f) = from {
        if f > w.lo {
            x = f;
            strict = false;
        }
    }
    let mut out = Vec::with_capacity(chain.len().saturating_sub(1));
    for hop in chain.windows(2) {
        let e = inst.graph.edge_between(hop[0], hop[1])?;
        let t = inst.contacts.first_from(e, x, strict, w.hi)?;
        if !w.contains(t) {
            return None;
        }
        out.push(t);
        x = t;
        strict = false;
    }
    Some(out)
}

fn fire(inst: &ContactInstance, tpl: &EdgeTemplate, from: Option<f64>) -> Option<Vec<f64>> {
    tpl.windows.iter().find_map(|w| {
        if tpl.guards.iter().any(|&g| w.hits(&inst.recoveries[g])) {
            return None;
        }
        chain_times(inst, &tpl.chain, w, from)
    })
}

/// The configuration induced by a contact realisation.
pub fn derive_configuration(map: &GeometryMap, inst: &ContactInstance) -> OpenConfiguration {
    OpenConfiguration::from_fn(
        map.window,
        |t, c| map.vertex(t, c).is_some_and(|r| !r.window.hits(&inst.recoveries[r.site])),
        |t, c| map.up(t, c).is_some_and(|e| fire(inst, e, None).is_some()),
        |t, c| map.down(t, c).is_some_and(|e| fire(inst, e, None).is_some()),
    )
}

/// Translate a lattice path into a candidate infection path.
pub fn replay_path(map: &GeometryMap, inst: &ContactInstance, path: &[(u32, u32)]) -> Option<InfectionPath> {
    let start = map.vertex(path[0].0, path[0].1)?;
    let mut vertices = vec![start.site];
    let mut times = Vec::new();
    let mut cur = inst.t_start;
    for step in path.windows(2) {
        let ((t, c), (_, c2)) = (step[0], step[1]);
        let tpl = if c2 == c + 1 { map.up(t, c)? } else { map.down(t, c)? };
        let ts = fire(inst, tpl, Some(cur))?;
        if tpl.chain[0] == *vertices.last().unwrap() {
            vertices.extend(&tpl.chain[1..]);
        } else {
            vertices.extend(&tpl.chain);
        }
        times.extend(&ts);
        cur = *ts.last().unwrap_or(&cur);
    }
    Some(InfectionPath { vertices, times, t: cur })
}

/// Random open paths from `source`, each ending at a uniformly chosen
/// reachable vertex below the source layer.
pub fn sample_open_paths(cfg: &OpenConfiguration, source: (u32, u32), count: usize, rng: &mut SimRng) -> Vec<Vec<(u32, u32)>> {
    let r = reach(cfg, &[source], cfg.window.t_max);
    let targets: Vec<(u32, u32)> = (source.0 + 1..=r.t_end())
        .flat_map(|t| r.columns(t).into_iter().map(move |c| (t, c)))
        .collect();
    if targets.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let mut v = targets[rng.random_range(0..targets.len())];
            let mut path = vec![v];
            while v != source {
                let (t, c) = v;
                let mut preds = Vec::with_capacity(2);
                if c > 0 && r.contains(t - 1, c - 1) && cfg.up_open(t - 1, c - 1) {
                    preds.push((t - 1, c - 1));
                }
                if r.contains(t - 1, c + 1) && cfg.down_open(t - 1, c + 1) {
                    preds.push((t - 1, c + 1));
                }
                v = preds[rng.random_range(0..preds.len())];
                path.push(v);
            }
            path.reverse();
            path
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    D2Block,
    CpprUni,
    CpprBer,
    Cpre,
}

impl CouplingKind {
    pub const ALL: [CouplingKind; 4] = [CouplingKind::D2Block, CouplingKind::CpprUni, CouplingKind::CpprBer, CouplingKind::Cpre];

    pub fn name(&self) -> &'static str {
        match self {
            CouplingKind::D2Block => "d2_block",
            CouplingKind::CpprUni => "cppr_uni",
            CouplingKind::CpprBer => "cppr_ber",
            CouplingKind::Cpre => "cpre",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CouplingData {
    D2 { t: f64, mu: f64 },
    Uni { lambda: f64, u: Vec<f64>, s: Vec<f64> },
    Ber { lambda: f64, q: f64, runs: Vec<u64>, n: Vec<u64>, k: Vec<u64>, starts: Vec<usize>, c: u8 },
    Cpre { l: u32, good: Vec<usize>, gaps: Vec<u64>, deltas: Vec<f64>, edge_prob: Vec<f64>, kernel_prob: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledInstance {
    pub kind: CouplingKind,
    pub contact: ContactInstance,
    pub map: GeometryMap,
    pub environment: Option<StretchEnvironment>,
    pub vertex_kernel: Option<ConnectionFamily>,
    pub edge_kernel: Option<ConnectionFamily>,
    pub data: CouplingData,
}

impl CoupledInstance {
    pub fn configuration(&self) -> OpenConfiguration {
        derive_configuration(&self.map, &self.contact)
    }
}

fn require_cover(sets: &[PointSetWindow], hi: f64, what: &str) -> Result<()> {
    // Rescaled windows may miss `hi` by a rounding error.
    match sets.iter().find(|s| s.t_lo > 0.0 || s.t_hi < hi * (1.0 - 1e-12)) {
        Some(s) => Err(Error::param(what, format!("window [{}, {}] does not cover [0, {hi}]", s.t_lo, s.t_hi))),
        None => Ok(()),
    }
}

/// Lattice vertex `(j, c)` with `c <= j` sits at quadrant vertex `((j + c)/2, (j - c)/2)`.
/// `y` holds one recovery set per quadrant vertex (scaled by `1/mu` here),
/// `x` one contact set per quadrant edge.
pub fn couple_d2(y: &[PointSetWindow], x: &[PointSetWindow], t: f64, mu: f64, t_max: u32) -> Result<CoupledInstance> {
    if !(t > 0.0 && mu > 0.0) {
        return Err(Error::param("t, mu", "must be positive"));
    }
    let n = t_max as usize + 1;
    let graph = Graph::NeQuadrant { n };
    if y.len() != graph.vertex_count() || x.len() != graph.edge_count() {
        return Err(Error::param(
            "realizations",
            format!("need {} recovery and {} contact sets", graph.vertex_count(), graph.edge_count()),
        ));
    }
    let horizon = (t_max as f64 + 1.0) * t;
    require_cover(x, t_max as f64 * t, "contacts")?;
    let rec: Vec<PointSetWindow> = y.iter().map(|s| s.scaled(mu)).collect();
    require_cover(&rec, horizon, "recoveries")?;
    let window = LatticeWindow::plain(t_max, t_max)?;
    let mut map = GeometryMap::new(window);
    let site = |j: u32, c: u32| Graph::quadrant_id(n, ((j + c) / 2) as usize, ((j - c) / 2) as usize);
    for j in 0..=t_max {
        for c in (0..=j).filter(|c| (j + c) % 2 == 0) {
            let v = VertexRegion {
                site: site(j, c),
                window: TimeWindow::closed((j as f64 - 1.0) * t, (j as f64 + 1.0) * t),
            };
            let w = TimeWindow::closed(j as f64 * t, (j + 1) as f64 * t);
            let up = (j < t_max).then(|| EdgeTemplate { chain: vec![site(j, c), site(j + 1, c + 1)], windows: vec![w], guards: vec![] });
            let down = (j < t_max && c > 0).then(|| EdgeTemplate { chain: vec![site(j, c), site(j + 1, c - 1)], windows: vec![w], guards: vec![] });
            map.set(j, c, v, up, down);
        }
    }
    let contact = ContactInstance::new(graph, Contacts::Explicit { sets: x.to_vec() }, rec, vec![site(0, 0)], horizon)?;
    Ok(CoupledInstance {
        kind: CouplingKind::D2Block,
        contact,
        map,
        environment: None,
        vertex_kernel: None,
        edge_kernel: None,
        data: CouplingData::D2 { t, mu },
    })
}

/// PPP recovery and contact sets for a `couple_d2` instance.
pub fn random_d2_inputs(t_max: u32, t: f64, recovery_rate: f64, contact_rate: f64, mu: f64, seed: Seed) -> Result<(Vec<PointSetWindow>, Vec<PointSetWindow>)> {
    let g = Graph::NeQuadrant { n: t_max as usize + 1 };
    let hi = (t_max as f64 + 1.0) * t;
    let y = (0..g.vertex_count())
        .map(|v| sample_closed_set(&ClosedSetSpec::Ppp { rate: recovery_rate }, 0.0, hi * mu, seed.derive(v as u64, "d2/y")))
        .collect::<Result<_>>()?;
    let x = (0..g.edge_count())
        .map(|e| sample_closed_set(&ClosedSetSpec::Ppp { rate: contact_rate }, 0.0, hi, seed.derive(e as u64, "d2/x")))
        .collect::<Result<_>>()?;
    Ok((y, x))
}

/// `min(|u - v|, 1 - |u - v|)` on `[0, 1)`.
pub fn torus_distance(u: f64, v: f64) -> f64 {
    let d = (u - v).abs();
    d.min(1.0 - d)
}

/// Forward midpoint gaps `g_x = 2((U_{x+1} - U_x) mod 1)` and `S_x = min(g_x, 2 - g_x)`.
fn uniform_gaps(u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Vec::with_capacity(u.len().saturating_sub(1));
    let mut s = Vec::with_capacity(g.capacity());
    for i in 0..u.len() - 1 {
        let gi = 2.0 * (u[i + 1] - u[i]).rem_euclid(1.0);
        let si = 2.0 * torus_distance(u[i], u[i + 1]);
        if si == 0.0 || gi == 0.0 {
            return Err(Error::DegenerateTorusDistance(i));
        }
        g.push(gi);
        s.push(si);
    }
    Ok((g, s))
}

/// CPPR with `Y_x = 2(Z + U_x)`. Shifts are first normalised so that
/// `U_0 = 1/2`. Vertex `(j, i)` is the recovery epoch of site `i` with
/// midpoint `m = D_i + j - i`, `D_i` the sum of forward gaps; an edge between
/// midpoints `m_s < m_t` fires in `(max(m_s, m_t - 1), min(m_t, m_s + 1))`,
/// an interval of length `S`.
pub fn couple_cppr_uniform(u: &[f64], lambda: f64, t_max: u32, seed: Seed) -> Result<CoupledInstance> {
    if u.len() < 2 {
        return Err(Error::InsufficientColumns { a: 0, b: u.len() as i64 - 1 });
    }
    if let Some(&bad) = u.iter().find(|&&x| !(0.0..1.0).contains(&x)) {
        return Err(Error::param("u", format!("values must lie in [0, 1), got {bad}")));
    }
    let edge = ConnectionFamily::new(KernelKind::CpprUniform, lambda);
    edge.validate()?;
    let un: Vec<f64> = u.iter().map(|&x| (x - u[0] + 0.5).rem_euclid(1.0)).collect();
    let (g, s) = uniform_gaps(&un)?;
    let x_max = (u.len() - 1) as u32;
    let mut d = vec![0.0];
    for gi in &g {
        d.push(d.last().unwrap() + gi);
    }
    let window = LatticeWindow::plain(t_max, x_max)?;
    let mut map = GeometryMap::new(window);
    let mid = |j: u32, i: u32| d[i as usize] + j as f64 - i as f64;
    for j in 0..=t_max {
        for i in (0..=x_max).filter(|i| (j + i) % 2 == 0) {
            let ms = mid(j, i);
            let win = |mt: f64| TimeWindow::open(ms.max(mt - 1.0), mt.min(ms + 1.0));
            let up = (j < t_max && i < x_max).then(|| EdgeTemplate {
                chain: vec![i as usize, i as usize + 1],
                windows: vec![win(ms + g[i as usize])],
                guards: vec![],
            });
            let down = (j < t_max && i > 0).then(|| EdgeTemplate {
                chain: vec![i as usize, i as usize - 1],
                windows: vec![win(ms + 2.0 - g[i as usize - 1])],
                guards: vec![],
            });
            let v = VertexRegion { site: i as usize, window: TimeWindow::open(ms - 1.0, ms + 1.0) };
            map.set(j, i, v, up, down);
        }
    }
    let horizon = map.time_extent().max(1.0) + 2.0;
    let rec = un
        .iter()
        .map(|&x| PointSetWindow::new(0.0, horizon, realize_periodic(2.0, 2.0 * x, 0.0, horizon)))
        .collect::<Result<Vec<_>>>()?;
    let contacts = Contacts::Ppp(LazyPpp { rate: lambda, seed: seed.child("uni/contacts").0 });
    let contact = ContactInstance::new(Graph::Line { n: u.len() }, contacts, rec, vec![0], horizon)?;
    let nu: Vec<f64> = s.iter().map(|&x| -x.ln()).collect();
    Ok(CoupledInstance {
        kind: CouplingKind::CpprUni,
        contact,
        map,
        environment: Some(StretchEnvironment::new(vec![0.0; u.len()], nu)?),
        vertex_kernel: Some(ConnectionFamily::constant(1.0)),
        edge_kernel: Some(edge),
        data: CouplingData::Uni { lambda, u: un, s },
    })
}

/// Maximal runs `(value, length)`, the last one possibly cut off by the end of the sequence.
pub fn maximal_runs(b: &[bool]) -> Vec<(bool, u64)> {
    let mut out: Vec<(bool, u64)> = Vec::new();
    for &x in b {
        match out.last_mut() {
            Some((v, n)) if *v == x => *n += 1,
            _ => out.push((x, 1)),
        }
    }
    out
}

/// `N_i` for every complete run: the run together with the site that ends it.
pub fn run_n_values(b: &[bool]) -> Result<Vec<u64>> {
    if b.is_empty() {
        return Err(Error::EmptySequence);
    }
    let runs = maximal_runs(b);
    Ok(runs[..runs.len() - 1].iter().map(|&(_, n)| n + 1).collect())
}

/// Replace run lengths (geometric with stay probability `q` or `1 - q`) by
/// i.i.d. `K` with `P(K >= l + 1) = max(q, 1 - q)^l`, coupled so that `K >= run`.
pub fn dominate_runs(runs: &[(bool, u64)], q: f64, seed: Seed) -> Result<Vec<u64>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::param("q", format!("must lie in (0, 1), got {q}")));
    }
    let m = q.max(1.0 - q);
    let mut rng = seed.rng();
    Ok(runs
        .iter()
        .map(|&(v, r)| {
            let stay = if v { q } else { 1.0 - q };
            // Uniform on the CDF atom of `r`, in survival form: S(r) < w <= S(r - 1).
            let hi = stay.powi(r as i32 - 1);
            let lo = hi * stay;
            let w = lo + (hi - lo) * (1.0 - rng.random::<f64>());
            // Smallest k with m^k < w, i.e. the quantile of K at the same level.
            let mut k = ((w.ln() / m.ln()).floor() as u64 + 1).max(1);
            while k > 1 && m.powi(k as i32 - 1) < w {
                k -= 1;
            }
            while m.powi(k as i32) >= w {
                k += 1;
            }
            k.max(r)
        })
        .collect())
}

/// CPPR with `Y_x = 2Z + B_x`. Lattice column `i` is the first site `X_i` of
/// the `i`-th maximal run; an edge to a neighbouring column fires when the
/// arrows across the run occur in order inside the unit window
/// `(j + c, j + c + 1)`, `c = 1 - B_0`, which is also the start time.
pub fn couple_cppr_bernoulli(b: &[bool], q: f64, lambda: f64, t_max: u32, seed: Seed) -> Result<CoupledInstance> {
    let edge = ConnectionFamily::new(KernelKind::CpprBernoulli, lambda);
    edge.validate()?;
    let runs = maximal_runs(b);
    if runs.len() < 2 {
        return Err(Error::InsufficientColumns { a: 0, b: b.len() as i64 - 1 });
    }
    let complete = &runs[..runs.len() - 1];
    let mut starts = vec![0usize];
    for &(_, r) in complete {
        starts.push(starts.last().unwrap() + r as usize);
    }
    let x_max = complete.len() as u32;
    let c = if b[0] { 0u8 } else { 1u8 };
    let window = LatticeWindow::plain(t_max, x_max)?;
    let mut map = GeometryMap::new(window);
    let span = |a: usize, z: usize| -> Vec<usize> {
        if a <= z {
            (a..=z).collect()
        } else {
            (z..=a).rev().collect()
        }
    };
    for j in 0..=t_max {
        for i in (0..=x_max).filter(|i| (j + i) % 2 == 0) {
            let m = j as f64 + c as f64;
            let xi = starts[i as usize];
            let w = TimeWindow::open(m, m + 1.0);
            let mk = |to: usize| {
                let chain = span(xi, to);
                let guards = chain[1..chain.len() - 1].to_vec();
                EdgeTemplate { chain, windows: vec![w], guards }
            };
            let up = (j < t_max && i < x_max).then(|| mk(starts[i as usize + 1]));
            let down = (j < t_max && i > 0).then(|| mk(starts[i as usize - 1]));
            map.set(j, i, VertexRegion { site: xi, window: TimeWindow::open(m - 1.0, m + 1.0) }, up, down);
        }
    }
    let horizon = map.time_extent() + 2.0;
    let n_sites = starts[x_max as usize] + 1;
    let rec = b[..n_sites]
        .iter()
        .map(|&x| PointSetWindow::new(0.0, horizon, realize_periodic(2.0, if x { 1.0 } else { 0.0 }, 0.0, horizon)))
        .collect::<Result<Vec<_>>>()?;
    let contacts = Contacts::Ppp(LazyPpp { rate: lambda, seed: seed.child("ber/contacts").0 });
    let contact = ContactInstance::new(Graph::Line { n: n_sites }, contacts, rec, vec![0], horizon)?.with_start(c as f64)?;
    let k = dominate_runs(complete, q, seed.child("ber/domination"))?;
    let nu: Vec<f64> = k.iter().map(|&k| (k * k) as f64).collect();
    Ok(CoupledInstance {
        kind: CouplingKind::CpprBer,
        contact,
        map,
        environment: Some(StretchEnvironment::new(vec![0.0; nu.len() + 1], nu)?),
        vertex_kernel: Some(ConnectionFamily::constant(1.0)),
        edge_kernel: Some(edge),
        data: CouplingData::Ber {
            lambda,
            q,
            runs: complete.iter().map(|r| r.1).collect(),
            n: complete.iter().map(|r| r.1 + 1).collect(),
            k,
            starts,
            c,
        },
    })
}

/// `e^-1 sum_{r >= n} 1/r! * prod e^{-Delta}`: chance that one unit window
/// carries `n` ordered unit-rate arrows and no recovery at the bad sites.
pub fn cpre_success_prob(n: u64, deltas: &[f64]) -> f64 {
    poisson_tail(1.0, n) * (-deltas.iter().sum::<f64>()).exp()
}

/// `N log N + sum Delta` over the bad sites of a gap.
pub fn cpre_stretch(n: u64, deltas: &[f64]) -> f64 {
    let nf = n as f64;
    nf * nf.ln() + deltas.iter().sum::<f64>()
}

/// Random-environment contact process: each site is good (recovery rate
/// `delta = L^-2`) with probability `p`, otherwise recovers at rate `Delta_x`.
/// Column `b` is the `b`-th good site; the edge between two good sites is
/// open if, in one of the `L` unit windows of its time block, the arrows
/// across the gap fire in order while the bad sites stay recovery-free.
pub fn couple_cpre(p: f64, l: u32, big: &Distribution, sites: usize, t_max: u32, seed: Seed) -> Result<CoupledInstance> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param("p", format!("must lie in (0, 1), got {p}")));
    }
    if l < 2 {
        return Err(Error::param("l", "block length must be at least 2"));
    }
    big.validate()?;
    let mut rng = seed.child("cpre/environment").rng();
    let mut good_flag = Vec::with_capacity(sites);
    let mut delta = Vec::with_capacity(sites);
    for _ in 0..sites {
        let g = rng.random_bool(p);
        good_flag.push(g);
        delta.push(if g { 0.0 } else { big.sample(&mut rng) });
    }
    let good: Vec<usize> = (0..sites).filter(|&x| good_flag[x]).collect();
    if good.len() < 2 {
        return Err(Error::InsufficientColumns { a: 0, b: sites as i64 - 1 });
    }
    let x_max = (good.len() - 1) as u32;
    let n_sites = good[x_max as usize] + 1;
    let lf = l as f64;
    let horizon = (t_max as f64 + 1.0) * lf;
    let small = 1.0 / (lf * lf);
    let rec = (0..n_sites)
        .map(|x| {
            let rate = if good_flag[x] { small } else { delta[x] };
            let spec = if rate > 0.0 { ClosedSetSpec::Ppp { rate } } else { ClosedSetSpec::Empty };
            sample_closed_set(&spec, 0.0, horizon, seed.derive(x as u64, "cpre/recovery"))
        })
        .collect::<Result<Vec<_>>>()?;
    let window = LatticeWindow::plain(t_max, x_max)?;
    let mut map = GeometryMap::new(window);
    let span = |a: usize, z: usize| -> Vec<usize> {
        if a <= z {
            (a..=z).collect()
        } else {
            (z..=a).rev().collect()
        }
    };
    for j in 0..=t_max {
        let jl = j as f64 * lf;
        let windows: Vec<TimeWindow> = (0..l).map(|k| TimeWindow::half_open(jl + k as f64, jl + k as f64 + 1.0)).collect();
        for i in (0..=x_max).filter(|i| (j + i) % 2 == 0) {
            let xi = good[i as usize];
            let mk = |to: usize| {
                let chain = span(xi, to);
                let guards = chain[1..chain.len() - 1].to_vec();
                EdgeTemplate { chain, windows: windows.clone(), guards }
            };
            let up = (j < t_max && i < x_max).then(|| mk(good[i as usize + 1]));
            let down = (j < t_max && i > 0).then(|| mk(good[i as usize - 1]));
            let v = VertexRegion { site: xi, window: TimeWindow::half_open(jl - lf, jl + lf) };
            map.set(j, i, v, up, down);
        }
    }
    let mut gaps = Vec::new();
    let mut nu = Vec::new();
    let mut edge_prob = Vec::new();
    let mut kernel_prob = Vec::new();
    let edge = ConnectionFamily::new(KernelKind::CpreEdge { l }, 0.0);
    for w in good.windows(2) {
        let n = (w[1] - w[0]) as u64;
        let ds = &delta[w[0] + 1..w[1]];
        let s = cpre_stretch(n, ds);
        gaps.push(n);
        nu.push(s);
        edge_prob.push(1.0 - (1.0 - cpre_success_prob(n, ds)).powi(l as i32));
        kernel_prob.push(eval_kernel(&edge, s)?);
    }
    let contacts = Contacts::Ppp(LazyPpp { rate: 1.0, seed: seed.child("cpre/contacts").0 });
    let contact = ContactInstance::new(Graph::Line { n: n_sites }, contacts, rec, vec![good[0]], horizon)?;
    Ok(CoupledInstance {
        kind: CouplingKind::Cpre,
        contact,
        map,
        environment: Some(StretchEnvironment::new(vec![0.0; nu.len() + 1], nu)?),
        vertex_kernel: Some(ConnectionFamily::new(KernelKind::CpreVertex { l }, 0.0)),
        edge_kernel: Some(edge),
        data: CouplingData::Cpre { l, good, gaps, deltas: delta, edge_prob, kernel_prob },
    })
}

/// Frequency estimate of one `A_e(k)`: `n` unit-rate arrow streams firing in
/// order inside `[0, 1)` with the bad sites (rates `deltas`) recovery-free.
pub fn simulate_cpre_event(n: u64, deltas: &[f64], trials: u64, seed: Seed) -> u64 {
    let mut rng = seed.rng();
    let exp1 = rand_distr::Exp1;
    (0..trials)
        .filter(|_| {
            let mut t = 0.0f64;
            for _ in 0..n {
                // Memorylessness: the next arrow on a fresh edge after `t`.
                t += rng.sample::<f64, _>(exp1);
                if t >= 1.0 {
                    return false;
                }
            }
            deltas.iter().all(|&d| rng.random::<f64>() >= 1.0 - (-d).exp())
        })
        .count() as u64
}

/// Frequency of `k` i.i.d. Exp(lambda) variables summing to at most 1.
pub fn simulate_exp_sum(lambda: f64, k: u64, trials: u64, seed: Seed) -> Result<u64> {
    let exp = rand_distr::Exp::new(lambda).map_err(|_| Error::param("lambda", "must be positive"))?;
    let mut rng = seed.rng();
    Ok((0..trials)
        .filter(|_| {
            let mut s = 0.0;
            for _ in 0..k {
                s += rng.sample::<f64, _>(exp);
                if s > 1.0 {
                    return false;
                }
            }
            true
        })
        .count() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub kind: CouplingKind,
    pub identities_checked: u64,
    pub identity_max_error: f64,
    /// Edges whose true open probability falls below the kernel value.
    pub bound_violations: u64,
    pub paths_sampled: u64,
    pub replay_ok: u64,
    pub replay_failures: u64,
}

impl CouplingReport {
    pub fn sound(&self) -> bool {
        self.replay_failures == 0
    }
}

/// Replay `paths` sampled open paths through `map` and check every resulting
/// infection path independently.
pub fn replay_count(ci: &CoupledInstance, map: &GeometryMap, paths: usize, seed: Seed) -> (u64, u64) {
    let cfg = derive_configuration(map, &ci.contact);
    let mut rng = seed.rng();
    let sampled = sample_open_paths(&cfg, (0, 0), paths, &mut rng);
    let ok = sampled
        .iter()
        .filter(|p| replay_path(map, &ci.contact, p).is_some_and(|ip| crate::contact::verify_infection_path(&ci.contact, &ip)))
        .count() as u64;
    (ok, sampled.len() as u64 - ok)
}

pub fn validate_coupling(ci: &CoupledInstance, paths: usize, seed: Seed) -> Result<CouplingReport> {
    let mut checked = 0u64;
    let mut max_err = 0.0f64;
    let mut violations = 0u64;
    match &ci.data {
        CouplingData::D2 { .. } => {}
        CouplingData::Uni { lambda, s, .. } => {
            let fam = ci.edge_kernel.expect("edge kernel");
            for &si in s {
                let k = eval_kernel(&fam, -si.ln())?;
                max_err = max_err.max((k - (1.0 - (-lambda * si).exp())).abs());
                checked += 1;
            }
        }
        CouplingData::Ber { lambda, runs, k, .. } => {
            let fam = ci.edge_kernel.expect("edge kernel");
            for (&r, &kk) in runs.iter().zip(k) {
                let v = eval_kernel(&fam, (kk * kk) as f64)?;
                max_err = max_err.max((v - poisson_tail(*lambda, kk)).abs());
                if kk < r || poisson_tail(*lambda, r) < v {
                    violations += 1;
                }
                checked += 1;
            }
        }
        CouplingData::Cpre { edge_prob, kernel_prob, .. } => {
            for (&e, &k) in edge_prob.iter().zip(kernel_prob) {
                if e < k {
                    violations += 1;
                }
                checked += 1;
            }
        }
    }
    let (ok, bad) = replay_count(ci, &ci.map, paths, seed);
    Ok(CouplingReport {
        kind: ci.kind,
        identities_checked: checked,
        identity_max_error: max_err,
        bound_violations: violations,
        paths_sampled: ok + bad,
        replay_ok: ok,
        replay_failures: bad,
    })
}

/// A small random instance of each coupling, for replay audits.
pub fn random_small_instance(kind: CouplingKind, seed: Seed) -> Result<CoupledInstance> {
    let mut rng = seed.child("small/params").rng();
    match kind {
        CouplingKind::D2Block => {
            let t_max = rng.random_range(3..=8);
            let t = rng.random_range(0.5..2.0);
            let mu = rng.random_range(0.1..1.0);
            let (y, x) = random_d2_inputs(t_max, t, rng.random_range(0.05..0.6), rng.random_range(0.5..3.0), mu, seed)?;
            couple_d2(&y, &x, t, mu, t_max)
        }
        CouplingKind::CpprUni => {
            let n = rng.random_range(3..=12);
            let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            couple_cppr_uniform(&u, rng.random_range(1.0..20.0), rng.random_range(3..=12), seed)
        }
        CouplingKind::CpprBer => {
            let q = rng.random_range(0.2..0.8);
            let mut b: Vec<bool> = (0..rng.random_range(6..=20)).map(|_| rng.random_bool(q)).collect();
            b.push(!b[b.len() - 1]);
            b.push(!b[b.len() - 1]);
            couple_cppr_bernoulli(&b, q, rng.random_range(2.0..20.0), rng.random_range(3..=12), seed)
        }
        CouplingKind::Cpre => {
            let p = rng.random_range(0.4..0.8);
            let sites = rng.random_range(8..=20);
            let l = rng.random_range(2..=5);
            let big = Distribution::Exponential { rate: rng.random_range(0.5..4.0) };
            let t_max = rng.random_range(3..=8);
            // Redraw until at least two good sites exist.
            let mut attempt = 0;
            loop {
                match couple_cpre(p, l, &big, sites, t_max, seed.derive(attempt, "small/cpre")) {
                    Err(Error::InsufficientColumns { .. }) if attempt < 64 => attempt += 1,
                    r => return r,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{chi2_test, ks_test, within_sigma};

    fn w(points: &[f64], hi: f64) -> PointSetWindow {
        PointSetWindow::new(0.0, hi, points.to_vec()).unwrap()
    }

    #[test]
    fn torus_and_stretch_arithmetic() {
        assert!((torus_distance(0.2, 0.9) - 0.3).abs() < 1e-15);
        let s = 2.0 * torus_distance(0.2, 0.9);
        assert!((-s.ln() - 0.5108256237659907).abs() < 1e-12);
        let fam = ConnectionFamily::new(KernelKind::CpprUniform, 3.0);
        let v = eval_kernel(&fam, -(0.5f64).ln()).unwrap();
        assert!((v - (1.0 - (-1.5f64).exp())).abs() < 1e-12);
        assert!((v - 0.776870).abs() < 1e-6);
    }

    #[test]
    fn d2_rules() {
        let t_max = 2;
        let g = Graph::NeQuadrant { n: 3 };
        let hi = 3.0;
        let full: Vec<f64> = (0..=30).map(|k| k as f64 * 0.1).collect();
        let y: Vec<_> = (0..g.vertex_count()).map(|_| w(&[], hi)).collect();
        let x: Vec<_> = (0..g.edge_count()).map(|_| PointSetWindow::new(0.0, hi, full.clone()).unwrap()).collect();
        let ci = couple_d2(&y, &x, 1.0, 1.0, t_max).unwrap();
        let cfg = ci.configuration();
        for j in 0..=t_max {
            for c in (0..=j).filter(|c| (j + c) % 2 == 0) {
                assert!(cfg.vertex_open(j, c));
                if j < t_max {
                    assert!(cfg.up_open(j, c));
                }
            }
        }
        // mu = 0.5: vertex (1, 1) maps to quadrant (1, 0); Y = {0.8} lies in 0.5 [0, 2].
        let mut y2 = y.clone();
        y2[Graph::quadrant_id(3, 1, 0)] = w(&[0.8], 1.5);
        let y2: Vec<_> = y2.into_iter().map(|s| PointSetWindow::new(0.0, 1.5, s.points().to_vec()).unwrap()).collect();
        let ci = couple_d2(&y2, &x, 1.0, 0.5, t_max).unwrap();
        assert!(!ci.configuration().vertex_open(1, 1));
        assert!(ci.configuration().vertex_open(0, 0));
    }

    #[test]
    fn uniform_geometry_reference() {
        let ci = couple_cppr_uniform(&[0.5, 0.2, 0.9, 0.4], 3.0, 6, Seed(1)).unwrap();
        let CouplingData::Uni { s, .. } = &ci.data else { panic!() };
        assert!((s[1] - 0.6).abs() < 1e-12);
        let env = ci.environment.as_ref().unwrap();
        assert!((env.nu[1] - 0.5108256237659907).abs() < 1e-12);
        // Each edge window has length S of its bond.
        for j in 0..6u32 {
            for i in (0..=3u32).filter(|i| (j + i) % 2 == 0) {
                if let Some(e) = ci.map.up(j, i) {
                    let w = e.windows[0];
                    assert!((w.hi - w.lo - s[i as usize]).abs() < 1e-12);
                }
                if let Some(e) = ci.map.down(j, i) {
                    let w = e.windows[0];
                    assert!((w.hi - w.lo - s[i as usize - 1]).abs() < 1e-12);
                }
            }
        }
        assert!(matches!(
            couple_cppr_uniform(&[0.3, 0.3], 1.0, 2, Seed(1)),
            Err(Error::DegenerateTorusDistance(0))
        ));
    }

    #[test]
    fn uniform_stretch_is_exponential() {
        let mut rng = Seed(4).rng();
        let nu: Vec<f64> = (0..100_000)
            .map(|_| -(2.0 * torus_distance(rng.random(), rng.random())).ln())
            .collect();
        assert!(ks_test(&nu, |x| 1.0 - (-x).exp()).unwrap().passes(1e-3));
    }

    #[test]
    fn runs_and_n_values() {
        let b = [false, false, true, false, true, true];
        assert_eq!(run_n_values(&b).unwrap(), vec![3, 2, 2]);
        assert_eq!(maximal_runs(&b), vec![(false, 2), (true, 1), (false, 1), (true, 2)]);
        let ci = couple_cppr_bernoulli(&b, 0.5, 5.0, 4, Seed(2)).unwrap();
        let CouplingData::Ber { starts, c, .. } = &ci.data else { panic!() };
        assert_eq!(starts, &vec![0, 2, 3, 4]);
        assert_eq!(*c, 1);
        assert_eq!(ci.map.up(0, 0).unwrap().chain, vec![0, 1, 2]);
        assert_eq!(ci.map.down(1, 1).unwrap().chain, vec![2, 1, 0]);
    }

    #[test]
    fn bernoulli_kernel_identity() {
        let fam = ConnectionFamily::new(KernelKind::CpprBernoulli, 7.0);
        assert_eq!(eval_kernel(&fam, 9.0).unwrap(), poisson_tail(7.0, 3));
        let n = 100_000;
        let hits = simulate_exp_sum(4.0, 3, n, Seed(9)).unwrap();
        assert!(within_sigma(hits, n, poisson_tail(4.0, 3), 3.0));
    }

    #[test]
    fn domination_is_pathwise_and_geometric() {
        let mut rng = Seed(6).rng();
        let q = 0.3;
        let b: Vec<bool> = (0..200_000).map(|_| rng.random_bool(q)).collect();
        let runs = maximal_runs(&b);
        let runs = &runs[..runs.len() - 1];
        let k = dominate_runs(runs, q, Seed(7)).unwrap();
        assert!(runs.iter().zip(&k).all(|(r, &k)| k >= r.1));
        let m: f64 = 0.7;
        let mut obs = vec![0u64; 30];
        for &x in &k {
            obs[(x as usize - 1).min(29)] += 1;
        }
        let probs: Vec<f64> = (0..30)
            .map(|i| if i < 29 { m.powi(i) * (1.0 - m) } else { m.powi(29) })
            .collect();
        assert!(chi2_test(&obs, &probs).unwrap().passes(1e-3));
    }

    #[test]
    fn cpre_single_gap_formula() {
        let v = cpre_success_prob(1, &[]);
        assert!((v - 0.6321205588285577).abs() < 1e-12);
        // The N log N bound is not a lower bound at N = 1.
        assert!(v < (-cpre_stretch(1, &[])).exp());
        for n in 2..8u64 {
            assert!(cpre_success_prob(n, &[]) >= (-cpre_stretch(n, &[])).exp());
        }
        for (n, ds) in [(1u64, vec![]), (2, vec![0.3]), (3, vec![0.2, 0.5])] {
            let trials = 100_000;
            let hits = simulate_cpre_event(n, &ds, trials, Seed(n));
            assert!(within_sigma(hits, trials, cpre_success_prob(n, &ds), 3.0), "{n}");
        }
    }

    #[test]
    fn replay_is_sound_for_every_kind() {
        for kind in CouplingKind::ALL {
            let mut sampled = 0;
            for s in 0..25u64 {
                let ci = random_small_instance(kind, Seed(s)).unwrap();
                let r = validate_coupling(&ci, 20, Seed(s)).unwrap();
                assert_eq!(r.replay_failures, 0, "{kind:?} seed {s}");
                sampled += r.paths_sampled;
            }
            assert!(sampled > 0, "{kind:?}");
        }
    }

    #[test]
    fn corrupted_map_is_caught() {
        let ci = couple_cppr_uniform(&[0.5, 0.1, 0.7, 0.3, 0.9, 0.2], 8.0, 8, Seed(3)).unwrap();
        let (_, bad) = replay_count(&ci, &ci.map.corrupt(2.0), 200, Seed(1));
        assert!(bad > 0);
        let (_, bad) = replay_count(&ci, &ci.map, 200, Seed(1));
        assert_eq!(bad, 0);
    }

    #[test]
    fn open_paths_are_infection_paths_in_the_trace() {
        for s in 0..10 {
            let ci = random_small_instance(CouplingKind::CpprUni, Seed(s)).unwrap();
            let cfg = ci.configuration();
            let trace = crate::contact::run_contact(&ci.contact);
            let mut rng = Seed(s).rng();
            for p in sample_open_paths(&cfg, (0, 0), 10, &mut rng) {
                let ip = replay_path(&ci.map, &ci.contact, &p).unwrap();
                assert!(trace.infected_at(*ip.vertices.last().unwrap(), ip.t));
            }
        }
    }
}
