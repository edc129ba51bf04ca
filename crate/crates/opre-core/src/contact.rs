//! Generalised contact processes whose infection and recovery times are
//! locally finite random closed sets, on the half-line and on the oriented
//! north-east quadrant.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution as _, Exp};
use serde::{Deserialize, Serialize};

use crate::environment::Distribution;
use crate::error::{Error, Result};
use crate::rng::{hashed_bits, unit_f64, Seed, SimRng, SplitMix};

/// A finite realisation of a random closed set restricted to `[t_lo, t_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSetWindow {
    pub t_lo: f64,
    pub t_hi: f64,
    points: Vec<f64>,
}

impl PointSetWindow {
    pub fn new(t_lo: f64, t_hi: f64, points: Vec<f64>) -> Result<Self> {
        if !(t_lo.is_finite() && t_hi.is_finite() && t_lo <= t_hi) {
            return Err(Error::param("window", format!("[{t_lo}, {t_hi}] is not a finite interval")));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param("points", "must be strictly increasing"));
        }
        if let Some(&p) = points.iter().find(|&&p| p < t_lo || p > t_hi) {
            return Err(Error::TimeOutsideWindow { t: p, lo: t_lo, hi: t_hi });
        }
        Ok(PointSetWindow { t_lo, t_hi, points })
    }

    pub fn empty(t_lo: f64, t_hi: f64) -> Self {
        PointSetWindow { t_lo, t_hi, points: Vec::new() }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.points.binary_search_by(|p| p.total_cmp(&t)).is_ok()
    }

    /// Number of points `<= t`.
    #[inline]
    fn count_le(&self, t: f64) -> usize {
        self.points.partition_point(|&p| p <= t)
    }

    /// Whether `[a, b]` misses the set.
    pub fn avoids(&self, a: f64, b: f64) -> bool {
        let i = self.points.partition_point(|&p| p < a);
        i == self.points.len() || self.points[i] > b
    }

    /// The set divided by `mu`, i.e. the realisation of `mu^{-1} Y`.
    pub fn scaled(&self, mu: f64) -> Self {
        PointSetWindow {
            t_lo: self.t_lo / mu,
            t_hi: self.t_hi / mu,
            points: self.points.iter().map(|p| p / mu).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClosedSetSpec {
    Ppp { rate: f64 },
    /// `2(Z + U)` with `U` uniform on `[0, 1)`.
    PeriodicUniform,
    /// `2Z + B` with `B` Bernoulli(q).
    PeriodicBernoulli { q: f64 },
    /// `offset + period Z`, deterministic.
    Periodic { period: f64, offset: f64 },
    /// PPP(delta) with probability `p`, otherwise PPP(Delta) with `Delta ~ big`.
    CoxBds { p: f64, delta: f64, big: Distribution },
    /// PPP(Delta) with `Delta ~ big`.
    CoxPpp { big: Distribution },
    Empty,
    /// `mu^{-1}` times the inner set.
    Scaled { mu: f64, inner: Box<ClosedSetSpec> },
}

/// The hidden variable behind one realisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Latent {
    None,
    Shift(f64),
    Bit(bool),
    Rate(f64),
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive and finite, got {v}")))
    }
}

fn unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must lie in (0, 1), got {v}")))
    }
}

impl ClosedSetSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ClosedSetSpec::Ppp { rate } => positive("rate", *rate),
            ClosedSetSpec::PeriodicUniform | ClosedSetSpec::Empty => Ok(()),
            ClosedSetSpec::PeriodicBernoulli { q } => unit_open("q", *q),
            ClosedSetSpec::Periodic { period, offset } => {
                positive("period", *period)?;
                if offset.is_finite() {
                    Ok(())
                } else {
                    Err(Error::param("offset", "must be finite"))
                }
            }
            ClosedSetSpec::CoxBds { p, delta, big } => {
                unit_open("p", *p)?;
                positive("delta", *delta)?;
                big.validate()
            }
            ClosedSetSpec::CoxPpp { big } => big.validate(),
            ClosedSetSpec::Scaled { mu, inner } => {
                positive("mu", *mu)?;
                inner.validate()
            }
        }
    }
}

/// `(offset + period Z) ∩ [t_lo, t_hi]`.
pub fn realize_periodic(period: f64, offset: f64, t_lo: f64, t_hi: f64) -> Vec<f64> {
    let first = ((t_lo - offset) / period).ceil() as i64;
    let mut out = Vec::new();
    let mut n = first;
    loop {
        let p = offset + period * n as f64;
        if p > t_hi {
            break;
        }
        if p >= t_lo {
            out.push(p);
        }
        n += 1;
    }
    out
}

fn ppp_points(rate: f64, t_lo: f64, t_hi: f64, rng: &mut SimRng) -> Vec<f64> {
    let mut out = Vec::new();
    if rate <= 0.0 {
        return out;
    }
    let exp = Exp::new(rate).expect("positive rate");
    let mut t = t_lo;
    loop {
        t += exp.sample(rng);
        if t > t_hi {
            return out;
        }
        out.push(t);
    }
}

/// One realisation restricted to `[t_lo, t_hi]`.
pub fn sample_closed_set(spec: &ClosedSetSpec, t_lo: f64, t_hi: f64, seed: Seed) -> Result<PointSetWindow> {
    Ok(sample_closed_set_latent(spec, t_lo, t_hi, seed)?.0)
}

pub fn sample_closed_set_latent(spec: &ClosedSetSpec, t_lo: f64, t_hi: f64, seed: Seed) -> Result<(PointSetWindow, Latent)> {
    spec.validate()?;
    let mut rng = seed.rng();
    realize(spec, t_lo, t_hi, &mut rng)
}

fn realize(spec: &ClosedSetSpec, t_lo: f64, t_hi: f64, rng: &mut SimRng) -> Result<(PointSetWindow, Latent)> {
    let (points, latent) = match spec {
        ClosedSetSpec::Ppp { rate } => (ppp_points(*rate, t_lo, t_hi, rng), Latent::None),
        ClosedSetSpec::PeriodicUniform => {
            let u: f64 = rng.random();
            (realize_periodic(2.0, 2.0 * u, t_lo, t_hi), Latent::Shift(u))
        }
        ClosedSetSpec::PeriodicBernoulli { q } => {
            let b = rng.random_bool(*q);
            let off = if b { 1.0 } else { 0.0 };
            (realize_periodic(2.0, off, t_lo, t_hi), Latent::Bit(b))
        }
        ClosedSetSpec::Periodic { period, offset } => (realize_periodic(*period, *offset, t_lo, t_hi), Latent::None),
        ClosedSetSpec::CoxBds { p, delta, big } => {
            let rate = if rng.random_bool(*p) { *delta } else { big.sample(rng) };
            (ppp_points(rate, t_lo, t_hi, rng), Latent::Rate(rate))
        }
        ClosedSetSpec::CoxPpp { big } => {
            let rate = big.sample(rng);
            (ppp_points(rate, t_lo, t_hi, rng), Latent::Rate(rate))
        }
        ClosedSetSpec::Empty => (Vec::new(), Latent::None),
        ClosedSetSpec::Scaled { mu, inner } => {
            let (w, latent) = realize(inner, t_lo * mu, t_hi * mu, rng)?;
            let pts = w
                .points
                .iter()
                .map(|p| p / mu)
                .filter(|&p| p >= t_lo && p <= t_hi)
                .collect();
            (pts, latent)
        }
    };
    Ok((PointSetWindow::new(t_lo, t_hi, points)?, latent))
}

/// `Z_t = min{s >= 0 : s + t in Y}`, or `None` if the window holds no point `>= t`.
pub fn earliest_recovery(y: &PointSetWindow, t: f64) -> Result<Option<f64>> {
    if t < y.t_lo || t > y.t_hi {
        return Err(Error::TimeOutsideWindow { t, lo: y.t_lo, hi: y.t_hi });
    }
    let i = y.points.partition_point(|&p| p < t);
    Ok(y.points.get(i).map(|&p| p - t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Graph {
    /// Vertices `0..n`, undirected nearest-neighbour edges; edge `e` joins `e` and `e + 1`.
    Line { n: usize },
    /// Vertices `(x, y)` in `[0, n)^2` with id `x + n y`, oriented east (edge `2v`)
    /// and north (edge `2v + 1`).
    NeQuadrant { n: usize },
}

impl Graph {
    pub fn vertex_count(&self) -> usize {
        match *self {
            Graph::Line { n } => n,
            Graph::NeQuadrant { n } => n * n,
        }
    }

    pub fn edge_count(&self) -> usize {
        match *self {
            Graph::Line { n } => n.saturating_sub(1),
            Graph::NeQuadrant { n } => 2 * n * n,
        }
    }

    /// Outgoing `(edge, neighbour)` pairs.
    pub fn neighbors(&self, v: usize) -> [Option<(usize, usize)>; 2] {
        match *self {
            Graph::Line { n } => [
                (v > 0).then(|| (v - 1, v - 1)),
                (v + 1 < n).then_some((v, v + 1)),
            ],
            Graph::NeQuadrant { n } => {
                let (x, y) = (v % n, v / n);
                [
                    (x + 1 < n).then_some((2 * v, v + 1)),
                    (y + 1 < n).then_some((2 * v + 1, v + n)),
                ]
            }
        }
    }

    /// The edge along which `a` can infect `b`.
    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        self.neighbors(a).into_iter().flatten().find(|&(_, u)| u == b).map(|(e, _)| e)
    }

    pub fn quadrant_id(n: usize, x: usize, y: usize) -> usize {
        x + n * y
    }
}

/// Poisson contact times generated on demand. Time is cut into cells of
/// length `1 / rate`; each `(edge, cell)` pair owns a keyed stream, so the
/// realisation does not depend on the order of queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LazyPpp {
    pub rate: f64,
    pub seed: u64,
}

impl LazyPpp {
    fn cell(&self) -> f64 {
        1.0 / self.rate
    }

    /// First point `>= x` (or `> x` if `strict`) that is `<= limit`.
    pub fn first_from(&self, e: usize, x: f64, strict: bool, limit: f64) -> Option<f64> {
        if self.rate <= 0.0 {
            return None;
        }
        let w = self.cell();
        let mut c = (x / w).floor().max(0.0) as u64;
        loop {
            let start = c as f64 * w;
            if start > limit {
                return None;
            }
            let end = (c + 1) as f64 * w;
            let mut s = SplitMix(hashed_bits(self.seed, e as u64, c, 0));
            let mut t = start;
            loop {
                let u = unit_f64(s.next_u64());
                t += -(1.0 - u).ln() * w;
                if t >= end {
                    break;
                }
                if t > x || (!strict && t == x) {
                    return (t <= limit).then_some(t);
                }
            }
            c += 1;
        }
    }

    pub fn points(&self, e: usize, lo: f64, hi: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut x = lo;
        let mut strict = false;
        while let Some(t) = self.first_from(e, x, strict, hi) {
            out.push(t);
            x = t;
            strict = true;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Contacts {
    Explicit { sets: Vec<PointSetWindow> },
    Ppp(LazyPpp),
}

impl Contacts {
    pub fn first_from(&self, e: usize, x: f64, strict: bool, limit: f64) -> Option<f64> {
        match self {
            Contacts::Explicit { sets } => {
                let p = &sets[e].points;
                let i = if strict {
                    p.partition_point(|&q| q <= x)
                } else {
                    p.partition_point(|&q| q < x)
                };
                p.get(i).copied().filter(|&t| t <= limit)
            }
            Contacts::Ppp(l) => l.first_from(e, x, strict, limit),
        }
    }

    pub fn contains(&self, e: usize, t: f64) -> bool {
        match self {
            Contacts::Explicit { sets } => sets.get(e).is_some_and(|s| s.contains(t)),
            Contacts::Ppp(l) => l.first_from(e, t, false, t) == Some(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactInstance {
    pub graph: Graph,
    pub contacts: Contacts,
    pub recoveries: Vec<PointSetWindow>,
    pub j0: Vec<usize>,
    /// Time at which `J0` is infected.
    pub t_start: f64,
    pub horizon: f64,
}

impl ContactInstance {
    pub fn new(graph: Graph, contacts: Contacts, recoveries: Vec<PointSetWindow>, j0: Vec<usize>, horizon: f64) -> Result<Self> {
        ContactInstance {
            graph,
            contacts,
            recoveries,
            j0,
            t_start: 0.0,
            horizon,
        }
        .validated()
    }

    pub fn with_start(mut self, t_start: f64) -> Result<Self> {
        self.t_start = t_start;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        let nv = self.graph.vertex_count();
        if nv == 0 {
            return Err(Error::param("graph", "needs at least one vertex"));
        }
        if self.recoveries.len() != nv {
            return Err(Error::param("recoveries", format!("need {nv} sets, got {}", self.recoveries.len())));
        }
        if let Contacts::Explicit { sets } = &self.contacts {
            if sets.len() != self.graph.edge_count() {
                return Err(Error::param(
                    "contacts",
                    format!("need {} sets, got {}", self.graph.edge_count(), sets.len()),
                ));
            }
        }
        if let Some(&v) = self.j0.iter().find(|&&v| v >= nv) {
            return Err(Error::IndexOutOfRange { index: v, len: nv });
        }
        if !(self.horizon.is_finite() && self.t_start >= 0.0 && self.t_start <= self.horizon) {
            return Err(Error::TimeOutsideWindow {
                t: self.t_start,
                lo: 0.0,
                hi: self.horizon,
            });
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfectionEvent {
    pub time: f64,
    pub vertex: usize,
    pub source: Option<usize>,
    pub edge: Option<usize>,
    /// Infectious until (not including) this time; infinite past the last recovery.
    pub until: f64,
    parent: Option<usize>,
}

/// Earliest infection of every (vertex, recovery gap) pair, in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfectionTrace {
    pub events: Vec<InfectionEvent>,
    pub horizon: f64,
    by_vertex: Vec<Vec<usize>>,
}

/// A vertex path with its contact times, ending at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfectionPath {
    pub vertices: Vec<usize>,
    pub times: Vec<f64>,
    pub t: f64,
}

impl InfectionTrace {
    /// Infectious intervals `[s, until)` of vertex `v`.
    pub fn intervals(&self, v: usize) -> Vec<(f64, f64)> {
        self.by_vertex[v]
            .iter()
            .map(|&k| (self.events[k].time, self.events[k].until))
            .collect()
    }

    fn event_at(&self, v: usize, t: f64) -> Option<usize> {
        if t > self.horizon {
            return None;
        }
        self.by_vertex
            .get(v)?
            .iter()
            .copied()
            .find(|&k| self.events[k].time <= t && t < self.events[k].until)
    }

    pub fn infected_at(&self, v: usize, t: f64) -> bool {
        self.event_at(v, t).is_some()
    }

    /// `J_t`.
    pub fn infected_set(&self, t: f64) -> Vec<usize> {
        (0..self.by_vertex.len()).filter(|&v| self.infected_at(v, t)).collect()
    }

    pub fn alive_at(&self, t: f64) -> bool {
        t <= self.horizon && self.events.iter().any(|e| e.time <= t && t < e.until)
    }

    pub fn certificate(&self, v: usize, t: f64) -> Option<InfectionPath> {
        let mut k = self.event_at(v, t)?;
        let mut vertices = vec![v];
        let mut times = Vec::new();
        while let Some(p) = self.events[k].parent {
            times.push(self.events[k].time);
            vertices.push(self.events[p].vertex);
            k = p;
        }
        vertices.reverse();
        times.reverse();
        Some(InfectionPath { vertices, times, t })
    }

    /// CSV rows `time,vertex,source`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,vertex,source\n");
        for e in &self.events {
            let src = e.source.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", e.time, e.vertex, src));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    time: f64,
    seq: u64,
    vertex: usize,
    gap: usize,
    parent: Option<usize>,
    edge: Option<usize>,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.time.total_cmp(&o.time).then(self.seq.cmp(&o.seq))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

/// Event-driven sweep in global time order. A vertex infected at `s` stays
/// infectious on `[s, r)` with `r` its first recovery after `s`; only the
/// earliest infection inside each recovery gap matters, so the state space is
/// (vertex, gap).
pub fn run_contact(inst: &ContactInstance) -> InfectionTrace {
    let nv = inst.graph.vertex_count();
    // State (v, gap) lives at `base[v] + gap`.
    let mut base = Vec::with_capacity(nv + 1);
    base.push(0usize);
    for y in &inst.recoveries {
        base.push(base.last().unwrap() + y.len() + 1);
    }
    let mut settled = vec![false; base[nv]];
    let mut best = vec![f64::INFINITY; base[nv]];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut events: Vec<InfectionEvent> = Vec::new();
    let mut by_vertex = vec![Vec::new(); nv];

    for &v in &inst.j0 {
        let y = &inst.recoveries[v];
        if y.contains(inst.t_start) {
            continue;
        }
        let gap = y.count_le(inst.t_start);
        heap.push(Reverse(Pending {
            time: inst.t_start,
            seq,
            vertex: v,
            gap,
            parent: None,
            edge: None,
        }));
        seq += 1;
    }

    while let Some(Reverse(p)) = heap.pop() {
        if settled[base[p.vertex] + p.gap] {
            continue;
        }
        let yv = &inst.recoveries[p.vertex];
        let until = yv.points.get(p.gap).copied().unwrap_or(f64::INFINITY);
        let id = events.len();
        settled[base[p.vertex] + p.gap] = true;
        by_vertex[p.vertex].push(id);
        events.push(InfectionEvent {
            time: p.time,
            vertex: p.vertex,
            source: p.parent.map(|k| events[k].vertex),
            edge: p.edge,
            until,
            parent: p.parent,
        });
        for (e, u) in inst.graph.neighbors(p.vertex).into_iter().flatten() {
            let yu = &inst.recoveries[u];
            let mut x = p.time;
            let mut strict = false;
            while let Some(t) = inst.contacts.first_from(e, x, strict, inst.horizon) {
                if t >= until {
                    break;
                }
                let h = yu.count_le(t);
                if h > 0 && yu.points[h - 1] == t {
                    x = t;
                    strict = true;
                    continue;
                }
                let key = base[u] + h;
                if !settled[key] && t < best[key] {
                    best[key] = t;
                    heap.push(Reverse(Pending {
                        time: t,
                        seq,
                        vertex: u,
                        gap: h,
                        parent: Some(id),
                        edge: Some(e),
                    }));
                    seq += 1;
                }
                // Later contacts in the same gap of `u` cannot improve on `t`.
                match yu.points.get(h) {
                    Some(&r) => {
                        x = r;
                        strict = true;
                    }
                    None => break,
                }
            }
        }
    }
    InfectionTrace {
        events,
        horizon: inst.horizon,
        by_vertex,
    }
}

/// `J_T` nonempty. Only contacts and recoveries inside the window are seen.
pub fn survival_probe(inst: &ContactInstance) -> bool {
    run_contact(inst).alive_at(inst.horizon)
}

/// Direct check of the path conditions with closed intervals, by scanning
/// every recovery point.
pub fn verify_infection_path(inst: &ContactInstance, path: &InfectionPath) -> bool {
    let k = match path.vertices.len() {
        0 => return false,
        n => n - 1,
    };
    if path.times.len() != k || !inst.j0.contains(&path.vertices[0]) || path.t > inst.horizon {
        return false;
    }
    let clear = |v: usize, a: f64, b: f64| inst.recoveries[v].points.iter().all(|&y| y < a || y > b);
    let mut prev = inst.t_start;
    for i in 0..k {
        let (a, b, t) = (path.vertices[i], path.vertices[i + 1], path.times[i]);
        let Some(e) = inst.graph.edge_between(a, b) else {
            return false;
        };
        if t < prev || !inst.contacts.contains(e, t) || !clear(a, prev, t) {
            return false;
        }
        prev = t;
    }
    path.t >= prev && clear(path.vertices[k], prev, path.t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CpprModel {
    Uniform,
    Bernoulli { q: f64 },
}

impl CpprModel {
    pub fn recovery_spec(&self) -> ClosedSetSpec {
        match *self {
            CpprModel::Uniform => ClosedSetSpec::PeriodicUniform,
            CpprModel::Bernoulli { q } => ClosedSetSpec::PeriodicBernoulli { q },
        }
    }

    /// The Bernoulli model recovers on integer times, so starting at 0 kills
    /// the origin outright whenever its shift is 0; it starts at 1/2 instead.
    pub fn start_time(&self) -> f64 {
        match self {
            CpprModel::Uniform => 0.0,
            CpprModel::Bernoulli { .. } => 0.5,
        }
    }
}

/// CPPR on `line(n)` started from the origin, with PPP(lambda) contacts.
pub fn cppr_instance(model: CpprModel, lambda: f64, n: usize, horizon: f64, seed: Seed) -> Result<ContactInstance> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("must be non-negative, got {lambda}")));
    }
    let spec = model.recovery_spec();
    let rec = (0..n)
        .map(|v| sample_closed_set(&spec, 0.0, horizon, seed.derive(v as u64, "cppr/recovery")))
        .collect::<Result<Vec<_>>>()?;
    let contacts = Contacts::Ppp(LazyPpp {
        rate: lambda,
        seed: seed.child("cppr/contacts").0,
    });
    ContactInstance::new(Graph::Line { n }, contacts, rec, vec![0], horizon)?.with_start(model.start_time())
}

/// Mean of `Z_t` over a grid of times, skipping times with no later point.
pub fn mean_earliest_recovery(y: &PointSetWindow, times: &[f64]) -> Result<f64> {
    let zs = times
        .iter()
        .map(|&t| earliest_recovery(y, t))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    if zs.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(zs.iter().sum::<f64>() / zs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_test;

    fn w(points: &[f64], hi: f64) -> PointSetWindow {
        PointSetWindow::new(0.0, hi, points.to_vec()).unwrap()
    }

    fn line2(x: &[f64], y0: &[f64], y1: &[f64]) -> ContactInstance {
        ContactInstance::new(
            Graph::Line { n: 2 },
            Contacts::Explicit { sets: vec![w(x, 1.0)] },
            vec![w(y0, 1.0).clone(), w(y1, 1.0)],
            vec![0],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn periodic_realisations() {
        assert_eq!(realize_periodic(2.0, 0.5, 0.0, 5.0), vec![0.5, 2.5, 4.5]);
        assert_eq!(realize_periodic(2.0, 1.0, 0.0, 5.0), vec![1.0, 3.0, 5.0]);
        for s in 0..50 {
            let (set, lat) = sample_closed_set_latent(&ClosedSetSpec::PeriodicUniform, 0.0, 5.0, Seed(s)).unwrap();
            let Latent::Shift(u) = lat else { panic!() };
            assert_eq!(set.points(), realize_periodic(2.0, 2.0 * u, 0.0, 5.0).as_slice());
        }
    }

    #[test]
    fn ppp_count_and_gaps() {
        let set = sample_closed_set(&ClosedSetSpec::Ppp { rate: 2.0 }, 0.0, 1e4, Seed(5)).unwrap();
        let n = set.len() as f64;
        assert!((n - 2e4).abs() <= 3.0 * 2e4f64.sqrt());
        let gaps: Vec<f64> = set.points().windows(2).map(|p| p[1] - p[0]).collect();
        let ks = ks_test(&gaps, |x| 1.0 - (-2.0 * x).exp()).unwrap();
        assert!(ks.passes(1e-3), "{ks:?}");
    }

    #[test]
    fn lazy_ppp_is_order_free_and_poisson() {
        let l = LazyPpp { rate: 3.0, seed: 11 };
        let all = l.points(4, 0.0, 2000.0);
        assert_eq!(l.first_from(4, 1000.0, false, 2000.0), all.iter().copied().find(|&t| t >= 1000.0));
        assert!((all.len() as f64 - 6000.0).abs() < 3.0 * 6000f64.sqrt());
        let gaps: Vec<f64> = all.windows(2).map(|p| p[1] - p[0]).collect();
        assert!(ks_test(&gaps, |x| 1.0 - (-3.0 * x).exp()).unwrap().passes(1e-3));
        assert!(all.iter().all(|&t| Contacts::Ppp(l).contains(4, t)));
    }

    #[test]
    fn earliest_recovery_cases() {
        let y = w(&[1.5, 3.0], 4.0);
        assert_eq!(earliest_recovery(&y, 2.0).unwrap(), Some(1.0));
        let y = w(&[1.5], 4.0);
        assert_eq!(earliest_recovery(&y, 1.5).unwrap(), Some(0.0));
        assert_eq!(earliest_recovery(&y, 2.0).unwrap(), None);
        assert!(earliest_recovery(&y, 5.0).is_err());
    }

    #[test]
    fn hand_traces() {
        let tr = run_contact(&line2(&[0.5], &[], &[0.3]));
        assert!(tr.infected_at(1, 1.0));
        assert_eq!(tr.intervals(1), vec![(0.5, f64::INFINITY)]);
        let inst = line2(&[0.5], &[0.2], &[0.3]);
        let tr = run_contact(&inst);
        assert!(tr.intervals(1).is_empty());
        assert!(!survival_probe(&inst));
        // Recovery at the contact time blocks the leg.
        let tr = run_contact(&line2(&[0.5], &[0.5], &[]));
        assert!(tr.intervals(1).is_empty());
    }

    #[test]
    fn no_contacts_dies_at_first_recovery() {
        let inst = line2(&[], &[0.7], &[]);
        let tr = run_contact(&inst);
        assert_eq!(tr.infected_set(0.5), vec![0]);
        assert!(tr.infected_set(0.7).is_empty());
        assert!(survival_probe(&line2(&[], &[], &[])));
    }

    #[test]
    fn integer_lattice_recovery_kills_immediately() {
        let n = 5;
        let rec = (0..n).map(|_| PointSetWindow::new(0.0, 4.0, realize_periodic(1.0, 0.0, 0.0, 4.0)).unwrap()).collect();
        let x = (0..n - 1).map(|_| PointSetWindow::new(0.0, 4.0, vec![1.0, 2.0, 3.0]).unwrap()).collect();
        let inst = ContactInstance::new(Graph::Line { n }, Contacts::Explicit { sets: x }, rec, vec![0], 4.0).unwrap();
        assert!(!survival_probe(&inst));
    }

    #[test]
    fn certificates_verify_on_random_instances() {
        for s in 0..30u64 {
            let inst = cppr_instance(CpprModel::Uniform, 3.0, 12, 10.0, Seed(s)).unwrap();
            let tr = run_contact(&inst);
            for ev in &tr.events {
                let c = tr.certificate(ev.vertex, ev.time).unwrap();
                assert!(verify_infection_path(&inst, &c), "seed {s} {ev:?}");
            }
            let times = ev_times(&tr);
            for v in 0..12 {
                for &t in &times {
                    if let Some(c) = tr.certificate(v, t) {
                        assert!(verify_infection_path(&inst, &c));
                    }
                }
            }
        }
    }

    fn ev_times(tr: &InfectionTrace) -> Vec<f64> {
        (0..40).map(|k| k as f64 * 0.25).filter(|&t| t <= tr.horizon).collect()
    }

    #[test]
    fn quadrant_is_oriented() {
        let g = Graph::NeQuadrant { n: 3 };
        assert_eq!(g.edge_between(0, 1), Some(0));
        assert_eq!(g.edge_between(0, 3), Some(1));
        assert_eq!(g.edge_between(1, 0), None);
        assert_eq!(g.edge_between(2, 3), None);
    }

    #[test]
    fn scaling_matches_division() {
        let spec = ClosedSetSpec::Ppp { rate: 1.5 };
        let scaled = ClosedSetSpec::Scaled { mu: 0.5, inner: Box::new(spec.clone()) };
        let a = sample_closed_set(&scaled, 0.0, 10.0, Seed(2)).unwrap();
        let b = sample_closed_set(&spec, 0.0, 5.0, Seed(2)).unwrap().scaled(0.5);
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn mean_recovery_delay_for_ppp() {
        let y = sample_closed_set(&ClosedSetSpec::Ppp { rate: 0.5 }, 0.0, 2e4, Seed(8)).unwrap();
        let grid: Vec<f64> = (0..1900).map(|k| k as f64 * 10.0).collect();
        let m = mean_earliest_recovery(&y, &grid).unwrap();
        assert!((m - 2.0).abs() < 0.3, "{m}");
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ClosedSetSpec::Ppp { rate: 0.0 }.validate().is_err());
        assert!(ClosedSetSpec::PeriodicBernoulli { q: 1.0 }.validate().is_err());
        assert!(PointSetWindow::new(0.0, 1.0, vec![0.5, 0.2]).is_err());
        assert!(PointSetWindow::new(0.0, 1.0, vec![1.5]).is_err());
        let bad = serde_json::from_str::<ClosedSetSpec>(r#"{"kind":"ppp","rate":1,"extra":2}"#);
        assert!(bad.is_err());
    }
}
