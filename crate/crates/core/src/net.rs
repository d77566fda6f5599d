//! Undirected simple networks with per-edge formation times, dyad typing and
//! cross-sectional degree constraints.
//!
//! A [`Network`] is purely cross-sectional: when an edge is toggled off the
//! finished spell is handed back to the caller instead of being stored.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unordered pair of distinct nodes, stored as `(min, max)`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dyad {
    a: u32,
    b: u32,
}

impl Dyad {
    /// Panics if `i == j`.
    pub fn new(i: u32, j: u32) -> Self {
        Self::try_new(i, j).expect("a dyad needs two distinct nodes")
    }

    pub fn try_new(i: u32, j: u32) -> Option<Self> {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => Some(Dyad { a: i, b: j }),
            std::cmp::Ordering::Greater => Some(Dyad { a: j, b: i }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn lo(&self) -> u32 {
        self.a
    }

    pub fn hi(&self) -> u32 {
        self.b
    }

    /// Position of this dyad in the lexicographic order of all dyads on `n` nodes.
    pub fn index(&self, n: usize) -> usize {
        let (i, j) = (self.a as usize, self.b as usize);
        i * n - i * (i + 1) / 2 + (j - i - 1)
    }

    /// Inverse of [`Dyad::index`].
    pub fn from_index(idx: usize, n: usize) -> Self {
        debug_assert!(idx < dyad_count(n));
        // Row i starts at offset i*n - i*(i+1)/2. Guess with the closed form and fix rounding.
        let nf = n as f64;
        let disc = (2.0 * nf - 1.0).powi(2) - 8.0 * idx as f64;
        let mut i = (((2.0 * nf - 1.0) - disc.max(0.0).sqrt()) / 2.0).floor() as usize;
        let start = |i: usize| i * n - i * (i + 1) / 2;
        while i > 0 && start(i) > idx {
            i -= 1;
        }
        while i + 1 < n && start(i + 1) <= idx {
            i += 1;
        }
        let j = idx - start(i) + i + 1;
        Dyad {
            a: i as u32,
            b: j as u32,
        }
    }
}

impl fmt::Display for Dyad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.a, self.b)
    }
}

pub fn dyad_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// An edge that was toggled off, with its age in time steps.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Spell {
    pub dyad: Dyad,
    pub age: i64,
}

/// Undirected simple graph on nodes `0..n`.
#[derive(Clone, Debug)]
pub struct Network {
    n: usize,
    /// Sorted neighbor lists; `adj[v].len()` is the cached degree.
    adj: Vec<Vec<u32>>,
    /// Edge -> formation time. Insertion-ordered so edges can be drawn uniformly.
    edges: IndexMap<Dyad, i64>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.edges.len() == other.edges.len()
            && self.edges.iter().all(|(d, t)| other.edges.get(d) == Some(t))
    }
}

impl Network {
    pub fn empty(n: usize) -> Self {
        assert!(n >= 1, "a network needs at least one node");
        assert!(n <= u32::MAX as usize);
        Network {
            n,
            adj: vec![Vec::new(); n],
            edges: IndexMap::new(),
        }
    }

    /// Builds a network whose edges all carry formation time `time`.
    pub fn from_dyads<I: IntoIterator<Item = Dyad>>(n: usize, dyads: I, time: i64) -> Self {
        let mut net = Network::empty(n);
        for d in dyads {
            if !net.has_edge(d) {
                net.toggle(d, time);
            }
        }
        net
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn dyad_count(&self) -> usize {
        dyad_count(self.n)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, v: u32) -> usize {
        self.adj[v as usize].len()
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.adj[v as usize]
    }

    pub fn has_edge(&self, d: Dyad) -> bool {
        self.adj[d.a as usize].binary_search(&d.b).is_ok()
    }

    pub fn formation_time(&self, d: Dyad) -> Option<i64> {
        self.edges.get(&d).copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Dyad, i64)> + '_ {
        self.edges.iter().map(|(d, t)| (*d, *t))
    }

    /// Edges in canonical (lexicographic) order.
    pub fn sorted_edges(&self) -> Vec<(Dyad, i64)> {
        let mut v: Vec<_> = self.edges().collect();
        v.sort_unstable();
        v
    }

    /// The `idx`-th edge in internal order, for uniform edge sampling.
    pub fn edge_at(&self, idx: usize) -> Dyad {
        *self.edges.get_index(idx).expect("edge index out of range").0
    }

    /// Number of common neighbors of `u` and `v`.
    pub fn shared_partners(&self, u: u32, v: u32) -> usize {
        let (mut x, mut y) = (self.neighbors(u).iter(), self.neighbors(v).iter());
        let (mut a, mut b) = (x.next(), y.next());
        let mut count = 0;
        while let (Some(p), Some(q)) = (a, b) {
            match p.cmp(q) {
                std::cmp::Ordering::Less => a = x.next(),
                std::cmp::Ordering::Greater => b = y.next(),
                std::cmp::Ordering::Equal => {
                    count += 1;
                    a = x.next();
                    b = y.next();
                }
            }
        }
        count
    }

    /// Calls `f` for every common neighbor of `u` and `v`.
    pub fn for_each_shared_partner<F: FnMut(u32)>(&self, u: u32, v: u32, mut f: F) {
        let (mut x, mut y) = (self.neighbors(u).iter(), self.neighbors(v).iter());
        let (mut a, mut b) = (x.next(), y.next());
        while let (Some(p), Some(q)) = (a, b) {
            match p.cmp(q) {
                std::cmp::Ordering::Less => a = x.next(),
                std::cmp::Ordering::Greater => b = y.next(),
                std::cmp::Ordering::Equal => {
                    f(*p);
                    a = x.next();
                    b = y.next();
                }
            }
        }
    }

    /// Flips the edge state of `d`. Turning an edge on stamps it with `time`;
    /// turning it off returns the finished spell.
    pub fn toggle(&mut self, d: Dyad, time: i64) -> Option<Spell> {
        let (a, b) = (d.a as usize, d.b as usize);
        debug_assert!(b < self.n);
        match self.adj[a].binary_search(&d.b) {
            Ok(pos) => {
                self.adj[a].remove(pos);
                let pos_b = self.adj[b].binary_search(&d.a).expect("adjacency out of sync");
                self.adj[b].remove(pos_b);
                let formed = self.edges.swap_remove(&d).expect("edge map out of sync");
                debug_assert!(time >= formed, "edge dissolved before it formed");
                Some(Spell {
                    dyad: d,
                    age: time - formed,
                })
            }
            Err(pos) => {
                self.adj[a].insert(pos, d.b);
                let pos_b = self.adj[b].binary_search(&d.a).unwrap_err();
                self.adj[b].insert(pos_b, d.a);
                self.edges.insert(d, time);
                None
            }
        }
    }

    /// Edge-list text: a `nodes=<n>` header, then `i j formation_time` per line,
    /// 1-based node ids, sorted.
    pub fn to_edgelist(&self) -> String {
        let mut out = format!("nodes={}\n", self.n);
        for (d, t) in self.sorted_edges() {
            out.push_str(&format!("{} {} {}\n", d.a + 1, d.b + 1, t));
        }
        out
    }

    pub fn from_edgelist(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty edge list".into()))?;
        let n: usize = header
            .strip_prefix("nodes=")
            .and_then(|s| s.trim().parse().ok())
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Parse(format!("bad header line {header:?}")))?;
        let mut net = Network::empty(n);
        for line in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed = match fields.as_slice() {
                [i, j, t] => i
                    .parse::<u32>()
                    .ok()
                    .zip(j.parse::<u32>().ok())
                    .zip(t.parse::<i64>().ok()),
                _ => None,
            };
            let ((i, j), t) = parsed.ok_or_else(|| Error::Parse(format!("bad edge line {line:?}")))?;
            if i == 0 || j == 0 || i as usize > n || j as usize > n {
                return Err(Error::Parse(format!("node id out of range in {line:?}")));
            }
            let d = Dyad::try_new(i - 1, j - 1)
                .ok_or_else(|| Error::Parse(format!("self-loop in {line:?}")))?;
            if net.has_edge(d) {
                return Err(Error::Parse(format!("duplicate edge in {line:?}")));
            }
            net.toggle(d, t);
        }
        Ok(net)
    }
}

/// Maps each dyad to a positive type index using only its endpoint labels.
#[derive(Clone, Debug, PartialEq)]
pub enum DyadTyper {
    /// Every dyad has type 1.
    Homogeneous,
    /// Type 1 for same-label dyads, type 2 otherwise.
    Match(Arc<[u32]>),
    /// One type per unordered label pair `{a, b}`; labels must be `< n_labels`.
    LabelPair { labels: Arc<[u32]>, n_labels: u32 },
}

impl DyadTyper {
    pub fn type_count(&self) -> usize {
        match self {
            DyadTyper::Homogeneous => 1,
            DyadTyper::Match(_) => 2,
            DyadTyper::LabelPair { n_labels, .. } => {
                let m = *n_labels as usize;
                m * (m + 1) / 2
            }
        }
    }

    /// 1-based dyad type.
    pub fn type_of(&self, d: Dyad) -> usize {
        match self {
            DyadTyper::Homogeneous => 1,
            DyadTyper::Match(labels) => {
                if labels[d.a as usize] == labels[d.b as usize] {
                    1
                } else {
                    2
                }
            }
            DyadTyper::LabelPair { labels, n_labels } => {
                let (x, y) = (labels[d.a as usize], labels[d.b as usize]);
                let (lo, hi) = (x.min(y) as usize, x.max(y) as usize);
                let m = *n_labels as usize;
                lo * m - lo * lo.saturating_sub(1) / 2 + (hi - lo) + 1
            }
        }
    }

    /// Checks that any labels cover all `n` nodes.
    pub fn check_nodes(&self, n: usize) -> Result<()> {
        let labels = match self {
            DyadTyper::Homogeneous => return Ok(()),
            DyadTyper::Match(l) => l,
            DyadTyper::LabelPair { labels, n_labels } => {
                if let Some(bad) = labels.iter().find(|&&l| l >= *n_labels) {
                    return Err(Error::InvalidArgument(format!(
                        "label {bad} out of range for {n_labels} labels"
                    )));
                }
                labels
            }
        };
        if labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "typer has {} labels for {n} nodes",
                labels.len()
            )));
        }
        Ok(())
    }
}

/// Cross-sectional constraint on the instantaneous network.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    #[default]
    None,
    MaxDegree(u32),
    MinDegree(u32),
}

impl Constraint {
    /// Whether the single-toggle graph over valid states is connected, so that
    /// cross-sectional exactness results apply.
    pub fn connects_state_space(&self) -> bool {
        true
    }

    /// Whether every non-fixed edge of a valid state can be toggled off while
    /// staying valid, so that durational exactness results apply.
    pub fn permits_free_dissolution(&self) -> bool {
        matches!(self, Constraint::None | Constraint::MaxDegree(_))
    }

    pub fn degree_ok(&self, deg: usize) -> bool {
        match *self {
            Constraint::None => true,
            Constraint::MaxDegree(b) => deg <= b as usize,
            Constraint::MinDegree(b) => deg >= b as usize,
        }
    }

    pub fn is_valid(&self, net: &Network) -> bool {
        match self {
            Constraint::None => true,
            _ => (0..net.node_count() as u32).all(|v| self.degree_ok(net.degree(v))),
        }
    }

    /// Validity of the network obtained by toggling `d`, assuming `net` is valid.
    pub fn toggle_is_valid(&self, net: &Network, d: Dyad) -> bool {
        let on = net.has_edge(d);
        match *self {
            Constraint::None => true,
            Constraint::MaxDegree(b) => {
                on || (net.degree(d.lo()) < b as usize && net.degree(d.hi()) < b as usize)
            }
            Constraint::MinDegree(b) => {
                !on || (net.degree(d.lo()) > b as usize && net.degree(d.hi()) > b as usize)
            }
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::None => write!(f, "none"),
            Constraint::MaxDegree(b) => write!(f, "max-degree({b})"),
            Constraint::MinDegree(b) => write!(f, "min-degree({b})"),
        }
    }
}

impl FromStr for Constraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "none" {
            return Ok(Constraint::None);
        }
        let parse_arg = |prefix: &str| -> Option<u32> {
            s.strip_prefix(prefix)?
                .strip_prefix('(')?
                .strip_suffix(')')?
                .trim()
                .parse()
                .ok()
        };
        if let Some(b) = parse_arg("max-degree") {
            return Ok(Constraint::MaxDegree(b));
        }
        if let Some(b) = parse_arg("min-degree") {
            return Ok(Constraint::MinDegree(b));
        }
        Err(Error::Parse(format!("unknown constraint {s:?}")))
    }
}
