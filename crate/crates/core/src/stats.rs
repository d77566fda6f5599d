//! Network statistics, their change statistics, and ergm potentials.
//!
//! All statistics are returned as `f64`. Integer-valued statistics are exact
//! in double precision at every network size this crate handles.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::net::{Dyad, DyadTyper, Network};

/// Named per-node categorical attributes available to `nodematch` terms.
pub type NodeAttributes = BTreeMap<String, Arc<[u32]>>;

#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    Edges,
    /// Number of nodes with degree exactly `k`.
    Degree(u32),
    /// Geometrically weighted edgewise shared partners with fixed decay.
    Gwesp(f64),
    /// Edges whose endpoints share the attribute value.
    Nodematch { attr: String, labels: Arc<[u32]> },
    /// Edges of dyad type `k` under the given typer. Used to carry per-type
    /// duration offsets in formation models.
    DyadType { typer: DyadTyper, k: usize },
}

impl Term {
    /// Parses `edges`, `degree(k)`, `gwesp(alpha)` or `nodematch(attr)`.
    pub fn parse(spec: &str, attrs: &NodeAttributes) -> Result<Term> {
        let spec = spec.trim();
        if spec == "edges" {
            return Ok(Term::Edges);
        }
        let (name, arg) = spec
            .strip_suffix(')')
            .and_then(|s| s.split_once('('))
            .ok_or_else(|| Error::Parse(format!("unknown term {spec:?}")))?;
        let arg = arg.trim();
        match name.trim() {
            "degree" => arg
                .parse()
                .map(Term::Degree)
                .map_err(|_| Error::Parse(format!("bad degree argument in {spec:?}"))),
            "gwesp" => {
                // Accept the long form "gwesp(0.5, fixed = TRUE)" too.
                let alpha = arg.split(',').next().unwrap_or("").trim();
                match alpha.parse::<f64>() {
                    Ok(a) if a >= 0.0 && a.is_finite() => Ok(Term::Gwesp(a)),
                    _ => Err(Error::Parse(format!("bad gwesp decay in {spec:?}"))),
                }
            }
            "nodematch" => {
                let labels = attrs
                    .get(arg)
                    .ok_or_else(|| Error::Parse(format!("unknown attribute {arg:?}")))?;
                Ok(Term::Nodematch {
                    attr: arg.to_string(),
                    labels: labels.clone(),
                })
            }
            _ => Err(Error::Parse(format!("unknown term {spec:?}"))),
        }
    }

    /// True when the change statistic never depends on other dyads.
    pub fn is_dyad_independent(&self) -> bool {
        matches!(self, Term::Edges | Term::Nodematch { .. } | Term::DyadType { .. })
    }

    pub fn stat(&self, net: &Network) -> f64 {
        match self {
            Term::Edges => net.edge_count() as f64,
            Term::Degree(k) => (0..net.node_count() as u32)
                .filter(|&v| net.degree(v) == *k as usize)
                .count() as f64,
            Term::Gwesp(alpha) => net
                .edges()
                .map(|(d, _)| gwesp_weight(*alpha, net.shared_partners(d.lo(), d.hi())))
                .sum(),
            Term::Nodematch { labels, .. } => net
                .edges()
                .filter(|(d, _)| labels[d.lo() as usize] == labels[d.hi() as usize])
                .count() as f64,
            Term::DyadType { typer, k } => {
                net.edges().filter(|(d, _)| typer.type_of(*d) == *k).count() as f64
            }
        }
    }

    /// `stat(net with d on) - stat(net with d off)`, whatever the current state of `d`.
    pub fn change_stat(&self, net: &Network, d: Dyad) -> f64 {
        match self {
            Term::Edges => 1.0,
            Term::Degree(k) => {
                let on = net.has_edge(d) as usize;
                let k = *k as usize;
                [d.lo(), d.hi()]
                    .iter()
                    .map(|&v| {
                        let without = net.degree(v) - on;
                        (without + 1 == k) as i32 - (without == k) as i32
                    })
                    .sum::<i32>() as f64
            }
            Term::Gwesp(alpha) => gwesp_change(*alpha, net, d),
            Term::Nodematch { labels, .. } => {
                (labels[d.lo() as usize] == labels[d.hi() as usize]) as u8 as f64
            }
            Term::DyadType { typer, k } => (typer.type_of(d) == *k) as u8 as f64,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Edges => write!(f, "edges"),
            Term::Degree(k) => write!(f, "degree({k})"),
            Term::Gwesp(a) => write!(f, "gwesp({a})"),
            Term::Nodematch { attr, .. } => write!(f, "nodematch({attr})"),
            Term::DyadType { k, .. } => write!(f, "dyadtype({k})"),
        }
    }
}

/// Weight `e^a (1 - (1 - e^-a)^s)` given to an edge with `s` shared partners.
pub fn gwesp_weight(alpha: f64, shared: usize) -> f64 {
    let r = 1.0 - (-alpha).exp();
    alpha.exp() * (1.0 - r.powi(shared as i32))
}

fn gwesp_change(alpha: f64, net: &Network, d: Dyad) -> f64 {
    let (u, v) = (d.lo(), d.hi());
    let on = net.has_edge(d) as usize;
    let mut delta = 0.0;
    let mut shared = 0;
    net.for_each_shared_partner(u, v, |w| {
        shared += 1;
        // With d absent, the edges (u,w) and (v,w) lose v resp. u as a shared partner.
        for x in [u, v] {
            let sp = net.shared_partners(x, w) - on;
            delta += gwesp_weight(alpha, sp + 1) - gwesp_weight(alpha, sp);
        }
    });
    delta + gwesp_weight(alpha, shared)
}

/// Evaluates `coef * value` with the convention `0 * inf = 0`.
fn weighted(coef: f64, value: f64) -> f64 {
    if value == 0.0 {
        0.0
    } else {
        coef * value
    }
}

/// Terms with coefficients, defining the potential `theta . g(y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    terms: Vec<Term>,
    coefs: Vec<f64>,
}

impl Model {
    pub fn new(terms: Vec<Term>, coefs: Vec<f64>) -> Result<Self> {
        if terms.len() != coefs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} terms but {} coefficients",
                terms.len(),
                coefs.len()
            )));
        }
        if coefs.iter().any(|c| c.is_nan()) {
            return Err(Error::InvalidArgument("NaN coefficient".into()));
        }
        Ok(Model { terms, coefs })
    }

    pub fn edges_only(theta: f64) -> Self {
        Model {
            terms: vec![Term::Edges],
            coefs: vec![theta],
        }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn coefs(&self) -> &[f64] {
        &self.coefs
    }

    pub fn with_coefs(&self, coefs: Vec<f64>) -> Result<Self> {
        Model::new(self.terms.clone(), coefs)
    }

    /// Appends a term; used to build formation models from an ergm.
    pub fn push(&mut self, term: Term, coef: f64) {
        self.terms.push(term);
        self.coefs.push(coef);
    }

    /// Dyad-independent once terms with zero coefficient are ignored.
    pub fn is_dyad_independent(&self) -> bool {
        self.terms
            .iter()
            .zip(&self.coefs)
            .all(|(t, &c)| c == 0.0 || t.is_dyad_independent())
    }

    pub fn potential(&self, net: &Network) -> f64 {
        self.terms
            .iter()
            .zip(&self.coefs)
            .map(|(t, &c)| if c == 0.0 { 0.0 } else { weighted(c, t.stat(net)) })
            .sum()
    }

    /// `log[pi(net with d on) / pi(net with d off)]`.
    pub fn conditional_logodds(&self, net: &Network, d: Dyad) -> f64 {
        self.terms
            .iter()
            .zip(&self.coefs)
            .map(|(t, &c)| if c == 0.0 { 0.0 } else { weighted(c, t.change_stat(net, d)) })
            .sum()
    }

    /// `pi(j) / pi(i)`; defined whether or not `j` satisfies any constraint.
    pub fn potential_ratio(&self, net_i: &Network, net_j: &Network) -> f64 {
        debug_assert_eq!(net_i.node_count(), net_j.node_count());
        (self.potential(net_j) - self.potential(net_i)).exp()
    }

    /// One `term=<spec>, coef=<real>` entry per line.
    pub fn to_file_string(&self) -> String {
        self.terms
            .iter()
            .zip(&self.coefs)
            .map(|(t, c)| format!("term={t}, coef={c}\n"))
            .collect()
    }

    pub fn parse_file(text: &str, attrs: &NodeAttributes) -> Result<Self> {
        let mut terms = Vec::new();
        let mut coefs = Vec::new();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            // The term spec may itself contain commas, so split on the coef key.
            let (term_part, coef_part) = line
                .rsplit_once("coef=")
                .ok_or_else(|| Error::Parse(format!("missing coef= in {raw:?}")))?;
            let spec = term_part
                .trim()
                .trim_end_matches(',')
                .trim()
                .strip_prefix("term=")
                .ok_or_else(|| Error::Parse(format!("missing term= in {raw:?}")))?;
            let coef: f64 = coef_part
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad coefficient in {raw:?}")))?;
            terms.push(Term::parse(spec, attrs)?);
            coefs.push(coef);
        }
        if terms.is_empty() {
            return Err(Error::Parse("model file has no terms".into()));
        }
        Model::new(terms, coefs)
    }
}

/// All statistics of `terms` on `net`.
pub fn stat_vector(terms: &[Term], net: &Network) -> Vec<f64> {
    terms.iter().map(|t| t.stat(net)).collect()
}

/// Keeps monitored statistics current under single-dyad toggles.
#[derive(Clone, Debug)]
pub struct StatTracker {
    terms: Vec<Term>,
    values: Vec<f64>,
}

impl StatTracker {
    pub fn new(terms: Vec<Term>, net: &Network) -> Self {
        let values = stat_vector(&terms, net);
        StatTracker { terms, values }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Call immediately before `net.toggle(d, ..)`.
    pub fn before_toggle(&mut self, net: &Network, d: Dyad) {
        let sign = if net.has_edge(d) { -1.0 } else { 1.0 };
        for (t, v) in self.terms.iter().zip(self.values.iter_mut()) {
            *v += sign * t.change_stat(net, d);
        }
    }
}
