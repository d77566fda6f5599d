//! Cross-sectional ergm sampling with a tie/no-tie Metropolis-Hastings
//! proposal, plus the Bernoulli starting networks used by the simulators.

use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::net::{dyad_count, Constraint, Dyad, Network};
use crate::stats::{Model, StatTracker};

pub(crate) fn uniform_dyad<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Dyad {
    Dyad::from_index(rng.random_range(0..dyad_count(n)), n)
}

/// Calls `f(index)` for each index in `0..len` kept independently with probability `p`.
pub(crate) fn bernoulli_indices<R: Rng + ?Sized, F: FnMut(usize)>(
    len: usize,
    p: f64,
    rng: &mut R,
    mut f: F,
) {
    if len == 0 || !(p > 0.0) {
        return;
    }
    if p >= 1.0 {
        (0..len).for_each(f);
        return;
    }
    let geom = Geometric::new(p).expect("probability in (0, 1)");
    let mut idx: u64 = geom.sample(rng);
    while (idx as usize) < len {
        f(idx as usize);
        idx = idx.saturating_add(1).saturating_add(geom.sample(rng));
    }
}

/// Independent Bernoulli(`p`) edges on every dyad, all stamped with `time`.
pub fn bernoulli_network<R: Rng + ?Sized>(n: usize, p: f64, time: i64, rng: &mut R) -> Network {
    let mut net = Network::empty(n);
    bernoulli_indices(dyad_count(n), p, rng, |idx| {
        net.toggle(Dyad::from_index(idx, n), time);
    });
    net
}

/// Tie/no-tie Metropolis-Hastings sampler for `exp(theta . g(y))` on the
/// networks satisfying `constraint`.
///
/// With probability 1/2 a uniformly chosen edge is proposed for removal,
/// otherwise a uniformly chosen dyad is toggled. With no edges, the dyad
/// branch is taken with probability 1.
#[derive(Clone, Debug)]
pub struct ErgmSampler {
    pub model: Model,
    pub constraint: Constraint,
}

impl ErgmSampler {
    pub fn new(model: Model, constraint: Constraint) -> Self {
        ErgmSampler { model, constraint }
    }

    /// Probability that the proposal picks `d` from `net`.
    pub fn proposal_prob(net: &Network, d: Dyad) -> f64 {
        let n_dyads = net.dyad_count() as f64;
        let m = net.edge_count();
        if m == 0 {
            1.0 / n_dyads
        } else if net.has_edge(d) {
            0.5 / m as f64 + 0.5 / n_dyads
        } else {
            0.5 / n_dyads
        }
    }

    /// One proposal; returns whether it was accepted.
    pub fn step<R: Rng + ?Sized>(
        &self,
        net: &mut Network,
        rng: &mut R,
        tracker: Option<&mut StatTracker>,
    ) -> bool {
        let n = net.node_count();
        if n < 2 {
            return false;
        }
        let m = net.edge_count();
        let d = if m > 0 && rng.random::<f64>() < 0.5 {
            net.edge_at(rng.random_range(0..m))
        } else {
            uniform_dyad(n, rng)
        };
        if !self.constraint.toggle_is_valid(net, d) {
            return false;
        }
        let on = net.has_edge(d);
        let fwd = Self::proposal_prob(net, d);
        let n_dyads = net.dyad_count() as f64;
        let rev = if on {
            if m - 1 == 0 {
                1.0 / n_dyads
            } else {
                0.5 / n_dyads
            }
        } else {
            0.5 / (m + 1) as f64 + 0.5 / n_dyads
        };
        let lo = self.model.conditional_logodds(net, d);
        let log_ratio = if on { -lo } else { lo } + (rev / fwd).ln();
        if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
            if let Some(t) = tracker {
                t.before_toggle(net, d);
            }
            net.toggle(d, 0);
            true
        } else {
            false
        }
    }

    pub fn run<R: Rng + ?Sized>(
        &self,
        net: &mut Network,
        proposals: usize,
        rng: &mut R,
        mut tracker: Option<&mut StatTracker>,
    ) -> usize {
        (0..proposals)
            .filter(|_| self.step(net, rng, tracker.as_deref_mut()))
            .count()
    }

    /// Records `samples` statistic vectors, `interval` proposals apart, after
    /// `burn_in` proposals. Returns one column per term of `monitored`.
    pub fn sample_stats<R: Rng + ?Sized>(
        &self,
        net: &mut Network,
        monitored: &[crate::stats::Term],
        burn_in: usize,
        samples: usize,
        interval: usize,
        rng: &mut R,
    ) -> Vec<Vec<f64>> {
        let mut tracker = StatTracker::new(monitored.to_vec(), net);
        self.run(net, burn_in, rng, Some(&mut tracker));
        let mut cols = vec![Vec::with_capacity(samples); monitored.len()];
        for _ in 0..samples {
            self.run(net, interval, rng, Some(&mut tracker));
            for (c, v) in cols.iter_mut().zip(tracker.values()) {
                c.push(*v);
            }
        }
        cols
    }
}
