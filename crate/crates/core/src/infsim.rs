//! The infinitesimal-time chain R: each step toggles at most one dyad, with
//! off-toggle rate `1/D_k` and on-toggle rate `(pi(j)/pi(i)) / D_k`, where
//! `D_k = lambda * D0_k`. It satisfies detailed balance with respect to the
//! ergm distribution, and every free edge dissolves with probability exactly
//! `1/D_k` per step.
//!
//! Simulation proposes a dyad with probability `P(j|i) >= R_ij` and accepts
//! with probability `R_ij / P(j|i)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::durations::DurationSpec;
use crate::error::{Error, Result};
use crate::net::{Constraint, Dyad, Network, Spell};
use crate::record::{RunOptions, SimulationRecord, SpellRecord};
use crate::sampler::{uniform_dyad, ErgmSampler};
use crate::stats::{Model, StatTracker, Term};

/// Slack allowed before an acceptance ratio counts as exceeding one.
pub const OVERFLOW_TOLERANCE: f64 = 1e-12;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    /// Every dyad with probability `1/N`.
    RandomToggle,
    /// A non-edge with probability `1/2N`, an edge with `1/2N_E + 1/2N`.
    TntAnalogue,
}

impl fmt::Display for ProposalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProposalKind::RandomToggle => "random-toggle",
            ProposalKind::TntAnalogue => "tnt-analogue",
        })
    }
}

impl FromStr for ProposalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random-toggle" | "random_toggle" => Ok(ProposalKind::RandomToggle),
            "tnt-analogue" | "tnt_analogue" => Ok(ProposalKind::TntAnalogue),
            other => Err(Error::Parse(format!("unknown proposal {other:?}"))),
        }
    }
}

/// `lambda = N / D0`: makes the random-toggle off-toggle acceptance exactly one.
pub fn lambda_min_random_toggle(n_dyads: usize, d0: f64) -> f64 {
    n_dyads as f64 / d0
}

/// `lambda = (2 / D0) * max(N * N_E / (N + N_E), c * N)`.
pub fn lambda_tnt_analogue(n_dyads: usize, edge_bound: usize, c: f64, d0: f64) -> Result<f64> {
    check_odds_bound(c)?;
    if edge_bound == 0 || edge_bound > n_dyads {
        return Err(Error::InvalidArgument(format!(
            "edge bound {edge_bound} outside 1..={n_dyads}"
        )));
    }
    let (n, ne) = (n_dyads as f64, edge_bound as f64);
    Ok(2.0 / d0 * (n * ne / (n + ne)).max(c * n))
}

fn check_odds_bound(c: f64) -> Result<()> {
    if c > 0.0 && c <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("odds bound must lie in (0, 1], got {c}")))
    }
}

#[derive(Clone, Debug)]
pub struct RSpec {
    pub model: Model,
    pub constraint: Constraint,
    /// Base durations `D0` (natural units) and the scale `lambda`.
    pub durations: DurationSpec,
    pub odds_bound: f64,
    pub edge_bound: Option<usize>,
    pub proposal: ProposalKind,
}

impl RSpec {
    /// Chooses `lambda` from the proposal's formula using the smallest base
    /// duration, times `safety >= 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_auto_lambda(
        model: Model,
        constraint: Constraint,
        base: &DurationSpec,
        odds_bound: f64,
        edge_bound: Option<usize>,
        proposal: ProposalKind,
        n_nodes: usize,
        safety: f64,
    ) -> Result<Self> {
        check_odds_bound(odds_bound)?;
        let n_dyads = crate::net::dyad_count(n_nodes);
        let d0 = base.min_base();
        let lambda = match proposal {
            ProposalKind::RandomToggle => lambda_min_random_toggle(n_dyads, d0),
            ProposalKind::TntAnalogue => {
                lambda_tnt_analogue(n_dyads, edge_bound.unwrap_or(n_dyads).min(n_dyads), odds_bound, d0)?
            }
        };
        Ok(RSpec {
            model,
            constraint,
            durations: base.with_lambda(lambda * safety.max(1.0))?,
            odds_bound,
            edge_bound,
            proposal,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.durations.lambda()
    }

    fn effective_edge_bound(&self, n_dyads: usize) -> usize {
        self.edge_bound.unwrap_or(n_dyads).min(n_dyads)
    }

    /// `P(j|i)` for the network `j` that toggles `d`.
    pub fn proposal_prob(&self, net: &Network, d: Dyad) -> f64 {
        let n = net.dyad_count() as f64;
        match self.proposal {
            ProposalKind::RandomToggle => 1.0 / n,
            ProposalKind::TntAnalogue => {
                if net.has_edge(d) {
                    let ne = self.effective_edge_bound(net.dyad_count()) as f64;
                    0.5 / ne + 0.5 / n
                } else {
                    0.5 / n
                }
            }
        }
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        check_odds_bound(self.odds_bound)?;
        self.durations.typer().check_nodes(net.node_count())?;
        if !self.constraint.is_valid(net) {
            return Err(Error::InvalidArgument(format!(
                "initial network violates constraint {}",
                self.constraint
            )));
        }
        if let Some(b) = self.edge_bound {
            if net.edge_count() > b {
                return Err(Error::InvalidArgument(format!(
                    "initial network has {} edges, above the bound {b}",
                    net.edge_count()
                )));
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model.to_file_string(),
            "durations": self.durations.summary(),
            "constraint": self.constraint.to_string(),
            "odds_bound": self.odds_bound,
            "edge_bound": self.edge_bound,
            "proposal": self.proposal,
        })
    }
}

/// Off-diagonal entry `R_ij` for the network `j` that toggles `d`. Zero when
/// `j` is invalid, or when it would exceed the edge bound.
pub fn r_rate(spec: &RSpec, net: &Network, d: Dyad) -> f64 {
    if !spec.constraint.toggle_is_valid(net, d) {
        return 0.0;
    }
    let dk = spec.durations.duration_of(d);
    if net.has_edge(d) {
        1.0 / dk
    } else {
        if let Some(b) = spec.edge_bound {
            if net.edge_count() >= b {
                return 0.0;
            }
        }
        spec.model.conditional_logodds(net, d).exp() / dk
    }
}

/// Result of one step of the chain.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub proposed: Option<Dyad>,
    pub accepted: bool,
    /// `R_ij / P(j|i)` of the proposal, 0 when nothing was proposed.
    pub ratio: f64,
    /// The finished spell when an edge was dissolved.
    pub spell: Option<Spell>,
}

/// One step: draw a dyad (or nothing) from the proposal and accept with
/// probability `R_ij / P(j|i)`.
pub fn step_r<R: Rng + ?Sized>(
    spec: &RSpec,
    net: &mut Network,
    time: i64,
    rng: &mut R,
    tracker: Option<&mut StatTracker>,
) -> Result<StepOutcome> {
    let n = net.node_count();
    let proposed = match spec.proposal {
        ProposalKind::RandomToggle => Some(uniform_dyad(n, rng)),
        ProposalKind::TntAnalogue => {
            if rng.random::<f64>() < 0.5 {
                Some(uniform_dyad(n, rng))
            } else {
                let slot = rng.random_range(0..spec.effective_edge_bound(net.dyad_count()));
                (slot < net.edge_count()).then(|| net.edge_at(slot))
            }
        }
    };
    let Some(d) = proposed else {
        return Ok(StepOutcome {
            proposed: None,
            accepted: false,
            ratio: 0.0,
            spell: None,
        });
    };
    let rate = r_rate(spec, net, d);
    let ratio = rate / spec.proposal_prob(net, d);
    if ratio > 1.0 + OVERFLOW_TOLERANCE || ratio.is_nan() {
        return Err(Error::AcceptanceOverflow {
            ratio,
            kind: if net.has_edge(d) { "off" } else { "on" },
            a: d.lo() + 1,
            b: d.hi() + 1,
        });
    }
    let accepted = ratio > 0.0 && (ratio >= 1.0 || rng.random::<f64>() < ratio);
    let mut spell = None;
    if accepted {
        if let Some(t) = tracker {
            t.before_toggle(net, d);
        }
        spell = net.toggle(d, time);
    }
    Ok(StepOutcome {
        proposed,
        accepted,
        ratio,
        spell,
    })
}

/// Settings and realized behavior of an R run.
#[derive(Clone, Debug, Serialize)]
pub struct LambdaReport {
    pub lambda: f64,
    pub odds_bound: f64,
    pub edge_bound: Option<usize>,
    pub proposal: ProposalKind,
    pub max_acceptance_ratio: f64,
    /// Fraction of steps spent at the edge bound.
    pub boundary_fraction: f64,
    /// Natural time units covered by one step.
    pub time_per_step: f64,
}

/// Runs `burn_in + steps` steps of R from `initial`, recording `monitored`
/// every `thin` steps. One step spans `1/lambda` natural time units.
pub fn simulate_r(
    spec: &RSpec,
    initial: &Network,
    opts: RunOptions,
    monitored: &[Term],
    seed: u64,
) -> Result<(SimulationRecord, LambdaReport)> {
    spec.validate(initial)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = initial.clone();
    let typer = spec.durations.typer().clone();
    let mut tracker = StatTracker::new(monitored.to_vec(), &net);
    let mut config = spec.describe();
    config["run"] = serde_json::to_value(opts).expect("options serialize");
    let mut rec = SimulationRecord::new(
        monitored.iter().map(|t| t.to_string()).collect(),
        spec.durations.type_count(),
        seed,
        config,
    );
    let mut per_type = vec![0u64; spec.durations.type_count()];
    for (d, _) in net.edges() {
        per_type[typer.type_of(d) - 1] += 1;
    }
    let bound = spec.edge_bound;
    let mut max_ratio: f64 = 0.0;
    let mut at_boundary = 0u64;
    let total = opts.burn_in + opts.steps;
    for step in 1..=total {
        let time = step as i64;
        let post = step > opts.burn_in;
        if post {
            // Edges present at the start of the step are at risk.
            for (acc, c) in rec.at_risk.iter_mut().zip(&per_type) {
                *acc += c;
            }
            if bound == Some(net.edge_count()) {
                at_boundary += 1;
            }
        }
        let out = step_r(spec, &mut net, time, &mut rng, Some(&mut tracker))?;
        max_ratio = max_ratio.max(out.ratio);
        if out.accepted {
            let d = out.proposed.expect("accepted a proposal");
            let k = typer.type_of(d);
            match out.spell {
                Some(spell) => {
                    per_type[k - 1] -= 1;
                    if post {
                        rec.record_dissolution(k, spell.age, opts.keep_spells);
                    }
                }
                None => per_type[k - 1] += 1,
            }
        }
        if step % opts.thin == 0 {
            if !post {
                rec.burn_in_rows += 1;
            }
            rec.push_row(step as u64, tracker.values());
        }
    }
    let end = total as i64;
    if opts.keep_spells {
        for (d, formed) in net.sorted_edges() {
            rec.censored_spells.push(SpellRecord {
                dyad_type: typer.type_of(d),
                age: end - formed + 1,
            });
        }
    }
    let report = LambdaReport {
        lambda: spec.lambda(),
        odds_bound: spec.odds_bound,
        edge_bound: spec.edge_bound,
        proposal: spec.proposal,
        max_acceptance_ratio: max_ratio,
        boundary_fraction: if opts.steps > 0 {
            at_boundary as f64 / opts.steps as f64
        } else {
            0.0
        },
        time_per_step: 1.0 / spec.lambda(),
    };
    if report.boundary_fraction > 0.01 {
        log::warn!(
            "chain spent {:.1}% of steps at the edge bound; consider raising it",
            100.0 * report.boundary_fraction
        );
    }
    Ok((rec, report))
}

/// Pilot estimate of the odds bound: twice the largest conditional edge odds
/// seen over `pilot` ergm sampler proposals, capped at one.
pub fn estimate_odds_bound(
    model: &Model,
    constraint: Constraint,
    initial: &Network,
    pilot: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = ErgmSampler::new(model.clone(), constraint);
    let mut net = initial.clone();
    let mut max_lo = f64::NEG_INFINITY;
    for _ in 0..pilot {
        let d = uniform_dyad(net.node_count(), &mut rng);
        if !net.has_edge(d) {
            max_lo = max_lo.max(model.conditional_logodds(&net, d));
        }
        sampler.step(&mut net, &mut rng, None);
    }
    (2.0 * max_lo.exp()).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcstats::ks_geometric;

    fn spec(model: Model, constraint: Constraint, d: f64, proposal: ProposalKind) -> RSpec {
        RSpec {
            model,
            constraint,
            durations: DurationSpec::homogeneous(d).unwrap(),
            odds_bound: 1.0,
            edge_bound: None,
            proposal,
        }
    }

    #[test]
    fn rate_examples() {
        let s = spec(Model::edges_only(-1.3), Constraint::None, 7.0, ProposalKind::RandomToggle);
        let net = Network::from_dyads(4, [Dyad::new(0, 1)], 0);
        assert_eq!(r_rate(&s, &net, Dyad::new(0, 1)), 1.0 / 7.0);
        assert!((r_rate(&s, &net, Dyad::new(2, 3)) - (-1.3f64).exp() / 7.0).abs() < 1e-16);
        let capped = spec(Model::edges_only(-1.3), Constraint::MaxDegree(1), 7.0, ProposalKind::RandomToggle);
        assert_eq!(r_rate(&capped, &net, Dyad::new(1, 2)), 0.0);
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_min_random_toggle(45, 5.0), 9.0);
        assert_eq!(lambda_min_random_toggle(1, 1.0), 1.0);
        assert!((lambda_tnt_analogue(10, 4, 0.3, 5.0).unwrap() - 1.2).abs() < 1e-12);
        // Sparse odds: the edge term dominates.
        let l = lambda_tnt_analogue(100, 10, 0.05, 1.0).unwrap();
        assert!((l - 2.0 * 1000.0 / 110.0).abs() < 1e-12);
        // Monotone in the edge bound up to N.
        let ls: Vec<f64> = (1..=100).map(|ne| lambda_tnt_analogue(100, ne, 0.3, 2.0).unwrap()).collect();
        assert!(ls.windows(2).all(|w| w[1] >= w[0]));
        assert!(lambda_tnt_analogue(10, 11, 0.3, 5.0).is_err());
        assert!(lambda_tnt_analogue(10, 4, 1.5, 5.0).is_err());
    }

    #[test]
    fn random_toggle_acceptance() {
        let theta = -0.7;
        let s = RSpec::with_auto_lambda(
            Model::edges_only(theta),
            Constraint::None,
            &DurationSpec::homogeneous(3.0).unwrap(),
            1.0,
            None,
            ProposalKind::RandomToggle,
            5,
            1.0,
        )
        .unwrap();
        let net = Network::from_dyads(5, [Dyad::new(0, 1)], 0);
        let on = r_rate(&s, &net, Dyad::new(2, 3)) / s.proposal_prob(&net, Dyad::new(2, 3));
        let off = r_rate(&s, &net, Dyad::new(0, 1)) / s.proposal_prob(&net, Dyad::new(0, 1));
        assert!((on - theta.exp()).abs() < 1e-14);
        assert!((off - 1.0).abs() < 1e-14);
    }

    #[test]
    fn off_toggle_probability_is_one_over_d() {
        // Composition of proposal and acceptance for every edge of a few states.
        let model = Model::new(vec![Term::Edges, Term::Degree(1)], vec![-1.0, 0.8]).unwrap();
        let s = RSpec::with_auto_lambda(
            model,
            Constraint::None,
            &DurationSpec::homogeneous(2.0).unwrap(),
            1.0,
            Some(4),
            ProposalKind::TntAnalogue,
            5,
            1.0,
        )
        .unwrap();
        let d = s.durations.duration(1);
        for edges in [vec![Dyad::new(0, 1)], vec![Dyad::new(0, 1), Dyad::new(1, 2), Dyad::new(3, 4)]] {
            let net = Network::from_dyads(5, edges.clone(), 0);
            for e in edges {
                let p = s.proposal_prob(&net, e) * (r_rate(&s, &net, e) / s.proposal_prob(&net, e)).min(1.0);
                assert!((p - 1.0 / d).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn overflow_is_an_error() {
        let mut s = spec(Model::edges_only(0.0), Constraint::None, 2.0, ProposalKind::RandomToggle);
        s.durations = DurationSpec::homogeneous(2.0).unwrap();
        let mut net = Network::from_dyads(5, [Dyad::new(0, 1)], 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut saw = false;
        for t in 1..200 {
            match step_r(&s, &mut net, t, &mut rng, None) {
                Err(Error::AcceptanceOverflow { ratio, .. }) => {
                    assert!(ratio > 1.0);
                    saw = true;
                    break;
                }
                Err(e) => panic!("{e}"),
                Ok(_) => {}
            }
        }
        assert!(saw);
    }

    #[test]
    fn constrained_toggle_always_rejected() {
        let s = spec(Model::edges_only(0.0), Constraint::MaxDegree(0), 10.0, ProposalKind::RandomToggle);
        let (rec, _) = simulate_r(&s, &Network::empty(2), RunOptions::new(0, 1000), &[Term::Edges], 3).unwrap();
        assert!(rec.stat_series[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_dyad_spells_geometric() {
        let s = spec(Model::edges_only(0.0), Constraint::None, 5.0, ProposalKind::RandomToggle);
        let (rec, report) = simulate_r(&s, &Network::empty(2), RunOptions::new(0, 120_000), &[Term::Edges], 4).unwrap();
        let ages: Vec<i64> = rec.completed_spells.iter().map(|s| s.age).collect();
        assert!(ages.len() > 10_000);
        assert!(ks_geometric(&ages, 0.2, 0.01).pass);
        assert!(report.max_acceptance_ratio <= 1.0);
        let est = rec.mean_duration_estimates()[&1];
        assert!((est.hazard_inverse / 5.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn edge_bound_respected() {
        let mut s = RSpec::with_auto_lambda(
            Model::edges_only(0.0),
            Constraint::None,
            &DurationSpec::homogeneous(1.0).unwrap(),
            1.0,
            Some(3),
            ProposalKind::TntAnalogue,
            6,
            1.0,
        )
        .unwrap();
        s.edge_bound = Some(3);
        let (rec, report) = simulate_r(&s, &Network::empty(6), RunOptions::new(0, 20_000), &[Term::Edges], 5).unwrap();
        assert!(rec.stat_series[0].iter().all(|&x| x <= 3.0));
        assert!(report.boundary_fraction > 0.0);
    }

    #[test]
    fn reproducible() {
        let model = Model::new(vec![Term::Edges, Term::Gwesp(0.5)], vec![-1.0, 0.2]).unwrap();
        let s = RSpec::with_auto_lambda(
            model,
            Constraint::None,
            &DurationSpec::homogeneous(2.0).unwrap(),
            1.0,
            None,
            ProposalKind::TntAnalogue,
            6,
            8.0,
        )
        .unwrap();
        let run = || simulate_r(&s, &Network::empty(6), RunOptions::new(10, 5000), &[Term::Edges, Term::Gwesp(0.5)], 9).unwrap().0;
        let (a, b) = (run(), run());
        assert_eq!(a.stat_series, b.stat_series);
        assert_eq!(a.completed_spells, b.completed_spells);
        assert_eq!(a.censored_spells, b.censored_spells);
    }
}
