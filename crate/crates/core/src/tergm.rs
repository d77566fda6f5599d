//! Discrete-time separable tergm built by the edges dissolution approximation.
//!
//! Each time step runs a formation phase (edges may only be added to dyads
//! that were empty at the start of the step) and then a dissolution phase
//! (only edges present at the start of the step may be removed). Which edges
//! were present at the start of the step is read off the formation
//! timestamps, so the two phases never touch the same dyad.

use indexmap::IndexSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::durations::DurationSpec;
use crate::error::{Error, Result};
use crate::net::{Constraint, Dyad, DyadTyper, Network};
use crate::record::{RunOptions, SimulationRecord, SpellRecord};
use crate::sampler::{bernoulli_indices, uniform_dyad};
use crate::stats::{Model, StatTracker, Term};
use crate::transforms::{expit, transform_exact, Variant};

pub const MIN_PROPOSALS: usize = 10_000;
pub const PROPOSALS_PER_EDGE: usize = 20;

/// How the formation phase is sampled.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormationSampler {
    /// Exact when the formation model is dyad-independent and unconstrained,
    /// Metropolis-Hastings otherwise.
    #[default]
    Auto,
    Mh,
    Exact,
}

#[derive(Clone, Debug)]
pub struct TergmSpec {
    pub formation: Model,
    pub durations: DurationSpec,
    pub constraint: Constraint,
    /// `None` means `max(20 * edges at phase start, 10^4)`.
    pub proposals_per_phase: Option<usize>,
    pub sampler: FormationSampler,
}

fn type_terms(typer: &DyadTyper) -> Vec<Term> {
    (1..=typer.type_count())
        .map(|k| Term::DyadType {
            typer: typer.clone(),
            k,
        })
        .collect()
}

impl TergmSpec {
    /// Formation model from a cross-sectional ergm: `theta` plus the variant's
    /// per-type offset. With a single dyad type the offset is folded into the
    /// edges coefficient when there is one.
    ///
    /// The exact variant needs the full linear predictor, so it is only
    /// available for an edges-only ergm with one dyad type.
    pub fn from_ergm(
        ergm: &Model,
        durations: DurationSpec,
        variant: Variant,
        constraint: Constraint,
    ) -> Result<Self> {
        durations.check_at_least_one_step()?;
        let homogeneous = durations.type_count() == 1;
        let formation = match variant {
            Variant::Exact => {
                if !(homogeneous && ergm.terms() == [Term::Edges]) {
                    return Err(Error::InvalidArgument(
                        "the exact transform needs an edges-only model with one dyad type".into(),
                    ));
                }
                let pair = transform_exact(ergm.coefs()[0], durations.duration(1))?;
                Model::edges_only(pair.theta_plus)
            }
            v => {
                let mut m = ergm.clone();
                let offsets: Vec<f64> = durations
                    .durations()
                    .iter()
                    .map(|&d| v.formation_offset(d).expect("offset for old/new"))
                    .collect();
                let edges_pos = m.terms().iter().position(|t| *t == Term::Edges);
                match (homogeneous, edges_pos) {
                    (true, Some(pos)) => {
                        let mut coefs = m.coefs().to_vec();
                        coefs[pos] += offsets[0];
                        m = m.with_coefs(coefs)?;
                    }
                    _ => {
                        for (t, off) in type_terms(durations.typer()).into_iter().zip(offsets) {
                            m.push(t, off);
                        }
                    }
                }
                m
            }
        };
        Ok(TergmSpec {
            formation,
            durations,
            constraint,
            proposals_per_phase: None,
            sampler: FormationSampler::Auto,
        })
    }

    pub fn with_proposals(mut self, proposals: Option<usize>) -> Self {
        self.proposals_per_phase = proposals;
        self
    }

    pub fn with_sampler(mut self, sampler: FormationSampler) -> Self {
        self.sampler = sampler;
        self
    }

    /// Dissolution model: `theta^- = log(D_k - 1)` on each dyad type.
    pub fn dissolution_model(&self) -> Model {
        let coefs: Vec<f64> = self.durations.durations().iter().map(|d| (d - 1.0).ln()).collect();
        Model::new(type_terms(self.durations.typer()), coefs).expect("one coefficient per type")
    }

    pub fn proposals_for(&self, edges: usize) -> usize {
        self.proposals_per_phase
            .unwrap_or_else(|| (PROPOSALS_PER_EDGE * edges).max(MIN_PROPOSALS))
    }

    fn exact_applicable(&self) -> bool {
        self.constraint == Constraint::None && self.formation.is_dyad_independent()
    }

    /// Whether formation uses the exact thinning sampler rather than MH.
    pub fn uses_exact_sampler(&self) -> Result<bool> {
        match self.sampler {
            FormationSampler::Mh => Ok(false),
            FormationSampler::Auto => Ok(self.exact_applicable()),
            FormationSampler::Exact if self.exact_applicable() => Ok(true),
            FormationSampler::Exact => Err(Error::InvalidArgument(
                "exact formation sampling needs a dyad-independent, unconstrained model".into(),
            )),
        }
    }

    /// Upper bound on the formation log-odds of any dyad, valid for the
    /// dyad-independent terms.
    fn logodds_bound(&self) -> f64 {
        self.formation
            .terms()
            .iter()
            .zip(self.formation.coefs())
            .filter(|(_, &c)| c != 0.0)
            .map(|(t, &c)| match t {
                Term::Edges => c,
                _ => c.max(0.0),
            })
            .sum()
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        self.durations.check_at_least_one_step()?;
        self.durations.typer().check_nodes(net.node_count())?;
        if !self.constraint.is_valid(net) {
            return Err(Error::InvalidArgument(format!(
                "initial network violates constraint {}",
                self.constraint
            )));
        }
        self.uses_exact_sampler()?;
        Ok(())
    }

    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "formation": self.formation.to_file_string(),
            "durations": self.durations.summary(),
            "constraint": self.constraint.to_string(),
            "proposals_per_phase": self.proposals_per_phase,
            "sampler": self.sampler,
        })
    }
}

/// What a formation phase did.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct FormationOutcome {
    pub proposals: usize,
    pub formed: usize,
}

/// Formation phase at time `time`: only dyads empty at phase start can gain
/// an edge; edges added earlier in this phase may be removed again.
pub fn step_formation<R: Rng + ?Sized>(
    net: &mut Network,
    spec: &TergmSpec,
    time: i64,
    rng: &mut R,
    tracker: Option<&mut StatTracker>,
) -> Result<FormationOutcome> {
    if spec.uses_exact_sampler()? {
        Ok(formation_exact(net, spec, time, rng, tracker))
    } else {
        Ok(formation_mh(net, spec, time, rng, tracker))
    }
}

/// Each free dyad forms independently with its own probability; thinning
/// from the largest probability keeps the cost proportional to the number of
/// candidates rather than the number of dyads.
fn formation_exact<R: Rng + ?Sized>(
    net: &mut Network,
    spec: &TergmSpec,
    time: i64,
    rng: &mut R,
    mut tracker: Option<&mut StatTracker>,
) -> FormationOutcome {
    let n = net.node_count();
    let qmax = expit(spec.logodds_bound());
    let mut candidates = Vec::new();
    bernoulli_indices(net.dyad_count(), qmax, rng, |idx| candidates.push(idx));
    let mut formed = 0;
    for idx in candidates {
        let d = Dyad::from_index(idx, n);
        if net.has_edge(d) {
            continue;
        }
        let q = expit(spec.formation.conditional_logodds(net, d));
        if q >= qmax || rng.random::<f64>() * qmax < q {
            if let Some(t) = tracker.as_deref_mut() {
                t.before_toggle(net, d);
            }
            net.toggle(d, time);
            formed += 1;
        }
    }
    FormationOutcome {
        proposals: 0,
        formed,
    }
}

/// Metropolis-Hastings over the dyads free at phase start. Half the proposals
/// pick a uniform free dyad, half a uniform edge added in this phase (all of
/// them when none has been added yet).
fn formation_mh<R: Rng + ?Sized>(
    net: &mut Network,
    spec: &TergmSpec,
    time: i64,
    rng: &mut R,
    mut tracker: Option<&mut StatTracker>,
) -> FormationOutcome {
    let n = net.node_count();
    let n_dyads = net.dyad_count();
    let start_edges = net.edge_count();
    let proposals = spec.proposals_for(start_edges);
    let free = n_dyads - start_edges;
    if free == 0 {
        return FormationOutcome::default();
    }
    let mf = free as f64;
    // Dense networks: list the free dyads rather than rejection-sample them.
    let free_list: Option<Vec<Dyad>> = (2 * start_edges > n_dyads).then(|| {
        (0..n_dyads)
            .map(|i| Dyad::from_index(i, n))
            .filter(|&d| !net.has_edge(d))
            .collect()
    });
    let mut added: IndexSet<Dyad> = IndexSet::new();
    for _ in 0..proposals {
        let a = added.len();
        let pick_added = a > 0 && rng.random::<f64>() < 0.5;
        let d = if pick_added {
            *added.get_index(rng.random_range(0..a)).expect("index in range")
        } else if let Some(list) = &free_list {
            list[rng.random_range(0..list.len())]
        } else {
            loop {
                let d = uniform_dyad(n, rng);
                if !net.has_edge(d) || added.contains(&d) {
                    break d;
                }
            }
        };
        let is_added = pick_added || added.contains(&d);
        let (fwd, rev) = if is_added {
            let rev = if a == 1 { 1.0 / mf } else { 0.5 / mf };
            (0.5 / mf + 0.5 / a as f64, rev)
        } else {
            let fwd = if a == 0 { 1.0 / mf } else { 0.5 / mf };
            (fwd, 0.5 / mf + 0.5 / (a + 1) as f64)
        };
        if !spec.constraint.toggle_is_valid(net, d) {
            continue;
        }
        let lo = spec.formation.conditional_logodds(net, d);
        let log_ratio = if is_added { -lo } else { lo } + (rev / fwd).ln();
        if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
            if let Some(t) = tracker.as_deref_mut() {
                t.before_toggle(net, d);
            }
            net.toggle(d, time);
            if is_added {
                added.swap_remove(&d);
            } else {
                added.insert(d);
            }
        }
    }
    FormationOutcome {
        proposals,
        formed: added.len(),
    }
}

/// What a dissolution phase did, per 1-based dyad type index `k - 1`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DissolutionOutcome {
    pub at_risk: Vec<u64>,
    pub removed: Vec<SpellRecord>,
}

/// Dissolution phase at time `time`: every edge formed before `time`
/// survives independently with probability `1 - 1/D_k`.
pub fn step_dissolution<R: Rng + ?Sized>(
    net: &mut Network,
    spec: &TergmSpec,
    time: i64,
    rng: &mut R,
    mut tracker: Option<&mut StatTracker>,
) -> DissolutionOutcome {
    let typer = spec.durations.typer();
    let mut at_risk = vec![0; spec.durations.type_count()];
    let mut doomed = Vec::new();
    for (d, formed) in net.edges() {
        if formed >= time {
            continue;
        }
        let k = typer.type_of(d);
        at_risk[k - 1] += 1;
        if rng.random::<f64>() * spec.durations.duration(k) < 1.0 {
            doomed.push((d, k));
        }
    }
    let mut removed = Vec::with_capacity(doomed.len());
    for (d, k) in doomed {
        if let Some(t) = tracker.as_deref_mut() {
            t.before_toggle(net, d);
        }
        let spell = net.toggle(d, time).expect("edge present");
        removed.push(SpellRecord {
            dyad_type: k,
            age: spell.age,
        });
    }
    DissolutionOutcome { at_risk, removed }
}

/// Runs `burn_in + steps` time steps from `initial` (whose formation times
/// must not exceed 0). Statistics of `monitored` are recorded after each step.
pub fn simulate_tergm(
    spec: &TergmSpec,
    initial: &Network,
    opts: RunOptions,
    monitored: &[Term],
    seed: u64,
) -> Result<SimulationRecord> {
    spec.validate(initial)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = initial.clone();
    let mut tracker = StatTracker::new(monitored.to_vec(), &net);
    let mut config = spec.describe();
    config["run"] = serde_json::to_value(opts).expect("options serialize");
    let mut rec = SimulationRecord::new(
        monitored.iter().map(|t| t.to_string()).collect(),
        spec.durations.type_count(),
        seed,
        config,
    );
    let total = opts.burn_in + opts.steps;
    let mut proposals = 0usize;
    for step in 1..=total {
        let time = step as i64;
        let f = step_formation(&mut net, spec, time, &mut rng, Some(&mut tracker))?;
        proposals += f.proposals;
        let diss = step_dissolution(&mut net, spec, time, &mut rng, Some(&mut tracker));
        if step > opts.burn_in {
            for (acc, r) in rec.at_risk.iter_mut().zip(&diss.at_risk) {
                *acc += r;
            }
            for s in diss.removed {
                rec.record_dissolution(s.dyad_type, s.age, opts.keep_spells);
            }
        }
        if step % opts.thin == 0 {
            if step <= opts.burn_in {
                rec.burn_in_rows += 1;
            }
            rec.push_row(step as u64, tracker.values());
        }
    }
    let end = total as i64;
    if opts.keep_spells {
        for (d, formed) in net.sorted_edges() {
            rec.censored_spells.push(SpellRecord {
                dyad_type: spec.durations.typer().type_of(d),
                age: end - formed + 1,
            });
        }
    }
    rec.config["realized_proposals_per_phase"] = serde_json::json!(if total > 0 {
        proposals as f64 / total as f64
    } else {
        0.0
    });
    Ok(rec)
}
