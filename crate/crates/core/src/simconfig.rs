//! TOML run configuration shared by the tergm and R simulators.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::durations::DurationSpec;
use crate::error::{Error, Result};
use crate::infsim::{estimate_odds_bound, ProposalKind, RSpec};
use crate::net::{Constraint, DyadTyper, Network};
use crate::record::RunOptions;
use crate::sampler::bernoulli_network;
use crate::stats::{Model, NodeAttributes, Term};
use crate::tergm::{FormationSampler, TergmSpec};
use crate::transforms::Variant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RConfig {
    pub proposal: ProposalKind,
    /// Upper bound on formation odds; estimated from a pilot run when absent.
    pub odds_bound: Option<f64>,
    pub edge_bound: Option<usize>,
    /// Fixed `lambda`; otherwise the proposal's minimum times `safety`.
    pub lambda: Option<f64>,
    pub safety: f64,
    pub pilot_proposals: usize,
}

impl Default for RConfig {
    fn default() -> Self {
        RConfig {
            proposal: ProposalKind::TntAnalogue,
            odds_bound: None,
            edge_bound: None,
            lambda: None,
            safety: 1.0,
            pilot_proposals: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub nodes: usize,
    /// Per-node labels, by name, for `nodematch` terms and dyad typing.
    pub attributes: BTreeMap<String, Vec<u32>>,
    pub terms: Vec<String>,
    pub coefs: Vec<f64>,
    /// Optional targets for the monitored terms, used for relative errors.
    pub targets: Option<Vec<f64>>,
    pub constraint: String,
    /// `homogeneous`, `match(attr)` or `pairs(attr)`.
    pub dyad_types: String,
    /// Mean durations per dyad type, in time steps (before `lambda`).
    pub durations: Vec<f64>,
    pub lambda: f64,
    pub variant: Variant,
    pub sampler: FormationSampler,
    pub proposals_per_phase: Option<usize>,
    pub burn_in: usize,
    pub steps: usize,
    pub thin: usize,
    pub keep_spells: bool,
    /// Mean degree of the Bernoulli starting network (ignored with `initial_edgelist`).
    pub initial_mean_degree: f64,
    pub initial_edgelist: Option<String>,
    pub r: RConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            nodes: 100,
            attributes: BTreeMap::new(),
            terms: vec!["edges".into(), "degree(1)".into()],
            coefs: vec![-4.9, 0.5],
            targets: None,
            constraint: "none".into(),
            dyad_types: "homogeneous".into(),
            durations: vec![50.0],
            lambda: 1.0,
            variant: Variant::Old,
            sampler: FormationSampler::Auto,
            proposals_per_phase: None,
            burn_in: 1000,
            steps: 10_000,
            thin: 1,
            keep_spells: true,
            initial_mean_degree: 1.0,
            initial_edgelist: None,
            r: RConfig::default(),
        }
    }
}

impl SimulationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn node_attributes(&self) -> Result<NodeAttributes> {
        let mut out = NodeAttributes::new();
        for (name, labels) in &self.attributes {
            if labels.len() != self.nodes {
                return Err(Error::InvalidArgument(format!(
                    "attribute {name:?} has {} labels for {} nodes",
                    labels.len(),
                    self.nodes
                )));
            }
            out.insert(name.clone(), Arc::from(labels.as_slice()));
        }
        Ok(out)
    }

    pub fn model(&self) -> Result<Model> {
        if self.terms.len() != self.coefs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} terms but {} coefficients",
                self.terms.len(),
                self.coefs.len()
            )));
        }
        let attrs = self.node_attributes()?;
        let terms = self
            .terms
            .iter()
            .map(|t| Term::parse(t, &attrs))
            .collect::<Result<Vec<_>>>()?;
        Model::new(terms, self.coefs.clone())
    }

    pub fn typer(&self) -> Result<DyadTyper> {
        let spec = self.dyad_types.trim();
        if spec == "homogeneous" {
            return Ok(DyadTyper::Homogeneous);
        }
        let (kind, attr) = spec
            .strip_suffix(')')
            .and_then(|s| s.split_once('('))
            .ok_or_else(|| Error::Parse(format!("bad dyad typing {spec:?}")))?;
        let labels = self
            .attributes
            .get(attr.trim())
            .ok_or_else(|| Error::Parse(format!("unknown attribute {attr:?}")))?;
        let labels: Arc<[u32]> = Arc::from(labels.as_slice());
        let typer = match kind.trim() {
            "match" => DyadTyper::Match(labels),
            "pairs" => {
                let n_labels = labels.iter().max().map_or(1, |m| m + 1);
                DyadTyper::LabelPair { labels, n_labels }
            }
            other => return Err(Error::Parse(format!("unknown dyad typing {other:?}"))),
        };
        typer.check_nodes(self.nodes)?;
        Ok(typer)
    }

    pub fn constraint(&self) -> Result<Constraint> {
        self.constraint.parse()
    }

    pub fn duration_spec(&self) -> Result<DurationSpec> {
        DurationSpec::new(self.typer()?, self.durations.clone(), self.lambda)
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions::new(self.burn_in, self.steps)
            .thin(self.thin.max(1))
            .keep_spells(self.keep_spells)
    }

    pub fn tergm_spec(&self) -> Result<TergmSpec> {
        Ok(TergmSpec::from_ergm(&self.model()?, self.duration_spec()?, self.variant, self.constraint()?)?
            .with_proposals(self.proposals_per_phase)
            .with_sampler(self.sampler))
    }

    /// Starting network, stamped as formed at time 0.
    pub fn initial_network(&self, seed: u64) -> Result<Network> {
        let net = match &self.initial_edgelist {
            Some(path) => {
                let net = Network::from_edgelist(&std::fs::read_to_string(path)?)?;
                if net.node_count() != self.nodes {
                    return Err(Error::InvalidArgument(format!(
                        "edgelist has {} nodes, config says {}",
                        net.node_count(),
                        self.nodes
                    )));
                }
                net
            }
            None => {
                let p = self.initial_mean_degree / (self.nodes.max(2) - 1) as f64;
                bernoulli_network(self.nodes, p.clamp(0.0, 1.0), 0, &mut ChaCha8Rng::seed_from_u64(seed))
            }
        };
        Ok(net)
    }

    /// R spec whose durations are `durations` scaled by the configured or
    /// automatically chosen `lambda` (the `lambda` field is ignored here).
    pub fn r_spec(&self, initial: &Network, seed: u64) -> Result<RSpec> {
        let model = self.model()?;
        let constraint = self.constraint()?;
        let base = DurationSpec::new(self.typer()?, self.durations.clone(), 1.0)?;
        let c = match self.r.odds_bound {
            Some(c) => c,
            None => estimate_odds_bound(&model, constraint, initial, self.r.pilot_proposals, seed),
        };
        let mut spec = RSpec::with_auto_lambda(
            model,
            constraint,
            &base,
            c,
            self.r.edge_bound,
            self.r.proposal,
            self.nodes,
            self.r.safety,
        )?;
        if let Some(l) = self.r.lambda {
            spec.durations = base.with_lambda(l)?;
        }
        Ok(spec)
    }
}
