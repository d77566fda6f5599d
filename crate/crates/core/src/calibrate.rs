//! Ergm coefficients from target statistics: Newton moment matching on
//! enumerable state spaces, Robbins-Monro at simulation scale, and the
//! closed forms available for dyad-independent models.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mcstats::{batch_means, Estimate, DEFAULT_BATCHES};
use crate::net::{dyad_count, Constraint, Network};
use crate::oracle::{exact_pi, stat_moments, StateSpace};
use crate::sampler::{bernoulli_network, ErgmSampler};
use crate::stats::{Model, StatTracker, Term};
use crate::transforms::{expit, logit};

/// Largest magnitude a coefficient may take during fitting.
const THETA_CLAMP: f64 = 50.0;

fn check_lengths(terms: &[Term], targets: &[f64]) -> Result<()> {
    if terms.is_empty() || terms.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} terms but {} targets",
            terms.len(),
            targets.len()
        )));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("targets must be finite".into()));
    }
    Ok(())
}

/// Edges coefficient from the target edge count, other coefficients zero.
fn initial_theta(terms: &[Term], targets: &[f64], n: usize) -> Vec<f64> {
    let nd = dyad_count(n) as f64;
    terms
        .iter()
        .zip(targets)
        .map(|(t, &g)| match t {
            Term::Edges if g > 0.0 && g < nd => logit(g / nd),
            _ => 0.0,
        })
        .collect()
}

/// `n * C(n-1, k) * p^k * (1-p)^(n-1-k)`: expected number of degree-`k`
/// nodes in a Bernoulli(`p`) graph.
pub fn bernoulli_degree_count(n: usize, p: f64, k: u32) -> f64 {
    let m = n as f64 - 1.0;
    let k = k as f64;
    if k > m {
        return 0.0;
    }
    let ln_choose = ln_gamma(m + 1.0) - ln_gamma(k + 1.0) - ln_gamma(m - k + 1.0);
    let log_pk = if k == 0.0 { 0.0 } else { k * p.ln() };
    let log_qk = if m - k == 0.0 { 0.0 } else { (m - k) * (1.0 - p).ln() };
    n as f64 * (ln_choose + log_pk + log_qk).exp()
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

#[derive(Clone, Debug, Serialize)]
pub struct ExactCalibration {
    pub theta: Vec<f64>,
    pub iterations: usize,
    /// `max |E_theta[g] - target|` at the returned theta.
    pub residual: f64,
}

/// Newton iteration on `E_theta[g] = targets` using the exact covariance of
/// `g` as the Jacobian, with backtracking on the residual norm.
pub fn calibrate_exact(space: &StateSpace, terms: &[Term], targets: &[f64]) -> Result<ExactCalibration> {
    check_lengths(terms, targets)?;
    const MAX_ITER: usize = 100;
    const TOL: f64 = 1e-11;
    let k = terms.len();
    let eval = |theta: &[f64]| -> Result<(Vec<f64>, DMatrix<f64>, f64)> {
        let model = Model::new(terms.to_vec(), theta.to_vec())?;
        let pi = exact_pi(space, &model)?;
        let (mean, cov) = stat_moments(space, &pi, terms);
        let gap = mean.iter().zip(targets).map(|(m, t)| (m - t).powi(2)).sum::<f64>().sqrt();
        Ok((mean, cov, gap))
    };
    let mut theta = initial_theta(terms, targets, space.node_count());
    let (mut mean, mut cov, mut gap) = eval(&theta)?;
    let mut trace = Vec::new();
    for it in 0..MAX_ITER {
        let resid: Vec<f64> = mean.iter().zip(targets).map(|(m, t)| t - m).collect();
        trace.push(resid.iter().map(|r| -r).collect());
        let max_res = resid.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        if max_res <= TOL {
            return Ok(ExactCalibration {
                theta,
                iterations: it,
                residual: max_res,
            });
        }
        let reg = cov.clone() + DMatrix::identity(k, k) * 1e-12;
        let step = reg
            .lu()
            .solve(&DVector::from_vec(resid))
            .ok_or_else(|| Error::Singular("statistic covariance is singular".into()))?;
        let mut scale = 1.0;
        loop {
            let cand: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, s)| (t + scale * s).clamp(-THETA_CLAMP, THETA_CLAMP))
                .collect();
            let (m2, c2, g2) = eval(&cand)?;
            if g2 < gap || scale < 1e-6 {
                theta = cand;
                mean = m2;
                cov = c2;
                gap = g2;
                break;
            }
            scale *= 0.5;
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITER,
        residual: gap,
        trace,
    })
}

/// Settings for `calibrate_stochastic`.
#[derive(Clone, Debug, Serialize)]
pub struct StochasticOptions {
    /// Robbins-Monro updates (the budget).
    pub iterations: usize,
    /// Sampler proposals between updates and between confirmation samples.
    pub proposals_per_iteration: usize,
    /// Proposals before the pilot run.
    pub burn_in: usize,
    pub pilot_samples: usize,
    pub confirmation_samples: usize,
    /// Accepted relative gap between confirmed means and targets.
    pub tolerance: f64,
    /// Multiplier of the inverse pilot covariance in the step size.
    pub gain: f64,
    pub constraint: Constraint,
}

impl StochasticOptions {
    pub const MIN_ITERATIONS: usize = 100;

    pub fn for_nodes(n: usize) -> Self {
        StochasticOptions {
            iterations: 6000,
            proposals_per_iteration: (2 * n).max(200),
            burn_in: 50 * n.max(100),
            pilot_samples: 500,
            confirmation_samples: 20_000,
            tolerance: 0.02,
            gain: 0.5,
            constraint: Constraint::None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StochasticCalibration {
    pub theta: Vec<f64>,
    /// Monte Carlo standard error of each coefficient.
    pub theta_se: Vec<f64>,
    /// Statistic means from the confirmation run at `theta`.
    pub confirmation: Vec<Estimate>,
    pub rel_errors: Vec<f64>,
}

impl StochasticCalibration {
    pub fn model(&self, terms: &[Term]) -> Model {
        Model::new(terms.to_vec(), self.theta.clone()).expect("finite coefficients")
    }
}

fn sample_block(
    sampler: &ErgmSampler,
    net: &mut Network,
    tracker: &mut StatTracker,
    proposals: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    sampler.run(net, proposals, rng, Some(tracker));
    tracker.values().to_vec()
}

fn invert_covariance(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let k = cols.len();
    let n = cols[0].len() as f64;
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let cov = DMatrix::from_fn(k, k, |a, b| {
        cols[a]
            .iter()
            .zip(&cols[b])
            .map(|(x, y)| (x - means[a]) * (y - means[b]))
            .sum::<f64>()
            / (n - 1.0)
    });
    // Ridge keeps the gain finite when a statistic barely moves.
    let ridge = DMatrix::from_diagonal(&DVector::from_fn(k, |i, _| cov[(i, i)] * 1e-3 + 1e-3));
    (cov + ridge).try_inverse().expect("ridge-regularized covariance is invertible")
}

/// Robbins-Monro: `theta <- theta - a_t * S^-1 (g_t - targets)` with
/// `a_t = gain / (1 + t / tau)`, `tau = iterations / 10` and `S` the pilot
/// covariance, averaging the iterates over the second half. A confirmation
/// run at the averaged coefficients must land within `tolerance` (relative)
/// of every target.
pub fn calibrate_stochastic(
    terms: &[Term],
    targets: &[f64],
    n: usize,
    opts: &StochasticOptions,
    seed: u64,
) -> Result<StochasticCalibration> {
    check_lengths(terms, targets)?;
    if opts.iterations < StochasticOptions::MIN_ITERATIONS {
        return Err(Error::InvalidArgument(format!(
            "budget of {} iterations is below the minimum {}",
            opts.iterations,
            StochasticOptions::MIN_ITERATIONS
        )));
    }
    let k = terms.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = initial_theta(terms, targets, n);
    let edge_p = theta
        .iter()
        .zip(terms)
        .find(|(_, t)| **t == Term::Edges)
        .map(|(th, _)| expit(*th))
        .unwrap_or(0.0);
    let mut net = if opts.constraint == Constraint::None {
        bernoulli_network(n, edge_p, 0, &mut rng)
    } else {
        Network::empty(n)
    };
    let mut sampler = ErgmSampler::new(Model::new(terms.to_vec(), theta.clone())?, opts.constraint);
    let mut tracker = StatTracker::new(terms.to_vec(), &net);
    sampler.run(&mut net, opts.burn_in, &mut rng, Some(&mut tracker));

    let mut pilot = vec![Vec::with_capacity(opts.pilot_samples); k];
    for _ in 0..opts.pilot_samples.max(2) {
        let g = sample_block(&sampler, &mut net, &mut tracker, opts.proposals_per_iteration, &mut rng);
        for (c, x) in pilot.iter_mut().zip(g) {
            c.push(x);
        }
    }
    let s_inv = invert_covariance(&pilot);

    let tau = opts.iterations as f64 / 10.0;
    let half = opts.iterations / 2;
    let mut theta_sum = vec![0.0; k];
    let mut gaps = vec![Vec::with_capacity(opts.iterations - half); k];
    let mut trace = Vec::new();
    let trace_every = (opts.iterations / 100).max(1);
    for t in 0..opts.iterations {
        let g = sample_block(&sampler, &mut net, &mut tracker, opts.proposals_per_iteration, &mut rng);
        let gap = DVector::from_fn(k, |i, _| g[i] - targets[i]);
        if t % trace_every == 0 {
            trace.push(gap.iter().copied().collect());
        }
        let a = opts.gain / (1.0 + t as f64 / tau);
        let step = &s_inv * &gap * a;
        for (th, s) in theta.iter_mut().zip(step.iter()) {
            *th = (*th - s).clamp(-THETA_CLAMP, THETA_CLAMP);
        }
        sampler.model = sampler.model.with_coefs(theta.clone())?;
        if t >= half {
            for (acc, th) in theta_sum.iter_mut().zip(&theta) {
                *acc += th;
            }
            for (c, x) in gaps.iter_mut().zip(gap.iter()) {
                c.push(*x);
            }
        }
    }
    let m = (opts.iterations - half) as f64;
    let theta_bar: Vec<f64> = theta_sum.iter().map(|s| s / m).collect();
    // Averaged iterates: theta_bar - theta* ~ -S^-1 * mean(gap).
    let gap_se = DVector::from_fn(k, |i, _| batch_means(&gaps[i], DEFAULT_BATCHES).se);
    let theta_se: Vec<f64> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| (s_inv[(i, j)] * gap_se[j]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();

    sampler.model = sampler.model.with_coefs(theta_bar.clone())?;
    sampler.run(&mut net, opts.burn_in, &mut rng, Some(&mut tracker));
    let mut conf = vec![Vec::with_capacity(opts.confirmation_samples); k];
    for _ in 0..opts.confirmation_samples.max(2) {
        let g = sample_block(&sampler, &mut net, &mut tracker, opts.proposals_per_iteration, &mut rng);
        for (c, x) in conf.iter_mut().zip(g) {
            c.push(x);
        }
    }
    let confirmation: Vec<Estimate> = conf.iter().map(|c| batch_means(c, DEFAULT_BATCHES)).collect();
    let rel_errors: Vec<f64> = confirmation
        .iter()
        .zip(targets)
        .map(|(e, &t)| if t == 0.0 { e.mean.abs() } else { (e.mean - t) / t })
        .collect();
    let worst = rel_errors.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    if !(worst <= opts.tolerance) {
        return Err(Error::NonConvergence {
            iterations: opts.iterations,
            residual: worst,
            trace,
        });
    }
    Ok(StochasticCalibration {
        theta: theta_bar,
        theta_se,
        confirmation,
        rel_errors,
    })
}

/// Closed-form coefficients when the targets are those of a Bernoulli graph:
/// edges at `logit(edges / N)`, every `degree(k)` target equal to its
/// Bernoulli expectation (relative tolerance `rel_tol`) with coefficient 0.
/// Returns `None` when the targets are not of that form.
pub fn closed_form_bernoulli(terms: &[Term], targets: &[f64], n: usize, rel_tol: f64) -> Option<Vec<f64>> {
    let nd = dyad_count(n) as f64;
    let pos = terms.iter().position(|t| *t == Term::Edges)?;
    let p = targets[pos] / nd;
    if !(p > 0.0 && p < 1.0) {
        return None;
    }
    terms
        .iter()
        .zip(targets)
        .map(|(t, &g)| match t {
            Term::Edges => Some(logit(p)),
            Term::Degree(k) => {
                let expected = bernoulli_degree_count(n, p, *k);
                ((g - expected).abs() <= rel_tol * expected.abs().max(1e-300)).then_some(0.0)
            }
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::enumerate_states;

    #[test]
    fn exact_edges_only_closed_form() {
        for n in [3, 4, 5] {
            let s = enumerate_states(n, Constraint::None).unwrap();
            let nd = dyad_count(n) as f64;
            let mu = 0.3 * nd;
            let fit = calibrate_exact(&s, &[Term::Edges], &[mu]).unwrap();
            assert!((fit.theta[0] - logit(mu / nd)).abs() < 1e-9);
        }
        let s = enumerate_states(3, Constraint::None).unwrap();
        let fit = calibrate_exact(&s, &[Term::Edges], &[1.5]).unwrap();
        assert!(fit.theta[0].abs() < 1e-12);
    }

    #[test]
    fn exact_round_trip() {
        let s = enumerate_states(4, Constraint::None).unwrap();
        let terms = [Term::Edges, Term::Degree(1)];
        let targets = [2.0, 1.2];
        let fit = calibrate_exact(&s, &terms, &targets).unwrap();
        let pi = exact_pi(&s, &Model::new(terms.to_vec(), fit.theta.clone()).unwrap()).unwrap();
        let (mean, _) = stat_moments(&s, &pi, &terms);
        for (m, t) in mean.iter().zip(targets) {
            assert!((m - t).abs() < 1e-8);
        }
    }

    #[test]
    fn exact_infeasible_target() {
        let s = enumerate_states(3, Constraint::None).unwrap();
        let err = calibrate_exact(&s, &[Term::Edges], &[3.5]).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }

    #[test]
    fn bernoulli_degree_counts() {
        // Four nodes, p = 1/2: each node has degree 1 with probability 3/8.
        assert!((bernoulli_degree_count(4, 0.5, 1) - 1.5).abs() < 1e-12);
        let total: f64 = (0..10).map(|k| bernoulli_degree_count(10, 0.2, k)).sum();
        assert!((total - 10.0).abs() < 1e-10);
    }

    #[test]
    fn closed_form_recognizes_bernoulli_targets() {
        let n = 100;
        let p = 35.0 / 4950.0;
        let d1 = bernoulli_degree_count(n, p, 1);
        let th = closed_form_bernoulli(&[Term::Edges, Term::Degree(1)], &[35.0, d1], n, 1e-9).unwrap();
        assert_eq!(th[1], 0.0);
        assert!((th[0] - logit(p)).abs() < 1e-15);
        assert!(closed_form_bernoulli(&[Term::Edges, Term::Degree(1)], &[35.0, 50.0], n, 1e-9).is_none());
    }

    #[test]
    fn stochastic_edges_only_matches_closed_form() {
        let n = 100;
        let opts = StochasticOptions::for_nodes(n);
        let fit = calibrate_stochastic(&[Term::Edges], &[35.0], n, &opts, 7).unwrap();
        let exact = logit(35.0 / 4950.0);
        assert!((exact - (-4.944699)).abs() < 1e-6);
        assert!(
            (fit.theta[0] - exact).abs() < 3.0 * fit.theta_se[0],
            "{} vs {exact} (se {})",
            fit.theta[0],
            fit.theta_se[0]
        );
    }

    #[test]
    fn stochastic_infeasible_degree_target() {
        let n = 30;
        let mut opts = StochasticOptions::for_nodes(n);
        opts.iterations = 300;
        opts.confirmation_samples = 500;
        let err = calibrate_stochastic(&[Term::Edges, Term::Degree(1)], &[10.0, 40.0], n, &opts, 1).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }
}
