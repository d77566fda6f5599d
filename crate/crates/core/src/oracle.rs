//! Exact computation over enumerated small-network state spaces: the ergm
//! distribution, the chains R and T as dense matrices, stationary
//! distributions, exact mean edge durations, and the rates at which T
//! approaches R as lambda grows.
//!
//! States are bitmasks over the dyads in `Dyad::index` order.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::durations::DurationSpec;
use crate::error::{Error, Result};
use crate::mcstats::{loglog_slope, total_variation};
use crate::net::{dyad_count, Constraint, Dyad, Network};
use crate::stats::{stat_vector, Model, Term};
use crate::transforms::Variant;

pub const MAX_NODES: usize = 6;
/// Largest state space for which dense matrices are built.
pub const DENSE_STATE_LIMIT: usize = 4096;
const NO_STATE: u32 = u32::MAX;

/// The valid networks on `n` nodes under a constraint.
#[derive(Clone, Debug)]
pub struct StateSpace {
    n: usize,
    constraint: Constraint,
    states: Vec<u32>,
    /// mask -> state id, `NO_STATE` for invalid masks.
    index: Vec<u32>,
    connected: bool,
}

pub fn mask_of(net: &Network) -> u32 {
    let n = net.node_count();
    net.edges().fold(0, |m, (d, _)| m | 1 << d.index(n))
}

pub fn network_of(mask: u32, n: usize) -> Network {
    let dyads = (0..dyad_count(n)).filter(|b| mask >> b & 1 == 1).map(|b| Dyad::from_index(b, n));
    Network::from_dyads(n, dyads, 0)
}

/// All valid edge sets on `n <= 6` nodes, with a check that single toggles
/// connect them.
pub fn enumerate_states(n: usize, constraint: Constraint) -> Result<StateSpace> {
    if n == 0 || n > MAX_NODES {
        return Err(Error::InvalidArgument(format!(
            "state spaces are enumerated for 1..={MAX_NODES} nodes, got {n}"
        )));
    }
    let nd = dyad_count(n);
    let mut states = Vec::new();
    let mut index = vec![NO_STATE; 1 << nd];
    for mask in 0..(1u32 << nd) {
        if constraint.is_valid(&network_of(mask, n)) {
            index[mask as usize] = states.len() as u32;
            states.push(mask);
        }
    }
    let mut seen = vec![false; states.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = !states.is_empty();
    while let Some(i) = queue.pop_front() {
        for b in 0..nd {
            let j = index[(states[i] ^ 1 << b) as usize];
            if j != NO_STATE && !seen[j as usize] {
                seen[j as usize] = true;
                queue.push_back(j as usize);
            }
        }
    }
    let connected = !states.is_empty() && seen.iter().all(|&s| s);
    Ok(StateSpace {
        n,
        constraint,
        states,
        index,
        connected,
    })
}

impl StateSpace {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn dyad_count(&self) -> usize {
        dyad_count(self.n)
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[u32] {
        &self.states
    }

    pub fn mask(&self, i: usize) -> u32 {
        self.states[i]
    }

    pub fn network(&self, i: usize) -> Network {
        network_of(self.states[i], self.n)
    }

    pub fn index_of_mask(&self, mask: u32) -> Option<usize> {
        match self.index.get(mask as usize) {
            Some(&i) if i != NO_STATE => Some(i as usize),
            _ => None,
        }
    }

    pub fn index_of(&self, net: &Network) -> Option<usize> {
        if net.node_count() != self.n {
            return None;
        }
        self.index_of_mask(mask_of(net))
    }

    /// Whether single-dyad toggles connect all valid states.
    pub fn is_connected(&self) -> bool {
        self.connected
    }

    /// Dyads whose edge appears in some but not all valid states.
    pub fn free_dyads(&self) -> Vec<Dyad> {
        (0..self.dyad_count())
            .filter(|&b| {
                let on = self.states.iter().filter(|&&m| m >> b & 1 == 1).count();
                on > 0 && on < self.states.len()
            })
            .map(|b| Dyad::from_index(b, self.n))
            .collect()
    }

    fn check_dense(&self) -> Result<()> {
        if self.len() > DENSE_STATE_LIMIT {
            Err(Error::InvalidArgument(format!(
                "{} states exceed the dense matrix limit of {DENSE_STATE_LIMIT}",
                self.len()
            )))
        } else {
            Ok(())
        }
    }
}

/// Potential of every mask, valid or not.
fn all_potentials(space: &StateSpace, model: &Model) -> Vec<f64> {
    (0..1u32 << space.dyad_count())
        .map(|m| model.potential(&network_of(m, space.n)))
        .collect()
}

/// `exp(to - from)`, zero when `to` is impossible.
fn ratio(to: f64, from: f64) -> f64 {
    if to == f64::NEG_INFINITY {
        0.0
    } else {
        (to - from).exp()
    }
}

/// Ergm probabilities of the valid states.
pub fn exact_pi(space: &StateSpace, model: &Model) -> Result<Vec<f64>> {
    let pot: Vec<f64> = (0..space.len()).map(|i| model.potential(&space.network(i))).collect();
    let max = pot.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "model potential is not normalizable (max {max})"
        )));
    }
    let w: Vec<f64> = pot.iter().map(|p| ratio(*p, max)).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// Mean vector and covariance matrix of `terms` under `pi`.
pub fn stat_moments(space: &StateSpace, pi: &[f64], terms: &[Term]) -> (Vec<f64>, DMatrix<f64>) {
    let k = terms.len();
    let mut mean = vec![0.0; k];
    let stats: Vec<Vec<f64>> = (0..space.len()).map(|i| stat_vector(terms, &space.network(i))).collect();
    for (g, p) in stats.iter().zip(pi) {
        for (m, x) in mean.iter_mut().zip(g) {
            *m += p * x;
        }
    }
    let mut cov = DMatrix::zeros(k, k);
    for (g, p) in stats.iter().zip(pi) {
        for a in 0..k {
            for b in 0..k {
                cov[(a, b)] += p * (g[a] - mean[a]) * (g[b] - mean[b]);
            }
        }
    }
    (mean, cov)
}

/// A row-stochastic matrix over the states of a `StateSpace`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpaceMatrix {
    m: DMatrix<f64>,
}

impl StateSpaceMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidArgument("transition matrix must be square".into()));
        }
        Ok(StateSpaceMatrix { m })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn len(&self) -> usize {
        self.m.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.m.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.m
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.m.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &StateSpaceMatrix) -> f64 {
        (&self.m - &other.m).abs().max()
    }

    fn strongly_connected(&self) -> bool {
        let s = self.len();
        let reach = |forward: bool| {
            let mut seen = vec![false; s];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(i) = queue.pop_front() {
                for j in 0..s {
                    let w = if forward { self.m[(i, j)] } else { self.m[(j, i)] };
                    if w > 0.0 && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            seen.into_iter().all(|x| x)
        };
        s == 0 || (reach(true) && reach(false))
    }
}

fn per_dyad_durations(space: &StateSpace, durations: &DurationSpec) -> Result<Vec<f64>> {
    durations.typer().check_nodes(space.n)?;
    Ok((0..space.dyad_count())
        .map(|b| durations.duration_of(Dyad::from_index(b, space.n)))
        .collect())
}

/// R over the valid states. Fails if some state's total outflow exceeds one,
/// reporting the smallest lambda that would fix every row.
pub fn build_r(space: &StateSpace, model: &Model, durations: &DurationSpec) -> Result<StateSpaceMatrix> {
    space.check_dense()?;
    let dk = per_dyad_durations(space, durations)?;
    let pot = all_potentials(space, model);
    let s = space.len();
    let mut m = DMatrix::zeros(s, s);
    let mut worst: Option<(usize, f64)> = None;
    for i in 0..s {
        let mi = space.states[i];
        let mut out = 0.0;
        for (b, d) in dk.iter().enumerate() {
            let mj = mi ^ 1 << b;
            let Some(j) = space.index_of_mask(mj) else { continue };
            let rate = if mi >> b & 1 == 1 {
                1.0 / d
            } else {
                ratio(pot[mj as usize], pot[mi as usize]) / d
            };
            m[(i, j)] = rate;
            out += rate;
        }
        if out > 1.0 + 1e-12 && worst.is_none_or(|(_, w)| out > w) {
            worst = Some((i, out));
        }
        m[(i, i)] = 1.0 - out;
    }
    if let Some((state, outflow)) = worst {
        return Err(Error::NormalizationFailure {
            state,
            outflow,
            min_lambda: durations.lambda() * outflow,
        });
    }
    Ok(StateSpaceMatrix { m })
}

/// The exact one-step transition matrix of the EDA tergm:
/// `T_ij ∝ (pi(i ∪ j) / pi(i)) * prod_k F_k^-(formed_k) * (D_k - 1)^-(dissolved_k)`
/// with `F_k = D_k - 1` (old) or `D_k` (new), normalized over valid `j`.
/// The potential of an invalid union network is used unnormalized.
pub fn build_t(
    space: &StateSpace,
    model: &Model,
    durations: &DurationSpec,
    variant: Variant,
) -> Result<StateSpaceMatrix> {
    space.check_dense()?;
    let formation_offset = match variant {
        Variant::Old => 1.0,
        Variant::New => 0.0,
        Variant::Exact => {
            return Err(Error::InvalidArgument("T is built for the old and new variants".into()))
        }
    };
    let dk = per_dyad_durations(space, durations)?;
    if let Some(bad) = dk.iter().find(|&&d| d <= 1.0) {
        return Err(Error::InvalidArgument(format!("T needs every D_k > 1, got {bad}")));
    }
    let log_form: Vec<f64> = dk.iter().map(|d| -(d - formation_offset).ln()).collect();
    let log_diss: Vec<f64> = dk.iter().map(|d| -(d - 1.0).ln()).collect();
    let pot = all_potentials(space, model);
    let s = space.len();
    let mut m = DMatrix::zeros(s, s);
    for i in 0..s {
        let mi = space.states[i];
        for j in 0..s {
            let mj = space.states[j];
            let formed = mj & !mi;
            let dissolved = mi & !mj;
            let mut log_w = 0.0;
            for b in 0..dk.len() {
                if formed >> b & 1 == 1 {
                    log_w += log_form[b];
                }
                if dissolved >> b & 1 == 1 {
                    log_w += log_diss[b];
                }
            }
            m[(i, j)] = ratio(pot[(mi | mj) as usize], pot[mi as usize]) * log_w.exp();
        }
        let c: f64 = m.row(i).sum();
        m.row_mut(i).unscale_mut(c);
    }
    Ok(StateSpaceMatrix { m })
}

/// Left fixed vector of `matrix`, from a direct solve of `(I - M^T) x = 0`
/// with one equation replaced by `sum x = 1`.
pub fn stationary(matrix: &StateSpaceMatrix) -> Result<Vec<f64>> {
    let s = matrix.len();
    if s == 0 {
        return Err(Error::InvalidArgument("empty state space".into()));
    }
    if !matrix.strongly_connected() {
        return Err(Error::Reducible("some state cannot reach every other state".into()));
    }
    let mut a = DMatrix::identity(s, s) - matrix.m.transpose();
    a.row_mut(s - 1).fill(1.0);
    let mut rhs = DVector::zeros(s);
    rhs[s - 1] = 1.0;
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("stationary system is singular".into()))?;
    // One power-iteration step from the solution must leave it in place.
    let next = matrix.m.tr_mul(&x);
    let drift = (&next - &x).abs().max();
    if drift > 1e-8 {
        return Err(Error::Reducible(format!(
            "power-iteration check moved the solution by {drift:e}"
        )));
    }
    Ok(x.iter().copied().collect())
}

/// `max_{i,j} |pi_i M_ij - pi_j M_ji|`.
pub fn detailed_balance_gap(pi: &[f64], matrix: &StateSpaceMatrix) -> f64 {
    let s = matrix.len();
    let mut gap: f64 = 0.0;
    for i in 0..s {
        for j in (i + 1)..s {
            gap = gap.max((pi[i] * matrix.m[(i, j)] - pi[j] * matrix.m[(j, i)]).abs());
        }
    }
    gap
}

/// Expected lifetime of an edge on `dyad`, in steps: the absorption time of
/// the chain restricted to states containing the edge, where any transition
/// removing it absorbs, started from the stationary inflow into those states.
pub fn mean_edge_duration_exact(
    matrix: &StateSpaceMatrix,
    space: &StateSpace,
    dyad: Dyad,
    pi: &[f64],
) -> Result<f64> {
    let bit = dyad.index(space.n);
    let inside: Vec<usize> = (0..space.len()).filter(|&i| space.states[i] >> bit & 1 == 1).collect();
    if inside.is_empty() || inside.len() == space.len() {
        return Err(Error::InvalidArgument(format!("dyad {dyad} is not free")));
    }
    let pos: Vec<Option<usize>> = {
        let mut p = vec![None; space.len()];
        for (k, &i) in inside.iter().enumerate() {
            p[i] = Some(k);
        }
        p
    };
    let a = inside.len();
    let mut sys = DMatrix::identity(a, a);
    for (r, &i) in inside.iter().enumerate() {
        for (c, &j) in inside.iter().enumerate() {
            sys[(r, c)] -= matrix.m[(i, j)];
        }
    }
    let times = sys
        .lu()
        .solve(&DVector::from_element(a, 1.0))
        .ok_or_else(|| Error::Singular(format!("edge {dyad} is never removed")))?;
    let mut inflow = vec![0.0; a];
    for s in 0..space.len() {
        if pos[s].is_some() || pi[s] == 0.0 {
            continue;
        }
        for (k, &i) in inside.iter().enumerate() {
            inflow[k] += pi[s] * matrix.m[(s, i)];
        }
    }
    let total: f64 = inflow.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument(format!("edge {dyad} never forms")));
    }
    Ok(inflow.iter().zip(times.iter()).map(|(w, t)| w * t).sum::<f64>() / total)
}

#[derive(Clone, Debug, Serialize)]
pub struct AsymptoticRow {
    pub lambda: f64,
    /// `max |T - R|` over all entries.
    pub max_abs_diff: f64,
    /// Total variation between the stationary distribution of T and pi.
    pub tv_distance: f64,
    /// Largest `|duration - D_k| / D_k` over free dyads, under T.
    pub max_rel_duration_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VariantAsymptotics {
    pub variant: Variant,
    pub rows: Vec<AsymptoticRow>,
    pub diff_slope: f64,
    pub tv_slope: f64,
    /// Only when every duration error is measurably nonzero.
    pub duration_slope: Option<f64>,
}

/// How T approaches R (entrywise) and pi (stationary) as lambda grows, for
/// both sparse variants.
pub fn asymptotic_report(
    space: &StateSpace,
    model: &Model,
    base: &DurationSpec,
    lambdas: &[f64],
) -> Result<Vec<VariantAsymptotics>> {
    if lambdas.len() < 2 || lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("need at least two ascending lambdas".into()));
    }
    let pi = exact_pi(space, model)?;
    let free = space.free_dyads();
    let mut out = Vec::new();
    for variant in [Variant::Old, Variant::New] {
        let mut rows = Vec::new();
        for &lambda in lambdas {
            let durations = base.with_lambda(lambda)?;
            let r = build_r(space, model, &durations)?;
            let t = build_t(space, model, &durations, variant)?;
            let pi_t = stationary(&t)?;
            let mut dur_err: f64 = 0.0;
            for &d in &free {
                let dur = mean_edge_duration_exact(&t, space, d, &pi_t)?;
                let target = durations.duration_of(d);
                dur_err = dur_err.max((dur - target).abs() / target);
            }
            rows.push(AsymptoticRow {
                lambda,
                max_abs_diff: t.max_abs_diff(&r),
                tv_distance: total_variation(&pi_t, &pi),
                max_rel_duration_error: dur_err,
            });
        }
        let slope = |f: fn(&AsymptoticRow) -> f64| {
            let ys: Vec<f64> = rows.iter().map(f).collect();
            loglog_slope(lambdas, &ys)
        };
        let duration_slope = rows
            .iter()
            .all(|r| r.max_rel_duration_error > 1e-12)
            .then(|| slope(|r| r.max_rel_duration_error));
        out.push(VariantAsymptotics {
            variant,
            diff_slope: slope(|r| r.max_abs_diff),
            tv_slope: slope(|r| r.tv_distance),
            duration_slope,
            rows,
        });
    }
    Ok(out)
}

/// Certificates and asymptotics for one model on one state space.
#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub nodes: usize,
    pub constraint: String,
    pub states: usize,
    pub connected: bool,
    pub lambda_certificates: Vec<LambdaCertificate>,
    pub asymptotics: Vec<VariantAsymptotics>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LambdaCertificate {
    pub lambda: f64,
    pub detailed_balance_gap: f64,
    /// `max |stationary(R) - pi|`.
    pub stationary_gap: f64,
    pub r_row_sum_error: f64,
    pub t_row_sum_error_old: f64,
    pub t_row_sum_error_new: f64,
    /// Largest `|duration - D_k| / D_k` under R over free dyads.
    pub r_max_rel_duration_error: f64,
}

pub fn oracle_report(
    space: &StateSpace,
    model: &Model,
    base: &DurationSpec,
    lambdas: &[f64],
) -> Result<OracleReport> {
    let pi = exact_pi(space, model)?;
    let mut certs = Vec::new();
    for &lambda in lambdas {
        let durations = base.with_lambda(lambda)?;
        let r = build_r(space, model, &durations)?;
        let pi_r = stationary(&r)?;
        let mut dur_err: f64 = 0.0;
        for d in space.free_dyads() {
            let dur = mean_edge_duration_exact(&r, space, d, &pi_r)?;
            let target = durations.duration_of(d);
            dur_err = dur_err.max((dur - target).abs() / target);
        }
        certs.push(LambdaCertificate {
            lambda,
            detailed_balance_gap: detailed_balance_gap(&pi, &r),
            stationary_gap: pi_r.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            r_row_sum_error: r.max_row_sum_error(),
            t_row_sum_error_old: build_t(space, model, &durations, Variant::Old)?.max_row_sum_error(),
            t_row_sum_error_new: build_t(space, model, &durations, Variant::New)?.max_row_sum_error(),
            r_max_rel_duration_error: dur_err,
        });
    }
    let asymptotics = if lambdas.len() >= 2 {
        asymptotic_report(space, model, base, lambdas)?
    } else {
        Vec::new()
    };
    Ok(OracleReport {
        nodes: space.n,
        constraint: space.constraint.to_string(),
        states: space.len(),
        connected: space.is_connected(),
        lambda_certificates: certs,
        asymptotics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::expit;

    fn edges_deg1(theta: f64, phi: f64) -> Model {
        Model::new(vec![Term::Edges, Term::Degree(1)], vec![theta, phi]).unwrap()
    }

    #[test]
    fn enumeration_examples() {
        let s = enumerate_states(3, Constraint::None).unwrap();
        assert_eq!(s.len(), 8);
        assert!(s.is_connected());
        let s = enumerate_states(3, Constraint::MaxDegree(1)).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.is_connected());
        assert!(enumerate_states(7, Constraint::None).is_err());
        assert_eq!(enumerate_states(6, Constraint::None).unwrap().len(), 1 << 15);
    }

    #[test]
    fn pi_examples() {
        let s = enumerate_states(3, Constraint::None).unwrap();
        let pi = exact_pi(&s, &Model::edges_only(0.0)).unwrap();
        assert!(pi.iter().all(|p| (p - 0.125).abs() < 1e-15));
        let theta = -0.4;
        let pi = exact_pi(&s, &Model::edges_only(theta)).unwrap();
        let marginal: f64 = (0..s.len()).filter(|&i| s.mask(i) & 1 == 1).map(|i| pi[i]).sum();
        assert!((marginal - expit(theta)).abs() < 1e-14);
        let s4 = enumerate_states(4, Constraint::None).unwrap();
        let m = Model::new(vec![Term::Edges, Term::Gwesp(0.5)], vec![-1.0, 0.5]).unwrap();
        let pi = exact_pi(&s4, &m).unwrap();
        assert_eq!(pi.len(), 64);
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(pi.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn one_dyad_r_and_t() {
        let s = enumerate_states(2, Constraint::None).unwrap();
        let (theta, d) = (-0.8f64, 6.0);
        let dur = DurationSpec::homogeneous(d).unwrap();
        let r = build_r(&s, &Model::edges_only(theta), &dur).unwrap();
        assert!((r.get(0, 1) - theta.exp() / d).abs() < 1e-16);
        assert!((r.get(1, 0) - 1.0 / d).abs() < 1e-16);
        let st = stationary(&r).unwrap();
        assert!((st[1] - expit(theta)).abs() < 1e-14);
        // Old variant: formation probability q = e^theta / (D - 1 + e^theta).
        let t = build_t(&s, &Model::edges_only(theta), &dur, Variant::Old).unwrap();
        let q = theta.exp() / (d - 1.0 + theta.exp());
        assert!((t.get(0, 1) - q).abs() < 1e-15);
        assert!((t.get(1, 0) - 1.0 / d).abs() < 1e-15);
        let pi_t = stationary(&t).unwrap();
        let dur_t = mean_edge_duration_exact(&t, &s, Dyad::new(0, 1), &pi_t).unwrap();
        assert!((dur_t - d).abs() < 1e-12);
    }

    #[test]
    fn two_state_stationary() {
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let st = stationary(&StateSpaceMatrix::from_matrix(m).unwrap()).unwrap();
        assert!((st[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((st[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn relabelled_states_permute_stationary() {
        let s = enumerate_states(3, Constraint::None).unwrap();
        let r = build_r(&s, &edges_deg1(-0.5, 0.7), &DurationSpec::homogeneous(10.0).unwrap()).unwrap();
        let perm: Vec<usize> = (0..8).rev().collect();
        let permuted = DMatrix::from_fn(8, 8, |i, j| r.get(perm[i], perm[j]));
        let a = stationary(&r).unwrap();
        let b = stationary(&StateSpaceMatrix::from_matrix(permuted).unwrap()).unwrap();
        for i in 0..8 {
            assert!((b[i] - a[perm[i]]).abs() < 1e-14);
        }
    }

    #[test]
    fn reducible_is_reported() {
        let m = DMatrix::identity(2, 2);
        assert!(matches!(
            stationary(&StateSpaceMatrix::from_matrix(m).unwrap()),
            Err(Error::Reducible(_))
        ));
    }

    #[test]
    fn r_normalization_failure() {
        let s = enumerate_states(4, Constraint::None).unwrap();
        let err = build_r(&s, &Model::edges_only(0.0), &DurationSpec::homogeneous(2.0).unwrap()).unwrap_err();
        match err {
            Error::NormalizationFailure { outflow, min_lambda, .. } => {
                assert!((outflow - 3.0).abs() < 1e-12);
                assert!((min_lambda - 3.0).abs() < 1e-12);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn r_detailed_balance_and_two_apart_zero() {
        let s = enumerate_states(3, Constraint::None).unwrap();
        let m = edges_deg1(-0.5, 0.7);
        let r = build_r(&s, &m, &DurationSpec::homogeneous(10.0).unwrap()).unwrap();
        let pi = exact_pi(&s, &m).unwrap();
        assert!(detailed_balance_gap(&pi, &r) < 1e-15);
        let (i, j) = (s.index_of_mask(0).unwrap(), s.index_of_mask(0b011).unwrap());
        assert_eq!(r.get(i, j), 0.0);
    }

    #[test]
    fn t_rows_and_two_toggle_scaling() {
        let s = enumerate_states(3, Constraint::None).unwrap();
        let m = Model::edges_only(-0.3);
        let base = DurationSpec::homogeneous(1.0).unwrap();
        let (i, j) = (s.index_of_mask(0b001).unwrap(), s.index_of_mask(0b010).unwrap());
        let mut entries = Vec::new();
        for lambda in [10.0, 20.0, 40.0] {
            let t = build_t(&s, &m, &base.with_lambda(lambda).unwrap(), Variant::Old).unwrap();
            assert!(t.max_row_sum_error() < 1e-14);
            assert!(t.min_entry() >= 0.0);
            entries.push(t.get(i, j));
        }
        assert!(entries.iter().all(|&e| e > 0.0));
        let slope = loglog_slope(&[10.0, 20.0, 40.0], &entries);
        assert!((slope + 2.0).abs() < 0.15, "{slope}");
    }

    #[test]
    fn durations_under_r_are_exact() {
        for constraint in [Constraint::None, Constraint::MaxDegree(1), Constraint::MaxDegree(2)] {
            let s = enumerate_states(4, constraint).unwrap();
            let m = edges_deg1(-0.5, 0.7);
            let dur = DurationSpec::homogeneous(30.0).unwrap();
            let r = build_r(&s, &m, &dur).unwrap();
            let pi = stationary(&r).unwrap();
            for d in s.free_dyads() {
                let x = mean_edge_duration_exact(&r, &s, d, &pi).unwrap();
                assert!((x - 30.0).abs() < 1e-10, "{constraint}: {x}");
            }
        }
    }

    #[test]
    fn moments_match_closed_form() {
        let s = enumerate_states(4, Constraint::None).unwrap();
        let theta = 0.3;
        let pi = exact_pi(&s, &Model::edges_only(theta)).unwrap();
        let (mean, cov) = stat_moments(&s, &pi, &[Term::Edges]);
        let p = expit(theta);
        assert!((mean[0] - 6.0 * p).abs() < 1e-13);
        assert!((cov[(0, 0)] - 6.0 * p * (1.0 - p)).abs() < 1e-13);
    }
}
