//! Empirical regret, the best fixed comparator, closed-form bounds, and
//! held-out accuracy.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Example;
use crate::error::{invalid, Error, Result};
use crate::loss::{FeasibleSet, LossModel};
use crate::online::{batch_mean_loss, RunRecord};
use crate::rng::{substream, Purpose};
use crate::topology::ConsensusRate;
use crate::vector::{dot, norm2};

/// `scale·Σ_k f(w; x_k, y_k) + (quad/2)‖w‖²` over `W`.
pub struct Objective<'a> {
    pub loss: &'a LossModel,
    pub set: &'a FeasibleSet,
    pub examples: Vec<&'a Example>,
    pub scale: f64,
    pub quad: f64,
}

impl Objective<'_> {
    pub fn value(&self, w: &[f64]) -> f64 {
        let mut sum = 0.0;
        for e in &self.examples {
            sum += self.loss.value_unchecked(w, &e.x, e.y);
        }
        self.scale * sum + 0.5 * self.quad * dot(w, w)
    }

    fn subgradient_of(&self, w: &[f64], examples: &[&Example], weight: f64) -> Vec<f64> {
        let mut acc = vec![0.0; w.len()];
        let mut g = vec![0.0; w.len()];
        for e in examples {
            self.loss.subgradient_into(w, &e.x, e.y, &mut g);
            acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut()
            .zip(w)
            .for_each(|(a, wi)| *a = weight * *a + self.quad * wi);
        acc
    }

    /// Curvature modulus of the whole objective.
    fn modulus(&self) -> f64 {
        self.scale * self.examples.len() as f64 * self.loss.strong_convexity + self.quad
    }
}

/// Minimizes `obj` over the feasible ball.
///
/// A projected subgradient pass over chunks of 64 examples (ten epochs, or at
/// least 2000 steps) with suffix averaging gives a starting point; a
/// derivative-free pattern search on the full objective then polishes it
/// until the step falls below 1e-10 or the evaluation budget runs out.
pub fn solve_objective(obj: &Objective<'_>, seed: u64) -> Result<Vec<f64>> {
    let n = obj
        .examples
        .first()
        .map(|e| e.x.len())
        .ok_or_else(|| invalid("comparator objective has no examples"))?;
    solve_chunked(obj, n, 64, seed)
}

fn solve_chunked(obj: &Objective<'_>, n: usize, chunk: usize, seed: u64) -> Result<Vec<f64>> {
    let count = obj.examples.len();
    let chunk = chunk.clamp(1, count);
    let chunks: Vec<&[&Example]> = obj.examples.chunks(chunk).collect();
    let steps = (10 * chunks.len()).max(2000);
    let total_weight = obj.scale * count as f64;
    let modulus = obj.modulus();
    let r = obj.set.radius;
    let g_bound = total_weight * obj.loss.lipschitz + obj.quad * r;

    let mut w = vec![0.0; n];
    let mut avg = vec![0.0; n];
    let mut averaged = 0usize;
    for k in 1..=steps {
        let c = chunks[(k - 1) % chunks.len()];
        let weight = total_weight / c.len() as f64;
        let g = obj.subgradient_of(&w, c, weight);
        let alpha = if modulus > 0.0 {
            1.0 / (modulus * k as f64)
        } else {
            2.0 * r / (g_bound.max(1e-12) * (k as f64).sqrt())
        };
        w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= alpha * gi);
        obj.set.project_in_place(&mut w);
        if k > steps / 2 {
            averaged += 1;
            let a = averaged as f64;
            avg.iter_mut().zip(&w).for_each(|(s, wi)| *s += (wi - *s) / a);
        }
    }

    let mut best = avg;
    let mut f_best = obj.value(&best);
    for cand in [w, vec![0.0; n]] {
        let f = obj.value(&cand);
        if f < f_best {
            best = cand;
            f_best = f;
        }
    }
    Ok(polish(obj, best, f_best, seed))
}

fn polish(obj: &Objective<'_>, mut best: Vec<f64>, mut f_best: f64, seed: u64) -> Vec<f64> {
    let n = best.len();
    let mut rng = substream(seed, Purpose::Comparator, 0, 0);
    let mut step = 0.05 * obj.set.radius;
    let mut evals = 0usize;
    // about 4e8 multiply-adds in total, within [600, 20000] evaluations
    let cost = (obj.examples.len() * n).max(1);
    let max_evals = (400_000_000 / cost).clamp(600, 20_000);
    while step > 1e-10 && evals < max_evals {
        let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(3 * n + 1);
        let full = obj.subgradient_of(&best, &obj.examples, obj.scale);
        let gn = norm2(&full);
        if gn > 0.0 {
            dirs.push(full.iter().map(|g| -g / gn).collect());
        }
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            dirs.push(e.clone());
            e[k] = -1.0;
            dirs.push(e);
        }
        for _ in 0..n {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let vn = norm2(&v).max(1e-300);
            dirs.push(v.into_iter().map(|c| c / vn).collect());
        }
        let mut improved = false;
        for d in &dirs {
            let mut cand: Vec<f64> = best.iter().zip(d).map(|(b, di)| b + step * di).collect();
            obj.set.project_in_place(&mut cand);
            let f = obj.value(&cand);
            evals += 1;
            if f < f_best {
                best = cand;
                f_best = f;
                improved = true;
            }
        }
        if improved {
            step *= 1.5;
        } else {
            step *= 0.5;
        }
    }
    best
}

/// Caches comparators by a hash of the objective and its data. Concurrent
/// requests for the same key wait for a single solve.
#[derive(Debug, Default, Clone)]
pub struct ComparatorCache {
    inner: Arc<Mutex<HashMap<[u8; 32], Arc<OnceLock<Vec<f64>>>>>>,
}

impl ComparatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner
            .lock()
            .map_or(0, |m| m.values().filter(|v| v.get().is_some()).count())
    }

    fn slot(&self, key: [u8; 32]) -> Arc<OnceLock<Vec<f64>>> {
        let mut map = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(key).or_default().clone()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn objective_key(obj: &Objective<'_>, chunk: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([obj.loss.kind as u8]);
    for v in [
        obj.loss.strong_convexity,
        obj.loss.lipschitz,
        obj.set.radius,
        obj.scale,
        obj.quad,
    ] {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update((chunk as u64).to_le_bytes());
    for e in &obj.examples {
        h.update(e.y.to_bits().to_le_bytes());
        for v in &e.x {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    /// `R_D(t)` for `t = 1..=T`.
    pub cumulative: Vec<f64>,
    /// `R_D(t)/t`.
    pub normalized: Vec<f64>,
    pub comparator: Vec<f64>,
    /// `Σ_t Σ_i f_t^i(w*)`.
    pub comparator_loss: f64,
    pub private: bool,
}

impl RegretReport {
    pub fn final_regret(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn final_normalized(&self) -> f64 {
        self.normalized.last().copied().unwrap_or(0.0)
    }
}

/// The summed loss of a run over its consumed data, as an objective.
pub fn run_objective<'a>(
    record: &RunRecord,
    streams: &'a [Vec<Example>],
    loss: &'a LossModel,
    set: &'a FeasibleSet,
) -> Result<Objective<'a>> {
    check_history(record, streams)?;
    let h = record.batch;
    let mut examples = Vec::with_capacity(record.rounds * record.learners * h);
    for t in 0..record.rounds {
        for s in streams {
            examples.extend(&s[t * h..(t + 1) * h]);
        }
    }
    Ok(Objective {
        loss,
        set,
        examples,
        scale: 1.0 / h as f64,
        quad: (record.rounds * record.learners) as f64 * record.phi_reg,
    })
}

fn check_history(record: &RunRecord, streams: &[Vec<Example>]) -> Result<()> {
    if record.losses.len() != record.rounds || record.losses.iter().any(|r| r.len() != record.learners) {
        return Err(invalid("run record is missing loss history"));
    }
    if streams.len() != record.learners
        || streams.iter().any(|s| s.len() < record.rounds * record.batch)
    {
        return Err(invalid("training streams do not cover the run"));
    }
    Ok(())
}

/// `R_D(t) = Σ_{s≤t} Σ_i f_s^i(w_s^j) − Σ_{s≤t} Σ_i f_s^i(w*)` where `w*`
/// minimizes the summed loss over all `T` rounds.
pub fn empirical_regret(
    record: &RunRecord,
    streams: &[Vec<Example>],
    loss: &LossModel,
    set: &FeasibleSet,
    cache: Option<&ComparatorCache>,
) -> Result<RegretReport> {
    if record.rounds == 0 {
        return Ok(RegretReport {
            cumulative: vec![],
            normalized: vec![],
            comparator: vec![0.0; record.dim],
            comparator_loss: 0.0,
            private: record.private,
        });
    }
    let obj = run_objective(record, streams, loss, set)?;
    let chunk = record.learners * record.batch;
    let w_star = match cache {
        Some(c) => {
            let slot = c.slot(objective_key(&obj, chunk));
            let mut failure = None;
            let w = slot.get_or_init(|| {
                solve_chunked(&obj, record.dim, chunk, 0).unwrap_or_else(|e| {
                    failure = Some(e);
                    vec![]
                })
            });
            if let Some(e) = failure {
                return Err(e);
            }
            if w.is_empty() {
                return Err(invalid("comparator solve failed for this objective"));
            }
            w.clone()
        }
        None => solve_chunked(&obj, record.dim, chunk, 0)?,
    };
    Ok(regret_against(record, streams, loss, w_star))
}

/// Regret of `record` against a given comparator.
pub fn regret_against(
    record: &RunRecord,
    streams: &[Vec<Example>],
    loss: &LossModel,
    comparator: Vec<f64>,
) -> RegretReport {
    let h = record.batch;
    let mut cumulative = Vec::with_capacity(record.rounds);
    let mut normalized = Vec::with_capacity(record.rounds);
    let mut run = 0.0;
    let mut best = 0.0;
    for t in 0..record.rounds {
        for (i, s) in streams.iter().enumerate() {
            run += record.losses[t][i];
            best += batch_mean_loss(loss, &comparator, &s[t * h..(t + 1) * h], record.phi_reg);
        }
        let r = run - best;
        cumulative.push(r);
        normalized.push(r / (t + 1) as f64);
    }
    RegretReport {
        cumulative,
        normalized,
        comparator,
        comparator_loss: best,
        private: record.private,
    }
}

/// Which form of the online regret bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegretCase {
    StronglyConvex,
    Convex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub m: usize,
    pub rounds: usize,
    pub dim: usize,
    pub lipschitz: f64,
    pub lambda: f64,
    /// Diameter of the feasible set.
    pub diameter: f64,
    /// `f64::INFINITY` drops the noise terms.
    pub epsilon: f64,
    pub eta: f64,
    pub window: usize,
    pub theta: f64,
    pub beta: f64,
    pub batch: usize,
    pub gamma: f64,
    /// Stands in for `1/λ` in the leading convex-case term, where
    /// `Σα_t ≤ √T − 1/2` carries no λ.
    pub convex_inverse_lambda: f64,
}

impl BoundInputs {
    /// Fills `θ, β` from the consensus rate; `h = 1`, `γ = 0.01`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m: usize,
        rounds: usize,
        dim: usize,
        lipschitz: f64,
        lambda: f64,
        diameter: f64,
        epsilon: f64,
        eta: f64,
        window: usize,
    ) -> Result<Self> {
        let rate = ConsensusRate::new(m, eta, window)?;
        Ok(Self {
            m,
            rounds,
            dim,
            lipschitz,
            lambda,
            diameter,
            epsilon,
            eta,
            window,
            theta: rate.theta,
            beta: rate.beta,
            batch: 1,
            gamma: 0.01,
            convex_inverse_lambda: 1.0,
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.beta < 1.0) || !(self.beta >= 0.0) {
            return Err(invalid(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if self.m == 0 || self.rounds == 0 || self.dim == 0 {
            return Err(invalid("m, T and n must be >= 1"));
        }
        if !(self.lipschitz > 0.0) || !(self.diameter >= 0.0) || !(self.epsilon > 0.0) {
            return Err(invalid("L, R and epsilon must be positive"));
        }
        Ok(())
    }

    /// `3βθmL/(1−β)`.
    pub fn network_term(&self) -> f64 {
        3.0 * self.beta * self.theta * self.m as f64 * self.lipschitz / (1.0 - self.beta)
    }
}

/// Expected-regret bound of the online engine.
///
/// `mL·s·(R + K + 13L/2) + (K + (2L+1)/(2m))·(2√2·mnL/ε)·u + mR/2`,
/// with `K = 3βθmL/(1−β)`. In the strongly convex case `s = u = (1 + ln T)/λ`;
/// in the convex case `u = √T − 1/2` and `s = c·u` with
/// `c = convex_inverse_lambda`.
pub fn theorem2_bound(inputs: &BoundInputs, case: RegretCase) -> Result<f64> {
    inputs.validate()?;
    let (s, u) = match case {
        RegretCase::StronglyConvex => {
            if !(inputs.lambda > 0.0) {
                return Err(invalid("the strongly convex bound needs lambda > 0"));
            }
            let u = (1.0 + (inputs.rounds as f64).ln()) / inputs.lambda;
            (u, u)
        }
        RegretCase::Convex => {
            let u = (inputs.rounds as f64).sqrt() - 0.5;
            (inputs.convex_inverse_lambda * u, u)
        }
    };
    let m = inputs.m as f64;
    let l = inputs.lipschitz;
    let r = inputs.diameter;
    let k = inputs.network_term();
    let head = m * l * s * (r + k + 6.5 * l);
    let noise = if inputs.epsilon.is_infinite() {
        0.0
    } else {
        (k + (2.0 * l + 1.0) / (2.0 * m))
            * (2.0 * 2f64.sqrt() * m * inputs.dim as f64 * l / inputs.epsilon)
            * u
    };
    Ok(head + noise + m * r / 2.0)
}

fn check_offline(lambda: f64, gamma: f64, h: usize, rounds: usize) -> Result<()> {
    if lambda == 0.0 {
        return Err(Error::Unsupported(
            "the offline utility bound needs a strongly convex loss".into(),
        ));
    }
    if !(lambda > 0.0) || !(gamma > 0.0) || h == 0 || rounds == 0 {
        return Err(invalid("need lambda > 0, gamma > 0, h >= 1, T >= 1"));
    }
    Ok(())
}

/// `R_C/T + 4√(L² ln T/λ)·√R_C/T + max{16L²/λ, 6}·ln(1/γ)/T`.
pub fn centralized_offline_bound(l: f64, lambda: f64, rounds: usize, gamma: f64, r_c: f64) -> Result<f64> {
    minibatch_offline_bound(l, lambda, rounds, 1, gamma, r_c)
}

/// `h²R_C/T + 4√(L² ln(T/h)/λ)·h√(h R_C)/T + max{16L²/λ, 6}·h ln(1/γ)/T`.
pub fn minibatch_offline_bound(
    l: f64,
    lambda: f64,
    rounds: usize,
    h: usize,
    gamma: f64,
    r_c: f64,
) -> Result<f64> {
    distributed_bound(l, lambda, rounds, h, 1, gamma, r_c)
}

fn distributed_bound(l: f64, lambda: f64, rounds: usize, h: usize, m: usize, gamma: f64, r: f64) -> Result<f64> {
    check_offline(lambda, gamma, h, rounds)?;
    if !(r >= 0.0) {
        return Err(invalid(format!("regret must be >= 0 for the bound, got {r}")));
    }
    let t = rounds as f64;
    let h = h as f64;
    let m = m as f64;
    let lead = h * h * r / (m * t);
    let mid = 4.0 * (l * l * (t / h).ln() / lambda).sqrt() * h * (h * r / m).sqrt() / t;
    let tail = (16.0 * l * l / lambda).max(6.0) * h * (1.0 / gamma).ln() / t;
    Ok(lead + mid + tail)
}

/// Excess-risk bound of the mini-batch engine from a regret value `R_D`:
/// `h²R_D/(mT) + 4√(L² ln(T/h)/λ)·h√(hR_D/m)/T + max{16L²/λ, 6}·h ln(1/γ)/T`.
pub fn offline_utility_bound(inputs: &BoundInputs, r_d: f64) -> Result<f64> {
    distributed_bound(
        inputs.lipschitz,
        inputs.lambda,
        inputs.rounds,
        inputs.batch,
        inputs.m,
        inputs.gamma,
        r_d,
    )
}

/// Regret inflation allowance for mini-batches: `R_cmb ≤ h·R_C`.
pub fn minibatch_regret_inflation(r_c: f64, h: usize) -> f64 {
    h as f64 * r_c
}

/// Probability `1 − 4γ ln T` the offline bounds hold with.
pub fn bound_confidence(gamma: f64, rounds: usize) -> f64 {
    1.0 - 4.0 * gamma * (rounds as f64).ln()
}

/// Fraction of examples with `y·⟨w, x⟩ > 0`; zero margins count as errors.
pub fn accuracy(w: &[f64], eval: &[Example]) -> Result<f64> {
    if eval.is_empty() {
        return Err(invalid("evaluation set is empty"));
    }
    let mut correct = 0usize;
    for e in eval {
        crate::vector::check_dims(w, &e.x)?;
        if e.y * dot(w, &e.x) > 0.0 {
            correct += 1;
        }
    }
    Ok(correct as f64 / eval.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ex(x: &[f64], y: f64) -> Example {
        Example { x: x.to_vec(), y }
    }

    fn record(losses: Vec<Vec<f64>>, dim: usize) -> RunRecord {
        RunRecord {
            learners: losses[0].len(),
            rounds: losses.len(),
            dim,
            reference: 0,
            batch: 1,
            phi_reg: 0.0,
            private: false,
            epsilon: f64::INFINITY,
            losses,
            noise: vec![],
            reference_trajectory: vec![],
            trajectories: None,
            final_states: vec![],
            max_param_norm: 0.0,
            max_subgradient_norm: 0.0,
            lipschitz_violations: 0,
            wall_time_secs: 0.0,
        }
    }

    #[test]
    fn regret_matches_grid_search() {
        let hinge = LossModel::hinge();
        let set = FeasibleSet::default();
        let streams = vec![
            vec![ex(&[0.9, 0.1], 1.0), ex(&[-0.2, 0.7], -1.0), ex(&[0.3, 0.3], 1.0)],
            vec![ex(&[0.1, -0.8], -1.0), ex(&[0.6, 0.5], 1.0), ex(&[-0.5, -0.1], 1.0)],
        ];
        // the learner stays at zero: each loss is 1
        let rec = record(vec![vec![1.0; 2]; 3], 2);
        let rep = empirical_regret(&rec, &streams, &hinge, &set, None).unwrap();
        let total = |w: &[f64]| -> f64 {
            streams.iter().flatten().map(|e| hinge.value(w, &e.x, e.y).unwrap()).sum()
        };
        let mut grid_best = f64::INFINITY;
        let steps = 2000;
        for a in 0..=steps {
            for b in 0..=steps {
                let w = [-1.0 + 2.0 * a as f64 / steps as f64, -1.0 + 2.0 * b as f64 / steps as f64];
                if norm2(&w) <= 1.0 {
                    grid_best = grid_best.min(total(&w));
                }
            }
        }
        let want = 6.0 - grid_best;
        // the lattice optimum may sit up to ~L·√2·1e-3·6 above the true one
        assert!(rep.final_regret() >= want - 1e-9, "{} vs {want}", rep.final_regret());
        assert!(rep.final_regret() <= want + 0.02, "{} vs {want}", rep.final_regret());
        assert_eq!(rep.cumulative.len(), 3);
        assert_relative_eq!(rep.normalized[2], rep.cumulative[2] / 3.0);
    }

    #[test]
    fn regret_is_zero_at_the_comparator() {
        let hinge = LossModel::hinge();
        let set = FeasibleSet::default();
        let streams = vec![vec![ex(&[0.5, 0.0], 1.0), ex(&[0.0, 0.5], -1.0)]];
        let cache = ComparatorCache::new();
        let rec = record(vec![vec![0.0]; 2], 2);
        let w_star = empirical_regret(&rec, &streams, &hinge, &set, Some(&cache))
            .unwrap()
            .comparator;
        assert_eq!(cache.len(), 1);
        let losses: Vec<Vec<f64>> = streams[0]
            .iter()
            .map(|e| vec![hinge.value(&w_star, &e.x, e.y).unwrap()])
            .collect();
        let rep = empirical_regret(&record(losses, 2), &streams, &hinge, &set, Some(&cache)).unwrap();
        assert!(rep.final_regret().abs() < 1e-12);
        assert!(empirical_regret(&record(vec![vec![0.0]], 2), &[], &hinge, &set, None).is_err());
    }

    #[test]
    fn comparator_is_locally_optimal() {
        let hinge = LossModel::hinge();
        let set = FeasibleSet::default();
        let data = crate::data::generate_synthetic(3, 200, 0.0, 5).unwrap().examples;
        let mut flipped = data.clone();
        for e in flipped.iter_mut().step_by(4) {
            e.y = -e.y;
        }
        let obj = Objective {
            loss: &hinge,
            set: &set,
            examples: flipped.iter().collect(),
            scale: 1.0,
            quad: 0.0,
        };
        let w = solve_objective(&obj, 1).unwrap();
        let f = obj.value(&w);
        let mut rng = substream(77, Purpose::Audit, 0, 0);
        for _ in 0..100 {
            let d: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dn = norm2(&d);
            let mut p: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a + 1e-3 * b / dn).collect();
            set.project_in_place(&mut p);
            assert!(obj.value(&p) >= f - 1e-6, "{} < {f}", obj.value(&p));
        }
    }

    fn inputs() -> BoundInputs {
        BoundInputs::new(4, 1000, 5, 1.1, 0.1, 2.0, 1.0, 0.1, 4).unwrap()
    }

    #[test]
    fn strongly_convex_bound_by_hand() {
        let b = inputs();
        let (m, l, lam, r, n, eps) = (4.0, 1.1, 0.1, 2.0, 5.0, 1.0);
        let base: f64 = 1.0 - 0.1 / 64.0;
        let theta = base.powi(-2);
        let beta = base.powf(0.25);
        let k = 3.0 * beta * theta * m * l / (1.0 - beta);
        let lg = 1.0 + 1000f64.ln();
        let want = m * l / lam * (r + k + 6.5 * l) * lg
            + (k + (2.0 * l + 1.0) / (2.0 * m)) * (2.0 * 2f64.sqrt() * m * n * l / (lam * eps)) * lg
            + m * r / 2.0;
        assert_relative_eq!(theorem2_bound(&b, RegretCase::StronglyConvex).unwrap(), want, max_relative = 1e-12);
    }

    #[test]
    fn convex_bound_by_hand() {
        let mut b = inputs();
        b.lambda = 0.0;
        let (m, l, r, n, eps) = (4.0, 1.1, 2.0, 5.0, 1.0);
        let k = b.network_term();
        let u = 1000f64.sqrt() - 0.5;
        let noise = (k + (2.0 * l + 1.0) / (2.0 * m)) * (2.0 * 2f64.sqrt() * m * n * l / eps) * u;
        let want = m * l * (r + k + 6.5 * l) * u + noise + m * r / 2.0;
        assert_relative_eq!(theorem2_bound(&b, RegretCase::Convex).unwrap(), want, max_relative = 1e-12);
        b.convex_inverse_lambda = 2.0;
        let doubled = 2.0 * m * l * (r + k + 6.5 * l) * u + noise + m * r / 2.0;
        assert_relative_eq!(theorem2_bound(&b, RegretCase::Convex).unwrap(), doubled, max_relative = 1e-12);
    }

    #[test]
    fn bound_limits_and_growth() {
        let mut b = inputs();
        let private = theorem2_bound(&b, RegretCase::StronglyConvex).unwrap();
        b.epsilon = 1e12;
        let loose = theorem2_bound(&b, RegretCase::StronglyConvex).unwrap();
        b.epsilon = f64::INFINITY;
        let clean = theorem2_bound(&b, RegretCase::StronglyConvex).unwrap();
        assert!(private > loose && (loose - clean) / clean < 1e-9);

        // doubling T adds coefficient·ln 2
        let mut b = inputs();
        let at_t = theorem2_bound(&b, RegretCase::StronglyConvex).unwrap();
        b.rounds *= 2;
        let at_2t = theorem2_bound(&b, RegretCase::StronglyConvex).unwrap();
        let coef = (at_t - b.m as f64 * b.diameter / 2.0) / (1.0 + 1000f64.ln());
        assert_relative_eq!(at_2t - at_t, coef * 2f64.ln(), max_relative = 1e-10);

        let single = BoundInputs::new(1, 100, 3, 1.0, 1.0, 2.0, 0.5, 0.999, 1).unwrap();
        assert!(single.network_term().is_finite());
        assert!(theorem2_bound(&single, RegretCase::StronglyConvex).unwrap().is_finite());

        let mut bad = inputs();
        bad.beta = 1.0;
        assert!(theorem2_bound(&bad, RegretCase::Convex).is_err());
        let mut flat = inputs();
        flat.lambda = 0.0;
        assert!(theorem2_bound(&flat, RegretCase::StronglyConvex).is_err());
        assert!(theorem2_bound(&flat, RegretCase::Convex).unwrap() > 0.0);
    }

    #[test]
    fn offline_bounds() {
        let mut b = BoundInputs::new(4, 10_000, 10, 1.0, 1.0, 2.0, 1.0, 0.1, 4).unwrap();
        b.batch = 5;
        b.gamma = 0.01;
        let v = offline_utility_bound(&b, 500.0).unwrap();
        // 25·500/4e4 + 4·√ln 2000·5·√625/1e4 + 16·5·ln 100/1e4
        let oracle = 0.3125 + 4.0 * 2000f64.ln().sqrt() * 125.0 / 1e4 + 80.0 * 100f64.ln() / 1e4;
        assert_relative_eq!(v, oracle, max_relative = 1e-14);
        assert!((v - 0.487190).abs() < 1e-6, "{v}");

        let mut one = b;
        one.batch = 1;
        one.m = 1;
        assert_eq!(
            offline_utility_bound(&one, 30.0).unwrap(),
            centralized_offline_bound(1.0, 1.0, 10_000, 0.01, 30.0).unwrap()
        );
        let mut h2 = one;
        h2.batch = 2;
        let lead1 = 30.0 / 1e4;
        let lead2 = 4.0 * 30.0 / 1e4;
        assert_relative_eq!(lead2 / lead1, 4.0);
        assert!(offline_utility_bound(&h2, 30.0).unwrap() > offline_utility_bound(&one, 30.0).unwrap());

        let mut flat = b;
        flat.lambda = 0.0;
        assert!(matches!(offline_utility_bound(&flat, 1.0), Err(Error::Unsupported(_))));
        assert_eq!(minibatch_regret_inflation(3.0, 5), 15.0);
        assert_relative_eq!(bound_confidence(0.01, 100), 1.0 - 0.04 * 100f64.ln());
    }

    #[test]
    fn accuracy_rules() {
        let data = vec![ex(&[1.0, 0.0], 1.0), ex(&[-1.0, 0.0], -1.0)];
        assert_eq!(accuracy(&[0.0, 0.0], &data).unwrap(), 0.0);
        assert_eq!(accuracy(&[1.0, 0.0], &data).unwrap(), 1.0);
        assert!(accuracy(&[1.0, 0.0], &[]).is_err());

        let mut rng = substream(3, Purpose::Audit, 0, 1);
        let noise: Vec<Example> = (0..100_000)
            .map(|_| Example {
                x: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                y: if rng.random::<bool>() { 1.0 } else { -1.0 },
            })
            .collect();
        let a = accuracy(&[0.3, -0.7], &noise).unwrap();
        assert!((a - 0.5).abs() < 0.01, "{a}");
    }
}
