//! Distributed online learning with noised parameter exchange.
//!
//! Each round `t` every learner `i`
//!
//! 1. mixes the noised broadcasts of round `t` with row `i` of `A_{t+1}`,
//!    giving `b_t^i`,
//! 2. takes a subgradient of its round-`t` loss at `b_t^i`,
//! 3. projects `b_t^i − α_{t+1} g` back onto the feasible ball, and
//! 4. broadcasts the result plus Laplace noise of scale `S(t+1)/ε`.
//!
//! The initial broadcast uses the scale for `α_1`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{invalid, Error, Result};
use crate::loss::{FeasibleSet, LossModel, StepsizeSchedule};
use crate::privacy::{draw_noise, sensitivity_online, PrivacyParams};
use crate::topology::{CommMatrix, CommSchedule};
use crate::vector::norm2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub index: usize,
    pub w: Vec<f64>,
    /// `w + σ`, or a copy of `w` when privacy is off.
    pub broadcast: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineRunConfig {
    /// Number of rounds T. Each learner consumes one example per round.
    pub rounds: usize,
    pub dim: usize,
    pub loss: LossModel,
    pub set: FeasibleSet,
    pub schedule: CommSchedule,
    pub privacy: PrivacyParams,
    pub stepsize: StepsizeSchedule,
    /// Master seed of the noise substreams.
    pub seed: u64,
    /// Learner whose parameters the regret is measured on.
    pub reference: usize,
    pub workers: usize,
    /// Starting points; all zeros when `None`.
    pub initial: Option<Vec<Vec<f64>>>,
    /// Keep every learner's parameters for every round.
    pub record_trajectories: bool,
}

impl OnlineRunConfig {
    /// Defaults: unit ball, reference learner 0, one worker, zero start.
    pub fn new(
        rounds: usize,
        dim: usize,
        loss: LossModel,
        schedule: CommSchedule,
        privacy: PrivacyParams,
        stepsize: StepsizeSchedule,
        seed: u64,
    ) -> Self {
        Self {
            rounds,
            dim,
            loss,
            set: FeasibleSet::default(),
            schedule,
            privacy,
            stepsize,
            seed,
            reference: 0,
            workers: 1,
            initial: None,
            record_trajectories: false,
        }
    }

    pub fn learners(&self) -> usize {
        self.schedule.m
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("dimension must be >= 1"));
        }
        if self.reference >= self.learners() {
            return Err(invalid(format!(
                "reference learner {} out of range for m = {}",
                self.reference,
                self.learners()
            )));
        }
        self.privacy.validate()?;
        if let Some(init) = &self.initial {
            if init.len() != self.learners() || init.iter().any(|w| w.len() != self.dim) {
                return Err(invalid("initial points must be m vectors of dimension n"));
            }
            if init.iter().any(|w| !self.set.contains(w)) {
                return Err(invalid("initial points must lie in the feasible set"));
            }
        }
        Ok(())
    }

    pub(crate) fn initial_points(&self) -> Vec<Vec<f64>> {
        self.initial
            .clone()
            .unwrap_or_else(|| vec![vec![0.0; self.dim]; self.learners()])
    }
}

/// One logged noise draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLog {
    /// Index of the broadcast the noise was added to (0 is the initial one).
    pub round: usize,
    pub learner: usize,
    /// Stepsize the scale was calibrated from.
    pub alpha: f64,
    pub scale: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub learners: usize,
    pub rounds: usize,
    pub dim: usize,
    pub reference: usize,
    /// Examples per learner per round (1 for the online engine).
    pub batch: usize,
    pub phi_reg: f64,
    pub private: bool,
    pub epsilon: f64,
    /// `losses[t][i]`: learner `i`'s round-`t` loss at the reference
    /// learner's parameters `w_t^j` (batch mean for the offline engine).
    pub losses: Vec<Vec<f64>>,
    pub noise: Vec<NoiseLog>,
    /// `w_t^j` for `t = 0..=T`.
    pub reference_trajectory: Vec<Vec<f64>>,
    /// `trajectories[t][i]`, present when requested.
    pub trajectories: Option<Vec<Vec<Vec<f64>>>>,
    pub final_states: Vec<LearnerState>,
    pub max_param_norm: f64,
    /// Largest subgradient norm seen at points inside the feasible set.
    pub max_subgradient_norm: f64,
    /// Subgradients inside the feasible set that exceeded the configured L.
    pub lipschitz_violations: usize,
    pub wall_time_secs: f64,
}

impl RunRecord {
    /// `Σ_i f_t^i(w_t^j)` per round.
    pub fn round_losses(&self) -> Vec<f64> {
        self.losses.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn cumulative_loss(&self) -> f64 {
        self.round_losses().iter().sum()
    }

    /// Noise norms per `(round, learner)` in broadcast order.
    pub fn noise_l2(&self, round: usize, learner: usize) -> f64 {
        self.noise
            .iter()
            .find(|n| n.round == round && n.learner == learner)
            .map_or(0.0, |n| n.l2)
    }
}

/// Result of one learner update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: LearnerState,
    /// `(α, μ, ‖σ‖₂)` of the fresh broadcast noise.
    pub noise: Option<(f64, f64, f64)>,
    /// Largest per-example subgradient norm in this step.
    pub subgradient_norm: f64,
    /// Whether the subgradient point lay inside the feasible set.
    pub evaluated_in_set: bool,
}

/// `Σ_j row[j]·broadcasts[j]`, summed over the support in ascending `j`.
pub fn weighted_average(row: &[f64], broadcasts: &[Vec<f64>]) -> Result<Vec<f64>> {
    if row.len() != broadcasts.len() {
        return Err(invalid(format!(
            "{} weights for {} broadcasts",
            row.len(),
            broadcasts.len()
        )));
    }
    let n = broadcasts.first().map_or(0, Vec::len);
    if broadcasts.iter().any(|b| b.len() != n) {
        return Err(invalid("broadcast dimensions differ"));
    }
    let mut acc: Option<Vec<f64>> = None;
    for (&a, v) in row.iter().zip(broadcasts) {
        if a == 0.0 {
            continue;
        }
        match acc.as_mut() {
            None => acc = Some(v.iter().map(|x| a * x).collect()),
            Some(s) => s.iter_mut().zip(v).for_each(|(s, x)| *s += a * x),
        }
    }
    Ok(acc.unwrap_or_else(|| vec![0.0; n]))
}

/// `Pro[b − α·direction]`.
pub(crate) fn descend(set: &FeasibleSet, b: &[f64], alpha: f64, direction: &[f64]) -> Vec<f64> {
    let mut w: Vec<f64> = b.iter().zip(direction).map(|(bi, gi)| bi - alpha * gi).collect();
    set.project_in_place(&mut w);
    w
}

/// Noised copy of `w` for broadcast `round`, with scale `sensitivity/ε`.
pub(crate) fn noised_broadcast(
    w: &[f64],
    privacy: &PrivacyParams,
    sensitivity: f64,
    seed: u64,
    learner: usize,
    round: usize,
) -> Result<(Vec<f64>, Option<f64>, f64)> {
    match privacy.noise_scale(sensitivity) {
        None => Ok((w.to_vec(), None, 0.0)),
        Some(scale) => {
            let draw = draw_noise(seed, learner, round, w.len(), scale)?;
            let l2 = norm2(&draw.sigma);
            let out = w.iter().zip(&draw.sigma).map(|(a, s)| a + s).collect();
            Ok((out, Some(scale), l2))
        }
    }
}

/// One projected subgradient step of learner `state.index` in round `t`.
pub fn learner_step(
    state: &LearnerState,
    b: &[f64],
    example: &Example,
    t: usize,
    cfg: &OnlineRunConfig,
) -> Result<StepOutcome> {
    let g = cfg.loss.subgradient(b, &example.x, example.y)?;
    let alpha = cfg.stepsize.at(t + 1)?;
    let w = descend(&cfg.set, b, alpha, &g);
    let sensitivity = sensitivity_online(alpha, cfg.dim, cfg.loss.lipschitz)?;
    let (broadcast, scale, l2) =
        noised_broadcast(&w, &cfg.privacy, sensitivity, cfg.seed, state.index, t + 1)?;
    Ok(StepOutcome {
        state: LearnerState {
            index: state.index,
            w,
            broadcast,
        },
        noise: scale.map(|s| (alpha, s, l2)),
        subgradient_norm: norm2(&g),
        evaluated_in_set: cfg.set.contains(b),
    })
}

/// Round loop shared by the online and mini-batch engines.
pub(crate) struct Driver<'a> {
    pub cfg: &'a OnlineRunConfig,
    pub rounds: usize,
    pub batch: usize,
    pub phi_reg: f64,
    /// Sensitivity for the broadcast that follows a step with stepsize α.
    pub sensitivity: &'a (dyn Fn(f64) -> Result<f64> + Sync),
    pub step: &'a (dyn Fn(&LearnerState, &[f64], &[Example], usize) -> Result<StepOutcome> + Sync),
}

pub(crate) struct DriverOutput {
    pub record: RunRecord,
    /// Running mean of `w_1, …, w_R` per learner.
    pub averaged: Vec<Vec<f64>>,
}

impl Driver<'_> {
    pub fn run(&self, streams: &[Vec<Example>]) -> Result<DriverOutput> {
        let cfg = self.cfg;
        cfg.validate()?;
        let m = cfg.learners();
        if streams.len() != m {
            return Err(invalid(format!("{} data streams for {m} learners", streams.len())));
        }
        let need = self.rounds * self.batch;
        let available = streams.iter().map(Vec::len).min().unwrap_or(0);
        if available < need {
            return Err(Error::RunTruncated {
                last_complete_round: available / self.batch,
                reason: format!("streams hold {available} examples, {need} needed"),
            });
        }
        if let Some(bad) = streams
            .iter()
            .flat_map(|s| &s[..need])
            .find(|e| e.x.len() != cfg.dim)
        {
            return Err(invalid(format!(
                "example of dimension {} in a run of dimension {}",
                bad.x.len(),
                cfg.dim
            )));
        }

        let started = Instant::now();
        let pool = if cfg.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.workers)
                    .build()
                    .map_err(|e| invalid(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };

        let j = cfg.reference;
        let mut noise_log = Vec::new();
        let initial_alpha = cfg.stepsize.at(1)?;
        let initial_sensitivity = (self.sensitivity)(initial_alpha)?;
        let mut states = Vec::with_capacity(m);
        for (i, w) in cfg.initial_points().into_iter().enumerate() {
            let (broadcast, scale, l2) =
                noised_broadcast(&w, &cfg.privacy, initial_sensitivity, cfg.seed, i, 0)?;
            if let Some(scale) = scale {
                noise_log.push(NoiseLog {
                    round: 0,
                    learner: i,
                    alpha: initial_alpha,
                    scale,
                    l2,
                });
            }
            states.push(LearnerState { index: i, w, broadcast });
        }

        let mut losses = Vec::with_capacity(self.rounds);
        let mut reference_trajectory = Vec::with_capacity(self.rounds + 1);
        reference_trajectory.push(states[j].w.clone());
        let mut trajectories = cfg.record_trajectories.then(|| {
            let mut v = Vec::with_capacity(self.rounds + 1);
            v.push(states.iter().map(|s| s.w.clone()).collect::<Vec<_>>());
            v
        });
        let mut averaged = vec![vec![0.0; cfg.dim]; m];
        let mut max_param_norm = states.iter().map(|s| norm2(&s.w)).fold(0.0, f64::max);
        let mut max_subgradient_norm: f64 = 0.0;
        let mut lipschitz_violations = 0;
        let lipschitz_limit = cfg.loss.lipschitz * (1.0 + 1e-12);

        for t in 0..self.rounds {
            let a: CommMatrix = cfg.schedule.matrix(t + 1);
            let broadcasts: Vec<Vec<f64>> = states.iter().map(|s| s.broadcast.clone()).collect();
            let w_ref = states[j].w.clone();
            let lo = t * self.batch;
            let hi = lo + self.batch;

            let work = |i: usize| -> Result<(StepOutcome, f64)> {
                let batch = &streams[i][lo..hi];
                let b = weighted_average(a.row(i), &broadcasts)?;
                let outcome = (self.step)(&states[i], &b, batch, t)?;
                let loss = batch_mean_loss(&cfg.loss, &w_ref, batch, self.phi_reg);
                Ok((outcome, loss))
            };
            let results: Vec<Result<(StepOutcome, f64)>> = match &pool {
                Some(pool) => pool.install(|| (0..m).into_par_iter().map(work).collect()),
                None => (0..m).map(work).collect(),
            };

            let mut row = Vec::with_capacity(m);
            for (i, res) in results.into_iter().enumerate() {
                let (outcome, loss) = res?;
                row.push(loss);
                if outcome.evaluated_in_set {
                    max_subgradient_norm = max_subgradient_norm.max(outcome.subgradient_norm);
                    if outcome.subgradient_norm > lipschitz_limit {
                        lipschitz_violations += 1;
                    }
                }
                if let Some((alpha, scale, l2)) = outcome.noise {
                    noise_log.push(NoiseLog {
                        round: t + 1,
                        learner: i,
                        alpha,
                        scale,
                        l2,
                    });
                }
                let k = (t + 1) as f64;
                for (avg, w) in averaged[i].iter_mut().zip(&outcome.state.w) {
                    *avg += (w - *avg) / k;
                }
                max_param_norm = max_param_norm.max(norm2(&outcome.state.w));
                states[i] = outcome.state;
            }
            losses.push(row);
            reference_trajectory.push(states[j].w.clone());
            if let Some(tr) = trajectories.as_mut() {
                tr.push(states.iter().map(|s| s.w.clone()).collect());
            }
        }

        Ok(DriverOutput {
            record: RunRecord {
                learners: m,
                rounds: self.rounds,
                dim: cfg.dim,
                reference: j,
                batch: self.batch,
                phi_reg: self.phi_reg,
                private: cfg.privacy.enabled,
                epsilon: cfg.privacy.epsilon,
                losses,
                noise: noise_log,
                reference_trajectory,
                trajectories,
                final_states: states,
                max_param_norm,
                max_subgradient_norm,
                lipschitz_violations,
                wall_time_secs: started.elapsed().as_secs_f64(),
            },
            averaged,
        })
    }
}

/// Mean loss over a batch, plus `(φ/2)‖w‖²` when `phi_reg > 0`.
pub(crate) fn batch_mean_loss(loss: &LossModel, w: &[f64], batch: &[Example], phi_reg: f64) -> f64 {
    let mut iter = batch.iter().map(|e| loss.value_unchecked(w, &e.x, e.y));
    let first = iter.next().unwrap_or(0.0);
    let sum = iter.fold(first, |s, v| s + v);
    let mean = sum / batch.len() as f64;
    if phi_reg > 0.0 {
        mean + 0.5 * phi_reg * crate::vector::dot(w, w)
    } else {
        mean
    }
}

/// Runs T rounds over per-learner streams of at least T examples.
pub fn run_online(cfg: &OnlineRunConfig, streams: &[Vec<Example>]) -> Result<RunRecord> {
    let sensitivity = |alpha: f64| sensitivity_online(alpha, cfg.dim, cfg.loss.lipschitz);
    let step = |state: &LearnerState, b: &[f64], batch: &[Example], t: usize| {
        learner_step(state, b, &batch[0], t, cfg)
    };
    let driver = Driver {
        cfg,
        rounds: cfg.rounds,
        batch: 1,
        phi_reg: 0.0,
        sensitivity: &sensitivity,
        step: &step,
    };
    Ok(driver.run(streams)?.record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::ScheduleMode;

    fn ex(x: &[f64], y: f64) -> Example {
        Example { x: x.to_vec(), y }
    }

    fn single(privacy: PrivacyParams) -> OnlineRunConfig {
        let schedule = CommSchedule::new(ScheduleMode::FixedComplete, 1, 0.5, 1, 0).unwrap();
        OnlineRunConfig::new(
            3,
            2,
            LossModel::hinge(),
            schedule,
            privacy,
            StepsizeSchedule::Convex,
            0,
        )
    }

    #[test]
    fn weighted_average_examples() {
        let v = vec![vec![0.3, -0.7]];
        assert_eq!(weighted_average(&[1.0], &v).unwrap(), v[0]);
        let same = vec![vec![0.2, 0.4]; 4];
        let avg = weighted_average(&[0.25; 4], &same).unwrap();
        assert!(avg.iter().zip(&same[0]).all(|(a, b)| (a - b).abs() < 1e-15));
        let mix = weighted_average(&[0.75, 0.25], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(mix, vec![0.75, 0.25]);
        assert!(weighted_average(&[0.5, 0.5], &[vec![1.0]]).is_err());
    }

    #[test]
    fn step_with_satisfied_margin_stays_put() {
        let cfg = single(PrivacyParams::non_private());
        let state = LearnerState { index: 0, w: vec![0.0; 2], broadcast: vec![0.0; 2] };
        // margin exactly 1 on the boundary of the ball: zero subgradient
        let b = [1.0, 0.0];
        let out = learner_step(&state, &b, &ex(&[1.0, 0.0], 1.0), 5, &cfg).unwrap();
        assert_eq!(out.state.w, b.to_vec());
        assert_eq!(out.state.broadcast, b.to_vec());
        assert_eq!(out.subgradient_norm, 0.0);
        // margin 0.6 moves the iterate
        let b = [0.6, 0.0];
        let out = learner_step(&state, &b, &ex(&[1.0, 0.0], 1.0), 0, &cfg).unwrap();
        assert_ne!(out.state.w, b.to_vec());
    }

    #[test]
    fn hand_stepped_update() {
        // α_{t+1} = 0.5 with the convex schedule at t + 1 = 1
        let cfg = single(PrivacyParams::non_private());
        let state = LearnerState { index: 0, w: vec![0.0; 2], broadcast: vec![0.0; 2] };
        let out = learner_step(&state, &[0.0, 0.0], &ex(&[1.0, 0.0], 1.0), 0, &cfg).unwrap();
        // scalar oracle: g = -y x = (-1, 0); w = Pro[(0,0) - 0.5 g]
        let (w0, w1) = (0.0 - -0.5, 0.0 - 0.5 * 0.0);
        assert_eq!(out.state.w, vec![w0, w1]);
        assert_eq!(out.state.w, vec![0.5, 0.0]);
    }

    #[test]
    fn private_broadcast_scale() {
        // α_{t+1} = 0.25 at t + 1 = 4 under the convex schedule
        let cfg = single(PrivacyParams::private(0.1).unwrap());
        let state = LearnerState { index: 0, w: vec![0.0; 2], broadcast: vec![0.0; 2] };
        let out = learner_step(&state, &[0.0, 0.0], &ex(&[0.5, 0.0], 1.0), 3, &cfg).unwrap();
        let (alpha, mu, _) = out.noise.unwrap();
        assert_eq!(alpha, 0.25);
        assert!((mu - 2.0 * 0.25 * 2f64.sqrt() / 0.1).abs() < 1e-12);
        assert!((mu - 7.0711).abs() < 1e-4);
    }

    #[test]
    fn zero_rounds_keeps_initial_state() {
        let mut cfg = single(PrivacyParams::non_private());
        cfg.rounds = 0;
        let rec = run_online(&cfg, &[vec![]]).unwrap();
        assert!(rec.losses.is_empty());
        assert_eq!(rec.reference_trajectory, vec![vec![0.0, 0.0]]);
        assert_eq!(rec.cumulative_loss(), 0.0);
    }

    #[test]
    fn data_exhaustion_is_reported() {
        let cfg = single(PrivacyParams::non_private());
        let err = run_online(&cfg, &[vec![ex(&[1.0, 0.0], 1.0); 2]]).unwrap_err();
        assert!(matches!(err, Error::RunTruncated { last_complete_round: 2, .. }));
        assert!(run_online(&cfg, &[]).is_err());
    }
}
