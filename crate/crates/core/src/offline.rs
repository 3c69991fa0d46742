//! Distributed offline learning with mini-batch subgradients.
//!
//! Each learner processes its shard in `T/h` rounds of `h` disjoint examples.
//! The update is the online one with the batch mean subgradient, an optional
//! `φ·w` regularization term, and noise of scale `S(t)/(hε)`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{invalid, Error, Result};
use crate::metrics::{accuracy, solve_objective, Objective};
use crate::online::{
    batch_mean_loss, descend, noised_broadcast, Driver, LearnerState, OnlineRunConfig, RunRecord,
    StepOutcome,
};
use crate::privacy::sensitivity_minibatch;
use crate::vector::norm2;

/// Point the `φ·w` term is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizeAt {
    /// The learner's own pre-averaging parameter `w_t^i`.
    #[default]
    Local,
    /// The averaged point `b_t^i`.
    Averaged,
}

impl FromStr for RegularizeAt {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Self::Local),
            "averaged" => Ok(Self::Averaged),
            _ => Err(invalid(format!("unknown regularization point `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineRunConfig {
    /// `online.rounds` is the per-learner sample budget T; the engine runs
    /// `T/h` rounds.
    pub online: OnlineRunConfig,
    pub batch: usize,
    pub phi_reg: f64,
    pub regularize_at: RegularizeAt,
    /// Solve for `w*` and report the excess risk on the evaluation set.
    pub excess_risk: bool,
}

impl OfflineRunConfig {
    pub fn new(online: OnlineRunConfig, batch: usize, phi_reg: f64) -> Self {
        Self {
            online,
            batch,
            phi_reg,
            regularize_at: RegularizeAt::Local,
            excess_risk: true,
        }
    }

    pub fn outer_rounds(&self) -> usize {
        self.online.rounds / self.batch.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(invalid("batch size must be >= 1"));
        }
        if !(self.phi_reg >= 0.0 && self.phi_reg.is_finite()) {
            return Err(invalid(format!("phi_reg must be >= 0, got {}", self.phi_reg)));
        }
        if !self.online.rounds.is_multiple_of(self.batch) {
            log::warn!(
                "T = {} is not a multiple of h = {}; the last {} examples per learner are unused",
                self.online.rounds,
                self.batch,
                self.online.rounds % self.batch
            );
        }
        self.online.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessRiskEstimate {
    pub reference: usize,
    /// Running mean of the reference learner's `w_1, …, w_R`.
    pub averaged: Vec<f64>,
    pub risk_averaged: f64,
    pub risk_optimum: f64,
    pub optimum: Vec<f64>,
    pub gap: f64,
    /// Held-out accuracy of the averaged iterate.
    pub accuracy: f64,
}

/// `(1/h)·Σ_k g_k` at `b`, summed in batch order.
pub fn batch_subgradient(
    model: &crate::loss::LossModel,
    b: &[f64],
    batch: &[Example],
) -> Result<Vec<f64>> {
    Ok(batch_subgradient_with_norm(model, b, batch)?.0)
}

fn batch_subgradient_with_norm(
    model: &crate::loss::LossModel,
    b: &[f64],
    batch: &[Example],
) -> Result<(Vec<f64>, f64)> {
    let (first, rest) = batch
        .split_first()
        .ok_or_else(|| invalid("batch must hold at least one example"))?;
    let mut sum = model.subgradient(b, &first.x, first.y)?;
    let mut max_norm = norm2(&sum);
    let mut g = vec![0.0; b.len()];
    for e in rest {
        model.subgradient_into(b, &e.x, e.y, &mut g);
        max_norm = max_norm.max(norm2(&g));
        sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
    }
    if !rest.is_empty() {
        let h = batch.len() as f64;
        sum.iter_mut().for_each(|s| *s /= h);
    }
    Ok((sum, max_norm))
}

/// One mini-batch step. `t` is the outer round index.
pub fn offline_learner_step(
    state: &LearnerState,
    b: &[f64],
    batch: &[Example],
    t: usize,
    cfg: &OfflineRunConfig,
) -> Result<StepOutcome> {
    let on = &cfg.online;
    let (mut dir, subgradient_norm) = batch_subgradient_with_norm(&on.loss, b, batch)?;
    if cfg.phi_reg > 0.0 {
        let point: &[f64] = match cfg.regularize_at {
            RegularizeAt::Local => &state.w,
            RegularizeAt::Averaged => b,
        };
        dir.iter_mut().zip(point).for_each(|(d, w)| *d += cfg.phi_reg * w);
    }
    let alpha = on.stepsize.at(t + 1)?;
    let w = descend(&on.set, b, alpha, &dir);
    let sensitivity = sensitivity_minibatch(alpha, on.dim, on.loss.lipschitz, cfg.batch)?;
    let (broadcast, scale, l2) =
        noised_broadcast(&w, &on.privacy, sensitivity, on.seed, state.index, t + 1)?;
    Ok(StepOutcome {
        state: LearnerState {
            index: state.index,
            w,
            broadcast,
        },
        noise: scale.map(|s| (alpha, s, l2)),
        subgradient_norm,
        evaluated_in_set: on.set.contains(b),
    })
}

fn run_driver(cfg: &OfflineRunConfig, streams: &[Vec<Example>]) -> Result<(RunRecord, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let on = &cfg.online;
    let sensitivity = |alpha: f64| sensitivity_minibatch(alpha, on.dim, on.loss.lipschitz, cfg.batch);
    let step = |state: &LearnerState, b: &[f64], batch: &[Example], t: usize| {
        offline_learner_step(state, b, batch, t, cfg)
    };
    let driver = Driver {
        cfg: on,
        rounds: cfg.outer_rounds(),
        batch: cfg.batch,
        phi_reg: cfg.phi_reg,
        sensitivity: &sensitivity,
        step: &step,
    };
    let out = driver.run(streams)?;
    Ok((out.record, out.averaged))
}

/// Runs `T/h` rounds and estimates the excess risk of the reference
/// learner's averaged iterate on `eval`.
///
/// `w*` minimizes the regularized mean loss over the consumed training
/// examples. With `excess_risk` off the optimum fields are NaN.
pub fn run_offline(
    cfg: &OfflineRunConfig,
    streams: &[Vec<Example>],
    eval: &[Example],
) -> Result<(RunRecord, ExcessRiskEstimate)> {
    if eval.is_empty() {
        return Err(invalid("evaluation set is empty"));
    }
    let (record, averaged) = run_driver(cfg, streams)?;
    let on = &cfg.online;
    let j = on.reference;
    let w_bar = if record.rounds == 0 {
        record.final_states[j].w.clone()
    } else {
        averaged[j].clone()
    };
    let risk = |w: &[f64]| batch_mean_loss(&on.loss, w, eval, cfg.phi_reg);
    let risk_averaged = risk(&w_bar);
    let (optimum, risk_optimum) = if cfg.excess_risk && record.rounds > 0 {
        let used = record.rounds * cfg.batch;
        let pool: Vec<&Example> = streams.iter().flat_map(|s| &s[..used]).collect();
        let n = pool.len() as f64;
        let objective = Objective {
            loss: &on.loss,
            set: &on.set,
            examples: pool,
            scale: 1.0 / n,
            quad: cfg.phi_reg,
        };
        let w_star = solve_objective(&objective, j as u64)?;
        let r = risk(&w_star);
        (w_star, r)
    } else {
        (vec![f64::NAN; on.dim], f64::NAN)
    };
    let estimate = ExcessRiskEstimate {
        reference: j,
        accuracy: accuracy(&w_bar, eval)?,
        gap: risk_averaged - risk_optimum,
        averaged: w_bar,
        risk_averaged,
        risk_optimum,
        optimum,
    };
    Ok((record, estimate))
}

/// Mini-batch hinge training; returns the reference learner's averaged
/// iterate and its held-out accuracy.
pub fn train_svm(
    cfg: &OfflineRunConfig,
    streams: &[Vec<Example>],
    holdout: &[Example],
) -> Result<(Vec<f64>, f64)> {
    if cfg.online.loss.kind != crate::loss::LossKind::Hinge {
        return Err(invalid("train_svm needs the hinge loss"));
    }
    let mut cfg = cfg.clone();
    cfg.excess_risk = false;
    let (_, est) = run_offline(&cfg, streams, holdout)?;
    Ok((est.averaged, est.accuracy))
}
