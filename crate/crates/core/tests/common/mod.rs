#![allow(dead_code)]

use dpol::privacy::draw_noise;
use dpol::{Example, FeasibleSet, LossModel, RunRecord, StepsizeSchedule};

/// Plain single-learner private projected subgradient descent.
pub fn centralized(
    loss: &LossModel,
    step: &StepsizeSchedule,
    set: &FeasibleSet,
    eps: f64,
    seed: u64,
    data: &[Example],
) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let n = data[0].x.len();
    let scale = |alpha: f64| 2.0 * alpha * (n as f64).sqrt() * loss.lipschitz / eps;
    let mut w = vec![0.0; n];
    let mut mus = vec![scale(step.at(1).unwrap())];
    let sigma = draw_noise(seed, 0, 0, n, mus[0]).unwrap().sigma;
    let mut noised: Vec<f64> = w.iter().zip(&sigma).map(|(a, s)| a + s).collect();
    let mut path = vec![w.clone()];
    let mut losses = Vec::new();
    for (t, ex) in data.iter().enumerate() {
        losses.push(loss.value(&w, &ex.x, ex.y).unwrap());
        let alpha = step.at(t + 1).unwrap();
        let g = loss.subgradient(&noised, &ex.x, ex.y).unwrap();
        let raw: Vec<f64> = noised.iter().zip(&g).map(|(b, g)| b - alpha * g).collect();
        w = set.project(&raw);
        let mu = scale(alpha);
        mus.push(mu);
        let sigma = draw_noise(seed, 0, t + 1, n, mu).unwrap().sigma;
        noised = w.iter().zip(&sigma).map(|(a, s)| a + s).collect();
        path.push(w.clone());
    }
    (path, losses, mus)
}

pub fn same_run(a: &RunRecord, b: &RunRecord) -> bool {
    a.losses == b.losses
        && a.noise == b.noise
        && a.reference_trajectory == b.reference_trajectory
        && a.final_states == b.final_states
        && a.trajectories == b.trajectories
}
