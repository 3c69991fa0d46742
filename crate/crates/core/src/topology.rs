//! Time-varying doubly stochastic communication schedules.
//!
//! A [`CommSchedule`] is a pure function from round index to an m×m weight
//! matrix. Three realizations are provided:
//!
//! * `fixed_complete`: every entry is `1/m`.
//! * `ring_rotation`: `(1−c)I + cP_s` where `P_s` shifts learner `i` to
//!   `i+s (mod m)`, the shift cycling through `1..m−1` across rounds and the
//!   weight `c` drawn from `[η, 1/2]`. Only rounds whose shift is coprime to
//!   `m` are connected on their own, so the window must be at least `m−1`.
//! * `random_pairwise_gossip`: a seeded random matching whose pairs mix with
//!   weight `c ∈ [η, 1/2]`; every round divisible by the window is a shift-1
//!   ring round, which makes each window of `N` rounds strongly connected.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{substream, Purpose};

pub const DOUBLY_STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    FixedComplete,
    RandomPairwiseGossip,
    RingRotation,
}

impl ScheduleMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::FixedComplete => "fixed_complete",
            Self::RandomPairwiseGossip => "random_pairwise_gossip",
            Self::RingRotation => "ring_rotation",
        }
    }
}

impl std::str::FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_complete" => Ok(Self::FixedComplete),
            "random_pairwise_gossip" => Ok(Self::RandomPairwiseGossip),
            "ring_rotation" => Ok(Self::RingRotation),
            other => Err(invalid(format!("unknown schedule mode `{other}`"))),
        }
    }
}

/// Row-major m×m weight matrix for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct CommMatrix {
    m: usize,
    round: usize,
    entries: Vec<f64>,
}

impl CommMatrix {
    pub fn from_rows(round: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(invalid("communication matrix must be square and nonempty"));
        }
        Ok(Self {
            m,
            round,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    fn identity(m: usize, round: usize) -> Self {
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            entries[i * m + i] = 1.0;
        }
        Self { m, round, entries }
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn round(&self) -> usize {
        self.round
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.m).map(<[f64]>::to_vec).collect()
    }

    pub fn validate(&self, eta: f64) -> ValidationReport {
        validate_matrix(self, eta)
    }

    /// `self · rhs`.
    fn matmul(&self, rhs: &CommMatrix) -> CommMatrix {
        let m = self.m;
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                let a = self.entries[i * m + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..m {
                    out[i * m + j] += a * rhs.entries[k * m + j];
                }
            }
        }
        CommMatrix {
            m,
            round: self.round,
            entries: out,
        }
    }
}

/// Outcome of [`validate_matrix`]. Lists every offending index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    /// `(row, sum)` for rows whose sum is off by more than the tolerance.
    pub bad_row_sums: Vec<(usize, f64)>,
    pub bad_col_sums: Vec<(usize, f64)>,
    /// Positive entries below η.
    pub below_threshold: Vec<(usize, usize, f64)>,
    pub negative_entries: Vec<(usize, usize, f64)>,
    /// Diagonal entries that are not strictly positive. Reported, but not part
    /// of [`ValidationReport::passed`].
    pub nonpositive_diagonal: Vec<usize>,
}

impl ValidationReport {
    pub fn doubly_stochastic(&self) -> bool {
        self.bad_row_sums.is_empty() && self.bad_col_sums.is_empty() && self.negative_entries.is_empty()
    }

    pub fn threshold_ok(&self) -> bool {
        self.below_threshold.is_empty()
    }

    pub fn passed(&self) -> bool {
        self.doubly_stochastic() && self.threshold_ok()
    }
}

pub fn validate_matrix(mat: &CommMatrix, eta: f64) -> ValidationReport {
    let m = mat.m;
    let mut report = ValidationReport::default();
    for i in 0..m {
        let row: f64 = mat.row(i).iter().sum();
        if (row - 1.0).abs() > DOUBLY_STOCHASTIC_TOL {
            report.bad_row_sums.push((i, row));
        }
        let col: f64 = (0..m).map(|k| mat.get(k, i)).sum();
        if (col - 1.0).abs() > DOUBLY_STOCHASTIC_TOL {
            report.bad_col_sums.push((i, col));
        }
        if mat.get(i, i) <= 0.0 {
            report.nonpositive_diagonal.push(i);
        }
        for j in 0..m {
            let a = mat.get(i, j);
            if a < 0.0 {
                report.negative_entries.push((i, j, a));
            } else if a > 0.0 && a < eta {
                report.below_threshold.push((i, j, a));
            }
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommSchedule {
    pub m: usize,
    pub eta: f64,
    /// Connectivity window N.
    pub window: usize,
    pub seed: u64,
    pub mode: ScheduleMode,
}

impl CommSchedule {
    pub fn new(mode: ScheduleMode, m: usize, eta: f64, window: usize, seed: u64) -> Result<Self> {
        if m < 1 {
            return Err(invalid("need at least one learner"));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(invalid(format!("eta must lie in (0, 1), got {eta}")));
        }
        if window < 1 {
            return Err(invalid("connectivity window must be >= 1"));
        }
        if m > 1 {
            match mode {
                ScheduleMode::FixedComplete if eta >= 1.0 / m as f64 => {
                    return Err(Error::InfeasibleThreshold(format!(
                        "eta {eta} >= 1/m = {} for the complete uniform matrix",
                        1.0 / m as f64
                    )));
                }
                ScheduleMode::RandomPairwiseGossip | ScheduleMode::RingRotation if eta > 0.5 => {
                    return Err(Error::InfeasibleThreshold(format!(
                        "eta {eta} > 1/2 leaves no admissible mixing weight"
                    )));
                }
                _ => {}
            }
        }
        Ok(Self {
            m,
            eta,
            window,
            seed,
            mode,
        })
    }

    /// The matrix `A_t`. Pure in `(seed, t)`.
    pub fn matrix(&self, t: usize) -> CommMatrix {
        let m = self.m;
        if m == 1 {
            return CommMatrix::identity(1, t);
        }
        match self.mode {
            ScheduleMode::FixedComplete => CommMatrix {
                m,
                round: t,
                entries: vec![1.0 / m as f64; m * m],
            },
            ScheduleMode::RingRotation => {
                let shift = if m <= 2 { 1 } else { 1 + t % (m - 1) };
                self.ring(t, shift)
            }
            ScheduleMode::RandomPairwiseGossip => {
                if t.is_multiple_of(self.window) {
                    self.ring(t, 1)
                } else {
                    self.matching(t)
                }
            }
        }
    }

    fn mixing_weight<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.eta >= 0.5 {
            0.5
        } else {
            rng.random_range(self.eta..=0.5)
        }
    }

    fn ring(&self, t: usize, shift: usize) -> CommMatrix {
        let m = self.m;
        let mut rng = substream(self.seed, Purpose::Topology, 0, t);
        let c = self.mixing_weight(&mut rng);
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            entries[i * m + i] = 1.0 - c;
            entries[i * m + (i + shift) % m] += c;
        }
        CommMatrix { m, round: t, entries }
    }

    fn matching(&self, t: usize) -> CommMatrix {
        let m = self.m;
        let mut rng = substream(self.seed, Purpose::Topology, 0, t);
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            entries[i * m + i] = 1.0;
        }
        for pair in order.chunks_exact(2) {
            let (i, j) = (pair[0], pair[1]);
            let c = self.mixing_weight(&mut rng);
            entries[i * m + i] = 1.0 - c;
            entries[j * m + j] = 1.0 - c;
            entries[i * m + j] = c;
            entries[j * m + i] = c;
        }
        CommMatrix { m, round: t, entries }
    }

    /// `φ(k,s) = A(k)A(k−1)···A(s+1)`, the identity when `k = s`.
    pub fn phi_product(&self, k: usize, s: usize) -> Result<CommMatrix> {
        if k < s {
            return Err(invalid(format!("phi_product needs k >= s, got k={k}, s={s}")));
        }
        let mut phi = CommMatrix::identity(self.m, k);
        for t in s + 1..=k {
            phi = self.matrix(t).matmul(&phi);
        }
        phi.round = k;
        Ok(phi)
    }

    /// Iterates `φ(k, s)` for `k = s+1, s+2, …`, reusing the previous product.
    pub fn phi_products_from(&self, s: usize) -> impl Iterator<Item = (usize, CommMatrix)> + '_ {
        let mut phi = CommMatrix::identity(self.m, s);
        (s + 1..).map(move |t| {
            phi = self.matrix(t).matmul(&phi);
            phi.round = t;
            (t, phi.clone())
        })
    }

    pub fn consensus_rate(&self) -> Result<ConsensusRate> {
        ConsensusRate::new(self.m, self.eta, self.window)
    }

    /// Whether the union of supports over rounds `t_start+1 ..= t_start+N` is
    /// strongly connected.
    pub fn check_connectivity(&self, t_start: usize) -> bool {
        let m = self.m;
        let mut adj = vec![false; m * m];
        for t in t_start + 1..=t_start + self.window {
            let a = self.matrix(t);
            for (slot, &v) in adj.iter_mut().zip(&a.entries) {
                *slot |= v > 0.0;
            }
        }
        strongly_connected(m, &adj)
    }

    /// Versioned text dump of rounds `first..=last`, one matrix per round.
    pub fn to_text(&self, first: usize, last: usize) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{SCHEDULE_HEADER}");
        let _ = writeln!(
            out,
            "mode={} m={} eta={} window={} seed={}",
            self.mode.as_str(),
            self.m,
            self.eta,
            self.window,
            self.seed
        );
        for t in first..=last {
            let a = self.matrix(t);
            let _ = writeln!(out, "round {t}");
            for row in a.entries.chunks(self.m) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }
}

pub const SCHEDULE_HEADER: &str = "# dpol-schedule v1";

/// Parses the output of [`CommSchedule::to_text`] back into the schedule
/// parameters and the recorded matrices.
pub fn parse_schedule_text<R: BufRead>(reader: R) -> Result<(CommSchedule, Vec<CommMatrix>)> {
    let mut lines = reader.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(Error::Parse {
                line: i + 1,
                message: e.to_string(),
            }),
            None => Err(Error::Parse {
                line: 0,
                message: format!("unexpected end of input, expected {what}"),
            }),
        }
    };
    let (ln, header) = next("header")?;
    if header.trim() != SCHEDULE_HEADER {
        return Err(Error::Parse {
            line: ln,
            message: format!("expected `{SCHEDULE_HEADER}`"),
        });
    }
    let (ln, params) = next("parameter line")?;
    let perr = |msg: String| Error::Parse { line: ln, message: msg };
    let mut mode = None;
    let (mut m, mut eta, mut window, mut seed) = (None, None, None, None);
    for tok in params.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| perr(format!("malformed token `{tok}`")))?;
        let bad = |_| perr(format!("bad value for `{k}`"));
        match k {
            "mode" => mode = Some(v.parse::<ScheduleMode>().map_err(|e| perr(e.to_string()))?),
            "m" => m = Some(v.parse::<usize>().map_err(bad)?),
            "eta" => eta = Some(v.parse::<f64>().map_err(|_| perr("bad eta".into()))?),
            "window" => window = Some(v.parse::<usize>().map_err(bad)?),
            "seed" => seed = Some(v.parse::<u64>().map_err(bad)?),
            other => return Err(perr(format!("unknown key `{other}`"))),
        }
    }
    let missing = |k: &str| perr(format!("missing `{k}`"));
    let schedule = CommSchedule::new(
        mode.ok_or_else(|| missing("mode"))?,
        m.ok_or_else(|| missing("m"))?,
        eta.ok_or_else(|| missing("eta"))?,
        window.ok_or_else(|| missing("window"))?,
        seed.ok_or_else(|| missing("seed"))?,
    )
    .map_err(|e| perr(e.to_string()))?;

    let m = schedule.m;
    let mut mats = Vec::new();
    while let Ok((ln, l)) = next("round") {
        if l.trim().is_empty() {
            continue;
        }
        let round = l
            .trim()
            .strip_prefix("round ")
            .and_then(|r| r.parse::<usize>().ok())
            .ok_or(Error::Parse {
                line: ln,
                message: "expected `round <t>`".into(),
            })?;
        let mut rows = Vec::with_capacity(m);
        for _ in 0..m {
            let (ln, row) = next("matrix row")?;
            let vals: std::result::Result<Vec<f64>, _> =
                row.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| Error::Parse {
                line: ln,
                message: e.to_string(),
            })?;
            if vals.len() != m {
                return Err(Error::Parse {
                    line: ln,
                    message: format!("expected {m} entries, found {}", vals.len()),
                });
            }
            rows.push(vals);
        }
        mats.push(CommMatrix::from_rows(round, rows)?);
    }
    Ok((schedule, mats))
}

fn reachable_all(m: usize, adj: &[bool], reverse: bool) -> bool {
    let mut seen = vec![false; m];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..m {
            let edge = if reverse { adj[v * m + u] } else { adj[u * m + v] };
            if edge && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn strongly_connected(m: usize, adj: &[bool]) -> bool {
    m <= 1 || (reachable_all(m, adj, false) && reachable_all(m, adj, true))
}

/// Geometric consensus constants: `|φ(k,s)_ij − 1/m| ≤ θ β^(k−s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRate {
    pub theta: f64,
    pub beta: f64,
}

impl ConsensusRate {
    pub fn new(m: usize, eta: f64, window: usize) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(invalid(format!("eta must lie in (0, 1), got {eta}")));
        }
        if m < 1 || window < 1 {
            return Err(invalid("m and window must be >= 1"));
        }
        let base = 1.0 - eta / (4.0 * (m * m) as f64);
        Ok(Self {
            theta: base.powi(-2),
            beta: base.powf(1.0 / window as f64),
        })
    }

    pub fn bound(&self, gap: usize) -> f64 {
        self.theta * self.beta.powf(gap as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Floyd–Warshall transitive closure, independent of the BFS path.
    fn closure_strongly_connected(m: usize, adj: &[bool]) -> bool {
        let mut r = adj.to_vec();
        for i in 0..m {
            r[i * m + i] = true;
        }
        for k in 0..m {
            for i in 0..m {
                for j in 0..m {
                    if r[i * m + k] && r[k * m + j] {
                        r[i * m + j] = true;
                    }
                }
            }
        }
        r.into_iter().all(|x| x)
    }

    fn window_support(s: &CommSchedule, t0: usize) -> Vec<bool> {
        let m = s.m;
        let mut adj = vec![false; m * m];
        for t in t0 + 1..=t0 + s.window {
            for i in 0..m {
                for j in 0..m {
                    adj[i * m + j] |= s.matrix(t).get(i, j) > 0.0;
                }
            }
        }
        adj
    }

    #[test]
    fn single_learner_is_one() {
        for mode in [
            ScheduleMode::FixedComplete,
            ScheduleMode::RandomPairwiseGossip,
            ScheduleMode::RingRotation,
        ] {
            let s = CommSchedule::new(mode, 1, 0.5, 1, 4).unwrap();
            assert_eq!(s.matrix(9).rows(), vec![vec![1.0]]);
            assert!(s.check_connectivity(0));
        }
    }

    #[test]
    fn complete_uniform() {
        let s = CommSchedule::new(ScheduleMode::FixedComplete, 4, 0.1, 1, 0).unwrap();
        assert!(s.matrix(3).rows().iter().flatten().all(|&v| v == 0.25));
        assert!(s.check_connectivity(17));
        assert!(matches!(
            CommSchedule::new(ScheduleMode::FixedComplete, 4, 0.25, 1, 0),
            Err(Error::InfeasibleThreshold(_))
        ));
        assert!(CommSchedule::new(ScheduleMode::FixedComplete, 0, 0.1, 1, 0).is_err());
        assert!(CommSchedule::new(ScheduleMode::RingRotation, 3, 1.0, 1, 0).is_err());
    }

    #[test]
    fn two_learner_gossip_shape() {
        for seed in 0..100u64 {
            for t in [7usize, 1, 2, 3, 10] {
                let s = CommSchedule::new(ScheduleMode::RandomPairwiseGossip, 2, 0.1, 3, seed).unwrap();
                let a = s.matrix(t);
                let c = a.get(0, 1);
                assert_eq!(c, a.get(1, 0));
                assert_eq!(a.get(0, 0), 1.0 - c);
                assert_eq!(a.get(1, 1), 1.0 - c);
                assert!(c == 0.0 || (0.1..=0.5).contains(&c));
                assert!(a.validate(0.1).passed());
            }
        }
    }

    #[test]
    fn validation_examples() {
        let ok = CommMatrix::from_rows(0, vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(validate_matrix(&ok, 0.1).passed());

        let cols = CommMatrix::from_rows(0, vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let r = validate_matrix(&cols, 0.1);
        assert!(!r.passed());
        assert_eq!(r.bad_col_sums.len(), 2);
        assert_abs_diff_eq!(r.bad_col_sums[0].1, 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(r.bad_col_sums[1].1, 0.9, epsilon = 1e-12);

        let small = CommMatrix::from_rows(0, vec![vec![0.95, 0.05], vec![0.05, 0.95]]).unwrap();
        let r = validate_matrix(&small, 0.1);
        assert!(r.doubly_stochastic());
        assert_eq!(r.below_threshold.len(), 2);
        assert!(!r.passed());
    }

    #[test]
    fn every_mode_generates_valid_matrices() {
        for m in [2usize, 3, 5, 8] {
            for mode in [
                ScheduleMode::FixedComplete,
                ScheduleMode::RandomPairwiseGossip,
                ScheduleMode::RingRotation,
            ] {
                let eta = if mode == ScheduleMode::FixedComplete { 0.5 / m as f64 } else { 0.1 };
                for seed in 0..20u64 {
                    let s = CommSchedule::new(mode, m, eta, m, seed).unwrap();
                    for t in 0..50 {
                        let r = s.matrix(t).validate(eta);
                        assert!(r.passed(), "{mode:?} m={m} seed={seed} t={t}: {r:?}");
                        assert!(r.nonpositive_diagonal.is_empty());
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = CommSchedule::new(ScheduleMode::RandomPairwiseGossip, 6, 0.2, 4, 99).unwrap();
        for t in 0..30 {
            let a: Vec<u64> = s.matrix(t).entries.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = s.clone().matrix(t).entries.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn phi_product_basics() {
        let s = CommSchedule::new(ScheduleMode::RingRotation, 3, 0.1, 3, 5).unwrap();
        let id = s.phi_product(4, 4).unwrap();
        assert_eq!(id.rows(), vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert!(s.phi_product(2, 3).is_err());

        let c = CommSchedule::new(ScheduleMode::FixedComplete, 4, 0.1, 1, 0).unwrap();
        assert!(c.phi_product(6, 5).unwrap().rows().iter().flatten().all(|&v| v == 0.25));

        let rate = s.consensus_rate().unwrap();
        let phi = s.phi_product(20 + 3, 3).unwrap();
        let dev = phi.entries.iter().map(|v| (v - 1.0 / 3.0).abs()).fold(0.0, f64::max);
        assert!(dev <= rate.bound(20), "{dev} > {}", rate.bound(20));
    }

    #[test]
    fn incremental_products_match_direct() {
        let s = CommSchedule::new(ScheduleMode::RandomPairwiseGossip, 5, 0.1, 5, 3).unwrap();
        for (k, phi) in s.phi_products_from(2).take(15) {
            let direct = s.phi_product(k, 2).unwrap();
            for (a, b) in phi.entries.iter().zip(&direct.entries) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-15);
            }
            let r = validate_matrix(&phi, 0.0);
            assert!(r.bad_row_sums.is_empty() && r.bad_col_sums.is_empty());
        }
    }

    #[test]
    fn consensus_rate_values() {
        let r = ConsensusRate::new(1, 0.5, 1).unwrap();
        assert_abs_diff_eq!(r.theta, 1.0 / (0.875f64 * 0.875), epsilon = 1e-12);
        assert_abs_diff_eq!(r.theta, 1.306122, epsilon = 1e-6);
        assert_abs_diff_eq!(r.beta, 0.875, epsilon = 1e-15);
        let r = ConsensusRate::new(2, 0.16, 1).unwrap();
        assert_abs_diff_eq!(r.theta, 1.020304, epsilon = 1e-6);
        assert_abs_diff_eq!(r.beta, 0.99, epsilon = 1e-15);
        let r = ConsensusRate::new(3, 1e-12, 2).unwrap();
        assert!(r.theta >= 1.0 && (r.theta - 1.0) < 1e-12);
        assert!(r.beta < 1.0 && (1.0 - r.beta) < 1e-12);
        assert!(ConsensusRate::new(2, 0.0, 1).is_err());
        assert!(ConsensusRate::new(2, 1.0, 1).is_err());
    }

    #[test]
    fn connectivity_matches_closure_oracle() {
        for m in [2usize, 3, 4, 6] {
            for window in 1..=m {
                for mode in [ScheduleMode::RingRotation, ScheduleMode::RandomPairwiseGossip] {
                    let s = CommSchedule::new(mode, m, 0.1, window, 11).unwrap();
                    for t0 in 0..12 {
                        let oracle = closure_strongly_connected(m, &window_support(&s, t0));
                        assert_eq!(s.check_connectivity(t0), oracle, "{mode:?} m={m} N={window} t0={t0}");
                        if mode == ScheduleMode::RandomPairwiseGossip {
                            assert!(oracle);
                        }
                    }
                }
            }
        }
        let ring = CommSchedule::new(ScheduleMode::RingRotation, 4, 0.1, 4, 0).unwrap();
        assert!((0..20).all(|t| ring.check_connectivity(t)));
        // shift 2 on four learners splits into two 2-cycles
        let one = CommSchedule::new(ScheduleMode::RingRotation, 4, 0.1, 1, 0).unwrap();
        assert!(!(0..6).all(|t| one.check_connectivity(t)));
    }

    #[test]
    fn schedule_text_round_trip() {
        let s = CommSchedule::new(ScheduleMode::RandomPairwiseGossip, 4, 0.15, 3, 21).unwrap();
        let text = s.to_text(1, 6);
        let (parsed, mats) = parse_schedule_text(text.as_bytes()).unwrap();
        assert_eq!(parsed, s);
        assert_eq!(mats.len(), 6);
        for m in &mats {
            assert_eq!(*m, s.matrix(m.round()));
        }
        assert!(parse_schedule_text("garbage\n".as_bytes()).is_err());
    }
}
