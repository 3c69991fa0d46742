//! Labeled datasets: synthetic unit-ball data, sparse text files, and shard
//! plans that split a dataset across learners.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{substream, Purpose};
use crate::vector::{dot, norm2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    /// +1 or -1.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic { seed: u64, margin: f64 },
    File { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub dim: usize,
    pub source: DataSource,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

fn random_unit<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = norm2(&v);
        if norm > 1e-12 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

/// Uniform draw from the unit `n`-ball.
fn random_in_ball<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let dir = random_unit(rng, n);
    let r = rng.random::<f64>().powf(1.0 / n as f64);
    dir.into_iter().map(|c| c * r).collect()
}

/// Points uniform in the unit ball, labeled by a hidden unit hyperplane.
///
/// The hyperplane `w_true` is the first draw of the seeded stream. Points with
/// `|⟨w_true, x⟩| < margin` are rejected and redrawn.
pub fn generate_synthetic(n: usize, count: usize, margin: f64, seed: u64) -> Result<Dataset> {
    Ok(generate_synthetic_with_truth(n, count, margin, seed)?.0)
}

/// Same as [`generate_synthetic`] but also returns the hidden hyperplane.
pub fn generate_synthetic_with_truth(
    n: usize,
    count: usize,
    margin: f64,
    seed: u64,
) -> Result<(Dataset, Vec<f64>)> {
    if n == 0 || count == 0 {
        return Err(invalid("synthetic data needs n >= 1 and count >= 1"));
    }
    if !(0.0..1.0).contains(&margin) {
        return Err(Error::Infeasible(format!(
            "margin {margin} must lie in [0, 1); rejection sampling cannot terminate otherwise"
        )));
    }
    let mut rng = substream(seed, Purpose::Synthetic, 0, 0);
    let truth = random_unit(&mut rng, n);
    let mut examples = Vec::with_capacity(count);
    while examples.len() < count {
        let x = random_in_ball(&mut rng, n);
        let s = dot(&truth, &x);
        if s == 0.0 || s.abs() < margin {
            continue;
        }
        examples.push(Example {
            x,
            y: if s > 0.0 { 1.0 } else { -1.0 },
        });
    }
    Ok((
        Dataset {
            name: format!("synthetic-d{n}-n{count}"),
            dim: n,
            source: DataSource::Synthetic { seed, margin },
            examples,
        },
        truth,
    ))
}

fn parse_label(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad label `{tok}`"),
    })?;
    if v == 1.0 {
        Ok(1.0)
    } else if v == -1.0 || v == 0.0 {
        Ok(-1.0)
    } else {
        Err(Error::Parse {
            line,
            message: format!("unknown label `{tok}` (expected +1, -1, 1 or 0)"),
        })
    }
}

/// Parses `label idx:val idx:val ...` lines with 1-based indices.
///
/// Features beyond `dim_cap` are dropped and vectors with norm above one are
/// rescaled onto the unit sphere. Blank lines and `#` comments are skipped.
pub fn parse_sparse<R: BufRead>(reader: R, dim_cap: usize, name: &str) -> Result<Dataset> {
    if dim_cap == 0 {
        return Err(invalid("dimension cap must be >= 1"));
    }
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let y = parse_label(toks.next().unwrap_or_default(), lineno)?;
        let mut x = vec![0.0; dim_cap];
        for tok in toks {
            let bad = || Error::Parse {
                line: lineno,
                message: format!("malformed feature `{tok}`"),
            };
            let (idx, val) = tok.split_once(':').ok_or_else(bad)?;
            let idx: usize = idx.parse().map_err(|_| bad())?;
            let val: f64 = val.parse().map_err(|_| bad())?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    message: "feature indices are 1-based".into(),
                });
            }
            if !val.is_finite() {
                return Err(bad());
            }
            if idx <= dim_cap {
                x[idx - 1] = val;
            }
        }
        let norm = norm2(&x);
        if norm > 1.0 {
            x.iter_mut().for_each(|v| *v /= norm);
        }
        examples.push(Example { x, y });
    }
    Ok(Dataset {
        name: name.to_string(),
        dim: dim_cap,
        source: DataSource::File {
            path: name.to_string(),
        },
        examples,
    })
}

pub fn load_sparse(path: impl AsRef<Path>, dim_cap: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    parse_sparse(BufReader::new(file), dim_cap, &path.display().to_string())
}

/// Writes the sparse format, omitting zero features.
pub fn write_sparse<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    for ex in &dataset.examples {
        write!(out, "{}", if ex.y > 0.0 { "+1" } else { "-1" })?;
        for (j, v) in ex.x.iter().enumerate() {
            if *v != 0.0 {
                write!(out, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Index sets into a dataset: `m` equal training shards plus a held-out split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub shards: Vec<Vec<usize>>,
    pub holdout: Vec<usize>,
    /// Training examples left over after dealing equal shards.
    pub dropped: Vec<usize>,
    pub seed: u64,
}

/// Materialized shards, ready for the engines.
#[derive(Debug, Clone)]
pub struct Shards {
    pub train: Vec<Vec<Example>>,
    pub holdout: Vec<Example>,
}

impl ShardPlan {
    pub fn shard_len(&self) -> usize {
        self.shards.first().map_or(0, Vec::len)
    }

    pub fn materialize(&self, dataset: &Dataset) -> Shards {
        let pick = |idx: &[usize]| idx.iter().map(|&k| dataset.examples[k].clone()).collect();
        Shards {
            train: self.shards.iter().map(|s| pick(s)).collect(),
            holdout: pick(&self.holdout),
        }
    }
}

/// Seeded shuffle, then the held-out split, then round-robin dealing into
/// `m` equal shards.
pub fn partition(dataset: &Dataset, m: usize, holdout_fraction: f64, seed: u64) -> Result<ShardPlan> {
    if m < 1 {
        return Err(invalid("need at least one shard"));
    }
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(invalid(format!(
            "holdout fraction must lie in [0, 1), got {holdout_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut substream(seed, Purpose::Partition, 0, 0));
    let n_hold = (dataset.len() as f64 * holdout_fraction).floor() as usize;
    let holdout = order[..n_hold].to_vec();
    let train = &order[n_hold..];
    if train.len() < m {
        return Err(invalid(format!(
            "{} training examples cannot fill {m} shards",
            train.len()
        )));
    }
    let per = train.len() / m;
    let used = per * m;
    let mut shards = vec![Vec::with_capacity(per); m];
    for (k, &idx) in train[..used].iter().enumerate() {
        shards[k % m].push(idx);
    }
    let dropped = train[used..].to_vec();
    if !dropped.is_empty() {
        warn!(
            "partition: dropping {} trailing examples to keep {m} equal shards",
            dropped.len()
        );
    }
    Ok(ShardPlan {
        shards,
        holdout,
        dropped,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn synthetic_full_scale() {
        let d = generate_synthetic(10, 100_000, 0.0, 1).unwrap();
        assert_eq!(d.len(), 100_000);
        assert!(d.examples.iter().all(|e| norm2(&e.x) <= 1.0 && (e.y == 1.0 || e.y == -1.0)));
        let pos = d.examples.iter().filter(|e| e.y > 0.0).count() as f64 / 1e5;
        assert!((0.48..=0.52).contains(&pos), "{pos}");
    }

    #[test]
    fn synthetic_margin_and_determinism() {
        let (d, truth) = generate_synthetic_with_truth(5, 2000, 0.2, 9).unwrap();
        assert!(d.examples.iter().all(|e| dot(&truth, &e.x).abs() >= 0.2));
        assert!(d.examples.iter().all(|e| e.y * dot(&truth, &e.x) > 0.0));
        assert_eq!(d, generate_synthetic(5, 2000, 0.2, 9).unwrap());
        assert_ne!(d, generate_synthetic(5, 2000, 0.2, 10).unwrap());
        assert!(matches!(generate_synthetic(5, 10, 1.0, 0), Err(Error::Infeasible(_))));
        assert!(generate_synthetic(5, 0, 0.0, 0).is_err());
    }

    #[test]
    fn sparse_parse_rules() {
        let text = "+1 1:0.5 3:0.5\n-1\n# comment\n\n1 2:2.0 9:4\n0 1:0.1 # trailing\n";
        let d = parse_sparse(text.as_bytes(), 4, "t").unwrap();
        assert_eq!(d.examples[0], Example { x: vec![0.5, 0.0, 0.5, 0.0], y: 1.0 });
        assert_eq!(d.examples[1], Example { x: vec![0.0; 4], y: -1.0 });
        // index 9 is beyond the cap and dropped, then ‖x‖ = 2 is rescaled
        assert_eq!(d.examples[2], Example { x: vec![0.0, 1.0, 0.0, 0.0], y: 1.0 });
        assert_eq!(d.examples[3].y, -1.0);
    }

    #[test]
    fn sparse_parse_errors_carry_line_numbers() {
        for (text, line) in [
            ("+1 1:0.5\n+1 abc\n", 2),
            ("+1 1:0.5\n\n3 1:0.5\n", 3),
            ("+1 0:1\n", 1),
            ("x 1:1\n", 1),
        ] {
            match parse_sparse(text.as_bytes(), 4, "t") {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn sparse_round_trip(seed in 0u64..1000, n in 1usize..12) {
            let d = generate_synthetic(n, 25, 0.0, seed).unwrap();
            let mut buf = Vec::new();
            write_sparse(&d, &mut buf).unwrap();
            let back = parse_sparse(buf.as_slice(), n, "rt").unwrap();
            proptest::prop_assert_eq!(back.examples, d.examples);
        }
    }

    #[test]
    fn partition_arithmetic_and_disjointness() {
        let d = generate_synthetic(3, 100, 0.0, 2).unwrap();
        let p = partition(&d, 4, 0.2, 5).unwrap();
        assert_eq!(p.holdout.len(), 20);
        assert!(p.shards.iter().all(|s| s.len() == 20));
        let mut all = HashSet::new();
        for idx in p.shards.iter().flatten().chain(&p.holdout).chain(&p.dropped) {
            assert!(all.insert(*idx));
        }
        assert_eq!(all.len(), 100);
        assert_eq!(p, partition(&d, 4, 0.2, 5).unwrap());

        let one = partition(&d, 1, 0.0, 5).unwrap();
        assert_eq!(one.shards[0].len(), 100);
        let mut sorted = one.shards[0].clone();
        sorted.sort();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());

        let odd = partition(&d, 3, 0.0, 1).unwrap();
        assert_eq!(odd.shard_len(), 33);
        assert_eq!(odd.dropped.len(), 1);

        assert!(partition(&d, 200, 0.0, 0).is_err());
        assert!(partition(&d, 2, 1.0, 0).is_err());
    }
}
