//! Seeded synthetic datasets with a built-in group disparity.
//!
//! * `figure1`: two groups of 2-D standard Gaussian outputs whose marginals
//!   agree coordinate by coordinate while the correlation is `+0.9` in group
//!   `a` and `-0.9` in group `b`.
//! * `multiclass`: softmax scores over 3 classes where group `a` is pushed
//!   toward class 0 and group `b` toward class 2. Labels are the argmax of the
//!   unbiased logits.
//! * `multilabel`: 4 independent sigmoid scores with opposite group shifts on
//!   the first two labels.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::postprocess::{GroupedDataset, Record};
use crate::seed::derive_seed;

pub const MIN_PER_GROUP: usize = 10;

const FIGURE1_CORRELATION: f64 = 0.9;
const MULTICLASS_BIAS: f64 = 2.0;
const MULTILABEL_BIAS: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Figure1,
    Multiclass,
    Multilabel,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "figure1" => Ok(Scenario::Figure1),
            "multiclass" => Ok(Scenario::Multiclass),
            "multilabel" => Ok(Scenario::Multilabel),
            other => Err(Error::Input(format!(
                "unknown scenario {other:?}; expected figure1, multiclass or multilabel"
            ))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Figure1 => "figure1",
            Scenario::Multiclass => "multiclass",
            Scenario::Multilabel => "multilabel",
        })
    }
}

const GROUPS: [&str; 2] = ["a", "b"];

fn normals<const N: usize>(rng: &mut ChaCha8Rng) -> [f64; N] {
    std::array::from_fn(|_| StandardNormal.sample(rng))
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn record(output: Vec<f64>, group: usize, label: Option<usize>) -> Record {
    Record {
        output,
        group: GROUPS[group].to_string(),
        label,
    }
}

/// `n` records per group, group `a` first. Deterministic in `(scenario, n, seed)`.
pub fn generate(scenario: Scenario, n: usize, seed: u64) -> Result<GroupedDataset> {
    if n < MIN_PER_GROUP {
        return Err(Error::Input(format!(
            "synthetic scenarios need at least {MIN_PER_GROUP} records per group, got {n}"
        )));
    }
    let mut records = Vec::with_capacity(2 * n);
    for g in 0..GROUPS.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[g as u64]));
        let sign = if g == 0 { 1.0 } else { -1.0 };
        for _ in 0..n {
            records.push(match scenario {
                Scenario::Figure1 => {
                    let [z0, z1] = normals::<2>(&mut rng);
                    let rho = sign * FIGURE1_CORRELATION;
                    record(vec![z0, rho * z0 + (1.0 - rho * rho).sqrt() * z1], g, None)
                }
                Scenario::Multiclass => {
                    let logits = normals::<3>(&mut rng);
                    let label = argmax(&logits);
                    let mut biased = logits;
                    biased[if g == 0 { 0 } else { 2 }] += MULTICLASS_BIAS;
                    record(softmax(&biased), g, Some(label))
                }
                Scenario::Multilabel => {
                    let logits = normals::<4>(&mut rng);
                    let out = logits
                        .iter()
                        .enumerate()
                        .map(|(j, z)| {
                            let shift = match j {
                                0 => sign * MULTILABEL_BIAS,
                                1 => -sign * MULTILABEL_BIAS,
                                _ => 0.0,
                            };
                            sigmoid(z + shift)
                        })
                        .collect();
                    record(out, g, None)
                }
            });
        }
    }
    GroupedDataset::new(records)
}
