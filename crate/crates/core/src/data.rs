//! Synthetic label-skewed classification data.
//!
//! Each agent draws class proportions `p_i ~ Dirichlet(α 1_K)` and then a
//! count vector `m_i ~ Multinomial(M, p_i)`. Class means `μ_k ~ N(0, I_d)`
//! are drawn once and shared by all agents; features of class `k` are
//! `x ~ N(μ_k, I_d)`. Small `α` concentrates each agent on a few classes.
//!
//! Draw order is fixed: class means first (stream 0 of the feature
//! domain), then agents in index order (stream `1 + i`), classes in index
//! order within an agent. Partition draws use their own domain.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{gamma, stream_rng, Domain, Gaussian};
use crate::{Error, Result};

/// Per-agent class counts, `counts[i][k]`.
pub type ClassCounts = Vec<Vec<usize>>;

/// Dirichlet–multinomial partition with a common concentration `alpha`.
pub fn dirichlet_partition(
    n: usize,
    classes: usize,
    samples: usize,
    alpha: f64,
    seed: u64,
) -> Result<ClassCounts> {
    dirichlet_partition_per_agent(&vec![alpha; n], classes, samples, seed)
}

/// Same as [`dirichlet_partition`] with one concentration per agent.
pub fn dirichlet_partition_per_agent(
    alphas: &[f64],
    classes: usize,
    samples: usize,
    seed: u64,
) -> Result<ClassCounts> {
    if classes == 0 {
        return Err(Error::param("classes", "must be positive"));
    }
    if let Some(&a) = alphas.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::param("alpha", format!("{a} must be positive and finite")));
    }
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let mut g = Gaussian::new(stream_rng(seed, Domain::Partition, 1 + i as u64));
            let p = dirichlet(&mut g, alpha, classes);
            multinomial(g.rng_mut(), samples, &p)
        })
        .collect())
}

fn dirichlet<R: Rng>(g: &mut Gaussian<R>, alpha: f64, classes: usize) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..classes).map(|_| gamma(g, alpha)).collect();
        let total: f64 = draws.iter().sum();
        // With tiny alpha every Gamma draw can underflow; redraw.
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|x| x / total).collect();
        }
    }
}

/// `samples` sequential categorical draws by inverse CDF.
fn multinomial<R: Rng>(rng: &mut R, samples: usize, p: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; p.len()];
    for _ in 0..samples {
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        let mut k = p.len() - 1;
        for (c, &pc) in p.iter().enumerate() {
            acc += pc;
            if u < acc {
                k = c;
                break;
            }
        }
        counts[k] += 1;
    }
    counts
}

/// One agent's samples. Features are stored row-major, `dim` values each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentData {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl AgentData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, m: usize, dim: usize) -> &[f64] {
        &self.features[m * dim..(m + 1) * dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dim: usize,
    pub classes: usize,
    /// Concentration per agent; empty when unknown (e.g. counts supplied directly).
    pub alphas: Vec<f64>,
    pub seed: u64,
    pub samples_per_agent: usize,
    pub class_means: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub meta: DatasetMeta,
    pub agents: Vec<AgentData>,
}

impl SyntheticDataset {
    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn classes(&self) -> usize {
        self.meta.classes
    }

    /// `counts[i][k]` recomputed from the labels.
    pub fn class_counts(&self) -> ClassCounts {
        self.agents
            .iter()
            .map(|a| {
                let mut c = vec![0; self.meta.classes];
                for &l in &a.labels {
                    c[l] += 1;
                }
                c
            })
            .collect()
    }

    /// Writes `agent_<i>.csv` (`label,x_1,...,x_d`, 0-based labels) and
    /// `metadata.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let d = self.meta.dim;
        for (i, a) in self.agents.iter().enumerate() {
            let mut s = String::new();
            for m in 0..a.len() {
                s.push_str(&a.labels[m].to_string());
                for &x in a.sample(m, d) {
                    s.push(',');
                    s.push_str(&crate::io::fmt_f64(x));
                }
                s.push('\n');
            }
            fs::write(dir.join(format!("agent_{i}.csv")), s)?;
        }
        let meta = serde_json::to_string_pretty(&DatasetFile {
            agents: self.agents.len(),
            meta: self.meta.clone(),
        })
        .map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(dir.join("metadata.json"), meta)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(&fs::read_to_string(dir.join("metadata.json"))?)
            .map_err(|e| Error::Parse(e.to_string()))?;
        let d = file.meta.dim;
        let mut agents = Vec::with_capacity(file.agents);
        for i in 0..file.agents {
            let text = fs::read_to_string(dir.join(format!("agent_{i}.csv")))?;
            let mut data = AgentData {
                features: Vec::new(),
                labels: Vec::new(),
            };
            for (r, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
                let mut parts = line.split(',');
                let label: usize = parts
                    .next()
                    .unwrap_or("")
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("agent {i} row {r}: {e}")))?;
                if label >= file.meta.classes {
                    return Err(Error::Parse(format!("agent {i} row {r}: label {label} out of range")));
                }
                let xs: Vec<f64> = parts
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse(format!("agent {i} row {r}: {e}")))?;
                if xs.len() != d {
                    return Err(Error::DimensionMismatch {
                        what: "feature columns",
                        expected: d,
                        got: xs.len(),
                    });
                }
                data.labels.push(label);
                data.features.extend(xs);
            }
            agents.push(data);
        }
        Ok(Self {
            meta: file.meta,
            agents,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    agents: usize,
    #[serde(flatten)]
    meta: DatasetMeta,
}

/// Draws class means and per-agent features for the given class counts.
pub fn generate_features(counts: &ClassCounts, dim: usize, seed: u64) -> Result<SyntheticDataset> {
    let classes = counts.first().map_or(0, Vec::len);
    if counts.iter().any(|c| c.len() != classes) {
        return Err(Error::param("counts", "agents disagree on the number of classes"));
    }
    let mut g0 = Gaussian::new(stream_rng(seed, Domain::Features, 0));
    let class_means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| g0.sample()).collect())
        .collect();
    let agents = counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut g = Gaussian::new(stream_rng(seed, Domain::Features, 1 + i as u64));
            let total: usize = c.iter().sum();
            let mut data = AgentData {
                features: Vec::with_capacity(total * dim),
                labels: Vec::with_capacity(total),
            };
            for (k, &m) in c.iter().enumerate() {
                for _ in 0..m {
                    data.labels.push(k);
                    data.features
                        .extend(class_means[k].iter().map(|&mu| mu + g.sample()));
                }
            }
            data
        })
        .collect();
    Ok(SyntheticDataset {
        meta: DatasetMeta {
            dim,
            classes,
            alphas: Vec::new(),
            seed,
            samples_per_agent: counts.first().map_or(0, |c| c.iter().sum()),
            class_means,
        },
        agents,
    })
}

/// Full pipeline: partition then features, both keyed by `seed`.
pub fn generate_dataset(
    alphas: &[f64],
    classes: usize,
    samples: usize,
    dim: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    let counts = dirichlet_partition_per_agent(alphas, classes, samples, seed)?;
    let mut ds = generate_features(&counts, dim, seed)?;
    ds.meta.alphas = alphas.to_vec();
    Ok(ds)
}
