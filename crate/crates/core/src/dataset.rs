//! Synthetic user-object-attention corpus, sparse observation masks, and the
//! CSV matrix format.
//!
//! Images are grouped into scenarios; each group draws its objects from a
//! pool. A user's interest in an object is a planted low-rank score plus
//! noise, and every image exposing that object contributes `exp(score)` of
//! gaze weight. The per-object attention score is summed weight over the
//! number of exposures, then split into five levels at the user's quintiles.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::exec::{substream, Execution};
use crate::types::AttentionMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_users: usize,
    pub n_objects: usize,
    pub n_images: usize,
    pub n_groups: usize,
    /// Objects each group's images draw from.
    pub pool_size: usize,
    /// Inclusive range of objects per image.
    pub objects_per_image: (usize, usize),
    /// Rank of the planted interest model.
    pub rank: usize,
    /// Standard deviation of the additive score noise.
    pub noise: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_users: 30,
            n_objects: 96,
            n_images: 1000,
            n_groups: 20,
            pool_size: 25,
            objects_per_image: (4, 10),
            rank: 3,
            noise: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error("row {row}, column {col}: {msg}")]
    Cell { row: usize, col: usize, msg: String },
    #[error("row {row} has {got} cells, header has {want}")]
    RowLength { row: usize, got: usize, want: usize },
    #[error("csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<csv::Error> for DatasetError {
    fn from(e: csv::Error) -> Self {
        DatasetError::Csv(e.to_string())
    }
}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e.to_string())
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_objects < 5 {
            return Err(DatasetError::Config("need at least 5 objects for five levels".into()));
        }
        let bad = |m: &str| Err(DatasetError::Config(m.to_string()));
        if self.n_users == 0 || self.n_objects == 0 || self.n_images == 0 || self.n_groups == 0 || self.rank == 0 {
            return bad("all dimensions must be >= 1");
        }
        if self.n_images < self.n_groups {
            return bad("need at least one image per group");
        }
        if self.pool_size == 0 || self.pool_size > self.n_objects {
            return bad("pool_size must be in 1..=n_objects");
        }
        if self.n_groups * self.pool_size < self.n_objects {
            return bad("group pools cannot cover every object");
        }
        let (lo, hi) = self.objects_per_image;
        if lo == 0 || lo > hi || hi > self.pool_size {
            return bad("objects_per_image must satisfy 1 <= lo <= hi <= pool_size");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub config: CorpusConfig,
    pub seed: u64,
    /// Object indices shown in each image.
    pub images: Vec<Vec<usize>>,
    pub image_group: Vec<usize>,
    pub group_pools: Vec<Vec<usize>>,
    /// Latent interest scores, row-major users x objects.
    pub scores: Vec<f64>,
    /// Per-user score thresholds between consecutive levels.
    pub thresholds: Vec<[f64; 4]>,
    pub truth: AttentionMatrix,
}

pub fn object_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("obj{i:02}")).collect()
}

/// Splits `n` sorted items into five nearly equal runs (larger runs first) and
/// returns the four boundary positions.
fn quintile_cuts(n: usize) -> [usize; 4] {
    let base = n / 5;
    let extra = n % 5;
    let mut cuts = [0; 4];
    let mut pos = 0;
    for (k, c) in cuts.iter_mut().enumerate() {
        pos += base + usize::from(k < extra);
        *c = pos;
    }
    cuts
}

/// Level of `score` given the four ascending thresholds.
pub fn level_of(score: f64, t: &[f64; 4]) -> f64 {
    1.0 + t.iter().filter(|&&x| score >= x).count() as f64
}

pub fn generate_corpus(cfg: &CorpusConfig, seed: u64) -> Result<SyntheticCorpus, DatasetError> {
    cfg.validate()?;
    let mut rng = substream(seed, 0);
    let no = cfg.n_objects;

    // pools: a shuffled round-robin pass guarantees coverage, the rest is random
    let mut order: Vec<usize> = (0..no).collect();
    order.shuffle(&mut rng);
    let mut pools: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); cfg.n_groups];
    for (k, &obj) in order.iter().enumerate() {
        pools[k % cfg.n_groups].insert(obj);
    }
    for pool in pools.iter_mut() {
        while pool.len() < cfg.pool_size {
            pool.insert(rng.random_range(0..no));
        }
    }
    let group_pools: Vec<Vec<usize>> = pools.into_iter().map(|p| p.into_iter().collect()).collect();

    let image_group: Vec<usize> = (0..cfg.n_images).map(|m| m % cfg.n_groups).collect();
    let mut images: Vec<Vec<usize>> = image_group
        .iter()
        .map(|&g| {
            let k = rng.random_range(cfg.objects_per_image.0..=cfg.objects_per_image.1);
            let mut objs: Vec<usize> = group_pools[g].choose_multiple(&mut rng, k).copied().collect();
            objs.sort_unstable();
            objs
        })
        .collect();
    // every pool member appears in at least one image of its group
    for (g, pool) in group_pools.iter().enumerate() {
        let group_images: Vec<usize> = (0..cfg.n_images).filter(|&m| image_group[m] == g).collect();
        for &obj in pool {
            if !group_images.iter().any(|&m| images[m].contains(&obj)) {
                let &m = group_images.choose(&mut rng).expect("group has images");
                images[m].push(obj);
                images[m].sort_unstable();
            }
        }
    }

    let r = cfg.rank;
    let gauss = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let user_f: Vec<f64> = (0..cfg.n_users * r).map(|_| gauss(&mut rng)).collect();
    let obj_f: Vec<f64> = (0..no * r).map(|_| gauss(&mut rng)).collect();
    let norm = (r as f64).sqrt();
    let mut scores = Vec::with_capacity(cfg.n_users * no);
    for u in 0..cfg.n_users {
        for i in 0..no {
            let dot: f64 = (0..r).map(|f| user_f[u * r + f] * obj_f[i * r + f]).sum();
            scores.push(dot / norm + cfg.noise * gauss(&mut rng));
        }
    }

    let cuts = quintile_cuts(no);
    let mut thresholds = Vec::with_capacity(cfg.n_users);
    let mut truth = AttentionMatrix::empty(cfg.n_users, no);
    truth.object_labels = object_labels(no);
    for u in 0..cfg.n_users {
        let row = &scores[u * no..(u + 1) * no];
        let mut sorted = row.to_vec();
        sorted.sort_by(f64::total_cmp);
        // midpoints, so that scores recomputed from gaze weights land on the same side
        let mid = |c: usize| 0.5 * (sorted[c - 1] + sorted[c]);
        let t = [mid(cuts[0]), mid(cuts[1]), mid(cuts[2]), mid(cuts[3])];
        for (i, &s) in row.iter().enumerate() {
            truth.set(u, i, level_of(s, &t));
        }
        thresholds.push(t);
    }

    Ok(SyntheticCorpus {
        config: cfg.clone(),
        seed,
        images,
        image_group,
        group_pools,
        scores,
        thresholds,
        truth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsifyConfig {
    /// Inclusive range for the number of scenario groups a user visits.
    pub groups: (usize, usize),
    /// Range for the fraction of those groups' images the user has seen.
    pub image_fraction: (f64, f64),
}

impl Default for SparsifyConfig {
    fn default() -> Self {
        Self {
            groups: (2, 4),
            image_fraction: (0.3, 0.7),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseRecords {
    pub matrix: AttentionMatrix,
    /// Per user: groups visited and images seen.
    pub visited_groups: Vec<Vec<usize>>,
    pub seen_images: Vec<Vec<usize>>,
    /// Users whose first draw observed nothing and had to be re-drawn.
    pub redrawn_users: Vec<usize>,
}

/// Observed attention records for each user: pick groups, reserve a share of
/// their images, and score every object in those images.
pub fn sparsify(corpus: &SyntheticCorpus, cfg: &SparsifyConfig, seed: u64, exec: Execution) -> SparseRecords {
    let c = &corpus.config;
    let no = c.n_objects;
    let (gmin, gmax) = (cfg.groups.0.clamp(1, c.n_groups), cfg.groups.1.clamp(1, c.n_groups));
    let per_user = exec.map(c.n_users, |u| {
        let mut rng = substream(seed, u as u64);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let a1 = rng.random_range(gmin..=gmax.max(gmin));
            let a2 = if cfg.image_fraction.0 >= cfg.image_fraction.1 {
                cfg.image_fraction.0
            } else {
                rng.random_range(cfg.image_fraction.0..cfg.image_fraction.1)
            };
            let groups: Vec<usize> = {
                let all: Vec<usize> = (0..c.n_groups).collect();
                let mut g: Vec<usize> = all.choose_multiple(&mut rng, a1).copied().collect();
                g.sort_unstable();
                g
            };
            let pool: Vec<usize> = (0..c.n_images).filter(|m| groups.contains(&corpus.image_group[*m])).collect();
            let keep = ((a2 * pool.len() as f64).ceil() as usize).min(pool.len());
            let mut seen: Vec<usize> = pool.choose_multiple(&mut rng, keep).copied().collect();
            seen.sort_unstable();
            // summed gaze weight and exposure count per object
            let mut weight = vec![0.0; no];
            let mut count = vec![0usize; no];
            for &m in &seen {
                for &j in &corpus.images[m] {
                    weight[j] += corpus.scores[u * no + j].exp();
                    count[j] += 1;
                }
            }
            let observed: Vec<(usize, f64)> = (0..no)
                .filter(|&j| count[j] > 0)
                .map(|j| {
                    let s = (weight[j] / count[j] as f64).ln();
                    (j, level_of(s, &corpus.thresholds[u]))
                })
                .collect();
            if !observed.is_empty() || attempts > 100 {
                return (groups, seen, observed, attempts > 1);
            }
        }
    });
    let mut matrix = AttentionMatrix::empty(c.n_users, no);
    matrix.object_labels = corpus.truth.object_labels.clone();
    let mut visited_groups = Vec::new();
    let mut seen_images = Vec::new();
    let mut redrawn_users = Vec::new();
    for (u, (groups, seen, obs, redrawn)) in per_user.into_iter().enumerate() {
        for (j, level) in obs {
            matrix.set(u, j, level);
        }
        visited_groups.push(groups);
        seen_images.push(seen);
        if redrawn {
            redrawn_users.push(u);
        }
    }
    SparseRecords {
        matrix,
        visited_groups,
        seen_images,
        redrawn_users,
    }
}

/// Summary written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub sparsify_seed: u64,
    pub config: CorpusConfig,
    pub sparsify: SparsifyConfig,
    pub level_histogram: [f64; 5],
    pub missing_fraction: f64,
    pub redrawn_users: Vec<usize>,
}

pub fn level_histogram(m: &AttentionMatrix) -> [f64; 5] {
    let mut h = [0.0; 5];
    let mut n = 0.0f64;
    for (_, _, v) in m.observed() {
        let k = (v.round() as usize).clamp(1, 5) - 1;
        h[k] += 1.0;
        n += 1.0;
    }
    for v in h.iter_mut() {
        *v /= n.max(1.0);
    }
    h
}

pub fn write_matrix<W: Write>(out: W, m: &AttentionMatrix) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    let labels = if m.object_labels.len() == m.n_objects() {
        m.object_labels.clone()
    } else {
        object_labels(m.n_objects())
    };
    w.write_record(&labels)?;
    for u in 0..m.n_users() {
        let row: Vec<String> = (0..m.n_objects())
            .map(|i| match m.get(u, i) {
                Some(v) => format!("{v}"),
                None => String::new(),
            })
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_file<P: AsRef<Path>>(path: P, m: &AttentionMatrix) -> Result<(), DatasetError> {
    let f = std::fs::File::create(path)?;
    write_matrix(std::io::BufWriter::new(f), m)
}

/// Parses the CSV matrix format; empty cells are unobserved.
///
/// Row and column numbers in errors are 1-based data rows and columns.
pub fn read_matrix<R: Read>(input: R) -> Result<AttentionMatrix, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let labels: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let n_obj = labels.len();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != n_obj {
            return Err(DatasetError::RowLength {
                row: r + 1,
                got: rec.len(),
                want: n_obj,
            });
        }
        let mut row = Vec::with_capacity(n_obj);
        for (c, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                row.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| DatasetError::Cell {
                row: r + 1,
                col: c + 1,
                msg: format!("cannot parse `{cell}`"),
            })?;
            if !(AttentionMatrix::MIN_LEVEL..=AttentionMatrix::MAX_LEVEL).contains(&v) {
                return Err(DatasetError::Cell {
                    row: r + 1,
                    col: c + 1,
                    msg: format!("level {v} outside [1, 5]"),
                });
            }
            row.push(Some(v));
        }
        rows.push(row);
    }
    let mut m = AttentionMatrix::empty(rows.len(), n_obj);
    m.object_labels = labels;
    for (u, row) in rows.into_iter().enumerate() {
        for (i, v) in row.into_iter().enumerate() {
            if let Some(v) = v {
                m.set(u, i, v);
            }
        }
    }
    Ok(m)
}

pub fn load_matrix<P: AsRef<Path>>(path: P) -> Result<AttentionMatrix, DatasetError> {
    let f = std::fs::File::open(path)?;
    read_matrix(std::io::BufReader::new(f))
}
