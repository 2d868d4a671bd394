//! Dataset preparation for the window classifier.
//!
//! The default order is impute → window → oversample → split → standardize.
//! [`StageOrder::SplitFirst`] oversamples only the training split instead,
//! so no synthetic sample is derived from a test window.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::WindowSet;
use crate::numerics::Matrix;

/// Labeled (or unlabeled) measurement rows with possibly missing entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawDataset {
    pub features: Vec<String>,
    pub ticks: Vec<u64>,
    pub rows: Vec<Vec<Option<f64>>>,
    pub labels: Vec<Option<u8>>,
}

impl RawDataset {
    pub fn new(features: Vec<String>) -> Self {
        Self {
            features,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.len()
    }

    pub fn push(&mut self, t: u64, row: Vec<Option<f64>>, label: Option<u8>) -> Result<()> {
        if row.len() != self.width() {
            return Err(Error::data(format!(
                "row at t={t} has {} values, expected {}",
                row.len(),
                self.width()
            )));
        }
        if matches!(label, Some(l) if l > 1) {
            return Err(Error::data(format!("label at t={t} is not 0 or 1")));
        }
        self.ticks.push(t);
        self.rows.push(row);
        self.labels.push(label);
        Ok(())
    }

    /// Rows as plain vectors; fails on any missing entry.
    pub fn complete_rows(&self) -> Result<Vec<Vec<f64>>> {
        self.rows
            .iter()
            .zip(&self.ticks)
            .map(|(r, t)| {
                r.iter()
                    .map(|v| v.ok_or_else(|| Error::data(format!("missing value at t={t}"))))
                    .collect()
            })
            .collect()
    }

    /// Labels as 0/1; fails if any row is unlabeled.
    pub fn complete_labels(&self) -> Result<Vec<u8>> {
        self.labels
            .iter()
            .zip(&self.ticks)
            .map(|(l, t)| l.ok_or_else(|| Error::data(format!("row at t={t} is unlabeled"))))
            .collect()
    }

    /// Reads `t,<features…>,label`; empty cells are missing.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header.len() < 3 || header[0] != "t" || header[header.len() - 1] != "label" {
            return Err(Error::data(
                "dataset header must be t,<features...>,label with at least one feature",
            ));
        }
        let mut ds = Self::new(header[1..header.len() - 1].to_vec());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::data(format!("record {}: {what}", line + 1));
            let t: u64 = rec[0].trim().parse().map_err(|_| bad("bad tick"))?;
            let row = (1..rec.len() - 1)
                .map(|i| {
                    let cell = rec[i].trim();
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>()
                            .map(Some)
                            .map_err(|_| bad(&format!("bad value {cell:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let label = match rec[rec.len() - 1].trim() {
                "" => None,
                "0" => Some(0),
                "1" => Some(1),
                other => return Err(bad(&format!("label {other:?} is not 0 or 1"))),
            };
            ds.push(t, row, label)?;
        }
        Ok(ds)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_owned()];
        header.extend(self.features.iter().cloned());
        header.push("label".to_owned());
        w.write_record(&header)?;
        for ((t, row), label) in self.ticks.iter().zip(&self.rows).zip(&self.labels) {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            rec.push(label.map(|l| l.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Feature names produced by [`dataset_from_trace`].
pub const TRACE_FEATURES: [&str; 3] = ["z", "h_cos", "h_sin"];

/// One row per tick: the measurement and its observation row
/// `(cos ωt, −sin ωt)`, so a classifier can relate `z` to the phase.
pub fn dataset_from_trace(
    ticks: &[u64],
    z: &[f64],
    labels: Option<&[u8]>,
    omega: f64,
) -> Result<RawDataset> {
    if ticks.len() != z.len() || labels.is_some_and(|l| l.len() != z.len()) {
        return Err(Error::data("ticks, measurements and labels differ in length"));
    }
    let mut d = RawDataset::new(TRACE_FEATURES.iter().map(|s| (*s).to_owned()).collect());
    for (i, (&t, &v)) in ticks.iter().zip(z).enumerate() {
        let phase = omega * t as f64;
        d.push(
            t,
            vec![Some(v), Some(phase.cos()), Some(-phase.sin())],
            labels.map(|l| l[i]),
        )?;
    }
    Ok(d)
}

/// Replaces each missing entry with its column's mean over present values.
pub fn impute_mean(d: &RawDataset) -> Result<RawDataset> {
    let mut out = d.clone();
    for (c, name) in d.features.iter().enumerate() {
        let present: Vec<f64> = d.rows.iter().filter_map(|r| r[c]).collect();
        if present.is_empty() {
            return Err(Error::EmptyColumn(name.clone()));
        }
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        for row in &mut out.rows {
            row[c].get_or_insert(mean);
        }
    }
    Ok(out)
}

/// Lloyd's k-means with k-means++ seeding. Returns the cluster of each point.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            d.iter()
                .position(|&w| {
                    target -= w;
                    target < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| dist2(p, &centroids[a]).total_cmp(&dist2(p, &centroids[b])))
                .unwrap_or(0);
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (j, v) in centroid.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    assign
}

/// Splits `total` across `sizes` proportionally (largest remainder).
fn proportional_quotas(sizes: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    if sum == 0 {
        return vec![0; sizes.len()];
    }
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&s| total as f64 * s as f64 / sum as f64)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let short = total - quotas.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        quotas[i] += 1;
    }
    quotas
}

const SMOTE_NEIGHBORS: usize = 5;

/// Balances two classes by synthesizing minority samples.
///
/// The minority class is clustered with k-means; each cluster receives a
/// share of the deficit proportional to its size, and every synthetic point
/// interpolates `x + u·(x_nn − x)` between a random member and one of its
/// nearest neighbours in the same cluster. Members of a single-point
/// cluster are duplicated with a jitter of `1e-6·σ` per column instead.
///
/// Originals are returned first and unchanged; synthetics are appended.
pub fn cks_oversample(
    samples: &[Vec<f64>],
    labels: &[u8],
    k_clusters: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    if samples.len() != labels.len() {
        return Err(Error::data("samples and labels differ in length"));
    }
    if k_clusters == 0 {
        return Err(Error::config("k_clusters must be positive"));
    }
    let count = |c: u8| labels.iter().filter(|&&l| l == c).count();
    let (n0, n1) = (count(0), count(1));
    if n0 + n1 != labels.len() {
        return Err(Error::data("labels must be 0 or 1"));
    }
    if n0 == 0 || n1 == 0 {
        return Err(Error::data("oversampling needs both classes present"));
    }
    let mut out_x = samples.to_vec();
    let mut out_y = labels.to_vec();
    if n0 == n1 {
        return Ok((out_x, out_y));
    }
    let (minority, deficit) = if n1 < n0 { (1, n0 - n1) } else { (0, n1 - n0) };
    let members: Vec<&Vec<f64>> = samples
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == minority)
        .map(|(s, _)| s)
        .collect();
    if members.len() < k_clusters {
        return Err(Error::TooFewSamples {
            needed: k_clusters,
            got: members.len(),
        });
    }
    let dim = members[0].len();
    if members.iter().any(|m| m.len() != dim) {
        return Err(Error::data("samples have inconsistent widths"));
    }

    let col_sigma: Vec<f64> = (0..dim)
        .map(|j| {
            let mean = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            (members.iter().map(|m| (m[j] - mean).powi(2)).sum::<f64>() / members.len() as f64)
                .sqrt()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let owned: Vec<Vec<f64>> = members.iter().map(|m| (*m).clone()).collect();
    let assign = kmeans(&owned, k_clusters, &mut rng);
    let clusters: Vec<Vec<usize>> = (0..k_clusters)
        .map(|c| (0..owned.len()).filter(|&i| assign[i] == c).collect())
        .collect();
    let sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
    let quotas = proportional_quotas(&sizes, deficit);

    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    for (cluster, quota) in clusters.iter().zip(quotas) {
        if quota == 0 {
            continue;
        }
        let neighbours: Vec<Vec<usize>> = cluster
            .iter()
            .map(|&i| {
                let mut others: Vec<usize> = cluster.iter().copied().filter(|&j| j != i).collect();
                others.sort_by(|&a, &b| {
                    dist2(&owned[i], &owned[a]).total_cmp(&dist2(&owned[i], &owned[b]))
                });
                others.truncate(SMOTE_NEIGHBORS);
                others
            })
            .collect();
        for _ in 0..quota {
            let pick = rng.random_range(0..cluster.len());
            let base = &owned[cluster[pick]];
            let synthetic: Vec<f64> = if neighbours[pick].is_empty() {
                base.iter()
                    .zip(&col_sigma)
                    .map(|(x, s)| x + 1e-6 * s * rng.random_range(-1.0..1.0))
                    .collect()
            } else {
                let nn = &owned[neighbours[pick][rng.random_range(0..neighbours[pick].len())]];
                let u: f64 = rng.random();
                base.iter().zip(nn).map(|(x, y)| x + u * (y - x)).collect()
            };
            out_x.push(synthetic);
            out_y.push(minority);
        }
    }
    Ok((out_x, out_y))
}

/// Row-level oversampling of a complete, labeled dataset. Synthetic rows
/// get ticks following the last original tick.
pub fn cks_oversample_dataset(d: &RawDataset, k_clusters: usize, seed: u64) -> Result<RawDataset> {
    let rows = d.complete_rows()?;
    let labels = d.complete_labels()?;
    let (x, y) = cks_oversample(&rows, &labels, k_clusters, seed)?;
    let mut out = d.clone();
    let mut next = d.ticks.iter().max().map_or(0, |t| t + 1);
    for (row, label) in x.into_iter().zip(y).skip(d.len()) {
        out.push(next, row.into_iter().map(Some).collect(), Some(label))?;
        next += 1;
    }
    Ok(out)
}

/// Per-column Z-score `(x − mean)/σ` with population σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(m: &Matrix) -> Result<Self> {
        let (n, cols) = m.shape();
        if n == 0 {
            return Err(Error::data("cannot fit a standardizer on zero rows"));
        }
        let mut means = vec![0.0; cols];
        let mut stds = vec![0.0; cols];
        for j in 0..cols {
            let mean = (0..n).map(|i| m[(i, j)]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (m[(i, j)] - mean).powi(2)).sum::<f64>() / n as f64;
            means[j] = mean;
            stds[j] = var.sqrt();
        }
        Ok(Self { means, stds })
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
        }
    }

    pub fn invert_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = *v * s + m;
        }
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        let cols = m.cols();
        for row in out.as_mut_slice().chunks_mut(cols.max(1)) {
            self.apply_row(row);
        }
        out
    }

    pub fn invert(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        let cols = m.cols();
        for row in out.as_mut_slice().chunks_mut(cols.max(1)) {
            self.invert_row(row);
        }
        out
    }
}

/// Stacks measurement vectors as matrix rows.
pub fn assemble_matrix(vectors: &[Vec<f64>]) -> Result<Matrix> {
    if vectors.is_empty() {
        return Err(Error::data("no vectors to assemble"));
    }
    Ok(Matrix::from_rows(vectors)?)
}

/// Seeded, label-stratified split. Returns `(train, test)` indices.
///
/// Each class contributes `round(fraction·n_c)` rows to training, clamped
/// so both splits keep at least one row of it.
pub fn split(labels: &[u8], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config("train fraction must lie in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let n_train = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[n_train..]);
        idx.truncate(n_train);
        train.extend(idx);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((train, test))
}

/// Sliding windows of `len` rows; each takes the label of its last row.
pub fn window(series: &Matrix, labels: &[u8], len: usize, stride: usize) -> Result<WindowSet> {
    if len == 0 || stride == 0 {
        return Err(Error::config("window length and stride must be positive"));
    }
    let (rows, cols) = series.shape();
    if labels.len() != rows {
        return Err(Error::data("series and labels differ in length"));
    }
    if rows < len {
        return Err(Error::TooFewSamples {
            needed: len,
            got: rows,
        });
    }
    let mut set = WindowSet::default();
    let mut start = 0;
    while start + len <= rows {
        let data = series.as_slice()[start * cols..(start + len) * cols].to_vec();
        set.windows.push(Matrix::from_vec(len, cols, data));
        set.labels.push(labels[start + len - 1]);
        start += stride;
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    /// Oversample the whole windowed set, then split.
    #[default]
    OversampleFirst,
    /// Split, then oversample the training part only.
    SplitFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k_clusters: usize,
    pub window_len: usize,
    pub stride: usize,
    pub train_fraction: f64,
    pub order: StageOrder,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_clusters: 3,
            window_len: 16,
            stride: 1,
            train_fraction: 0.8,
            order: StageOrder::OversampleFirst,
            seed: 0,
        }
    }
}

/// Standardized train/test windows and the fitted standardizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train: WindowSet,
    pub test: WindowSet,
    pub standardizer: Standardizer,
}

fn flatten(w: &Matrix) -> Vec<f64> {
    w.as_slice().to_vec()
}

fn subset(set: &WindowSet, idx: &[usize]) -> WindowSet {
    WindowSet {
        windows: idx.iter().map(|&i| set.windows[i].clone()).collect(),
        labels: idx.iter().map(|&i| set.labels[i]).collect(),
    }
}

fn oversample_windows(set: &WindowSet, k: usize, seed: u64) -> Result<WindowSet> {
    let Some(first) = set.windows.first() else {
        return Ok(set.clone());
    };
    let (rows, cols) = first.shape();
    let flat: Vec<Vec<f64>> = set.windows.iter().map(flatten).collect();
    let (x, y) = cks_oversample(&flat, &set.labels, k, seed)?;
    Ok(WindowSet {
        windows: x.into_iter().map(|v| Matrix::from_vec(rows, cols, v)).collect(),
        labels: y,
    })
}

fn standardize_set(set: &mut WindowSet, st: &Standardizer) {
    for w in &mut set.windows {
        *w = st.apply(w);
    }
}

/// Runs the full preparation chain on a labeled dataset.
pub fn prepare(d: &RawDataset, cfg: &PipelineConfig) -> Result<Prepared> {
    let imputed = impute_mean(d)?;
    let labels = imputed.complete_labels()?;
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::data("dataset contains a single class"));
    }
    let series = assemble_matrix(&imputed.complete_rows()?)?;
    let windows = window(&series, &labels, cfg.window_len, cfg.stride)?;

    let oversample_seed = cfg.seed;
    let split_seed = cfg.seed.wrapping_add(1);
    let (train, test) = match cfg.order {
        StageOrder::OversampleFirst => {
            let balanced = oversample_windows(&windows, cfg.k_clusters, oversample_seed)?;
            let (tr, te) = split(&balanced.labels, cfg.train_fraction, split_seed)?;
            (subset(&balanced, &tr), subset(&balanced, &te))
        }
        StageOrder::SplitFirst => {
            let (tr, te) = split(&windows.labels, cfg.train_fraction, split_seed)?;
            let train = oversample_windows(&subset(&windows, &tr), cfg.k_clusters, oversample_seed)?;
            (train, subset(&windows, &te))
        }
    };

    let train_rows: Vec<Vec<f64>> = train
        .windows
        .iter()
        .flat_map(|w| w.to_rows())
        .collect();
    let standardizer = Standardizer::fit(&assemble_matrix(&train_rows)?)?;
    let (mut train, mut test) = (train, test);
    standardize_set(&mut train, &standardizer);
    standardize_set(&mut test, &standardizer);
    Ok(Prepared {
        train,
        test,
        standardizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ds(rows: &[&[Option<f64>]], labels: &[Option<u8>]) -> RawDataset {
        let mut d = RawDataset::new((0..rows[0].len()).map(|i| format!("f{i}")).collect());
        for (i, (r, l)) in rows.iter().zip(labels).enumerate() {
            d.push(i as u64, r.to_vec(), *l).unwrap();
        }
        d
    }

    #[test]
    fn impute_cases() {
        let full = ds(&[&[Some(1.0)], &[Some(2.0)]], &[Some(0), Some(1)]);
        assert_eq!(impute_mean(&full).unwrap(), full);

        let gap = ds(&[&[Some(1.0)], &[None], &[Some(3.0)]], &[None, None, None]);
        let filled = impute_mean(&gap).unwrap();
        assert_eq!(filled.rows, vec![vec![Some(1.0)], vec![Some(2.0)], vec![Some(3.0)]]);

        let skewed = ds(
            &[&[Some(1.0)], &[None], &[Some(10.0)], &[None], &[Some(4.0)]],
            &[None; 5],
        );
        let filled = impute_mean(&skewed).unwrap().complete_rows().unwrap();
        let mean = filled.iter().map(|r| r[0]).sum::<f64>() / 5.0;
        assert!((mean - 5.0).abs() < 1e-12);

        let empty = ds(&[&[None, Some(1.0)], &[None, Some(2.0)]], &[None, None]);
        assert!(matches!(impute_mean(&empty), Err(Error::EmptyColumn(c)) if c == "f0"));
    }

    #[test]
    fn dataset_csv_round_trip() {
        let text = "t,a,b,label\n0,1.5,,0\n1,,2,1\n2,3,4,\n";
        let d = RawDataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.features, vec!["a", "b"]);
        assert_eq!(d.rows[0], vec![Some(1.5), None]);
        assert_eq!(d.labels, vec![Some(0), Some(1), None]);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(RawDataset::read_csv(buf.as_slice()).unwrap(), d);

        assert!(RawDataset::read_csv("t,a,label\n0,1,2\n".as_bytes()).is_err());
        assert!(RawDataset::read_csv("x,a,label\n".as_bytes()).is_err());
    }

    #[test]
    fn balanced_input_is_untouched() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![0, 1, 0, 1];
        let (ox, oy) = cks_oversample(&x, &y, 1, 3).unwrap();
        assert_eq!((ox, oy), (x, y));
    }

    #[test]
    fn two_point_cluster_interpolates() {
        let mut x = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        let mut y = vec![1, 1];
        for i in 0..8 {
            x.push(vec![10.0 + i as f64, -5.0]);
            y.push(0);
        }
        let (ox, oy) = cks_oversample(&x, &y, 1, 11).unwrap();
        assert_eq!(oy.iter().filter(|&&l| l == 1).count(), 8);
        for p in &ox[x.len()..] {
            assert!((p[0] - p[1]).abs() < 1e-15);
            assert!((0.0..=2.0).contains(&p[0]));
        }
    }

    #[test]
    fn ninety_ten_becomes_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..1000 {
            let label = u8::from(i % 10 == 0);
            x.push(vec![rng.random::<f64>() + 3.0 * f64::from(label), rng.random()]);
            y.push(label);
        }
        let (ox, oy) = cks_oversample(&x, &y, 3, 1).unwrap();
        let ones = oy.iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 900);
        assert_eq!(oy.len() - ones, 900);
        assert_eq!(&ox[..1000], &x[..]);
    }

    #[test]
    fn singleton_clusters_jitter() {
        let x = vec![vec![0.0, 0.0], vec![5.0, 1.0], vec![9.0, 9.0], vec![9.5, 9.5], vec![8.0, 8.0], vec![7.0, 9.0]];
        let y = vec![1, 1, 0, 0, 0, 0];
        let (ox, _) = cks_oversample(&x, &y, 2, 0).unwrap();
        // Column σ of the minority is (2.5, 0.5); jitter stays within 1e-6 of it.
        for p in &ox[6..] {
            let near_a = (p[0] - 0.0).abs() <= 2.5e-6 && (p[1] - 0.0).abs() <= 0.5e-6;
            let near_b = (p[0] - 5.0).abs() <= 2.5e-6 && (p[1] - 1.0).abs() <= 0.5e-6;
            assert!(near_a || near_b, "{p:?}");
        }
    }

    #[test]
    fn oversample_errors() {
        assert!(cks_oversample(&[vec![1.0], vec![2.0]], &[0, 0], 1, 0).is_err());
        let x = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        assert!(matches!(
            cks_oversample(&x, &[0, 0, 0, 1], 2, 0),
            Err(Error::TooFewSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn quotas_are_proportional() {
        assert_eq!(proportional_quotas(&[5, 3, 2], 10), vec![5, 3, 2]);
        assert_eq!(proportional_quotas(&[1, 1, 1], 2).iter().sum::<usize>(), 2);
        assert_eq!(proportional_quotas(&[6, 3], 4), vec![3, 1]);
    }

    #[test]
    fn standardizer_cases() {
        let m = Matrix::from_rows(&[vec![1.0, 7.0], vec![2.0, 7.0], vec![3.0, 7.0]]).unwrap();
        let st = Standardizer::fit(&m).unwrap();
        let z = st.apply(&m);
        let s = (1.5f64).sqrt();
        for (i, want) in [-s, 0.0, s].iter().enumerate() {
            assert!((z[(i, 0)] - want).abs() < 1e-4);
            assert_eq!(z[(i, 1)], 0.0);
        }
        assert!((z[(0, 0)] + 1.2247).abs() < 1e-4);
    }

    #[test]
    fn assemble_cases() {
        let one = assemble_matrix(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(one.shape(), (1, 3));
        let v = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let m = assemble_matrix(&v).unwrap();
        assert_eq!(m.shape(), (3, 2));
        for (i, r) in v.iter().enumerate() {
            assert_eq!(m.row(i), &r[..]);
        }
        assert!(assemble_matrix(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn split_cases() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let (tr, te) = split(&labels, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(te.iter().any(|&i| labels[i] == 0) && te.iter().any(|&i| labels[i] == 1));
        assert_eq!(split(&labels, 0.8, 3).unwrap(), (tr, te));
        assert!(split(&[0, 0, 0, 1], 0.8, 0).is_err());
        assert!(split(&labels, 1.0, 0).is_err());
    }

    #[test]
    fn window_cases() {
        let series = Matrix::from_vec(5, 1, vec![10.0, 11.0, 12.0, 13.0, 14.0]);
        let labels = [0, 0, 1, 1, 0];
        let w = window(&series, &labels, 3, 1).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w.labels, vec![1, 1, 0]);
        assert_eq!(w.windows[1].as_slice(), &[11.0, 12.0, 13.0]);

        let exact = window(&Matrix::zeros(4, 2), &[0; 4], 4, 1).unwrap();
        assert_eq!(exact.len(), 1);
        assert_eq!(window(&Matrix::zeros(5, 2), &[0; 5], 4, 1).unwrap().len(), 2);
        assert_eq!(window(&series, &labels, 2, 2).unwrap().len(), 2);
        assert!(window(&Matrix::zeros(3, 1), &[0; 3], 4, 1).is_err());
    }

    fn toy_dataset(n: usize) -> RawDataset {
        let mut d = RawDataset::new(vec!["a".into(), "b".into()]);
        for i in 0..n {
            let label = u8::from(i % 7 == 3);
            let v = f64::from(label) * 2.0 + (i as f64 * 0.37).sin();
            d.push(i as u64, vec![Some(v), Some(i as f64)], Some(label)).unwrap();
        }
        d
    }

    #[test]
    fn prepare_fits_on_train_only() {
        let cfg = PipelineConfig {
            window_len: 4,
            ..PipelineConfig::default()
        };
        for order in [StageOrder::OversampleFirst, StageOrder::SplitFirst] {
            let p = prepare(&toy_dataset(300), &PipelineConfig { order, ..cfg }).unwrap();
            let column_mean = |set: &WindowSet, c: usize| {
                let vals: Vec<f64> = set.windows.iter().flat_map(|w| (0..w.rows()).map(move |i| w[(i, c)])).collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            assert!(column_mean(&p.train, 0).abs() < 1e-9);
            assert!(column_mean(&p.test, 0).abs() > 1e-6);
            let ones = p.train.labels.iter().filter(|&&l| l == 1).count();
            assert!(ones.abs_diff(p.train.len() - ones) <= 1);
        }
        let single = {
            let mut d = toy_dataset(50);
            d.labels.iter_mut().for_each(|l| *l = Some(0));
            d
        };
        assert!(prepare(&single, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn standardizer_moments_and_inverse(
            rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 2..40)
        ) {
            let m = Matrix::from_rows(&rows).unwrap();
            let st = Standardizer::fit(&m).unwrap();
            let z = st.apply(&m);
            let n = rows.len() as f64;
            for j in 0..3 {
                let mean = (0..rows.len()).map(|i| z[(i, j)]).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9);
                if st.stds[j] > 1e-6 {
                    let var = (0..rows.len()).map(|i| z[(i, j)].powi(2)).sum::<f64>() / n;
                    prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
                }
            }
            let back = st.invert(&z);
            for j in 0..3 {
                if st.stds[j] > 0.0 {
                    for i in 0..rows.len() {
                        prop_assert!((back[(i, j)] - m[(i, j)]).abs() < 1e-9);
                    }
                }
            }
        }

        #[test]
        fn synthetics_are_same_cluster_convex_combinations(seed in 0u64..200, k in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = Vec::new();
            let mut y = Vec::new();
            for i in 0..60 {
                let label = u8::from(i % 5 == 0);
                x.push(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
                y.push(label);
            }
            let (ox, oy) = cks_oversample(&x, &y, k, seed).unwrap();
            prop_assert_eq!(&ox[..60], &x[..]);
            prop_assert_eq!(&oy[..60], &y[..]);
            let minority: Vec<&Vec<f64>> = x.iter().zip(&y).filter(|(_, &l)| l == 1).map(|(p, _)| p).collect();
            for p in &ox[60..] {
                // Some pair of minority points has p on its segment.
                let on_segment = minority.iter().any(|a| minority.iter().any(|b| {
                    let d = [b[0] - a[0], b[1] - a[1]];
                    let len2 = d[0] * d[0] + d[1] * d[1];
                    if len2 == 0.0 {
                        return (p[0] - a[0]).abs() < 1e-5 && (p[1] - a[1]).abs() < 1e-5;
                    }
                    let u = ((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2;
                    let off = [(a[0] + u * d[0]) - p[0], (a[1] + u * d[1]) - p[1]];
                    (-1e-9..=1.0 + 1e-9).contains(&u) && off[0].hypot(off[1]) < 1e-5
                }));
                prop_assert!(on_segment);
            }
        }
    }
}
