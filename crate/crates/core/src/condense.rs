//! Condensation schemes: the random-subset baseline and the linear
//! distribution-matching transform (re-centering the initialization at the
//! mean of the training data).

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ExampleId};
use crate::error::{Error, Result};
use crate::seed;
use crate::stats::{column_means, l2_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondenseScheme {
    RandomSubset,
    DmLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    SubsetOfT,
    GaussianCentered,
}

/// Initialization set fed to the distribution-matching transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmInit {
    pub data: Dataset,
    pub kind: InitKind,
    pub seed: u64,
}

/// Output of a condensation scheme, with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondensedDataset {
    pub data: Dataset,
    /// |S| / |T| actually realized.
    pub r_ipc: f64,
    pub scheme: CondenseScheme,
    pub init: Option<InitKind>,
    pub seed: u64,
    /// Universe ids behind the initialization, when it was drawn from T.
    pub init_ids: Option<Vec<ExampleId>>,
}

impl CondensedDataset {
    /// CSV in the ingestion schema plus a TOML provenance sidecar.
    pub fn save(&self, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
        let file = std::fs::File::create(csv_path)
            .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
        crate::data::write_csv(file, &self.data)?;
        let sidecar = Provenance {
            scheme: self.scheme,
            init: self.init,
            r_ipc: self.r_ipc,
            seed: self.seed,
            size: self.data.len(),
            init_ids: self.init_ids.clone(),
        };
        let text = toml::to_string(&sidecar).map_err(|e| Error::Serialize(e.to_string()))?;
        std::fs::write(sidecar_path, text)
            .map_err(|e| Error::io(sidecar_path.display().to_string(), e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Provenance {
    scheme: CondenseScheme,
    init: Option<InitKind>,
    r_ipc: f64,
    seed: u64,
    size: usize,
    init_ids: Option<Vec<ExampleId>>,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

fn sorted_sample(rng: &mut rand_chacha::ChaCha8Rng, n: usize, m: usize) -> Vec<usize> {
    let mut picked = rand::seq::index::sample(rng, n, m).into_vec();
    picked.sort_unstable();
    picked
}

/// Uniform (or per-class stratified) subset of T without replacement.
///
/// |S| is round-half-up of `r_ipc * |T|`; stratified draws keep at least one
/// example per non-empty class.
pub fn condense_random_subset(
    t: &Dataset,
    r_ipc: f64,
    stratified: bool,
    subset_seed: u64,
) -> Result<CondensedDataset> {
    if !(r_ipc > 0.0 && r_ipc <= 1.0) {
        return Err(Error::Validation(format!(
            "r_ipc must be in (0,1], got {r_ipc}"
        )));
    }
    if t.is_empty() {
        return Err(Error::Validation("cannot condense an empty dataset".into()));
    }
    let mut rng = seed::rng(seed::derive(subset_seed, 0x73756273));
    let rows: Vec<usize> = if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); t.num_classes()];
        for i in 0..t.len() {
            by_class[t.label(i)].push(i);
        }
        let mut rows = Vec::new();
        for members in by_class.iter().filter(|m| !m.is_empty()) {
            let m_c = round_half_up(r_ipc * members.len() as f64).max(1);
            for idx in sorted_sample(&mut rng, members.len(), m_c) {
                rows.push(members[idx]);
            }
        }
        rows.sort_unstable();
        rows
    } else {
        let m = round_half_up(r_ipc * t.len() as f64);
        if m == 0 {
            return Err(Error::Validation(format!(
                "r_ipc {r_ipc} rounds to an empty subset of {} examples",
                t.len()
            )));
        }
        sorted_sample(&mut rng, t.len(), m)
    };

    let mut features = Vec::with_capacity(rows.len() * t.dim());
    let mut labels = Vec::with_capacity(rows.len());
    let mut ids = Vec::with_capacity(rows.len());
    for &i in &rows {
        features.extend_from_slice(t.feature(i));
        labels.push(t.label(i));
        ids.push(t.id(i));
    }
    let data = Dataset::new(features, labels, ids.clone(), t.dim(), t.num_classes())?;
    Ok(CondensedDataset {
        r_ipc,
        data,
        scheme: CondenseScheme::RandomSubset,
        init: None,
        seed: subset_seed,
        init_ids: Some(ids),
    })
}

/// Random subset of T packaged as a DM initialization (ids preserved).
pub fn init_subset_of_t(t: &Dataset, m: usize, init_seed: u64) -> Result<DmInit> {
    if m == 0 || m > t.len() {
        return Err(Error::Validation(format!(
            "init size {m} outside 1..={}",
            t.len()
        )));
    }
    let mut rng = seed::rng(seed::derive(init_seed, 0x696e6974));
    let rows = sorted_sample(&mut rng, t.len(), m);
    let mut features = Vec::with_capacity(m * t.dim());
    let mut labels = Vec::with_capacity(m);
    let mut ids = Vec::with_capacity(m);
    for &i in &rows {
        features.extend_from_slice(t.feature(i));
        labels.push(t.label(i));
        ids.push(t.id(i));
    }
    Ok(DmInit {
        data: Dataset::new(features, labels, ids, t.dim(), t.num_classes())?,
        kind: InitKind::SubsetOfT,
        seed: init_seed,
    })
}

/// m standard-normal draws re-centered so their sample mean is the origin.
///
/// m = 1 would force the all-zeros vector and is rejected as degenerate.
/// Labels are all zero; use [`DmInit::with_round_robin_labels`] when the
/// output feeds a classifier.
pub fn init_gaussian_centered(m: usize, d: usize, init_seed: u64) -> Result<DmInit> {
    if m < 2 {
        return Err(Error::Degenerate(format!(
            "centered Gaussian init needs m >= 2, got {m}"
        )));
    }
    if d == 0 {
        return Err(Error::Validation("dimension must be >= 1".into()));
    }
    let mut rng = seed::rng(seed::derive(init_seed, 0x67617573));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features: Vec<f64> = (0..m * d).map(|_| normal.sample(&mut rng)).collect();
    let means = column_means(&features, d);
    for r in 0..m {
        for j in 0..d {
            features[r * d + j] -= means[j];
        }
    }
    debug_assert!(column_means(&features, d).iter().all(|v| v.abs() <= 1e-12));
    let labels = vec![0usize; m];
    let ids = (0..m).collect();
    Ok(DmInit {
        data: Dataset::new(features, labels, ids, d, 1)?,
        kind: InitKind::GaussianCentered,
        seed: init_seed,
    })
}

impl DmInit {
    /// Reassign labels round-robin over `k` classes (features unchanged).
    pub fn with_round_robin_labels(self, k: usize) -> Result<DmInit> {
        if k == 0 {
            return Err(Error::Validation("class count must be >= 1".into()));
        }
        let labels: Vec<usize> = (0..self.data.len()).map(|i| i % k).collect();
        let data = Dataset::new(
            self.data.features_flat().to_vec(),
            labels,
            self.data.ids().to_vec(),
            self.data.dim(),
            k,
        )?;
        Ok(DmInit { data, ..self })
    }
}

/// The linear distribution-matching transform:
/// `s_i = s'_i - mean(S_init) + mean(T)`, labels copied from the init.
///
/// The output depends on T only through mean(T).
pub fn condense_dm_linear(init: &DmInit, t: &Dataset) -> Result<CondensedDataset> {
    if init.data.dim() != t.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            got: init.data.dim(),
        });
    }
    if init.data.is_empty() {
        return Err(Error::Validation("initialization set is empty".into()));
    }
    if t.is_empty() {
        return Err(Error::Validation("training dataset is empty".into()));
    }
    let d = t.dim();
    let mean_init = init.data.feature_mean();
    let mean_t = t.feature_mean();
    let m = init.data.len();
    let mut features = Vec::with_capacity(m * d);
    for i in 0..m {
        let row = init.data.feature(i);
        for j in 0..d {
            features.push(row[j] - mean_init[j] + mean_t[j]);
        }
    }
    let data = Dataset::new(
        features,
        init.data.labels().to_vec(),
        (0..m).collect(),
        d,
        init.data.num_classes(),
    )?;
    let init_ids = match init.kind {
        InitKind::SubsetOfT => Some(init.data.ids().to_vec()),
        InitKind::GaussianCentered => None,
    };
    Ok(CondensedDataset {
        r_ipc: m as f64 / t.len() as f64,
        data,
        scheme: CondenseScheme::DmLinear,
        init: Some(init.kind),
        seed: init.seed,
        init_ids,
    })
}

/// ℓ₂ distance between mean(S_init) and mean(T) for a subset-of-T init.
pub fn mean_gap(init: &DmInit, t: &Dataset) -> Result<f64> {
    if init.kind != InitKind::SubsetOfT {
        return Err(Error::Validation(
            "mean_gap is defined for subset-of-T initializations".into(),
        ));
    }
    if init.data.dim() != t.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            got: init.data.dim(),
        });
    }
    let t_ids: std::collections::HashSet<ExampleId> = t.ids().iter().copied().collect();
    if !init.data.ids().iter().all(|id| t_ids.contains(id)) {
        return Err(Error::Validation("initialization is not a subset of T".into()));
    }
    let a = init.data.feature_mean();
    let b = t.feature_mean();
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    Ok(l2_norm(&diff))
}
