//! Sample universes, the defender's membership sampling protocol, and
//! worst-case neighboring dataset pairs.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::stats::column_means;

/// Stable per-example identifier; dense 0..n-1 within a universe.
pub type ExampleId = usize;

/// A labeled set of feature vectors with provenance ids.
///
/// `ids` refer back to the universe the dataset was derived from, so
/// membership ground truth survives condensation and shuffling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    ids: Vec<ExampleId>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        ids: Vec<ExampleId>,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("feature dimension must be >= 1".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Validation(format!(
                "feature buffer has {} values, expected {} x {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if ids.len() != labels.len() {
            return Err(Error::Validation("one id per example required".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            ids,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn id(&self, i: usize) -> ExampleId {
        self.ids[i]
    }

    pub fn ids(&self) -> &[ExampleId] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features_flat(&self) -> &[f64] {
        &self.features
    }

    /// Per-coordinate mean, compensated summation.
    pub fn feature_mean(&self) -> Vec<f64> {
        column_means(&self.features, self.dim)
    }

    /// Count of examples carrying each label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// SHA-256 over the canonical byte encoding of (dim, labels, features).
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for (i, &l) in self.labels.iter().enumerate() {
            h.update((l as u64).to_le_bytes());
            for v in self.feature(i) {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

/// The agreed pool of candidate examples over which membership is contested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Universe {
    data: Dataset,
}

impl Universe {
    /// Wrap a dataset whose ids are dense 0..n-1.
    pub fn from_dataset(data: Dataset) -> Result<Self> {
        for (i, &id) in data.ids().iter().enumerate() {
            if id != i {
                return Err(Error::Validation(
                    "universe ids must be dense 0..n-1 in order".into(),
                ));
            }
        }
        Ok(Universe { data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.data.num_classes()
    }

    pub fn feature(&self, id: ExampleId) -> &[f64] {
        self.data.feature(id)
    }

    pub fn label(&self, id: ExampleId) -> usize {
        self.data.label(id)
    }

    pub fn as_dataset(&self) -> &Dataset {
        &self.data
    }

    /// Materialize the subset with the given ids (order preserved).
    pub fn subset(&self, ids: &[ExampleId]) -> Result<Dataset> {
        let dim = self.dim();
        let mut features = Vec::with_capacity(ids.len() * dim);
        let mut labels = Vec::with_capacity(ids.len());
        for &id in ids {
            if id >= self.len() {
                return Err(Error::Validation(format!("id {id} outside universe")));
            }
            features.extend_from_slice(self.feature(id));
            labels.push(self.label(id));
        }
        Dataset::new(features, labels, ids.to_vec(), dim, self.num_classes())
    }
}

/// Parameters for the synthetic Gaussian-mixture universe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniverseSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// Pairwise distance between class means (for k <= d).
    pub separation: f64,
    /// Isotropic noise scale around each class mean.
    pub noise: f64,
    pub seed: u64,
}

impl UniverseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.n < self.k {
            return Err(Error::Validation(format!(
                "need n >= k >= 2, got n={} k={}",
                self.n, self.k
            )));
        }
        if self.d == 0 {
            return Err(Error::Validation("dimension must be >= 1".into()));
        }
        if self.separation < 0.0 || !self.separation.is_finite() {
            return Err(Error::Validation("separation must be finite and >= 0".into()));
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(Error::Validation("noise must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn class_mean(class: usize, d: usize, separation: f64) -> Vec<f64> {
    let mut m = vec![0.0; d];
    let axis = class % d;
    let sign = if (class / d) % 2 == 0 { 1.0 } else { -1.0 };
    m[axis] = sign * separation / f64::sqrt(2.0);
    m
}

/// Synthetic k-component Gaussian mixture with balanced labels.
///
/// Labels are assigned round-robin so per-class counts differ by at most one;
/// features are `class_mean + noise * N(0, I)`. Deterministic given the seed.
pub fn generate_universe(spec: &UniverseSpec) -> Result<Universe> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(spec.seed, 0x647a7461));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let means: Vec<Vec<f64>> = (0..spec.k)
        .map(|c| class_mean(c, spec.d, spec.separation))
        .collect();
    let mut features = Vec::with_capacity(spec.n * spec.d);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let c = i % spec.k;
        labels.push(c);
        for j in 0..spec.d {
            features.push(means[c][j] + spec.noise * normal.sample(&mut rng));
        }
    }
    let ids = (0..spec.n).collect();
    Universe::from_dataset(Dataset::new(features, labels, ids, spec.d, spec.k)?)
}

/// Per-example membership bits defining the defender's training pool T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipChallenge {
    member_bits: Vec<bool>,
    sampling_rate: f64,
    seed: u64,
}

impl MembershipChallenge {
    /// Build from explicit bits (used by tests and fixed-design shadows).
    pub fn from_bits(member_bits: Vec<bool>, sampling_rate: f64, seed: u64) -> Self {
        MembershipChallenge {
            member_bits,
            sampling_rate,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.member_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_bits.is_empty()
    }

    pub fn is_member(&self, id: ExampleId) -> bool {
        self.member_bits[id]
    }

    pub fn bits(&self) -> &[bool] {
        &self.member_bits
    }

    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn member_count(&self) -> usize {
        self.member_bits.iter().filter(|&&b| b).count()
    }

    /// Ids of the member set T.
    pub fn member_ids(&self) -> Vec<ExampleId> {
        (0..self.member_bits.len())
            .filter(|&i| self.member_bits[i])
            .collect()
    }

    pub fn non_member_ids(&self) -> Vec<ExampleId> {
        (0..self.member_bits.len())
            .filter(|&i| !self.member_bits[i])
            .collect()
    }
}

/// Draw each universe example into T independently with probability `p`.
///
/// Pure function of (|U|, p, seed).
pub fn sample_membership(universe: &Universe, p: f64, challenge_seed: u64) -> Result<MembershipChallenge> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Validation(format!(
            "sampling rate must be in [0,1], got {p}"
        )));
    }
    let mut rng = seed::rng(seed::derive(challenge_seed, 0x6d656d62));
    let member_bits = (0..universe.len())
        .map(|_| rng.random::<f64>() < p)
        .collect();
    Ok(MembershipChallenge {
        member_bits,
        sampling_rate: p,
        seed: challenge_seed,
    })
}

/// Neighboring datasets D and D' = D ∪ {target} for worst-case audits.
///
/// All examples outside `target_class` are shared; the class keeps exactly
/// one example in D and exactly two in D'.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditPair {
    pub d: Dataset,
    pub d_prime: Dataset,
    pub target_id: ExampleId,
    pub target_class: usize,
    pub target_features: Vec<f64>,
}

/// Keep `keep_id` as the lone `target_class` example in D; D' additionally
/// holds `extra_id`, the example whose presence the audit tries to detect.
pub fn build_audit_pair(
    universe: &Universe,
    target_class: usize,
    keep_id: ExampleId,
    extra_id: ExampleId,
) -> Result<AuditPair> {
    if keep_id == extra_id {
        return Err(Error::Validation("keep and extra ids must differ".into()));
    }
    for &(name, id) in &[("keep", keep_id), ("extra", extra_id)] {
        if id >= universe.len() {
            return Err(Error::Validation(format!("{name} id {id} outside universe")));
        }
        if universe.label(id) != target_class {
            return Err(Error::Validation(format!(
                "{name} id {id} has class {}, expected {target_class}",
                universe.label(id)
            )));
        }
    }
    let mut d_ids: Vec<ExampleId> = (0..universe.len())
        .filter(|&i| universe.label(i) != target_class)
        .collect();
    d_ids.push(keep_id);
    let mut d_prime_ids = d_ids.clone();
    d_prime_ids.push(extra_id);
    Ok(AuditPair {
        d: universe.subset(&d_ids)?,
        d_prime: universe.subset(&d_prime_ids)?,
        target_id: extra_id,
        target_class,
        target_features: universe.feature(extra_id).to_vec(),
    })
}

/// Read a universe from CSV: header row, one `label` column, remaining
/// columns numeric features; ids assigned by row order.
///
/// When `normalize` is set, features are shifted to zero mean and scaled to
/// unit variance per column (columns with zero variance are only centered).
pub fn ingest_csv<R: Read>(reader: R, normalize: bool) -> Result<Universe> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Validation(format!("bad csv header: {e}")))?
        .clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Validation("csv must contain a `label` column".into()))?;
    let dim = headers.len().saturating_sub(1);
    if dim == 0 {
        return Err(Error::Validation("csv has no feature columns".into()));
    }
    let mut features = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Validation(format!("csv row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::Validation(format!(
                "csv row {row} has {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }
        for (col, field) in record.iter().enumerate() {
            if col == label_col {
                let l: usize = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Validation(format!("csv row {row}: bad label {field:?}")))?;
                labels.push(l);
            } else {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Validation(format!("csv row {row}: bad feature {field:?}"))
                })?;
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Validation("csv contains no data rows".into()));
    }
    if normalize {
        let n = labels.len() as f64;
        let means = column_means(&features, dim);
        for j in 0..dim {
            let var = features
                .iter()
                .skip(j)
                .step_by(dim)
                .map(|v| (v - means[j]) * (v - means[j]))
                .sum::<f64>()
                / n;
            let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
            for r in 0..labels.len() {
                features[r * dim + j] = (features[r * dim + j] - means[j]) * scale;
            }
        }
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let ids = (0..labels.len()).collect();
    Universe::from_dataset(Dataset::new(features, labels, ids, dim, num_classes)?)
}

/// Write a dataset in the ingestion schema (label column first).
pub fn write_csv<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["label".to_string()];
    header.extend((0..data.dim()).map(|j| format!("f{j}")));
    wtr.write_record(&header)
        .map_err(|e| Error::Serialize(e.to_string()))?;
    for i in 0..data.len() {
        let mut row = vec![data.label(i).to_string()];
        row.extend(data.feature(i).iter().map(|v| format!("{v:?}")));
        wtr.write_record(&row)
            .map_err(|e| Error::Serialize(e.to_string()))?;
    }
    wtr.flush().map_err(|e| Error::Serialize(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> UniverseSpec {
        UniverseSpec {
            n: 100,
            d: 2,
            k: 2,
            separation: 0.0,
            noise: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn generation_balances_labels() {
        let u = generate_universe(&small_spec()).unwrap();
        let counts = u.as_dataset().class_counts();
        assert_eq!(counts, vec![50, 50]);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_universe(&small_spec()).unwrap();
        let b = generate_universe(&small_spec()).unwrap();
        assert_eq!(a, b);
        let bits_a: Vec<u64> = a
            .as_dataset()
            .features_flat()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let bits_b: Vec<u64> = b
            .as_dataset()
            .features_flat()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn generation_rejects_bad_specs() {
        let mut s = small_spec();
        s.n = 1;
        assert!(generate_universe(&s).is_err());
        let mut s = small_spec();
        s.d = 0;
        assert!(generate_universe(&s).is_err());
        let mut s = small_spec();
        s.k = 1;
        assert!(generate_universe(&s).is_err());
    }

    #[test]
    fn class_means_are_separated() {
        for (k, d) in [(2usize, 8usize), (3, 4), (4, 4)] {
            let means: Vec<Vec<f64>> = (0..k).map(|c| class_mean(c, d, 6.0)).collect();
            for a in 0..k {
                for b in (a + 1)..k {
                    let dist: f64 = means[a]
                        .iter()
                        .zip(&means[b])
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt();
                    assert!((dist - 6.0).abs() < 1e-12, "k={k} d={d} pair=({a},{b})");
                }
            }
        }
    }

    #[test]
    fn membership_extremes() {
        let u = generate_universe(&small_spec()).unwrap();
        let all = sample_membership(&u, 1.0, 3).unwrap();
        assert_eq!(all.member_count(), u.len());
        let none = sample_membership(&u, 0.0, 3).unwrap();
        assert_eq!(none.member_count(), 0);
        assert!(sample_membership(&u, 1.5, 3).is_err());
    }

    #[test]
    fn membership_is_pure_in_seed() {
        let u = generate_universe(&small_spec()).unwrap();
        let a = sample_membership(&u, 0.5, 42).unwrap();
        let b = sample_membership(&u, 0.5, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_membership(&u, 0.5, 43).unwrap();
        assert_ne!(a.bits(), c.bits());
    }

    // Interval endpoints frozen from the exact binomial CDF oracle below:
    // the central 99.9% region of Bin(10000, 0.5) is [4836, 5164].
    #[test]
    fn membership_count_within_exact_binomial_interval() {
        let oracle = |k: usize| {
            // P(Bin(n, 0.5) <= k) via the incomplete beta identity.
            let n = 10_000f64;
            crate::stats::incomplete_beta_reg(n - k as f64, k as f64 + 1.0, 0.5)
        };
        // Each tail of the frozen interval holds ~5e-4 of the mass.
        assert!(oracle(4835) < 6e-4, "lower endpoint inconsistent with oracle");
        assert!(oracle(5164) > 1.0 - 6e-4, "upper endpoint inconsistent");
        assert!(oracle(4836) > 4e-4, "interval is wider than the oracle needs");

        let spec = UniverseSpec {
            n: 10_000,
            ..small_spec()
        };
        let u = generate_universe(&spec).unwrap();
        let ch = sample_membership(&u, 0.5, 11).unwrap();
        let count = ch.member_count();
        assert!((4836..=5164).contains(&count), "count={count}");
    }

    #[test]
    fn expected_member_count_matches_rate() {
        let u = generate_universe(&small_spec()).unwrap();
        let p = 0.3;
        let trials = 1000usize;
        let mean = (0..trials)
            .map(|s| sample_membership(&u, p, s as u64).unwrap().member_count() as f64)
            .sum::<f64>()
            / trials as f64;
        let expect = p * u.len() as f64;
        // SE of the mean count over `trials` challenges.
        let se = (u.len() as f64 * p * (1.0 - p) / trials as f64).sqrt();
        assert!((mean - expect).abs() <= 3.0 * se, "mean={mean} expect={expect}");
    }

    fn audit_universe() -> Universe {
        let spec = UniverseSpec {
            n: 40,
            d: 3,
            k: 2,
            separation: 2.0,
            noise: 1.0,
            seed: 5,
        };
        generate_universe(&spec).unwrap()
    }

    #[test]
    fn audit_pair_counts_and_symmetric_difference() {
        let u = audit_universe();
        let class0: Vec<_> = (0..u.len()).filter(|&i| u.label(i) == 0).collect();
        assert!(class0.len() >= 10);
        let pair = build_audit_pair(&u, 0, class0[0], class0[1]).unwrap();
        assert_eq!(pair.d.class_counts()[0], 1);
        assert_eq!(pair.d_prime.class_counts()[0], 2);
        assert_eq!(pair.d_prime.len(), pair.d.len() + 1);

        let d_set: std::collections::HashSet<_> = pair.d.ids().iter().collect();
        let extra: Vec<_> = pair
            .d_prime
            .ids()
            .iter()
            .filter(|id| !d_set.contains(id))
            .collect();
        assert_eq!(extra, vec![&class0[1]]);
        assert_eq!(pair.target_id, class0[1]);
        assert_eq!(pair.target_features, u.feature(class0[1]));
    }

    #[test]
    fn audit_pair_rejects_bad_ids() {
        let u = audit_universe();
        let class0: Vec<_> = (0..u.len()).filter(|&i| u.label(i) == 0).collect();
        let class1: Vec<_> = (0..u.len()).filter(|&i| u.label(i) == 1).collect();
        assert!(build_audit_pair(&u, 0, class0[0], class0[0]).is_err());
        assert!(build_audit_pair(&u, 0, class0[0], class1[0]).is_err());
        assert!(build_audit_pair(&u, 0, class0[0], u.len() + 5).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let u = audit_universe();
        let mut buf = Vec::new();
        write_csv(&mut buf, u.as_dataset()).unwrap();
        let back = ingest_csv(&buf[..], false).unwrap();
        assert_eq!(back.len(), u.len());
        assert_eq!(back.dim(), u.dim());
        for i in 0..u.len() {
            assert_eq!(back.label(i), u.label(i));
            assert_eq!(back.feature(i), u.feature(i));
        }
    }

    #[test]
    fn csv_normalization_centers_columns() {
        let csv_text = "label,f0,f1\n0,1.0,10.0\n1,3.0,10.0\n";
        let u = ingest_csv(csv_text.as_bytes(), true).unwrap();
        let m = u.as_dataset().feature_mean();
        assert!(m[0].abs() < 1e-12 && m[1].abs() < 1e-12);
        // Unit variance where variance exists.
        assert!((u.feature(0)[0] + 1.0).abs() < 1e-12);
        assert!((u.feature(1)[0] - 1.0).abs() < 1e-12);
        // Constant column is centered only.
        assert_eq!(u.feature(0)[1], 0.0);
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(ingest_csv("f0,f1\n1,2\n".as_bytes(), false).is_err());
        assert!(ingest_csv("label,f0\nx,2\n".as_bytes(), false).is_err());
        assert!(ingest_csv("label,f0\n0,abc\n".as_bytes(), false).is_err());
        assert!(ingest_csv("label,f0\n".as_bytes(), false).is_err());
    }
}
