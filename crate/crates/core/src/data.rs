//! Object tables, choice observations and their validated container.
//!
//! A dataset is a table of `t` objects (rows of `c` features) plus `m`
//! observations. Each observation offers a set `A` of object indices and
//! records the chosen subset `C(A)`; everything else in `A` was rejected.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major block of points in `R^c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidObjects("feature dimension must be at least 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidObjects(format!(
                "{} values cannot be split into rows of {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::InvalidObjects(format!(
                "row {i} has {} features, expected {dim}",
                r.len()
            )));
        }
        Self::new(rows.iter().flatten().copied().collect(), dim)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Points at the given row indices, in that order.
    pub fn select(&self, idx: &[usize]) -> Points {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Points { data, dim: self.dim }
    }
}

/// The ground set: `t >= 2` distinct objects with finite features.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTable {
    points: Points,
}

impl ObjectTable {
    pub fn new(points: Points) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidObjects(format!(
                "need at least 2 objects, got {}",
                points.len()
            )));
        }
        if let Some(pos) = points.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidObjects(format!(
                "non-finite feature in row {}",
                pos / points.dim
            )));
        }
        // exact bitwise comparison of rows
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::with_capacity(points.len());
        for (i, row) in points.rows().enumerate() {
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            if let Some(&j) = seen.get(&key) {
                return Err(Error::DuplicateObject(j, i));
            }
            seen.insert(key, i);
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Points::from_rows(rows)?)
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_features(&self) -> usize {
        self.points.dim()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }
}

/// One offered set `A` and the chosen subset `C(A)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceObservation {
    #[serde(rename = "set")]
    pub set_indices: Vec<usize>,
    #[serde(rename = "chosen")]
    pub chosen_indices: Vec<usize>,
}

impl ChoiceObservation {
    pub fn new(set_indices: Vec<usize>, chosen_indices: Vec<usize>) -> Self {
        Self {
            set_indices,
            chosen_indices,
        }
    }

    /// `R(A) = A \ C(A)`, in the order the objects appear in `A`.
    pub fn rejected(&self) -> Vec<usize> {
        self.set_indices
            .iter()
            .copied()
            .filter(|i| !self.chosen_indices.contains(i))
            .collect()
    }

    pub(crate) fn check(&self, k: usize, n_objects: usize) -> Result<()> {
        if self.chosen_indices.is_empty() {
            return Err(Error::EmptyChoiceSet(k));
        }
        if self.set_indices.len() < 2 {
            return Err(Error::InvalidObservation {
                observation: k,
                reason: format!("offered set has {} objects, need at least 2", self.set_indices.len()),
            });
        }
        for &i in self.set_indices.iter().chain(&self.chosen_indices) {
            if i >= n_objects {
                return Err(Error::IndexOutOfRange {
                    observation: k,
                    index: i,
                    len: n_objects,
                });
            }
        }
        let set: BTreeSet<usize> = self.set_indices.iter().copied().collect();
        if set.len() != self.set_indices.len() {
            return Err(Error::InvalidObservation {
                observation: k,
                reason: "offered set contains repeated objects".into(),
            });
        }
        let chosen: BTreeSet<usize> = self.chosen_indices.iter().copied().collect();
        if chosen.len() != self.chosen_indices.len() {
            return Err(Error::InvalidObservation {
                observation: k,
                reason: "chosen set contains repeated objects".into(),
            });
        }
        if !chosen.is_subset(&set) {
            return Err(Error::InvalidObservation {
                observation: k,
                reason: "chosen set is not a subset of the offered set".into(),
            });
        }
        Ok(())
    }
}

/// A validated choice dataset `D_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDataset {
    objects: ObjectTable,
    observations: Vec<ChoiceObservation>,
}

/// Validate raw features and observations into a [`ChoiceDataset`].
pub fn validate_dataset(
    features: &[Vec<f64>],
    observations: Vec<ChoiceObservation>,
) -> Result<ChoiceDataset> {
    ChoiceDataset::new(ObjectTable::from_rows(features)?, observations)
}

impl ChoiceDataset {
    pub fn new(objects: ObjectTable, observations: Vec<ChoiceObservation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidArgument("dataset has no observations".into()));
        }
        for (k, obs) in observations.iter().enumerate() {
            obs.check(k, objects.len())?;
        }
        Ok(Self {
            objects,
            observations,
        })
    }

    pub fn objects(&self) -> &ObjectTable {
        &self.objects
    }

    pub fn observations(&self) -> &[ChoiceObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Same objects, a subset of the observations (by position).
    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        let obs = keep.iter().map(|&k| self.observations[k].clone()).collect();
        Self::new(self.objects.clone(), obs)
    }

    /// Same objects, different observations.
    pub fn with_observations(&self, observations: Vec<ChoiceObservation>) -> Result<Self> {
        Self::new(self.objects.clone(), observations)
    }

    /// Objects referenced by at least one observation, ascending.
    pub fn referenced_objects(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .observations
            .iter()
            .flat_map(|o| o.set_indices.iter().copied())
            .collect();
        set.into_iter().collect()
    }

    /// Drop objects no observation refers to and re-index observations.
    ///
    /// Returns the compacted dataset and, for each of its rows, the row it
    /// came from in `self`.
    pub fn restrict_to_referenced(&self) -> Result<(Self, Vec<usize>)> {
        let rows = self.referenced_objects();
        let mut remap = vec![usize::MAX; self.objects.len()];
        for (new, &old) in rows.iter().enumerate() {
            remap[old] = new;
        }
        let objects = ObjectTable::new(self.objects.points().select(&rows))?;
        let observations = self
            .observations
            .iter()
            .map(|o| {
                ChoiceObservation::new(
                    o.set_indices.iter().map(|&i| remap[i]).collect(),
                    o.chosen_indices.iter().map(|&i| remap[i]).collect(),
                )
            })
            .collect();
        Ok((Self::new(objects, observations)?, rows))
    }

    pub fn to_file(&self) -> DatasetFile {
        DatasetFile {
            features: self.objects.points().to_rows(),
            observations: self.observations.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: DatasetFile = serde_json::from_str(&text)?;
        file.into_dataset()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }
}

/// JSON wire format shared by every command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub features: Vec<Vec<f64>>,
    pub observations: Vec<ChoiceObservation>,
}

impl DatasetFile {
    pub fn into_dataset(self) -> Result<ChoiceDataset> {
        validate_dataset(&self.features, self.observations)
    }
}

/// A chosen/rejected comparison group: rejected object `rejected` must be
/// dominated by at least one of `chosen`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectionGroup {
    pub rejected: usize,
    pub chosen: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationSpan {
    pub pairs: Range<usize>,
    pub groups: Range<usize>,
    pub chosen: Range<usize>,
}

/// Flattened likelihood structure of a dataset.
///
/// Incomparability pairs come from every unordered pair inside each `C(A_k)`;
/// rejection groups pair each rejected object with the chosen objects of its
/// observation. Rejection groups are ragged: no padding objects are stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairEncoding {
    pub incomparability_pairs: Vec<(usize, usize)>,
    pub rejection_groups: Vec<RejectionGroup>,
    /// Chosen indices of all observations, concatenated.
    pub chosen: Vec<usize>,
    pub observation_offsets: Vec<ObservationSpan>,
    pub n_objects: usize,
}

pub fn encode_pairs(dataset: &ChoiceDataset) -> PairEncoding {
    encode_observations(dataset.observations(), dataset.objects().len())
}

pub(crate) fn encode_observations(obs: &[ChoiceObservation], n_objects: usize) -> PairEncoding {
    let mut enc = PairEncoding {
        incomparability_pairs: Vec::new(),
        rejection_groups: Vec::new(),
        chosen: Vec::new(),
        observation_offsets: Vec::with_capacity(obs.len()),
        n_objects,
    };
    for o in obs {
        let pair_start = enc.incomparability_pairs.len();
        let group_start = enc.rejection_groups.len();
        let chosen_start = enc.chosen.len();
        enc.chosen.extend_from_slice(&o.chosen_indices);
        let chosen = chosen_start..enc.chosen.len();

        let c = &o.chosen_indices;
        for a in 0..c.len() {
            for b in a + 1..c.len() {
                enc.incomparability_pairs.push((c[a], c[b]));
            }
        }
        for v in o.rejected() {
            enc.rejection_groups.push(RejectionGroup {
                rejected: v,
                chosen: chosen.clone(),
            });
        }
        enc.observation_offsets.push(ObservationSpan {
            pairs: pair_start..enc.incomparability_pairs.len(),
            groups: group_start..enc.rejection_groups.len(),
            chosen,
        });
    }
    enc
}

impl PairEncoding {
    pub fn n_observations(&self) -> usize {
        self.observation_offsets.len()
    }

    /// `(C(A_k), R(A_k))` recovered from the encoding.
    pub fn decode(&self, k: usize) -> (Vec<usize>, Vec<usize>) {
        let span = &self.observation_offsets[k];
        let chosen = self.chosen[span.chosen.clone()].to_vec();
        let rejected = self.rejection_groups[span.groups.clone()]
            .iter()
            .map(|g| g.rejected)
            .collect();
        (chosen, rejected)
    }

    pub fn group_chosen(&self, g: &RejectionGroup) -> &[usize] {
        &self.chosen[g.chosen.clone()]
    }
}
