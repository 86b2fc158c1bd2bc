//! Splitting a training set across edge devices.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

pub const AREAS: usize = 5;
pub const DEVICES_PER_AREA: usize = 5;
pub const LABELS_PER_AREA: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Every device gets an equal share of every label.
    #[default]
    Homogeneous,
    /// Five concentric areas of five devices; area `u` holds labels
    /// `u-1, ..., u+4 (mod 10)`.
    HeterogeneousConcentric,
}

impl std::str::FromStr for PartitionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homo" | "homogeneous" => Ok(Self::Homogeneous),
            "hetero" | "heterogeneous" | "heterogeneous_concentric" => Ok(Self::HeterogeneousConcentric),
            other => Err(Error::config(format!("unknown partition `{other}` (homo | hetero)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub devices: usize,
}

impl PartitionSpec {
    /// Labels held by device `k`.
    pub fn labels_of(&self, k: usize, classes: usize) -> Vec<usize> {
        match self.mode {
            PartitionMode::Homogeneous => (0..classes).collect(),
            PartitionMode::HeterogeneousConcentric => {
                let u = k / DEVICES_PER_AREA + 1;
                (0..LABELS_PER_AREA).map(|j| (u + j + classes - 1) % classes).collect()
            }
        }
    }

    fn validate(&self, classes: usize) -> Result<()> {
        if self.devices == 0 {
            return Err(Error::config("partition needs at least one device"));
        }
        if self.mode == PartitionMode::HeterogeneousConcentric
            && (self.devices != AREAS * DEVICES_PER_AREA || classes != 10)
        {
            return Err(Error::config(format!(
                "heterogeneous partition needs exactly {AREAS} areas × {DEVICES_PER_AREA} devices and 10 classes \
                 (got {} devices, {classes} classes)",
                self.devices
            )));
        }
        Ok(())
    }
}

/// Sample indices per device. Each label's samples are shuffled and dealt in
/// equal shares to the devices holding that label; remainders are dropped.
pub fn partition(spec: &PartitionSpec, labels: &[usize], classes: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    spec.validate(classes)?;
    let holders: Vec<Vec<usize>> = (0..classes)
        .map(|c| (0..spec.devices).filter(|&k| spec.labels_of(k, classes).contains(&c)).collect())
        .collect();
    let mut out = vec![Vec::new(); spec.devices];
    for c in 0..classes {
        let mut idx: Vec<usize> = labels.iter().enumerate().filter(|(_, &y)| y == c).map(|(i, _)| i).collect();
        idx.shuffle(&mut rng::stream(seed, Domain::Partition, &[c as u64]));
        let h = &holders[c];
        if h.is_empty() {
            continue;
        }
        let share = idx.len() / h.len();
        for (j, &k) in h.iter().enumerate() {
            out[k].extend_from_slice(&idx[j * share..(j + 1) * share]);
        }
    }
    if let Some(k) = out.iter().position(|p| p.is_empty()) {
        return Err(Error::config(format!("device {k} received no training samples")));
    }
    for p in &mut out {
        p.sort_unstable();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn labels(n: usize) -> Vec<usize> {
        (0..n).map(|i| (i * 7) % 10).collect()
    }

    #[test]
    fn homogeneous_gives_equal_label_shares() {
        let y = labels(1000);
        let spec = PartitionSpec {
            mode: PartitionMode::Homogeneous,
            devices: 25,
        };
        let parts = partition(&spec, &y, 10, 1).unwrap();
        for p in &parts {
            for c in 0..10 {
                assert_eq!(p.iter().filter(|&&i| y[i] == c).count(), 4);
            }
        }
        let all: BTreeSet<usize> = parts.iter().flatten().copied().collect();
        assert_eq!(all.len(), 1000);
    }

    #[test]
    fn concentric_areas_hold_six_labels() {
        let y = labels(3000);
        let spec = PartitionSpec {
            mode: PartitionMode::HeterogeneousConcentric,
            devices: 25,
        };
        assert_eq!(spec.labels_of(0, 10), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(spec.labels_of(24, 10), vec![4, 5, 6, 7, 8, 9]);
        let parts = partition(&spec, &y, 10, 2).unwrap();
        for (k, p) in parts.iter().enumerate() {
            let held: BTreeSet<usize> = p.iter().map(|&i| y[i]).collect();
            assert_eq!(held.len(), 6);
            assert_eq!(held, spec.labels_of(k, 10).into_iter().collect());
        }
        let mut seen = BTreeSet::new();
        for i in parts.iter().flatten() {
            assert!(seen.insert(*i), "sample {i} assigned twice");
        }
    }

    #[test]
    fn invalid_partitions_rejected() {
        let y = labels(100);
        let hetero = PartitionSpec {
            mode: PartitionMode::HeterogeneousConcentric,
            devices: 10,
        };
        assert!(partition(&hetero, &y, 10, 0).is_err());
        let starving = PartitionSpec {
            mode: PartitionMode::Homogeneous,
            devices: 200,
        };
        assert!(partition(&starving, &y, 10, 0).is_err());
        assert!("ring".parse::<PartitionMode>().is_err());
    }
}
