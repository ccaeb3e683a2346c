//! Train/validation split and the assignment of training samples to parts.
//!
//! Parts `1..=G/2` hold sensitive group 0 and parts `G/2+1..=G` hold group 1.
//! Within a group the samples are shuffled and dealt round-robin, so part
//! sizes differ by at most one.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::masking::{check_groups, PartIndex};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupAssignment {
    pub groups: usize,
    pub seed: u64,
    /// Part of each input sample, aligned with the input order.
    pub parts: Vec<PartIndex>,
}

impl GroupAssignment {
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.groups];
        for p in &self.parts {
            c[p.get() - 1] += 1;
        }
        c
    }

    /// Sensitive group that owns part `g`.
    pub fn group_of(&self, g: PartIndex) -> u8 {
        u8::from(g.get() > self.groups / 2)
    }

    /// `key=value` lines: header fields, then one `part.<id>=<g>` per sample.
    pub fn render(&self, ids: &[String]) -> String {
        let mut out = format!("groups={}\nseed={}\n", self.groups, self.seed);
        for (i, c) in self.counts().iter().enumerate() {
            out.push_str(&format!("count.{}={c}\n", i + 1));
        }
        for (id, p) in ids.iter().zip(&self.parts) {
            out.push_str(&format!("part.{id}={p}\n"));
        }
        out
    }

    pub fn by_part(&self) -> BTreeMap<PartIndex, Vec<usize>> {
        let mut m: BTreeMap<PartIndex, Vec<usize>> = BTreeMap::new();
        for (i, &p) in self.parts.iter().enumerate() {
            m.entry(p).or_default().push(i);
        }
        m
    }
}

/// Assigns each sample, given by its sensitive label, to a part.
pub fn split_groups(sensitive: &[u8], groups: usize, seed: u64) -> Result<GroupAssignment> {
    check_groups(groups)?;
    let half = groups / 2;
    let mut rng = crate::rng::substream(seed, "split");
    let mut parts = vec![None; sensitive.len()];
    for s in [0u8, 1] {
        let mut members: Vec<usize> = (0..sensitive.len()).filter(|&i| sensitive[i] == s).collect();
        if members.len() < half {
            return Err(Error::config(format!(
                "sensitive group {s} has {} samples, needs at least {half} for {groups} parts",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let base = usize::from(s) * half;
        for (k, &i) in members.iter().enumerate() {
            parts[i] = Some(PartIndex::new(base + k % half + 1, groups)?);
        }
    }
    let parts = parts
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::contract(format!("sample {i}: sensitive label is not 0/1"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupAssignment {
        groups,
        seed,
        parts,
    })
}

/// Seeded shuffle then prefix split: `ceil(n·ratio)` train items, the rest validation.
pub fn train_val_split<T: Clone>(items: &[T], ratio: f64, rng: &mut Rng) -> Result<(Vec<T>, Vec<T>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    let n_train = (items.len() as f64 * ratio).ceil() as usize;
    let (a, b) = order.split_at(n_train.min(items.len()));
    Ok((
        a.iter().map(|&i| items[i].clone()).collect(),
        b.iter().map(|&i| items[i].clone()).collect(),
    ))
}
