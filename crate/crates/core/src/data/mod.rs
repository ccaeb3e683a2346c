//! Dataset ingestion, splitting and the synthetic biased-image generator.
//!
//! A dataset directory holds an attribute table named [`ATTR_FILE`] plus one
//! PGM/PPM image per row, addressed by the row's file name.

mod attrs;
mod image;
mod split;
mod synth;

use std::fs;
use std::path::Path;

pub use attrs::{parse_attributes, AttributeTable, SampleRecord};
pub use image::Image;
pub use split::{split_groups, train_val_split, GroupAssignment};
pub use synth::{synth_biased_dataset, SENSITIVE_ATTR, TARGET_ATTR};

use crate::error::{Error, Result};
use crate::masking::PartIndex;

pub const ATTR_FILE: &str = "list_attr.txt";

/// A labelled image. The sensitive label `s` stays with the dataset; forward
/// passes take only the image.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub y: u8,
    pub s: u8,
}

/// What the trainer sees of a training sample: the sensitive label has been
/// replaced by the part it was routed to.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub image: Image,
    pub y: u8,
    pub part: PartIndex,
}

/// Validation / test view without any sensitive information.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub y: u8,
}

impl Sample {
    pub fn unlabeled_view(&self) -> LabeledImage {
        LabeledImage {
            image: self.image.clone(),
            y: self.y,
        }
    }
}

/// Pairs samples with their parts, dropping the sensitive label.
pub fn route(samples: &[Sample], assignment: &GroupAssignment) -> Result<Vec<TrainSample>> {
    if samples.len() != assignment.parts.len() {
        return Err(Error::contract(format!(
            "{} samples but {} part assignments",
            samples.len(),
            assignment.parts.len()
        )));
    }
    Ok(samples
        .iter()
        .zip(&assignment.parts)
        .map(|(s, &part)| TrainSample {
            image: s.image.clone(),
            y: s.y,
            part,
        })
        .collect())
}

pub fn load_dataset(dir: impl AsRef<Path>, target: &str, sensitive: &str) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    let records = parse_attributes(dir.join(ATTR_FILE), target, sensitive)?;
    records
        .into_iter()
        .map(|r| {
            Ok(Sample {
                image: Image::read(dir.join(&r.id))?,
                id: r.id,
                y: r.y,
                s: r.s,
            })
        })
        .collect()
}

/// Writes images plus an attribute table with columns `target_attr` and `sensitive_attr`.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    samples: &[Sample],
    target_attr: &str,
    sensitive_attr: &str,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sign = |b: u8| if b == 1 { 1i8 } else { -1 };
    let table = AttributeTable {
        names: vec![target_attr.to_owned(), sensitive_attr.to_owned()],
        rows: samples
            .iter()
            .map(|s| (s.id.clone(), vec![sign(s.y), sign(s.s)]))
            .collect(),
    };
    for s in samples {
        s.image.write(dir.join(&s.id))?;
    }
    let path = dir.join(ATTR_FILE);
    fs::write(&path, table.render()).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_dir_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let samples = synth_biased_dataset(12, 0.8, 16, 4).unwrap();
        write_dataset(tmp.path(), &samples, TARGET_ATTR, SENSITIVE_ATTR).unwrap();
        let back = load_dataset(tmp.path(), TARGET_ATTR, SENSITIVE_ATTR).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn routing_drops_sensitive_label() {
        let samples = synth_biased_dataset(20, 0.5, 16, 1).unwrap();
        let s: Vec<u8> = samples.iter().map(|x| x.s).collect();
        let a = split_groups(&s, 4, 2).unwrap();
        let routed = route(&samples, &a).unwrap();
        for (r, x) in routed.iter().zip(&samples) {
            assert_eq!(a.group_of(r.part), x.s);
            assert_eq!(r.image, x.image);
        }
    }
}
