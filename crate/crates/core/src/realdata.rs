//! IDX image files and binary labeling rules.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::invalid;
use crate::generator::Dataset;
use crate::rng::{StreamKey, StreamTag};
use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    /// `M × (rows·cols)`, pixels in `[0, 1]`.
    pub images: Array2<f64>,
    pub raw_labels: Vec<u8>,
    pub class_count: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.raw_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_labels.is_empty()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        container::save_matrix(&dir.join("images.bin"), &self.images)?;
        container::save_bytes(&dir.join("raw_labels.bin"), &self.raw_labels)?;
        container::write_json(
            &dir.join("imageset.json"),
            &serde_json::json!({"rows": self.rows, "cols": self.cols, "class_count": self.class_count}),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: serde_json::Value = container::read_json(&dir.join("imageset.json"))?;
        let field = |k: &str| {
            meta.get(k)
                .and_then(serde_json::Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| invalid(format!("imageset.json lacks {k}")))
        };
        Ok(Self {
            images: container::load_matrix(&dir.join("images.bin"))?,
            raw_labels: container::load_bytes(&dir.join("raw_labels.bin"))?,
            class_count: field("class_count")?,
            rows: field("rows")?,
            cols: field("cols")?,
        })
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn need(&self, n: u64) -> Result<()> {
        if (self.bytes.len() as u64) < n {
            return Err(Error::IdxTruncated {
                path: self.path.to_path_buf(),
                needed: n,
                found: self.bytes.len() as u64,
            });
        }
        Ok(())
    }

    fn u32_at(&self, offset: usize) -> Result<u32> {
        self.need(offset as u64 + 4)?;
        let mut b = [0u8; 4];
        b.copy_from_slice(&self.bytes[offset..offset + 4]);
        Ok(u32::from_be_bytes(b))
    }

    fn magic(&self, expected: u32) -> Result<()> {
        let found = self.u32_at(0)?;
        if found != expected {
            return Err(Error::IdxMagic {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

/// Parses an IDX image file and its label file; pixels are scaled by `1/255`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ImageSet> {
    let img_bytes = std::fs::read(images_path)?;
    let lab_bytes = std::fs::read(labels_path)?;
    let img = Reader {
        path: images_path,
        bytes: &img_bytes,
    };
    img.magic(IMAGE_MAGIC)?;
    let n = img.u32_at(4)? as usize;
    let rows = img.u32_at(8)? as usize;
    let cols = img.u32_at(12)? as usize;
    let d = rows * cols;
    img.need(16 + (n as u64) * (d as u64))?;

    let lab = Reader {
        path: labels_path,
        bytes: &lab_bytes,
    };
    lab.magic(LABEL_MAGIC)?;
    let n_labels = lab.u32_at(4)? as usize;
    lab.need(8 + n_labels as u64)?;
    if n_labels != n {
        return Err(Error::IdxCountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    let pixels = &img_bytes[16..16 + n * d];
    let images = Array2::from_shape_fn((n, d), |(i, j)| pixels[i * d + j] as f64 / 255.0);
    let raw_labels = lab_bytes[8..8 + n].to_vec();
    let class_count = raw_labels.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    Ok(ImageSet {
        images,
        raw_labels,
        class_count,
        rows,
        cols,
    })
}

/// Encodes images (values in `[0, 255]`) and labels as an IDX pair.
pub fn encode_idx(pixels: &[u8], n: usize, rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    for v in [LABEL_MAGIC, labels.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}

/// Open interval on the 0–255 brightness scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    fn contains(&self, v: f64) -> bool {
        v > self.lo && v < self.hi
    }
}

/// Maps raw labels (or brightness) to `±1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LabelRule {
    /// `positive` → `+1`, `negative` → `−1`, other classes dropped.
    ClassGroups { positive: Vec<u8>, negative: Vec<u8> },
    /// Even classes → `+1`.
    EvenOdd,
    /// Classes `≥ k` → `+1`.
    ThresholdGe(u8),
    /// Mean brightness inside any interval → `+1`.
    Luminosity(Vec<Interval>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleReport {
    pub rows_in: usize,
    pub rows_kept: usize,
    pub rows_dropped: usize,
}

impl LabelRule {
    pub fn validate(&self, class_count: usize) -> Result<()> {
        match self {
            LabelRule::ClassGroups { positive, negative } => {
                let a: BTreeSet<_> = positive.iter().collect();
                let b: BTreeSet<_> = negative.iter().collect();
                if a.is_empty() || b.is_empty() {
                    return Err(invalid("both class groups must be non-empty"));
                }
                if let Some(c) = a.intersection(&b).next() {
                    return Err(invalid(format!("class {c} appears in both groups")));
                }
                if let Some(c) = a.union(&b).find(|&&&c| c as usize >= class_count) {
                    return Err(invalid(format!("class {c} exceeds the {class_count} classes present")));
                }
            }
            LabelRule::ThresholdGe(k) if *k as usize >= class_count => {
                return Err(invalid(format!(
                    "threshold {k} leaves no positive class among {class_count}"
                )));
            }
            LabelRule::Luminosity(bounds) if bounds.is_empty() || bounds.iter().any(|b| !(b.lo < b.hi)) => {
                return Err(invalid("luminosity bounds must be non-empty intervals"));
            }
            _ => {}
        }
        Ok(())
    }

    fn label(&self, class: u8, brightness: f64) -> Option<f64> {
        let pm = |b: bool| if b { 1.0 } else { -1.0 };
        match self {
            LabelRule::ClassGroups { positive, negative } => {
                if positive.contains(&class) {
                    Some(1.0)
                } else if negative.contains(&class) {
                    Some(-1.0)
                } else {
                    None
                }
            }
            LabelRule::EvenOdd => Some(pm(class.is_multiple_of(2))),
            LabelRule::ThresholdGe(k) => Some(pm(class >= *k)),
            LabelRule::Luminosity(bounds) => Some(pm(bounds.iter().any(|b| b.contains(brightness)))),
        }
    }
}

/// Textual forms: `even-odd`, `ge:K`, `groups:0,2/1,3`, `luminosity:-inf..20,35..59`.
impl FromStr for LabelRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognized label rule `{s}`"));
        let classes = |list: &str| -> Result<Vec<u8>> {
            list.split(',')
                .map(|c| c.trim().parse::<u8>().map_err(|_| bad()))
                .collect()
        };
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "even-odd" if arg.is_empty() => Ok(LabelRule::EvenOdd),
            "ge" => Ok(LabelRule::ThresholdGe(arg.parse().map_err(|_| bad())?)),
            "groups" => {
                let (a, b) = arg.split_once('/').ok_or_else(bad)?;
                Ok(LabelRule::ClassGroups {
                    positive: classes(a)?,
                    negative: classes(b)?,
                })
            }
            "luminosity" => arg
                .split(',')
                .map(|iv| {
                    let (lo, hi) = iv.split_once("..").ok_or_else(bad)?;
                    Ok(Interval {
                        lo: lo.trim().parse().map_err(|_| bad())?,
                        hi: hi.trim().parse().map_err(|_| bad())?,
                    })
                })
                .collect::<Result<_>>()
                .map(LabelRule::Luminosity),
            _ => Err(bad()),
        }
    }
}

/// Applies the rule, dropping rows it does not label.
pub fn apply_rule(set: &ImageSet, rule: &LabelRule) -> Result<(Dataset, RuleReport)> {
    rule.validate(set.class_count)?;
    let mut keep = Vec::new();
    let mut labels = Vec::new();
    for (i, (&class, row)) in set.raw_labels.iter().zip(set.images.axis_iter(Axis(0))).enumerate() {
        let brightness = row.mean().unwrap_or(0.0) * 255.0;
        if let Some(y) = rule.label(class, brightness) {
            keep.push(i);
            labels.push(y);
        }
    }
    let report = RuleReport {
        rows_in: set.len(),
        rows_kept: keep.len(),
        rows_dropped: set.len() - keep.len(),
    };
    if keep.is_empty() {
        return Err(Error::EmptyAfterFilter {
            dropped: report.rows_dropped,
        });
    }
    let data = Dataset {
        inputs: set.images.select(Axis(0), &keep),
        labels: Array1::from(labels),
        latent: Array2::zeros((keep.len(), 0)),
    };
    Ok((data, report))
}

/// `m` rows drawn without replacement from the `Subsample` stream of `seed`.
pub fn subsample(data: &Dataset, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 || m > data.len() {
        return Err(invalid(format!("cannot draw {m} rows from {}", data.len())));
    }
    let mut rng = StreamKey::new(seed, StreamTag::Subsample, m as u64).rng();
    let mut idx = rand::seq::index::sample(&mut rng, data.len(), m).into_vec();
    idx.sort_unstable();
    Ok(data.select(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, img: &[u8], lab: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let (pi, pl) = (dir.join("img.idx"), dir.join("lab.idx"));
        std::fs::write(&pi, img).unwrap();
        std::fs::write(&pl, lab).unwrap();
        (pi, pl)
    }

    #[test]
    fn two_image_fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = [0u8, 255, 51, 102, 10, 20, 30, 40];
        let (img, lab) = encode_idx(&pixels, 2, 2, 2, &[3, 8]);
        let (pi, pl) = write_pair(dir.path(), &img, &lab);
        let set = load_idx(&pi, &pl).unwrap();
        assert_eq!(set.images.dim(), (2, 4));
        assert_eq!(set.images[[0, 1]], 1.0);
        assert_eq!(set.images[[0, 2]], 0.2);
        assert_eq!(set.images[[1, 3]], 40.0 / 255.0);
        assert_eq!(set.raw_labels, vec![3, 8]);
        assert_eq!(set.class_count, 9);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = encode_idx(&[1, 2, 3, 4], 1, 2, 2, &[0]);
        let (pi, pl) = write_pair(dir.path(), &[], &lab);
        assert!(matches!(
            load_idx(&pi, &pl),
            Err(Error::IdxTruncated {
                needed: 4,
                found: 0,
                ..
            })
        ));
        let (pi, pl) = write_pair(dir.path(), &lab, &lab);
        assert!(matches!(load_idx(&pi, &pl), Err(Error::IdxMagic { .. })));
        let (pi, pl) = write_pair(dir.path(), &img[..18], &lab);
        assert!(matches!(load_idx(&pi, &pl), Err(Error::IdxTruncated { .. })));
        let (_, lab2) = encode_idx(&[], 0, 2, 2, &[0, 1]);
        let (pi, pl) = write_pair(dir.path(), &img, &lab2);
        assert!(matches!(
            load_idx(&pi, &pl),
            Err(Error::IdxCountMismatch { images: 1, labels: 2 })
        ));
    }

    fn digits() -> ImageSet {
        let n = 10;
        ImageSet {
            images: Array2::from_shape_fn((n, 4), |(i, _)| i as f64 / 10.0),
            raw_labels: (0..n as u8).collect(),
            class_count: 10,
            rows: 2,
            cols: 2,
        }
    }

    #[test]
    fn parity_and_threshold() {
        let (data, report) = apply_rule(&digits(), &LabelRule::EvenOdd).unwrap();
        let expected: Vec<f64> = (0..10).map(|c| if c % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(data.labels.to_vec(), expected);
        assert_eq!(report.rows_dropped, 0);
        let (data, _) = apply_rule(&digits(), &LabelRule::ThresholdGe(5)).unwrap();
        assert_eq!(data.labels.iter().filter(|&&y| y > 0.0).count(), 5);
    }

    #[test]
    fn letter_groups_drop_the_rest() {
        // A B E L versus C H J S, letters indexed from A = 0.
        let rule = LabelRule::ClassGroups {
            positive: vec![0, 1, 4, 11],
            negative: vec![2, 7, 9, 18],
        };
        let set = ImageSet {
            images: Array2::zeros((20, 1)),
            raw_labels: (0..20).collect(),
            class_count: 20,
            rows: 1,
            cols: 1,
        };
        let (data, report) = apply_rule(&set, &rule).unwrap();
        assert_eq!(report.rows_in, report.rows_kept + report.rows_dropped);
        assert_eq!(report.rows_kept, 8);
        assert_eq!(data.labels.sum(), 0.0);
    }

    #[test]
    fn luminosity_uses_raw_scale() {
        let rule: LabelRule = "luminosity:-inf..20,35..59".parse().unwrap();
        let set = ImageSet {
            images: Array2::from_shape_vec((4, 1), vec![10.0 / 255.0, 30.0 / 255.0, 40.0 / 255.0, 200.0 / 255.0])
                .unwrap(),
            raw_labels: vec![0; 4],
            class_count: 1,
            rows: 1,
            cols: 1,
        };
        let (data, _) = apply_rule(&set, &rule).unwrap();
        assert_eq!(data.labels.to_vec(), vec![1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn invalid_rules() {
        let overlap = LabelRule::ClassGroups {
            positive: vec![1, 2],
            negative: vec![2, 3],
        };
        assert!(apply_rule(&digits(), &overlap).is_err());
        let none = LabelRule::ClassGroups {
            positive: vec![1],
            negative: vec![3],
        };
        let set = ImageSet {
            raw_labels: vec![0; 10],
            ..digits()
        };
        assert!(matches!(
            apply_rule(&set, &none),
            Err(Error::EmptyAfterFilter { dropped: 10 })
        ));
        assert!("bogus".parse::<LabelRule>().is_err());
        assert_eq!(
            "groups:0,2/1".parse::<LabelRule>().unwrap(),
            LabelRule::ClassGroups {
                positive: vec![0, 2],
                negative: vec![1]
            }
        );
    }

    #[test]
    fn container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = digits();
        set.save(dir.path()).unwrap();
        assert_eq!(ImageSet::load(dir.path()).unwrap(), set);
    }

    #[test]
    fn subsample_without_replacement() {
        let (data, _) = apply_rule(&digits(), &LabelRule::EvenOdd).unwrap();
        let sub = subsample(&data, 6, 3).unwrap();
        assert_eq!(sub.len(), 6);
        assert_eq!(sub, subsample(&data, 6, 3).unwrap());
        let mut rows: Vec<u64> = sub.inputs.column(0).iter().map(|v| v.to_bits()).collect();
        rows.dedup();
        assert_eq!(rows.len(), 6);
        assert!(subsample(&data, 11, 3).is_err());
    }
}
