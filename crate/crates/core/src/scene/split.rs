use rand::seq::SliceRandom;

use super::generate::SceneSample;
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.70, 0.20, 0.10);

/// Disjoint train/val/test partition. Val and test are always fully labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SceneSample>,
    pub val: Vec<SceneSample>,
    pub test: Vec<SceneSample>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Partition sizes by largest remainder; ties go to the earlier partition.
pub fn partition_sizes(n: usize, fractions: (f64, f64, f64)) -> [usize; 3] {
    let f = [fractions.0, fractions.1, fractions.2];
    let exact: Vec<f64> = f.iter().map(|x| x * n as f64).collect();
    let mut sizes: [usize; 3] = std::array::from_fn(|i| exact[i].floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut rest = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    sizes
}

/// Shuffles under `seed` and partitions by `fractions` (train, val, test).
/// Each partition keeps ascending sample order.
pub fn split_dataset(samples: Vec<SceneSample>, fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|x| !(0.0..=1.0).contains(x)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    if samples.len() < 10 {
        return Err(Error::DegenerateSplit(samples.len()));
    }
    let sizes = partition_sizes(samples.len(), fractions);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::TAG_SPLIT]));

    let mut assignment = vec![0u8; samples.len()];
    for (pos, &idx) in order.iter().enumerate() {
        assignment[idx] = if pos < sizes[0] {
            0
        } else if pos < sizes[0] + sizes[1] {
            1
        } else {
            2
        };
    }
    let mut split = DatasetSplit {
        train: Vec::with_capacity(sizes[0]),
        val: Vec::with_capacity(sizes[1]),
        test: Vec::with_capacity(sizes[2]),
    };
    for (mut s, part) in samples.into_iter().zip(assignment) {
        match part {
            0 => split.train.push(s),
            1 => {
                s.set_fully_labeled();
                split.val.push(s)
            }
            _ => {
                s.set_fully_labeled();
                split.test.push(s)
            }
        }
    }
    Ok(split)
}
