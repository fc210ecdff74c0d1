use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedImage, DatasetError, Split};

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, DatasetError> {
        let all = [train, val, test];
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(DatasetError::Config(format!("split ratios must be positive, got {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Config(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(Self { train, val, test })
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.2,
            test: 0.1,
        }
    }
}

/// Largest-remainder apportionment of `n` images; remainder ties go to the
/// earlier split.
pub fn split_sizes(n: usize, ratios: SplitRatios) -> [usize; 3] {
    let quotas = [ratios.train, ratios.val, ratios.test].map(|r| r * n as f64);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Assigns every image to exactly one split. Deterministic for a given seed and
/// input order.
pub fn split_dataset(
    dataset: &[AnnotatedImage],
    ratios: SplitRatios,
    seed: u64,
) -> Result<Vec<AnnotatedImage>, DatasetError> {
    let ratios = SplitRatios::new(ratios.train, ratios.val, ratios.test)?;
    let [n_train, n_val, _] = split_sizes(dataset.len(), ratios);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = dataset.to_vec();
    for (rank, &idx) in order.iter().enumerate() {
        out[idx].split = if rank < n_train {
            Split::Training
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Testing
        };
    }
    Ok(out)
}
