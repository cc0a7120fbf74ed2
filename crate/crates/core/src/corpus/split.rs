use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedDocument, CorpusError};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<AnnotatedDocument>,
    pub val: Vec<AnnotatedDocument>,
    pub test: Vec<AnnotatedDocument>,
}

/// Shuffles with a seeded generator and cuts into train/val/test.
///
/// Train and val sizes are `floor(n * ratio)`; test receives the rest, which
/// gives 1053/131/133 for 1317 documents at 80:10:10.
pub fn split_corpus(
    docs: &[AnnotatedDocument],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Split, CorpusError> {
    let (tr, va, te) = ratios;
    let valid = [tr, va, te].iter().all(|r| r.is_finite() && *r > 0.0)
        && ((tr + va + te) - 1.0).abs() < 1e-9;
    if !valid {
        return Err(CorpusError::BadRatios(ratios));
    }
    let n = docs.len();
    let n_train = floor_share(n, tr);
    let n_val = floor_share(n, va).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let pick = |idx: &[usize]| idx.iter().map(|&i| docs[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}

fn floor_share(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio) + 1e-9).floor() as usize
}
