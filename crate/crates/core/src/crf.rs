//! Linear-chain CRF over the 13 BIO tags.

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

use crate::corpus::{BioTag, NUM_TAGS};
use crate::nn::logsumexp;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CrfError {
    #[error("expected {expected} tags, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("emission matrix has {0} columns, expected 13")]
    Width(usize),
}

/// Transition scores `transitions[[from, to]]` plus start and stop scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    pub transitions: Array2<f64>,
    pub start: Array1<f64>,
    pub stop: Array1<f64>,
}

crate::impl_parameters!(CrfParams {
    transitions,
    start,
    stop
});

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            transitions: Array2::zeros((NUM_TAGS, NUM_TAGS)),
            start: Array1::zeros(NUM_TAGS),
            stop: Array1::zeros(NUM_TAGS),
        }
    }
}

/// Whether `to` may follow `from` (`None` = sequence start) under BIO rules.
pub fn bio_allowed(from: Option<usize>, to: usize) -> bool {
    match BioTag::from_index(to) {
        Some(BioTag::Inside(l)) => from == Some(BioTag::Begin(l).index()) || from == Some(to),
        _ => true,
    }
}

fn check(e: ArrayView2<f64>) -> Result<(), CrfError> {
    if e.ncols() != NUM_TAGS {
        return Err(CrfError::Width(e.ncols()));
    }
    if e.nrows() == 0 {
        return Err(CrfError::EmptySequence);
    }
    Ok(())
}

/// Score of a tag-index path. Summed left to right as
/// `start + e₀ + T₀₁ + e₁ + … + stop`, the same order `viterbi` uses.
pub fn path_score_indices(
    e: ArrayView2<f64>,
    p: &CrfParams,
    tags: &[usize],
) -> Result<f64, CrfError> {
    if tags.len() != e.nrows() {
        return Err(CrfError::LengthMismatch {
            expected: e.nrows(),
            got: tags.len(),
        });
    }
    let Some(&first) = tags.first() else {
        return Ok(0.0);
    };
    let mut score = p.start[first] + e[[0, first]];
    for j in 1..tags.len() {
        score = score + p.transitions[[tags[j - 1], tags[j]]] + e[[j, tags[j]]];
    }
    Ok(score + p.stop[tags[tags.len() - 1]])
}

pub fn path_score(e: ArrayView2<f64>, p: &CrfParams, tags: &[BioTag]) -> Result<f64, CrfError> {
    let idx: Vec<usize> = tags.iter().map(|t| t.index()).collect();
    path_score_indices(e, p, &idx)
}

fn forward(e: ArrayView2<f64>, p: &CrfParams) -> Array2<f64> {
    let s = e.nrows();
    let mut alpha = Array2::zeros((s, NUM_TAGS));
    for y in 0..NUM_TAGS {
        alpha[[0, y]] = p.start[y] + e[[0, y]];
    }
    for j in 1..s {
        for y in 0..NUM_TAGS {
            let prev = (0..NUM_TAGS).map(|x| alpha[[j - 1, x]] + p.transitions[[x, y]]);
            alpha[[j, y]] = logsumexp(prev) + e[[j, y]];
        }
    }
    alpha
}

fn backward(e: ArrayView2<f64>, p: &CrfParams) -> Array2<f64> {
    let s = e.nrows();
    let mut beta = Array2::zeros((s, NUM_TAGS));
    for y in 0..NUM_TAGS {
        beta[[s - 1, y]] = p.stop[y];
    }
    for j in (0..s - 1).rev() {
        for x in 0..NUM_TAGS {
            let next =
                (0..NUM_TAGS).map(|y| p.transitions[[x, y]] + e[[j + 1, y]] + beta[[j + 1, y]]);
            beta[[j, x]] = logsumexp(next);
        }
    }
    beta
}

pub fn log_partition(e: ArrayView2<f64>, p: &CrfParams) -> Result<f64, CrfError> {
    check(e)?;
    let alpha = forward(e, p);
    let last = alpha.nrows() - 1;
    Ok(logsumexp(
        (0..NUM_TAGS).map(|y| alpha[[last, y]] + p.stop[y]),
    ))
}

/// Negative log-likelihood of `gold` with gradients for the emissions and
/// the transition parameters.
pub fn nll_and_grads(
    e: ArrayView2<f64>,
    p: &CrfParams,
    gold: &[usize],
) -> Result<(f64, Array2<f64>, CrfParams), CrfError> {
    check(e)?;
    let gold_score = path_score_indices(e, p, gold)?;
    let s = e.nrows();
    let alpha = forward(e, p);
    let beta = backward(e, p);
    let log_z = logsumexp((0..NUM_TAGS).map(|y| alpha[[s - 1, y]] + p.stop[y]));

    let mut d_e = Array2::zeros((s, NUM_TAGS));
    let mut grad = CrfParams::default();
    for j in 0..s {
        for y in 0..NUM_TAGS {
            d_e[[j, y]] = (alpha[[j, y]] + beta[[j, y]] - log_z).exp();
        }
    }
    for y in 0..NUM_TAGS {
        grad.start[y] = d_e[[0, y]];
        grad.stop[y] = d_e[[s - 1, y]];
    }
    for j in 1..s {
        for x in 0..NUM_TAGS {
            for y in 0..NUM_TAGS {
                let lp =
                    alpha[[j - 1, x]] + p.transitions[[x, y]] + e[[j, y]] + beta[[j, y]] - log_z;
                grad.transitions[[x, y]] += lp.exp();
            }
        }
    }
    for (j, &y) in gold.iter().enumerate() {
        d_e[[j, y]] -= 1.0;
        if j > 0 {
            grad.transitions[[gold[j - 1], y]] -= 1.0;
        }
    }
    grad.start[gold[0]] -= 1.0;
    grad.stop[gold[s - 1]] -= 1.0;
    Ok((log_z - gold_score, d_e, grad))
}

/// Best tag-index path and its score. Ties prefer the lower tag index, both
/// at each backpointer and for the final tag.
pub fn viterbi_indices(
    e: ArrayView2<f64>,
    p: &CrfParams,
    constrain_bio: bool,
) -> Result<(Vec<usize>, f64), CrfError> {
    check(e)?;
    let s = e.nrows();
    let mut delta = Array2::from_elem((s, NUM_TAGS), f64::NEG_INFINITY);
    let mut back = Array2::<usize>::zeros((s, NUM_TAGS));
    for y in 0..NUM_TAGS {
        if !constrain_bio || bio_allowed(None, y) {
            delta[[0, y]] = p.start[y] + e[[0, y]];
        }
    }
    for j in 1..s {
        for y in 0..NUM_TAGS {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for x in 0..NUM_TAGS {
                if constrain_bio && !bio_allowed(Some(x), y) {
                    continue;
                }
                let v = delta[[j - 1, x]] + p.transitions[[x, y]];
                if v > best {
                    best = v;
                    arg = x;
                }
            }
            delta[[j, y]] = best + e[[j, y]];
            back[[j, y]] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for y in 0..NUM_TAGS {
        let v = delta[[s - 1, y]] + p.stop[y];
        if v > best {
            best = v;
            last = y;
        }
    }
    let mut path = vec![last; s];
    for j in (1..s).rev() {
        path[j - 1] = back[[j, path[j]]];
    }
    Ok((path, best))
}

pub fn viterbi(
    e: ArrayView2<f64>,
    p: &CrfParams,
    constrain_bio: bool,
) -> Result<Vec<BioTag>, CrfError> {
    let (path, _) = viterbi_indices(e, p, constrain_bio)?;
    Ok(path
        .into_iter()
        .map(|i| BioTag::from_index(i).expect("tag index"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SegmentLabel;
    use crate::nn::{flatten, set_from_flat};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_instance(s: usize, seed: u64) -> (Array2<f64>, CrfParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut n = || -> f64 { StandardNormal.sample(&mut rng) };
        let e = Array2::from_shape_fn((s, NUM_TAGS), |_| n());
        let p = CrfParams {
            transitions: Array2::from_shape_fn((NUM_TAGS, NUM_TAGS), |_| n()),
            start: Array1::from_shape_fn(NUM_TAGS, |_| n()),
            stop: Array1::from_shape_fn(NUM_TAGS, |_| n()),
        };
        (e, p)
    }

    fn all_paths(s: usize) -> impl Iterator<Item = Vec<usize>> {
        (0..NUM_TAGS.pow(s as u32)).map(move |mut code| {
            let mut path = vec![0; s];
            for slot in path.iter_mut().rev() {
                *slot = code % NUM_TAGS;
                code /= NUM_TAGS;
            }
            path
        })
    }

    fn valid(path: &[usize]) -> bool {
        path.iter()
            .enumerate()
            .all(|(j, &y)| bio_allowed(if j == 0 { None } else { Some(path[j - 1]) }, y))
    }

    #[test]
    fn path_score_small_cases() {
        let p = CrfParams::default();
        let e = Array2::from_shape_fn((1, NUM_TAGS), |(_, y)| y as f64 * 0.5);
        assert_eq!(path_score_indices(e.view(), &p, &[4]).unwrap(), 2.0);
        let z = Array2::zeros((3, NUM_TAGS));
        assert_eq!(path_score_indices(z.view(), &p, &[1, 2, 0]).unwrap(), 0.0);
        assert_eq!(
            path_score_indices(z.view(), &p, &[1, 2]),
            Err(CrfError::LengthMismatch {
                expected: 3,
                got: 2
            })
        );
    }

    #[test]
    fn path_score_matches_loop() {
        let (e, p) = random_instance(5, 7);
        let tags = [0, 5, 6, 6, 1];
        let mut total = 0.0;
        for (j, &t) in tags.iter().enumerate() {
            total += e[[j, t]];
        }
        for w in tags.windows(2) {
            total += p.transitions[[w[0], w[1]]];
        }
        total += p.start[0] + p.stop[1];
        assert!((path_score_indices(e.view(), &p, &tags).unwrap() - total).abs() < 1e-12);
    }

    #[test]
    fn log_partition_single_token() {
        let p = CrfParams::default();
        let z = Array2::zeros((1, NUM_TAGS));
        assert!((log_partition(z.view(), &p).unwrap() - 13f64.ln()).abs() < 1e-12);
        let e = Array2::from_shape_fn((1, NUM_TAGS), |(_, y)| (y as f64).sin());
        let want = logsumexp(e.row(0).iter().copied());
        assert!((log_partition(e.view(), &p).unwrap() - want).abs() < 1e-12);
        let empty = Array2::zeros((0, NUM_TAGS));
        assert_eq!(
            log_partition(empty.view(), &p),
            Err(CrfError::EmptySequence)
        );
    }

    #[test]
    fn probabilities_sum_to_one() {
        for s in 1..=4 {
            let (e, p) = random_instance(s, s as u64);
            let z = log_partition(e.view(), &p).unwrap();
            let total: f64 = all_paths(s)
                .map(|path| (path_score_indices(e.view(), &p, &path).unwrap() - z).exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "s={s}: {total}");
        }
    }

    #[test]
    fn brute_force_agreement() {
        for seed in 0..30 {
            let s = 1 + (seed as usize % 4);
            let (e, p) = random_instance(s, 100 + seed);
            for constrain in [false, true] {
                let mut best = f64::NEG_INFINITY;
                let mut arg = vec![];
                for path in all_paths(s).filter(|q| !constrain || valid(q)) {
                    let v = path_score_indices(e.view(), &p, &path).unwrap();
                    if v > best {
                        best = v;
                        arg = path;
                    }
                }
                let (path, score) = viterbi_indices(e.view(), &p, constrain).unwrap();
                assert_eq!(path, arg);
                assert_eq!(score, best);
            }
            let scores: Vec<f64> = all_paths(s)
                .map(|q| path_score_indices(e.view(), &p, &q).unwrap())
                .collect();
            let brute = logsumexp(scores.iter().copied());
            let z = log_partition(e.view(), &p).unwrap();
            assert!((z - brute).abs() <= 1e-9 * brute.abs().max(1.0));
        }
    }

    #[test]
    fn viterbi_examples() {
        let p = CrfParams::default();
        let es = BioTag::Begin(SegmentLabel::ES);
        let mut e = Array2::zeros((2, NUM_TAGS));
        e[[0, es.index()]] = 10.0;
        e[[1, es.index() + 1]] = 10.0;
        assert_eq!(
            viterbi(e.view(), &p, true).unwrap(),
            vec![es, BioTag::Inside(SegmentLabel::ES)]
        );
        let z = Array2::zeros((4, NUM_TAGS));
        assert_eq!(viterbi(z.view(), &p, true).unwrap(), vec![BioTag::O; 4]);
    }

    #[test]
    fn constraint_blocks_stray_inside() {
        let p = CrfParams::default();
        let mut e = Array2::zeros((2, NUM_TAGS));
        e[[0, 2]] = 5.0;
        e[[1, 4]] = 5.0;
        let free = viterbi_indices(e.view(), &p, false).unwrap().0;
        assert_eq!(free, vec![2, 4]);
        let fixed = viterbi_indices(e.view(), &p, true).unwrap().0;
        assert!(valid(&fixed));
    }

    #[test]
    fn nll_closed_form_single_token() {
        let p = CrfParams::default();
        let z = Array2::zeros((1, NUM_TAGS));
        let (loss, d_e, _) = nll_and_grads(z.view(), &p, &[3]).unwrap();
        assert!((loss - 13f64.ln()).abs() < 1e-12);
        assert!((d_e[[0, 3]] - (1.0 / 13.0 - 1.0)).abs() < 1e-12);
        assert!((d_e[[0, 0]] - 1.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn nll_decreases_as_gold_dominates() {
        let (mut e, p) = random_instance(3, 9);
        let gold = [5, 6, 0];
        let mut last = f64::INFINITY;
        for step in 0..12 {
            let (loss, _, _) = nll_and_grads(e.view(), &p, &gold).unwrap();
            assert!(loss >= 0.0 && (loss < last || loss == 0.0));
            last = loss;
            for (j, &y) in gold.iter().enumerate() {
                e[[j, y]] += 2.0 + step as f64;
            }
        }
        assert!(last < 1e-9);
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        for s in 1..=5 {
            let (e, p) = random_instance(s, 40 + s as u64);
            let gold: Vec<usize> = (0..s).map(|j| (j * 5 + s) % NUM_TAGS).collect();
            let (_, d_e, grad) = nll_and_grads(e.view(), &p, &gold).unwrap();
            let loss =
                |e: &Array2<f64>, p: &CrfParams| nll_and_grads(e.view(), p, &gold).unwrap().0;
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
            let h = 1e-3;
            for ((i, j), g) in d_e.indexed_iter() {
                let mut up = e.clone();
                up[[i, j]] += h;
                let mut down = e.clone();
                down[[i, j]] -= h;
                let fd = (loss(&up, &p) - loss(&down, &p)) / (2.0 * h);
                assert!(rel(fd, *g) < 1e-4, "emission {i},{j}: {fd} vs {g}");
            }
            let flat = flatten(&p);
            let gflat = flatten(&grad);
            for i in 0..flat.len() {
                let mut q = p.clone();
                let mut f = flat.clone();
                f[i] += h;
                set_from_flat(&mut q, &f);
                let up = loss(&e, &q);
                f[i] -= 2.0 * h;
                set_from_flat(&mut q, &f);
                let down = loss(&e, &q);
                assert!(rel((up - down) / (2.0 * h), gflat[i]) < 1e-4, "param {i}");
            }
        }
    }

    proptest! {
        #[test]
        fn constant_shift(seed in 0u64..500, s in 1usize..8, c in -5.0f64..5.0) {
            let (e, p) = random_instance(s, seed);
            let shifted = &e + c;
            let z0 = log_partition(e.view(), &p).unwrap();
            let z1 = log_partition(shifted.view(), &p).unwrap();
            prop_assert!((z1 - z0 - s as f64 * c).abs() < 1e-9 * (1.0 + z0.abs()));
            prop_assert_eq!(
                viterbi_indices(e.view(), &p, true).unwrap().0,
                viterbi_indices(shifted.view(), &p, true).unwrap().0
            );
        }

        #[test]
        fn constrained_output_is_well_formed(seed in 0u64..2000, s in 1usize..30) {
            let (e, p) = random_instance(s, seed);
            let path = viterbi_indices(e.view(), &p, true).unwrap().0;
            prop_assert!(valid(&path));
        }
    }
}
