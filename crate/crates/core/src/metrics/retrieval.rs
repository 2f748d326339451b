use autograd::ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub const POOL_SIZE: usize = 32;

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_pairs(text: &Array2<f64>, motion: &Array2<f64>) -> Result<()> {
    if text.dim() != motion.dim() {
        return Err(Error::Input(format!(
            "text features {:?} and motion features {:?} are not paired",
            text.dim(),
            motion.dim()
        )));
    }
    Ok(())
}

/// Rank (1-based) of `truth` among `candidates` by distance to `query`:
/// one plus the number of candidates strictly closer than the truth.
pub fn rank_of(query: ArrayView1<f64>, candidates: &[ArrayView1<f64>], truth: usize) -> usize {
    let d_true = dist(query, candidates[truth]);
    1 + candidates
        .iter()
        .enumerate()
        .filter(|&(j, c)| j != truth && dist(query, *c) < d_true)
        .count()
}

/// Fraction of motions whose own caption ranks within the top `k` of its
/// pool, for each `k`. Items are shuffled into pools of 32; leftovers that
/// do not fill a pool are dropped.
pub fn r_precision<R: Rng + ?Sized>(
    text: &Array2<f64>,
    motion: &Array2<f64>,
    ks: &[usize],
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_pairs(text, motion)?;
    let n = text.nrows();
    if n < POOL_SIZE {
        return Err(Error::Input(format!("R-precision needs at least {POOL_SIZE} pairs, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut hits = vec![0usize; ks.len()];
    let mut total = 0;
    for pool in order.chunks_exact(POOL_SIZE) {
        let texts: Vec<ArrayView1<f64>> = pool.iter().map(|&i| text.row(i)).collect();
        for (slot, &i) in pool.iter().enumerate() {
            let r = rank_of(motion.row(i), &texts, slot);
            for (h, &k) in hits.iter_mut().zip(ks) {
                if r <= k {
                    *h += 1;
                }
            }
            total += 1;
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / total as f64).collect())
}

/// Mean distance between each caption's features and its motion's features.
pub fn mm_dist(text: &Array2<f64>, motion: &Array2<f64>) -> Result<f64> {
    check_pairs(text, motion)?;
    if text.nrows() == 0 {
        return Err(Error::Input("no pairs".into()));
    }
    let total: f64 = text
        .rows()
        .into_iter()
        .zip(motion.rows())
        .map(|(t, m)| dist(t, m))
        .sum();
    Ok(total / text.nrows() as f64)
}

/// Mean distance between two disjoint random subsets of `subset` items,
/// paired position by position.
pub fn diversity<R: Rng + ?Sized>(feats: &Array2<f64>, subset: usize, rng: &mut R) -> Result<f64> {
    let n = feats.nrows();
    if subset == 0 || n < 2 * subset {
        return Err(Error::Input(format!(
            "diversity over {subset}-item subsets needs {} features, got {n}",
            2 * subset
        )));
    }
    let picks = rand::seq::index::sample(rng, n, 2 * subset).into_vec();
    let total: f64 = (0..subset)
        .map(|i| dist(feats.row(picks[i]), feats.row(picks[subset + i])))
        .sum();
    Ok(total / subset as f64)
}

/// Average over captions of the mean distance between random pairs of that
/// caption's generations. With exactly two generations the single pair is used.
pub fn multimodality<R: Rng + ?Sized>(per_text: &[Array2<f64>], pairs: usize, rng: &mut R) -> Result<f64> {
    if per_text.is_empty() || pairs == 0 {
        return Err(Error::Input("multimodality needs captions and pairs".into()));
    }
    let mut sum = 0.0;
    for (ti, feats) in per_text.iter().enumerate() {
        let n = feats.nrows();
        if n < 2 {
            return Err(Error::Input(format!("caption {ti} has {n} generations, need at least 2")));
        }
        let d: f64 = if n == 2 {
            dist(feats.row(0), feats.row(1))
        } else {
            (0..pairs)
                .map(|_| {
                    let ij = rand::seq::index::sample(rng, n, 2);
                    dist(feats.row(ij.index(0)), feats.row(ij.index(1)))
                })
                .sum::<f64>()
                / pairs as f64
        };
        sum += d;
    }
    Ok(sum / per_text.len() as f64)
}
