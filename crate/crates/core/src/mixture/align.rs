use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::types::ClassAffiliations;

/// All permutations of `0..k` in lexicographic order (identity first).
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..k).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..k).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
}

/// Pearson correlation; zero when either input is constant.
pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = T::of_usize(a.len().max(1));
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let den = (saa * sbb).sqrt();
    if den > T::zero() {
        sab / den
    } else {
        T::zero()
    }
}

/// Greedy frequency-sweep permutation alignment.
///
/// Bins are visited in ascending order. Each class keeps a centroid time
/// profile averaged over the bins aligned so far; at every bin the class
/// permutation with the largest summed Pearson correlation against the
/// centroids is chosen. Ties keep the identity.
///
/// Returns the aligned affiliations and, per bin, the map where output class
/// `k` takes input class `perm[f][k]`.
pub fn permutation_align<T: Scalar>(gamma: &ClassAffiliations<T>) -> Result<(ClassAffiliations<T>, Vec<Vec<usize>>)> {
    let (k, frames, bins) = (gamma.classes(), gamma.frames(), gamma.bins());
    if k < 2 {
        bail!(InvalidArgument, "permutation alignment needs at least two classes, got {k}");
    }
    let perms = permutations(k);
    let identity: Vec<usize> = (0..k).collect();
    let mut centroids = vec![vec![T::zero(); frames]; k];
    let mut map = Vec::with_capacity(bins);
    let profile = |c: usize, f: usize| -> Vec<T> { (0..frames).map(|t| gamma.get(c, t, f)).collect() };
    for f in 0..bins {
        let profiles: Vec<Vec<T>> = (0..k).map(|c| profile(c, f)).collect();
        let best = if f == 0 {
            identity.clone()
        } else {
            let score = |p: &[usize]| -> T { (0..k).map(|c| pearson(&profiles[p[c]], &centroids[c])).sum() };
            let base = score(&identity);
            let mut best = (identity.clone(), base);
            for p in &perms[1..] {
                let s = score(p);
                if s > best.1 + T::kernel_tol() {
                    best = (p.clone(), s);
                }
            }
            best.0
        };
        // running mean over the aligned bins
        let w_old = T::of_usize(f) / T::of_usize(f + 1);
        let w_new = T::one() / T::of_usize(f + 1);
        for c in 0..k {
            for t in 0..frames {
                centroids[c][t] = centroids[c][t] * w_old + profiles[best[c]][t] * w_new;
            }
        }
        map.push(best);
    }
    Ok((gamma.permuted(&map)?, map))
}

/// Applies a per-bin class map to affiliations (same convention as
/// [`permutation_align`]).
pub fn apply_permutations<T: Scalar>(gamma: &ClassAffiliations<T>, map: &[Vec<usize>]) -> Result<ClassAffiliations<T>> {
    gamma.permuted(map)
}
