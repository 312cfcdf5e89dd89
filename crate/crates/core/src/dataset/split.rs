use rand::seq::SliceRandom;

use super::{Dataset, DatasetError, PriorityLabel};
use crate::seed::{rng_from_seed, Rng};

/// Apportions `target` units across groups proportionally to `counts`
/// (Hamilton's method). Exact integer arithmetic; remainder ties go to the
/// lower group index. Every share is at most its group count when
/// `target <= sum(counts)`.
pub fn largest_remainder(counts: &[usize], target: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut shares: Vec<usize> = counts.iter().map(|&c| target * c / total).collect();
    let mut rems: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (target * c % total, i))
        .collect();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let assigned: usize = shares.iter().sum();
    for &(_, i) in rems.iter().take(target.saturating_sub(assigned)) {
        shares[i] += 1;
    }
    shares
}

/// Apportions `round(frac * sum(counts))` units with quotas `frac * count`.
/// Each share differs from its quota by less than one unit.
pub fn apportion_fraction(counts: &[usize], frac: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (frac * total as f64).round() as usize;
    let quotas: Vec<f64> = counts.iter().map(|&c| frac * c as f64).collect();
    let mut shares: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = shares.iter().sum();
    for &i in order.iter().take(target.saturating_sub(assigned)) {
        shares[i] += 1;
    }
    for (s, &c) in shares.iter_mut().zip(counts) {
        *s = (*s).min(c);
    }
    shares
}

fn group_by_class(labels: &[PriorityLabel]) -> [Vec<usize>; 3] {
    let mut by_class: [Vec<usize>; 3] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    by_class
}

fn draw_shares(mut by_class: [Vec<usize>; 3], shares: &[usize], rng: &mut Rng) -> Vec<usize> {
    let mut out = Vec::new();
    for (members, &share) in by_class.iter_mut().zip(shares) {
        members.shuffle(rng);
        out.extend_from_slice(&members[..share]);
    }
    out.sort_unstable();
    out
}

/// Draws a class-stratified subset of `size` indices with shares
/// proportional to the class counts. Returned indices are sorted ascending.
pub fn stratified_subset_indices(labels: &[PriorityLabel], size: usize, rng: &mut Rng) -> Vec<usize> {
    let by_class = group_by_class(labels);
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let shares = largest_remainder(&counts, size.min(labels.len()));
    draw_shares(by_class, &shares, rng)
}

/// Draws `round(frac * n)` indices, taking about `frac` of every class.
/// Returned indices are sorted ascending.
pub fn stratified_fraction_indices(labels: &[PriorityLabel], frac: f64, rng: &mut Rng) -> Vec<usize> {
    let by_class = group_by_class(labels);
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let shares = apportion_fraction(&counts, frac);
    draw_shares(by_class, &shares, rng)
}

/// Index-level split; see [`split`].
pub fn split_indices(
    labels: &[PriorityLabel],
    train_frac: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DatasetError::InvalidFraction(train_frac));
    }
    let n = labels.len();
    if n == 0 {
        return Err(DatasetError::EmptyDataset);
    }
    let n_train = (train_frac * n as f64).round() as usize;
    let mut rng = rng_from_seed(seed);
    let train = if stratified {
        let mut counts = [0usize; 3];
        for l in labels {
            counts[l.index()] += 1;
        }
        for (label, &count) in PriorityLabel::ALL.iter().zip(&counts) {
            if count == 1 {
                return Err(DatasetError::ClassTooSmall { label: *label, count });
            }
        }
        stratified_fraction_indices(labels, train_frac, &mut rng)
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n_train);
        idx.sort_unstable();
        idx
    };
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    Ok((train, test))
}

/// Partitions a labelled dataset into train and test sets. Both keep the
/// original row order. Deterministic for a fixed seed.
pub fn split(
    d: &Dataset,
    train_frac: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Dataset, Dataset), DatasetError> {
    let labels = d.require_labels()?;
    let (train, test) = split_indices(&labels, train_frac, seed, stratified)?;
    Ok((d.select(&train), d.select(&test)))
}
