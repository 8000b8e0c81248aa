//! Dynamic time warping over full postures, reference selection and
//! template alignment.
//!
//! The local cost is the Euclidean distance between two frames across all
//! channels; the recurrence is the classic three-neighbour one with unit
//! step weights and no band.

use rayon::prelude::*;

use crate::error::{GomError, Result};
use crate::motion::{MovementDataset, PostureSequence};

fn frame_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_channels(a: &PostureSequence, b: &PostureSequence) -> Result<()> {
    if a.same_channels(b) {
        Ok(())
    } else {
        Err(GomError::ChannelMismatch)
    }
}

/// Accumulated cost matrix, `(n + 1) × (m + 1)` with an infinite border.
fn accumulated_cost(a: &PostureSequence, b: &PostureSequence) -> Vec<Vec<f64>> {
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![vec![f64::INFINITY; m + 1]; n + 1];
    acc[0][0] = 0.0;
    for i in 1..=n {
        let fa = a.frame(i - 1);
        for j in 1..=m {
            let best = acc[i - 1][j - 1].min(acc[i - 1][j]).min(acc[i][j - 1]);
            acc[i][j] = frame_distance(fa, b.frame(j - 1)) + best;
        }
    }
    acc
}

pub fn dtw_distance(a: &PostureSequence, b: &PostureSequence) -> Result<f64> {
    check_channels(a, b)?;
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for fa in a.frames() {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = frame_distance(fa, b.frame(j - 1)) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Optimal warping path as `(index in a, index in b)` pairs from the start.
/// Ties prefer the diagonal step.
pub fn warping_path(a: &PostureSequence, b: &PostureSequence) -> Result<Vec<(usize, usize)>> {
    check_channels(a, b)?;
    let acc = accumulated_cost(a, b);
    let (mut i, mut j) = (a.len(), b.len());
    let mut path = vec![(i - 1, j - 1)];
    while (i, j) != (1, 1) {
        let diag = acc[i - 1][j - 1];
        let up = acc[i - 1][j];
        let left = acc[i][j - 1];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i - 1, j - 1));
    }
    path.reverse();
    Ok(path)
}

/// Symmetric matrix of pairwise distances.
pub fn pairwise_distances(seqs: &[&PostureSequence]) -> Result<Vec<Vec<f64>>> {
    let n = seqs.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let dists: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| dtw_distance(seqs[i], seqs[j]))
        .collect::<Result<_>>()?;
    let mut out = vec![vec![0.0; n]; n];
    for (&(i, j), d) in pairs.iter().zip(dists) {
        out[i][j] = d;
        out[j][i] = d;
    }
    Ok(out)
}

/// Index (into `seqs`) of the medoid: smallest summed distance to the
/// others, lowest index on ties.
pub fn medoid_index(seqs: &[&PostureSequence]) -> Result<usize> {
    if seqs.is_empty() {
        return Err(GomError::Empty("no sequences".into()));
    }
    let dist = pairwise_distances(seqs)?;
    let mut best = (0, f64::INFINITY);
    for (i, row) in dist.iter().enumerate() {
        let total: f64 = row.iter().sum();
        if total < best.1 {
            best = (i, total);
        }
    }
    Ok(best.0)
}

/// Picks the class's reference movement: its DTW medoid.
pub fn select_reference<'a>(dataset: &'a MovementDataset, class_label: &'a str) -> Result<&'a PostureSequence> {
    let members: Vec<&PostureSequence> = dataset.of_class(class_label).collect();
    if members.is_empty() {
        return Err(GomError::UnknownClass(class_label.to_string()));
    }
    Ok(members[medoid_index(&members)?])
}

/// Warps `seq` onto the template's time axis. Template frames matched by
/// several frames of `seq` get their arithmetic mean.
pub fn align_to_template(seq: &PostureSequence, template: &PostureSequence) -> Result<PostureSequence> {
    let path = warping_path(seq, template)?;
    let n = seq.channel_count();
    let mut sums = vec![0.0; template.len() * n];
    let mut counts = vec![0usize; template.len()];
    for (i, j) in path {
        counts[j] += 1;
        for (s, v) in sums[j * n..(j + 1) * n].iter_mut().zip(seq.frame(i)) {
            *s += v;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        for s in &mut sums[j * n..(j + 1) * n] {
            *s /= c as f64;
        }
    }
    let mut out = PostureSequence::new(seq.channel_names().to_vec(), sums, template.frame_rate_hz())?;
    out.class_label = seq.class_label.clone();
    out.subject_id = seq.subject_id.clone();
    Ok(out)
}
