use super::AlignmentSet;
use crate::error::{bail, Result};

/// Neighbor offsets as `(Δi, Δj)`: the four direct neighbors first, then the
/// diagonals.
const NEIGHBORS: [(isize, isize); 8] =
    [(-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)];

/// Grow-diagonal symmetrization of two directional alignments given in the
/// same `(j, i)` orientation.
///
/// Starts from the intersection and repeatedly sweeps the current links in
/// ascending `(i, j)` order, adding any neighboring union link that covers a
/// still-unaligned source or target word. With `final_step`, union links
/// whose words are both unaligned are added afterwards.
pub fn symmetrize_grow_diagonal(
    forward: &AlignmentSet,
    reverse: &AlignmentSet,
    final_step: bool,
) -> Result<AlignmentSet> {
    if forward.src_len() != reverse.src_len() || forward.tgt_len() != reverse.tgt_len() {
        bail!(
            Contract,
            "directional alignments disagree on lengths: {}x{} vs {}x{}",
            forward.src_len(),
            forward.tgt_len(),
            reverse.src_len(),
            reverse.tgt_len()
        );
    }
    let (src_len, tgt_len) = (forward.src_len(), forward.tgt_len());
    let union = forward.union(reverse);
    let mut out = forward.intersection(reverse);
    let mut src_aligned = vec![false; src_len];
    let mut tgt_aligned = vec![false; tgt_len];
    for (j, i) in out.iter() {
        src_aligned[j] = true;
        tgt_aligned[i] = true;
    }

    loop {
        let mut added = false;
        for i in 0..tgt_len {
            for j in 0..src_len {
                if !out.contains(j, i) {
                    continue;
                }
                for (di, dj) in NEIGHBORS {
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    if ni < 0 || nj < 0 || ni >= tgt_len as isize || nj >= src_len as isize {
                        continue;
                    }
                    let (ni, nj) = (ni as usize, nj as usize);
                    if (!src_aligned[nj] || !tgt_aligned[ni])
                        && union.contains(nj, ni)
                        && !out.contains(nj, ni)
                    {
                        out.insert(nj, ni)?;
                        src_aligned[nj] = true;
                        tgt_aligned[ni] = true;
                        added = true;
                    }
                }
            }
        }
        if !added {
            break;
        }
    }

    if final_step {
        let mut candidates: Vec<(usize, usize)> = union.iter().collect();
        candidates.sort_by_key(|&(j, i)| (i, j));
        for (j, i) in candidates {
            if !src_aligned[j] && !tgt_aligned[i] {
                out.insert(j, i)?;
                src_aligned[j] = true;
                tgt_aligned[i] = true;
            }
        }
    }
    Ok(out)
}
