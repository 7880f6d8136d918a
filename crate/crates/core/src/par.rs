use std::ops::Range;

use rayon::prelude::*;

const ROW_BLOCK: usize = 16;

/// Evaluates `f` on fixed row blocks in parallel and returns the results in
/// row order. Block boundaries do not depend on the thread count, so any
/// sequential fold over the result is bit-reproducible.
pub(crate) fn map_row_blocks<T, F>(height: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let blocks: Vec<Range<usize>> = (0..height)
        .step_by(ROW_BLOCK)
        .map(|start| start..(start + ROW_BLOCK).min(height))
        .collect();
    blocks.into_par_iter().map(f).collect()
}

/// Row-major per-pixel map, parallel over row blocks.
pub(crate) fn map_pixels<T, F>(width: usize, height: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync + Send,
{
    map_row_blocks(height, |rows| {
        let mut out = Vec::with_capacity(rows.len() * width);
        for r in rows {
            for c in 0..width {
                out.push(f(c, r));
            }
        }
        out
    })
    .into_iter()
    .flatten()
    .collect()
}
