//! Fixed-length segment sampling for mini-batches.

use ndarray::{s, Array2, Axis};
use rand::Rng;

/// Position of one training segment inside a clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub clip: usize,
    pub start: usize,
}

/// Draws `count` segments of `len` frames uniformly over clips and offsets.
/// Every clip must hold at least `len` frames.
pub fn sample_segments<R: Rng + ?Sized>(lengths: &[usize], len: usize, count: usize, rng: &mut R) -> Vec<Segment> {
    (0..count)
        .map(|_| {
            let clip = rng.random_range(0..lengths.len());
            let start = rng.random_range(0..=lengths[clip] - len);
            Segment { clip, start }
        })
        .collect()
}

/// Stacks the selected row ranges of `clips` into one matrix.
pub fn stack_segments(clips: &[&Array2<f64>], segments: &[Segment], len: usize) -> Array2<f64> {
    let views: Vec<_> = segments
        .iter()
        .map(|seg| clips[seg.clip].slice(s![seg.start..seg.start + len, ..]))
        .collect();
    ndarray::concatenate(Axis(0), &views).expect("equal widths")
}
