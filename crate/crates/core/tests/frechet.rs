use accomp_core::dsp::TimbreSpec;
use accomp_core::metrics::{embed_clips, frechet_distance, EmbeddingStats, MelStatsEmbedder};
use accomp_core::rng::derive_rng;
use accomp_core::synthetic::{random_melody, render_clip};
use ndarray::{arr1, arr2};

// Reference distances computed with 50-digit arithmetic.
#[test]
fn matches_extended_precision_reference() {
    let a = EmbeddingStats {
        mean: arr1(&[0.5, -1.0, 1.0, -1.75]),
        cov: arr2(&[
            [7.9375, -1.0625, -4.125, 1.5625],
            [-1.0625, 10.0625, 4.875, 1.3125],
            [-4.125, 4.875, 5.9375, 2.625],
            [1.5625, 1.3125, 2.625, 8.9375],
        ]),
        count: 10,
    };
    let b = EmbeddingStats {
        mean: arr1(&[-0.25, -1.75, 1.0, -1.75]),
        cov: arr2(&[
            [4.6875, 2.75, 3.0625, 4.5625],
            [2.75, 4.6875, 1.125, 2.0],
            [3.0625, 1.125, 3.4375, 3.3125],
            [4.5625, 2.0, 3.3125, 7.625],
        ]),
        count: 10,
    };
    let d = frechet_distance(&a, &b).unwrap();
    assert!((d - 11.49251246007589895463152).abs() < 1e-9, "{d}");
}

#[test]
fn singular_covariances_are_handled() {
    let a = EmbeddingStats {
        mean: arr1(&[0.0, 0.0, 0.0]),
        cov: arr2(&[[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]]),
        count: 3,
    };
    let b = EmbeddingStats {
        mean: arr1(&[0.0, 0.0, 0.0]),
        cov: arr2(&[[4.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
        count: 3,
    };
    // A = 2uuᵀ with u = (1, 1, 0)/√2, so A^½ B A^½ = 4uuᵀ and its root has trace 2
    let d = frechet_distance(&a, &b).unwrap();
    let want = 2.0 + 4.0 - 2.0 * 2.0;
    assert!((d - want).abs() < 1e-8, "{d} vs {want}");
}

#[test]
fn audio_sets_are_ranked_by_similarity() {
    let timbres = TimbreSpec::presets();
    let set = |seed: u64, timbre: usize| -> Vec<_> {
        (0..6)
            .map(|i| {
                let m = random_melody(&mut derive_rng(seed, "fad", i), 3.0).unwrap();
                render_clip(&m, &timbres[timbre], 3.0).unwrap()
            })
            .collect()
    };
    let embedder = MelStatsEmbedder;
    let reference = embed_clips(&set(1, 0), &embedder).unwrap();
    let same_timbre = embed_clips(&set(2, 0), &embedder).unwrap();
    let other_timbre = embed_clips(&set(2, 3), &embedder).unwrap();
    let near = frechet_distance(&reference, &same_timbre).unwrap();
    let far = frechet_distance(&reference, &other_timbre).unwrap();
    assert!(near < far, "{near} vs {far}");

    let mut shuffled = set(1, 0);
    shuffled.reverse();
    let again = embed_clips(&shuffled, &embedder).unwrap();
    assert!(frechet_distance(&reference, &again).unwrap().abs() < 1e-9);
}
