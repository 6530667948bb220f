//! Melody × timbre representation study: clip-level features for four
//! representations, 2-D PCA, and silhouette scores by melody and by timbre.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::bottleneck::VqVaeModel;
use crate::dsp::{chromagram, mel_spectrogram, NoteEvent, TimbreSpec, Waveform};
use crate::error::{Error, Result};
use crate::flow::{Standardizer, Teacher};
use crate::synthetic::render_clip;

pub const MIN_CLIP_S: f64 = 3.0;
pub const MAX_CLIP_S: f64 = 10.0;

/// One rendering of one melody with one timbre.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlledClip {
    pub melody: usize,
    pub timbre: usize,
    pub events: Vec<NoteEvent>,
    pub audio: Waveform,
}

/// Renders every melody with every timbre, melody-major.
pub fn build_controlled_set(melodies: &[Vec<NoteEvent>], timbres: &[TimbreSpec]) -> Result<Vec<ControlledClip>> {
    if melodies.len() < 4 || timbres.len() < 3 {
        return Err(Error::Invalid(format!(
            "controlled set needs at least 4 melodies and 3 timbres, got {} and {}",
            melodies.len(),
            timbres.len()
        )));
    }
    let mut clips = Vec::with_capacity(melodies.len() * timbres.len());
    for (m, events) in melodies.iter().enumerate() {
        let duration = events.iter().map(|e| e.end_s()).fold(0.0, f64::max);
        if !(MIN_CLIP_S..=MAX_CLIP_S).contains(&duration) {
            return Err(Error::Invalid(format!(
                "melody {m} lasts {duration:.2} s, outside [{MIN_CLIP_S}, {MAX_CLIP_S}]"
            )));
        }
        for (t, timbre) in timbres.iter().enumerate() {
            clips.push(ControlledClip {
                melody: m,
                timbre: t,
                events: events.clone(),
                audio: render_clip(events, timbre, duration)?,
            });
        }
    }
    Ok(clips)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    Mel,
    Teacher,
    ChromaDense,
    ChromaVq,
}

impl Representation {
    pub const ALL: [Representation; 4] = [Self::Mel, Self::Teacher, Self::ChromaDense, Self::ChromaVq];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mel => "mel",
            Self::Teacher => "teacher",
            Self::ChromaDense => "chroma-dense",
            Self::ChromaVq => "chroma-vq",
        }
    }
}

/// One clip-level vector per row with both labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatureSet {
    pub vectors: Array2<f64>,
    pub melody_labels: Vec<usize>,
    pub timbre_labels: Vec<usize>,
}

fn mean_pool(frames: &Array2<f64>) -> Array1<f64> {
    frames.mean_axis(Axis(0)).expect("at least one frame")
}

fn stack(rows: Vec<Array1<f64>>) -> Array2<f64> {
    let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("equal widths")
}

/// Temporal mean-pooled features of `rep` for every clip.
pub fn extract_features(
    clips: &[ControlledClip],
    rep: Representation,
    vq: &VqVaeModel,
    teacher: &Teacher,
) -> Result<LabeledFeatureSet> {
    if clips.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rows: Vec<Array1<f64>> = match rep {
        Representation::Mel => clips
            .iter()
            .map(|c| Ok(mean_pool(mel_spectrogram(&c.audio)?.frames())))
            .collect::<Result<_>>()?,
        Representation::Teacher => {
            let mels: Vec<Array2<f64>> = clips
                .iter()
                .map(|c| Ok(mel_spectrogram(&c.audio)?.into_frames()))
                .collect::<Result<_>>()?;
            let stats = Standardizer::fit(&mels)?;
            mels.iter()
                .map(|m| Ok(mean_pool(teacher.features(&stats.apply(m))?.frames())))
                .collect::<Result<_>>()?
        }
        Representation::ChromaDense => clips
            .iter()
            .map(|c| Ok(mean_pool(chromagram(&c.audio)?.frames())))
            .collect::<Result<_>>()?,
        Representation::ChromaVq => clips
            .iter()
            .map(|c| Ok(mean_pool(&vq.embed_codes(&vq.extract_codes(&c.audio)?))))
            .collect::<Result<_>>()?,
    };
    Ok(LabeledFeatureSet {
        vectors: stack(rows),
        melody_labels: clips.iter().map(|c| c.melody).collect(),
        timbre_labels: clips.iter().map(|c| c.timbre).collect(),
    })
}

/// Principal-component projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    /// N × k coordinates of the mean-centred data.
    pub points: Array2<f64>,
    /// Fraction of total variance per component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// k × D orthonormal directions.
    pub components: Array2<f64>,
}

pub fn pca_project(vectors: &Array2<f64>, out_dim: usize) -> Result<Pca> {
    let (n, d) = vectors.dim();
    if n <= out_dim || out_dim == 0 {
        return Err(Error::Invalid(format!("pca needs more than {out_dim} rows, got {n}")));
    }
    if vectors.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("pca input".into()));
    }
    let mean = mean_pool(vectors);
    let centered = vectors - &mean;
    let total: f64 = centered.iter().map(|x| x * x).sum();
    if total == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let m = DMatrix::from_fn(n, d, |i, j| centered[[i, j]]);
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut components = Array2::zeros((out_dim, d));
    let mut explained = Vec::with_capacity(out_dim);
    for (k, &idx) in order.iter().take(out_dim).enumerate() {
        let mut row: Vec<f64> = (0..d).map(|j| vt[(idx, j)]).collect();
        // deterministic sign: largest-magnitude loading positive
        let pivot = row.iter().cloned().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            row.iter_mut().for_each(|x| *x = -*x);
        }
        components.row_mut(k).assign(&Array1::from(row));
        let s = svd.singular_values[idx];
        explained.push(s * s / total);
    }
    // fewer singular values than requested components: pad with zero variance
    explained.resize(out_dim, 0.0);
    let points = centered.dot(&components.t());
    Ok(Pca {
        points,
        explained_variance: explained,
        components,
    })
}

fn dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette coefficient under Euclidean distance. Members of
/// singleton clusters score 0.
pub fn silhouette(points: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} points", labels.len())));
    }
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Invalid("silhouette needs at least two labels".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; distinct.len()];
        let mut counts = vec![0usize; distinct.len()];
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = distinct.binary_search(&labels[j]).unwrap();
            sums[k] += dist(points.row(i), points.row(j));
            counts[k] += 1;
        }
        let own = distinct.binary_search(&labels[i]).unwrap();
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..distinct.len())
            .filter(|&k| k != own && counts[k] > 0)
            .map(|k| sums[k] / counts[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// 2-D projection of one representation with its cluster scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub representation: Representation,
    pub points: Vec<[f64; 2]>,
    pub explained_variance: [f64; 2],
    pub silhouette_by_melody: f64,
    pub silhouette_by_timbre: f64,
    pub melody_labels: Vec<usize>,
    pub timbre_labels: Vec<usize>,
}

/// PCA to two dimensions, then silhouettes of the projected points.
pub fn project(set: &LabeledFeatureSet, rep: Representation) -> Result<ProjectionReport> {
    let pca = pca_project(&set.vectors, 2)?;
    Ok(ProjectionReport {
        representation: rep,
        points: pca.points.rows().into_iter().map(|r| [r[0], r[1]]).collect(),
        explained_variance: [pca.explained_variance[0], pca.explained_variance[1]],
        silhouette_by_melody: silhouette(&pca.points, &set.melody_labels)?,
        silhouette_by_timbre: silhouette(&pca.points, &set.timbre_labels)?,
        melody_labels: set.melody_labels.clone(),
        timbre_labels: set.timbre_labels.clone(),
    })
}

/// Reports for mel, teacher, dense chroma and VQ chroma, in that order.
pub fn representation_report(
    clips: &[ControlledClip],
    vq: &VqVaeModel,
    teacher: &Teacher,
) -> Result<Vec<ProjectionReport>> {
    Representation::ALL
        .iter()
        .map(|&rep| project(&extract_features(clips, rep, vq, teacher)?, rep))
        .collect()
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Scatter plot: colour encodes melody, marker shape encodes timbre.
pub fn scatter_svg(report: &ProjectionReport) -> String {
    const SIZE: f64 = 420.0;
    const PAD: f64 = 40.0;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &report.points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let span = |k: usize| (hi[k] - lo[k]).max(1e-12);
    let map = |p: &[f64; 2]| {
        (
            PAD + (p[0] - lo[0]) / span(0) * (SIZE - 2.0 * PAD),
            SIZE - PAD - (p[1] - lo[1]) / span(1) * (SIZE - 2.0 * PAD),
        )
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{} (melody {:.3}, timbre {:.3})</text>"#,
        report.representation.name(),
        report.silhouette_by_melody,
        report.silhouette_by_timbre
    );
    for ((p, &m), &t) in report.points.iter().zip(&report.melody_labels).zip(&report.timbre_labels) {
        let (x, y) = map(p);
        let color = PALETTE[m % PALETTE.len()];
        let _ = match t % 4 {
            0 => writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="{color}"/>"#),
            1 => writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="9" height="9" fill="{color}"/>"#,
                x - 4.5,
                y - 4.5
            ),
            2 => writeln!(
                svg,
                r#"<polygon points="{x:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
                y - 6.0,
                x - 5.5,
                y + 4.0,
                x + 5.5,
                y + 4.0
            ),
            _ => writeln!(
                svg,
                r#"<polygon points="{x:.2},{:.2} {:.2},{y:.2} {x:.2},{:.2} {:.2},{y:.2}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                y - 6.0,
                x + 6.0,
                y + 6.0,
                x - 6.0
            ),
        };
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn pca_recovers_axis_aligned_plane() {
        let x = array![[3.0, 0.0], [-3.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let p = pca_project(&x, 2).unwrap();
        assert!((p.explained_variance.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.explained_variance[0] >= p.explained_variance[1]);
        for (a, b) in p.points.iter().map(|v| v.abs()).zip(x.iter().map(|v| v.abs())) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pca_rank_one() {
        let dir = Array1::from_shape_fn(10, |i| (i as f64 + 1.0).sqrt());
        let x = Array2::from_shape_fn((12, 10), |(i, j)| (i as f64 - 4.0) * dir[j] + 2.0);
        let p = pca_project(&x, 2).unwrap();
        assert!((p.explained_variance[0] - 1.0).abs() <= 1e-9);
        assert!(p.explained_variance[1].abs() <= 1e-9);
    }

    #[test]
    fn pca_errors() {
        let same = Array2::from_elem((5, 3), 1.5);
        assert!(matches!(pca_project(&same, 2), Err(Error::ZeroVariance)));
        assert!(pca_project(&Array2::zeros((2, 3)), 2).is_err());
    }

    #[test]
    fn pca_is_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_simple_fn((20, 5), || rng.random_range(-1.0..1.0));
        let shifted = &x + &Array1::from(vec![10.0, -3.0, 0.5, 7.0, 2.0]);
        let (a, b) = (pca_project(&x, 2).unwrap(), pca_project(&shifted, 2).unwrap());
        assert!(a.points.iter().zip(b.points.iter()).all(|(p, q)| (p - q).abs() < 1e-9));
        let gram = a.components.dot(&a.components.t());
        assert!((&gram - &Array2::<f64>::eye(2)).iter().all(|v| v.abs() < 1e-8));
    }

    fn two_blobs(rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>) {
        let mut pts = Array2::zeros((40, 2));
        let mut labels = Vec::new();
        for i in 0..40 {
            let c = if i < 20 { 0.0 } else { 100.0 };
            let r: f64 = rng.random_range(0.0..0.1);
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            pts[[i, 0]] = c + r * th.cos();
            pts[[i, 1]] = r * th.sin();
            labels.push((i >= 20) as usize);
        }
        (pts, labels)
    }

    #[test]
    fn separated_clusters_score_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (pts, labels) = two_blobs(&mut rng);
        assert!(silhouette(&pts, &labels).unwrap() > 0.9);
    }

    #[test]
    fn random_labels_score_near_zero() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = Array2::from_shape_simple_fn((60, 2), || StandardNormal.sample(&mut rng));
            let labels: Vec<usize> = (0..60).map(|_| rng.random_range(0..3)).collect();
            let s = silhouette(&pts, &labels).unwrap();
            assert!(s.abs() < 0.15, "seed {seed}: {s}");
        }
    }

    #[test]
    fn coincident_clusters_do_not_score_positive() {
        let pts = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        assert!(silhouette(&pts, &[0, 0, 1, 1]).unwrap() <= 0.0);
        assert!(silhouette(&pts, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn silhouette_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = Array2::from_shape_simple_fn((15, 2), || rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..15).map(|i| i % 3).collect();
        let s = silhouette(&pts, &labels).unwrap();
        let perm: Vec<usize> = (0..15).rev().collect();
        let p2 = pts.select(Axis(0), &perm);
        let l2: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        assert!((silhouette(&p2, &l2).unwrap() - s).abs() < 1e-12);
        let (c, sn) = (0.6f64.cos(), 0.6f64.sin());
        let rot = array![[c, -sn], [sn, c]];
        let moved = pts.dot(&rot) + &array![3.0, -2.0];
        assert!((silhouette(&moved, &labels).unwrap() - s).abs() < 1e-12);
    }

    #[test]
    fn controlled_set_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let melodies: Vec<_> = (0..5).map(|_| crate::synthetic::random_melody(&mut rng, 3.0).unwrap()).collect();
        let timbres = TimbreSpec::presets()[..4].to_vec();
        let clips = build_controlled_set(&melodies, &timbres).unwrap();
        assert_eq!(clips.len(), 20);
        for c in &clips {
            assert_eq!(c.events, melodies[c.melody]);
            assert!((MIN_CLIP_S..=MAX_CLIP_S).contains(&c.audio.duration_s()));
        }
        assert!(build_controlled_set(&melodies[..3], &timbres).is_err());
        assert!(build_controlled_set(&melodies, &timbres[..2]).is_err());
    }

    #[test]
    fn svg_has_one_marker_per_point() {
        let report = ProjectionReport {
            representation: Representation::Mel,
            points: vec![[0.0, 0.0], [1.0, 1.0], [2.0, 0.5], [0.5, 2.0]],
            explained_variance: [0.7, 0.3],
            silhouette_by_melody: 0.1,
            silhouette_by_timbre: 0.2,
            melody_labels: vec![0, 1, 0, 1],
            timbre_labels: vec![0, 1, 2, 3],
        };
        let svg = scatter_svg(&report);
        let markers = svg.matches("<circle").count() + svg.matches("<rect x").count() + svg.matches("<polygon").count();
        assert_eq!(markers, 4);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
