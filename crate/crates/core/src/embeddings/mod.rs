//! Speech-word vectors taken from encoder states at attention peaks,
//! nearest-neighbour search, and 2-D projection by PCA or exact t-SNE.

mod io;
mod tsne;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::analysis::{argmax_row, BoundaryPrediction};
use crate::corpus::EOS;
use crate::decoding::DecodeResult;
use crate::error::{Error, Result};
use crate::model::EncoderStates;
use crate::numerics::{Rng, Tensor};

pub use io::{
    read_embeddings, read_projection, write_embeddings, write_nn_report, write_projection,
    EMBEDDING_MAGIC, EMBEDDING_VERSION,
};
pub use tsne::{joint_probabilities, tsne_project, JointProbabilities, TsneConfig, TsneResult};

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechWordVector {
    pub utt_id: String,
    pub word: String,
    /// Index of the word in the hypothesis; `#eos#` takes the last slot.
    pub position: usize,
    /// Top-layer encoder state, `2H` values.
    pub vector: Vec<f64>,
}

/// One vector per decoded word, read from the encoder row the word
/// attended to most. With `include_eos`, the `#eos#` step contributes a
/// final vector (skipped for truncated decodes, which have no such step).
pub fn extract_embeddings(
    decode: &DecodeResult,
    boundaries: &BoundaryPrediction,
    enc: &EncoderStates,
    include_eos: bool,
) -> Result<Vec<SpeechWordVector>> {
    if boundaries.utt_id != decode.utt_id || boundaries.words.len() != decode.hypothesis.len() {
        return Err(Error::Data(format!(
            "boundaries for {} do not cover the decode of {}",
            boundaries.utt_id, decode.utt_id
        )));
    }
    let frames = enc.num_frames();
    let row = |r: usize| -> Result<Vec<f64>> {
        if r >= frames {
            return Err(Error::Domain(format!(
                "{}: reduced frame {r} outside {frames} encoder frames",
                decode.utt_id
            )));
        }
        Ok(enc.h.row(r).to_vec())
    };
    let mut out = Vec::with_capacity(boundaries.words.len() + 1);
    for (k, b) in boundaries.words.iter().enumerate() {
        out.push(SpeechWordVector {
            utt_id: decode.utt_id.clone(),
            word: b.word.clone(),
            position: k,
            vector: row(b.reduced_frame)?,
        });
    }
    let n = decode.hypothesis.len();
    if include_eos && !decode.truncated && decode.trace.num_rows() > n {
        out.push(SpeechWordVector {
            utt_id: decode.utt_id.clone(),
            word: EOS.to_string(),
            position: n,
            vector: row(argmax_row(decode.trace.row(n)))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(Error::Config(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Index into the pool.
    pub index: usize,
    /// Cosine similarity or euclidean distance.
    pub score: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Top `k` of `pool` by cosine similarity (descending) or euclidean
/// distance (ascending); equal scores keep pool order.
pub fn nearest_neighbors(query: &[f64], pool: &[&[f64]], k: usize, metric: Metric) -> Result<Vec<Neighbor>> {
    if k > pool.len() {
        return Err(Error::Domain(format!("k = {k} exceeds pool of {}", pool.len())));
    }
    if let Some(v) = pool.iter().find(|v| v.len() != query.len()) {
        return Err(Error::Dimension(format!("pool vector of dim {} vs query {}", v.len(), query.len())));
    }
    let qn = norm(query);
    if metric == Metric::Cosine && qn == 0.0 {
        return Err(Error::Numeric("zero query vector has no cosine similarity".into()));
    }
    let mut scored = Vec::with_capacity(pool.len());
    for (index, v) in pool.iter().enumerate() {
        let score = match metric {
            Metric::Cosine => {
                let vn = norm(v);
                if vn == 0.0 {
                    return Err(Error::Numeric(format!("zero pool vector at {index}")));
                }
                query.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>() / (qn * vn)
            }
            Metric::Euclidean => query
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        };
        scored.push(Neighbor { index, score });
    }
    match metric {
        Metric::Cosine => scored.sort_by(|a, b| b.score.total_cmp(&a.score)),
        Metric::Euclidean => scored.sort_by(|a, b| a.score.total_cmp(&b.score)),
    }
    scored.truncate(k);
    Ok(scored)
}

/// Neighbours of `vectors[i]` among all the others; indices refer to
/// `vectors`.
pub fn neighbors_of(vectors: &[SpeechWordVector], i: usize, k: usize, metric: Metric) -> Result<Vec<Neighbor>> {
    let others: Vec<usize> = (0..vectors.len()).filter(|&j| j != i).collect();
    let pool: Vec<&[f64]> = others.iter().map(|&j| vectors[j].vector.as_slice()).collect();
    Ok(nearest_neighbors(&vectors[i].vector, &pool, k, metric)?
        .into_iter()
        .map(|n| Neighbor {
            index: others[n.index],
            score: n.score,
        })
        .collect())
}

/// Among word types with at least `min_tokens` tokens, the share of tokens
/// whose single nearest neighbour carries the same word. Returns the rate
/// and the number of tokens considered.
pub fn same_word_purity(vectors: &[SpeechWordVector], min_tokens: usize, metric: Metric) -> Result<(f64, usize)> {
    let mut counts = std::collections::HashMap::new();
    for v in vectors {
        *counts.entry(v.word.as_str()).or_insert(0usize) += 1;
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for (i, v) in vectors.iter().enumerate() {
        if counts[v.word.as_str()] < min_tokens {
            continue;
        }
        let nn = neighbors_of(vectors, i, 1, metric)?;
        total += 1;
        if vectors[nn[0].index].word == v.word {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::Domain(format!("no word type has {min_tokens} tokens")));
    }
    Ok((hits as f64 / total as f64, total))
}

/// Stacks vectors into an `N x D` matrix.
pub fn to_matrix(vectors: &[SpeechWordVector]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = vectors.iter().map(|v| v.vector.clone()).collect();
    Tensor::from_rows(&rows)
}

/// `k` distinct indices from `0..n` in ascending order, or all of them
/// when `k >= n`.
pub fn sample_indices(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        rng.shuffle(&mut idx);
        idx.truncate(k);
        idx.sort_unstable();
    }
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// `N x 2`
    pub coords: Tensor,
    /// `2 x D`, unit rows.
    pub components: Tensor,
    pub mean: Vec<f64>,
    pub explained_variance_ratio: [f64; 2],
}

/// Projection onto the top two eigenvectors of the covariance of the
/// centred data. Each component is flipped so its largest-magnitude entry
/// is positive (first such entry on ties).
pub fn pca_project(data: &Tensor) -> Result<PcaResult> {
    let (n, d) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::Domain(format!("PCA needs at least 2 points, got {n}")));
    }
    if d < 2 {
        return Err(Error::Dimension(format!("PCA to 2-D needs at least 2 dims, got {d}")));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| data.get2(i, j)).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, d, |i, j| data.get2(i, j) - mean[j]);
    let cov = (centered.transpose() * &centered) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    let mut components = Vec::with_capacity(2 * d);
    let mut ratios = [0.0; 2];
    for (c, &k) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let mut lead = 0;
        for (j, x) in v.iter().enumerate() {
            if x.abs() > v[lead].abs() {
                lead = j;
            }
        }
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.extend(v);
        ratios[c] = if total > 0.0 {
            eig.eigenvalues[k].max(0.0) / total
        } else {
            0.0
        };
    }
    let comp = DMatrix::from_row_slice(2, d, &components);
    let proj = &centered * comp.transpose();
    let coords: Vec<f64> = (0..n).flat_map(|i| [proj[(i, 0)], proj[(i, 1)]]).collect();
    Ok(PcaResult {
        coords: Tensor::matrix(n, 2, coords)?,
        components: Tensor::matrix(2, d, components)?,
        mean,
        explained_variance_ratio: ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{predict_boundaries, FrameMapping};
    use crate::model::AttentionTrace;
    use proptest::prelude::*;

    #[test]
    fn cosine_fixture() {
        let pool: Vec<&[f64]> = vec![&[1.0, 0.0], &[0.9, 0.1], &[0.0, 1.0]];
        let nn = nearest_neighbors(&[1.0, 0.0], &pool[1..], 1, Metric::Cosine).unwrap();
        assert_eq!(nn[0].index, 0);
        assert!((nn[0].score - 0.9 / (0.82f64).sqrt()).abs() < 1e-15);
        assert!((nn[0].score - 0.9939).abs() < 1e-4);
        let all = nearest_neighbors(&[1.0, 0.0], &pool, 3, Metric::Cosine).unwrap();
        let mut idx: Vec<usize> = all.iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2]);
        let e = nearest_neighbors(&[1.0, 0.0], &pool, 3, Metric::Euclidean).unwrap();
        assert_eq!(e[0].score, 0.0);
        assert_eq!(e[2].index, 2);
    }

    #[test]
    fn cosine_errors() {
        let pool: Vec<&[f64]> = vec![&[1.0, 0.0]];
        assert!(matches!(
            nearest_neighbors(&[0.0, 0.0], &pool, 1, Metric::Cosine),
            Err(Error::Numeric(_))
        ));
        assert!(nearest_neighbors(&[0.0, 0.0], &pool, 1, Metric::Euclidean).is_ok());
        assert!(nearest_neighbors(&[1.0, 0.0], &pool, 2, Metric::Cosine).is_err());
    }

    #[test]
    fn ties_keep_pool_order() {
        let pool: Vec<&[f64]> = vec![&[0.0, 2.0], &[1.0, 0.0], &[3.0, 0.0], &[0.0, 1.0]];
        let nn = nearest_neighbors(&[1.0, 0.0], &pool, 4, Metric::Cosine).unwrap();
        let idx: Vec<usize> = nn.iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![1, 2, 0, 3]);
    }

    fn decode_fixture() -> (DecodeResult, EncoderStates) {
        let rows = vec![
            vec![0.1, 0.8, 0.1, 0.0],
            vec![0.0, 0.1, 0.2, 0.7],
            vec![0.0, 0.0, 0.6, 0.4],
            vec![0.0, 0.0, 0.1, 0.9],
        ];
        let h = Tensor::matrix(4, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        (
            DecodeResult {
                utt_id: "u".into(),
                hypothesis: vec!["a".into(), "b".into(), "a".into()],
                trace: AttentionTrace::from_rows(&rows).unwrap(),
                max_probs: vec![0.8, 0.7, 0.6, 0.9],
                truncated: false,
            },
            EncoderStates { h, reduction_factor: 4 },
        )
    }

    #[test]
    fn extraction_reads_attended_rows() {
        let (d, enc) = decode_fixture();
        let b = predict_boundaries(&d.utt_id, &d.trace, &d.hypothesis, FrameMapping::WindowStart).unwrap();
        let v = extract_embeddings(&d, &b, &enc, true).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v[0].vector, enc.h.row(1));
        assert_eq!(v[1].vector, enc.h.row(3));
        assert_eq!(v[2].vector, enc.h.row(2));
        assert_eq!((v[3].word.as_str(), v[3].position), (EOS, 3));
        assert_eq!(v[3].vector, enc.h.row(3));
        let v = extract_embeddings(&d, &b, &enc, false).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|x| x.vector.len() == 2));
    }

    #[test]
    fn out_of_range_frame_rejected() {
        let (d, _) = decode_fixture();
        let b = predict_boundaries(&d.utt_id, &d.trace, &d.hypothesis, FrameMapping::WindowStart).unwrap();
        let small = EncoderStates {
            h: Tensor::matrix(2, 2, vec![1.0; 4]).unwrap(),
            reduction_factor: 4,
        };
        assert!(matches!(extract_embeddings(&d, &b, &small, false), Err(Error::Domain(_))));
    }

    #[test]
    fn purity_on_clusters() {
        let mk = |w: &str, x: f64, y: f64| SpeechWordVector {
            utt_id: "u".into(),
            word: w.into(),
            position: 0,
            vector: vec![x, y],
        };
        let v = vec![mk("a", 1.0, 0.1), mk("a", 1.0, 0.0), mk("b", 0.0, 1.0), mk("b", 0.1, 1.0), mk("c", 0.7, 0.7)];
        let (rate, n) = same_word_purity(&v, 2, Metric::Cosine).unwrap();
        assert_eq!((rate, n), (1.0, 4));
        assert!(same_word_purity(&v, 9, Metric::Cosine).is_err());
    }

    #[test]
    fn pca_collinear_has_zero_second_variance() {
        let data = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![2.0, 4.0], vec![-1.0, -2.0]]).unwrap();
        let p = pca_project(&data).unwrap();
        assert!(p.explained_variance_ratio[1].abs() < 1e-12);
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        for i in 0..4 {
            assert!(p.coords.get2(i, 1).abs() < 1e-12);
        }
        let c = p.components.row(0);
        assert!(c[1] > 0.0 && c[1].abs() >= c[0].abs());
    }

    #[test]
    fn pca_needs_two_points() {
        let data = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(pca_project(&data), Err(Error::Domain(_))));
    }

    #[test]
    fn sampling_is_seeded_and_sorted() {
        let a = sample_indices(1000, 300, &mut crate::numerics::Rng::new(3));
        let b = sample_indices(1000, 300, &mut crate::numerics::Rng::new(3));
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_indices(5, 300, &mut crate::numerics::Rng::new(3)), vec![0, 1, 2, 3, 4]);
    }

    proptest! {
        #[test]
        fn pca_on_2d_is_isometry(pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..12)) {
            let rows: Vec<Vec<f64>> = pts.iter().map(|&(x, y)| vec![x, y]).collect();
            let data = Tensor::from_rows(&rows).unwrap();
            let p = pca_project(&data).unwrap();
            prop_assert!(p.explained_variance_ratio.iter().sum::<f64>() <= 1.0 + 1e-12);
            for i in 0..rows.len() {
                for j in 0..rows.len() {
                    let d0 = ((rows[i][0] - rows[j][0]).powi(2) + (rows[i][1] - rows[j][1]).powi(2)).sqrt();
                    let d1 = ((p.coords.get2(i, 0) - p.coords.get2(j, 0)).powi(2)
                        + (p.coords.get2(i, 1) - p.coords.get2(j, 1)).powi(2)).sqrt();
                    prop_assert!((d0 - d1).abs() < 1e-9);
                }
                // reconstruct
                for k in 0..2 {
                    let r = p.coords.get2(i, 0) * p.components.get2(0, k) + p.coords.get2(i, 1) * p.components.get2(1, k);
                    prop_assert!((r - (rows[i][k] - p.mean[k])).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn cosine_ranking_scale_invariant(
            vs in proptest::collection::vec(proptest::collection::vec(0.1f64..5.0, 3), 2..10),
            s in 0.01f64..100.0,
        ) {
            let pool: Vec<&[f64]> = vs[1..].iter().map(|v| v.as_slice()).collect();
            let scaled: Vec<Vec<f64>> = vs[1..].iter().map(|v| v.iter().map(|x| x * s).collect()).collect();
            let spool: Vec<&[f64]> = scaled.iter().map(|v| v.as_slice()).collect();
            let a = nearest_neighbors(&vs[0], &pool, pool.len(), Metric::Cosine).unwrap();
            let b = nearest_neighbors(&vs[0], &spool, pool.len(), Metric::Cosine).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.score - y.score).abs() < 1e-12);
            }
            // order only differs within ties below round-off
            for (x, y) in a.iter().zip(&b) {
                if x.index != y.index {
                    prop_assert!((x.score - a.iter().find(|n| n.index == y.index).unwrap().score).abs() < 1e-12);
                }
            }
        }
    }
}
