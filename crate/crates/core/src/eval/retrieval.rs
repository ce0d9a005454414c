use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub topk: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_at_r: Option<f64>,
    pub excluded_queries: usize,
    /// Set when some requested `k` exceeded the gallery and was clamped.
    pub k_clamped: bool,
}

fn check_dims(
    query: ArrayView2<f64>,
    gallery: ArrayView2<f64>,
    qc: usize,
    gc: usize,
) -> Result<()> {
    if query.ncols() != gallery.ncols() {
        return Err(Error::Structural(format!(
            "query width {} differs from gallery width {}",
            query.ncols(),
            gallery.ncols()
        )));
    }
    if query.nrows() != qc || gallery.nrows() != gc {
        return Err(Error::Structural(
            "embeddings and class lists differ in length".into(),
        ));
    }
    if gallery.nrows() == 0 {
        return Err(Error::EmptyInput("gallery is empty"));
    }
    Ok(())
}

/// Gallery indices by descending inner product with `q`, ties by index.
pub fn rank_gallery(q: ndarray::ArrayView1<f64>, gallery: ArrayView2<f64>) -> Vec<usize> {
    let scores: Vec<f64> = gallery.rows().into_iter().map(|g| g.dot(&q)).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Fraction of queries with a same-class gallery item among the top `k`.
pub fn topk_retrieval<C: PartialEq>(
    query: ArrayView2<f64>,
    gallery: ArrayView2<f64>,
    query_classes: &[C],
    gallery_classes: &[C],
    ks: &[usize],
) -> Result<RetrievalReport> {
    check_dims(query, gallery, query_classes.len(), gallery_classes.len())?;
    let n = gallery.nrows();
    let mut report = RetrievalReport::default();
    // rank (1-based) of the first relevant item per query
    let first_hit: Vec<Option<usize>> = query
        .rows()
        .into_iter()
        .zip(query_classes)
        .map(|(q, c)| {
            rank_gallery(q, gallery)
                .iter()
                .position(|&g| gallery_classes[g] == *c)
                .map(|p| p + 1)
        })
        .collect();
    for &k in ks {
        let eff = if k > n {
            report.k_clamped = true;
            n
        } else {
            k
        };
        let hits = first_hit
            .iter()
            .filter(|h| h.is_some_and(|r| r <= eff))
            .count();
        let acc = if first_hit.is_empty() {
            0.0
        } else {
            hits as f64 / first_hit.len() as f64
        };
        report.topk.insert(k, acc);
    }
    Ok(report)
}

/// Mean over queries of `(1/R) Σ_{i≤R} P(i)·rel(i)`, with `R` the number of
/// same-class gallery items. Queries with `R = 0` are excluded and counted.
/// Returns `(value, excluded)`.
pub fn map_at_r<C: PartialEq>(
    query: ArrayView2<f64>,
    gallery: ArrayView2<f64>,
    query_classes: &[C],
    gallery_classes: &[C],
) -> Result<(f64, usize)> {
    check_dims(query, gallery, query_classes.len(), gallery_classes.len())?;
    let mut total = 0.0;
    let mut included = 0;
    let mut excluded = 0;
    for (q, c) in query.rows().into_iter().zip(query_classes) {
        let r = gallery_classes.iter().filter(|g| *g == c).count();
        if r == 0 {
            excluded += 1;
            continue;
        }
        let ranking = rank_gallery(q, gallery);
        let mut relevant = 0;
        let mut ap = 0.0;
        for (i, &g) in ranking.iter().take(r).enumerate() {
            if gallery_classes[g] == *c {
                relevant += 1;
                ap += relevant as f64 / (i + 1) as f64;
            }
        }
        total += ap / r as f64;
        included += 1;
    }
    if included == 0 {
        return Err(Error::UndefinedMetric(
            "no query has a relevant gallery item",
        ));
    }
    Ok((total / included as f64, excluded))
}

/// Top-k accuracies plus MAP@R in one report; MAP@R is left out when every
/// query is excluded.
pub fn retrieval_report<C: PartialEq>(
    query: ArrayView2<f64>,
    gallery: ArrayView2<f64>,
    query_classes: &[C],
    gallery_classes: &[C],
    ks: &[usize],
) -> Result<RetrievalReport> {
    let mut report = topk_retrieval(query, gallery, query_classes, gallery_classes, ks)?;
    match map_at_r(query, gallery, query_classes, gallery_classes) {
        Ok((v, excluded)) => {
            report.map_at_r = Some(v);
            report.excluded_queries = excluded;
        }
        Err(Error::UndefinedMetric(_)) => report.excluded_queries = query.nrows(),
        Err(e) => return Err(e),
    }
    Ok(report)
}
