//! Embedding export and a two-component PCA projection.

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::forecast::embed_samples;
use crate::pipeline::WindowSample;
use crate::seq2seq::{EmbeddingSource, Seq2SeqModel};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub series_id: String,
    pub window_end_date: NaiveDate,
    /// Day of week of the window's last day, Monday = 0.
    pub dow: u32,
    pub values: Vec<f64>,
}

/// One row per window with its deterministic embedding.
pub fn export_embeddings(
    model: &Seq2SeqModel,
    dataset: &[WindowSample],
    source: EmbeddingSource,
) -> Result<Vec<EmbeddingRow>> {
    if dataset.is_empty() {
        return Ok(Vec::new());
    }
    let emb = embed_samples(model, dataset, source)?;
    Ok(dataset
        .iter()
        .zip(emb.rows())
        .map(|(s, e)| EmbeddingRow {
            series_id: s.series_id.clone(),
            window_end_date: s.end_date,
            dow: s.end_date.weekday().num_days_from_monday(),
            values: e.to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    /// Eigenvalues of the two retained components, descending.
    pub variances: [f64; 2],
    /// Unit loading vectors of the two components.
    pub components: [Vec<f64>; 2],
    /// Set when the input has no variance; `points` are then all zero.
    pub degenerate: bool,
}

/// Projects mean-centred rows onto the two leading principal components.
/// Each component's largest-magnitude loading is made positive.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Projection> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n < 2 || d < 2 {
        return Err(Error::shape(format!(
            "PCA needs at least 2 rows of width >= 2, got {n} x {d}"
        )));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape("PCA rows differ in width"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::numeric("PCA input contains a non-finite value"));
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    if cov.iter().all(|&v| v == 0.0) {
        log::warn!("PCA input has zero variance; returning zeros");
        return Ok(Projection {
            points: vec![[0.0; 2]; n],
            variances: [0.0; 2],
            components: [vec![0.0; d], vec![0.0; d]],
            degenerate: true,
        });
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let component = |k: usize| {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let components = [component(0), component(1)];
    let points = (0..n)
        .map(|i| {
            let row = centred.row(i);
            let dot = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [dot(&components[0]), dot(&components[1])]
        })
        .collect();
    Ok(Projection {
        points,
        variances: [
            eig.eigenvalues[order[0]].max(0.0),
            eig.eigenvalues[order[1]].max(0.0),
        ],
        components,
        degenerate: false,
    })
}

/// `series_id,window_end_date,dow,e_0..e_{k-1}` plus `pc1,pc2` when a
/// projection is given.
pub fn embeddings_csv(rows: &[EmbeddingRow], projection: Option<&Projection>) -> Result<String> {
    let width = rows.first().map_or(0, |r| r.values.len());
    if let Some(p) = projection {
        if p.points.len() != rows.len() {
            return Err(Error::shape(
                "projection and embedding rows differ in count",
            ));
        }
    }
    let mut out = String::from("series_id,window_end_date,dow");
    for k in 0..width {
        out.push_str(&format!(",e_{k}"));
    }
    if projection.is_some() {
        out.push_str(",pc1,pc2");
    }
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&format!("{},{},{}", r.series_id, r.window_end_date, r.dow));
        for v in &r.values {
            out.push_str(&format!(",{v}"));
        }
        if let Some(p) = projection {
            out.push_str(&format!(",{},{}", p.points[i][0], p.points[i][1]));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair_projects_to_axis() {
        let mut a = vec![0.0; 5];
        a[0] = 1.0;
        let mut b = vec![0.0; 5];
        b[0] = -1.0;
        let p = pca_2d(&[a, b]).unwrap();
        assert!((p.points[0][0].abs() - 1.0).abs() < 1e-12);
        assert!((p.points[0][0] + p.points[1][0]).abs() < 1e-12);
        assert!(p.points[0][1].abs() < 1e-12 && p.points[1][1].abs() < 1e-12);
        assert!(p.components[0][0] > 0.0);
    }

    #[test]
    fn constant_rows_are_degenerate() {
        let p = pca_2d(&vec![vec![2.0, 3.0, 4.0]; 4]).unwrap();
        assert!(p.degenerate);
        assert!(p.points.iter().all(|q| *q == [0.0, 0.0]));
    }

    #[test]
    fn too_few_rows_or_columns_rejected() {
        assert!(pca_2d(&[vec![1.0, 2.0]]).is_err());
        assert!(pca_2d(&[vec![1.0], vec![2.0], vec![3.0]]).is_err());
        assert!(pca_2d(&[vec![1.0, 2.0], vec![2.0]]).is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = vec![EmbeddingRow {
            series_id: "s".into(),
            window_end_date: NaiveDate::from_ymd_opt(2016, 3, 7).unwrap(),
            dow: 0,
            values: vec![0.5, -1.0],
        }];
        assert_eq!(
            embeddings_csv(&rows, None).unwrap(),
            "series_id,window_end_date,dow,e_0,e_1\ns,2016-03-07,0,0.5,-1\n"
        );
    }
}
