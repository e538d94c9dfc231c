//! Feature encodings shared by every predictor path.

use crate::diff::Tensor;
use crate::graph::SceneGraph;

use super::config::ModelConfig;

/// Data of one decoded relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeData {
    pub rel: u16,
    pub weight: Option<u8>,
}

/// One node's feature row: type one-hot followed by the box coordinates
/// normalised by the image size.
pub fn node_feature_row(
    cfg: &ModelConfig,
    type_id: u16,
    bbox: [u16; 4],
    width: u16,
    height: u16,
) -> Vec<f64> {
    let mut row = vec![0.0; cfg.feat()];
    row[type_id as usize] = 1.0;
    let t_o = cfg.t_o();
    row[t_o] = bbox[0] as f64 / width as f64;
    row[t_o + 1] = bbox[1] as f64 / height as f64;
    row[t_o + 2] = bbox[2] as f64 / width as f64;
    row[t_o + 3] = bbox[3] as f64 / height as f64;
    row
}

/// Feature matrix of a whole graph, one row per node.
pub fn node_features(cfg: &ModelConfig, g: &SceneGraph) -> Tensor {
    let mut t = Tensor::zeros(g.n(), cfg.feat());
    for (d, node) in g.nodes.iter().enumerate() {
        let row = node_feature_row(cfg, node.type_id, node.bbox, g.width, g.height);
        t.row_slice_mut(d).copy_from_slice(&row);
    }
    t
}

/// Both endpoint rows of `v` concatenated, one row per relation.
pub fn endpoint_features(v: &Tensor, endpoints: &[(usize, usize)]) -> Tensor {
    let f = v.cols();
    let mut t = Tensor::zeros(endpoints.len(), 2 * f);
    for (k, &(i, j)) in endpoints.iter().enumerate() {
        t.row_slice_mut(k)[..f].copy_from_slice(v.row_slice(i));
        t.row_slice_mut(k)[f..].copy_from_slice(v.row_slice(j));
    }
    t
}

/// A relation's own data columns: type one-hot plus the optional
/// normalised weight. Undecoded relations pass `None` and stay zero;
/// causal aggregation never reads them.
pub fn edge_data_rows(cfg: &ModelConfig, data: &[Option<EdgeData>]) -> Tensor {
    let mut t = Tensor::zeros(data.len(), cfg.edge_data());
    for (k, d) in data.iter().enumerate() {
        if let Some(d) = d {
            let row = t.row_slice_mut(k);
            row[d.rel as usize] = 1.0;
            if cfg.has_weights {
                row[cfg.t_r()] = d.weight.unwrap_or(0) as f64 / 255.0;
            }
        }
    }
    t
}

/// Full relation feature rows: endpoint node rows plus the relation's own
/// data columns from [`edge_data_rows`].
pub fn edge_features(
    cfg: &ModelConfig,
    v: &Tensor,
    endpoints: &[(usize, usize)],
    data: &[Option<EdgeData>],
) -> Tensor {
    assert_eq!(endpoints.len(), data.len());
    endpoint_features(v, endpoints).concat_cols(&edge_data_rows(cfg, data))
}

/// Inclusive symbol range of box coordinate `c` (x, y, w, h): positions
/// span the image from zero, extents start at one.
pub fn coord_range(width: u16, height: u16, c: usize) -> (i64, i64) {
    match c {
        0 => (0, width as i64 - 1),
        1 => (0, height as i64 - 1),
        2 => (1, width as i64),
        3 => (1, height as i64),
        _ => panic!("box coordinate index {c} out of range"),
    }
}

/// Image extent that normalises box coordinate `c`.
pub fn coord_scale(width: u16, height: u16, c: usize) -> u16 {
    match c {
        0 | 2 => width,
        1 | 3 => height,
        _ => panic!("box coordinate index {c} out of range"),
    }
}
