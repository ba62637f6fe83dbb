//! Artifact persistence: the model JSON schema (a fitted or sampled state
//! plus its hyperparameters) and the TSV exports used for figures. JSON
//! floats are written with shortest-round-trip formatting, so save/load is
//! exact and repeated runs are byte-identical.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::diagnostics::GeometryReport;
use crate::error::{Error, Result};
use crate::evaluation::CircularLayout;
use crate::params::{node_embeddings, Hyperparams, ModelState};

/// Bumped whenever the model schema changes shape.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Row-major dense matrix payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_array(a: &Array2<f64>) -> Self {
        MatrixJson {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::BadModel(format!(
                "matrix payload holds {} values but claims {} x {}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .expect("length checked above"))
    }
}

/// The serialized model: enough state to score pairs, diagnose geometry, and
/// reconstruct the derived quantities (`B_k = W_k A`, hard assignments, Z).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub format_version: u32,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub n_nodes: usize,
    pub node_labels: Vec<String>,
    /// K x D archetype matrix.
    pub archetypes: MatrixJson,
    /// K barycentric hull matrices, each K x K.
    pub local_hull_weights: Vec<MatrixJson>,
    /// N x K node loadings.
    pub omega: MatrixJson,
    /// Hard hull assignment per node.
    pub assignments: Vec<usize>,
    /// Per-node degree bias.
    pub degree_bias: Vec<f64>,
    /// Interaction strength.
    pub scale: f64,
}

/// Packs a state into its serializable form.
pub fn model_from_state(
    state: &ModelState,
    hp: &Hyperparams,
    node_labels: &[String],
    seed: u64,
) -> SavedModel {
    SavedModel {
        format_version: MODEL_FORMAT_VERSION,
        hyperparams: hp.clone(),
        seed,
        n_nodes: state.z.nrows(),
        node_labels: node_labels.to_vec(),
        archetypes: MatrixJson::from_array(&state.a),
        local_hull_weights: state.w_tilde.iter().map(MatrixJson::from_array).collect(),
        omega: MatrixJson::from_array(&state.omega),
        assignments: state.assignments.clone(),
        degree_bias: state.g.to_vec(),
        scale: state.s,
    }
}

/// Rebuilds a validated state from a serialized model: hulls are pushed
/// through the archetypes, assignments become the one-hot membership, and
/// embeddings are reassembled on the spot.
pub fn state_from_model(model: &SavedModel) -> Result<(ModelState, Hyperparams, Vec<String>, u64)> {
    if model.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::BadModel(format!(
            "model format version {} is not the supported {}",
            model.format_version, MODEL_FORMAT_VERSION
        )));
    }
    let hp = model.hyperparams.clone();
    hp.validate()?;
    let n = model.n_nodes;
    let k = hp.k;
    if model.node_labels.len() != n
        || model.assignments.len() != n
        || model.degree_bias.len() != n
    {
        return Err(Error::BadModel(format!(
            "per-node fields disagree with n_nodes = {n}"
        )));
    }
    if model.local_hull_weights.len() != k {
        return Err(Error::BadModel(format!(
            "{} hull matrices for {} hulls",
            model.local_hull_weights.len(),
            k
        )));
    }
    let a = model.archetypes.to_array()?;
    if a.dim() != (k, hp.d) {
        return Err(Error::BadModel(format!(
            "archetype matrix is {:?}, expected ({}, {})",
            a.dim(),
            k,
            hp.d
        )));
    }
    let omega = model.omega.to_array()?;
    if omega.dim() != (n, k) {
        return Err(Error::BadModel(format!(
            "loading matrix is {:?}, expected ({n}, {k})",
            omega.dim()
        )));
    }
    let mut w_tilde = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    for (idx, w) in model.local_hull_weights.iter().enumerate() {
        let w = w.to_array()?;
        if w.dim() != (k, k) {
            return Err(Error::BadModel(format!(
                "hull matrix {idx} is {:?}, expected ({k}, {k})",
                w.dim()
            )));
        }
        b.push(w.dot(&a));
        w_tilde.push(w);
    }
    if let Some(&bad) = model.assignments.iter().find(|&&c| c >= k) {
        return Err(Error::BadModel(format!(
            "assignment {bad} outside the {k} hulls"
        )));
    }
    let mut m_soft = Array2::<f64>::zeros((n, k));
    for (i, &c) in model.assignments.iter().enumerate() {
        m_soft[(i, c)] = 1.0;
    }
    let z = node_embeddings(&m_soft, &omega, &b);
    if !(model.scale.is_finite() && model.scale > 0.0) {
        return Err(Error::BadModel(format!(
            "interaction strength {} is not positive",
            model.scale
        )));
    }
    let state = ModelState {
        a,
        w_tilde,
        b,
        m_soft,
        assignments: model.assignments.clone(),
        omega,
        z,
        g: model.degree_bias.clone().into(),
        s: model.scale,
    };
    state.validate(&hp)?;
    Ok((state, hp, model.node_labels.clone(), model.seed))
}

pub fn save_model(
    path: impl AsRef<Path>,
    state: &ModelState,
    hp: &Hyperparams,
    node_labels: &[String],
    seed: u64,
) -> Result<()> {
    let model = model_from_state(state, hp, node_labels, seed);
    let json = serde_json::to_string_pretty(&model)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelState, Hyperparams, Vec<String>, u64)> {
    let text = fs::read_to_string(path)?;
    let model: SavedModel = serde_json::from_str(&text)?;
    state_from_model(&model)
}

/// `node  hull  z_0 .. z_{D-1}` per row.
pub fn write_embeddings_tsv(
    path: impl AsRef<Path>,
    node_labels: &[String],
    state: &ModelState,
) -> Result<()> {
    let d = state.z.ncols();
    let mut out = String::from("node\thull");
    for c in 0..d {
        out.push_str(&format!("\tz{c}"));
    }
    out.push('\n');
    for i in 0..state.z.nrows() {
        out.push_str(&format!("{}\t{}", node_labels[i], state.assignments[i]));
        for c in 0..d {
            out.push_str(&format!("\t{}", state.z[(i, c)]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// `hull  rank  singular_value` per row, descending within each hull.
pub fn write_spectra_tsv(path: impl AsRef<Path>, report: &GeometryReport) -> Result<()> {
    let mut out = String::from("hull\trank\tsingular_value\n");
    for (hull, geom) in report.per_hull.iter().enumerate() {
        for (rank, sv) in geom.singular_values.iter().enumerate() {
            out.push_str(&format!("{hull}\t{rank}\t{sv}\n"));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// `node  hull  pc1  pc2` per row.
pub fn write_pca_tsv(
    path: impl AsRef<Path>,
    node_labels: &[String],
    assignments: &[usize],
    projection: &Array2<f64>,
) -> Result<()> {
    let mut out = String::from("node\thull\tpc1\tpc2\n");
    for i in 0..projection.nrows() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            node_labels[i],
            assignments[i],
            projection[(i, 0)],
            projection[(i, 1)]
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Node positions inside their hull's prototype polygon:
/// `node  hull  x  y` per row.
pub fn write_circular_tsv(
    path: impl AsRef<Path>,
    node_labels: &[String],
    assignments: &[usize],
    layout: &CircularLayout,
) -> Result<()> {
    let mut out = String::from("node\thull\tx\ty\n");
    for (i, xy) in layout.node_xy.iter().enumerate() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            node_labels[i], assignments[i], xy[0], xy[1]
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// The shared prototype anchor polygon: `prototype  x  y`.
pub fn write_circular_anchors_tsv(path: impl AsRef<Path>, layout: &CircularLayout) -> Result<()> {
    let mut out = String::from("prototype\tx\ty\n");
    for (r, xy) in layout.prototype_xy.iter().enumerate() {
        out.push_str(&format!("{r}\t{}\t{}\n", xy[0], xy[1]));
    }
    fs::write(path, out)?;
    Ok(())
}

/// The block-structured display order: `position  node` per row.
pub fn write_reorder_tsv(
    path: impl AsRef<Path>,
    node_labels: &[String],
    order: &[usize],
) -> Result<()> {
    let mut out = String::from("position\tnode\n");
    for (pos, &node) in order.iter().enumerate() {
        out.push_str(&format!("{pos}\t{}\n", node_labels[node]));
    }
    fs::write(path, out)?;
    Ok(())
}
