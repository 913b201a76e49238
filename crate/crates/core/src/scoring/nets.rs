//! Reconstruction networks and their batched tape forward passes.
//!
//! Both networks read rows `[position − anchor ‖ feature]`, encode each row,
//! max-pool over the rows of a group and decode the pooled vector into
//! offsets that are added back to the anchor. The anchor is the centroid of
//! the rows being read, which makes predictions translation-equivariant and
//! independent of row order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Mlp, ParamStore, Tape, Var};
use crate::error::{invalid_arg, Result};
use crate::geometry::{centroid_of, Patch, Point3};
use crate::tensor::Tensor;

/// Widths of the reconstruction networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconShape {
    pub feat_dim: usize,
    pub hidden: usize,
    /// Neighbourhood / patch size.
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointReconNet {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeReconNet {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub k: usize,
}

/// The point and shape reconstruction networks of one sampling stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconNets {
    pub shape: ReconShape,
    pub point: PointReconNet,
    pub patch: ShapeReconNet,
}

impl ReconNets {
    pub fn new(store: &mut ParamStore, name: &str, shape: ReconShape, rng: &mut impl Rng) -> Result<Self> {
        if shape.k < 2 || shape.k % 2 != 0 {
            return invalid_arg(format!("neighbourhood size must be even and >= 2, got {}", shape.k));
        }
        let input = 3 + shape.feat_dim;
        let h = shape.hidden;
        let point = PointReconNet {
            encoder: Mlp::new(store, &format!("{name}.point.enc"), &[input, h, h], true, rng)?,
            decoder: Mlp::new(store, &format!("{name}.point.dec"), &[h, h, 3], false, rng)?,
        };
        let patch = ShapeReconNet {
            encoder: Mlp::new(store, &format!("{name}.shape.enc"), &[input, h, h], true, rng)?,
            decoder: Mlp::new(store, &format!("{name}.shape.dec"), &[h, h, 3 * shape.k], false, rng)?,
            k: shape.k,
        };
        Ok(Self { shape, point, patch })
    }

    pub fn k(&self) -> usize {
        self.shape.k
    }
}

/// Tape outputs of point reconstruction for a batch of centres.
#[derive(Debug, Clone, Copy)]
pub struct PointRecon {
    /// `n×3` predicted coordinates.
    pub predicted: Var,
    /// `n×1` Euclidean errors.
    pub losses: Var,
}

/// Tape outputs of shape reconstruction for a batch of patches.
#[derive(Debug, Clone, Copy)]
pub struct ShapeRecon {
    /// `(patches·k)×3`, rows aligned with each patch's `members`.
    pub predicted: Var,
    /// `patches×1` summed member errors.
    pub losses: Var,
}

/// Builds the `[p − anchor ‖ feature]` input rows for groups of indices.
fn grouped_input(
    tape: &mut Tape,
    coords: &[Point3],
    feats: Var,
    groups: &[&[usize]],
) -> Result<(Var, Vec<Point3>)> {
    let total: usize = groups.iter().map(|g| g.len()).sum();
    let mut rel = Vec::with_capacity(total * 3);
    let mut flat = Vec::with_capacity(total);
    let mut anchors = Vec::with_capacity(groups.len());
    for g in groups {
        let c = centroid_of(g.iter().map(|&i| &coords[i]));
        for &i in *g {
            let p = coords[i];
            rel.extend_from_slice(&[p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
            flat.push(i);
        }
        anchors.push(c);
    }
    let rel = tape.constant(Tensor::from_vec(total, 3, rel)?)?;
    let gathered = tape.gather_rows(feats, &flat)?;
    Ok((tape.concat_cols(&[rel, gathered])?, anchors))
}

fn check_feats(tape: &Tape, feats: Var, coords: &[Point3], feat_dim: usize) -> Result<()> {
    let f = tape.value(feats);
    if f.rows() != coords.len() || f.cols() != feat_dim {
        return invalid_arg(format!(
            "features are {:?}, expected {}x{feat_dim}",
            f.shape(),
            coords.len()
        ));
    }
    Ok(())
}

/// Reconstructs each point of `centers` from its neighbour list.
///
/// `neighbors[i]` must not contain `centers[i]`; all lists have length `k`.
pub fn point_reconstruction(
    tape: &mut Tape,
    bound: &Bound,
    nets: &ReconNets,
    coords: &[Point3],
    feats: Var,
    centers: &[usize],
    neighbors: &[Vec<usize>],
) -> Result<PointRecon> {
    check_feats(tape, feats, coords, nets.shape.feat_dim)?;
    let k = nets.k();
    if centers.len() != neighbors.len() || centers.is_empty() {
        return invalid_arg("point reconstruction needs one neighbour list per centre");
    }
    for (c, nb) in centers.iter().zip(neighbors) {
        if nb.len() != k {
            return invalid_arg(format!("neighbour list of {c} has {} entries, expected {k}", nb.len()));
        }
        if nb.contains(c) {
            return invalid_arg(format!("neighbour list of {c} contains the centre itself"));
        }
    }
    let groups: Vec<&[usize]> = neighbors.iter().map(Vec::as_slice).collect();
    let (input, anchors) = grouped_input(tape, coords, feats, &groups)?;
    let h = nets.point.encoder.forward(tape, bound, input)?;
    let pooled = tape.segment_max(h, k)?;
    let offsets = nets.point.decoder.forward(tape, bound, pooled)?;
    let anchors = tape.constant(Tensor::from_points(&anchors))?;
    let predicted = tape.add(offsets, anchors)?;
    let targets: Vec<Point3> = centers.iter().map(|&c| coords[c]).collect();
    let targets = tape.constant(Tensor::from_points(&targets))?;
    let diff = tape.sub(predicted, targets)?;
    let losses = tape.l2_norm_rows(diff)?;
    Ok(PointRecon { predicted, losses })
}

/// Reconstructs every member of each patch from its retained half.
pub fn shape_reconstruction(
    tape: &mut Tape,
    bound: &Bound,
    nets: &ReconNets,
    coords: &[Point3],
    feats: Var,
    patches: &[Patch],
) -> Result<ShapeRecon> {
    check_feats(tape, feats, coords, nets.shape.feat_dim)?;
    let k = nets.k();
    if patches.is_empty() {
        return invalid_arg("shape reconstruction of zero patches");
    }
    for p in patches {
        if p.members.len() != k || p.retained.len() != k / 2 || p.removed.len() != k / 2 {
            return invalid_arg(format!(
                "patch around {} does not match patch size {k} with equal halves",
                p.center
            ));
        }
        if p.retained.is_empty() {
            return invalid_arg("patch has an empty retained set");
        }
    }
    let groups: Vec<&[usize]> = patches.iter().map(|p| p.retained.as_slice()).collect();
    let (input, anchors) = grouped_input(tape, coords, feats, &groups)?;
    let h = nets.patch.encoder.forward(tape, bound, input)?;
    let pooled = tape.segment_max(h, k / 2)?;
    let offsets = nets.patch.decoder.forward(tape, bound, pooled)?;
    let offsets = tape.reshape(offsets, patches.len() * k, 3)?;
    let mut anchor_rows = Vec::with_capacity(patches.len() * k);
    let mut targets = Vec::with_capacity(patches.len() * k);
    for (p, a) in patches.iter().zip(&anchors) {
        anchor_rows.extend(std::iter::repeat_n(*a, k));
        targets.extend(p.members.iter().map(|&i| coords[i]));
    }
    let anchor_rows = tape.constant(Tensor::from_points(&anchor_rows))?;
    let predicted = tape.add(offsets, anchor_rows)?;
    let targets = tape.constant(Tensor::from_points(&targets))?;
    let diff = tape.sub(predicted, targets)?;
    let per_member = tape.l2_norm_rows(diff)?;
    let losses = tape.segment_sum(per_member, k)?;
    Ok(ShapeRecon { predicted, losses })
}
