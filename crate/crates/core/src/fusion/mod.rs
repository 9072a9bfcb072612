//! Pose-graph fusion of SE(3) odometry edges with SO(3)-only rotation
//! beliefs.
//!
//! Graph nodes store world-frame poses `T_{w,i}`; edges carry relative
//! to-from measurements. For a pose pair the residuals are
//! `δξ = Log((T_{2,w} T_{1,w}⁻¹) T̂_{2,1}⁻¹)` on SE(3) and
//! `δφ = Log((R_{2,w} R_{1,w}ᵀ) R̂_{2,1}ᵀ)` on SO(3), and the fused pose
//! minimizes `δξᵀ Σ_vo⁻¹ δξ + δφᵀ Σ_hn⁻¹ δφ` with the first pose held
//! fixed. Relaxation walks the chain pair by pair in temporal order.

pub mod io;
pub mod metrics;

use nalgebra::{Cholesky, DMatrix, DVector, Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::se3::{PoseSE3, TangentSE3};
use crate::so3::{TangentSO3, UnitQuaternion};
use crate::uncertainty::CovSO3;

pub use metrics::{traj_metrics, TrajMetrics};

/// SE(3) odometry measurement `T̂_{to,from}` with a 6x6 covariance ordered
/// translation-first, matching [`TangentSE3`].
#[derive(Debug, Clone)]
pub struct OdomEdge {
    pub from: usize,
    pub to: usize,
    pub transform: PoseSE3,
    pub cov: Matrix6<f64>,
}

impl OdomEdge {
    pub fn new(from: usize, to: usize, transform: PoseSE3, cov: Matrix6<f64>) -> Result<Self> {
        let asym = (cov - cov.transpose()).norm();
        if asym > 1e-10 {
            return Err(Error::NotPositiveSemidefinite { reason: format!("asymmetry {asym:.3e}") });
        }
        let min_eig =
            cov.symmetric_eigenvalues().iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < -1e-10 {
            return Err(Error::NotPositiveSemidefinite {
                reason: format!("eigenvalue {min_eig:.3e}"),
            });
        }
        Ok(OdomEdge { from, to, transform, cov })
    }
}

/// SO(3)-only rotation measurement `R̂_{to,from}` with its tangent covariance.
#[derive(Debug, Clone)]
pub struct RotEdge {
    pub from: usize,
    pub to: usize,
    pub rotation: UnitQuaternion,
    pub cov: CovSO3,
}

/// Nodes (world-frame pose estimates), odometry edges, rotation edges, and
/// the gauge-fixing node id.
#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    pub nodes: BTreeMap<usize, PoseSE3>,
    pub odom_edges: Vec<OdomEdge>,
    pub rot_edges: Vec<RotEdge>,
    pub fixed: usize,
}

impl PoseGraph {
    pub fn validate(&self) -> Result<()> {
        if !self.nodes.contains_key(&self.fixed) {
            return Err(Error::InvalidConfig(format!("fixed node {} missing", self.fixed)));
        }
        for e in &self.odom_edges {
            if !self.nodes.contains_key(&e.from) || !self.nodes.contains_key(&e.to) {
                return Err(Error::MissingEdge { from: e.from, to: e.to });
            }
        }
        for e in &self.rot_edges {
            if !self.nodes.contains_key(&e.from) || !self.nodes.contains_key(&e.to) {
                return Err(Error::MissingEdge { from: e.from, to: e.to });
            }
        }
        Ok(())
    }
}

/// Residual pair for given world poses and measurements.
pub fn residuals(
    t1_w: &PoseSE3,
    t2_w: &PoseSE3,
    odom: &OdomEdge,
    rot: &RotEdge,
) -> (TangentSE3, TangentSO3) {
    // T_{2,w} T_{1,w}^{-1} with nodes stored as T_{w,i}.
    let rel = t2_w.inverse().compose(t1_w);
    let dxi = rel.compose(&odom.transform.inverse()).log();
    let rel_rot = t2_w.rotation.inverse().mul(&t1_w.rotation);
    let dphi = rel_rot.mul(&rot.rotation.inverse()).log();
    (dxi, dphi)
}

/// Looks up the pair's edges in the graph and evaluates [`residuals`].
pub fn pair_residuals(
    graph: &PoseGraph,
    from: usize,
    to: usize,
) -> Result<(TangentSE3, TangentSO3)> {
    let t1 = graph.nodes.get(&from).ok_or(Error::MissingEdge { from, to })?;
    let t2 = graph.nodes.get(&to).ok_or(Error::MissingEdge { from, to })?;
    let odom = graph
        .odom_edges
        .iter()
        .find(|e| e.from == from && e.to == to)
        .ok_or(Error::MissingEdge { from, to })?;
    let rot = graph
        .rot_edges
        .iter()
        .find(|e| e.from == from && e.to == to)
        .ok_or(Error::MissingEdge { from, to })?;
    Ok(residuals(t1, t2, odom, rot))
}

/// Gauss-Newton options for [`fuse_pair`].
#[derive(Debug, Clone, Copy)]
pub struct GnOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
    pub damping: f64,
}

impl Default for GnOptions {
    fn default() -> Self {
        GnOptions { tol: 1e-10, max_iterations: 50, fd_step: 1e-7, damping: 1e-8 }
    }
}

/// Result of a two-pose fusion.
#[derive(Debug, Clone)]
pub struct FusedPair {
    pub pose: PoseSE3,
    pub cost: f64,
    pub iterations: usize,
}

fn weight_matrix(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(cov.clone()).ok_or(Error::SingularCovariance)?;
    Ok(chol.inverse())
}

fn stacked_residual(
    t1: &PoseSE3,
    t2: &PoseSE3,
    odom: &OdomEdge,
    rot: &RotEdge,
) -> DVector<f64> {
    let (dxi, dphi) = residuals(t1, t2, odom, rot);
    let mut r = DVector::zeros(9);
    for k in 0..6 {
        r[k] = dxi[k];
    }
    for k in 0..3 {
        r[6 + k] = dphi[k];
    }
    r
}

/// Optimizes the second pose of a pair under both measurements, holding the
/// first fixed.
///
/// Gauss-Newton on the free pose's left tangent coordinates with central
/// finite-difference Jacobians; Levenberg damping grows from
/// `options.damping` whenever a step fails to decrease the cost, so the cost
/// sequence is non-increasing.
pub fn fuse_pair(
    t1_w: &PoseSE3,
    t2_init: &PoseSE3,
    odom: &OdomEdge,
    rot: &RotEdge,
    options: &GnOptions,
) -> Result<FusedPair> {
    let mut weight = DMatrix::zeros(9, 9);
    weight
        .view_mut((0, 0), (6, 6))
        .copy_from(&weight_matrix(&DMatrix::from_fn(6, 6, |i, j| odom.cov[(i, j)]))?);
    weight
        .view_mut((6, 6), (3, 3))
        .copy_from(&weight_matrix(&DMatrix::from_fn(3, 3, |i, j| rot.cov.matrix()[(i, j)]))?);

    let cost_of = |r: &DVector<f64>| (r.transpose() * &weight * r)[(0, 0)];

    let mut pose = *t2_init;
    let mut residual = stacked_residual(t1_w, &pose, odom, rot);
    let mut cost = cost_of(&residual);

    for iter in 0..options.max_iterations {
        // Central-difference Jacobian over the left perturbation
        // exp(δ eₖ) ∘ T₂.
        let mut jac = DMatrix::zeros(9, 6);
        for k in 0..6 {
            let mut delta = Vector6::zeros();
            delta[k] = options.fd_step;
            let plus = stacked_residual(t1_w, &PoseSE3::exp(&delta).compose(&pose), odom, rot);
            delta[k] = -options.fd_step;
            let minus = stacked_residual(t1_w, &PoseSE3::exp(&delta).compose(&pose), odom, rot);
            let col = (plus - minus) / (2.0 * options.fd_step);
            jac.set_column(k, &col);
        }

        let h = jac.transpose() * &weight * &jac;
        let g = jac.transpose() * &weight * &residual;

        let mut lambda = 0.0;
        let update = loop {
            let mut damped = h.clone();
            for k in 0..6 {
                damped[(k, k)] += lambda;
            }
            match Cholesky::new(damped) {
                Some(chol) => {
                    let step = chol.solve(&(-&g));
                    let candidate =
                        PoseSE3::exp(&Vector6::from_column_slice(step.as_slice())).compose(&pose);
                    let cand_residual = stacked_residual(t1_w, &candidate, odom, rot);
                    let cand_cost = cost_of(&cand_residual);
                    if cand_cost <= cost || step.norm() < options.tol {
                        pose = candidate;
                        residual = cand_residual;
                        cost = cand_cost.min(cost);
                        break step;
                    }
                }
                None => {}
            }
            lambda = if lambda == 0.0 { options.damping } else { lambda * 10.0 };
            if lambda > 1e12 {
                return Err(Error::SingularNormalEquations);
            }
        };

        if update.norm() < options.tol {
            return Ok(FusedPair { pose, cost, iterations: iter + 1 });
        }
    }
    Err(Error::NoConvergence { iterations: options.max_iterations, residual: cost })
}

/// Sequential pairwise relaxation along a chain graph.
///
/// Nodes are visited in ascending id order starting from the fixed node's
/// stored pose; each next pose is dead-reckoned from the odometry edge and
/// then fused with the pair's rotation edge when one exists.
pub fn relax_graph(graph: &PoseGraph, options: &GnOptions) -> Result<Vec<(usize, PoseSE3)>> {
    graph.validate()?;
    let ids: Vec<usize> = graph.nodes.keys().copied().collect();
    if ids.first() != Some(&graph.fixed) {
        return Err(Error::InvalidConfig(format!(
            "fixed node {} is not the first node of the chain",
            graph.fixed
        )));
    }
    let mut trajectory = Vec::with_capacity(ids.len());
    let mut current = graph.nodes[&graph.fixed];
    trajectory.push((graph.fixed, current));

    for pair in ids.windows(2) {
        let (from, to) = (pair[0], pair[1]);
        let odom = graph
            .odom_edges
            .iter()
            .find(|e| e.from == from && e.to == to)
            .ok_or(Error::MissingEdge { from, to })?;
        // Dead reckoning: T_{w,to} = T_{w,from} ∘ T̂_{to,from}⁻¹.
        let predicted = current.compose(&odom.transform.inverse());
        let next = match graph.rot_edges.iter().find(|e| e.from == from && e.to == to) {
            Some(rot) => fuse_pair(&current, &predicted, odom, rot, options)?.pose,
            None => predicted,
        };
        trajectory.push((to, next));
        current = next;
    }
    Ok(trajectory)
}

/// Synthetic odometry and rotation measurements for a ground-truth
/// trajectory of world poses.
///
/// Odometry edges are perturbed in the SE(3) tangent space with
/// `blockdiag(σ_trans² I, Σ_rot_vo)`; rotation edges are perturbed by
/// tangent-space injection with `Σ_rot_hn` after an optional fixed bias
/// rotation. Edges carry exactly the covariances used for sampling.
pub fn simulate_odometry(
    ground_truth: &[PoseSE3],
    sigma_trans: f64,
    sigma_rot_vo: &CovSO3,
    sigma_rot_hn: &CovSO3,
    rot_bias: &UnitQuaternion,
    rng: &mut ChaCha12Rng,
) -> Result<(Vec<OdomEdge>, Vec<RotEdge>)> {
    if ground_truth.len() < 2 {
        return Err(Error::TooFewSamples { got: ground_truth.len(), need: 2 });
    }
    let mut cov_vo = Matrix6::zeros();
    for k in 0..3 {
        cov_vo[(k, k)] = sigma_trans * sigma_trans;
    }
    for i in 0..3 {
        for j in 0..3 {
            cov_vo[(3 + i, 3 + j)] = sigma_rot_vo.matrix()[(i, j)];
        }
    }
    let rot_factor = sigma_rot_vo.sqrt_factor();
    let hn_factor = sigma_rot_hn.sqrt_factor();

    let mut odom = Vec::with_capacity(ground_truth.len() - 1);
    let mut rot = Vec::with_capacity(ground_truth.len() - 1);
    for k in 0..ground_truth.len() - 1 {
        let t_true = ground_truth[k + 1].inverse().compose(&ground_truth[k]);

        let mut xi = Vector6::zeros();
        for i in 0..3 {
            xi[i] = sigma_trans * rng.sample::<f64, _>(StandardNormal);
        }
        let z = Vector3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let rv = rot_factor * z;
        for i in 0..3 {
            xi[3 + i] = rv[i];
        }
        let measured = PoseSE3::exp(&xi).compose(&t_true);
        odom.push(OdomEdge::new(k, k + 1, measured, cov_vo)?);

        let z = Vector3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let eps = hn_factor * z;
        let measured_rot =
            UnitQuaternion::exp(&eps).mul(&rot_bias.mul(&t_true.rotation));
        rot.push(RotEdge { from: k, to: k + 1, rotation: measured_rot, cov: *sigma_rot_hn });
    }
    Ok((odom, rot))
}
