//! Mesh graph-network dynamics: graph construction, message passing, Verlet
//! integration with shape-matching projection, training, and reverse-mode
//! gradients through whole rollouts.

pub mod checkpoint;
mod graph;
mod model;
mod rollout;
mod shape;
pub mod tape;
mod train;

pub use graph::{
    detect_contacts, mesh_node_dim, object_node_dim, BodyPose, DynamicsGraph, EdgeSet, FaceEdgeSet, FrozenContact, GraphGrads, PoseGrad,
    Topology, EDGE_DIM, FACE_EDGE_DIM,
};
pub use model::{Architecture, Forward, GnnModel, Mlp, Normalizer, Stats, STD_FLOOR};
pub use rollout::{
    build_graph, graph_d_eps, history_poses, rollout, rollout_frozen, rollout_gradient, scene_history, verlet_step, LossSpec, RolloutGradient,
};
pub use shape::{shape_match, shape_match_adjoint, ShapeMatch};
pub use train::{
    batch_graphs, evaluate_rollout, mean_rollout_error, one_step_errors, one_step_mse, train, train_from, AdamState, CurvePoint, RolloutErrors, TrainConfig,
    TrainOutcome, GRAVITY,
};
