//! Scratch diagnostic for marker tracking (not part of the suite).
use arus_core::depthsim::{render_depth, to_point_cloud, DepthNoiseModel};
use arus_core::geom::{pose_offset, CameraIntrinsics, RigidTransform};
use arus_core::register::{track_step, IcpParams, TrackerState};
use arus_core::scene::{make_marker_mesh, MarkerParams};
use nalgebra::Vector3;

fn main() {
    let mesh = make_marker_mesh(&MarkerParams::default()).unwrap();
    let k = CameraIntrinsics::new(580.0, 580.0, 320.0, 240.0, 640, 480).unwrap();
    let mut truth = RigidTransform::from_euler_zyx_deg([5.0, -8.0, 10.0])
        .with_translation(Vector3::new(-18.0, -8.0, 500.0));
    let params = IcpParams::default();
    let map = render_depth(&mesh, &truth, &k, &DepthNoiseModel::NOISELESS, 0).unwrap();
    let cloud = to_point_cloud(&map);
    let (mut state, init_res) =
        TrackerState::initialize(&mesh, &cloud, &cloud.centroid(), 100.0, &params).unwrap();
    let off0 = pose_offset(&truth, &init_res.pose);
    println!("init: rms={:.4} off={:.4} euler={:?}", init_res.rms_residue, off0.center_offset, off0.euler_offsets);
    for step in 0..5 {
        truth = truth.with_translation(truth.translation() + Vector3::new(2.0, 0.0, 0.0));
        let map = render_depth(&mesh, &truth, &k, &DepthNoiseModel::NOISELESS, step).unwrap();
        let cloud = to_point_cloud(&map);
        let result = track_step(&mut state, &cloud, &params);
        let off = pose_offset(&truth, &result.pose);
        println!(
            "step {step}: lost={} iters={} rms={:.5} off={:.4} euler={:?} history_len={}",
            state.lost, result.iterations, result.rms_residue, off.center_offset, off.euler_offsets,
            result.rms_history.len()
        );
    }
}
