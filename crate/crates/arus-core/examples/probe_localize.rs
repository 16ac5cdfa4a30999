//! Scratch diagnostic for localization convergence (not part of the suite).
use arus_core::depthsim::{render_depth, to_point_cloud, DepthNoiseModel};
use arus_core::geom::{pose_offset, CameraIntrinsics, RigidTransform};
use arus_core::register::{localize_model, sample_mesh_surface, IcpParams};
use arus_core::scene::{make_marker_mesh, MarkerParams};
use nalgebra::Vector3;

fn main() {
    let mesh = make_marker_mesh(&MarkerParams::default()).unwrap();
    let truth = RigidTransform::from_euler_zyx_deg([10.0, 15.0, -20.0])
        .with_translation(Vector3::new(-15.0, -12.0, 500.0));
    let k = CameraIntrinsics::new(580.0, 580.0, 320.0, 240.0, 640, 480).unwrap();
    let map = render_depth(&mesh, &truth, &k, &DepthNoiseModel::NOISELESS, 0).unwrap();
    let cloud = to_point_cloud(&map);
    println!("cloud: {} points, centroid {:?}", cloud.len(), cloud.centroid());
    let model = sample_mesh_surface(&mesh, 3.0);
    println!("model: {} points", model.points.len());
    let true_cloud_centroid_model = arus_core::geom::invert(&truth).transform_point(&cloud.centroid());
    println!("cloud centroid in model frame: {:?} (model centroid {:?})",
        true_cloud_centroid_model, mesh.centroid());

    let params = IcpParams::default();
    let result = localize_model(&mesh, &cloud, &cloud.centroid(), 100.0, &params).unwrap();
    let off = pose_offset(&truth, &result.pose);
    println!(
        "converged={} iters={} rms={:.4} center_off={:.4} euler={:?}",
        result.converged, result.iterations, result.rms_residue, off.center_offset, off.euler_offsets
    );
    println!("history: {:?}", result.rms_history.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    let t_err = truth.translation() - result.pose.translation();
    println!("translation error vector: {:?}", t_err);
}
