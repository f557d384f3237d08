//! Frame origins of both shipped arms at their zero motor pose.

use dynident::kinematics::frame_positions_motor;
use nalgebra::DVector;

fn main() -> dynident::Result<()> {
    for name in ["mtm", "psm"] {
        let model = dynident::shipped_model(name)?;
        let poses = frame_positions_motor(&model, &DVector::zeros(model.motor_count()));
        println!("{}", model.name());
        for (joint, pose) in model.joints().iter().zip(&poses) {
            let p = pose.translation;
            println!("  frame {:<6} [{:+.4}, {:+.4}, {:+.4}]", joint.name, p.x, p.y, p.z);
        }
    }
    Ok(())
}
