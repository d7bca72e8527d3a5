//! Writes the embedded quadrotor hover linearization to a TOML model file
//! (regenerates configs/quadrotor-model.toml).

use sgmpc::default_quadrotor_model;

fn main() {
    let model = default_quadrotor_model();
    let text = toml::to_string(&model).expect("serializable model");
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "configs/quadrotor-model.toml".into());
    std::fs::write(&path, text).expect("write model file");
    println!("wrote {path}");
}
