// regenerate the shipped pinned-scenario files from the builtin presets:
//   cargo run --release -p bb84sim-core --example gen_scenarios
use bb84sim_core::harness::{builtin_scenario, BUILTIN_SCENARIOS};

fn main() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    std::fs::create_dir_all(&dir).unwrap();
    for name in BUILTIN_SCENARIOS {
        let sc = builtin_scenario(name).unwrap();
        let path = dir.join(format!("{name}.toml"));
        std::fs::write(&path, sc.to_toml_string()).unwrap();
        println!("wrote {} (hash {:016x})", path.display(), sc.hash());
    }
}
