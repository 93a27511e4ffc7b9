use std::process::Command;

fn main() {
    let hash = Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string());
    if let Some(h) = hash {
        println!("cargo:rustc-env=SGAFEM_GIT_HASH={h}");
    }
    println!("cargo:rerun-if-changed=build.rs");
}
