use std::path::PathBuf;
use std::process::Command;

// Embed an rpath to the libtorch shared libraries so test and binary targets
// run without LD_LIBRARY_PATH.
fn main() {
    println!("cargo:rerun-if-env-changed=LIBTORCH");
    println!("cargo:rerun-if-env-changed=LIBTORCH_LIB");
    let lib_dir = if let Ok(dir) = std::env::var("LIBTORCH_LIB") {
        Some(PathBuf::from(dir).join("lib"))
    } else if let Ok(dir) = std::env::var("LIBTORCH") {
        Some(PathBuf::from(dir).join("lib"))
    } else {
        Command::new("python3")
            .args([
                "-c",
                "import os, torch; print(os.path.join(os.path.dirname(torch.__file__), 'lib'))",
            ])
            .output()
            .ok()
            .filter(|o| o.status.success())
            .map(|o| PathBuf::from(String::from_utf8_lossy(&o.stdout).trim()))
    };
    if let Some(dir) = lib_dir {
        println!("cargo:rustc-link-arg=-Wl,-rpath,{}", dir.display());
    }
}
