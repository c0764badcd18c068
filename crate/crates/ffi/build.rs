use std::env;
use std::path::PathBuf;

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let crate_dir = env::var("CARGO_MANIFEST_DIR").unwrap();
    let out = PathBuf::from(env::var("OUT_DIR").unwrap()).join("jumpflow.h");
    // generate next to the build artifacts; a test compares this against the
    // committed include/jumpflow.h so drift cannot go unnoticed
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(&out);
            println!("cargo:rustc-env=JF_GENERATED_HEADER={}", out.display());
        }
        Err(e) => panic!("header generation failed: {e}"),
    }
}
