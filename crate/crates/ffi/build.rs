use std::env;
use std::path::Path;

fn main() {
    let crate_dir = env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR set");
    let out_dir = env::var("OUT_DIR").expect("OUT_DIR set");
    let header = Path::new(&out_dir).join("dialact.h");
    let config = cbindgen::Config::from_file(Path::new(&crate_dir).join("cbindgen.toml"))
        .expect("cbindgen.toml parses");
    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("header generation")
        .write_to_file(&header);
    // keep a copy where C consumers expect it
    let include = Path::new(&crate_dir).join("include");
    std::fs::create_dir_all(&include).expect("create include dir");
    std::fs::copy(&header, include.join("dialact.h")).expect("copy header");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
