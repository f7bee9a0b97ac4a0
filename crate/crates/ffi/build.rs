use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("manifest dir"));
    let header = crate_dir.join("include").join("bbkit.h");

    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("BBKIT_H".to_string()),
        cpp_compat: true,
        documentation: true,
        header: Some(
            "/* C interface to bbkit, the blowback measurement toolkit.\n\
             * Generated by cbindgen; edit the Rust side instead. */"
                .to_string(),
        ),
        ..cbindgen::Config::default()
    };

    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(bindings) => {
            bindings.write_to_file(&header);
        }
        Err(err) => {
            // A stale header is better than no build; surface the problem
            // without failing the compile (cbindgen reruns next build).
            println!("cargo:warning=cbindgen failed: {err}");
        }
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=build.rs");
}
