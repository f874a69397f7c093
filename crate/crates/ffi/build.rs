fn main() {
    #[cfg(feature = "cbindgen")]
    {
        let dir = std::env::var("CARGO_MANIFEST_DIR").expect("set by cargo");
        let config = cbindgen::Config::from_file(format!("{dir}/cbindgen.toml")).expect("cbindgen.toml");
        cbindgen::Builder::new()
            .with_crate(&dir)
            .with_config(config)
            .generate()
            .expect("header generation")
            .write_to_file(format!("{dir}/include/trajseg.h"));
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
