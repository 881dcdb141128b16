// LAPACK/BLAS backend: link the distribution's OpenBLAS directly instead of
// going through openblas-src (which wants to download or rebuild OpenBLAS).
fn main() {
    let candidates = [
        "/usr/lib/x86_64-linux-gnu/openblas-pthread",
        "/usr/lib/x86_64-linux-gnu/openblas-serial",
        "/usr/lib/x86_64-linux-gnu",
        "/usr/lib64",
        "/usr/lib",
    ];
    for dir in candidates {
        if std::path::Path::new(dir).join("libopenblas.so").exists()
            || std::path::Path::new(dir).join("libopenblas.a").exists()
        {
            println!("cargo:rustc-link-search=native={dir}");
            break;
        }
    }
    println!("cargo:rustc-link-lib=dylib=openblas");
}
