fn main() {
    std::process::exit(fvlab_core::cli::run(std::env::args_os()));
}
