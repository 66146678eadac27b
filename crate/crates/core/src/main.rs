fn main() {
    std::process::exit(nuer_core::cli::run(std::env::args_os()));
}
