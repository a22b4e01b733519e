fn main() {
    std::process::exit(sparseg::cli::run(std::env::args_os()));
}
