fn main() {
    std::process::exit(kqr::cli::run(std::env::args_os()));
}
