fn main() {
    std::process::exit(asyncsgd::cli::run(std::env::args_os()));
}
