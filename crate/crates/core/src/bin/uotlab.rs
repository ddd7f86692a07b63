fn main() {
    std::process::exit(uotlab::cli::run(std::env::args_os()));
}
