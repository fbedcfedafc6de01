fn main() {
    std::process::exit(laneseg::cli::run(std::env::args_os()));
}
