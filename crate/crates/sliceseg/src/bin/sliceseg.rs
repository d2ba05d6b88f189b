fn main() {
    std::process::exit(sliceseg::cli::run(std::env::args_os()));
}
