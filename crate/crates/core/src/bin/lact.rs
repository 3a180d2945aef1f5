fn main() {
    std::process::exit(lact::cli::run(std::env::args_os()));
}
