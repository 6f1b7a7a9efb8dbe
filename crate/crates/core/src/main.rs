fn main() {
    flocklab::cli::init_logging();
    std::process::exit(flocklab::cli::run(std::env::args_os()));
}
