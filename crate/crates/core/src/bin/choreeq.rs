fn main() {
    choreeq::cli::init_logging();
    std::process::exit(choreeq::cli::run(std::env::args_os()));
}
