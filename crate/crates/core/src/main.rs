fn main() {
    std::process::exit(flowfair::cli::run(std::env::args_os()));
}
