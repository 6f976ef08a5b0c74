fn main() {
    std::process::exit(gatenet::cli::run(std::env::args_os()));
}
