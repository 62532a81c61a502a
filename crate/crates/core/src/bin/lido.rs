fn main() {
    std::process::exit(lido::cli::run(std::env::args_os()));
}
