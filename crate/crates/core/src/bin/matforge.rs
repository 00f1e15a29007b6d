fn main() {
    std::process::exit(matforge::cli::run(std::env::args_os()));
}
