fn main() {
    std::process::exit(mvstm::cli::run(std::env::args_os()));
}
