fn main() {
    std::process::exit(lowdiff::cli::run(std::env::args_os()));
}
