fn main() {
    std::process::exit(agbp::cli::run(std::env::args()));
}
