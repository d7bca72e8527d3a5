fn main() {
    std::process::exit(sgmpc::cli::run(std::env::args()));
}
