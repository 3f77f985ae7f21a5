fn main() {
    std::process::exit(brook::cli::run(std::env::args()));
}
