fn main() {
    std::process::exit(ctrecon::cli::run(std::env::args()));
}
