fn main() {
    std::process::exit(dire_cli::run(std::env::args()));
}
