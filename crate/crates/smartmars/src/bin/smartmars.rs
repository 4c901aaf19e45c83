fn main() {
    std::process::exit(smartmars::cli::main());
}
