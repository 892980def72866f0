fn main() {
    std::process::exit(cwopt::cli::main());
}
