fn main() {
    std::process::exit(metre::cli::main());
}
