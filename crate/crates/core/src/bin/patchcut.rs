fn main() {
    std::process::exit(patchcut::cli::main());
}
