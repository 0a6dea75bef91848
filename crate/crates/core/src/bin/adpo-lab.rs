fn main() {
    std::process::exit(adpo_lab::cli::main());
}
