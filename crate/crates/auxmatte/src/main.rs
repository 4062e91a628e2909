fn main() {
    std::process::exit(auxmatte::cli::run());
}
