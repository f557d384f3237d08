fn main() {
    std::process::exit(dynident::cli::run());
}
