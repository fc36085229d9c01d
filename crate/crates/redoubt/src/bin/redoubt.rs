fn main() {
    std::process::exit(redoubt::cli::run());
}
