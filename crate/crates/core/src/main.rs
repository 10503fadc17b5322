fn main() {
    std::process::exit(sparsepmm::cli::run());
}
