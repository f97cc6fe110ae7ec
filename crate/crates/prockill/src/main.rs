fn main() {
    std::process::exit(prockill::cli::run());
}
