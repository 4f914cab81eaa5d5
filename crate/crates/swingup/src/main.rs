fn main() {
    std::process::exit(swingup::cli::run());
}
