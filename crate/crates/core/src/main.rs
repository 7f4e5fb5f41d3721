fn main() {
    std::process::exit(epdgscan::cli::run());
}
