fn main() {
    std::process::exit(conf3d::cli::run());
}
