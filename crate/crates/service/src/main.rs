fn main() {
    std::process::exit(biastest::cli::run(std::env::args_os()));
}
