fn main() {
    std::process::exit(mcreg::cli::run(std::env::args_os()));
}
