fn main() {
    std::process::exit(keyscore::cli::run(std::env::args_os()));
}
