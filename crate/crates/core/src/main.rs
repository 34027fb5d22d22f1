fn main() {
    std::process::exit(fbsvie::cli::run(std::env::args_os()));
}
