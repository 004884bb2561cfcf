fn main() {
    std::process::exit(casefold::cli::run(std::env::args_os()));
}
