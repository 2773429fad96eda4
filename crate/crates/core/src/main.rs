fn main() {
    std::process::exit(polypseg::cli::run(std::env::args_os()));
}
