fn main() {
    std::process::exit(otflow::cli::run(std::env::args_os()));
}
