fn main() {
    std::process::exit(oats::cli::run(std::env::args_os()));
}
