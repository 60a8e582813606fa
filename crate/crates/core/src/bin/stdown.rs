fn main() {
    std::process::exit(stdown::cli::run(std::env::args_os()));
}
