fn main() {
    std::process::exit(embedplan::cli::main_with(std::env::args_os()));
}
