fn main() {
    std::process::exit(sharp::cli::main_with_args(std::env::args_os()));
}
