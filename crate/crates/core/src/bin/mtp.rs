fn main() {
    std::process::exit(mtp::cli::main_with_args(std::env::args_os()));
}
